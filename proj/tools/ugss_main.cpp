#include "ugss/cli.hpp"

int main(int argc, char** argv) { return ugss::run_cli(argc, argv); }

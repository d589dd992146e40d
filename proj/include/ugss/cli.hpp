#ifndef UGSS_CLI_HPP
#define UGSS_CLI_HPP

#include <ostream>
#include <string>
#include <vector>

namespace ugss {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

// Entry point of the `ugss` executable. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

std::string version_string();

}  // namespace ugss

#endif  // UGSS_CLI_HPP

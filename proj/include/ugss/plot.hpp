#ifndef UGSS_PLOT_HPP
#define UGSS_PLOT_HPP

#include <filesystem>
#include <string>
#include <vector>

namespace ugss {

struct Bar {
    std::string label;
    double value = 0.0;
    double error = 0.0;  // half-height of the whisker; 0 draws none
    bool missing = false;
};

// Standalone SVG bar chart with optional whiskers.
std::string bar_chart_svg(const std::string& title, const std::string& y_label, const std::vector<Bar>& bars);

// From table1.csv: one chart per metric (dice.svg, surface_dice.svg,
// hd95.svg). From histogram_*.csv: one chart per histogram. Throws
// ValidationError when the directory holds none of these files.
std::vector<std::filesystem::path> plot_results(const std::filesystem::path& results_dir,
                                                const std::filesystem::path& out_dir);

}  // namespace ugss

#endif  // UGSS_PLOT_HPP

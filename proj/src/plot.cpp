#include "ugss/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <tuple>

#include "ugss/container.hpp"
#include "ugss/errors.hpp"

namespace ugss {

namespace {

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& file) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream is(read_text(file));
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) rows.push_back(split(line));
    }
    return rows;
}

bool parse_double(const std::string& s, double& out) {
    if (s.empty() || s == "NA") return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end && *end == '\0' && std::isfinite(out);
}

// Tick step of 1, 2 or 5 times a power of ten giving about five ticks.
double nice_step(double range) {
    if (!(range > 0)) return 1.0;
    const double raw = range / 5.0;
    const double p = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 5.0})
        if (raw <= m * p) return m * p;
    return 10.0 * p;
}

}  // namespace

std::string bar_chart_svg(const std::string& title, const std::string& y_label, const std::vector<Bar>& bars) {
    const double left = 70, right = 20, top = 40, bottom = 120;
    const double bar_w = 36, gap = 14;
    const double plot_w = std::max(200.0, static_cast<double>(bars.size()) * (bar_w + gap) + gap);
    const double plot_h = 260;
    const double width = left + plot_w + right, height = top + plot_h + bottom;

    double vmax = 0;
    for (const auto& b : bars)
        if (!b.missing) vmax = std::max(vmax, b.value + std::max(0.0, b.error));
    if (!(vmax > 0)) vmax = 1;
    const double step = nice_step(vmax);
    const double ymax = std::ceil(vmax / step) * step;
    auto y_of = [&](double v) { return top + plot_h * (1.0 - v / ymax); };

    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
       << "\" viewBox=\"0 0 " << num(width) << " " << num(height) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << num(width / 2) << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title)
       << "</text>\n";
    for (double t = 0; t <= ymax + 1e-9 * ymax; t += step) {
        const double y = y_of(t);
        os << "<line x1=\"" << num(left) << "\" y1=\"" << num(y) << "\" x2=\"" << num(left + plot_w) << "\" y2=\""
           << num(y) << "\" stroke=\"#dddddd\"/>\n";
        char lab[32];
        std::snprintf(lab, sizeof(lab), "%g", t);
        os << "<text x=\"" << num(left - 6) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << lab << "</text>\n";
    }
    os << "<text transform=\"translate(16," << num(top + plot_h / 2) << ") rotate(-90)\" text-anchor=\"middle\">"
       << xml_escape(y_label) << "</text>\n";
    os << "<line x1=\"" << num(left) << "\" y1=\"" << num(top + plot_h) << "\" x2=\"" << num(left + plot_w)
       << "\" y2=\"" << num(top + plot_h) << "\" stroke=\"black\"/>\n";
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const Bar& b = bars[i];
        const double x = left + gap + static_cast<double>(i) * (bar_w + gap);
        const double cx = x + bar_w / 2;
        if (!b.missing) {
            const double y = y_of(std::max(0.0, b.value));
            os << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(bar_w) << "\" height=\""
               << num(top + plot_h - y) << "\" fill=\"#4878a8\"><title>" << xml_escape(b.label) << ": " << b.value
               << "</title></rect>\n";
            if (b.error > 0) {
                const double y0 = y_of(std::max(0.0, b.value - b.error)), y1 = y_of(b.value + b.error);
                os << "<line x1=\"" << num(cx) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(cx) << "\" y2=\""
                   << num(y1) << "\" stroke=\"black\"/>\n";
                os << "<line x1=\"" << num(cx - 6) << "\" y1=\"" << num(y1) << "\" x2=\"" << num(cx + 6) << "\" y2=\""
                   << num(y1) << "\" stroke=\"black\"/>\n";
            }
        } else {
            os << "<text x=\"" << num(cx) << "\" y=\"" << num(top + plot_h - 4) << "\" text-anchor=\"middle\">NA</text>\n";
        }
        os << "<text transform=\"translate(" << num(cx + 4) << "," << num(top + plot_h + 8)
           << ") rotate(60)\" text-anchor=\"start\">" << xml_escape(b.label) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::vector<std::filesystem::path> plot_results(const std::filesystem::path& results_dir,
                                                const std::filesystem::path& out_dir) {
    if (!std::filesystem::is_directory(results_dir)) {
        throw ValidationError("results", "not a directory: " + results_dir.string());
    }
    std::vector<std::filesystem::path> written;
    const auto table = results_dir / "table1.csv";
    const auto scan_hist = results_dir / "histogram_scan_extent.csv";
    const auto bowel_hist = results_dir / "histogram_bowel_extent.csv";
    if (!std::filesystem::exists(table) && !std::filesystem::exists(scan_hist) && !std::filesystem::exists(bowel_hist)) {
        throw ValidationError("results", "no table1.csv or histogram CSVs in " + results_dir.string());
    }
    std::filesystem::create_directories(out_dir);

    if (std::filesystem::exists(table)) {
        const auto rows = read_csv(table);
        if (rows.empty()) throw ValidationError("results", "table1.csv is empty");
        const auto& head = rows.front();
        auto col = [&](const std::string& name) {
            const auto it = std::find(head.begin(), head.end(), name);
            if (it == head.end()) throw ValidationError("results", "table1.csv lacks column " + name);
            return static_cast<std::size_t>(it - head.begin());
        };
        struct Spec {
            const char* file;
            const char* title;
            const char* y_label;
            const char* mean;
            const char* std;
        };
        for (const Spec& s : {Spec{"dice.svg", "Dice per arm", "Dice", "dice_mean", "dice_std"},
                              Spec{"surface_dice.svg", "Surface Dice per arm", "Surface Dice", "sd_mean", "sd_std"},
                              Spec{"hd95.svg", "HD95 per arm", "HD95 (mm)", "hd95_mean", "hd95_std"}}) {
            const std::size_t a = col("arm"), m = col(s.mean), sd = col(s.std);
            std::vector<Bar> bars;
            for (std::size_t r = 1; r < rows.size(); ++r) {
                const auto& row = rows[r];
                Bar b;
                b.label = a < row.size() ? row[a] : "";
                double v = 0, e = 0;
                b.missing = !(m < row.size() && parse_double(row[m], v));
                b.value = v;
                if (sd < row.size() && parse_double(row[sd], e)) b.error = e;
                bars.push_back(b);
            }
            const auto file = out_dir / s.file;
            write_text_atomic(file, bar_chart_svg(s.title, s.y_label, bars));
            written.push_back(file);
        }
    }

    for (const auto& [src, name, title] :
         {std::tuple{scan_hist, "histogram_scan_extent.svg", "Scan extent above hip landmark"},
          std::tuple{bowel_hist, "histogram_bowel_extent.svg", "Bowel-bag extent above hip landmark"}}) {
        if (!std::filesystem::exists(src)) continue;
        const auto rows = read_csv(src);
        std::vector<Bar> bars;
        for (std::size_t r = 1; r < rows.size(); ++r) {
            Bar b;
            b.label = rows[r].empty() ? "" : rows[r][0];
            double v = 0;
            b.missing = !(rows[r].size() > 1 && parse_double(rows[r][1], v));
            b.value = v;
            bars.push_back(b);
        }
        const auto file = out_dir / name;
        write_text_atomic(file, bar_chart_svg(title, "scans", bars));
        written.push_back(file);
    }
    return written;
}

}  // namespace ugss

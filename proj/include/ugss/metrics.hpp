#ifndef UGSS_METRICS_HPP
#define UGSS_METRICS_HPP

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ugss/core_data.hpp"

namespace ugss {

// 2|a & b| / (|a| + |b|); two empty masks score 1.
double dice(const Mask& a, const Mask& b);

// Mask voxels with a face neighbour outside the mask or on the array border.
Mask surface_voxels(const Mask& m);

// Exact Euclidean distance (mm) from every voxel to the nearest non-zero
// voxel of `feature`; +inf everywhere when `feature` is empty.
std::vector<double> distance_transform(const Mask& feature, const Spacing& spacing);

// Fraction of surface voxels of either mask lying within tol_mm of the other
// surface; two empty surfaces score 1.
double surface_dice(const Mask& a, const Mask& b, double tol_mm, const Spacing& spacing);
double surface_dice(const Mask& a, const Spacing& spacing_a, const Mask& b, const Spacing& spacing_b, double tol_mm);

// max of the two directed 95th percentiles of surface distances; nullopt when
// either mask is empty.
std::optional<double> hd95(const Mask& a, const Mask& b, const Spacing& spacing);

// Linear interpolation between closest ranks, q in [0, 100].
double percentile(std::vector<double> values, double q);

inline constexpr double kDefaultSurfaceTolMm = 2.5;

enum class Metric { Dice, SurfaceDice, Hd95 };
const char* metric_name(Metric m);  // "dice", "surface_dice", "hd95"

struct MetricsRow {
    std::string scan_id;
    OrganId organ = OrganId::BowelBag;
    double dice = 0.0;
    double surface_dice = 0.0;
    std::optional<double> hd95_mm;

    std::optional<double> value(Metric m) const;
};

struct Aggregate {
    double mean = 0.0;
    double std = 0.0;    // sample standard deviation (n - 1); 0 when n < 2
    std::size_t n = 0;
    std::size_t undefined = 0;
};

Aggregate aggregate(const std::vector<double>& values, std::size_t undefined = 0);

class MetricsTable {
public:
    std::vector<MetricsRow> rows;

    // Appendix-style: one aggregate per organ over scans.
    Aggregate per_organ(OrganId organ, Metric m) const;
    // Mean over the organs of each scan (undefined values skipped); scans
    // with no defined value are left out.
    std::vector<std::pair<std::string, double>> per_scan_means(Metric m) const;
    // Table-style: mean and std of per-scan means.
    Aggregate per_scan(Metric m) const;

    std::string to_csv() const;          // scan_id,organ,dice,surface_dice,hd95
    std::string aggregates_json() const;
};

// Maps a record to its predicted class map.
using Predictor = std::function<ClassMap(const ScanRecord&)>;

// Scores every organ of every record; records must be fully annotated.
MetricsTable evaluate_dataset(const Predictor& predict, const std::vector<ScanRecord>& records,
                              double tol_mm = kDefaultSurfaceTolMm);

enum class WilcoxonMode { Auto, Exact, Normal };

struct WilcoxonResult {
    bool degenerate = false;  // every paired difference is zero
    double statistic = 0.0;   // min(W+, W-)
    double w_plus = 0.0;
    double w_minus = 0.0;
    int n = 0;                // non-zero differences
    double p_value = 1.0;     // two-sided
    std::string method;       // "exact" | "normal" | "degenerate"
};

// Signed-rank test on x - y with zero differences dropped and average ranks
// for ties. Auto uses exact enumeration below 20 pairs.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y,
                                    WilcoxonMode mode = WilcoxonMode::Auto);

}  // namespace ugss

#endif  // UGSS_METRICS_HPP

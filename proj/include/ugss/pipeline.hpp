#ifndef UGSS_PIPELINE_HPP
#define UGSS_PIPELINE_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ugss/autoclean.hpp"
#include "ugss/config.hpp"
#include "ugss/metrics.hpp"
#include "ugss/train.hpp"

namespace ugss {

// Index ranges keep ids of the three generated pools disjoint.
inline constexpr std::uint64_t kPartialIndexBase = 1000000;
inline constexpr std::uint64_t kTestIndexBase = 2000000;

struct ExperimentData {
    std::vector<ScanRecord> full;        // fully annotated, preprocessed, not cleaned
    std::vector<ScanRecord> full_clean;  // after cleaning
    std::vector<ScanRecord> partial;     // partially annotated, preprocessed
    std::vector<ScanRecord> test;        // phantom ground truth as labels
    CleaningThresholds thresholds;
    CleaningReport cleaning;
    ExtentHistograms histograms;
};

// n_full scans with every organ available; n_partial scans drawn with the
// configured availability, skipping indices that come out fully annotated;
// n_test scans labelled with the clean phantom truth.
ExperimentData build_experiment_data(const ExperimentConfig& config);

// The ground-truth LabelSet replaces the emitted labels (all organs clinical).
ScanRecord with_truth_labels(const ScanRecord& record);

struct ArmResult {
    std::string arm;
    bool ok = true;
    std::string error;         // first failure, when !ok
    MetricsTable table;        // per (scan, organ), averaged over folds
    std::vector<MetricsTable> per_fold;
};

struct AblationOptions {
    int parallel_folds = 1;
    std::optional<std::filesystem::path> cache_dir;  // teacher checkpoints and imputation snapshots
    bool verbose = false;
};

struct AblationResult {
    FoldPlan folds;
    std::vector<ArmResult> arms;
    ExperimentData data;

    const ArmResult* find(const std::string& arm) const;
};

AblationResult run_ablation(const ExperimentConfig& config, const AblationOptions& options = {});

// Mean of each (scan, organ) value across folds; HD95 averages the defined
// folds and stays undefined when none is.
MetricsTable average_folds(const std::vector<MetricsTable>& folds);

std::string table1_csv(const std::vector<ArmResult>& arms);
// metric: per-organ mean and std across scans, one row per arm.
std::string appendix_csv(const std::vector<ArmResult>& arms, Metric metric);
// Paired per-scan means of each arm against `reference`, for every metric.
std::string wilcoxon_csv(const std::vector<ArmResult>& arms, const std::string& reference);

// Writes table1.csv, appendix_{dice,sd,hd}.csv, wilcoxon.csv, folds.json,
// cleaning outputs and per-arm metrics under out_dir.
void write_ablation_outputs(const AblationResult& result, const ExperimentConfig& config,
                            const std::filesystem::path& out_dir);

}  // namespace ugss

#endif  // UGSS_PIPELINE_HPP

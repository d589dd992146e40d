#ifndef UGSS_AUTOCLEAN_HPP
#define UGSS_AUTOCLEAN_HPP

#include <cstddef>
#include <filesystem>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "ugss/core_data.hpp"
#include "ugss/phantom.hpp"

namespace ugss {

// Distances in mm above the most cranial hips voxel.
struct CleaningThresholds {
    double crop_above_mm = std::numeric_limits<double>::infinity();
    double delete_bowel_above_mm = std::numeric_limits<double>::infinity();
    double discard_below_mm = -std::numeric_limits<double>::infinity();

    void validate() const;
    static CleaningThresholds disabled() { return {}; }
};

// Thresholds for phantoms generated with `config`, chosen so the clean
// phantom distributions of scan extent and bowel-bag extent lie entirely
// inside them.
CleaningThresholds phantom_cleaning_thresholds(const PhantomConfig& config);

struct ExtentHistogram {
    double bin_width_mm = 10.0;
    std::vector<double> bin_edges_mm;  // counts.size() + 1 entries
    std::vector<std::size_t> counts;
    std::string landmark = "hips_cranial";
    std::vector<double> samples_mm;

    std::size_t total() const;
    std::string to_csv() const;  // bin_left_mm,count
};

ExtentHistogram make_histogram(std::vector<double> distances_mm, double bin_width_mm);

// Largest z index holding a hips voxel.
int hip_cranial_landmark(const LabelSet& labels);

struct ExtentHistograms {
    ExtentHistogram scan_extent;
    ExtentHistogram bowel_extent;
};

ExtentHistograms compute_extent_histograms(const std::vector<ScanRecord>& records, double bin_width_mm);
ExtentHistograms compute_extent_histograms(const std::filesystem::path& manifest_file, double bin_width_mm);

struct Kept {
    ScanRecord record;
    int slices_cropped = 0;
    std::size_t bowel_voxels_deleted = 0;
};

struct Discarded {
    std::string reason;
};

using CleanOutcome = std::variant<Kept, Discarded>;

inline constexpr const char* kDiscardBowelBelowWindow = "bowel bag below pelvic window";

// crop -> delete -> discard, the discard test running on post-deletion masks.
CleanOutcome apply_cleaning(const ScanRecord& record, const CleaningThresholds& thresholds);

struct CleaningReport {
    std::size_t kept = 0;
    std::size_t discarded = 0;
    std::size_t modified = 0;
    std::size_t slices_cropped = 0;
    std::size_t voxels_deleted = 0;
    std::vector<std::string> discarded_ids;
    std::vector<std::string> modified_ids;
    std::vector<std::pair<std::string, std::string>> failures;  // id, message

    std::string to_json() const;
};

struct CleanedDataset {
    std::vector<ScanRecord> records;
    CleaningReport report;
};

// Per-record failures are recorded in the report; the record is dropped.
CleanedDataset clean_records(const std::vector<ScanRecord>& records, const CleaningThresholds& thresholds);

// File-level variant: writes kept records and manifest.json under out_dir.
std::pair<DatasetManifest, CleaningReport> clean_dataset(const std::filesystem::path& manifest_file,
                                                         const CleaningThresholds& thresholds,
                                                         const std::filesystem::path& out_dir);

}  // namespace ugss

#endif  // UGSS_AUTOCLEAN_HPP

#ifndef UGSS_IMPUTE_HPP
#define UGSS_IMPUTE_HPP

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "ugss/core_data.hpp"
#include "ugss/kh_model.hpp"

namespace ugss {

struct InferenceOptions {
    int patch_depth = 32;
    double overlap = 0.5;  // fraction of patch_depth shared by neighbouring windows

    void validate() const;
};

// Window start offsets along z: stride = patch - round(patch * overlap), plus
// a final window flush with the top. A single window when depth <= patch.
std::vector<int> window_starts(int depth, int patch_depth, double overlap);

struct FullPrediction {
    nn::Tensor mean_probs;  // (C, z, y, x), mean over heads and windows
    FloatGrid u;            // entropy of mean_probs
};

// Sliding-window inference along z with uniform averaging of overlapping
// windows. Thin volumes are zero-padded symmetrically to one window and
// in-plane extents to the model's divisor; padding is stripped afterwards.
FullPrediction predict_full_volume(const KHeadModel& model, const ScanRecord& record, const InferenceOptions& opt);

ClassMap predict_classes(const KHeadModel& model, const ScanRecord& record, const InferenceOptions& opt);

// Fills every organ whose label is not clinical with argmax(mean_probs) == organ
// outside the clinically annotated region A, and attaches u with u = 0 on A
// (everywhere when all organs are clinical).
ScanRecord impute_record(const ScanRecord& record, const nn::Tensor& mean_probs, const FloatGrid& u);

struct ImputeReport {
    std::size_t records = 0;
    std::size_t passthrough = 0;  // fully annotated, u = 0
    std::array<std::size_t, kNumOrgans> imputed{};  // per organ slot

    std::string to_json() const;
};

std::vector<ScanRecord> impute_records(const KHeadModel& model, const std::vector<ScanRecord>& records,
                                       const InferenceOptions& opt, ImputeReport* report = nullptr);

// Writes imputed containers (with uncertainty.raw) and manifest.json under out_dir.
std::pair<DatasetManifest, ImputeReport> impute_dataset(const KHeadModel& model, const std::filesystem::path& manifest_file,
                                                        const InferenceOptions& opt, const std::filesystem::path& out_dir);

}  // namespace ugss

#endif  // UGSS_IMPUTE_HPP

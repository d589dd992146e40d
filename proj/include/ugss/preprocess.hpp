#ifndef UGSS_PREPROCESS_HPP
#define UGSS_PREPROCESS_HPP

#include <string>
#include <vector>

#include "ugss/core_data.hpp"

namespace ugss {

struct RawLabelEntry {
    std::string name;
    Mask mask;
};

// Maps free-text organ names onto OrganId. Matching ignores case and the
// separators ' ', '_', '-', '.'; left/right hips merge into HIPS; repeated
// matches for one organ are OR-combined. Unmatched names are dropped and
// reported as "unmatched: <name>".
LabelSet standardize_labels(const std::vector<RawLabelEntry>& entries, std::vector<std::string>* warnings = nullptr);

// bowel_bag := bowel_bag AND NOT (bladder OR rectum); unavailable organs
// contribute nothing.
LabelSet resolve_overlap(LabelSet labels);

enum class Interp { Trilinear, Nearest };

// Continuous-index sample with edge clamping.
float sample_trilinear(const FloatGrid& g, double z, double y, double x);

Shape3 resampled_shape(Shape3 in, const Spacing& from, const Spacing& to);
// Voxel-center aligned: output center i maps to input index (i + 0.5) * to / from - 0.5.
FloatGrid resample_grid(const FloatGrid& g, const Spacing& from, const Spacing& to, Interp mode);
Mask resample_mask(const Mask& m, const Spacing& from, const Spacing& to);
Volume resample(const Volume& v, const Spacing& target, Interp mode);

inline constexpr double kWindowLevel = 40.0;
inline constexpr double kWindowWidth = 400.0;

// clamp((hu - (level - width/2)) / width, 0, 1)
Volume window_hu(const Volume& v, double level = kWindowLevel, double width = kWindowWidth);

struct PreprocessOptions {
    Spacing target_spacing{2.5, 2.5, 2.5};
    double window_level = kWindowLevel;
    double window_width = kWindowWidth;
};

// resolve_overlap -> resample (image trilinear, masks nearest) -> window.
// Labels arrive already standardized; applying twice is a no-op.
ScanRecord preprocess_record(ScanRecord record, const PreprocessOptions& opt = {});

struct RawScan {
    std::string id;
    Volume image;
    std::vector<RawLabelEntry> labels;
};

// standardize -> preprocess_record
ScanRecord preprocess_raw(const RawScan& scan, const PreprocessOptions& opt = {},
                          std::vector<std::string>* warnings = nullptr);

}  // namespace ugss

#endif  // UGSS_PREPROCESS_HPP

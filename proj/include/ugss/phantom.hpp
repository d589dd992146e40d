#ifndef UGSS_PHANTOM_HPP
#define UGSS_PHANTOM_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "ugss/core_data.hpp"

namespace ugss {

// Synthetic pelvic phantom. Availability defaults mirror the clinical
// annotation counts (383, 1103, 504, 865 of 1170 scans) in organ-slot order
// bowel bag, bladder, hips, rectum.
struct PhantomConfig {
    Shape3 shape{64, 64, 64};
    Spacing spacing{2.5, 2.5, 2.5};
    std::uint64_t seed = 0;
    std::array<double, kNumOrgans> availability_probs{383.0 / 1170.0, 1103.0 / 1170.0, 504.0 / 1170.0,
                                                      865.0 / 1170.0};
    double chest_prob = 0.3;             // chance of appending chest slices above the abdomen
    int cranial_extent_jitter = 16;      // max number of appended chest slices
    double bowel_overannotation_prob = 0.3;
    int overannotation_max_slices = 16;  // max cranial extension of the bowel-bag mask
    double noise_sigma = 20.0;           // HU

    void validate() const;
};

// Intensities used by the generator, in HU.
namespace phantom_hu {
inline constexpr float kAir = -1000.0f;
inline constexpr float kLung = -750.0f;
inline constexpr float kSoftTissue = 40.0f;
inline constexpr float kBowel = 110.0f;
inline constexpr float kBladder = -60.0f;
inline constexpr float kRectum = -120.0f;
inline constexpr float kBone = 650.0f;
}  // namespace phantom_hu

ScanRecord generate_phantom(const PhantomConfig& config, std::uint64_t index);

// Writes n containers plus manifest.json under out_dir.
DatasetManifest generate_dataset(const PhantomConfig& config, int n, const std::filesystem::path& out_dir);

// Ground truth retained in meta for scoring only. Training code never reads it.
struct PhantomTruth {
    LabelSet labels;           // all organs available, anatomically correct
    int chest_slices = 0;
    int overannotation_slices = 0;  // 0 when the emitted bowel mask is clean or hidden
};

bool has_ground_truth(const ScanRecord& record);
// Decodes the truth and crops it to the record's current z extent (cleaning
// only ever removes cranial slices).
PhantomTruth ground_truth(const ScanRecord& record);

std::string encode_mask_rle(const Mask& m);
Mask decode_mask_rle(const std::string& text, Shape3 shape);

}  // namespace ugss

#endif  // UGSS_PHANTOM_HPP

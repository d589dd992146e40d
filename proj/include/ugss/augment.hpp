#ifndef UGSS_AUGMENT_HPP
#define UGSS_AUGMENT_HPP

#include <array>
#include <optional>
#include <string>

#include "ugss/core_data.hpp"
#include "ugss/rng.hpp"

namespace ugss {

enum class AugmentTier { Basic, Additional };

std::string to_string(AugmentTier t);
AugmentTier augment_tier_from_string(const std::string& s);  // "BASIC" | "ADDITIONAL"

struct ElasticSpec {
    double control_spacing_mm = 25.0;
    double max_displacement_mm = 5.0;
    double envelope_sigma_mm = 0.0;  // 0: half the organ's largest bounding-box extent
};

struct AugmentConfig {
    AugmentTier tier = AugmentTier::Basic;

    double p_brightness_contrast = 0.5;
    double p_rotate = 0.5;
    double p_flip = 0.5;
    double p_organ_intensity = 0.5;
    double p_elastic_global = 0.5;
    double p_elastic_organ = 0.5;

    double brightness_range = 0.2;
    double contrast_range = 0.2;
    double max_rotation_deg = 10.0;
    ElasticSpec elastic;
    double organ_value_min = 0.0;
    double organ_value_max = 1.0;

    void validate() const;

    // Every transform disabled.
    static AugmentConfig none();
};

// clamp((v - 0.5) * (1 + c) + 0.5 + b, 0, 1) on a NORMALIZED image.
Volume brightness_contrast(const Volume& image, double b, double c);

// Rotation about the volume center by angles in degrees around the z, y and
// x axes (applied x first, then y, then z). Out-of-field voxels become 0.
ScanRecord rotate(const ScanRecord& record, const std::array<double, 3>& angles_deg);

ScanRecord flip_lr(const ScanRecord& record);

ScanRecord organ_mask_intensity(const ScanRecord& record, OrganId organ, double value);

// Random smooth displacement field drawn from `rng`. With `center`, the field
// is scaled by a Gaussian envelope about that organ's centroid; an empty or
// unavailable organ leaves the record unchanged.
ScanRecord elastic_deform(const ScanRecord& record, const ElasticSpec& spec, std::optional<OrganId> center, Rng& rng);

// Draws the fired transforms and their parameters from `rng`.
ScanRecord sample_augmentation(const ScanRecord& record, const AugmentConfig& config, Rng& rng);

}  // namespace ugss

#endif  // UGSS_AUGMENT_HPP

#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "ugss/augment.hpp"

using namespace ugss;

namespace {

// Normalized record whose image is a linear ramp a*z + b*y + c*x + d.
ScanRecord ramp_record(Shape3 s, double a, double b, double c, double d) {
    ScanRecord r;
    r.id = "ramp";
    r.image = Volume{FloatGrid(s), {2.5, 2.5, 2.5}, IntensityUnit::Normalized};
    for (int z = 0; z < s.z; ++z)
        for (int y = 0; y < s.y; ++y)
            for (int x = 0; x < s.x; ++x) r.image.data(z, y, x) = static_cast<float>(a * z + b * y + c * x + d);
    r.labels = LabelSet(s);
    const int cz = s.z / 2, cy = s.y / 2, cx = s.x / 2;
    r.labels.set(OrganId::Bladder, test::box_mask(s, cz - 3, cz + 3, cy - 3, cy + 3, cx - 3, cx + 3), LabelSource::Clinical);
    r.labels.set(OrganId::BowelBag, test::box_mask(s, cz - 3, cz + 3, cy + 3, cy + 6, cx - 3, cx + 3), LabelSource::Clinical);
    return r;
}

}  // namespace

TEST(BrightnessContrast, FormulaAndClamp) {
    Volume v{FloatGrid({1, 1, 3}, std::vector<float>{0.0f, 0.5f, 0.95f}), {}, IntensityUnit::Normalized};
    const Volume o = brightness_contrast(v, 0.1, 0.2);
    EXPECT_NEAR(o.data[0], (0.0 - 0.5) * 1.2 + 0.6, 1e-6);
    EXPECT_NEAR(o.data[1], 0.6, 1e-6);
    EXPECT_FLOAT_EQ(o.data[2], 1.0f);
    EXPECT_EQ(brightness_contrast(v, 0, 0), v);
    EXPECT_THROW(brightness_contrast(v, 0.3, 0), ValidationError);
    v.unit = IntensityUnit::HU;
    EXPECT_THROW(brightness_contrast(v, 0.1, 0), ValidationError);
}

TEST(Flip, IsAnInvolutionAndMirrorsX) {
    ScanRecord r = test::phantom_record(test::full_phantom(2), 0);
    r.uncertainty = FloatGrid(r.shape(), 0.0f);
    (*r.uncertainty)(0, 0, 0) = 1.0f;
    const ScanRecord f = flip_lr(r);
    EXPECT_EQ(flip_lr(f), r);
    const int X = r.shape().x;
    EXPECT_EQ(f.image.data(3, 4, 0), r.image.data(3, 4, X - 1));
    EXPECT_EQ((*f.uncertainty)(0, 0, X - 1), 1.0f);
}

TEST(Rotate, ZeroIsIdentityAndRangeChecked) {
    const ScanRecord r = test::phantom_record(test::full_phantom(2), 1);
    EXPECT_EQ(rotate(r, {0, 0, 0}), r);
    EXPECT_THROW(rotate(r, {11, 0, 0}), ValidationError);
}

TEST(Rotate, PreservesRampGradientMagnitude) {
    // Trilinear interpolation is exact on a linear ramp, so a rotated ramp is a
    // ramp with the same gradient norm.
    const Shape3 s{20, 20, 20};
    const ScanRecord r = ramp_record(s, 0.0, 0.01, 0.02, 0.2);
    for (int axis = 0; axis < 3; ++axis) {
        std::array<double, 3> ang{0, 0, 0};
        ang[axis] = 8.0;
        const ScanRecord o = rotate(r, ang);
        const int c = 10;
        const double gz = o.image.data(c + 1, c, c) - o.image.data(c, c, c);
        const double gy = o.image.data(c, c + 1, c) - o.image.data(c, c, c);
        const double gx = o.image.data(c, c, c + 1) - o.image.data(c, c, c);
        EXPECT_NEAR(gz * gz + gy * gy + gx * gx, 0.01 * 0.01 + 0.02 * 0.02, 1e-8) << axis;
    }
}

TEST(Rotate, RoundTripRestoresInterior) {
    const Shape3 s{20, 20, 20};
    const ScanRecord r = ramp_record(s, 0.01, 0.01, 0.02, 0.1);
    for (int axis = 0; axis < 3; ++axis) {
        std::array<double, 3> fwd{0, 0, 0}, back{0, 0, 0};
        fwd[axis] = 7.0;
        back[axis] = -7.0;
        const ScanRecord o = rotate(rotate(r, fwd), back);
        for (int z = 6; z < 14; ++z)
            for (int y = 6; y < 14; ++y)
                for (int x = 6; x < 14; ++x) EXPECT_NEAR(o.image.data(z, y, x), r.image.data(z, y, x), 1e-5);
    }
}

TEST(Rotate, LabelsStayValidAndCenterKept) {
    const ScanRecord r = test::phantom_record(test::full_phantom(3), 2);
    const ScanRecord o = rotate(r, {5, -4, 3});
    EXPECT_TRUE(validate_record(o).ok()) << validate_record(o).summary();
    const auto before = count_nonzero(r.labels.mask(OrganId::BowelBag));
    const auto after = count_nonzero(o.labels.mask(OrganId::BowelBag));
    EXPECT_NEAR(static_cast<double>(after), static_cast<double>(before), 0.15 * static_cast<double>(before));
}

TEST(OrganIntensity, SetsOnlyOrganVoxels) {
    const ScanRecord r = test::phantom_record(test::full_phantom(4), 0);
    const ScanRecord o = organ_mask_intensity(r, OrganId::Bladder, 0.9);
    const Mask& m = r.labels.mask(OrganId::Bladder);
    for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(o.image.data[i], m[i] ? 0.9f : r.image.data[i]);
    EXPECT_EQ(o.labels, r.labels);
    EXPECT_THROW(organ_mask_intensity(r, OrganId::Bladder, 1.5), ValidationError);
    ScanRecord partial = r;
    partial.labels.clear(OrganId::Rectum);
    EXPECT_THROW(organ_mask_intensity(partial, OrganId::Rectum, 0.5), ValidationError);
}

TEST(Elastic, DisplacementIsBounded) {
    const Shape3 s{16, 16, 16};
    const ScanRecord r = ramp_record(s, 0.0, 0.0, 0.04, 0.1);
    Rng rng = make_rng(5);
    ElasticSpec spec;
    spec.max_displacement_mm = 5.0;
    const ScanRecord o = elastic_deform(r, spec, std::nullopt, rng);
    EXPECT_NE(o.image, r.image);
    // 5 mm is two voxels; the ramp rises 0.04 per voxel.
    double worst = 0;
    for (std::size_t i = 0; i < o.image.data.size(); ++i) worst = std::max(worst, std::abs(double(o.image.data[i]) - r.image.data[i]));
    EXPECT_LE(worst, 0.04 * 2.0 + 1e-5);
    EXPECT_TRUE(validate_record(o).ok());
}

TEST(Elastic, DeterministicAndDegenerateCases) {
    const ScanRecord r = test::phantom_record(test::full_phantom(6), 0);
    ElasticSpec spec;
    Rng a = make_rng(9), b = make_rng(9);
    EXPECT_EQ(elastic_deform(r, spec, OrganId::BowelBag, a), elastic_deform(r, spec, OrganId::BowelBag, b));
    spec.max_displacement_mm = 0.0;
    Rng c = make_rng(1);
    EXPECT_EQ(elastic_deform(r, spec, std::nullopt, c), r);
    ScanRecord partial = r;
    partial.labels.clear(OrganId::Bladder);
    spec.max_displacement_mm = 5.0;
    EXPECT_EQ(elastic_deform(partial, spec, OrganId::Bladder, c), partial);
}

TEST(Elastic, OrganEnvelopeDecaysAwayFromCentroid) {
    const Shape3 s{24, 24, 24};
    const ScanRecord r = ramp_record(s, 0.0, 0.0, 0.03, 0.1);
    ElasticSpec spec;
    spec.max_displacement_mm = 5.0;
    spec.envelope_sigma_mm = 5.0;
    Rng rng = make_rng(3);
    const ScanRecord o = elastic_deform(r, spec, OrganId::Bladder, rng);
    // Corner voxels are ~20 voxels (50 mm, 10 sigma) from the bladder centroid.
    EXPECT_NEAR(o.image.data(0, 0, 0), r.image.data(0, 0, 0), 1e-6);
    EXPECT_NEAR(o.image.data(23, 23, 23), r.image.data(23, 23, 23), 1e-6);
}

TEST(SampleAugmentation, NoneIsIdentityAndDeterministic) {
    const ScanRecord r = test::phantom_record(test::full_phantom(7), 0);
    Rng rng = make_rng(1);
    EXPECT_EQ(sample_augmentation(r, AugmentConfig::none(), rng), r);
    AugmentConfig cfg;
    cfg.tier = AugmentTier::Additional;
    Rng a = make_rng(2), b = make_rng(2);
    EXPECT_EQ(sample_augmentation(r, cfg, a), sample_augmentation(r, cfg, b));
}

TEST(SampleAugmentation, TierGatesTransforms) {
    const ScanRecord r = test::phantom_record(test::full_phantom(8), 0);
    AugmentConfig cfg = AugmentConfig::none();
    cfg.p_flip = 1.0;
    Rng rng = make_rng(3);
    EXPECT_EQ(sample_augmentation(r, cfg, rng), r);
    cfg.tier = AugmentTier::Additional;
    EXPECT_EQ(sample_augmentation(r, cfg, rng), flip_lr(r));
}

TEST(AugmentConfig, Validation) {
    AugmentConfig c;
    c.p_rotate = 1.2;
    EXPECT_THROW(c.validate(), ValidationError);
    c = AugmentConfig{};
    c.max_rotation_deg = 15;
    EXPECT_THROW(c.validate(), ValidationError);
    EXPECT_EQ(augment_tier_from_string("ADDITIONAL"), AugmentTier::Additional);
    EXPECT_THROW(augment_tier_from_string("EXTRA"), ValidationError);
}

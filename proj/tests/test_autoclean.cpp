#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <set>

#include "support.hpp"
#include "ugss/autoclean.hpp"
#include "ugss/container.hpp"

using namespace ugss;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 80 slices at 2.5 mm; hips on z in [hip0, hip1], bowel on z in [b0, b1].
ScanRecord column_record(int hip0, int hip1, int b0, int b1, int depth = 80) {
    const Shape3 s{depth, 4, 4};
    ScanRecord r;
    r.id = "col";
    r.image = Volume{FloatGrid(s, 0.5f), {2.5, 2.5, 2.5}, IntensityUnit::Normalized};
    r.labels = LabelSet(s);
    r.labels.set(OrganId::Hips, test::box_mask(s, hip0, hip1 + 1, 0, 2, 0, 2), LabelSource::Clinical);
    if (b1 >= b0) r.labels.set(OrganId::BowelBag, test::box_mask(s, b0, b1 + 1, 2, 4, 2, 4), LabelSource::Clinical);
    return r;
}

}  // namespace

TEST(Landmark, Examples) {
    EXPECT_EQ(hip_cranial_landmark(column_record(10, 20, 0, -1).labels), 20);
    EXPECT_EQ(hip_cranial_landmark(column_record(5, 5, 0, -1).labels), 5);
    ScanRecord r = column_record(5, 5, 0, -1);
    r.labels.clear(OrganId::Hips);
    EXPECT_THROW(hip_cranial_landmark(r.labels), LandmarkError);
}

TEST(Histogram, SingleScanExample) {
    ScanRecord r = column_record(10, 20, 0, -1, 61);
    const ExtentHistograms h = compute_extent_histograms({r}, 10.0);
    ASSERT_EQ(h.scan_extent.total(), 1u);
    // (60 - 20) * 2.5 = 100 mm.
    for (std::size_t i = 0; i < h.scan_extent.counts.size(); ++i) {
        if (h.scan_extent.counts[i]) {
            EXPECT_LE(h.scan_extent.bin_edges_mm[i], 100.0);
            EXPECT_GT(h.scan_extent.bin_edges_mm[i + 1], 100.0);
        }
    }
    EXPECT_EQ(h.bowel_extent.total(), 0u);
}

TEST(Histogram, DuplicatesDoubleCounts) {
    const ScanRecord a = column_record(10, 20, 5, 40);
    const ScanRecord b = column_record(12, 18, 5, 60);
    const ExtentHistograms once = compute_extent_histograms({a, b}, 5.0);
    const ExtentHistograms twice = compute_extent_histograms({a, b, a, b}, 5.0);
    ASSERT_EQ(once.scan_extent.counts.size(), twice.scan_extent.counts.size());
    for (std::size_t i = 0; i < once.bowel_extent.counts.size(); ++i) {
        EXPECT_EQ(twice.bowel_extent.counts[i], 2 * once.bowel_extent.counts[i]);
    }
    EXPECT_THROW(compute_extent_histograms(std::vector<ScanRecord>{}, 5.0), ValidationError);
}

TEST(Histogram, CsvHasOneRowPerBin) {
    const ExtentHistogram h = make_histogram({1.0, 2.0, 14.0, 29.9}, 10.0);
    EXPECT_EQ(h.counts.size(), 3u);
    EXPECT_EQ(h.bin_edges_mm.size(), 4u);
    const std::string csv = h.to_csv();
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    EXPECT_EQ(h.total(), 4u);
}

TEST(Cleaning, BelowThresholdsUnchanged) {
    const ScanRecord r = column_record(10, 20, 5, 30);
    const auto out = apply_cleaning(r, {200.0, 100.0, 0.0});
    ASSERT_TRUE(std::holds_alternative<Kept>(out));
    EXPECT_EQ(std::get<Kept>(out).record, r);
}

TEST(Cleaning, CropRemovesSlicesAboveThreshold) {
    const ScanRecord r = column_record(10, 20, 5, 30);
    const auto out = apply_cleaning(r, {50.0, 50.0, 0.0});
    const Kept& k = std::get<Kept>(out);
    // Keep z <= 20 + 50 / 2.5 = 40.
    EXPECT_EQ(k.record.shape().z, 41);
    EXPECT_EQ(k.slices_cropped, 39);
    EXPECT_EQ(k.record.meta.at("cleaning.audit"), "crop:39");
}

TEST(Cleaning, DeleteZeroesBowelOverhang) {
    // Bowel reaches 50 mm above the landmark; delete above 25 mm.
    const ScanRecord r = column_record(10, 20, 5, 40);
    const auto out = apply_cleaning(r, {kInf, 25.0, -kInf});
    const Kept& k = std::get<Kept>(out);
    // Slices 31..40 zeroed, 4 voxels each.
    EXPECT_EQ(k.bowel_voxels_deleted, 40u);
    EXPECT_EQ(count_nonzero(k.record.labels.mask(OrganId::BowelBag)),
              count_nonzero(r.labels.mask(OrganId::BowelBag)) - 40u);
    EXPECT_EQ(k.record.labels.mask(OrganId::Hips), r.labels.mask(OrganId::Hips));
    EXPECT_EQ(k.record.image, r.image);
}

TEST(Cleaning, DiscardBowelBelowWindow) {
    const ScanRecord r = column_record(20, 20, 5, 16);  // top 10 mm below landmark
    const auto out = apply_cleaning(r, {kInf, kInf, 0.0});
    ASSERT_TRUE(std::holds_alternative<Discarded>(out));
    EXPECT_EQ(std::get<Discarded>(out).reason, kDiscardBowelBelowWindow);
    // Without a bowel annotation the discard rule never fires.
    const auto no_bowel = apply_cleaning(column_record(20, 20, 0, -1), {kInf, kInf, 0.0});
    EXPECT_TRUE(std::holds_alternative<Kept>(no_bowel));
}

TEST(Cleaning, Idempotent) {
    const ScanRecord r = column_record(10, 20, 5, 70);
    const CleaningThresholds t{60.0, 30.0, 5.0};
    const Kept once = std::get<Kept>(apply_cleaning(r, t));
    const Kept twice = std::get<Kept>(apply_cleaning(once.record, t));
    EXPECT_EQ(twice.slices_cropped, 0);
    EXPECT_EQ(twice.bowel_voxels_deleted, 0u);
    EXPECT_EQ(twice.record.labels, once.record.labels);
    EXPECT_EQ(twice.record.image, once.record.image);
}

TEST(Cleaning, NeverCropsAtOrBelowLandmark) {
    const ScanRecord r = column_record(10, 20, 5, 70);
    const Kept k = std::get<Kept>(apply_cleaning(r, {0.0, 0.0, -kInf}));
    EXPECT_EQ(k.record.shape().z, 21);
}

TEST(Thresholds, Validation) {
    EXPECT_NO_THROW(CleaningThresholds::disabled().validate());
    EXPECT_THROW((CleaningThresholds{10.0, 20.0, 0.0}.validate()), ValidationError);
    EXPECT_THROW((CleaningThresholds{30.0, 20.0, 25.0}.validate()), ValidationError);
    EXPECT_THROW((CleaningThresholds{-1.0, -2.0, -3.0}.validate()), ValidationError);
    EXPECT_THROW((CleaningThresholds{std::nan(""), 1.0, 0.0}.validate()), ValidationError);
}

TEST(CleanRecords, InfiniteThresholdsChangeNothing) {
    std::vector<ScanRecord> recs;
    for (int i = 0; i < 8; ++i) recs.push_back(test::phantom_record(test::full_phantom(6), i));
    const CleanedDataset out = clean_records(recs, CleaningThresholds::disabled());
    EXPECT_EQ(out.report.kept, 8u);
    EXPECT_EQ(out.report.modified, 0u);
    EXPECT_EQ(out.report.discarded, 0u);
    EXPECT_EQ(out.records, recs);
}

TEST(CleanRecords, FailuresAreIsolated) {
    ScanRecord bad = column_record(10, 20, 5, 30);
    bad.id = "bad";
    bad.labels.clear(OrganId::Hips);
    ScanRecord good = column_record(10, 20, 5, 30);
    const CleanedDataset out = clean_records({bad, good}, CleaningThresholds::disabled());
    EXPECT_EQ(out.report.kept, 1u);
    ASSERT_EQ(out.report.failures.size(), 1u);
    EXPECT_EQ(out.report.failures[0].first, "bad");
    const std::string json = out.report.to_json();
    EXPECT_NE(json.find("\"kept\": 1"), std::string::npos);
    EXPECT_NE(json.find("\"discarded\": 0"), std::string::npos);
}

TEST(CleanRecords, PhantomThresholdsRemoveInjectedNoiseOnly) {
    PhantomConfig c = test::full_phantom(8);
    c.shape = {64, 32, 32};
    c.cranial_extent_jitter = 16;
    c.overannotation_max_slices = 16;
    const CleaningThresholds t = phantom_cleaning_thresholds(c);
    int noisy = 0, flagged_noisy = 0, flagged_clean = 0;
    std::vector<ScanRecord> recs;
    for (int i = 0; i < 60; ++i) recs.push_back(test::phantom_record(c, i));
    const CleanedDataset out = clean_records(recs, t);
    const std::set<std::string> modified(out.report.modified_ids.begin(), out.report.modified_ids.end());
    for (const auto& r : recs) {
        const PhantomTruth truth = ground_truth(r);
        const bool is_noisy = truth.chest_slices > 0 || truth.overannotation_slices > 0;
        noisy += is_noisy;
        if (modified.count(r.id)) (is_noisy ? flagged_noisy : flagged_clean) += 1;
    }
    EXPECT_EQ(flagged_clean, 0);
    EXPECT_GT(noisy, 0);
    // Small over-annotations can stay inside the delete window.
    EXPECT_GE(flagged_noisy, noisy * 3 / 4);
    EXPECT_EQ(out.report.discarded, 0u);
}

TEST(CleanDataset, WritesReportAndManifest) {
    test::TempDir dir("clean");
    std::vector<ScanRecord> recs{test::phantom_record(test::full_phantom(2), 0)};
    write_dataset(recs, dir / "in");
    const auto [m, rep] = clean_dataset(dir / "in" / "manifest.json", CleaningThresholds::disabled(), dir / "out");
    EXPECT_EQ(m.records.size(), 1u);
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / "cleaning_report.json"));
}

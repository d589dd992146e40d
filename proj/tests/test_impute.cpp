#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "ugss/container.hpp"
#include "ugss/impute.hpp"

using namespace ugss;

namespace {

ModelConfig tiny_model(int heads) {
    ModelConfig c;
    c.heads = heads;
    c.levels = 2;
    c.base_channels = 4;
    return c;
}

// Independent sliding-window average over explicit windows.
nn::Tensor oracle_full(const KHeadModel& m, const FloatGrid& img, int P, const std::vector<int>& starts) {
    const Shape3 s = img.shape();
    std::vector<double> sum(static_cast<std::size_t>(kNumClasses) * img.size(), 0.0);
    std::vector<int> cnt(static_cast<std::size_t>(s.z), 0);
    for (int z0 : starts) {
        const KHeadOutput out = m.forward(volume_to_tensor(img.slab(z0, z0 + P)));
        for (int z = 0; z < P; ++z) ++cnt[z0 + z];
        for (int c = 0; c < kNumClasses; ++c)
            for (int z = 0; z < P; ++z)
                for (int y = 0; y < s.y; ++y)
                    for (int x = 0; x < s.x; ++x) {
                        double p = 0;
                        for (const auto& h : out.probs) p += h.channel(c)[(static_cast<std::size_t>(z) * s.y + y) * s.x + x];
                        sum[static_cast<std::size_t>(c) * img.size() + img.index(z0 + z, y, x)] += p / out.probs.size();
                    }
    }
    nn::Tensor t(kNumClasses, s.z, s.y, s.x);
    for (int c = 0; c < kNumClasses; ++c)
        for (int z = 0; z < s.z; ++z)
            for (int y = 0; y < s.y; ++y)
                for (int x = 0; x < s.x; ++x) {
                    const std::size_t i = img.index(z, y, x);
                    t.channel(c)[i] = static_cast<float>(sum[static_cast<std::size_t>(c) * img.size() + i] / cnt[z]);
                }
    return t;
}

// Record with bowel unavailable and the other organs clinical.
ScanRecord partial_record(std::uint64_t seed, std::uint64_t idx) {
    PhantomConfig c = test::small_phantom(seed);
    c.availability_probs = {0.0, 1.0, 1.0, 1.0};
    return test::phantom_record(c, idx);
}

}  // namespace

TEST(WindowStarts, Examples) {
    EXPECT_EQ(window_starts(64, 32, 0.5), (std::vector<int>{0, 16, 32}));
    EXPECT_EQ(window_starts(40, 32, 0.5), (std::vector<int>{0, 8}));
    EXPECT_EQ(window_starts(20, 32, 0.5), (std::vector<int>{0}));
    EXPECT_EQ(window_starts(32, 32, 0.5), (std::vector<int>{0}));
    EXPECT_EQ(window_starts(64, 32, 0.0), (std::vector<int>{0, 32}));
    EXPECT_EQ(window_starts(70, 32, 0.0), (std::vector<int>{0, 32, 38}));
}

TEST(PredictFullVolume, MatchesExplicitWindowAverage) {
    const KHeadModel m = KHeadModel::build(tiny_model(3), 4);
    Rng rng = make_rng(1);
    ScanRecord r;
    r.id = "r";
    const Shape3 s{28, 8, 12};
    r.image = Volume{FloatGrid(s), {2.5, 2.5, 2.5}, IntensityUnit::Normalized};
    for (auto& v : r.image.data.values()) v = static_cast<float>(uniform(rng, 0, 1));
    r.labels = LabelSet(s);
    const InferenceOptions opt{8, 0.5};
    const FullPrediction got = predict_full_volume(m, r, opt);
    const nn::Tensor want = oracle_full(m, r.image.data, 8, {0, 4, 8, 12, 16, 20});
    ASSERT_EQ(got.mean_probs.v.size(), want.v.size());
    for (std::size_t i = 0; i < want.v.size(); ++i) EXPECT_NEAR(got.mean_probs.v[i], want.v[i], 1e-5);
    for (std::size_t i = 0; i < got.u.size(); ++i) {
        EXPECT_GE(got.u[i], 0.0f);
        EXPECT_LE(got.u[i], std::log(5.0f) + 1e-5f);
    }
}

TEST(PredictFullVolume, PadsThinAndOddVolumes) {
    const KHeadModel m = KHeadModel::build(tiny_model(2), 5);
    ScanRecord r;
    r.id = "thin";
    const Shape3 s{5, 7, 9};
    r.image = Volume{FloatGrid(s, 0.3f), {2.5, 2.5, 2.5}, IntensityUnit::Normalized};
    r.labels = LabelSet(s);
    const FullPrediction p = predict_full_volume(m, r, {16, 0.5});
    EXPECT_EQ(p.mean_probs.d, 5);
    EXPECT_EQ(p.mean_probs.h, 7);
    EXPECT_EQ(p.mean_probs.w, 9);
    EXPECT_EQ(p.u.shape(), s);
    for (std::size_t v = 0; v < p.mean_probs.spatial(); ++v) {
        double sum = 0;
        for (int c = 0; c < kNumClasses; ++c) sum += p.mean_probs.channel(c)[v];
        EXPECT_NEAR(sum, 1.0, 1e-5);
    }
    EXPECT_THROW(predict_full_volume(m, r, {6, 0.5}), ValidationError);
    EXPECT_THROW(predict_full_volume(m, r, {8, 1.0}), ValidationError);
}

TEST(ImputeRecord, FillsMissingOrgansOutsideClinicalRegion) {
    const Shape3 s{1, 1, 4};
    ScanRecord r;
    r.id = "r";
    r.image = Volume{FloatGrid(s, 0.5f), {2.5, 2.5, 2.5}, IntensityUnit::Normalized};
    r.labels = LabelSet(s);
    r.labels.set(OrganId::Bladder, test::box_mask(s, 0, 1, 0, 1, 0, 1), LabelSource::Clinical);
    r.labels.set(OrganId::Hips, test::box_mask(s, 0, 1, 0, 1, 3, 4), LabelSource::Clinical);
    // Prediction: voxel 0 bowel, 1 bowel, 2 rectum, 3 rectum.
    nn::Tensor p(kNumClasses, 1, 1, 4);
    const int cls[4] = {1, 1, 4, 4};
    for (int v = 0; v < 4; ++v) p.channel(cls[v])[v] = 1.0f;
    FloatGrid u(s, 0.7f);
    const ScanRecord o = impute_record(r, p, u);
    EXPECT_EQ(o.labels.mask(OrganId::Bladder), r.labels.mask(OrganId::Bladder));
    EXPECT_EQ(o.labels.source_of(OrganId::BowelBag), LabelSource::Imputed);
    EXPECT_EQ(o.labels.mask(OrganId::BowelBag), test::box_mask(s, 0, 1, 0, 1, 1, 2));
    EXPECT_EQ(o.labels.mask(OrganId::Rectum), test::box_mask(s, 0, 1, 0, 1, 2, 3));
    ASSERT_TRUE(o.uncertainty.has_value());
    EXPECT_EQ((*o.uncertainty)[0], 0.0f);
    EXPECT_EQ((*o.uncertainty)[1], 0.7f);
    EXPECT_EQ((*o.uncertainty)[3], 0.0f);
    EXPECT_TRUE(o.labels.fully_annotated());
}

TEST(ImputeRecord, FullyClinicalPassesThroughWithZeroU) {
    const ScanRecord r = test::phantom_record(test::full_phantom(2), 0);
    nn::Tensor p(kNumClasses, r.shape().z, r.shape().y, r.shape().x, 0.2f);
    const ScanRecord o = impute_record(r, p, FloatGrid(r.shape(), 1.0f));
    EXPECT_EQ(o.labels, r.labels);
    for (float v : o.uncertainty->values()) EXPECT_EQ(v, 0.0f);
    EXPECT_THROW(impute_record(r, nn::Tensor(kNumClasses, 1, 1, 1), FloatGrid({1, 1, 1})), ShapeError);
}

TEST(ImputeRecords, ContractOnPhantoms) {
    const KHeadModel m = KHeadModel::build(tiny_model(3), 6);
    std::vector<ScanRecord> recs;
    for (int i = 0; i < 6; ++i) recs.push_back(partial_record(3, i));
    recs.push_back(test::phantom_record(test::full_phantom(3), 9));
    ImputeReport rep;
    const auto out = impute_records(m, recs, {16, 0.5}, &rep);
    ASSERT_EQ(out.size(), recs.size());
    EXPECT_EQ(rep.records, 7u);
    EXPECT_EQ(rep.passthrough, 1u);
    EXPECT_EQ(rep.imputed[slot(OrganId::BowelBag)], 6u);
    for (std::size_t k = 0; k < recs.size(); ++k) {
        const ScanRecord& in = recs[k];
        const ScanRecord& o = out[k];
        EXPECT_EQ(o.image, in.image);
        Mask known(in.shape(), 0);
        for (OrganId org : kAllOrgans) {
            if (!in.labels.is_available(org)) continue;
            EXPECT_EQ(o.labels.mask(org), in.labels.mask(org));
            for (std::size_t i = 0; i < known.size(); ++i) known[i] |= in.labels.mask(org)[i];
        }
        for (std::size_t i = 0; i < known.size(); ++i)
            if (known[i]) EXPECT_EQ((*o.uncertainty)[i], 0.0f);
        EXPECT_TRUE(o.labels.fully_annotated());
        EXPECT_TRUE(validate_record(o).ok()) << validate_record(o).summary();
    }
}

TEST(ImputeDataset, WritesUncertaintyAndReport) {
    test::TempDir dir("impute");
    write_dataset({partial_record(4, 0)}, dir / "in");
    const KHeadModel m = KHeadModel::build(tiny_model(2), 1);
    const auto [manifest, rep] = impute_dataset(m, dir / "in" / "manifest.json", {16, 0.5}, dir / "out");
    EXPECT_EQ(manifest.records.size(), 1u);
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / "impute_report.json"));
    const auto back = load_records(dir / "out" / "manifest.json");
    EXPECT_TRUE(back[0].uncertainty.has_value());
}

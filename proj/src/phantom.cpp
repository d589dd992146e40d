#include "ugss/phantom.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "ugss/container.hpp"
#include "ugss/rng.hpp"

namespace ugss {

namespace {

constexpr int kMinExtent = 16;

struct Ellipsoid {
    double cz, cy, cx;  // fractions of the abdomen extent
    double rz, ry, rx;

    bool contains(double fz, double fy, double fx) const {
        const double a = (fz - cz) / rz, b = (fy - cy) / ry, c = (fx - cx) / rx;
        return a * a + b * b + c * c <= 1.0;
    }
};

struct Geometry {
    Ellipsoid bladder;
    Ellipsoid hip_left;
    Ellipsoid hip_right;
    double bowel_z0, bowel_z1, bowel_cy, bowel_cx, bowel_ry, bowel_rx;
    double rectum_z1, rectum_cy, rectum_cx, rectum_r;
    double body_ry, body_rx;

    bool in_body(double fy, double fx) const {
        const double a = (fy - 0.5) / body_ry, b = (fx - 0.5) / body_rx;
        return a * a + b * b <= 1.0;
    }
    bool in_bowel_section(double fy, double fx) const {
        const double a = (fy - bowel_cy) / bowel_ry, b = (fx - bowel_cx) / bowel_rx;
        return a * a + b * b <= 1.0;
    }
    bool in_rectum(double fz, double fy, double fx) const {
        if (fz > rectum_z1) return false;
        const double a = (fy - rectum_cy) / rectum_r, b = (fx - rectum_cx) / rectum_r;
        return a * a + b * b <= 1.0;
    }
};

Geometry draw_geometry(Rng& rng) {
    auto j = [&](double amp) { return uniform(rng, -amp, amp); };
    auto s = [&](double amp) { return 1.0 + uniform(rng, -amp, amp); };
    Geometry g{};
    g.body_ry = 0.46 * s(0.03);
    g.body_rx = 0.46 * s(0.03);
    g.bladder = {0.16 + j(0.02), 0.36 + j(0.02), 0.5 + j(0.02), 0.15 * s(0.1), 0.16 * s(0.1), 0.16 * s(0.1)};
    const double hz = 0.20 + j(0.02), hy = 0.56 + j(0.02), hr = s(0.1);
    g.hip_left = {hz, hy, 0.23 + j(0.01), 0.13 * hr, 0.13 * hr, 0.09 * hr};
    g.hip_right = {hz, hy, 0.77 + j(0.01), 0.13 * hr, 0.13 * hr, 0.09 * hr};
    g.bowel_z0 = 0.22 + j(0.03);
    g.bowel_z1 = 0.64 + j(0.04);
    g.bowel_cy = 0.42 + j(0.02);
    g.bowel_cx = 0.5 + j(0.02);
    g.bowel_ry = 0.28 * s(0.08);
    g.bowel_rx = 0.34 * s(0.08);
    g.rectum_z1 = 0.38 + j(0.03);
    g.rectum_cy = 0.70 + j(0.015);
    g.rectum_cx = 0.5 + j(0.02);
    g.rectum_r = 0.10 * s(0.1);
    return g;
}

}  // namespace

void PhantomConfig::validate() const {
    if (shape.z < kMinExtent || shape.y < kMinExtent || shape.x < kMinExtent) {
        throw ValidationError("phantom.shape", "each extent must be >= " + std::to_string(kMinExtent) + ", got " + to_string(shape));
    }
    if (!spacing.valid()) throw ValidationError("phantom.spacing", "must be finite and positive");
    for (OrganId o : kAllOrgans) {
        const double p = availability_probs[slot(o)];
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ValidationError(std::string("phantom.availability_probs.") + organ_name(o), "probability must be in [0, 1]");
        }
    }
    if (!(chest_prob >= 0.0 && chest_prob <= 1.0)) throw ValidationError("phantom.chest_prob", "probability must be in [0, 1]");
    if (!(bowel_overannotation_prob >= 0.0 && bowel_overannotation_prob <= 1.0)) {
        throw ValidationError("phantom.bowel_overannotation_prob", "probability must be in [0, 1]");
    }
    if (cranial_extent_jitter < 0) throw ValidationError("phantom.cranial_extent_jitter", "must be >= 0");
    if (overannotation_max_slices < 0) throw ValidationError("phantom.overannotation_max_slices", "must be >= 0");
    if (!(noise_sigma >= 0.0)) throw ValidationError("phantom.noise_sigma", "must be >= 0");
}

ScanRecord generate_phantom(const PhantomConfig& config, std::uint64_t index) {
    config.validate();
    const auto idx = index;
    Rng geo_rng = make_rng(config.seed, {stream::kPhantom, idx, 1});
    Rng noise_rng = make_rng(config.seed, {stream::kPhantom, idx, 2});
    Rng label_rng = make_rng(config.seed, {stream::kPhantom, idx, 3});
    Rng avail_rng = make_rng(config.seed, {stream::kPhantom, idx, 4});

    const Geometry g = draw_geometry(geo_rng);

    const bool add_chest = bernoulli(label_rng, config.chest_prob) && config.cranial_extent_jitter > 0;
    const int chest = add_chest ? uniform_int(label_rng, 1, config.cranial_extent_jitter) : 0;
    const bool overannotate = bernoulli(label_rng, config.bowel_overannotation_prob) && config.overannotation_max_slices > 0;
    const int extra = overannotate ? uniform_int(label_rng, std::max(1, config.overannotation_max_slices / 3),
                                                 config.overannotation_max_slices)
                                   : 0;

    const Shape3 abd = config.shape;
    const Shape3 full{abd.z + chest, abd.y, abd.x};
    ClassMap cls(full, 0);
    FloatGrid img(full, phantom_hu::kAir);

    for (int z = 0; z < full.z; ++z) {
        const double fz = (z + 0.5) / abd.z;
        for (int y = 0; y < full.y; ++y) {
            const double fy = (y + 0.5) / abd.y;
            for (int x = 0; x < full.x; ++x) {
                const double fx = (x + 0.5) / abd.x;
                if (!g.in_body(fy, fx)) continue;
                if (z >= abd.z) {
                    img(z, y, x) = phantom_hu::kLung;
                    continue;
                }
                float hu = phantom_hu::kSoftTissue;
                std::uint8_t c = 0;
                if (fz >= g.bowel_z0 && fz <= g.bowel_z1 && g.in_bowel_section(fy, fx)) {
                    c = class_index(OrganId::BowelBag);
                    hu = phantom_hu::kBowel;
                }
                if (g.bladder.contains(fz, fy, fx)) {
                    c = class_index(OrganId::Bladder);
                    hu = phantom_hu::kBladder;
                }
                if (g.in_rectum(fz, fy, fx)) {
                    c = class_index(OrganId::Rectum);
                    hu = phantom_hu::kRectum;
                }
                if (g.hip_left.contains(fz, fy, fx) || g.hip_right.contains(fz, fy, fx)) {
                    c = class_index(OrganId::Hips);
                    hu = phantom_hu::kBone;
                }
                cls(z, y, x) = c;
                img(z, y, x) = hu;
            }
        }
    }

    if (config.noise_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, config.noise_sigma);
        for (auto& v : img.values()) v = static_cast<float>(v + noise(noise_rng));
    }

    const std::array<bool, kNumOrgans> all{true, true, true, true};
    LabelSet truth = expand_labels(cls, all, LabelSource::Clinical);
    for (OrganId o : kAllOrgans) {
        if (count_nonzero(truth.mask(o)) == 0) {
            throw ValidationError("phantom.shape", std::string("shape too small: organ ") + organ_name(o) + " has no voxels");
        }
    }

    LabelSet emitted = truth;
    int applied_extra = 0;
    if (extra > 0) {
        Mask& bowel = emitted.mask(OrganId::BowelBag);
        int top = -1;
        for (int z = 0; z < full.z; ++z)
            for (int y = 0; y < full.y && top < z; ++y)
                for (int x = 0; x < full.x; ++x)
                    if (bowel(z, y, x)) {
                        top = z;
                        break;
                    }
        const int last = std::min(full.z - 1, top + extra);
        for (int z = top + 1; z <= last; ++z)
            for (int y = 0; y < full.y; ++y)
                for (int x = 0; x < full.x; ++x)
                    if (bowel(top, y, x) && cls(z, y, x) == 0) bowel(z, y, x) = 1;
        applied_extra = last - top;
    }
    for (OrganId o : kAllOrgans) {
        if (!bernoulli(avail_rng, config.availability_probs[slot(o)])) emitted.clear(o);
    }
    if (!emitted.is_available(OrganId::BowelBag)) applied_extra = 0;

    char id[32];
    std::snprintf(id, sizeof(id), "phantom_%05llu", static_cast<unsigned long long>(index));
    ScanRecord r;
    r.id = id;
    r.image = Volume{std::move(img), config.spacing, IntensityUnit::HU};
    r.labels = std::move(emitted);
    r.meta["source"] = "phantom";
    r.meta["phantom.seed"] = std::to_string(config.seed);
    r.meta["phantom.index"] = std::to_string(index);
    r.meta["ground_truth.shape"] = std::to_string(full.z) + "," + std::to_string(full.y) + "," + std::to_string(full.x);
    r.meta["ground_truth.chest_slices"] = std::to_string(chest);
    r.meta["ground_truth.overannotation_slices"] = std::to_string(applied_extra);
    for (OrganId o : kAllOrgans) r.meta[std::string("ground_truth.") + organ_name(o)] = encode_mask_rle(truth.mask(o));
    return r;
}

DatasetManifest generate_dataset(const PhantomConfig& config, int n, const std::filesystem::path& out_dir) {
    if (n < 1) throw ValidationError("n", "dataset size must be >= 1");
    config.validate();
    std::vector<ScanRecord> records;
    DatasetManifest m;
    for (int i = 0; i < n; ++i) {
        const ScanRecord r = generate_phantom(config, static_cast<std::uint64_t>(i));
        write_container(r, out_dir / r.id);
        m.records.push_back({r.id, r.id});
    }
    write_manifest(m, out_dir / "manifest.json");
    return m;
}

std::string encode_mask_rle(const Mask& m) {
    // Alternating run lengths, starting with a (possibly empty) run of zeros.
    std::ostringstream os;
    std::uint8_t cur = 0;
    std::size_t run = 0;
    bool first = true;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const std::uint8_t v = m[i] ? 1 : 0;
        if (v != cur) {
            os << (first ? "" : " ") << run;
            first = false;
            cur = v;
            run = 0;
        }
        ++run;
    }
    os << (first ? "" : " ") << run;
    return os.str();
}

Mask decode_mask_rle(const std::string& text, Shape3 shape) {
    Mask m(shape, 0);
    std::istringstream is(text);
    std::size_t run = 0, pos = 0;
    std::uint8_t cur = 0;
    while (is >> run) {
        if (pos + run > m.size()) throw FormatError("RLE mask longer than shape " + to_string(shape));
        if (cur) std::fill(m.values().begin() + static_cast<std::ptrdiff_t>(pos), m.values().begin() + static_cast<std::ptrdiff_t>(pos + run), std::uint8_t{1});
        pos += run;
        cur ^= 1;
    }
    if (pos != m.size()) throw FormatError("RLE mask shorter than shape " + to_string(shape));
    return m;
}

bool has_ground_truth(const ScanRecord& r) { return r.meta.count("ground_truth.shape") != 0; }

PhantomTruth ground_truth(const ScanRecord& r) {
    if (!has_ground_truth(r)) throw FormatError("record " + r.id + " carries no ground truth");
    Shape3 s{};
    if (std::sscanf(r.meta.at("ground_truth.shape").c_str(), "%d,%d,%d", &s.z, &s.y, &s.x) != 3) {
        throw FormatError("bad ground_truth.shape");
    }
    const Shape3 cur = r.shape();
    if (cur.y != s.y || cur.x != s.x || cur.z > s.z) {
        throw ShapeError("record " + r.id + " shape " + to_string(cur) + " is not a cranial crop of " + to_string(s));
    }
    PhantomTruth t;
    t.labels = LabelSet(cur);
    for (OrganId o : kAllOrgans) {
        Mask full = decode_mask_rle(r.meta.at(std::string("ground_truth.") + organ_name(o)), s);
        t.labels.set(o, cur.z == s.z ? std::move(full) : full.slab(0, cur.z), LabelSource::Clinical);
    }
    t.chest_slices = std::stoi(r.meta.at("ground_truth.chest_slices"));
    t.overannotation_slices = std::stoi(r.meta.at("ground_truth.overannotation_slices"));
    return t;
}

}  // namespace ugss

#include "ugss/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace ugss {

namespace {

using Vec3 = std::array<double, 3>;  // z, y, x

// Input index of output voxel (z, y, x), computed once and shared by every array.
struct SampleMap {
    Shape3 shape;
    std::vector<Vec3> src;
};

bool in_field(const Vec3& c, const Shape3& s) {
    constexpr double eps = 1e-6;
    return c[0] >= -eps && c[0] <= s.z - 1 + eps && c[1] >= -eps && c[1] <= s.y - 1 + eps && c[2] >= -eps &&
           c[2] <= s.x - 1 + eps;
}

Vec3 clamp_to(const Vec3& c, const Shape3& s) {
    return {std::clamp(c[0], 0.0, s.z - 1.0), std::clamp(c[1], 0.0, s.y - 1.0), std::clamp(c[2], 0.0, s.x - 1.0)};
}

float trilinear(const FloatGrid& g, const Vec3& c) {
    const Shape3 s = g.shape();
    const int z0 = std::min(static_cast<int>(std::floor(c[0])), s.z - 1);
    const int y0 = std::min(static_cast<int>(std::floor(c[1])), s.y - 1);
    const int x0 = std::min(static_cast<int>(std::floor(c[2])), s.x - 1);
    const int z1 = std::min(z0 + 1, s.z - 1), y1 = std::min(y0 + 1, s.y - 1), x1 = std::min(x0 + 1, s.x - 1);
    const double fz = c[0] - z0, fy = c[1] - y0, fx = c[2] - x0;
    auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
    const double c00 = lerp(g(z0, y0, x0), g(z0, y0, x1), fx);
    const double c01 = lerp(g(z0, y1, x0), g(z0, y1, x1), fx);
    const double c10 = lerp(g(z1, y0, x0), g(z1, y0, x1), fx);
    const double c11 = lerp(g(z1, y1, x0), g(z1, y1, x1), fx);
    return static_cast<float>(lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz));
}

std::uint8_t nearest(const Mask& m, const Vec3& c) {
    const Shape3 s = m.shape();
    const int z = std::clamp(static_cast<int>(std::floor(c[0] + 0.5)), 0, s.z - 1);
    const int y = std::clamp(static_cast<int>(std::floor(c[1] + 0.5)), 0, s.y - 1);
    const int x = std::clamp(static_cast<int>(std::floor(c[2] + 0.5)), 0, s.x - 1);
    return m(z, y, x) ? 1 : 0;
}

// Image and uncertainty trilinear, masks nearest. With zero_fill, sources
// outside the volume give 0; otherwise they clamp to the border.
ScanRecord warp(const ScanRecord& r, const SampleMap& map, bool zero_fill) {
    ScanRecord out = r;
    const Shape3 s = r.shape();
    auto warp_float = [&](const FloatGrid& in, FloatGrid& dst) {
        for (std::size_t i = 0; i < map.src.size(); ++i) {
            const Vec3& c = map.src[i];
            if (zero_fill && !in_field(c, s)) dst[i] = 0.0f;
            else dst[i] = trilinear(in, clamp_to(c, s));
        }
    };
    warp_float(r.image.data, out.image.data);
    if (r.uncertainty) warp_float(*r.uncertainty, *out.uncertainty);
    for (std::size_t k = 0; k < r.labels.masks.size(); ++k) {
        const Mask& in = r.labels.masks[k];
        if (in.empty()) continue;
        Mask& dst = out.labels.masks[k];
        for (std::size_t i = 0; i < map.src.size(); ++i) {
            const Vec3& c = map.src[i];
            dst[i] = (zero_fill && !in_field(c, s)) ? 0 : nearest(in, c);
        }
    }
    return out;
}

template <typename F>
SampleMap build_map(const Shape3& s, F&& f) {
    SampleMap m{s, {}};
    m.src.reserve(s.size());
    for (int z = 0; z < s.z; ++z)
        for (int y = 0; y < s.y; ++y)
            for (int x = 0; x < s.x; ++x) m.src.push_back(f(z, y, x));
    return m;
}

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 mul(const Mat3& a, const Mat3& b) {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
    return r;
}

// Rotation about one axis, acting on (z, y, x) vectors.
Mat3 axis_rotation(int axis, double rad) {
    const double c = std::cos(rad), s = std::sin(rad);
    Mat3 m{};
    m[axis][axis] = 1.0;
    const int a = (axis + 1) % 3, b = (axis + 2) % 3;
    m[a][a] = c;
    m[a][b] = -s;
    m[b][a] = s;
    m[b][b] = c;
    return m;
}

std::optional<Vec3> centroid(const Mask& m) {
    const Shape3 s = m.shape();
    double cz = 0, cy = 0, cx = 0;
    std::size_t n = 0;
    for (int z = 0; z < s.z; ++z)
        for (int y = 0; y < s.y; ++y)
            for (int x = 0; x < s.x; ++x)
                if (m(z, y, x)) {
                    cz += z;
                    cy += y;
                    cx += x;
                    ++n;
                }
    if (n == 0) return std::nullopt;
    return Vec3{cz / n, cy / n, cx / n};
}

double half_bbox_extent_mm(const Mask& m, const Spacing& sp) {
    const Shape3 s = m.shape();
    int lo[3] = {s.z, s.y, s.x}, hi[3] = {-1, -1, -1};
    for (int z = 0; z < s.z; ++z)
        for (int y = 0; y < s.y; ++y)
            for (int x = 0; x < s.x; ++x)
                if (m(z, y, x)) {
                    const int p[3] = {z, y, x};
                    for (int a = 0; a < 3; ++a) {
                        lo[a] = std::min(lo[a], p[a]);
                        hi[a] = std::max(hi[a], p[a]);
                    }
                }
    const double ext[3] = {(hi[0] - lo[0] + 1) * sp.z, (hi[1] - lo[1] + 1) * sp.y, (hi[2] - lo[2] + 1) * sp.x};
    return 0.5 * std::max({ext[0], ext[1], ext[2]});
}

void check_prob(double p, const char* field) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(field, "probability must lie in [0, 1]");
}

}  // namespace

std::string to_string(AugmentTier t) { return t == AugmentTier::Basic ? "BASIC" : "ADDITIONAL"; }

AugmentTier augment_tier_from_string(const std::string& s) {
    if (s == "BASIC") return AugmentTier::Basic;
    if (s == "ADDITIONAL") return AugmentTier::Additional;
    throw ValidationError("augment.tier", "expected BASIC or ADDITIONAL, got '" + s + "'");
}

void AugmentConfig::validate() const {
    check_prob(p_brightness_contrast, "augment.p_brightness_contrast");
    check_prob(p_rotate, "augment.p_rotate");
    check_prob(p_flip, "augment.p_flip");
    check_prob(p_organ_intensity, "augment.p_organ_intensity");
    check_prob(p_elastic_global, "augment.p_elastic_global");
    check_prob(p_elastic_organ, "augment.p_elastic_organ");
    if (!(brightness_range >= 0.0 && brightness_range <= 0.2)) throw ValidationError("augment.brightness_range", "must lie in [0, 0.2]");
    if (!(contrast_range >= 0.0 && contrast_range <= 0.2)) throw ValidationError("augment.contrast_range", "must lie in [0, 0.2]");
    if (!(max_rotation_deg >= 0.0 && max_rotation_deg <= 10.0)) throw ValidationError("augment.max_rotation_deg", "must lie in [0, 10]");
    if (!(elastic.control_spacing_mm > 0.0)) throw ValidationError("augment.elastic.control_spacing_mm", "must be > 0");
    if (!(elastic.max_displacement_mm >= 0.0)) throw ValidationError("augment.elastic.max_displacement_mm", "must be >= 0");
    if (!(elastic.envelope_sigma_mm >= 0.0)) throw ValidationError("augment.elastic.envelope_sigma_mm", "must be >= 0");
    if (!(organ_value_min >= 0.0 && organ_value_max <= 1.0 && organ_value_min <= organ_value_max)) {
        throw ValidationError("augment.organ_value_min", "organ intensity range must be within [0, 1]");
    }
}

AugmentConfig AugmentConfig::none() {
    AugmentConfig c;
    c.p_brightness_contrast = c.p_rotate = c.p_flip = c.p_organ_intensity = c.p_elastic_global = c.p_elastic_organ = 0.0;
    return c;
}

Volume brightness_contrast(const Volume& image, double b, double c) {
    if (!(std::abs(b) <= 0.2)) throw ValidationError("brightness", "must lie in [-0.2, 0.2]");
    if (!(std::abs(c) <= 0.2)) throw ValidationError("contrast", "must lie in [-0.2, 0.2]");
    if (image.unit != IntensityUnit::Normalized) throw ValidationError("image.intensity_unit", "brightness/contrast expects a NORMALIZED image");
    Volume out = image;
    if (b == 0.0 && c == 0.0) return out;
    for (auto& v : out.data.values()) v = static_cast<float>(std::clamp((v - 0.5) * (1.0 + c) + 0.5 + b, 0.0, 1.0));
    return out;
}

ScanRecord rotate(const ScanRecord& record, const std::array<double, 3>& angles_deg) {
    for (double a : angles_deg) {
        if (!(std::abs(a) <= 10.0)) throw ValidationError("rotation", "angles must lie in [-10, 10] degrees");
    }
    if (angles_deg == std::array<double, 3>{0.0, 0.0, 0.0}) return record;
    const double k = std::numbers::pi / 180.0;
    const Mat3 r = mul(axis_rotation(0, angles_deg[0] * k), mul(axis_rotation(1, angles_deg[1] * k), axis_rotation(2, angles_deg[2] * k)));
    const Shape3 s = record.shape();
    const Spacing& sp = record.image.spacing;
    const double sc[3] = {sp.z, sp.y, sp.x};
    const double ctr[3] = {(s.z - 1) / 2.0, (s.y - 1) / 2.0, (s.x - 1) / 2.0};
    const auto map = build_map(s, [&](int z, int y, int x) {
        const double p[3] = {(z - ctr[0]) * sc[0], (y - ctr[1]) * sc[1], (x - ctr[2]) * sc[2]};
        Vec3 q{};
        // inverse rotation = transpose
        for (int a = 0; a < 3; ++a) q[a] = (r[0][a] * p[0] + r[1][a] * p[1] + r[2][a] * p[2]) / sc[a] + ctr[a];
        return q;
    });
    return warp(record, map, true);
}

ScanRecord flip_lr(const ScanRecord& record) {
    ScanRecord out = record;
    auto flip = [](auto& g) {
        if (g.empty()) return;
        const Shape3 s = g.shape();
        for (int z = 0; z < s.z; ++z)
            for (int y = 0; y < s.y; ++y) {
                auto* row = g.values().data() + g.index(z, y, 0);
                std::reverse(row, row + s.x);
            }
    };
    flip(out.image.data);
    for (auto& m : out.labels.masks) flip(m);
    if (out.uncertainty) flip(*out.uncertainty);
    return out;
}

ScanRecord organ_mask_intensity(const ScanRecord& record, OrganId organ, double value) {
    if (!(value >= 0.0 && value <= 1.0)) throw ValidationError("organ_intensity.value", "must lie in [0, 1]");
    if (!record.labels.is_available(organ)) throw ValidationError("organ_intensity.organ", std::string(organ_name(organ)) + " is not available");
    ScanRecord out = record;
    const Mask& m = record.labels.mask(organ);
    for (std::size_t i = 0; i < m.size(); ++i)
        if (m[i]) out.image.data[i] = static_cast<float>(value);
    return out;
}

ScanRecord elastic_deform(const ScanRecord& record, const ElasticSpec& spec, std::optional<OrganId> center, Rng& rng) {
    if (!(spec.control_spacing_mm > 0.0)) throw ValidationError("elastic.control_spacing_mm", "must be > 0");
    if (!(spec.max_displacement_mm >= 0.0)) throw ValidationError("elastic.max_displacement_mm", "must be >= 0");
    const Shape3 s = record.shape();
    const Spacing& sp = record.image.spacing;
    const double sc[3] = {sp.z, sp.y, sp.x};
    const int n[3] = {s.z, s.y, s.x};

    int nodes[3];
    for (int a = 0; a < 3; ++a) nodes[a] = std::max(2, static_cast<int>(std::ceil((n[a] - 1) * sc[a] / spec.control_spacing_mm)) + 1);
    std::vector<Vec3> ctrl(static_cast<std::size_t>(nodes[0]) * nodes[1] * nodes[2]);
    for (auto& d : ctrl) {
        for (auto& c : d) c = uniform(rng, -spec.max_displacement_mm, spec.max_displacement_mm);
        const double norm = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        if (norm > spec.max_displacement_mm && norm > 0) {
            for (auto& c : d) c *= spec.max_displacement_mm / norm;
        }
    }
    if (spec.max_displacement_mm == 0.0) return record;

    std::optional<Vec3> mu;
    double sigma = spec.envelope_sigma_mm;
    if (center) {
        if (!record.labels.is_available(*center)) return record;
        const Mask& m = record.labels.mask(*center);
        mu = centroid(m);
        if (!mu) return record;
        if (sigma == 0.0) sigma = half_bbox_extent_mm(m, sp);
    }

    auto node_at = [&](int a, int b, int c) -> const Vec3& {
        return ctrl[(static_cast<std::size_t>(a) * nodes[1] + b) * nodes[2] + c];
    };
    const auto map = build_map(s, [&](int z, int y, int x) {
        const int p[3] = {z, y, x};
        int i0[3], i1[3];
        double f[3];
        for (int a = 0; a < 3; ++a) {
            const double t = n[a] > 1 ? static_cast<double>(p[a]) * (nodes[a] - 1) / (n[a] - 1) : 0.0;
            i0[a] = std::min(static_cast<int>(std::floor(t)), nodes[a] - 1);
            i1[a] = std::min(i0[a] + 1, nodes[a] - 1);
            f[a] = t - i0[a];
        }
        Vec3 d{0, 0, 0};
        for (int corner = 0; corner < 8; ++corner) {
            const int a = corner & 4 ? i1[0] : i0[0];
            const int b = corner & 2 ? i1[1] : i0[1];
            const int c = corner & 1 ? i1[2] : i0[2];
            const double w = (corner & 4 ? f[0] : 1 - f[0]) * (corner & 2 ? f[1] : 1 - f[1]) * (corner & 1 ? f[2] : 1 - f[2]);
            const Vec3& v = node_at(a, b, c);
            for (int k = 0; k < 3; ++k) d[k] += w * v[k];
        }
        double env = 1.0;
        if (mu) {
            double r2 = 0;
            for (int a = 0; a < 3; ++a) r2 += std::pow((p[a] - (*mu)[a]) * sc[a], 2);
            env = std::exp(-r2 / (2.0 * sigma * sigma));
        }
        return Vec3{z + env * d[0] / sc[0], y + env * d[1] / sc[1], x + env * d[2] / sc[2]};
    });
    return warp(record, map, false);
}

ScanRecord sample_augmentation(const ScanRecord& record, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    ScanRecord r = record;
    if (cfg.tier == AugmentTier::Additional) {
        if (bernoulli(rng, cfg.p_flip)) r = flip_lr(r);
    }
    if (bernoulli(rng, cfg.p_rotate)) {
        std::array<double, 3> a{};
        for (auto& v : a) v = uniform(rng, -cfg.max_rotation_deg, cfg.max_rotation_deg);
        r = rotate(r, a);
    }
    if (cfg.tier == AugmentTier::Additional) {
        if (bernoulli(rng, cfg.p_elastic_global)) r = elastic_deform(r, cfg.elastic, std::nullopt, rng);
        if (bernoulli(rng, cfg.p_elastic_organ)) {
            const OrganId organ = bernoulli(rng, 0.5) ? OrganId::BowelBag : OrganId::Bladder;
            r = elastic_deform(r, cfg.elastic, organ, rng);
        }
        if (bernoulli(rng, cfg.p_organ_intensity)) {
            std::vector<OrganId> avail;
            for (OrganId o : kAllOrgans)
                if (r.labels.is_available(o)) avail.push_back(o);
            const double value = uniform(rng, cfg.organ_value_min, cfg.organ_value_max);
            if (!avail.empty()) {
                const OrganId o = avail[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(avail.size()) - 1))];
                r = organ_mask_intensity(r, o, value);
            }
        }
    }
    if (bernoulli(rng, cfg.p_brightness_contrast) && r.image.unit == IntensityUnit::Normalized) {
        const double b = uniform(rng, -cfg.brightness_range, cfg.brightness_range);
        const double c = uniform(rng, -cfg.contrast_range, cfg.contrast_range);
        r.image = brightness_contrast(r.image, b, c);
    }
    return r;
}

}  // namespace ugss

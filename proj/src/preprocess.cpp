#include "ugss/preprocess.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iostream>
#include <optional>
#include <set>

#include "ugss/phantom.hpp"

namespace ugss {

namespace {

std::string normalize_name(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == ' ' || c == '_' || c == '-' || c == '.') continue;
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

std::optional<OrganId> match_organ(const std::string& raw) {
    static const std::set<std::string> bowel{"bowel", "bowelbag", "bowels", "bowelloops"};
    static const std::set<std::string> bladder{"bladder", "urinarybladder"};
    static const std::set<std::string> rectum{"rectum"};
    static const std::set<std::string> hips{"hip",     "hips",     "hipl",     "hipr",      "hipleft",
                                            "hipright", "lefthip", "righthip", "lhip",      "rhip",
                                            "hipsl",   "hipsr",    "femoralheadl", "femoralheadr"};
    const std::string n = normalize_name(raw);
    if (bowel.count(n)) return OrganId::BowelBag;
    if (bladder.count(n)) return OrganId::Bladder;
    if (rectum.count(n)) return OrganId::Rectum;
    if (hips.count(n)) return OrganId::Hips;
    return std::nullopt;
}

void or_into(Mask& dst, const Mask& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = (dst[i] || src[i]) ? 1 : 0;
}

struct AxisMap {
    std::vector<int> i0, i1;
    std::vector<double> w1;
    std::vector<int> nearest;
};

AxisMap axis_map(int n_in, int n_out, double from, double to) {
    AxisMap m;
    m.i0.resize(static_cast<std::size_t>(n_out));
    m.i1.resize(static_cast<std::size_t>(n_out));
    m.w1.resize(static_cast<std::size_t>(n_out));
    m.nearest.resize(static_cast<std::size_t>(n_out));
    for (int i = 0; i < n_out; ++i) {
        double c = (i + 0.5) * to / from - 0.5;
        c = std::clamp(c, 0.0, static_cast<double>(n_in - 1));
        const int a = std::min(static_cast<int>(std::floor(c)), n_in - 1);
        m.i0[i] = a;
        m.i1[i] = std::min(a + 1, n_in - 1);
        m.w1[i] = c - a;
        m.nearest[i] = std::clamp(static_cast<int>(std::floor(c + 0.5)), 0, n_in - 1);
    }
    return m;
}

}  // namespace

LabelSet standardize_labels(const std::vector<RawLabelEntry>& entries, std::vector<std::string>* warnings) {
    if (entries.empty()) return LabelSet{};
    const Shape3 shape = entries.front().mask.shape();
    for (const auto& e : entries) {
        if (e.mask.shape() != shape) throw ShapeError("standardize_labels: label '" + e.name + "' has conflicting shape " + to_string(e.mask.shape()));
    }
    LabelSet out(shape);
    for (const auto& e : entries) {
        const auto organ = match_organ(e.name);
        if (!organ) {
            const std::string msg = "unmatched: " + e.name;
            if (warnings) warnings->push_back(msg);
            else std::clog << "warning: " << msg << "\n";
            continue;
        }
        if (!out.is_available(*organ)) {
            Mask m(shape, 0);
            or_into(m, e.mask);
            out.set(*organ, std::move(m), LabelSource::Clinical);
        } else {
            or_into(out.mask(*organ), e.mask);
        }
    }
    return out;
}

LabelSet resolve_overlap(LabelSet labels) {
    if (!labels.is_available(OrganId::BowelBag)) return labels;
    Mask& bowel = labels.mask(OrganId::BowelBag);
    const bool has_bladder = labels.is_available(OrganId::Bladder);
    const bool has_rectum = labels.is_available(OrganId::Rectum);
    const Mask& bladder = labels.mask(OrganId::Bladder);
    const Mask& rectum = labels.mask(OrganId::Rectum);
    for (std::size_t i = 0; i < bowel.size(); ++i) {
        if ((has_bladder && bladder[i]) || (has_rectum && rectum[i])) bowel[i] = 0;
    }
    return labels;
}

float sample_trilinear(const FloatGrid& g, double z, double y, double x) {
    const Shape3 s = g.shape();
    z = std::clamp(z, 0.0, static_cast<double>(s.z - 1));
    y = std::clamp(y, 0.0, static_cast<double>(s.y - 1));
    x = std::clamp(x, 0.0, static_cast<double>(s.x - 1));
    const int z0 = static_cast<int>(std::floor(z)), y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
    const int z1 = std::min(z0 + 1, s.z - 1), y1 = std::min(y0 + 1, s.y - 1), x1 = std::min(x0 + 1, s.x - 1);
    const double fz = z - z0, fy = y - y0, fx = x - x0;
    auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
    const double c00 = lerp(g(z0, y0, x0), g(z0, y0, x1), fx);
    const double c01 = lerp(g(z0, y1, x0), g(z0, y1, x1), fx);
    const double c10 = lerp(g(z1, y0, x0), g(z1, y0, x1), fx);
    const double c11 = lerp(g(z1, y1, x0), g(z1, y1, x1), fx);
    return static_cast<float>(lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz));
}

Shape3 resampled_shape(Shape3 in, const Spacing& from, const Spacing& to) {
    auto one = [](int n, double a, double b) { return std::max(1, static_cast<int>(std::lround(n * a / b))); };
    return {one(in.z, from.z, to.z), one(in.y, from.y, to.y), one(in.x, from.x, to.x)};
}

FloatGrid resample_grid(const FloatGrid& g, const Spacing& from, const Spacing& to, Interp mode) {
    if (!to.valid()) throw ValidationError("target_spacing", "spacing must be finite and positive");
    if (!from.valid()) throw ValidationError("spacing", "spacing must be finite and positive");
    if (from == to) return g;
    const Shape3 in = g.shape();
    const Shape3 out = resampled_shape(in, from, to);
    const AxisMap mz = axis_map(in.z, out.z, from.z, to.z);
    const AxisMap my = axis_map(in.y, out.y, from.y, to.y);
    const AxisMap mx = axis_map(in.x, out.x, from.x, to.x);
    FloatGrid r(out);
    for (int z = 0; z < out.z; ++z)
        for (int y = 0; y < out.y; ++y)
            for (int x = 0; x < out.x; ++x) {
                if (mode == Interp::Nearest) {
                    r(z, y, x) = g(mz.nearest[z], my.nearest[y], mx.nearest[x]);
                    continue;
                }
                auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
                const int z0 = mz.i0[z], z1 = mz.i1[z], y0 = my.i0[y], y1 = my.i1[y], x0 = mx.i0[x], x1 = mx.i1[x];
                const double fx = mx.w1[x], fy = my.w1[y], fz = mz.w1[z];
                const double c00 = lerp(g(z0, y0, x0), g(z0, y0, x1), fx);
                const double c01 = lerp(g(z0, y1, x0), g(z0, y1, x1), fx);
                const double c10 = lerp(g(z1, y0, x0), g(z1, y0, x1), fx);
                const double c11 = lerp(g(z1, y1, x0), g(z1, y1, x1), fx);
                r(z, y, x) = static_cast<float>(lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz));
            }
    return r;
}

Mask resample_mask(const Mask& m, const Spacing& from, const Spacing& to) {
    if (!to.valid()) throw ValidationError("target_spacing", "spacing must be finite and positive");
    if (from == to) return m;
    const Shape3 in = m.shape();
    const Shape3 out = resampled_shape(in, from, to);
    const AxisMap mz = axis_map(in.z, out.z, from.z, to.z);
    const AxisMap my = axis_map(in.y, out.y, from.y, to.y);
    const AxisMap mx = axis_map(in.x, out.x, from.x, to.x);
    Mask r(out, 0);
    for (int z = 0; z < out.z; ++z)
        for (int y = 0; y < out.y; ++y)
            for (int x = 0; x < out.x; ++x) r(z, y, x) = m(mz.nearest[z], my.nearest[y], mx.nearest[x]) ? 1 : 0;
    return r;
}

Volume resample(const Volume& v, const Spacing& target, Interp mode) {
    return Volume{resample_grid(v.data, v.spacing, target, mode), target, v.unit};
}

Volume window_hu(const Volume& v, double level, double width) {
    if (!(width > 0.0)) throw ValidationError("window.width", "width must be > 0");
    if (v.unit != IntensityUnit::HU) throw ValidationError("image.intensity_unit", "windowing expects HU input");
    Volume out = v;
    const double lo = level - width / 2.0;
    for (auto& x : out.data.values()) x = static_cast<float>(std::clamp((x - lo) / width, 0.0, 1.0));
    out.unit = IntensityUnit::Normalized;
    return out;
}

ScanRecord preprocess_record(ScanRecord r, const PreprocessOptions& opt) {
    r.labels = resolve_overlap(std::move(r.labels));

    const Spacing from = r.image.spacing;
    if (!(from == opt.target_spacing)) {
        const Shape3 old_shape = r.shape();
        const std::optional<PhantomTruth> truth = has_ground_truth(r) ? std::optional(ground_truth(r)) : std::nullopt;
        r.image = resample(r.image, opt.target_spacing, Interp::Trilinear);
        for (OrganId o : kAllOrgans) r.labels.mask(o) = resample_mask(r.labels.mask(o), from, opt.target_spacing);
        if (r.uncertainty) r.uncertainty = resample_grid(*r.uncertainty, from, opt.target_spacing, Interp::Trilinear);
        if (truth && old_shape != r.shape()) {
            for (OrganId o : kAllOrgans) {
                r.meta[std::string("ground_truth.") + organ_name(o)] =
                    encode_mask_rle(resample_mask(truth->labels.mask(o), from, opt.target_spacing));
            }
            const Shape3 s = r.shape();
            r.meta["ground_truth.shape"] = std::to_string(s.z) + "," + std::to_string(s.y) + "," + std::to_string(s.x);
        }
    }
    if (r.image.unit == IntensityUnit::HU) r.image = window_hu(r.image, opt.window_level, opt.window_width);
    r.meta["preprocess.steps"] = "standardize,resolve_overlap,resample,window";
    return r;
}

ScanRecord preprocess_raw(const RawScan& scan, const PreprocessOptions& opt, std::vector<std::string>* warnings) {
    ScanRecord r;
    r.id = scan.id;
    r.image = scan.image;
    r.labels = standardize_labels(scan.labels, warnings);
    if (r.labels.masks[0].empty()) r.labels = LabelSet(scan.image.shape());
    for (OrganId o : kAllOrgans) {
        if (r.labels.mask(o).shape() != scan.image.shape()) throw ShapeError("label shape differs from image shape");
    }
    return preprocess_record(std::move(r), opt);
}

}  // namespace ugss

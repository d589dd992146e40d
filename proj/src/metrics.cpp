#include "ugss/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ugss {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_shape(const Mask& a, const Mask& b) {
    if (a.shape() != b.shape()) throw ShapeError("mask shapes differ: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) on a line of n
// samples at positions i * step; f holds squared distances in and out.
void edt_1d(double* f, int n, std::size_t stride, double step, std::vector<double>& g, std::vector<int>& v,
            std::vector<double>& zb) {
    for (int i = 0; i < n; ++i) g[i] = f[static_cast<std::size_t>(i) * stride];
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (g[q] == kInf) continue;
        const double pq = q * step;
        while (k >= 0) {
            const double pv = v[k] * step;
            const double s = ((g[q] + pq * pq) - (g[v[k]] + pv * pv)) / (2.0 * (pq - pv));
            if (s <= zb[k]) --k;
            else break;
        }
        ++k;
        v[k] = q;
        zb[k] = k == 0 ? -kInf : ((g[q] + pq * pq) - (g[v[k - 1]] + (v[k - 1] * step) * (v[k - 1] * step))) /
                                     (2.0 * (pq - v[k - 1] * step));
        zb[k + 1] = kInf;
    }
    if (k < 0) return;  // whole line infinite
    int j = 0;
    for (int q = 0; q < n; ++q) {
        const double pq = q * step;
        while (zb[j + 1] < pq) ++j;
        const double d = pq - v[j] * step;
        f[static_cast<std::size_t>(q) * stride] = d * d + g[v[j]];
    }
}

// Directed distances from the surface voxels of `from` to the surface of `to`.
std::vector<double> directed(const Mask& from_surface, const std::vector<double>& to_dt) {
    std::vector<double> d;
    for (std::size_t i = 0; i < from_surface.size(); ++i)
        if (from_surface[i]) d.push_back(to_dt[i]);
    return d;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

nlohmann::json agg_json(const Aggregate& a) {
    return {{"mean", a.mean}, {"std", a.std}, {"n", a.n}, {"undefined", a.undefined}};
}

}  // namespace

double dice(const Mask& a, const Mask& b) {
    require_same_shape(a, b);
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] != 0, y = b[i] != 0;
        na += x;
        nb += y;
        both += x && y;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

Mask surface_voxels(const Mask& m) {
    const Shape3 s = m.shape();
    Mask out(s, 0);
    for (int z = 0; z < s.z; ++z)
        for (int y = 0; y < s.y; ++y)
            for (int x = 0; x < s.x; ++x) {
                if (!m(z, y, x)) continue;
                const bool border = z == 0 || y == 0 || x == 0 || z == s.z - 1 || y == s.y - 1 || x == s.x - 1;
                if (border || !m(z - 1, y, x) || !m(z + 1, y, x) || !m(z, y - 1, x) || !m(z, y + 1, x) ||
                    !m(z, y, x - 1) || !m(z, y, x + 1)) {
                    out(z, y, x) = 1;
                }
            }
    return out;
}

std::vector<double> distance_transform(const Mask& feature, const Spacing& spacing) {
    const Shape3 s = feature.shape();
    std::vector<double> f(feature.size());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = feature[i] ? 0.0 : kInf;
    const int nmax = std::max({s.z, s.y, s.x});
    std::vector<double> g(static_cast<std::size_t>(nmax)), zb(static_cast<std::size_t>(nmax) + 1);
    std::vector<int> v(static_cast<std::size_t>(nmax));
    const std::size_t sy = static_cast<std::size_t>(s.x), sz = static_cast<std::size_t>(s.y) * s.x;
    for (int z = 0; z < s.z; ++z)
        for (int y = 0; y < s.y; ++y) edt_1d(&f[z * sz + y * sy], s.x, 1, spacing.x, g, v, zb);
    for (int z = 0; z < s.z; ++z)
        for (int x = 0; x < s.x; ++x) edt_1d(&f[z * sz + x], s.y, sy, spacing.y, g, v, zb);
    for (int y = 0; y < s.y; ++y)
        for (int x = 0; x < s.x; ++x) edt_1d(&f[y * sy + x], s.z, sz, spacing.z, g, v, zb);
    for (auto& d : f) d = std::sqrt(d);
    return f;
}

double surface_dice(const Mask& a, const Mask& b, double tol_mm, const Spacing& spacing) {
    require_same_shape(a, b);
    if (!(tol_mm >= 0.0)) throw ValidationError("tolerance_mm", "must be >= 0");
    const Mask sa = surface_voxels(a), sb = surface_voxels(b);
    const std::size_t na = count_nonzero(sa), nb = count_nonzero(sb);
    if (na + nb == 0) return 1.0;
    if (na == 0 || nb == 0) return 0.0;
    const auto da = directed(sa, distance_transform(sb, spacing));
    const auto db = directed(sb, distance_transform(sa, spacing));
    std::size_t hit = 0;
    for (double d : da) hit += d <= tol_mm;
    for (double d : db) hit += d <= tol_mm;
    return static_cast<double>(hit) / static_cast<double>(na + nb);
}

double surface_dice(const Mask& a, const Spacing& spacing_a, const Mask& b, const Spacing& spacing_b, double tol_mm) {
    if (!(spacing_a == spacing_b)) throw ValidationError("spacing", "masks have different voxel spacings");
    return surface_dice(a, b, tol_mm, spacing_a);
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw ValidationError("values", "percentile of an empty set");
    if (!(q >= 0.0 && q <= 100.0)) throw ValidationError("q", "must lie in [0, 100]");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (values[hi] - values[lo]) * (pos - static_cast<double>(lo));
}

std::optional<double> hd95(const Mask& a, const Mask& b, const Spacing& spacing) {
    require_same_shape(a, b);
    const Mask sa = surface_voxels(a), sb = surface_voxels(b);
    if (count_nonzero(sa) == 0 || count_nonzero(sb) == 0) return std::nullopt;
    const auto da = directed(sa, distance_transform(sb, spacing));
    const auto db = directed(sb, distance_transform(sa, spacing));
    return std::max(percentile(da, 95.0), percentile(db, 95.0));
}

const char* metric_name(Metric m) {
    switch (m) {
        case Metric::Dice: return "dice";
        case Metric::SurfaceDice: return "surface_dice";
        case Metric::Hd95: return "hd95";
    }
    return "?";
}

std::optional<double> MetricsRow::value(Metric m) const {
    switch (m) {
        case Metric::Dice: return dice;
        case Metric::SurfaceDice: return surface_dice;
        case Metric::Hd95: return hd95_mm;
    }
    return std::nullopt;
}

Aggregate aggregate(const std::vector<double>& values, std::size_t undefined) {
    Aggregate a;
    a.n = values.size();
    a.undefined = undefined;
    if (values.empty()) return a;
    a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(a.n);
    if (a.n > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - a.mean) * (v - a.mean);
        a.std = std::sqrt(ss / static_cast<double>(a.n - 1));
    }
    return a;
}

Aggregate MetricsTable::per_organ(OrganId organ, Metric m) const {
    std::vector<double> vals;
    std::size_t undefined = 0;
    for (const auto& r : rows) {
        if (r.organ != organ) continue;
        if (auto v = r.value(m)) vals.push_back(*v);
        else ++undefined;
    }
    return aggregate(vals, undefined);
}

std::vector<std::pair<std::string, double>> MetricsTable::per_scan_means(Metric m) const {
    std::vector<std::pair<std::string, double>> out;
    std::vector<std::string> order;
    std::map<std::string, std::pair<double, int>> acc;
    for (const auto& r : rows) {
        if (!acc.count(r.scan_id)) {
            order.push_back(r.scan_id);
            acc[r.scan_id] = {0.0, 0};
        }
        if (auto v = r.value(m)) {
            acc[r.scan_id].first += *v;
            acc[r.scan_id].second += 1;
        }
    }
    for (const auto& id : order) {
        const auto& [sum, n] = acc[id];
        if (n > 0) out.emplace_back(id, sum / n);
    }
    return out;
}

Aggregate MetricsTable::per_scan(Metric m) const {
    const auto means = per_scan_means(m);
    std::vector<double> vals;
    for (const auto& [id, v] : means) vals.push_back(v);
    std::set<std::string> ids;
    for (const auto& r : rows) ids.insert(r.scan_id);
    return aggregate(vals, ids.size() - vals.size());
}

std::string MetricsTable::to_csv() const {
    std::ostringstream os;
    os << "scan_id,organ,dice,surface_dice,hd95\n";
    for (const auto& r : rows) {
        os << r.scan_id << "," << organ_name(r.organ) << "," << fmt(r.dice) << "," << fmt(r.surface_dice) << ","
           << (r.hd95_mm ? fmt(*r.hd95_mm) : "NA") << "\n";
    }
    return os.str();
}

std::string MetricsTable::aggregates_json() const {
    nlohmann::json j;
    for (Metric m : {Metric::Dice, Metric::SurfaceDice, Metric::Hd95}) {
        j["per_scan"][metric_name(m)] = agg_json(per_scan(m));
        for (OrganId o : kAllOrgans) j["per_organ"][organ_name(o)][metric_name(m)] = agg_json(per_organ(o, m));
    }
    j["scans"] = per_scan_means(Metric::Dice).size();
    j["rows"] = rows.size();
    return j.dump(2) + "\n";
}

MetricsTable evaluate_dataset(const Predictor& predict, const std::vector<ScanRecord>& records, double tol_mm) {
    MetricsTable t;
    for (const auto& r : records) {
        if (!r.labels.fully_annotated()) throw ValidationError("labels", "test record " + r.id + " is not fully annotated");
        const ClassMap pred = predict(r);
        if (pred.shape() != r.shape()) throw ShapeError("prediction shape differs from record " + r.id);
        for (OrganId o : kAllOrgans) {
            Mask pm(pred.shape(), 0);
            const auto c = static_cast<std::uint8_t>(class_index(o));
            for (std::size_t i = 0; i < pm.size(); ++i) pm[i] = pred[i] == c;
            const Mask& gt = r.labels.mask(o);
            t.rows.push_back({r.id, o, dice(pm, gt), surface_dice(pm, gt, tol_mm, r.image.spacing),
                              hd95(pm, gt, r.image.spacing)});
        }
    }
    return t;
}

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y, WilcoxonMode mode) {
    if (x.size() != y.size()) throw ShapeError("paired samples differ in length");
    std::vector<double> d;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] - y[i] != 0.0) d.push_back(x[i] - y[i]);
    WilcoxonResult res;
    res.n = static_cast<int>(d.size());
    if (d.empty()) {
        res.degenerate = true;
        res.method = "degenerate";
        return res;
    }
    if (d.size() < 6) throw ValidationError("samples", "need at least 6 non-zero paired differences, got " + std::to_string(d.size()));

    // Doubled average ranks stay integral.
    const std::size_t n = d.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return std::abs(d[a]) < std::abs(d[b]); });
    std::vector<int> rank2(n);
    double tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(d[idx[j + 1]]) == std::abs(d[idx[i]])) ++j;
        const int r2 = static_cast<int>(i + j + 2);  // 2 * mean of ranks i+1..j+1
        for (std::size_t k = i; k <= j; ++k) rank2[idx[k]] = r2;
        const double t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }
    int wp2 = 0, total2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        total2 += rank2[i];
        if (d[i] > 0) wp2 += rank2[i];
    }
    res.w_plus = wp2 / 2.0;
    res.w_minus = (total2 - wp2) / 2.0;
    res.statistic = std::min(res.w_plus, res.w_minus);

    const bool exact = mode == WilcoxonMode::Exact || (mode == WilcoxonMode::Auto && n < 20);
    if (exact) {
        if (n > 60) throw ValidationError("mode", "exact enumeration limited to 60 pairs");
        // count[s] = number of sign patterns with doubled W+ equal to s
        std::vector<double> count(static_cast<std::size_t>(total2) + 1, 0.0);
        count[0] = 1.0;
        int reach = 0;
        for (std::size_t i = 0; i < n; ++i) {
            for (int s = reach; s >= 0; --s)
                if (count[s] != 0.0) count[s + rank2[i]] += count[s];
            reach += rank2[i];
        }
        const double mean2 = total2 / 2.0;
        const double obs = std::abs(wp2 - mean2);
        double tail = 0.0, all = 0.0;
        for (int s = 0; s <= total2; ++s) {
            all += count[s];
            if (std::abs(s - mean2) >= obs - 1e-9) tail += count[s];
        }
        res.p_value = std::min(1.0, tail / all);
        res.method = "exact";
    } else {
        const double nn = static_cast<double>(n);
        const double mean = nn * (nn + 1) / 4.0;
        const double var = nn * (nn + 1) * (2 * nn + 1) / 24.0 - tie_term / 48.0;
        const double z = var > 0 ? (res.w_plus - mean) / std::sqrt(var) : 0.0;
        res.p_value = std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
        res.method = "normal";
    }
    return res;
}

}  // namespace ugss

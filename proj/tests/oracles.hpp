#ifndef UGSS_TESTS_ORACLES_HPP
#define UGSS_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "support.hpp"

// Independent reference implementations: pairwise distances instead of a
// distance transform, full sign enumeration instead of a rank-sum DP.
namespace ugss::oracle {

inline double dice(const Mask& a, const Mask& b) {
    double inter = 0, sa = 0, sb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += (a[i] && b[i]) ? 1 : 0;
        sa += a[i] ? 1 : 0;
        sb += b[i] ? 1 : 0;
    }
    if (sa + sb == 0) return 1.0;
    return 2.0 * inter / (sa + sb);
}

inline std::vector<double> directed(const std::vector<std::array<int, 3>>& from,
                                    const std::vector<std::array<int, 3>>& to, const Spacing& sp) {
    std::vector<double> d;
    for (const auto& p : from) d.push_back(test::brute_distance(p, to, sp));
    return d;
}

inline double surface_dice(const Mask& a, const Mask& b, double tol, const Spacing& sp) {
    const auto sa = test::brute_surface(a), sb = test::brute_surface(b);
    if (sa.empty() && sb.empty()) return 1.0;
    if (sa.empty() || sb.empty()) return 0.0;
    double hits = 0;
    for (double d : directed(sa, sb, sp)) hits += d <= tol ? 1 : 0;
    for (double d : directed(sb, sa, sp)) hits += d <= tol ? 1 : 0;
    return hits / static_cast<double>(sa.size() + sb.size());
}

// numpy.percentile with linear interpolation.
inline double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline std::optional<double> hd95(const Mask& a, const Mask& b, const Spacing& sp) {
    const auto sa = test::brute_surface(a), sb = test::brute_surface(b);
    if (sa.empty() || sb.empty()) return std::nullopt;
    return std::max(percentile(directed(sa, sb, sp), 95.0), percentile(directed(sb, sa, sp), 95.0));
}

// Two-sided exact signed-rank p-value by enumerating all 2^n sign patterns
// of the non-zero differences, with average ranks for ties.
inline double wilcoxon_exact_p(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> d;
    for (std::size_t i = 0; i < x.size(); ++i)
        if (x[i] - y[i] != 0.0) d.push_back(x[i] - y[i]);
    const std::size_t n = d.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(d[idx[j + 1]]) == std::abs(d[idx[i]])) ++j;
        const double r = (static_cast<double>(i + j) + 2.0) / 2.0;
        for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
        i = j + 1;
    }
    double obs = 0, total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        total += rank[i];
        if (d[i] > 0) obs += rank[i];
    }
    const double mean = total / 2.0;
    const double dev = std::abs(obs - mean);
    std::uint64_t extreme = 0;
    const std::uint64_t patterns = 1ULL << n;
    for (std::uint64_t s = 0; s < patterns; ++s) {
        double w = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (s >> i & 1ULL) w += rank[i];
        if (std::abs(w - mean) >= dev - 1e-9) ++extreme;
    }
    return static_cast<double>(extreme) / static_cast<double>(patterns);
}

}  // namespace ugss::oracle

#endif  // UGSS_TESTS_ORACLES_HPP

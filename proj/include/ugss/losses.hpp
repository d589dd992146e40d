#ifndef UGSS_LOSSES_HPP
#define UGSS_LOSSES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ugss/errors.hpp"

// Loss functions over channel-major probability maps: probs[c * n + v] for
// class c at voxel v. Targets are class indices per voxel. All reductions are
// means over voxels.
namespace ugss {

inline constexpr double kProbFloor = 1e-12;

// Shannon entropy in nats, with 0 ln 0 = 0.
template <typename T>
T entropy(std::span<const T> p) {
    T h = 0;
    for (T v : p) {
        if (v > T(0)) h -= v * std::log(v);
    }
    return h;
}

template <typename T>
T entropy(const std::vector<T>& p) {
    return entropy(std::span<const T>(p));
}

template <typename T>
T uncertainty_weight(T u) {
    return std::exp(-u);
}

namespace detail {

template <typename T>
std::size_t check_loss_shapes(std::size_t probs_size, int classes, std::size_t target_size, std::size_t u_size) {
    if (classes < 1 || probs_size % static_cast<std::size_t>(classes) != 0) throw ShapeError("probability map size is not a multiple of the class count");
    const std::size_t n = probs_size / static_cast<std::size_t>(classes);
    if (target_size != n) throw ShapeError("target size does not match probability map");
    if (u_size != 0 && u_size != n) throw ShapeError("uncertainty size does not match probability map");
    if (n == 0) throw ShapeError("empty probability map");
    return n;
}

}  // namespace detail

// Mean over voxels of e^{-u(v)} * (-ln max(p_{y(v)}(v), floor)). An empty `u`
// means u = 0 everywhere. When `grad_logits` is non-empty it receives the
// gradient with respect to the logits that produced `probs` via softmax.
template <typename T, typename U = T>
double uce_with_grad(std::span<const T> probs, int classes, std::span<const std::uint8_t> target,
                     std::span<const U> u, std::span<T> grad_logits) {
    const std::size_t n = detail::check_loss_shapes<T>(probs.size(), classes, target.size(), u.size());
    if (!grad_logits.empty() && grad_logits.size() != probs.size()) throw ShapeError("gradient buffer size mismatch");
    const T inv_n = T(1) / static_cast<T>(n);
    double total = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        const int y = target[v];
        if (y >= classes) throw ShapeError("target class out of range");
        T w = T(1);
        if (!u.empty()) {
            if (!(u[v] >= U(0))) throw ValidationError("u", "uncertainty must be non-negative");
            w = static_cast<T>(uncertainty_weight(static_cast<double>(u[v])));
        }
        const T py = probs[static_cast<std::size_t>(y) * n + v];
        const bool floored = !(static_cast<double>(py) > kProbFloor);
        const double nll = -std::log(floored ? kProbFloor : static_cast<double>(py));
        total += static_cast<double>(w) * nll;
        if (!grad_logits.empty()) {
            const T scale = w * inv_n;
            for (int c = 0; c < classes; ++c) {
                const std::size_t i = static_cast<std::size_t>(c) * n + v;
                grad_logits[i] = floored ? T(0) : scale * (probs[i] - (c == y ? T(1) : T(0)));
            }
        }
    }
    return total / static_cast<double>(n);
}

template <typename T>
double cross_entropy(std::span<const T> probs, int classes, std::span<const std::uint8_t> target) {
    return uce_with_grad<T, T>(probs, classes, target, {}, {});
}

template <typename T, typename U>
double uce_loss(std::span<const T> probs, int classes, std::span<const std::uint8_t> target, std::span<const U> u) {
    return uce_with_grad<T, U>(probs, classes, target, u, {});
}

template <typename T>
std::vector<T> softmax_channel_major(std::span<const T> logits, int classes) {
    const std::size_t n = logits.size() / static_cast<std::size_t>(classes);
    std::vector<T> p(logits.size());
    for (std::size_t v = 0; v < n; ++v) {
        T mx = logits[v];
        for (int c = 1; c < classes; ++c) mx = std::max(mx, logits[static_cast<std::size_t>(c) * n + v]);
        T sum = 0;
        for (int c = 0; c < classes; ++c) {
            const std::size_t i = static_cast<std::size_t>(c) * n + v;
            p[i] = std::exp(logits[i] - mx);
            sum += p[i];
        }
        for (int c = 0; c < classes; ++c) p[static_cast<std::size_t>(c) * n + v] /= sum;
    }
    return p;
}

// Analytic logit gradient of uce_loss against central finite differences.
// Returns the max relative error |a - f| / max(|a|, |f|, 1e-8).
inline double grad_check_uce(std::span<const double> logits, int classes, std::span<const std::uint8_t> target,
                             std::span<const double> u, double h) {
    auto loss_at = [&](std::span<const double> z) {
        const auto p = softmax_channel_major<double>(z, classes);
        return uce_with_grad<double, double>(p, classes, target, u, {});
    };
    const auto p = softmax_channel_major<double>(logits, classes);
    std::vector<double> analytic(logits.size());
    uce_with_grad<double, double>(p, classes, target, u, analytic);

    std::vector<double> z(logits.begin(), logits.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double orig = z[i];
        z[i] = orig + h;
        const double up = loss_at(z);
        z[i] = orig - h;
        const double down = loss_at(z);
        z[i] = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace ugss

#endif  // UGSS_LOSSES_HPP

#include "ugss/nn.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>

#include "ugss/errors.hpp"

namespace ugss::nn {

void Param::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }

void adam_step(Param& p, const AdamOptions& opt) {
    if (p.adam_m.size() != p.value.size()) {
        p.adam_m.assign(p.value.size(), 0.0f);
        p.adam_v.assign(p.value.size(), 0.0f);
    }
    ++p.step;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(p.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(p.step));
    const float b1 = static_cast<float>(opt.beta1);
    const float b2 = static_cast<float>(opt.beta2);
    const float wd = static_cast<float>(opt.weight_decay);
    const float step_size = static_cast<float>(opt.lr / bc1);
    const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
    const float eps = static_cast<float>(opt.eps);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
        const float g = p.grad[i] + wd * p.value[i];
        p.adam_m[i] = b1 * p.adam_m[i] + (1.0f - b1) * g;
        p.adam_v[i] = b2 * p.adam_v[i] + (1.0f - b2) * g * g;
        const float denom = std::sqrt(p.adam_v[i]) * inv_sqrt_bc2 + eps;
        p.value[i] -= step_size * p.adam_m[i] / denom;
    }
}

namespace {

struct PadGeom {
    int hp, wp;
    std::size_t plane, total, lo, hi;
    std::array<std::ptrdiff_t, 27> off;

    PadGeom(int d, int h, int w) {
        hp = h + 2;
        wp = w + 2;
        plane = static_cast<std::size_t>(hp) * wp;
        total = static_cast<std::size_t>(d + 2) * plane;
        lo = plane + static_cast<std::size_t>(wp) + 1;
        hi = total - lo;
        int t = 0;
        for (int kz = -1; kz <= 1; ++kz)
            for (int ky = -1; ky <= 1; ++ky)
                for (int kx = -1; kx <= 1; ++kx)
                    off[t++] = static_cast<std::ptrdiff_t>(kz) * static_cast<std::ptrdiff_t>(plane) +
                               static_cast<std::ptrdiff_t>(ky) * wp + kx;
    }
    std::size_t at(int z, int y, int x) const { return static_cast<std::size_t>(z + 1) * plane + static_cast<std::size_t>(y + 1) * wp + x + 1; }
};

// Zero-padded copy of every channel, laid out back to back.
std::vector<float> pad_channels(const Tensor& t, const PadGeom& g) {
    std::vector<float> out(static_cast<std::size_t>(t.c) * g.total, 0.0f);
    for (int c = 0; c < t.c; ++c) {
        float* dst = out.data() + static_cast<std::size_t>(c) * g.total;
        const float* src = t.channel(c);
        for (int z = 0; z < t.d; ++z)
            for (int y = 0; y < t.h; ++y) {
                std::copy_n(src + (static_cast<std::size_t>(z) * t.h + y) * t.w, t.w, dst + g.at(z, y, 0));
            }
    }
    return out;
}

void unpad_channel(const float* src, const PadGeom& g, int d, int h, int w, float* dst, float add) {
    for (int z = 0; z < d; ++z)
        for (int y = 0; y < h; ++y) {
            const float* s = src + g.at(z, y, 0);
            float* o = dst + (static_cast<std::size_t>(z) * h + y) * w;
            for (int x = 0; x < w; ++x) o[x] = s[x] + add;
        }
}

// GCC/Clang vector extension; lowered to whatever SIMD width the target has.
typedef float vecf __attribute__((vector_size(64)));
constexpr int kLanes = 16;

inline vecf loadv(const float* p) {
    vecf v;
    std::memcpy(&v, p, sizeof(v));
    return v;
}

inline float hsum(vecf v) {
    float s = 0.0f;
    for (int k = 0; k < kLanes; ++k) s += v[k];
    return s;
}

inline void storev(float* p, vecf v) { std::memcpy(p, &v, sizeof(v)); }

// acc[i] += w * src[i] for i in [lo, hi)
inline void axpy_range(float* __restrict acc, const float* __restrict src, float w, std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) acc[i] += w * src[i];
}

// Four output channels share one pass over the source.
inline void axpy4_range(float* __restrict a0, float* __restrict a1, float* __restrict a2, float* __restrict a3,
                        const float* __restrict src, float w0, float w1, float w2, float w3, std::size_t lo,
                        std::size_t hi) {
    const vecf W0 = vecf{} + w0;
    const vecf W1 = vecf{} + w1;
    const vecf W2 = vecf{} + w2;
    const vecf W3 = vecf{} + w3;
    std::size_t i = lo;
    for (; i + kLanes <= hi; i += kLanes) {
        const vecf v = loadv(src + i);
        storev(a0 + i, loadv(a0 + i) + W0 * v);
        storev(a1 + i, loadv(a1 + i) + W1 * v);
        storev(a2 + i, loadv(a2 + i) + W2 * v);
        storev(a3 + i, loadv(a3 + i) + W3 * v);
    }
    for (; i < hi; ++i) {
        const float v = src[i];
        a0[i] += w0 * v;
        a1[i] += w1 * v;
        a2[i] += w2 * v;
        a3[i] += w3 * v;
    }
}

// Four dot products against one shared stream.
inline void dot4_range(const float* __restrict a0, const float* __restrict a1, const float* __restrict a2,
                       const float* __restrict a3, const float* __restrict b, std::size_t lo, std::size_t hi,
                       float out[4]) {
    vecf s0 = {}, s1 = {}, s2 = {}, s3 = {};
    std::size_t i = lo;
    for (; i + kLanes <= hi; i += kLanes) {
        const vecf v = loadv(b + i);
        s0 += loadv(a0 + i) * v;
        s1 += loadv(a1 + i) * v;
        s2 += loadv(a2 + i) * v;
        s3 += loadv(a3 + i) * v;
    }
    float t0 = 0, t1 = 0, t2 = 0, t3 = 0;
    for (; i < hi; ++i) {
        t0 += a0[i] * b[i];
        t1 += a1[i] * b[i];
        t2 += a2[i] * b[i];
        t3 += a3[i] * b[i];
    }
    out[0] = hsum(s0) + t0;
    out[1] = hsum(s1) + t1;
    out[2] = hsum(s2) + t2;
    out[3] = hsum(s3) + t3;
}

inline float dot_range(const float* __restrict a, const float* __restrict b, std::size_t lo, std::size_t hi) {
    vecf acc = {};
    std::size_t i = lo;
    for (; i + kLanes <= hi; i += kLanes) acc += loadv(a + i) * loadv(b + i);
    float t = 0.0f;
    for (; i < hi; ++i) t += a[i] * b[i];
    return hsum(acc) + t;
}

}  // namespace

Conv3d::Conv3d(std::string name, int cin, int cout, int kernel)
    : cin_(cin), cout_(cout), k_(kernel),
      weight_(name + ".weight", static_cast<std::size_t>(cout) * cin * kernel * kernel * kernel),
      bias_(name + ".bias", static_cast<std::size_t>(cout)) {
    if (kernel != 1 && kernel != 3) throw Error("Conv3d supports kernel sizes 1 and 3");
}

void Conv3d::init_kaiming(Rng& rng) {
    const double fan_in = static_cast<double>(cin_) * k_ * k_ * k_;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& w : weight_.value) w = static_cast<float>(dist(rng));
    std::fill(bias_.value.begin(), bias_.value.end(), 0.0f);
}

Tensor Conv3d::forward(const Tensor& in) const {
    if (in.c != cin_) throw ShapeError("Conv3d: expected " + std::to_string(cin_) + " input channels, got " + std::to_string(in.c));
    Tensor out(cout_, in.d, in.h, in.w);
    const std::size_t n = in.spatial();
    if (k_ == 1) {
        for (int co = 0; co < cout_; ++co) {
            float* o = out.channel(co);
            std::fill(o, o + n, bias_.value[co]);
            for (int ci = 0; ci < cin_; ++ci) axpy_range(o, in.channel(ci), weight_.value[static_cast<std::size_t>(co) * cin_ + ci], 0, n);
        }
        return out;
    }

    const PadGeom g(in.d, in.h, in.w);
    const auto pin = pad_channels(in, g);
    std::vector<float> acc(4 * g.total);
    const float* W = weight_.value.data();
    int co = 0;
    for (; co + 4 <= cout_; co += 4) {
        std::fill(acc.begin(), acc.end(), 0.0f);
        float* a0 = acc.data();
        float* a1 = a0 + g.total;
        float* a2 = a1 + g.total;
        float* a3 = a2 + g.total;
        for (int ci = 0; ci < cin_; ++ci) {
            const float* src = pin.data() + static_cast<std::size_t>(ci) * g.total;
            const float* w0 = W + (static_cast<std::size_t>(co) * cin_ + ci) * 27;
            const std::size_t cs = static_cast<std::size_t>(cin_) * 27;
            for (int t = 0; t < 27; ++t) {
                axpy4_range(a0, a1, a2, a3, src + g.off[t], w0[t], w0[cs + t], w0[2 * cs + t], w0[3 * cs + t], g.lo, g.hi);
            }
        }
        for (int j = 0; j < 4; ++j) unpad_channel(acc.data() + j * g.total, g, in.d, in.h, in.w, out.channel(co + j), bias_.value[co + j]);
    }
    for (; co < cout_; ++co) {
        std::fill(acc.begin(), acc.begin() + static_cast<std::ptrdiff_t>(g.total), 0.0f);
        for (int ci = 0; ci < cin_; ++ci) {
            const float* src = pin.data() + static_cast<std::size_t>(ci) * g.total;
            const float* w0 = W + (static_cast<std::size_t>(co) * cin_ + ci) * 27;
            for (int t = 0; t < 27; ++t) axpy_range(acc.data(), src + g.off[t], w0[t], g.lo, g.hi);
        }
        unpad_channel(acc.data(), g, in.d, in.h, in.w, out.channel(co), bias_.value[co]);
    }
    return out;
}

Tensor Conv3d::backward(const Tensor& in, const Tensor& grad_out, bool want_input_grad) {
    const std::size_t n = in.spatial();
    for (int co = 0; co < cout_; ++co) {
        const float* go = grad_out.channel(co);
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += go[i];
        bias_.grad[co] += static_cast<float>(s);
    }

    if (k_ == 1) {
        for (int co = 0; co < cout_; ++co)
            for (int ci = 0; ci < cin_; ++ci)
                weight_.grad[static_cast<std::size_t>(co) * cin_ + ci] += dot_range(grad_out.channel(co), in.channel(ci), 0, n);
        if (!want_input_grad) return {};
        Tensor gin(cin_, in.d, in.h, in.w);
        for (int ci = 0; ci < cin_; ++ci)
            for (int co = 0; co < cout_; ++co)
                axpy_range(gin.channel(ci), grad_out.channel(co), weight_.value[static_cast<std::size_t>(co) * cin_ + ci], 0, n);
        return gin;
    }

    const PadGeom g(in.d, in.h, in.w);
    const auto pin = pad_channels(in, g);
    const auto pgo = pad_channels(grad_out, g);
    int co = 0;
    for (; co + 4 <= cout_; co += 4) {
        const float* go = pgo.data() + static_cast<std::size_t>(co) * g.total;
        for (int ci = 0; ci < cin_; ++ci) {
            const float* src = pin.data() + static_cast<std::size_t>(ci) * g.total;
            const std::size_t cs = static_cast<std::size_t>(cin_) * 27;
            float* gw = weight_.grad.data() + (static_cast<std::size_t>(co) * cin_ + ci) * 27;
            for (int t = 0; t < 27; ++t) {
                float r[4];
                dot4_range(go, go + g.total, go + 2 * g.total, go + 3 * g.total, src + g.off[t], g.lo, g.hi, r);
                gw[t] += r[0];
                gw[cs + t] += r[1];
                gw[2 * cs + t] += r[2];
                gw[3 * cs + t] += r[3];
            }
        }
    }
    for (; co < cout_; ++co) {
        const float* go = pgo.data() + static_cast<std::size_t>(co) * g.total;
        for (int ci = 0; ci < cin_; ++ci) {
            const float* src = pin.data() + static_cast<std::size_t>(ci) * g.total;
            float* gw = weight_.grad.data() + (static_cast<std::size_t>(co) * cin_ + ci) * 27;
            for (int t = 0; t < 27; ++t) gw[t] += dot_range(go, src + g.off[t], g.lo, g.hi);
        }
    }
    if (!want_input_grad) return {};

    // Input gradient is the correlation with the spatially flipped kernel.
    Tensor gin(cin_, in.d, in.h, in.w);
    std::vector<float> acc(4 * g.total);
    const float* W = weight_.value.data();
    int ci = 0;
    auto wt = [&](int co, int c, int t) { return W[(static_cast<std::size_t>(co) * cin_ + c) * 27 + t]; };
    for (; ci + 4 <= cin_; ci += 4) {
        std::fill(acc.begin(), acc.end(), 0.0f);
        float* a0 = acc.data();
        float* a1 = a0 + g.total;
        float* a2 = a1 + g.total;
        float* a3 = a2 + g.total;
        for (int co = 0; co < cout_; ++co) {
            const float* src = pgo.data() + static_cast<std::size_t>(co) * g.total;
            for (int t = 0; t < 27; ++t) {
                axpy4_range(a0, a1, a2, a3, src - g.off[t], wt(co, ci, t), wt(co, ci + 1, t), wt(co, ci + 2, t),
                            wt(co, ci + 3, t), g.lo, g.hi);
            }
        }
        for (int j = 0; j < 4; ++j) unpad_channel(acc.data() + j * g.total, g, in.d, in.h, in.w, gin.channel(ci + j), 0.0f);
    }
    for (; ci < cin_; ++ci) {
        std::fill(acc.begin(), acc.begin() + static_cast<std::ptrdiff_t>(g.total), 0.0f);
        for (int co = 0; co < cout_; ++co) {
            const float* src = pgo.data() + static_cast<std::size_t>(co) * g.total;
            for (int t = 0; t < 27; ++t) axpy_range(acc.data(), src - g.off[t], wt(co, ci, t), g.lo, g.hi);
        }
        unpad_channel(acc.data(), g, in.d, in.h, in.w, gin.channel(ci), 0.0f);
    }
    return gin;
}

InstanceNormRelu::InstanceNormRelu(std::string name, int channels)
    : gamma_(name + ".gamma", static_cast<std::size_t>(channels)), beta_(name + ".beta", static_cast<std::size_t>(channels)) {
    std::fill(gamma_.value.begin(), gamma_.value.end(), 1.0f);
}

Tensor InstanceNormRelu::forward(const Tensor& in, NormCache* cache) const {
    Tensor out(in.c, in.d, in.h, in.w);
    const std::size_t n = in.spatial();
    if (cache) {
        cache->xhat = Tensor(in.c, in.d, in.h, in.w);
        cache->inv_std.assign(static_cast<std::size_t>(in.c), 0.0f);
    }
    for (int c = 0; c < in.c; ++c) {
        const float* x = in.channel(c);
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += x[i];
        const double mean = sum / static_cast<double>(n);
        double sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dlt = x[i] - mean;
            sq += dlt * dlt;
        }
        const float inv_std = static_cast<float>(1.0 / std::sqrt(sq / static_cast<double>(n) + kEps));
        const float m = static_cast<float>(mean);
        const float ga = gamma_.value[c];
        const float be = beta_.value[c];
        float* o = out.channel(c);
        float* xh = cache ? cache->xhat.channel(c) : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
            const float h = (x[i] - m) * inv_std;
            if (xh) xh[i] = h;
            o[i] = std::max(0.0f, ga * h + be);
        }
        if (cache) cache->inv_std[c] = inv_std;
    }
    return out;
}

Tensor InstanceNormRelu::backward(const NormCache& cache, const Tensor& out, const Tensor& grad_out) {
    Tensor gin(out.c, out.d, out.h, out.w);
    const std::size_t n = out.spatial();
    const double nn = static_cast<double>(n);
    std::vector<float> gy(n);
    for (int c = 0; c < out.c; ++c) {
        const float* o = out.channel(c);
        const float* go = grad_out.channel(c);
        const float* xh = cache.xhat.channel(c);
        double sum_gy = 0.0, sum_gy_xh = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            gy[i] = o[i] > 0.0f ? go[i] : 0.0f;
            sum_gy += gy[i];
            sum_gy_xh += static_cast<double>(gy[i]) * xh[i];
        }
        gamma_.grad[c] += static_cast<float>(sum_gy_xh);
        beta_.grad[c] += static_cast<float>(sum_gy);
        const float ga = gamma_.value[c];
        // dx = gamma * inv_std / N * (N*gy - sum(gy) - xhat*sum(gy*xhat))
        const float scale = static_cast<float>(ga * cache.inv_std[c] / nn);
        const float a = static_cast<float>(sum_gy);
        const float b = static_cast<float>(sum_gy_xh);
        const float fn = static_cast<float>(nn);
        float* gi = gin.channel(c);
        for (std::size_t i = 0; i < n; ++i) gi[i] = scale * (fn * gy[i] - a - xh[i] * b);
    }
    return gin;
}

ConvBlock::ConvBlock(const std::string& name, int cin, int cout)
    : conv1_(name + ".conv1", cin, cout, 3), norm1_(name + ".norm1", cout), conv2_(name + ".conv2", cout, cout, 3),
      norm2_(name + ".norm2", cout) {}

void ConvBlock::init_kaiming(Rng& rng) {
    conv1_.init_kaiming(rng);
    conv2_.init_kaiming(rng);
}

Tensor ConvBlock::forward(const Tensor& in, BlockCache* cache) const {
    if (!cache) {
        auto a = norm1_.forward(conv1_.forward(in), nullptr);
        return norm2_.forward(conv2_.forward(a), nullptr);
    }
    cache->in = in;
    cache->act1 = norm1_.forward(conv1_.forward(in), &cache->norm1);
    cache->out = norm2_.forward(conv2_.forward(cache->act1), &cache->norm2);
    return cache->out;
}

Tensor ConvBlock::backward(BlockCache& cache, const Tensor& grad_out, bool want_input_grad) {
    Tensor g = norm2_.backward(cache.norm2, cache.out, grad_out);
    g = conv2_.backward(cache.act1, g, true);
    g = norm1_.backward(cache.norm1, cache.act1, g);
    return conv1_.backward(cache.in, g, want_input_grad);
}

std::vector<Param*> ConvBlock::params() {
    return {&conv1_.weight(), &conv1_.bias(), &norm1_.gamma(), &norm1_.beta(),
            &conv2_.weight(), &conv2_.bias(), &norm2_.gamma(), &norm2_.beta()};
}

std::vector<const Param*> ConvBlock::params() const {
    return {&conv1_.weight(), &conv1_.bias(), &norm1_.gamma(), &norm1_.beta(),
            &conv2_.weight(), &conv2_.bias(), &norm2_.gamma(), &norm2_.beta()};
}

std::size_t ConvBlock::param_count(int cin, int cout) {
    const std::size_t ci = static_cast<std::size_t>(cin);
    const std::size_t co = static_cast<std::size_t>(cout);
    return (27 * ci * co + co) + 2 * co + (27 * co * co + co) + 2 * co;
}

Tensor maxpool2(const Tensor& in, PoolCache* cache) {
    if (in.d % 2 || in.h % 2 || in.w % 2) throw ShapeError("maxpool2 needs even spatial dims");
    Tensor out(in.c, in.d / 2, in.h / 2, in.w / 2);
    if (cache) cache->argmax.assign(out.v.size(), 0);
    std::size_t oi = 0;
    for (int c = 0; c < in.c; ++c) {
        const float* x = in.channel(c);
        for (int z = 0; z < out.d; ++z)
            for (int y = 0; y < out.h; ++y)
                for (int xx = 0; xx < out.w; ++xx, ++oi) {
                    float best = -INFINITY;
                    unsigned arg = 0;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const auto idx = static_cast<unsigned>(((2 * z + dz) * in.h + (2 * y + dy)) * in.w + 2 * xx + dx);
                                if (x[idx] > best) {
                                    best = x[idx];
                                    arg = idx;
                                }
                            }
                    out.v[oi] = best;
                    if (cache) cache->argmax[oi] = arg;
                }
    }
    return out;
}

Tensor maxpool2_backward(const Tensor& in_shape, const PoolCache& cache, const Tensor& grad_out) {
    Tensor gin(in_shape.c, in_shape.d, in_shape.h, in_shape.w);
    const std::size_t per = grad_out.spatial();
    for (int c = 0; c < grad_out.c; ++c) {
        float* gi = gin.channel(c);
        const float* go = grad_out.channel(c);
        const unsigned* am = cache.argmax.data() + static_cast<std::size_t>(c) * per;
        for (std::size_t i = 0; i < per; ++i) gi[am[i]] += go[i];
    }
    return gin;
}

namespace {

struct LinearTap {
    int i0, i1;
    float w0, w1;
};

std::vector<LinearTap> upsample_taps(int n) {
    std::vector<LinearTap> taps(static_cast<std::size_t>(2 * n));
    for (int o = 0; o < 2 * n; ++o) {
        double src = (o + 0.5) * 0.5 - 0.5;
        if (src < 0.0) src = 0.0;
        const int i0 = std::min(static_cast<int>(src), n - 1);
        const int i1 = std::min(i0 + 1, n - 1);
        const float w1 = static_cast<float>(src - i0);
        taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0f - w1, w1};
    }
    return taps;
}

// Viewing data as (outer, n, inner), upsample the middle axis by 2.
std::vector<float> upsample_axis(const std::vector<float>& in, std::size_t outer, int n, std::size_t inner) {
    const auto taps = upsample_taps(n);
    std::vector<float> out(outer * 2 * static_cast<std::size_t>(n) * inner);
    for (std::size_t a = 0; a < outer; ++a) {
        const float* src = in.data() + a * static_cast<std::size_t>(n) * inner;
        float* dst = out.data() + a * 2 * static_cast<std::size_t>(n) * inner;
        for (int o = 0; o < 2 * n; ++o) {
            const auto& t = taps[static_cast<std::size_t>(o)];
            const float* s0 = src + static_cast<std::size_t>(t.i0) * inner;
            const float* s1 = src + static_cast<std::size_t>(t.i1) * inner;
            float* d = dst + static_cast<std::size_t>(o) * inner;
            for (std::size_t k = 0; k < inner; ++k) d[k] = t.w0 * s0[k] + t.w1 * s1[k];
        }
    }
    return out;
}

std::vector<float> upsample_axis_adjoint(const std::vector<float>& gout, std::size_t outer, int n, std::size_t inner) {
    const auto taps = upsample_taps(n);
    std::vector<float> gin(outer * static_cast<std::size_t>(n) * inner, 0.0f);
    for (std::size_t a = 0; a < outer; ++a) {
        const float* src = gout.data() + a * 2 * static_cast<std::size_t>(n) * inner;
        float* dst = gin.data() + a * static_cast<std::size_t>(n) * inner;
        for (int o = 0; o < 2 * n; ++o) {
            const auto& t = taps[static_cast<std::size_t>(o)];
            const float* g = src + static_cast<std::size_t>(o) * inner;
            float* d0 = dst + static_cast<std::size_t>(t.i0) * inner;
            float* d1 = dst + static_cast<std::size_t>(t.i1) * inner;
            for (std::size_t k = 0; k < inner; ++k) {
                d0[k] += t.w0 * g[k];
                d1[k] += t.w1 * g[k];
            }
        }
    }
    return gin;
}

}  // namespace

Tensor upsample2(const Tensor& in) {
    const auto C = static_cast<std::size_t>(in.c);
    auto a = upsample_axis(in.v, C * in.d * in.h, in.w, 1);
    a = upsample_axis(a, C * in.d, in.h, static_cast<std::size_t>(2 * in.w));
    a = upsample_axis(a, C, in.d, static_cast<std::size_t>(4 * in.h * in.w));
    Tensor out;
    out.c = in.c;
    out.d = 2 * in.d;
    out.h = 2 * in.h;
    out.w = 2 * in.w;
    out.v = std::move(a);
    return out;
}

Tensor upsample2_backward(const Tensor& grad_out, int d, int h, int w) {
    const auto C = static_cast<std::size_t>(grad_out.c);
    auto a = upsample_axis_adjoint(grad_out.v, C, d, static_cast<std::size_t>(4 * h * w));
    a = upsample_axis_adjoint(a, C * d, h, static_cast<std::size_t>(2 * w));
    a = upsample_axis_adjoint(a, C * d * h, w, 1);
    Tensor gin;
    gin.c = grad_out.c;
    gin.d = d;
    gin.h = h;
    gin.w = w;
    gin.v = std::move(a);
    return gin;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.d != b.d || a.h != b.h || a.w != b.w) throw ShapeError("concat_channels: spatial shape mismatch");
    Tensor out(a.c + b.c, a.d, a.h, a.w);
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
    return out;
}

void split_channels(const Tensor& g, int ca, Tensor& ga, Tensor& gb) {
    ga = Tensor(ca, g.d, g.h, g.w);
    gb = Tensor(g.c - ca, g.d, g.h, g.w);
    std::copy(g.v.begin(), g.v.begin() + static_cast<std::ptrdiff_t>(ga.v.size()), ga.v.begin());
    std::copy(g.v.begin() + static_cast<std::ptrdiff_t>(ga.v.size()), g.v.end(), gb.v.begin());
}

Tensor softmax_channels(const Tensor& logits) {
    Tensor out(logits.c, logits.d, logits.h, logits.w);
    const std::size_t n = logits.spatial();
    for (std::size_t i = 0; i < n; ++i) {
        float mx = -INFINITY;
        for (int c = 0; c < logits.c; ++c) mx = std::max(mx, logits.v[c * n + i]);
        float sum = 0.0f;
        for (int c = 0; c < logits.c; ++c) {
            const float e = std::exp(logits.v[c * n + i] - mx);
            out.v[c * n + i] = e;
            sum += e;
        }
        const float inv = 1.0f / sum;
        for (int c = 0; c < logits.c; ++c) out.v[c * n + i] *= inv;
    }
    return out;
}

}  // namespace ugss::nn

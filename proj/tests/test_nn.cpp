#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "ugss/errors.hpp"
#include "ugss/nn.hpp"

using namespace ugss;
using namespace ugss::nn;

namespace {

Tensor random_tensor(int c, int d, int h, int w, Rng& rng) {
    Tensor t(c, d, h, w);
    std::normal_distribution<float> n(0.0f, 1.0f);
    for (auto& v : t.v) v = n(rng);
    return t;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) s += static_cast<double>(a.v[i]) * b.v[i];
    return s;
}

// Direct zero-padded convolution in double.
std::vector<double> naive_conv(const Tensor& in, const Conv3d& conv) {
    const int k = conv.kernel(), r = k / 2, co_n = conv.out_channels();
    std::vector<double> out(static_cast<std::size_t>(co_n) * in.spatial());
    for (int co = 0; co < co_n; ++co)
        for (int z = 0; z < in.d; ++z)
            for (int y = 0; y < in.h; ++y)
                for (int x = 0; x < in.w; ++x) {
                    double s = conv.bias().value[co];
                    for (int ci = 0; ci < in.c; ++ci)
                        for (int kz = 0; kz < k; ++kz)
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx) {
                                    const int zz = z + kz - r, yy = y + ky - r, xx = x + kx - r;
                                    if (zz < 0 || yy < 0 || xx < 0 || zz >= in.d || yy >= in.h || xx >= in.w) continue;
                                    const std::size_t wi = (((static_cast<std::size_t>(co) * in.c + ci) * k + kz) * k + ky) * k + kx;
                                    s += conv.weight().value[wi] *
                                         static_cast<double>(in.channel(ci)[(static_cast<std::size_t>(zz) * in.h + yy) * in.w + xx]);
                                }
                    out[static_cast<std::size_t>(co) * in.spatial() + (static_cast<std::size_t>(z) * in.h + y) * in.w + x] = s;
                }
    return out;
}

// Central differences of `loss` with respect to each entry of `values`,
// compared against `analytic`. Returns the fraction of entries outside tolerance.
double fd_mismatch(std::vector<float>& values, const std::vector<float>& analytic, const std::function<double()>& loss,
                   float h, double rel, double abs_tol) {
    int bad = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const float orig = values[i];
        values[i] = orig + h;
        const double up = loss();
        values[i] = orig - h;
        const double down = loss();
        values[i] = orig;
        const double num = (up - down) / (2.0 * h);
        if (std::abs(num - analytic[i]) > abs_tol + rel * std::max(std::abs(num), std::abs(double(analytic[i])))) ++bad;
    }
    return static_cast<double>(bad) / static_cast<double>(values.size());
}

}  // namespace

TEST(Conv3d, MatchesNaiveConvolution) {
    Rng rng = make_rng(1);
    for (int k : {1, 3}) {
        for (int cout : {1, 4, 6}) {
            Conv3d conv("c", 3, cout, k);
            conv.init_kaiming(rng);
            for (auto& b : conv.bias().value) b = static_cast<float>(uniform(rng, -1, 1));
            const Tensor in = random_tensor(3, 3, 4, 5, rng);
            const Tensor out = conv.forward(in);
            const auto want = naive_conv(in, conv);
            ASSERT_EQ(out.v.size(), want.size());
            for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(out.v[i], want[i], 1e-4);
        }
    }
}

TEST(Conv3d, WrongChannelCountThrows) {
    Conv3d conv("c", 2, 2, 3);
    EXPECT_THROW(conv.forward(Tensor(3, 2, 2, 2)), ShapeError);
    EXPECT_THROW(Conv3d("c", 1, 1, 5), Error);
}

TEST(Conv3d, GradientsMatchFiniteDifferences) {
    Rng rng = make_rng(2);
    for (int k : {1, 3}) {
        Conv3d conv("c", 2, 5, k);
        conv.init_kaiming(rng);
        Tensor in = random_tensor(2, 3, 3, 4, rng);
        const Tensor r = random_tensor(5, 3, 3, 4, rng);
        conv.weight().zero_grad();
        conv.bias().zero_grad();
        const Tensor gin = conv.backward(in, r, true);
        auto loss = [&] { return dot(conv.forward(in), r); };
        EXPECT_EQ(fd_mismatch(in.v, gin.v, loss, 0.05f, 2e-3, 2e-3), 0.0);
        const std::vector<float> gw = conv.weight().grad;
        EXPECT_EQ(fd_mismatch(conv.weight().value, gw, loss, 0.05f, 2e-3, 2e-3), 0.0);
        const std::vector<float> gb = conv.bias().grad;
        EXPECT_EQ(fd_mismatch(conv.bias().value, gb, loss, 0.05f, 2e-3, 2e-3), 0.0);
    }
}

TEST(InstanceNormRelu, NormalizesEachChannel) {
    Rng rng = make_rng(3);
    InstanceNormRelu norm("n", 2);
    norm.beta().value = {10.0f, 10.0f};  // keep everything above the ReLU kink
    Tensor in = random_tensor(2, 3, 3, 3, rng);
    for (auto& v : in.v) v = 5.0f * v + 3.0f;
    const Tensor out = norm.forward(in, nullptr);
    for (int c = 0; c < 2; ++c) {
        double m = 0, s = 0;
        for (std::size_t i = 0; i < out.spatial(); ++i) m += out.channel(c)[i];
        m /= static_cast<double>(out.spatial());
        for (std::size_t i = 0; i < out.spatial(); ++i) s += std::pow(out.channel(c)[i] - m, 2);
        EXPECT_NEAR(m, 10.0, 1e-4);
        EXPECT_NEAR(s / static_cast<double>(out.spatial()), 1.0, 1e-3);
    }
}

TEST(InstanceNormRelu, GradientsMatchFiniteDifferences) {
    Rng rng = make_rng(4);
    InstanceNormRelu norm("n", 3);
    norm.gamma().value = {1.2f, 0.7f, 1.0f};
    norm.beta().value = {0.1f, -0.2f, 0.3f};
    Tensor in = random_tensor(3, 2, 3, 3, rng);
    const Tensor r = random_tensor(3, 2, 3, 3, rng);
    NormCache cache;
    const Tensor out = norm.forward(in, &cache);
    norm.gamma().zero_grad();
    norm.beta().zero_grad();
    const Tensor gin = norm.backward(cache, out, r);
    auto loss = [&] { return dot(norm.forward(in, nullptr), r); };
    // ReLU kinks can fall inside the difference stencil for a few entries.
    EXPECT_LE(fd_mismatch(in.v, gin.v, loss, 1e-3f, 2e-2, 2e-3), 0.05);
    const auto gg = norm.gamma().grad;
    EXPECT_EQ(fd_mismatch(norm.gamma().value, gg, loss, 1e-3f, 2e-2, 2e-3), 0.0);
    const auto gb = norm.beta().grad;
    EXPECT_EQ(fd_mismatch(norm.beta().value, gb, loss, 1e-3f, 2e-2, 2e-3), 0.0);
}

TEST(ConvBlock, GradientsMatchFiniteDifferences) {
    Rng rng = make_rng(5);
    ConvBlock block("b", 2, 3);
    block.init_kaiming(rng);
    Tensor in = random_tensor(2, 2, 4, 4, rng);
    const Tensor r = random_tensor(3, 2, 4, 4, rng);
    BlockCache cache;
    block.forward(in, &cache);
    for (Param* p : block.params()) p->zero_grad();
    const Tensor gin = block.backward(cache, r, true);
    auto loss = [&] { return dot(block.forward(in, nullptr), r); };
    EXPECT_LE(fd_mismatch(in.v, gin.v, loss, 1e-3f, 3e-2, 3e-3), 0.05);
    EXPECT_EQ(ConvBlock::param_count(2, 3), [&] {
        std::size_t n = 0;
        for (Param* p : block.params()) n += p->value.size();
        return n;
    }());
}

TEST(MaxPool, ForwardAndBackward) {
    Tensor in(1, 2, 2, 4);
    for (std::size_t i = 0; i < in.v.size(); ++i) in.v[i] = static_cast<float>((i * 7) % 16);
    PoolCache cache;
    const Tensor out = maxpool2(in, &cache);
    ASSERT_EQ(out.d, 1);
    ASSERT_EQ(out.w, 2);
    // Left block holds x in {0,1}, right block x in {2,3}.
    for (int b = 0; b < 2; ++b) {
        float mx = -1;
        for (int z = 0; z < 2; ++z)
            for (int y = 0; y < 2; ++y)
                for (int x = 2 * b; x < 2 * b + 2; ++x) mx = std::max(mx, in.v[(z * 2 + y) * 4 + x]);
        EXPECT_EQ(out.v[b], mx);
    }
    Tensor g(1, 1, 1, 2);
    g.v = {1.0f, 2.0f};
    const Tensor gin = maxpool2_backward(in, cache, g);
    double total = 0;
    for (float v : gin.v) total += v;
    EXPECT_DOUBLE_EQ(total, 3.0);
    for (std::size_t i = 0; i < in.v.size(); ++i)
        if (gin.v[i] != 0.0f) EXPECT_EQ(in.v[i], out.v[(i % 4) / 2]);
}

TEST(Upsample, ConstantStaysConstantAndAdjoint) {
    Rng rng = make_rng(6);
    const Tensor c(2, 2, 3, 2, 1.5f);
    for (float v : upsample2(c).v) EXPECT_FLOAT_EQ(v, 1.5f);
    // <up(x), y> == <x, up^T(y)>
    const Tensor x = random_tensor(2, 2, 3, 2, rng);
    const Tensor y = random_tensor(2, 4, 6, 4, rng);
    const Tensor ux = upsample2(x);
    ASSERT_TRUE(ux.same_shape(y));
    const Tensor uty = upsample2_backward(y, 2, 3, 2);
    EXPECT_NEAR(dot(ux, y), dot(x, uty), 1e-4);
}

TEST(Upsample, HalfPixelMapping) {
    Tensor t(1, 1, 1, 2);
    t.v = {0.0f, 4.0f};
    const Tensor u = upsample2(t);
    ASSERT_EQ(u.w, 4);
    EXPECT_FLOAT_EQ(u.v[0], 0.0f);
    EXPECT_FLOAT_EQ(u.v[1], 1.0f);
    EXPECT_FLOAT_EQ(u.v[2], 3.0f);
    EXPECT_FLOAT_EQ(u.v[3], 4.0f);
}

TEST(Channels, ConcatSplitAndSoftmax) {
    Rng rng = make_rng(7);
    const Tensor a = random_tensor(2, 2, 2, 2, rng);
    const Tensor b = random_tensor(3, 2, 2, 2, rng);
    const Tensor ab = concat_channels(a, b);
    EXPECT_EQ(ab.c, 5);
    Tensor ga, gb;
    split_channels(ab, 2, ga, gb);
    EXPECT_EQ(ga, a);
    EXPECT_EQ(gb, b);
    const Tensor p = softmax_channels(ab);
    for (std::size_t v = 0; v < p.spatial(); ++v) {
        double s = 0;
        for (int c = 0; c < 5; ++c) s += p.channel(c)[v];
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Adam, FirstStepMovesByLearningRate) {
    Param p("w", 3);
    p.value = {1.0f, -2.0f, 0.5f};
    p.grad = {0.3f, -4.0f, 0.0f};
    AdamOptions o;
    o.lr = 0.01;
    o.weight_decay = 0.0;
    adam_step(p, o);
    EXPECT_EQ(p.step, 1);
    EXPECT_NEAR(p.value[0], 0.99f, 1e-6);
    EXPECT_NEAR(p.value[1], -1.99f, 1e-6);
    EXPECT_FLOAT_EQ(p.value[2], 0.5f);
}

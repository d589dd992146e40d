#ifndef UGSS_NN_HPP
#define UGSS_NN_HPP

#include <cstddef>
#include <string>
#include <vector>

#include "ugss/rng.hpp"

// Minimal CPU building blocks for a batch-size-1 3D U-Net. Every layer keeps
// its own parameters and gradient buffers; backward passes accumulate into
// the gradient buffers and return the input gradient.
namespace ugss::nn {

// Channel-major activation tensor (C, D, H, W).
struct Tensor {
    int c = 0;
    int d = 0;
    int h = 0;
    int w = 0;
    std::vector<float> v;

    Tensor() = default;
    Tensor(int c_, int d_, int h_, int w_, float fill = 0.0f)
        : c(c_), d(d_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * d_ * h_ * w_, fill) {}

    std::size_t spatial() const { return static_cast<std::size_t>(d) * h * w; }
    float* channel(int ch) { return v.data() + static_cast<std::size_t>(ch) * spatial(); }
    const float* channel(int ch) const { return v.data() + static_cast<std::size_t>(ch) * spatial(); }
    bool same_shape(const Tensor& o) const { return c == o.c && d == o.d && h == o.h && w == o.w; }
    bool operator==(const Tensor&) const = default;
};

struct Param {
    std::string name;
    std::vector<float> value;
    std::vector<float> grad;
    std::vector<float> adam_m;
    std::vector<float> adam_v;
    long step = 0;

    Param() = default;
    Param(std::string n, std::size_t size) : name(std::move(n)), value(size, 0.0f), grad(size, 0.0f) {}
    void zero_grad();
};

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;  // L2 term added to the gradient
};

// One Adam update of a single parameter; bumps the parameter's own step count.
void adam_step(Param& p, const AdamOptions& opt);

class Conv3d {
public:
    Conv3d() = default;
    Conv3d(std::string name, int cin, int cout, int kernel);

    void init_kaiming(Rng& rng);
    Tensor forward(const Tensor& in) const;
    // Accumulates parameter gradients; returns dL/d(in) when want_input_grad.
    Tensor backward(const Tensor& in, const Tensor& grad_out, bool want_input_grad);

    int in_channels() const { return cin_; }
    int out_channels() const { return cout_; }
    int kernel() const { return k_; }
    Param& weight() { return weight_; }
    Param& bias() { return bias_; }
    const Param& weight() const { return weight_; }
    const Param& bias() const { return bias_; }

private:
    int cin_ = 0;
    int cout_ = 0;
    int k_ = 3;
    Param weight_;
    Param bias_;
};

struct NormCache {
    Tensor xhat;
    std::vector<float> inv_std;
};

// Instance normalization with affine parameters, fused with ReLU.
class InstanceNormRelu {
public:
    InstanceNormRelu() = default;
    InstanceNormRelu(std::string name, int channels);

    Tensor forward(const Tensor& in, NormCache* cache) const;
    Tensor backward(const NormCache& cache, const Tensor& out, const Tensor& grad_out);

    Param& gamma() { return gamma_; }
    Param& beta() { return beta_; }
    const Param& gamma() const { return gamma_; }
    const Param& beta() const { return beta_; }

    static constexpr float kEps = 1e-5f;

private:
    Param gamma_;
    Param beta_;
};

struct BlockCache {
    Tensor in;
    NormCache norm1;
    Tensor act1;
    NormCache norm2;
    Tensor out;
};

// conv3 -> norm -> relu -> conv3 -> norm -> relu
class ConvBlock {
public:
    ConvBlock() = default;
    ConvBlock(const std::string& name, int cin, int cout);

    void init_kaiming(Rng& rng);
    Tensor forward(const Tensor& in, BlockCache* cache) const;
    Tensor backward(BlockCache& cache, const Tensor& grad_out, bool want_input_grad);

    std::vector<Param*> params();
    std::vector<const Param*> params() const;

    static std::size_t param_count(int cin, int cout);

private:
    Conv3d conv1_;
    InstanceNormRelu norm1_;
    Conv3d conv2_;
    InstanceNormRelu norm2_;
};

struct PoolCache {
    std::vector<unsigned> argmax;
};

Tensor maxpool2(const Tensor& in, PoolCache* cache);
Tensor maxpool2_backward(const Tensor& in_shape, const PoolCache& cache, const Tensor& grad_out);

// Trilinear x2 upsampling with half-pixel (align_corners = false) mapping.
Tensor upsample2(const Tensor& in);
Tensor upsample2_backward(const Tensor& grad_out, int d, int h, int w);

Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& g, int ca, Tensor& ga, Tensor& gb);

// Softmax over channels at each voxel.
Tensor softmax_channels(const Tensor& logits);

}  // namespace ugss::nn

#endif  // UGSS_NN_HPP

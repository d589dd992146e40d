#ifndef UGSS_KH_MODEL_HPP
#define UGSS_KH_MODEL_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ugss/core_data.hpp"
#include "ugss/nn.hpp"

namespace ugss {

struct ModelConfig {
    int heads = 5;          // K
    int levels = 3;         // number of 2x downsamplings
    int base_channels = 16;
    int num_classes = kNumClasses;
    int head_depth = 1;     // trailing decoder blocks replicated per head
    int in_channels = 1;

    void validate() const;
    int channels_at(int level) const { return base_channels << level; }
    int divisor() const { return 1 << levels; }
    bool operator==(const ModelConfig&) const = default;
};

// Per-head logits and softmax probabilities, each (C, z, y, x).
struct KHeadOutput {
    std::vector<nn::Tensor> logits;
    std::vector<nn::Tensor> probs;

    int heads() const { return static_cast<int>(probs.size()); }
};

// Shared 3D U-Net trunk with K replicated output branches. The branch point
// sits `head_depth` decoder blocks before the classifier; with K = 1 the
// network is a plain 3D U-Net.
class KHeadModel {
public:
    KHeadModel() = default;

    static KHeadModel build(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }

    // Inference: every head in one pass over the shared trunk.
    KHeadOutput forward(const nn::Tensor& input) const;
    KHeadOutput forward(const Volume& patch) const;

    struct TrainCache;
    // Training path for one head; keeps what backward_head needs.
    nn::Tensor forward_head(const nn::Tensor& input, int head, TrainCache& cache) const;
    // Accumulates gradients into the trunk and the cached head only.
    void backward_head(TrainCache& cache, const nn::Tensor& grad_logits);

    std::vector<nn::Param*> trunk_params();
    std::vector<nn::Param*> head_params(int head);
    std::vector<const nn::Param*> trunk_params() const;
    std::vector<const nn::Param*> head_params(int head) const;
    std::vector<const nn::Param*> all_params() const;
    std::vector<nn::Param*> all_params();

    std::size_t parameter_count() const;
    std::size_t trunk_parameter_count() const;
    std::size_t head_parameter_count() const;

    void zero_grad();
    // Copies head `from`'s parameters into head `to`.
    void copy_head(int from, int to);

    struct TrainCache {
        int head = 0;
        std::vector<nn::BlockCache> enc;
        std::vector<nn::PoolCache> pool;
        std::vector<nn::Tensor> pooled;    // pool input shapes, per level
        nn::BlockCache bottleneck;
        std::vector<nn::BlockCache> dec;   // trunk decoder, indexed by level
        std::vector<nn::BlockCache> hdec;  // head decoder, indexed by level
        nn::Tensor cls_in;
    };

private:
    nn::Tensor run_trunk(const nn::Tensor& input, std::vector<nn::Tensor>& skips, TrainCache* cache) const;
    nn::Tensor run_head(int head, const nn::Tensor& branch, const std::vector<nn::Tensor>& skips,
                        TrainCache* cache) const;
    void check_input(const nn::Tensor& input) const;

    ModelConfig config_;
    std::vector<nn::ConvBlock> enc_;
    nn::ConvBlock bottleneck_;
    std::vector<nn::ConvBlock> dec_;                  // levels [head_depth, levels)
    std::vector<std::vector<nn::ConvBlock>> hdec_;    // [head][level], levels [0, head_depth)
    std::vector<nn::Conv3d> cls_;
};

// Closed-form parameter count for a configuration.
std::size_t expected_parameter_count(const ModelConfig& config);

nn::Tensor volume_to_tensor(const FloatGrid& grid);

// Arithmetic mean of the per-head softmax maps.
nn::Tensor mean_prediction(const KHeadOutput& out);

// u = -sum_c p_c ln p_c with 0 ln 0 = 0.
FloatGrid entropy_map(const nn::Tensor& mean_probs);

ClassMap argmax_classes(const nn::Tensor& probs);

struct Checkpoint {
    KHeadModel model;
    long step = 0;
    std::string note;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& file, const KHeadModel& model, long step, const std::string& note = {});
Checkpoint load_checkpoint(const std::filesystem::path& file);

}  // namespace ugss

#endif  // UGSS_KH_MODEL_HPP

#include "ugss/kh_model.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"
#include "ugss/container.hpp"
#include "ugss/losses.hpp"
#include "ugss/rng.hpp"

namespace ugss {

using nn::Tensor;

void ModelConfig::validate() const {
    if (heads < 1) throw ValidationError("model.heads", "K must be >= 1");
    if (levels < 1 || levels > 6) throw ValidationError("model.levels", "levels must be in [1, 6]");
    if (base_channels < 1) throw ValidationError("model.base_channels", "must be >= 1");
    if (num_classes != kNumClasses) throw ValidationError("model.num_classes", "must be " + std::to_string(kNumClasses));
    if (head_depth < 0 || head_depth > levels) throw ValidationError("model.head_depth", "must be in [0, levels]");
    if (in_channels < 1) throw ValidationError("model.in_channels", "must be >= 1");
}

std::size_t expected_parameter_count(const ModelConfig& c) {
    std::size_t trunk = 0;
    for (int l = 0; l < c.levels; ++l) {
        const int cin = l == 0 ? c.in_channels : c.channels_at(l - 1);
        trunk += nn::ConvBlock::param_count(cin, c.channels_at(l));
    }
    trunk += nn::ConvBlock::param_count(c.channels_at(c.levels - 1), c.channels_at(c.levels));
    std::size_t head = 0;
    for (int l = 0; l < c.levels; ++l) {
        const std::size_t block = nn::ConvBlock::param_count(c.channels_at(l + 1) + c.channels_at(l), c.channels_at(l));
        (l < c.head_depth ? head : trunk) += block;
    }
    head += static_cast<std::size_t>(c.channels_at(0)) * c.num_classes + c.num_classes;
    return trunk + static_cast<std::size_t>(c.heads) * head;
}

KHeadModel KHeadModel::build(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    KHeadModel m;
    m.config_ = config;
    const int L = config.levels;

    Rng trunk_rng = make_rng(seed, {stream::kInit});
    for (int l = 0; l < L; ++l) {
        const int cin = l == 0 ? config.in_channels : config.channels_at(l - 1);
        m.enc_.emplace_back("enc" + std::to_string(l), cin, config.channels_at(l));
        m.enc_.back().init_kaiming(trunk_rng);
    }
    m.bottleneck_ = nn::ConvBlock("bottleneck", config.channels_at(L - 1), config.channels_at(L));
    m.bottleneck_.init_kaiming(trunk_rng);
    m.dec_.resize(static_cast<std::size_t>(L));
    for (int l = L - 1; l >= config.head_depth; --l) {
        m.dec_[l] = nn::ConvBlock("dec" + std::to_string(l), config.channels_at(l + 1) + config.channels_at(l),
                                  config.channels_at(l));
        m.dec_[l].init_kaiming(trunk_rng);
    }

    for (int k = 0; k < config.heads; ++k) {
        Rng head_rng = make_rng(seed, {stream::kHeadInit, static_cast<std::uint64_t>(k)});
        const std::string prefix = "head" + std::to_string(k) + ".";
        std::vector<nn::ConvBlock> blocks(static_cast<std::size_t>(config.head_depth));
        for (int l = config.head_depth - 1; l >= 0; --l) {
            blocks[l] = nn::ConvBlock(prefix + "dec" + std::to_string(l),
                                      config.channels_at(l + 1) + config.channels_at(l), config.channels_at(l));
            blocks[l].init_kaiming(head_rng);
        }
        m.hdec_.push_back(std::move(blocks));
        m.cls_.emplace_back(prefix + "cls", config.channels_at(0), config.num_classes, 1);
        m.cls_.back().init_kaiming(head_rng);
    }
    return m;
}

void KHeadModel::check_input(const Tensor& input) const {
    const int div = config_.divisor();
    if (input.c != config_.in_channels) throw ShapeError("model input must have " + std::to_string(config_.in_channels) + " channel(s)");
    if (input.d % div || input.h % div || input.w % div) {
        throw ShapeError("patch dims " + std::to_string(input.d) + "x" + std::to_string(input.h) + "x" +
                         std::to_string(input.w) + " not divisible by " + std::to_string(div));
    }
}

Tensor KHeadModel::run_trunk(const Tensor& input, std::vector<Tensor>& skips, TrainCache* cache) const {
    const int L = config_.levels;
    skips.assign(static_cast<std::size_t>(L), Tensor{});
    if (cache) {
        cache->enc.assign(static_cast<std::size_t>(L), {});
        cache->pool.assign(static_cast<std::size_t>(L), {});
        cache->pooled.assign(static_cast<std::size_t>(L), {});
        cache->dec.assign(static_cast<std::size_t>(L), {});
    }
    Tensor x = input;
    for (int l = 0; l < L; ++l) {
        skips[l] = enc_[l].forward(x, cache ? &cache->enc[l] : nullptr);
        x = nn::maxpool2(skips[l], cache ? &cache->pool[l] : nullptr);
        if (cache) {
            cache->pooled[l].c = skips[l].c;
            cache->pooled[l].d = skips[l].d;
            cache->pooled[l].h = skips[l].h;
            cache->pooled[l].w = skips[l].w;
        }
    }
    x = bottleneck_.forward(x, cache ? &cache->bottleneck : nullptr);
    for (int l = L - 1; l >= config_.head_depth; --l) {
        x = dec_[l].forward(nn::concat_channels(nn::upsample2(x), skips[l]), cache ? &cache->dec[l] : nullptr);
    }
    return x;
}

Tensor KHeadModel::run_head(int head, const Tensor& branch, const std::vector<Tensor>& skips, TrainCache* cache) const {
    Tensor y = branch;
    if (cache) cache->hdec.assign(static_cast<std::size_t>(config_.head_depth), {});
    for (int l = config_.head_depth - 1; l >= 0; --l) {
        y = hdec_[head][l].forward(nn::concat_channels(nn::upsample2(y), skips[l]), cache ? &cache->hdec[l] : nullptr);
    }
    if (cache) cache->cls_in = y;
    return cls_[head].forward(y);
}

KHeadOutput KHeadModel::forward(const Tensor& input) const {
    check_input(input);
    std::vector<Tensor> skips;
    const Tensor branch = run_trunk(input, skips, nullptr);
    KHeadOutput out;
    for (int k = 0; k < config_.heads; ++k) {
        out.logits.push_back(run_head(k, branch, skips, nullptr));
        out.probs.push_back(nn::softmax_channels(out.logits.back()));
    }
    return out;
}

KHeadOutput KHeadModel::forward(const Volume& patch) const { return forward(volume_to_tensor(patch.data)); }

Tensor KHeadModel::forward_head(const Tensor& input, int head, TrainCache& cache) const {
    check_input(input);
    if (head < 0 || head >= config_.heads) throw Error("head index out of range");
    cache.head = head;
    std::vector<Tensor> skips;
    const Tensor branch = run_trunk(input, skips, &cache);
    return run_head(head, branch, skips, &cache);
}

void KHeadModel::backward_head(TrainCache& cache, const Tensor& grad_logits) {
    const int L = config_.levels;
    const int k = cache.head;
    std::vector<Tensor> skip_grads(static_cast<std::size_t>(L));
    auto add_into = [](Tensor& acc, const Tensor& g) {
        if (acc.v.empty()) {
            acc = g;
            return;
        }
        for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += g.v[i];
    };

    Tensor g = cls_[k].backward(cache.cls_in, grad_logits, true);
    auto decoder_step = [&](nn::ConvBlock& block, nn::BlockCache& bc, int l) {
        Tensor gcat = block.backward(bc, g, true);
        Tensor gup, gskip;
        nn::split_channels(gcat, config_.channels_at(l + 1), gup, gskip);
        add_into(skip_grads[l], gskip);
        const Tensor& below = cache.pooled[l];
        g = nn::upsample2_backward(gup, below.d / 2, below.h / 2, below.w / 2);
    };
    for (int l = 0; l < config_.head_depth; ++l) decoder_step(hdec_[k][l], cache.hdec[l], l);
    for (int l = config_.head_depth; l < L; ++l) decoder_step(dec_[l], cache.dec[l], l);

    g = bottleneck_.backward(cache.bottleneck, g, true);
    for (int l = L - 1; l >= 0; --l) {
        Tensor genc = nn::maxpool2_backward(cache.pooled[l], cache.pool[l], g);
        add_into(genc, skip_grads[l]);
        g = enc_[l].backward(cache.enc[l], genc, l > 0);
    }
}

std::vector<nn::Param*> KHeadModel::trunk_params() {
    std::vector<nn::Param*> out;
    auto add = [&](nn::ConvBlock& b) {
        for (auto* p : b.params()) out.push_back(p);
    };
    for (auto& b : enc_) add(b);
    add(bottleneck_);
    for (int l = config_.levels - 1; l >= config_.head_depth; --l) add(dec_[l]);
    return out;
}

std::vector<nn::Param*> KHeadModel::head_params(int head) {
    std::vector<nn::Param*> out;
    for (int l = config_.head_depth - 1; l >= 0; --l)
        for (auto* p : hdec_[head][l].params()) out.push_back(p);
    out.push_back(&cls_[head].weight());
    out.push_back(&cls_[head].bias());
    return out;
}

std::vector<const nn::Param*> KHeadModel::trunk_params() const {
    auto v = const_cast<KHeadModel*>(this)->trunk_params();
    return {v.begin(), v.end()};
}

std::vector<const nn::Param*> KHeadModel::head_params(int head) const {
    auto v = const_cast<KHeadModel*>(this)->head_params(head);
    return {v.begin(), v.end()};
}

std::vector<nn::Param*> KHeadModel::all_params() {
    auto out = trunk_params();
    for (int k = 0; k < config_.heads; ++k) {
        auto h = head_params(k);
        out.insert(out.end(), h.begin(), h.end());
    }
    return out;
}

std::vector<const nn::Param*> KHeadModel::all_params() const {
    auto v = const_cast<KHeadModel*>(this)->all_params();
    return {v.begin(), v.end()};
}

std::size_t KHeadModel::trunk_parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : trunk_params()) n += p->value.size();
    return n;
}

std::size_t KHeadModel::head_parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : head_params(0)) n += p->value.size();
    return n;
}

std::size_t KHeadModel::parameter_count() const {
    return trunk_parameter_count() + static_cast<std::size_t>(config_.heads) * head_parameter_count();
}

void KHeadModel::zero_grad() {
    for (auto* p : all_params()) p->zero_grad();
}

void KHeadModel::copy_head(int from, int to) {
    auto src = head_params(from);
    auto dst = head_params(to);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
}

Tensor volume_to_tensor(const FloatGrid& grid) {
    Tensor t(1, grid.shape().z, grid.shape().y, grid.shape().x);
    std::copy(grid.values().begin(), grid.values().end(), t.v.begin());
    return t;
}

Tensor mean_prediction(const KHeadOutput& out) {
    if (out.probs.empty()) throw Error("mean_prediction: no heads");
    Tensor mean = out.probs.front();
    for (std::size_t k = 1; k < out.probs.size(); ++k)
        for (std::size_t i = 0; i < mean.v.size(); ++i) mean.v[i] += out.probs[k].v[i];
    const float inv = 1.0f / static_cast<float>(out.probs.size());
    for (auto& v : mean.v) v *= inv;
    return mean;
}

FloatGrid entropy_map(const Tensor& p) {
    FloatGrid u(Shape3{p.d, p.h, p.w});
    const std::size_t n = p.spatial();
    std::vector<double> col(static_cast<std::size_t>(p.c));
    for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < p.c; ++c) col[c] = p.v[c * n + i];
        u[i] = static_cast<float>(entropy<double>(col));
    }
    return u;
}

ClassMap argmax_classes(const Tensor& p) {
    ClassMap out(Shape3{p.d, p.h, p.w});
    const std::size_t n = p.spatial();
    for (std::size_t i = 0; i < n; ++i) {
        int best = 0;
        for (int c = 1; c < p.c; ++c) {
            if (p.v[c * n + i] > p.v[best * n + i]) best = c;
        }
        out[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

namespace {
constexpr char kMagic[8] = {'U', 'G', 'S', 'S', 'C', 'K', 'P', 'T'};

nlohmann::json config_json(const ModelConfig& c) {
    return {{"heads", c.heads},         {"levels", c.levels},         {"base_channels", c.base_channels},
            {"num_classes", c.num_classes}, {"head_depth", c.head_depth}, {"in_channels", c.in_channels}};
}
}  // namespace

void save_checkpoint(const std::filesystem::path& file, const KHeadModel& model, long step, const std::string& note) {
    std::vector<unsigned char> payload;
    nlohmann::json params = nlohmann::json::array();
    for (const auto* p : model.all_params()) {
        params.push_back({{"name", p->name}, {"size", p->value.size()}});
        const auto* b = reinterpret_cast<const unsigned char*>(p->value.data());
        payload.insert(payload.end(), b, b + p->value.size() * sizeof(float));
    }
    nlohmann::json header{{"config", config_json(model.config())},
                          {"step", step},
                          {"note", note},
                          {"params", params},
                          {"payload_sha256", sha256_hex(payload)}};
    const std::string hs = header.dump();
    std::vector<unsigned char> bytes(kMagic, kMagic + 8);
    auto put_u32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
    };
    put_u32(kCheckpointVersion);
    put_u32(static_cast<std::uint32_t>(hs.size()));
    bytes.insert(bytes.end(), hs.begin(), hs.end());
    bytes.insert(bytes.end(), payload.begin(), payload.end());
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    write_file_atomic(file, bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
    const auto bytes = read_file_bytes(file);
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw FormatError(file.string() + ": not a checkpoint");
    auto get_u32 = [&](std::size_t off) {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[off + i]) << (8 * i);
        return v;
    };
    const auto version = get_u32(8);
    if (version != kCheckpointVersion) throw FormatError(file.string() + ": unsupported checkpoint version " + std::to_string(version));
    const auto hlen = get_u32(12);
    if (16 + static_cast<std::size_t>(hlen) > bytes.size()) throw FormatError(file.string() + ": truncated header");
    const auto header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + hlen);
    const std::vector<unsigned char> payload(bytes.begin() + 16 + hlen, bytes.end());
    if (sha256_hex(payload) != header.at("payload_sha256").get<std::string>()) {
        throw ChecksumError(file.string() + ": checkpoint payload checksum mismatch");
    }
    const auto& cj = header.at("config");
    ModelConfig cfg;
    cfg.heads = cj.at("heads");
    cfg.levels = cj.at("levels");
    cfg.base_channels = cj.at("base_channels");
    cfg.num_classes = cj.at("num_classes");
    cfg.head_depth = cj.at("head_depth");
    cfg.in_channels = cj.at("in_channels");

    Checkpoint ck;
    ck.model = KHeadModel::build(cfg, 0);
    ck.step = header.at("step");
    ck.note = header.value("note", "");
    auto params = ck.model.all_params();
    const auto& listed = header.at("params");
    if (listed.size() != params.size()) throw FormatError(file.string() + ": parameter list does not match config");
    std::size_t off = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::size_t n = listed[i].at("size");
        if (n != params[i]->value.size() || listed[i].at("name") != params[i]->name) {
            throw FormatError(file.string() + ": parameter " + params[i]->name + " mismatch");
        }
        if (off + n * sizeof(float) > payload.size()) throw FormatError(file.string() + ": truncated payload");
        std::memcpy(params[i]->value.data(), payload.data() + off, n * sizeof(float));
        off += n * sizeof(float);
    }
    return ck;
}

}  // namespace ugss

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvrisk/core/layers.hpp"
#include "mvrisk/core/types.hpp"

namespace mvrisk::encoders {

enum class Provenance { Global, Local, Fused };

// C x Hg x Wg spatial feature map carried as a [C, Hg, Wg] autograd Var.
template <typename T>
struct FeatureGrid {
    ag::Var<T> values;
    Provenance provenance = Provenance::Fused;

    std::size_t channels() const { return values.dim(0); }
    std::size_t height() const { return values.dim(1); }
    std::size_t width() const { return values.dim(2); }

    // [C, Hg*Wg] view of the same values.
    ag::Var<T> as_matrix() const { return ag::reshape(values, {channels(), height() * width()}); }
    // One token per grid position: [Hg*Wg, C].
    ag::Var<T> as_tokens() const { return ag::transpose(as_matrix()); }
};

template <typename T>
FeatureGrid<T> grid_from_tokens(const ag::Var<T>& tokens, std::size_t h, std::size_t w, Provenance p) {
    return {ag::reshape(ag::transpose(tokens), {tokens.dim(1), h, w}), p};
}

struct GlobalEncoderConfig {
    std::size_t patch_size = 16;
    std::size_t token_dim = 64;
    std::size_t num_layers = 1;
    std::size_t num_heads = 4;
    std::size_t mlp_ratio = 2;
    // Seed of the deterministic frozen stand-in; recorded in checkpoints.
    std::uint64_t seed = 20240917;
    bool zero_bias = false;
};

struct LocalStageConfig {
    std::size_t out_channels = 32;
    std::size_t kernel = 3;
    std::size_t stride = 2;
    bool se = true;
    bool residual = true;
};

struct LocalEncoderConfig {
    std::vector<std::size_t> widths{32, 64, 128};
    std::size_t cardinality = 4;
    std::size_t se_reduction = 8;
    // Explicit per-stage layout; derived from `widths` when empty.
    std::vector<LocalStageConfig> stages;

    std::vector<LocalStageConfig> resolved_stages() const;
    std::size_t total_stride() const;
    std::size_t out_channels() const;
};

struct EncoderConfig {
    std::size_t height = 128;
    std::size_t width = 128;
    GlobalEncoderConfig global;
    LocalEncoderConfig local;
    bool view_specific_local = true;

    void validate() const;
};

// Squeeze-and-excitation weights: C -> C/r -> C.
template <typename T>
struct SeWeights {
    Linear<T> reduce;
    Linear<T> expand;

    SeWeights() = default;
    SeWeights(ParamStore<T>& store, const std::string& prefix, const std::string& group, std::size_t channels,
              std::size_t reduction, Rng& rng);
};

// x * sigmoid(W2 relu(W1 gap(x) + b1) + b2), scale applied per channel.
template <typename T>
FeatureGrid<T> se_gate(const FeatureGrid<T>& x, const SeWeights<T>& w);

// Per-channel gate values in (0,1) that se_gate would apply.
template <typename T>
ag::Var<T> se_scale(const FeatureGrid<T>& x, const SeWeights<T>& w);

// Frozen transformer stand-in: a fixed seeded linear patch embedding followed
// by pre-norm self-attention blocks. All tensors live in the frozen "global"
// group, so no gradient ever reaches them.
template <typename T>
class GlobalEncoder {
public:
    static constexpr const char* kGroup = "global";

    GlobalEncoder(const EncoderConfig& cfg, ParamStore<T>& store);

    // [3, H, W] view -> [token_dim, H/p, W/p].
    FeatureGrid<T> encode(const Tensor<T>& view) const;

    // Patch embeddings before the attention stack: [num_patches, token_dim].
    ag::Var<T> patch_embed(const Tensor<T>& view) const;

    std::size_t grid_height() const { return cfg_.height / cfg_.global.patch_size; }
    std::size_t grid_width() const { return cfg_.width / cfg_.global.patch_size; }

private:
    EncoderConfig cfg_;
    Linear<T> embed_;
    std::vector<TransformerBlock<T>> blocks_;
    LayerNorm<T> final_norm_;
};

template <typename T>
struct LocalStage {
    LocalStageConfig cfg;
    std::size_t groups = 1;
    ag::Var<T> down_w, down_b;
    ag::Var<T> group_w, group_b;
    SeWeights<T> se;
};

// SE-ResNeXt style convolutional encoder. Each stage: strided conv + ReLU,
// then (optionally) a grouped residual conv branch with SE gating.
template <typename T>
class LocalEncoder {
public:
    static constexpr const char* kGroup = "local";

    LocalEncoder(const EncoderConfig& cfg, ParamStore<T>& store, Rng& rng);

    FeatureGrid<T> encode(const Tensor<T>& view, ViewPosition view_position) const;

    const std::vector<LocalStage<T>>& stages(ViewPosition v) const;

    // Prefix under which the weights for this view are stored.
    std::string prefix(ViewPosition v) const;

private:
    EncoderConfig cfg_;
    std::vector<LocalStage<T>> cc_;
    std::vector<LocalStage<T>> mlo_;
};

}  // namespace mvrisk::encoders

#pragma once

#include <vector>

#include "mvrisk/encoders/encoders.hpp"

namespace mvrisk::fusion {

using encoders::FeatureGrid;
using encoders::Provenance;

struct GridSize {
    std::size_t height = 1;
    std::size_t width = 1;
    bool operator==(const GridSize&) const = default;
};

struct FusionConfig {
    std::size_t latent_dim = 32;
    GridSize grid{8, 8};
    std::size_t num_heads = 4;
    std::size_t ffn_mult = 2;
    GridSize pool{2, 2};
    std::size_t num_blocks = 1;

    void validate() const;
    std::size_t embedding_length() const { return 2 * latent_dim * pool.height * pool.width; }
};

// Per-axis weight matrix [n_out, n_in]: exact area averaging when shrinking,
// half-pixel-centred linear interpolation when enlarging.
template <typename T>
Tensor<T> resample_matrix(std::size_t n_in, std::size_t n_out);

// Adaptive average pooling bins: output i averages [floor(i*n/m), ceil((i+1)*n/m)).
template <typename T>
Tensor<T> adaptive_pool_matrix(std::size_t n_in, std::size_t n_out);

template <typename T>
FeatureGrid<T> resample_to_grid(const FeatureGrid<T>& f, GridSize target);

// 1x1 convolution: per-position linear map C_in -> C_out plus bias.
template <typename T>
struct Conv1x1 {
    ag::Var<T> weight;  // [out, in]
    ag::Var<T> bias;    // [out]

    Conv1x1() = default;
    Conv1x1(ParamStore<T>& store, const std::string& prefix, const std::string& group, std::size_t in,
            std::size_t out, Rng& rng);
};

template <typename T>
FeatureGrid<T> project_latent(const FeatureGrid<T>& f, const Conv1x1<T>& w);

// One pre-norm cross-attention sub-block followed by a residual GELU FFN.
template <typename T>
struct CrossAttentionBlock {
    LayerNorm<T> ln_query, ln_context, ln_ffn;
    MultiHeadAttention<T> attn;
    FeedForward<T> ffn;

    CrossAttentionBlock() = default;
    CrossAttentionBlock(ParamStore<T>& store, const std::string& prefix, const std::string& group, std::size_t dim,
                        std::size_t heads, std::size_t hidden, Rng& rng);
};

template <typename T>
struct CrossAttendResult {
    FeatureGrid<T> output;
    std::vector<Tensor<T>> attention;  // per head, [queries, context tokens]
};

// Query grid tokens attend over context grid tokens; both must be d x Gh x Gw.
template <typename T>
CrossAttendResult<T> cross_attend(const FeatureGrid<T>& queries, const FeatureGrid<T>& context,
                                  const CrossAttentionBlock<T>& block);

// Channel-concatenate (local_proj ; attended) and compress 2d -> d.
template <typename T>
FeatureGrid<T> bridge_mix(const FeatureGrid<T>& local_proj, const FeatureGrid<T>& attended,
                          const Conv1x1<T>& compress);

template <typename T>
struct BreastEmbedding {
    ag::Var<T> values;  // [2 * d * Ph * Pw]
    Laterality laterality = Laterality::Left;

    std::size_t size() const { return values.numel(); }
};

// Concatenate CC then MLO along channels, adaptive-average-pool to `pool`,
// flatten channel-major, then row, then column.
template <typename T>
BreastEmbedding<T> breast_embed(const FeatureGrid<T>& f_cc, const FeatureGrid<T>& f_mlo, GridSize pool,
                                Laterality side = Laterality::Left);

// Full per-view fusion: both encoder grids -> fused d x Gh x Gw map.
template <typename T>
class BridgeMixer {
public:
    static constexpr const char* kGroup = "fusion";

    BridgeMixer(const FusionConfig& cfg, std::size_t global_channels, std::size_t local_channels,
                ParamStore<T>& store, Rng& rng);

    FeatureGrid<T> forward(const FeatureGrid<T>& global, const FeatureGrid<T>& local) const;

    const FusionConfig& config() const { return cfg_; }

private:
    FusionConfig cfg_;
    Conv1x1<T> proj_global_;
    Conv1x1<T> proj_local_;
    Conv1x1<T> bottleneck_;
    encoders::SeWeights<T> bottleneck_se_;
    std::vector<CrossAttentionBlock<T>> blocks_;
    Conv1x1<T> compress_;
};

}  // namespace mvrisk::fusion

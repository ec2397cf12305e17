#include "mvrisk/fusion/fusion.hpp"

#include <algorithm>
#include <cmath>

namespace mvrisk::fusion {

void FusionConfig::validate() const {
    if (latent_dim == 0 || num_heads == 0 || latent_dim % num_heads != 0)
        throw ConfigError("fusion latent_dim must be divisible by num_heads");
    if (pool.height < 1 || pool.width < 1) throw ConfigError("fusion pool must be at least 1x1");
    if (grid.height < pool.height || grid.width < pool.width) throw ConfigError("fusion grid smaller than pool");
    if (ffn_mult < 1) throw ConfigError("fusion ffn_mult must be >= 1");
}

template <typename T>
Tensor<T> resample_matrix(std::size_t n_in, std::size_t n_out) {
    if (n_in == 0 || n_out == 0) throw InvalidParameter("resample dimensions must be positive");
    Tensor<T> m({n_out, n_in});
    if (n_out <= n_in) {
        const double s = static_cast<double>(n_in) / static_cast<double>(n_out);
        for (std::size_t i = 0; i < n_out; ++i) {
            const double a = static_cast<double>(i) * s, b = static_cast<double>(i + 1) * s;
            for (std::size_t j = static_cast<std::size_t>(std::floor(a)); j < n_in && static_cast<double>(j) < b; ++j) {
                const double overlap = std::min(b, static_cast<double>(j + 1)) - std::max(a, static_cast<double>(j));
                if (overlap > 0) m.at(i, j) = static_cast<T>(overlap / s);
            }
        }
    } else {
        const double s = static_cast<double>(n_in) / static_cast<double>(n_out);
        for (std::size_t i = 0; i < n_out; ++i) {
            const double src = std::clamp((static_cast<double>(i) + 0.5) * s - 0.5, 0.0, static_cast<double>(n_in - 1));
            const auto j0 = static_cast<std::size_t>(std::floor(src));
            const std::size_t j1 = std::min(j0 + 1, n_in - 1);
            const double t = src - static_cast<double>(j0);
            m.at(i, j0) += static_cast<T>(1.0 - t);
            m.at(i, j1) += static_cast<T>(t);
        }
    }
    return m;
}

template <typename T>
Tensor<T> adaptive_pool_matrix(std::size_t n_in, std::size_t n_out) {
    if (n_in == 0 || n_out == 0) throw InvalidParameter("pool dimensions must be positive");
    Tensor<T> m({n_out, n_in});
    for (std::size_t i = 0; i < n_out; ++i) {
        const std::size_t a = i * n_in / n_out;
        const std::size_t b = ((i + 1) * n_in + n_out - 1) / n_out;
        for (std::size_t j = a; j < b; ++j) m.at(i, j) = T{1} / static_cast<T>(b - a);
    }
    return m;
}

template <typename T>
FeatureGrid<T> resample_to_grid(const FeatureGrid<T>& f, GridSize target) {
    if (target.height == 0 || target.width == 0) throw InvalidParameter("resample target must be nonzero");
    if (f.height() == target.height && f.width() == target.width) return f;
    return {ag::separable_resample(f.values, resample_matrix<T>(f.height(), target.height),
                                   resample_matrix<T>(f.width(), target.width)),
            f.provenance};
}

template <typename T>
Conv1x1<T>::Conv1x1(ParamStore<T>& store, const std::string& prefix, const std::string& group, std::size_t in,
                    std::size_t out, Rng& rng) {
    weight = store.add(prefix + ".weight", group, init::uniform<T>({out, in}, 1.0 / std::sqrt(double(in)), rng));
    bias = store.add(prefix + ".bias", group, init::zeros<T>({out}));
}

template <typename T>
FeatureGrid<T> project_latent(const FeatureGrid<T>& f, const Conv1x1<T>& w) {
    if (w.weight.dim(1) != f.channels())
        throw ShapeMismatch("1x1 projection expects " + std::to_string(w.weight.dim(1)) + " channels, got " +
                            std::to_string(f.channels()));
    auto y = ag::add_col_vector(ag::matmul(w.weight, f.as_matrix()), w.bias);
    return {ag::reshape(y, {w.weight.dim(0), f.height(), f.width()}), f.provenance};
}

template <typename T>
CrossAttentionBlock<T>::CrossAttentionBlock(ParamStore<T>& store, const std::string& prefix, const std::string& group,
                                            std::size_t dim, std::size_t heads, std::size_t hidden, Rng& rng) {
    ln_query = LayerNorm<T>(store, prefix + ".ln_query", group, dim);
    ln_context = LayerNorm<T>(store, prefix + ".ln_context", group, dim);
    attn = MultiHeadAttention<T>(store, prefix + ".attn", group, dim, heads, rng);
    ln_ffn = LayerNorm<T>(store, prefix + ".ln_ffn", group, dim);
    ffn = FeedForward<T>(store, prefix + ".ffn", group, dim, hidden, rng);
}

template <typename T>
CrossAttendResult<T> cross_attend(const FeatureGrid<T>& queries, const FeatureGrid<T>& context,
                                  const CrossAttentionBlock<T>& block) {
    if (queries.values.shape() != context.values.shape())
        throw ShapeMismatch("cross_attend grids differ: " + shape_str(queries.values.shape()) + " vs " +
                            shape_str(context.values.shape()));
    const std::size_t d = queries.channels();
    if (block.ln_query.gamma.numel() != d) throw ShapeMismatch("cross_attend block dimension mismatch");
    auto q = queries.as_tokens();
    auto c = context.as_tokens();
    auto att = block.attn(block.ln_query(q), block.ln_context(c));
    auto h = ag::add(q, att.output);
    h = ag::add(h, block.ffn(block.ln_ffn(h)));
    return {encoders::grid_from_tokens(h, queries.height(), queries.width(), Provenance::Fused),
            std::move(att.weights)};
}

template <typename T>
FeatureGrid<T> bridge_mix(const FeatureGrid<T>& local_proj, const FeatureGrid<T>& attended,
                          const Conv1x1<T>& compress) {
    if (local_proj.values.shape() != attended.values.shape())
        throw ShapeMismatch("bridge_mix inputs differ: " + shape_str(local_proj.values.shape()) + " vs " +
                            shape_str(attended.values.shape()));
    if (compress.weight.dim(1) != 2 * local_proj.channels()) throw ShapeMismatch("bridge_mix compress shape");
    FeatureGrid<T> cat{ag::reshape(ag::concat<T>({local_proj.as_matrix(), attended.as_matrix()}, 0),
                                   {2 * local_proj.channels(), local_proj.height(), local_proj.width()}),
                       Provenance::Fused};
    auto out = project_latent(cat, compress);
    out.provenance = Provenance::Fused;
    return out;
}

template <typename T>
BreastEmbedding<T> breast_embed(const FeatureGrid<T>& f_cc, const FeatureGrid<T>& f_mlo, GridSize pool,
                                Laterality side) {
    if (f_cc.values.shape() != f_mlo.values.shape())
        throw ShapeMismatch("breast_embed view grids differ: " + shape_str(f_cc.values.shape()) + " vs " +
                            shape_str(f_mlo.values.shape()));
    const std::size_t c = f_cc.channels(), h = f_cc.height(), w = f_cc.width();
    auto cat = ag::reshape(ag::concat<T>({f_cc.as_matrix(), f_mlo.as_matrix()}, 0), {2 * c, h, w});
    auto pooled = ag::separable_resample(cat, adaptive_pool_matrix<T>(h, pool.height),
                                         adaptive_pool_matrix<T>(w, pool.width));
    return {ag::reshape(pooled, {2 * c * pool.height * pool.width}), side};
}

template <typename T>
BridgeMixer<T>::BridgeMixer(const FusionConfig& cfg, std::size_t global_channels, std::size_t local_channels,
                            ParamStore<T>& store, Rng& rng)
    : cfg_(cfg) {
    cfg_.validate();
    store.declare_group(kGroup, false);
    const std::size_t d = cfg_.latent_dim;
    proj_global_ = Conv1x1<T>(store, "fusion.proj_global", kGroup, global_channels, d, rng);
    proj_local_ = Conv1x1<T>(store, "fusion.proj_local", kGroup, local_channels, d, rng);
    bottleneck_ = Conv1x1<T>(store, "fusion.bottleneck", kGroup, local_channels, d, rng);
    bottleneck_se_ = encoders::SeWeights<T>(store, "fusion.bottleneck_se", kGroup, d, 4, rng);
    for (std::size_t i = 0; i < cfg_.num_blocks; ++i)
        blocks_.emplace_back(store, "fusion.cross" + std::to_string(i), kGroup, d, cfg_.num_heads, d * cfg_.ffn_mult,
                             rng);
    compress_ = Conv1x1<T>(store, "fusion.compress", kGroup, 2 * d, d, rng);
}

template <typename T>
FeatureGrid<T> BridgeMixer<T>::forward(const FeatureGrid<T>& global, const FeatureGrid<T>& local) const {
    auto g = project_latent(resample_to_grid(global, cfg_.grid), proj_global_);
    auto l_grid = resample_to_grid(local, cfg_.grid);
    auto q = project_latent(l_grid, proj_local_);
    for (const auto& b : blocks_) q = cross_attend(q, g, b).output;
    auto bottleneck = encoders::se_gate(project_latent(l_grid, bottleneck_), bottleneck_se_);
    return bridge_mix(bottleneck, q, compress_);
}

#define MVRISK_INSTANTIATE(T)                                                                                    \
    template Tensor<T> resample_matrix<T>(std::size_t, std::size_t);                                            \
    template Tensor<T> adaptive_pool_matrix<T>(std::size_t, std::size_t);                                       \
    template FeatureGrid<T> resample_to_grid<T>(const FeatureGrid<T>&, GridSize);                               \
    template struct Conv1x1<T>;                                                                                 \
    template FeatureGrid<T> project_latent<T>(const FeatureGrid<T>&, const Conv1x1<T>&);                        \
    template struct CrossAttentionBlock<T>;                                                                     \
    template CrossAttendResult<T> cross_attend<T>(const FeatureGrid<T>&, const FeatureGrid<T>&,                 \
                                                  const CrossAttentionBlock<T>&);                               \
    template FeatureGrid<T> bridge_mix<T>(const FeatureGrid<T>&, const FeatureGrid<T>&, const Conv1x1<T>&);     \
    template BreastEmbedding<T> breast_embed<T>(const FeatureGrid<T>&, const FeatureGrid<T>&, GridSize,         \
                                                Laterality);                                                    \
    template class BridgeMixer<T>;

MVRISK_INSTANTIATE(float)
MVRISK_INSTANTIATE(double)
#undef MVRISK_INSTANTIATE

}  // namespace mvrisk::fusion

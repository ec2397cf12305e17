#include "mvrisk/encoders/encoders.hpp"

#include <cmath>

namespace mvrisk::encoders {

std::vector<LocalStageConfig> LocalEncoderConfig::resolved_stages() const {
    if (!stages.empty()) return stages;
    std::vector<LocalStageConfig> out;
    for (auto w : widths) out.push_back({w, 3, 2, true, true});
    return out;
}

std::size_t LocalEncoderConfig::total_stride() const {
    std::size_t s = 1;
    for (const auto& st : resolved_stages()) s *= st.stride;
    return s;
}

std::size_t LocalEncoderConfig::out_channels() const {
    const auto st = resolved_stages();
    return st.empty() ? 3 : st.back().out_channels;
}

void EncoderConfig::validate() const {
    const auto& g = global;
    if (g.patch_size == 0 || height % g.patch_size != 0 || width % g.patch_size != 0)
        throw ConfigError("input resolution " + std::to_string(height) + "x" + std::to_string(width) +
                          " is not divisible by patch size " + std::to_string(g.patch_size));
    if (g.token_dim == 0 || g.num_heads == 0 || g.token_dim % g.num_heads != 0)
        throw ConfigError("global token_dim must be divisible by num_heads");
    if (local.se_reduction < 1) throw ConfigError("se_reduction must be >= 1");
    if (local.cardinality < 1) throw ConfigError("cardinality must be >= 1");
    const auto stages = local.resolved_stages();
    if (stages.empty()) throw ConfigError("local encoder needs at least one stage");
    std::size_t h = height, w = width;
    for (const auto& s : stages) {
        if (s.out_channels == 0 || s.kernel == 0 || s.stride == 0) throw ConfigError("local stage has a zero dimension");
        const std::size_t pad = s.kernel / 2;
        if (h + 2 * pad < s.kernel || w + 2 * pad < s.kernel) throw ConfigError("local stage kernel exceeds input");
        h = (h + 2 * pad - s.kernel) / s.stride + 1;
        w = (w + 2 * pad - s.kernel) / s.stride + 1;
    }
}

template <typename T>
SeWeights<T>::SeWeights(ParamStore<T>& store, const std::string& prefix, const std::string& group,
                        std::size_t channels, std::size_t reduction, Rng& rng) {
    const std::size_t hidden = std::max<std::size_t>(1, channels / std::max<std::size_t>(1, reduction));
    reduce = Linear<T>(store, prefix + ".reduce", group, channels, hidden, rng);
    expand = Linear<T>(store, prefix + ".expand", group, hidden, channels, rng);
}

template <typename T>
ag::Var<T> se_scale(const FeatureGrid<T>& x, const SeWeights<T>& w) {
    if (w.reduce.in_features() != x.channels() || w.expand.out_features() != x.channels() ||
        w.expand.in_features() != w.reduce.out_features())
        throw ShapeMismatch("se weights do not match " + std::to_string(x.channels()) + " channels");
    auto pooled = ag::reshape(ag::row_mean(x.as_matrix()), {1, x.channels()});
    auto hidden = ag::relu(w.reduce(pooled));
    return ag::reshape(ag::sigmoid(w.expand(hidden)), {x.channels()});
}

template <typename T>
FeatureGrid<T> se_gate(const FeatureGrid<T>& x, const SeWeights<T>& w) {
    auto s = se_scale(x, w);
    auto scaled = ag::mul_col_vector(x.as_matrix(), s);
    return {ag::reshape(scaled, x.values.shape()), x.provenance};
}

namespace {

template <typename T>
Tensor<T> patchify(const Tensor<T>& view, std::size_t p) {
    const std::size_t c = view.dim(0), h = view.dim(1), w = view.dim(2);
    const std::size_t gh = h / p, gw = w / p;
    Tensor<T> out({gh * gw, c * p * p});
    for (std::size_t py = 0; py < gh; ++py)
        for (std::size_t px = 0; px < gw; ++px) {
            T* row = out.data.data() + (py * gw + px) * c * p * p;
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t y = 0; y < p; ++y)
                    for (std::size_t x = 0; x < p; ++x) *row++ = view.at(ch, py * p + y, px * p + x);
        }
    return out;
}

}  // namespace

template <typename T>
GlobalEncoder<T>::GlobalEncoder(const EncoderConfig& cfg, ParamStore<T>& store) : cfg_(cfg) {
    cfg_.validate();
    store.declare_group(kGroup, true);
    const auto& g = cfg_.global;
    Rng rng(g.seed);
    embed_ = Linear<T>(store, "global.patch_embed", kGroup, 3 * g.patch_size * g.patch_size, g.token_dim, rng);
    if (!g.zero_bias) {
        ag::Var<T> b = embed_.bias;
        b.mutable_value() = init::uniform<T>({g.token_dim}, 0.1, rng);
    }
    for (std::size_t i = 0; i < g.num_layers; ++i)
        blocks_.emplace_back(store, "global.block" + std::to_string(i), kGroup, g.token_dim, g.num_heads,
                             g.token_dim * g.mlp_ratio, rng);
    final_norm_ = LayerNorm<T>(store, "global.norm", kGroup, g.token_dim);
}

template <typename T>
ag::Var<T> GlobalEncoder<T>::patch_embed(const Tensor<T>& view) const {
    if (view.rank() != 3 || view.dim(0) != 3 || view.dim(1) != cfg_.height || view.dim(2) != cfg_.width)
        throw ShapeMismatch("global encoder expects [3," + std::to_string(cfg_.height) + "," +
                            std::to_string(cfg_.width) + "], got " + shape_str(view.shape));
    return embed_(ag::constant(patchify(view, cfg_.global.patch_size)));
}

template <typename T>
FeatureGrid<T> GlobalEncoder<T>::encode(const Tensor<T>& view) const {
    auto x = patch_embed(view);
    for (const auto& b : blocks_) x = b(x);
    x = final_norm_(x);
    return grid_from_tokens(x, grid_height(), grid_width(), Provenance::Global);
}

template <typename T>
LocalEncoder<T>::LocalEncoder(const EncoderConfig& cfg, ParamStore<T>& store, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    store.declare_group(kGroup, false);
    auto build = [&](const std::string& prefix) {
        std::vector<LocalStage<T>> stages;
        std::size_t in = 3;
        std::size_t idx = 0;
        for (const auto& sc : cfg_.local.resolved_stages()) {
            LocalStage<T> st;
            st.cfg = sc;
            const std::string sp = prefix + ".stage" + std::to_string(idx++);
            const double fan_in = static_cast<double>(in * sc.kernel * sc.kernel);
            st.down_w = store.add(sp + ".down.weight", kGroup,
                                  init::normal<T>({sc.out_channels, in, sc.kernel, sc.kernel}, std::sqrt(2.0 / fan_in), rng));
            st.down_b = store.add(sp + ".down.bias", kGroup, init::zeros<T>({sc.out_channels}));
            if (sc.residual) {
                st.groups = sc.out_channels % cfg_.local.cardinality == 0 ? cfg_.local.cardinality : 1;
                const std::size_t cig = sc.out_channels / st.groups;
                const double gfan = static_cast<double>(cig * 9);
                st.group_w = store.add(sp + ".group.weight", kGroup,
                                       init::normal<T>({sc.out_channels, cig, 3, 3}, 0.5 * std::sqrt(2.0 / gfan), rng));
                st.group_b = store.add(sp + ".group.bias", kGroup, init::zeros<T>({sc.out_channels}));
            }
            if (sc.se) st.se = SeWeights<T>(store, sp + ".se", kGroup, sc.out_channels, cfg_.local.se_reduction, rng);
            stages.push_back(std::move(st));
            in = sc.out_channels;
        }
        return stages;
    };
    if (cfg_.view_specific_local) {
        cc_ = build("local.cc");
        mlo_ = build("local.mlo");
    } else {
        cc_ = build("local.shared");
        mlo_ = cc_;
    }
}

template <typename T>
std::string LocalEncoder<T>::prefix(ViewPosition v) const {
    if (!cfg_.view_specific_local) return "local.shared";
    return v == ViewPosition::CC ? "local.cc" : "local.mlo";
}

template <typename T>
const std::vector<LocalStage<T>>& LocalEncoder<T>::stages(ViewPosition v) const {
    switch (v) {
        case ViewPosition::CC:
            return cc_;
        case ViewPosition::MLO:
            return mlo_;
    }
    throw InvalidParameter("unknown view position");
}

template <typename T>
FeatureGrid<T> LocalEncoder<T>::encode(const Tensor<T>& view, ViewPosition view_position) const {
    if (view.rank() != 3 || view.dim(0) != 3) throw ShapeMismatch("local encoder expects a [3,H,W] view");
    ag::Var<T> x = ag::constant(view);
    for (const auto& st : stages(view_position)) {
        const std::size_t pad = st.cfg.kernel / 2;
        x = ag::relu(ag::conv2d(x, st.down_w, &st.down_b, st.cfg.stride, pad, 1));
        if (st.cfg.residual) {
            FeatureGrid<T> branch{ag::conv2d(x, st.group_w, &st.group_b, 1, 1, st.groups), Provenance::Local};
            if (st.cfg.se) branch = se_gate(branch, st.se);
            x = ag::relu(ag::add(x, branch.values));
        } else if (st.cfg.se) {
            x = se_gate(FeatureGrid<T>{x, Provenance::Local}, st.se).values;
        }
    }
    return {x, Provenance::Local};
}

#define MVRISK_INSTANTIATE(T)                                                                   \
    template struct SeWeights<T>;                                                              \
    template ag::Var<T> se_scale<T>(const FeatureGrid<T>&, const SeWeights<T>&);               \
    template FeatureGrid<T> se_gate<T>(const FeatureGrid<T>&, const SeWeights<T>&);            \
    template class GlobalEncoder<T>;                                                           \
    template class LocalEncoder<T>;

MVRISK_INSTANTIATE(float)
MVRISK_INSTANTIATE(double)
#undef MVRISK_INSTANTIATE

}  // namespace mvrisk::encoders

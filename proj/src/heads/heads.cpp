#include "mvrisk/heads/heads.hpp"

#include <cmath>

namespace mvrisk::heads {

template <typename T>
BreastClassifier<T>::BreastClassifier(std::size_t embed_dim, const BreastHeadConfig& cfg, ParamStore<T>& store,
                                      Rng& rng)
    : cfg_(cfg) {
    store.declare_group(kGroup, false);
    if (cfg.hidden == 0) {
        fc1_ = Linear<T>(store, "breast_head.fc", kGroup, embed_dim, 1, rng);
        return;
    }
    norm_ = LayerNorm<T>(store, "breast_head.norm", kGroup, embed_dim);
    fc1_ = Linear<T>(store, "breast_head.fc1", kGroup, embed_dim, cfg.hidden, rng);
    fc2_ = Linear<T>(store, "breast_head.fc2", kGroup, cfg.hidden, 1, rng);
}

template <typename T>
ag::Var<T> BreastClassifier<T>::logit(const ag::Var<T>& embedding, bool train, Rng* rng) const {
    if (embedding.numel() != embed_dim())
        throw ShapeMismatch("breast classifier expects an embedding of length " + std::to_string(embed_dim()) +
                            ", got " + std::to_string(embedding.numel()));
    auto x = ag::reshape(embedding, {1, embedding.numel()});
    if (cfg_.hidden == 0) return ag::reshape(fc1_(x), {1});
    auto h = ag::gelu(fc1_(norm_(x)));
    if (train && cfg_.dropout > 0.0) {
        if (!rng) throw InvalidParameter("train-mode dropout needs a random source");
        h = dropout(h, cfg_.dropout, *rng);
    }
    return ag::reshape(fc2_(h), {1});
}

template <typename T>
BreastScore breast_classify(const fusion::BreastEmbedding<T>& e, const BreastClassifier<T>& head, bool train,
                            Rng* rng) {
    const double z = static_cast<double>(head.logit(e.values, train, rng).item());
    return {z, ag::sigmoid_scalar(z), e.laterality};
}

MaxAggregate max_aggregate(double p_left, double p_right) {
    for (double p : {p_left, p_right})
        if (!(p > 0.0 && p < 1.0)) throw InvalidParameter("breast probability outside (0,1)");
    if (p_left == p_right) return {p_left, Laterality::Left, true};
    return p_left > p_right ? MaxAggregate{p_left, Laterality::Left, false}
                            : MaxAggregate{p_right, Laterality::Right, false};
}

void BilateralMixerConfig::validate() const {
    if (embed_dim == 0 || mixer_dim == 0) throw ConfigError("bilateral mixer dimensions must be positive");
    if (num_heads == 0 || mixer_dim % num_heads != 0) throw ConfigError("mixer_dim must be divisible by num_heads");
    if (num_layers < 1) throw ConfigError("bilateral mixer needs at least one layer");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
}

template <typename T>
AsymmetryScorer<T>::AsymmetryScorer(ParamStore<T>& store, const std::string& prefix, const std::string& group,
                                    std::size_t dim, std::size_t hidden, GateMode mode_, Rng& rng)
    : mode(mode_) {
    fc1 = Linear<T>(store, prefix + ".fc1", group, 3 * dim, hidden, rng);
    fc2 = Linear<T>(store, prefix + ".fc2", group, hidden, mode == GateMode::SharedScorer ? 1 : 2, rng);
}

template <typename T>
ag::Var<T> asymmetry_gate(const ag::Var<T>& e_left, const ag::Var<T>& e_right, const AsymmetryScorer<T>& scorer) {
    if (e_left.numel() != e_right.numel())
        throw ShapeMismatch("asymmetry gate embeddings differ in length: " + std::to_string(e_left.numel()) + " vs " +
                            std::to_string(e_right.numel()));
    if (scorer.fc1.in_features() != 3 * e_left.numel()) throw ShapeMismatch("asymmetry scorer input width");
    auto l = ag::reshape(e_left, {1, e_left.numel()});
    auto r = ag::reshape(e_right, {1, e_right.numel()});
    auto g = [&](const ag::Var<T>& x) { return scorer.fc2(ag::gelu(scorer.fc1(x))); };
    ag::Var<T> scores;
    if (scorer.mode == GateMode::SharedScorer) {
        auto d = ag::abs(ag::sub(l, r));
        auto s_left = g(ag::concat<T>({l, r, d}, 1));
        auto s_right = g(ag::concat<T>({r, l, ag::abs(ag::sub(r, l))}, 1));
        scores = ag::concat<T>({s_left, s_right}, 1);
    } else {
        scores = g(ag::concat<T>({l, r, ag::abs(ag::sub(l, r))}, 1));
    }
    return ag::reshape(ag::softmax_rows(scores), {2});
}

template <typename T>
BilateralMixer<T>::BilateralMixer(const BilateralMixerConfig& cfg, ParamStore<T>& store, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    store.declare_group(kGroup, false);
    const std::size_t m = cfg_.mixer_dim;
    input_proj_ = Linear<T>(store, "bilateral.input_proj", kGroup, cfg_.embed_dim, m, rng);
    cls_ = store.add("bilateral.cls", kGroup, init::normal<T>({1, m}, 0.02, rng));
    for (std::size_t i = 0; i < cfg_.num_layers; ++i)
        blocks_.emplace_back(store, "bilateral.block" + std::to_string(i), kGroup, m, cfg_.num_heads,
                             m * cfg_.ffn_mult, rng);
    scorer_ = AsymmetryScorer<T>(store, "bilateral.gate", kGroup, m, cfg_.gate_hidden, cfg_.gate_mode, rng);
    head_norm_ = LayerNorm<T>(store, "bilateral.head.norm", kGroup, 4 * m);
    head_fc1_ = Linear<T>(store, "bilateral.head.fc1", kGroup, 4 * m, cfg_.head_hidden, rng);
    head_fc2_ = Linear<T>(store, "bilateral.head.fc2", kGroup, cfg_.head_hidden, 1, rng);
}

template <typename T>
BilateralTrace<T> BilateralMixer<T>::forward(const ag::Var<T>& e_left, const ag::Var<T>& e_right, bool train,
                                             Rng* rng) const {
    if (e_left.numel() != cfg_.embed_dim || e_right.numel() != cfg_.embed_dim)
        throw ShapeMismatch("bilateral mixer expects embeddings of length " + std::to_string(cfg_.embed_dim));
    BilateralTrace<T> t;
    t.left_proj = input_proj_(ag::reshape(e_left, {1, cfg_.embed_dim}));
    t.right_proj = input_proj_(ag::reshape(e_right, {1, cfg_.embed_dim}));
    auto tokens = ag::concat<T>({cls_, t.left_proj, t.right_proj}, 0);
    for (const auto& b : blocks_) tokens = b(tokens);
    t.context = ag::slice(tokens, 0, 0, 1);
    t.alphas = asymmetry_gate(t.left_proj, t.right_proj, scorer_);
    t.gated = ag::add(ag::mul_scalar(t.left_proj, ag::element(t.alphas, 0)),
                      ag::mul_scalar(t.right_proj, ag::element(t.alphas, 1)));
    t.abs_diff = ag::abs(ag::sub(t.left_proj, t.right_proj));
    t.product = ag::mul(t.left_proj, t.right_proj);
    t.z = ag::concat<T>({t.context, t.gated, t.abs_diff, t.product}, 1);
    auto h = ag::gelu(head_fc1_(head_norm_(t.z)));
    if (train && cfg_.dropout > 0.0) {
        if (!rng) throw InvalidParameter("train-mode dropout needs a random source");
        h = dropout(h, cfg_.dropout, *rng);
    }
    t.logit = ag::reshape(head_fc2_(h), {1});
    return t;
}

#define MVRISK_INSTANTIATE(T)                                                                                   \
    template class BreastClassifier<T>;                                                                        \
    template BreastScore breast_classify<T>(const fusion::BreastEmbedding<T>&, const BreastClassifier<T>&,     \
                                            bool, Rng*);                                                       \
    template struct AsymmetryScorer<T>;                                                                        \
    template ag::Var<T> asymmetry_gate<T>(const ag::Var<T>&, const ag::Var<T>&, const AsymmetryScorer<T>&);    \
    template class BilateralMixer<T>;

MVRISK_INSTANTIATE(float)
MVRISK_INSTANTIATE(double)
#undef MVRISK_INSTANTIATE

}  // namespace mvrisk::heads

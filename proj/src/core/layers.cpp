#include "mvrisk/core/layers.hpp"

#include <cmath>

namespace mvrisk {

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& prefix, const std::string& group, std::size_t in,
                  std::size_t out, Rng& rng, double init_scale) {
    const double bound = init_scale / std::sqrt(static_cast<double>(in));
    weight = store.add(prefix + ".weight", group, init::uniform<T>({out, in}, bound, rng));
    bias = store.add(prefix + ".bias", group, init::zeros<T>({out}));
}

template <typename T>
ag::Var<T> Linear<T>::operator()(const ag::Var<T>& x) const {
    return ag::add_row_vector(ag::matmul(x, weight, false, true), bias);
}

template <typename T>
LayerNorm<T>::LayerNorm(ParamStore<T>& store, const std::string& prefix, const std::string& group,
                        std::size_t dim) {
    gamma = store.add(prefix + ".gamma", group, init::ones<T>({dim}));
    beta = store.add(prefix + ".beta", group, init::zeros<T>({dim}));
}

template <typename T>
ag::Var<T> LayerNorm<T>::operator()(const ag::Var<T>& x) const {
    return ag::layer_norm_rows(x, gamma, beta);
}

template <typename T>
AttentionResult<T> scaled_dot_product_attention(const ag::Var<T>& q, const ag::Var<T>& k, const ag::Var<T>& v,
                                                std::size_t heads) {
    const std::size_t d = q.dim(1);
    if (heads == 0 || d % heads != 0 || k.dim(1) != d || v.dim(1) % heads != 0 || k.dim(0) != v.dim(0))
        throw ShapeMismatch("attention dims: q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) + " v " +
                            shape_str(v.shape()) + " heads " + std::to_string(heads));
    const std::size_t dh = d / heads, dv = v.dim(1) / heads;
    const T inv = T{1} / std::sqrt(static_cast<T>(dh));
    AttentionResult<T> res;
    std::vector<ag::Var<T>> outs;
    for (std::size_t h = 0; h < heads; ++h) {
        auto qh = heads == 1 ? q : ag::slice(q, 1, h * dh, dh);
        auto kh = heads == 1 ? k : ag::slice(k, 1, h * dh, dh);
        auto vh = heads == 1 ? v : ag::slice(v, 1, h * dv, dv);
        auto w = ag::softmax_rows(ag::scale(ag::matmul(qh, kh, false, true), inv));
        res.weights.push_back(w.value());
        outs.push_back(ag::matmul(w, vh));
    }
    res.output = heads == 1 ? outs[0] : ag::concat(outs, 1);
    return res;
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(ParamStore<T>& store, const std::string& prefix, const std::string& group,
                                          std::size_t dim, std::size_t heads_, Rng& rng)
    : heads(heads_) {
    if (heads == 0 || dim % heads != 0)
        throw ConfigError(prefix + ": dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
    q = Linear<T>(store, prefix + ".q", group, dim, dim, rng);
    k = Linear<T>(store, prefix + ".k", group, dim, dim, rng);
    v = Linear<T>(store, prefix + ".v", group, dim, dim, rng);
    o = Linear<T>(store, prefix + ".o", group, dim, dim, rng);
}

template <typename T>
AttentionResult<T> MultiHeadAttention<T>::operator()(const ag::Var<T>& queries, const ag::Var<T>& context) const {
    auto res = scaled_dot_product_attention(q(queries), k(context), v(context), heads);
    res.output = o(res.output);
    return res;
}

template <typename T>
FeedForward<T>::FeedForward(ParamStore<T>& store, const std::string& prefix, const std::string& group,
                            std::size_t dim, std::size_t hidden, Rng& rng) {
    fc1 = Linear<T>(store, prefix + ".fc1", group, dim, hidden, rng);
    fc2 = Linear<T>(store, prefix + ".fc2", group, hidden, dim, rng);
}

template <typename T>
ag::Var<T> FeedForward<T>::operator()(const ag::Var<T>& x) const {
    return fc2(ag::gelu(fc1(x)));
}

template <typename T>
TransformerBlock<T>::TransformerBlock(ParamStore<T>& store, const std::string& prefix, const std::string& group,
                                      std::size_t dim, std::size_t heads, std::size_t hidden, Rng& rng) {
    ln1 = LayerNorm<T>(store, prefix + ".ln1", group, dim);
    attn = MultiHeadAttention<T>(store, prefix + ".attn", group, dim, heads, rng);
    ln2 = LayerNorm<T>(store, prefix + ".ln2", group, dim);
    ffn = FeedForward<T>(store, prefix + ".ffn", group, dim, hidden, rng);
}

template <typename T>
ag::Var<T> TransformerBlock<T>::operator()(const ag::Var<T>& x) const {
    auto n1 = ln1(x);
    auto h = ag::add(x, attn(n1, n1).output);
    return ag::add(h, ffn(ln2(h)));
}

template <typename T>
ag::Var<T> dropout(const ag::Var<T>& x, double rate, Rng& rng) {
    if (rate <= 0.0) return x;
    if (rate >= 1.0) throw InvalidParameter("dropout rate must be < 1");
    Tensor<T> mask(x.shape());
    std::bernoulli_distribution keep(1.0 - rate);
    const T s = static_cast<T>(1.0 / (1.0 - rate));
    for (auto& m : mask.data) m = keep(rng) ? s : T{0};
    return ag::mul(x, ag::constant(std::move(mask)));
}

#define MVRISK_INSTANTIATE(T)                                                                                        \
    template struct Linear<T>;                                                                                      \
    template struct LayerNorm<T>;                                                                                   \
    template struct MultiHeadAttention<T>;                                                                          \
    template struct FeedForward<T>;                                                                                 \
    template struct TransformerBlock<T>;                                                                            \
    template AttentionResult<T> scaled_dot_product_attention<T>(const ag::Var<T>&, const ag::Var<T>&,               \
                                                                const ag::Var<T>&, std::size_t);                    \
    template ag::Var<T> dropout<T>(const ag::Var<T>&, double, Rng&);

MVRISK_INSTANTIATE(float)
MVRISK_INSTANTIATE(double)
#undef MVRISK_INSTANTIATE

}  // namespace mvrisk

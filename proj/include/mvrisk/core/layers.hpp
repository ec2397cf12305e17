#pragma once

// Parameterized building blocks shared by the encoders, the fusion block and
// the heads. Every layer registers its tensors in a ParamStore under
// "<prefix>.<name>" and keeps Var handles to them.

#include <string>
#include <vector>

#include "mvrisk/core/params.hpp"

namespace mvrisk {

// y = x W^T + b for x[n, in]; W[out, in], b[out].
template <typename T>
struct Linear {
    ag::Var<T> weight;
    ag::Var<T> bias;

    Linear() = default;
    Linear(ParamStore<T>& store, const std::string& prefix, const std::string& group, std::size_t in,
           std::size_t out, Rng& rng, double init_scale = 1.0);

    std::size_t in_features() const { return weight.dim(1); }
    std::size_t out_features() const { return weight.dim(0); }

    ag::Var<T> operator()(const ag::Var<T>& x) const;
};

template <typename T>
struct LayerNorm {
    ag::Var<T> gamma;
    ag::Var<T> beta;

    LayerNorm() = default;
    LayerNorm(ParamStore<T>& store, const std::string& prefix, const std::string& group, std::size_t dim);

    ag::Var<T> operator()(const ag::Var<T>& x) const;
};

template <typename T>
struct AttentionResult {
    ag::Var<T> output;                 // [N, d_v]
    std::vector<Tensor<T>> weights;    // per head, [N, M]; rows sum to 1
};

// softmax(Q K^T / sqrt(d_head)) V computed independently for each head over
// column blocks of width d/heads.
template <typename T>
AttentionResult<T> scaled_dot_product_attention(const ag::Var<T>& q, const ag::Var<T>& k, const ag::Var<T>& v,
                                                std::size_t heads);

template <typename T>
struct MultiHeadAttention {
    Linear<T> q, k, v, o;
    std::size_t heads = 1;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore<T>& store, const std::string& prefix, const std::string& group, std::size_t dim,
                       std::size_t heads, Rng& rng);

    // queries[N, d] attend over context[M, d].
    AttentionResult<T> operator()(const ag::Var<T>& queries, const ag::Var<T>& context) const;
};

template <typename T>
struct FeedForward {
    Linear<T> fc1, fc2;

    FeedForward() = default;
    FeedForward(ParamStore<T>& store, const std::string& prefix, const std::string& group, std::size_t dim,
                std::size_t hidden, Rng& rng);

    ag::Var<T> operator()(const ag::Var<T>& x) const;
};

// Pre-norm encoder block: x + MHA(LN(x)), then + FFN(LN(x)). No positional terms.
template <typename T>
struct TransformerBlock {
    LayerNorm<T> ln1, ln2;
    MultiHeadAttention<T> attn;
    FeedForward<T> ffn;

    TransformerBlock() = default;
    TransformerBlock(ParamStore<T>& store, const std::string& prefix, const std::string& group, std::size_t dim,
                     std::size_t heads, std::size_t hidden, Rng& rng);

    ag::Var<T> operator()(const ag::Var<T>& x) const;
};

// Bernoulli(1-rate) mask scaled by 1/(1-rate); identity when rate == 0.
template <typename T>
ag::Var<T> dropout(const ag::Var<T>& x, double rate, Rng& rng);

}  // namespace mvrisk

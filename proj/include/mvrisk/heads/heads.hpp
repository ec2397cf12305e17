#pragma once

#include <vector>

#include "mvrisk/fusion/fusion.hpp"

namespace mvrisk::heads {

struct BreastScore {
    double logit = 0.0;
    double probability = 0.5;
    Laterality laterality = Laterality::Left;
};

struct BreastHeadConfig {
    std::size_t hidden = 64;  // 0 gives a plain linear probe

    double dropout = 0.1;
};

// LayerNorm -> Linear -> GELU -> Dropout (train only) -> Linear -> scalar logit,
// or a single Linear when hidden == 0.
template <typename T>
class BreastClassifier {
public:
    static constexpr const char* kGroup = "breast_head";

    BreastClassifier() = default;
    BreastClassifier(std::size_t embed_dim, const BreastHeadConfig& cfg, ParamStore<T>& store, Rng& rng);

    // [1] logit. `rng` is only consulted in train mode.
    ag::Var<T> logit(const ag::Var<T>& embedding, bool train, Rng* rng) const;

    std::size_t embed_dim() const { return fc1_.in_features(); }

private:
    BreastHeadConfig cfg_;
    LayerNorm<T> norm_;
    Linear<T> fc1_;
    Linear<T> fc2_;
};

template <typename T>
BreastScore breast_classify(const fusion::BreastEmbedding<T>& e, const BreastClassifier<T>& head, bool train,
                            Rng* rng = nullptr);

struct MaxAggregate {
    double probability = 0.0;
    Laterality side = Laterality::Left;
    bool tie = false;
};

// Patient risk as the larger breast probability; both must lie in (0,1).
MaxAggregate max_aggregate(double p_left, double p_right);

enum class GateMode {
    SharedScorer,  // one scorer applied to both orderings; swap-equivariant
    Literal        // one MLP on the ordered concatenation emitting two scores
};

struct BilateralMixerConfig {
    std::size_t embed_dim = 256;
    std::size_t mixer_dim = 64;
    std::size_t num_layers = 1;
    std::size_t num_heads = 2;
    std::size_t ffn_mult = 2;
    std::size_t gate_hidden = 32;
    std::size_t head_hidden = 64;
    double dropout = 0.1;
    GateMode gate_mode = GateMode::SharedScorer;

    void validate() const;
};

template <typename T>
struct AsymmetryScorer {
    GateMode mode = GateMode::SharedScorer;
    Linear<T> fc1;
    Linear<T> fc2;

    AsymmetryScorer() = default;
    AsymmetryScorer(ParamStore<T>& store, const std::string& prefix, const std::string& group, std::size_t dim,
                    std::size_t hidden, GateMode mode, Rng& rng);
};

// (alpha_left, alpha_right) as a [2] Var; positive and summing to one.
template <typename T>
ag::Var<T> asymmetry_gate(const ag::Var<T>& e_left, const ag::Var<T>& e_right, const AsymmetryScorer<T>& scorer);

// Every intermediate of one BilateralMixer pass, for inspection in tests.
template <typename T>
struct BilateralTrace {
    ag::Var<T> left_proj, right_proj;  // [1, m]
    ag::Var<T> context;                // CLS output c, [1, m]
    ag::Var<T> alphas;                 // [2]
    ag::Var<T> gated;                  // alpha_L * left + alpha_R * right
    ag::Var<T> abs_diff;               // |left - right|
    ag::Var<T> product;                // left * right
    ag::Var<T> z;                      // [1, 4m]
    ag::Var<T> logit;                  // [1]
};

// Patient-level head over the two breast embeddings: shared input projection,
// position-free self-attention over [CLS, left, right], asymmetry gate and the
// four-part symmetric composition feeding a shallow MLP.
template <typename T>
class BilateralMixer {
public:
    static constexpr const char* kGroup = "bilateral";

    BilateralMixer() = default;
    BilateralMixer(const BilateralMixerConfig& cfg, ParamStore<T>& store, Rng& rng);

    BilateralTrace<T> forward(const ag::Var<T>& e_left, const ag::Var<T>& e_right, bool train, Rng* rng) const;

    ag::Var<T> logit(const ag::Var<T>& e_left, const ag::Var<T>& e_right, bool train, Rng* rng) const {
        return forward(e_left, e_right, train, rng).logit;
    }

    const BilateralMixerConfig& config() const { return cfg_; }
    const ag::Var<T>& cls() const { return cls_; }
    const Linear<T>& input_projection() const { return input_proj_; }
    const std::vector<TransformerBlock<T>>& blocks() const { return blocks_; }
    const AsymmetryScorer<T>& scorer() const { return scorer_; }

private:
    BilateralMixerConfig cfg_;
    Linear<T> input_proj_;
    ag::Var<T> cls_;
    std::vector<TransformerBlock<T>> blocks_;
    AsymmetryScorer<T> scorer_;
    LayerNorm<T> head_norm_;
    Linear<T> head_fc1_;
    Linear<T> head_fc2_;
};

}  // namespace mvrisk::heads

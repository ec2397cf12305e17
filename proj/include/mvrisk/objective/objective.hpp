#pragma once

#include <set>
#include <span>
#include <string>
#include <vector>

#include "mvrisk/core/params.hpp"

namespace mvrisk::objective {

enum class Reduction { Mean, Sum };

struct FocalConfig {
    double alpha = 0.25;  // weight on positives; negatives get 1 - alpha
    double gamma = 2.0;
    Reduction reduction = Reduction::Mean;

    void validate() const;
};

// Per-example focal loss and its derivative with respect to the logit, written
// in terms of s = +z (positive) or -z (negative) through softplus so neither
// overflows for large |z|.
template <typename T>
T focal_loss_value(T logit, int label, const FocalConfig& cfg);
template <typename T>
T focal_loss_grad(T logit, int label, const FocalConfig& cfg);

// Reduced loss over logits [N] (or [1]) and matching 0/1 labels; [1] result.
template <typename T>
ag::Var<T> focal_loss(const ag::Var<T>& logits, const std::vector<int>& labels, const FocalConfig& cfg);

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    void validate() const;
};

template <typename T>
struct AdamState {
    std::vector<T> m;
    std::vector<T> v;
    std::size_t step = 0;
};

// One decoupled-decay Adam update on a flat buffer. `step` is 1-based.
template <typename T>
void adamw_update(std::span<T> params, std::span<const T> grads, AdamState<T>& state, std::size_t step,
                  const AdamWConfig& cfg);

// Optimizer over the parameters of selected groups of a store. Refuses frozen
// groups. A parameter that received no gradient is skipped entirely, and its
// bias-correction step count does not advance.
template <typename T>
class AdamW {
public:
    AdamW(ParamStore<T>& store, const std::set<std::string>& groups, const AdamWConfig& cfg);

    void step();
    std::size_t steps_taken() const { return step_; }
    const std::set<std::string>& groups() const { return groups_; }
    void set_lr(double lr) { cfg_.lr = lr; }

private:
    ParamStore<T>* store_;
    std::set<std::string> groups_;
    AdamWConfig cfg_;
    std::vector<std::size_t> indices_;
    std::vector<AdamState<T>> states_;
    std::size_t step_ = 0;
};

}  // namespace mvrisk::objective

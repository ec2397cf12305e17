#include "mvrisk/objective/objective.hpp"

#include <cmath>

namespace mvrisk::objective {

void FocalConfig::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("focal alpha must lie in (0,1)");
    if (!(gamma >= 0.0)) throw ConfigError("focal gamma must be >= 0");
}

namespace {

template <typename T>
T softplus(T x) {
    return std::max(x, T{0}) + std::log1p(std::exp(-std::abs(x)));
}

void check_label(int label) {
    if (label != 0 && label != 1) throw InvalidParameter("focal loss label must be 0 or 1");
}

}  // namespace

template <typename T>
T focal_loss_value(T logit, int label, const FocalConfig& cfg) {
    check_label(label);
    const T s = label == 1 ? logit : -logit;
    const T a = static_cast<T>(label == 1 ? cfg.alpha : 1.0 - cfg.alpha);
    const T log_q = -softplus(s);  // log(1 - p)
    const T mod = cfg.gamma == 0.0 ? T{1} : std::exp(static_cast<T>(cfg.gamma) * log_q);
    return a * mod * softplus(-s);
}

template <typename T>
T focal_loss_grad(T logit, int label, const FocalConfig& cfg) {
    check_label(label);
    const T s = label == 1 ? logit : -logit;
    const T a = static_cast<T>(label == 1 ? cfg.alpha : 1.0 - cfg.alpha);
    const T g = static_cast<T>(cfg.gamma);
    const T log_p = -softplus(-s);
    const T p = std::exp(log_p);
    const T q = ag::sigmoid_scalar(-s);
    const T mod = cfg.gamma == 0.0 ? T{1} : std::exp(g * -softplus(s));
    const T d_ds = a * mod * (g * p * log_p - q);
    return label == 1 ? d_ds : -d_ds;
}

template <typename T>
ag::Var<T> focal_loss(const ag::Var<T>& logits, const std::vector<int>& labels, const FocalConfig& cfg) {
    cfg.validate();
    if (logits.numel() != labels.size() || labels.empty())
        throw ShapeMismatch("focal loss: " + std::to_string(logits.numel()) + " logits vs " +
                            std::to_string(labels.size()) + " labels");
    const T norm = cfg.reduction == Reduction::Mean ? T{1} / static_cast<T>(labels.size()) : T{1};
    T total{0};
    std::vector<T> dz(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const T z = logits.value().data[i];
        total += focal_loss_value(z, labels[i], cfg);
        dz[i] = focal_loss_grad(z, labels[i], cfg) * norm;
    }
    return ag::detail::make_result<T>(Tensor<T>({1}, total * norm), {logits}, [dz](ag::Node<T>& self) {
        auto& gi = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[0] * dz[i];
    });
}

void AdamWConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam betas must lie in [0,1)");
    if (!(eps > 0.0)) throw ConfigError("adam eps must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
}

template <typename T>
void adamw_update(std::span<T> params, std::span<const T> grads, AdamState<T>& state, std::size_t step,
                  const AdamWConfig& cfg) {
    if (params.size() != grads.size()) throw ShapeMismatch("adamw: parameter and gradient sizes differ");
    if (step == 0) throw InvalidParameter("adamw step is 1-based");
    if (state.m.empty()) {
        state.m.assign(params.size(), T{0});
        state.v.assign(params.size(), T{0});
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const T g = grads[i];
        params[i] -= static_cast<T>(cfg.lr * cfg.weight_decay) * params[i];
        state.m[i] = b1 * state.m[i] + (T{1} - b1) * g;
        state.v[i] = b2 * state.v[i] + (T{1} - b2) * g * g;
        const double mhat = static_cast<double>(state.m[i]) / bc1;
        const double vhat = static_cast<double>(state.v[i]) / bc2;
        params[i] -= static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
}

template <typename T>
AdamW<T>::AdamW(ParamStore<T>& store, const std::set<std::string>& groups, const AdamWConfig& cfg)
    : store_(&store), groups_(groups), cfg_(cfg) {
    cfg_.validate();
    for (const auto& g : groups_)
        if (store.group_frozen(g)) throw FrozenViolation("optimizer cannot own frozen group '" + g + "'");
    const auto& entries = store.entries();
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (groups_.count(entries[i].group)) indices_.push_back(i);
    states_.resize(indices_.size());
}

template <typename T>
void AdamW<T>::step() {
    ++step_;
    const auto& entries = store_->entries();
    for (std::size_t k = 0; k < indices_.size(); ++k) {
        ag::Var<T> v = entries[indices_[k]].var;
        if (!v.has_grad()) continue;
        const std::vector<T> g = v.grad();
        adamw_update<T>(v.mutable_value().span(), std::span<const T>(g), states_[k], ++states_[k].step, cfg_);
    }
}

#define MVRISK_INSTANTIATE(T)                                                                                   \
    template T focal_loss_value<T>(T, int, const FocalConfig&);                                                \
    template T focal_loss_grad<T>(T, int, const FocalConfig&);                                                 \
    template ag::Var<T> focal_loss<T>(const ag::Var<T>&, const std::vector<int>&, const FocalConfig&);         \
    template void adamw_update<T>(std::span<T>, std::span<const T>, AdamState<T>&, std::size_t,                \
                                  const AdamWConfig&);                                                         \
    template class AdamW<T>;

MVRISK_INSTANTIATE(float)
MVRISK_INSTANTIATE(double)
#undef MVRISK_INSTANTIATE

}  // namespace mvrisk::objective

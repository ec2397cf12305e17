#include "mvrisk/trainer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "mvrisk/cohort/synthetic.hpp"
#include "mvrisk/evalreport/metrics.hpp"

namespace mvrisk::trainer {

void TrainConfig::validate() const {
    if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
    if (epochs_max < 1) throw ConfigError("epochs_max must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (early_stop.metric != "breast_auc" && early_stop.metric != "patient_auc")
        throw ConfigError("early_stop.metric must be breast_auc or patient_auc");
    if (!(early_stop.min_delta >= 0.0)) throw ConfigError("early_stop.min_delta must be >= 0");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must lie in (0,1)");
    focal.validate();
    objective::AdamWConfig{lr, 0.9, 0.999, 1e-8, weight_decay}.validate();
}

std::vector<double> MetricHistory::series(const std::string& split, const std::string& metric) const {
    std::vector<double> out;
    for (const auto& r : rows)
        if (r.split == split && r.metric == metric) out.push_back(r.value);
    return out;
}

void MetricHistory::write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot write metric history " + path.string());
    os << "epoch,split,metric,value\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.17g", r.value);
        os << r.epoch << ',' << r.split << ',' << r.metric << ',' << buf << '\n';
    }
}

EarlyStopDecision early_stop_monitor(std::span<const double> history, std::size_t patience, double min_delta) {
    if (history.empty()) throw InvalidParameter("early stopping needs a nonempty history");
    EarlyStopDecision d;
    double best = history[0];
    std::size_t misses = 0;
    for (std::size_t i = 1; i < history.size(); ++i) {
        const double v = history[i];
        if (!std::isnan(v) && (std::isnan(best) || v > best + min_delta)) {
            best = v;
            d.best_epoch = i + 1;
            misses = 0;
        } else {
            ++misses;
        }
    }
    d.stop = misses > 0 && misses >= patience;
    return d;
}

std::pair<std::vector<cohort::PatientSample>, std::vector<cohort::PatientSample>> split_validation(
    const std::vector<cohort::PatientSample>& samples, double fraction, std::uint64_t seed) {
    std::vector<std::string> ids;
    for (const auto& s : samples) ids.push_back(s.episode.patient_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    Rng rng = make_rng(seed, {0x7a1});
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(ids.size())));
    std::set<std::string> val_ids(ids.begin(), ids.begin() + static_cast<long>(std::min(n_val, ids.size())));
    std::pair<std::vector<cohort::PatientSample>, std::vector<cohort::PatientSample>> out;
    for (const auto& s : samples) (val_ids.count(s.episode.patient_id) ? out.second : out.first).push_back(s);
    return out;
}

namespace {

template <typename T>
void write_ckpt(const ParamStore<T>& store, const std::filesystem::path& path, nlohmann::json meta) {
    if (path.empty()) return;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    encoders::write_checkpoint(encoders::make_checkpoint(store, std::move(meta)), path);
}

template <typename T>
std::set<std::string> frozen_groups(const ParamStore<T>& store) {
    std::set<std::string> out;
    for (const auto& [g, frozen] : store.groups())
        if (frozen) out.insert(g);
    return out;
}

double safe_auc(std::span<const double> scores, std::span<const int> labels) {
    try {
        return evalreport::auc(scores, labels);
    } catch (const NotEvaluable&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

template <typename T>
ag::Var<T> stack_logits(const std::vector<ag::Var<T>>& logits) {
    std::vector<ag::Var<T>> rows;
    rows.reserve(logits.size());
    for (const auto& l : logits) rows.push_back(ag::reshape(l, {1, 1}));
    return ag::reshape(ag::concat<T>(rows, 1), {logits.size()});
}

}  // namespace

template <typename T>
TrainResult fit(ParamStore<T>& store, const FitSpec<T>& spec, const TrainConfig& cfg, const nlohmann::json& meta) {
    cfg.validate();
    if (spec.n_items == 0) throw InvalidParameter("no training items");
    store.set_trainable(spec.groups);
    const auto frozen = frozen_groups(store);
    const std::uint64_t frozen_hash = store.hash(frozen);
    objective::AdamW<T> opt(store, spec.groups, {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});

    TrainResult r;
    std::vector<double> monitored;
    auto best = store.snapshot();
    for (std::size_t epoch = 1; epoch <= cfg.epochs_max; ++epoch) {
        std::vector<std::size_t> order(spec.n_items);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng = make_rng(cfg.seed, {epoch, 0x5eed});
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::vector<std::size_t> batch(order.begin() + static_cast<long>(start),
                                                 order.begin() + static_cast<long>(std::min(start + cfg.batch_size, order.size())));
            store.zero_grad();
            auto loss = spec.batch_loss(batch, epoch);
            const double lv = static_cast<double>(loss.item());
            if (!std::isfinite(lv))
                throw Divergence("non-finite training loss at epoch " + std::to_string(epoch) + ", batch starting " +
                                 std::to_string(start));
            loss.backward();
            for (const auto& e : store.entries())
                if (frozen.count(e.group) && e.var.has_grad())
                    throw FrozenViolation("gradient reached frozen parameter " + e.path);
            opt.step();
            loss_sum += lv * static_cast<double>(batch.size());
        }
        r.history.rows.push_back({epoch, "train", "loss", loss_sum / static_cast<double>(spec.n_items)});
        double monitor_value = std::numeric_limits<double>::quiet_NaN();
        bool found = false;
        for (const auto& [name, value] : spec.validate(epoch)) {
            r.history.rows.push_back({epoch, "val", name, value});
            if (name == spec.monitor) {
                monitor_value = value;
                found = true;
            }
        }
        if (!found) throw ConfigError("validation does not report monitored metric '" + spec.monitor + "'");
        monitored.push_back(monitor_value);
        const auto d = early_stop_monitor(monitored, cfg.early_stop.patience, cfg.early_stop.min_delta);
        if (d.best_epoch == epoch) best = store.snapshot();
        r.epochs_run = epoch;
        r.best_epoch = d.best_epoch;
        r.best_metric = monitored[d.best_epoch - 1];
        if (d.stop) {
            r.stopped_early = true;
            break;
        }
    }
    auto m = meta.is_null() ? nlohmann::json::object() : meta;
    m["stage"] = cfg.stage;
    m["epochs_run"] = r.epochs_run;
    m["checkpoint"] = "last";
    write_ckpt(store, cfg.checkpoint_last, m);
    store.restore(best);
    m["checkpoint"] = "best";
    m["best_epoch"] = r.best_epoch;
    write_ckpt(store, cfg.checkpoint_best, m);
    if (store.hash(frozen) != frozen_hash) throw FrozenViolation("frozen parameters changed during training");
    return r;
}

namespace {

template <typename T>
std::set<std::string> stage1_groups() {
    return {"local", "fusion", "breast_head"};
}

template <typename T>
std::vector<std::array<double, 2>> logits_from_inputs(const BreastModel<T>& model,
                                                      const std::vector<std::array<BreastInput<T>, 2>>& inputs) {
    std::vector<std::array<double, 2>> out(inputs.size());
    const long n = static_cast<long>(inputs.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) {
        ag::NoGradGuard guard;
        for (int side = 0; side < 2; ++side) {
            auto e = model.breast_embedding(inputs[static_cast<std::size_t>(i)][side]);
            out[static_cast<std::size_t>(i)][side] = static_cast<double>(model.breast_logit(e, false, nullptr).item());
        }
    }
    return out;
}

template <typename T>
std::array<BreastInput<T>, 2> eval_inputs(const cohort::PatientSample& s, const ModelConfig& cfg) {
    Rng unused(0);
    return {prepare_breast<T>(s, Laterality::Left, cfg, false, unused),
            prepare_breast<T>(s, Laterality::Right, cfg, false, unused)};
}

template <typename T>
std::array<Tensor<T>, 2> eval_embedding(const BreastModel<T>& model, const cohort::PatientSample& s) {
    ag::NoGradGuard guard;
    const auto in = eval_inputs<T>(s, model.config());
    return {model.breast_embedding(in[0]).value(), model.breast_embedding(in[1]).value()};
}

}  // namespace

template <typename T>
TrainResult train_stage1(BreastModel<T>& model, const std::vector<cohort::PatientSample>& train,
                         const std::vector<cohort::PatientSample>& val, const TrainConfig& cfg,
                         const nlohmann::json& meta) {
    if (cfg.stage != 1) throw ConfigError("train_stage1 called with stage " + std::to_string(cfg.stage));
    std::vector<std::pair<std::size_t, int>> items;
    for (std::size_t i = 0; i < train.size(); ++i)
        for (int side = 0; side < 2; ++side)
            if (train[i].breast_labels[side] >= 0) items.emplace_back(i, side);

    std::vector<std::array<BreastInput<T>, 2>> val_inputs(val.size());
    const long nv = static_cast<long>(val.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < nv; ++i)
        val_inputs[static_cast<std::size_t>(i)] = eval_inputs<T>(val[static_cast<std::size_t>(i)], model.config());

    FitSpec<T> spec;
    spec.n_items = items.size();
    spec.groups = stage1_groups<T>();
    spec.monitor = cfg.early_stop.metric;
    spec.batch_loss = [&](const std::vector<std::size_t>& batch, std::size_t epoch) {
        std::vector<BreastInput<T>> inputs(batch.size());
        const long nb = static_cast<long>(batch.size());
#pragma omp parallel for schedule(dynamic)
        for (long k = 0; k < nb; ++k) {
            const auto [p, side] = items[batch[static_cast<std::size_t>(k)]];
            Rng rng = make_rng(cfg.seed, {epoch, batch[static_cast<std::size_t>(k)], 1});
            inputs[static_cast<std::size_t>(k)] = prepare_breast<T>(
                train[p], side == 0 ? Laterality::Left : Laterality::Right, model.config(), true, rng);
        }
        std::vector<ag::Var<T>> logits;
        std::vector<int> labels;
        for (std::size_t k = 0; k < batch.size(); ++k) {
            const auto [p, side] = items[batch[k]];
            Rng drop = make_rng(cfg.seed, {epoch, batch[k], 2});
            logits.push_back(model.breast_logit(model.breast_embedding(inputs[k]), true, &drop));
            labels.push_back(train[p].breast_labels[side]);
        }
        return objective::focal_loss(stack_logits(logits), labels, cfg.focal);
    };
    spec.validate = [&](std::size_t) {
        const auto logits = logits_from_inputs(model, val_inputs);
        return std::vector<std::pair<std::string, double>>{{"breast_auc", breast_auc(val, logits)},
                                                           {"patient_auc", max_patient_auc(val, logits)}};
    };
    return fit(model.store(), spec, cfg, meta);
}

template <typename T>
TrainResult train_stage2(BreastModel<T>& model, const std::vector<cohort::PatientSample>& train,
                         const std::vector<cohort::PatientSample>& val, const TrainConfig& cfg,
                         const encoders::Checkpoint& stage1, const nlohmann::json& meta) {
    if (cfg.stage != 2) throw ConfigError("train_stage2 called with stage " + std::to_string(cfg.stage));
    encoders::load_into(stage1, model.store());
    std::vector<std::array<Tensor<T>, 2>> train_cache, val_cache;
    if (cfg.cache_embeddings) {
        train_cache = breast_embeddings(model, train);
        val_cache = breast_embeddings(model, val);
    }
    FitSpec<T> spec;
    spec.n_items = train.size();
    spec.groups = {"bilateral"};
    spec.monitor = "patient_auc";
    spec.batch_loss = [&](const std::vector<std::size_t>& batch, std::size_t epoch) {
        std::vector<ag::Var<T>> logits;
        std::vector<int> labels;
        for (std::size_t p : batch) {
            const auto e = cfg.cache_embeddings ? train_cache[p] : eval_embedding(model, train[p]);
            Rng drop = make_rng(cfg.seed, {epoch, p, 3});
            logits.push_back(model.bilateral(ag::constant(e[0]), ag::constant(e[1]), true, &drop).logit);
            labels.push_back(train[p].label);
        }
        return objective::focal_loss(stack_logits(logits), labels, cfg.focal);
    };
    spec.validate = [&](std::size_t) {
        const auto emb = cfg.cache_embeddings ? val_cache : breast_embeddings(model, val);
        return std::vector<std::pair<std::string, double>>{
            {"patient_auc", patient_auc(val, bilateral_logits(model, emb))},
            {"max_patient_auc", max_patient_auc(val, breast_logits(model, emb))}};
    };
    return fit(model.store(), spec, cfg, meta);
}

template <typename T>
TrainResult train_stage2(BreastModel<T>& model, const std::vector<cohort::PatientSample>& train,
                         const std::vector<cohort::PatientSample>& val, const TrainConfig& cfg,
                         const std::filesystem::path& stage1_checkpoint, const nlohmann::json& meta) {
    if (stage1_checkpoint.empty() || !std::filesystem::exists(stage1_checkpoint))
        throw MissingArtifact("stage-1 checkpoint not found: " + stage1_checkpoint.string());
    return train_stage2(model, train, val, cfg, encoders::read_checkpoint(stage1_checkpoint), meta);
}

template <typename T>
TrainResult train_head_on_embeddings(BreastModel<T>& model, const std::vector<std::vector<T>>& embeddings,
                                     const std::vector<int>& labels, const TrainConfig& cfg) {
    if (embeddings.size() != labels.size()) throw ShapeMismatch("embedding and label counts differ");
    std::vector<ag::Var<T>> xs;
    for (const auto& e : embeddings) xs.push_back(ag::constant(Tensor<T>({e.size()}, e)));
    FitSpec<T> spec;
    spec.n_items = xs.size();
    spec.groups = {"breast_head"};
    spec.monitor = "breast_auc";
    spec.batch_loss = [&](const std::vector<std::size_t>& batch, std::size_t epoch) {
        std::vector<ag::Var<T>> logits;
        std::vector<int> y;
        for (std::size_t i : batch) {
            Rng drop = make_rng(cfg.seed, {epoch, i, 4});
            logits.push_back(model.breast_logit(xs[i], true, &drop));
            y.push_back(labels[i]);
        }
        return objective::focal_loss(stack_logits(logits), y, cfg.focal);
    };
    spec.validate = [&](std::size_t) {
        ag::NoGradGuard guard;
        std::vector<double> s;
        for (const auto& x : xs) s.push_back(static_cast<double>(model.breast_logit(x, false, nullptr).item()));
        return std::vector<std::pair<std::string, double>>{{"breast_auc", safe_auc(s, labels)}};
    };
    return fit(model.store(), spec, cfg);
}

template <typename T>
std::vector<std::array<Tensor<T>, 2>> breast_embeddings(const BreastModel<T>& model,
                                                        const std::vector<cohort::PatientSample>& samples) {
    std::vector<std::array<Tensor<T>, 2>> out(samples.size());
    const long n = static_cast<long>(samples.size());
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i)
        out[static_cast<std::size_t>(i)] = eval_embedding(model, samples[static_cast<std::size_t>(i)]);
    return out;
}

template <typename T>
std::vector<std::array<double, 2>> breast_logits(const BreastModel<T>& model,
                                                 const std::vector<std::array<Tensor<T>, 2>>& embeddings) {
    ag::NoGradGuard guard;
    std::vector<std::array<double, 2>> out(embeddings.size());
    for (std::size_t i = 0; i < embeddings.size(); ++i)
        for (int side = 0; side < 2; ++side)
            out[i][side] =
                static_cast<double>(model.breast_logit(ag::constant(embeddings[i][side]), false, nullptr).item());
    return out;
}

template <typename T>
std::vector<double> bilateral_logits(const BreastModel<T>& model,
                                     const std::vector<std::array<Tensor<T>, 2>>& embeddings) {
    ag::NoGradGuard guard;
    std::vector<double> out(embeddings.size());
    for (std::size_t i = 0; i < embeddings.size(); ++i)
        out[i] = static_cast<double>(
            model.bilateral(ag::constant(embeddings[i][0]), ag::constant(embeddings[i][1]), false, nullptr)
                .logit.item());
    return out;
}

double breast_auc(const std::vector<cohort::PatientSample>& samples, const std::vector<std::array<double, 2>>& logits) {
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t i = 0; i < samples.size(); ++i)
        for (int side = 0; side < 2; ++side)
            if (samples[i].breast_labels[side] >= 0) {
                s.push_back(logits[i][side]);
                y.push_back(samples[i].breast_labels[side]);
            }
    return safe_auc(s, y);
}

double max_patient_auc(const std::vector<cohort::PatientSample>& samples,
                       const std::vector<std::array<double, 2>>& logits) {
    std::vector<double> s;
    for (const auto& l : logits) s.push_back(std::max(l[0], l[1]));
    return patient_auc(samples, s);
}

double patient_auc(const std::vector<cohort::PatientSample>& samples, const std::vector<double>& scores) {
    std::vector<int> y;
    for (const auto& p : samples) y.push_back(p.label);
    return safe_auc(scores, y);
}

GradcheckReport gradcheck(ParamStore<double>& store, const std::function<ag::Var<double>()>& loss,
                          std::size_t n_params, std::uint64_t seed, double h) {
    store.zero_grad();
    auto l = loss();
    l.backward();
    GradcheckReport rep;
    std::vector<std::pair<std::size_t, std::size_t>> flat;  // (entry, offset)
    const auto& entries = store.entries();
    for (std::size_t e = 0; e < entries.size(); ++e) {
        const auto& v = entries[e].var;
        if (!v.requires_grad()) {
            rep.frozen_params += v.numel();
            if (v.has_grad())
                for (double g : v.grad()) rep.frozen_max_abs_grad = std::max(rep.frozen_max_abs_grad, std::abs(g));
            continue;
        }
        for (std::size_t o = 0; o < v.numel(); ++o) flat.emplace_back(e, o);
    }
    if (flat.empty()) throw InvalidParameter("gradcheck: no trainable parameters");
    Rng rng(seed);
    const std::size_t n = std::min(n_params, flat.size());
    for (std::size_t k = 0; k < n; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, flat.size() - 1);
        std::swap(flat[k], flat[pick(rng)]);
    }
    ag::NoGradGuard guard;
    for (std::size_t k = 0; k < n; ++k) {
        const auto [e, o] = flat[k];
        ag::Var<double> v = entries[e].var;
        const double analytic = v.has_grad() ? v.grad()[o] : 0.0;
        double& slot = v.mutable_value().data[o];
        const double orig = slot;
        slot = orig + h;
        const double lp = loss().item();
        slot = orig - h;
        const double lm = loss().item();
        slot = orig;
        const double numeric = (lp - lm) / (2.0 * h);
        const double rel =
            std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradcheckFloor});
        rep.entries.push_back({entries[e].path, o, analytic, numeric, rel});
        rep.max_rel_error = std::max(rep.max_rel_error, rel);
    }
    return rep;
}

ModelConfig tiny_model_config() {
    ModelConfig c;
    c.encoders.height = c.encoders.width = 16;
    c.encoders.global.patch_size = 8;
    c.encoders.global.token_dim = 16;
    c.encoders.global.num_heads = 2;
    c.encoders.local.widths = {8, 16};
    c.encoders.local.cardinality = 2;
    c.encoders.local.se_reduction = 4;
    c.fusion.latent_dim = 16;
    c.fusion.grid = {2, 2};
    c.fusion.num_heads = 2;
    c.fusion.pool = {2, 2};
    c.breast_head.hidden = 16;
    c.breast_head.dropout = 0.0;
    c.bilateral.mixer_dim = 16;
    c.bilateral.num_heads = 2;
    c.bilateral.gate_hidden = 8;
    c.bilateral.head_hidden = 16;
    c.bilateral.dropout = 0.0;
    return c;
}

GradcheckReport gradcheck_model(const ModelConfig& cfg, std::size_t n_params, std::uint64_t seed) {
    BreastModel<double> model(cfg, seed);
    model.store().set_trainable(stage1_groups<double>());
    cohort::SyntheticConfig sc;
    sc.n_patients = 2;
    sc.resolution = cfg.encoders.height;
    sc.positive_fraction = 0.5;
    sc.seed = seed;
    sc.test_internal_fraction = 0.0;
    const auto samples = cohort::generate_synthetic_cohort(sc).samples();
    std::vector<BreastInput<double>> inputs;
    std::vector<int> labels;
    for (const auto& s : samples) {
        const auto in = eval_inputs<double>(s, cfg);
        for (int side = 0; side < 2; ++side) {
            inputs.push_back(in[side]);
            labels.push_back(s.breast_labels[side]);
        }
    }
    objective::FocalConfig focal;
    auto loss = [&]() {
        std::vector<ag::Var<double>> logits;
        for (const auto& in : inputs) logits.push_back(model.breast_logit(model.breast_embedding(in), false, nullptr));
        return objective::focal_loss(stack_logits(logits), labels, focal);
    };
    return gradcheck(model.store(), loss, n_params, seed);
}

#define MVRISK_INSTANTIATE(T)                                                                                     \
    template TrainResult fit<T>(ParamStore<T>&, const FitSpec<T>&, const TrainConfig&, const nlohmann::json&);   \
    template TrainResult train_stage1<T>(BreastModel<T>&, const std::vector<cohort::PatientSample>&,             \
                                         const std::vector<cohort::PatientSample>&, const TrainConfig&,          \
                                         const nlohmann::json&);                                                 \
    template TrainResult train_stage2<T>(BreastModel<T>&, const std::vector<cohort::PatientSample>&,             \
                                         const std::vector<cohort::PatientSample>&, const TrainConfig&,          \
                                         const encoders::Checkpoint&, const nlohmann::json&);                    \
    template TrainResult train_stage2<T>(BreastModel<T>&, const std::vector<cohort::PatientSample>&,             \
                                         const std::vector<cohort::PatientSample>&, const TrainConfig&,          \
                                         const std::filesystem::path&, const nlohmann::json&);                   \
    template TrainResult train_head_on_embeddings<T>(BreastModel<T>&, const std::vector<std::vector<T>>&,        \
                                                     const std::vector<int>&, const TrainConfig&);               \
    template std::vector<std::array<Tensor<T>, 2>> breast_embeddings<T>(const BreastModel<T>&,                   \
                                                                        const std::vector<cohort::PatientSample>&); \
    template std::vector<std::array<double, 2>> breast_logits<T>(const BreastModel<T>&,                          \
                                                                 const std::vector<std::array<Tensor<T>, 2>>&);  \
    template std::vector<double> bilateral_logits<T>(const BreastModel<T>&,                                      \
                                                     const std::vector<std::array<Tensor<T>, 2>>&);

MVRISK_INSTANTIATE(float)
MVRISK_INSTANTIATE(double)
#undef MVRISK_INSTANTIATE

}  // namespace mvrisk::trainer

#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvrisk/encoders/checkpoint.hpp"
#include "mvrisk/objective/objective.hpp"
#include "mvrisk/trainer/model.hpp"

namespace mvrisk::trainer {

struct EarlyStopConfig {
    std::string metric = "breast_auc";  // or "patient_auc"
    std::size_t patience = 3;
    double min_delta = 0.0;
};

struct TrainConfig {
    int stage = 1;
    std::size_t epochs_max = 20;
    std::size_t batch_size = 16;
    double lr = 1e-3;
    double weight_decay = 0.01;
    EarlyStopConfig early_stop;
    objective::FocalConfig focal;
    std::uint64_t seed = 0;
    std::filesystem::path checkpoint_best;  // empty: not written
    std::filesystem::path checkpoint_last;
    bool cache_embeddings = true;  // stage 2 only
    double val_fraction = 0.1;     // used when no explicit validation split exists

    void validate() const;
};

struct MetricRow {
    std::size_t epoch = 0;  // 1-based
    std::string split;
    std::string metric;
    double value = 0.0;
};

struct MetricHistory {
    std::vector<MetricRow> rows;

    std::vector<double> series(const std::string& split, const std::string& metric) const;
    // Columns epoch,split,metric,value; values printed with 17 significant digits.
    void write_csv(const std::filesystem::path& path) const;
};

struct EarlyStopDecision {
    bool stop = false;
    std::size_t best_epoch = 1;  // 1-based
};

// Stops once the metric has failed to beat the running best by more than
// min_delta for `patience` consecutive epochs (patience 0: first miss).
// NaN entries never count as improvements.
EarlyStopDecision early_stop_monitor(std::span<const double> history, std::size_t patience, double min_delta);

struct TrainResult {
    MetricHistory history;
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    double best_metric = 0.0;
    bool stopped_early = false;
};

// Patient-level partition of `samples` into (train, validation) with a fixed seed.
std::pair<std::vector<cohort::PatientSample>, std::vector<cohort::PatientSample>> split_validation(
    const std::vector<cohort::PatientSample>& samples, double fraction, std::uint64_t seed);

// Generic optimization loop over a store: shuffled mini-batches, AdamW on
// `groups`, a validation callback per epoch, early stopping on `monitor`,
// best-state restore and checkpoint writing.
template <typename T>
struct FitSpec {
    std::size_t n_items = 0;
    std::set<std::string> groups;
    std::string monitor;
    std::function<ag::Var<T>(const std::vector<std::size_t>& batch, std::size_t epoch)> batch_loss;
    std::function<std::vector<std::pair<std::string, double>>(std::size_t epoch)> validate;
};

template <typename T>
TrainResult fit(ParamStore<T>& store, const FitSpec<T>& spec, const TrainConfig& cfg, const nlohmann::json& meta = {});

// Stage 1: local encoder, fusion and breast classifier on breast labels with
// per-channel (or replicate) augmentation; early stopping on validation
// breast AUC unless configured otherwise.
template <typename T>
TrainResult train_stage1(BreastModel<T>& model, const std::vector<cohort::PatientSample>& train,
                         const std::vector<cohort::PatientSample>& val, const TrainConfig& cfg,
                         const nlohmann::json& meta = {});

// Stage 2: loads the stage-1 weights and trains only the bilateral head on
// evaluation-mode breast embeddings; early stopping on validation patient AUC.
template <typename T>
TrainResult train_stage2(BreastModel<T>& model, const std::vector<cohort::PatientSample>& train,
                         const std::vector<cohort::PatientSample>& val, const TrainConfig& cfg,
                         const encoders::Checkpoint& stage1, const nlohmann::json& meta = {});

template <typename T>
TrainResult train_stage2(BreastModel<T>& model, const std::vector<cohort::PatientSample>& train,
                         const std::vector<cohort::PatientSample>& val, const TrainConfig& cfg,
                         const std::filesystem::path& stage1_checkpoint, const nlohmann::json& meta = {});

// Breast classifier trained directly on fixed embeddings (encoders bypassed).
template <typename T>
TrainResult train_head_on_embeddings(BreastModel<T>& model, const std::vector<std::vector<T>>& embeddings,
                                     const std::vector<int>& labels, const TrainConfig& cfg);

// Evaluation-mode outputs, indexed like `samples`; [0] is Left, [1] Right.
template <typename T>
std::vector<std::array<Tensor<T>, 2>> breast_embeddings(const BreastModel<T>& model,
                                                        const std::vector<cohort::PatientSample>& samples);
template <typename T>
std::vector<std::array<double, 2>> breast_logits(const BreastModel<T>& model,
                                                 const std::vector<std::array<Tensor<T>, 2>>& embeddings);
template <typename T>
std::vector<double> bilateral_logits(const BreastModel<T>& model,
                                     const std::vector<std::array<Tensor<T>, 2>>& embeddings);

// AUC over breasts with a definite label.
double breast_auc(const std::vector<cohort::PatientSample>& samples, const std::vector<std::array<double, 2>>& logits);
// Patient AUC with each patient scored by its larger breast logit.
double max_patient_auc(const std::vector<cohort::PatientSample>& samples,
                       const std::vector<std::array<double, 2>>& logits);
double patient_auc(const std::vector<cohort::PatientSample>& samples, const std::vector<double>& scores);

struct GradcheckEntry {
    std::string path;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradcheckReport {
    double max_rel_error = 0.0;
    std::vector<GradcheckEntry> entries;
    std::size_t frozen_params = 0;
    double frozen_max_abs_grad = 0.0;
};

inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckFloor = 1e-6;

// Central differences against reverse-mode gradients for `n_params` scalars
// drawn uniformly from the trainable entries of `store`. Relative error is
// |a - n| / max(|a|, |n|, kGradcheckFloor).
GradcheckReport gradcheck(ParamStore<double>& store, const std::function<ag::Var<double>()>& loss,
                          std::size_t n_params, std::uint64_t seed, double h = kGradcheckStep);

// Small hybrid model (breast embedding of 128 values) at 16x16 input.
ModelConfig tiny_model_config();

// Stage-1 gradcheck of `cfg` in 64-bit: focal loss over both breasts of a few
// synthetic patients, evaluation-mode inputs, dropout off.
GradcheckReport gradcheck_model(const ModelConfig& cfg, std::size_t n_params, std::uint64_t seed);

}  // namespace mvrisk::trainer

#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mvrisk/cohort/cohort.hpp"
#include "mvrisk/heads/heads.hpp"
#include "mvrisk/imageprep/imageprep.hpp"

namespace mvrisk::trainer {

enum class ModelVariant { Hybrid, GlobalOnly, LocalOnly };
enum class AugmentMode { PerChannel, Replicate };

std::string to_string(ModelVariant v);
std::string to_string(AugmentMode m);
ModelVariant parse_variant(const std::string& s);
AugmentMode parse_augment_mode(const std::string& s);

struct ModelConfig {
    ModelVariant variant = ModelVariant::Hybrid;
    encoders::EncoderConfig encoders;
    fusion::FusionConfig fusion;
    heads::BreastHeadConfig breast_head;
    heads::BilateralMixerConfig bilateral;  // embed_dim is filled in from the variant
    imageprep::AugmentConfig augment;
    AugmentMode augment_mode = AugmentMode::PerChannel;
    bool scale_clahe_grid = true;  // derive the CLAHE grid from the input resolution

    void validate() const;
    imageprep::AugmentConfig resolved_augment() const;
};

// Builds the three-channel input for one view. Training draws jitter factors
// from `rng`; evaluation is deterministic.
imageprep::PseudoRgbView prepare_view(const imageprep::ViewImage& img, const ModelConfig& cfg, bool train, Rng& rng);

// Both views of one breast as encoder inputs.
template <typename T>
struct BreastInput {
    Tensor<T> cc;
    Tensor<T> mlo;
};

template <typename T>
BreastInput<T> prepare_breast(const cohort::PatientSample& s, Laterality side, const ModelConfig& cfg, bool train,
                              Rng& rng);

// Encoders, fusion and both heads over one ParamStore. Parameter groups:
// global (frozen), local, fusion, breast_head, bilateral. Variants only
// build the parts they use.
template <typename T>
class BreastModel {
public:
    BreastModel(const ModelConfig& cfg, std::uint64_t seed);

    BreastModel(const BreastModel&) = delete;
    BreastModel& operator=(const BreastModel&) = delete;

    const ModelConfig& config() const { return cfg_; }
    ParamStore<T>& store() { return store_; }
    const ParamStore<T>& store() const { return store_; }
    std::size_t embedding_dim() const { return embed_dim_; }

    ag::Var<T> breast_embedding(const BreastInput<T>& in) const;
    ag::Var<T> breast_logit(const ag::Var<T>& embedding, bool train, Rng* rng) const;
    heads::BilateralTrace<T> bilateral(const ag::Var<T>& e_left, const ag::Var<T>& e_right, bool train,
                                       Rng* rng) const;

    const heads::BilateralMixer<T>& bilateral_mixer() const { return *bilateral_; }

private:
    ModelConfig cfg_;
    ParamStore<T> store_;
    std::size_t embed_dim_ = 0;
    std::unique_ptr<encoders::GlobalEncoder<T>> global_;
    std::unique_ptr<encoders::LocalEncoder<T>> local_;
    std::unique_ptr<fusion::BridgeMixer<T>> fusion_;
    std::unique_ptr<heads::BreastClassifier<T>> head_;
    std::unique_ptr<heads::BilateralMixer<T>> bilateral_;
};

}  // namespace mvrisk::trainer

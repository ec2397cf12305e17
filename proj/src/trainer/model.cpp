#include "mvrisk/trainer/model.hpp"

namespace mvrisk::trainer {

std::string to_string(ModelVariant v) {
    switch (v) {
        case ModelVariant::Hybrid:
            return "hybrid";
        case ModelVariant::GlobalOnly:
            return "global_only";
        case ModelVariant::LocalOnly:
            return "local_only";
    }
    return "?";
}

std::string to_string(AugmentMode m) { return m == AugmentMode::PerChannel ? "per_channel" : "replicate"; }

ModelVariant parse_variant(const std::string& s) {
    if (s == "hybrid") return ModelVariant::Hybrid;
    if (s == "global_only") return ModelVariant::GlobalOnly;
    if (s == "local_only") return ModelVariant::LocalOnly;
    throw ConfigError("unknown model variant '" + s + "'");
}

AugmentMode parse_augment_mode(const std::string& s) {
    if (s == "per_channel") return AugmentMode::PerChannel;
    if (s == "replicate") return AugmentMode::Replicate;
    throw ConfigError("unknown augmentation mode '" + s + "'");
}

void ModelConfig::validate() const {
    encoders.validate();
    fusion.validate();
    resolved_augment().validate();
    auto b = bilateral;
    b.embed_dim = 1;
    b.validate();
}

imageprep::AugmentConfig ModelConfig::resolved_augment() const {
    auto a = augment;
    if (scale_clahe_grid) a.clahe_grid = imageprep::AugmentConfig::scaled_grid(encoders.height, encoders.width);
    return a;
}

imageprep::PseudoRgbView prepare_view(const imageprep::ViewImage& img, const ModelConfig& cfg, bool train, Rng& rng) {
    if (img.height != cfg.encoders.height || img.width != cfg.encoders.width)
        throw ShapeMismatch("view " + img.id + " is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                            ", model expects " + std::to_string(cfg.encoders.height) + "x" +
                            std::to_string(cfg.encoders.width));
    auto aug = cfg.resolved_augment();
    aug.eval_mode = !train;
    if (cfg.augment_mode == AugmentMode::PerChannel) return imageprep::per_channel_augment(img, aug, rng);
    if (!train) return imageprep::replicate_channels(img);
    const double fb = std::uniform_real_distribution<double>(aug.brightness_range.first, aug.brightness_range.second)(rng);
    const double fc = std::uniform_real_distribution<double>(aug.contrast_range.first, aug.contrast_range.second)(rng);
    return imageprep::replicate_channels(imageprep::contrast_jitter(imageprep::brightness_jitter(img, fb), fc));
}

template <typename T>
BreastInput<T> prepare_breast(const cohort::PatientSample& s, Laterality side, const ModelConfig& cfg, bool train,
                              Rng& rng) {
    BreastInput<T> in;
    in.cc = prepare_view(s.view(side, ViewPosition::CC), cfg, train, rng).template to_tensor<T>();
    in.mlo = prepare_view(s.view(side, ViewPosition::MLO), cfg, train, rng).template to_tensor<T>();
    return in;
}

template <typename T>
BreastModel<T>::BreastModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    store_.declare_group(encoders::GlobalEncoder<T>::kGroup, true);
    for (const char* g : {"local", "fusion", "breast_head", "bilateral"}) store_.declare_group(g, false);
    const auto& ec = cfg_.encoders;
    if (cfg_.variant != ModelVariant::LocalOnly) global_ = std::make_unique<encoders::GlobalEncoder<T>>(ec, store_);
    if (cfg_.variant != ModelVariant::GlobalOnly) {
        Rng rng = make_rng(seed, {1});
        local_ = std::make_unique<encoders::LocalEncoder<T>>(ec, store_, rng);
    }
    switch (cfg_.variant) {
        case ModelVariant::Hybrid: {
            Rng rng = make_rng(seed, {2});
            fusion_ = std::make_unique<fusion::BridgeMixer<T>>(cfg_.fusion, ec.global.token_dim,
                                                              ec.local.out_channels(), store_, rng);
            embed_dim_ = cfg_.fusion.embedding_length();
            break;
        }
        case ModelVariant::GlobalOnly:
            embed_dim_ = 2 * ec.global.token_dim;
            break;
        case ModelVariant::LocalOnly:
            embed_dim_ = 2 * ec.local.out_channels() * cfg_.fusion.pool.height * cfg_.fusion.pool.width;
            break;
    }
    auto head_cfg = cfg_.breast_head;
    if (cfg_.variant == ModelVariant::GlobalOnly) head_cfg.hidden = 0;
    Rng head_rng = make_rng(seed, {3});
    head_ = std::make_unique<heads::BreastClassifier<T>>(embed_dim_, head_cfg, store_, head_rng);
    cfg_.bilateral.embed_dim = embed_dim_;
    Rng bil_rng = make_rng(seed, {4});
    bilateral_ = std::make_unique<heads::BilateralMixer<T>>(cfg_.bilateral, store_, bil_rng);
}

template <typename T>
ag::Var<T> BreastModel<T>::breast_embedding(const BreastInput<T>& in) const {
    switch (cfg_.variant) {
        case ModelVariant::Hybrid: {
            auto cc = fusion_->forward(global_->encode(in.cc), local_->encode(in.cc, ViewPosition::CC));
            auto mlo = fusion_->forward(global_->encode(in.mlo), local_->encode(in.mlo, ViewPosition::MLO));
            return fusion::breast_embed(cc, mlo, cfg_.fusion.pool).values;
        }
        case ModelVariant::GlobalOnly: {
            const std::size_t d = cfg_.encoders.global.token_dim;
            auto cc = ag::reshape(ag::col_mean(global_->encode(in.cc).as_tokens()), {1, d});
            auto mlo = ag::reshape(ag::col_mean(global_->encode(in.mlo).as_tokens()), {1, d});
            return ag::reshape(ag::concat<T>({cc, mlo}, 1), {2 * d});
        }
        case ModelVariant::LocalOnly: {
            auto cc = local_->encode(in.cc, ViewPosition::CC);
            auto mlo = local_->encode(in.mlo, ViewPosition::MLO);
            return fusion::breast_embed(cc, mlo, cfg_.fusion.pool).values;
        }
    }
    throw InvalidParameter("unknown model variant");
}

template <typename T>
ag::Var<T> BreastModel<T>::breast_logit(const ag::Var<T>& embedding, bool train, Rng* rng) const {
    return head_->logit(embedding, train, rng);
}

template <typename T>
heads::BilateralTrace<T> BreastModel<T>::bilateral(const ag::Var<T>& e_left, const ag::Var<T>& e_right, bool train,
                                                   Rng* rng) const {
    return bilateral_->forward(e_left, e_right, train, rng);
}

template BreastInput<float> prepare_breast<float>(const cohort::PatientSample&, Laterality, const ModelConfig&, bool,
                                                  Rng&);
template BreastInput<double> prepare_breast<double>(const cohort::PatientSample&, Laterality, const ModelConfig&, bool,
                                                    Rng&);
template class BreastModel<float>;
template class BreastModel<double>;

}  // namespace mvrisk::trainer

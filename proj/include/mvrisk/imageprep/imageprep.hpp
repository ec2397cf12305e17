#pragma once

#include <array>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "mvrisk/core/rng.hpp"
#include "mvrisk/core/tensor.hpp"
#include "mvrisk/core/types.hpp"

namespace mvrisk::imageprep {

// One preprocessed grayscale view. Pixels are row-major intensities in [0,1].
struct ViewImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;
    Laterality laterality = Laterality::Left;
    ViewPosition view_position = ViewPosition::CC;
    std::string id;

    ViewImage() = default;
    ViewImage(std::size_t h, std::size_t w, float fill = 0.0f, Laterality lat = Laterality::Left,
              ViewPosition view = ViewPosition::CC)
        : height(h), width(w), pixels(h * w, fill), laterality(lat), view_position(view) {}

    float& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
    float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }

    // Throws ValidationError when dimensions are zero, the buffer size is
    // wrong, or any pixel falls outside [0,1].
    void validate() const;
};

// Three channels, each height x width, stored channel-major.
struct PseudoRgbView {
    std::size_t height = 0;
    std::size_t width = 0;
    std::array<std::vector<float>, 3> channels;
    std::string source_id;
    Laterality laterality = Laterality::Left;
    ViewPosition view_position = ViewPosition::CC;

    // [3, H, W] tensor for the encoders.
    template <typename T>
    Tensor<T> to_tensor() const {
        Tensor<T> t({3, height, width});
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < height * width; ++i) t.data[c * height * width + i] = channels[c][i];
        return t;
    }
};

struct ClaheGrid {
    std::size_t rows = 12;
    std::size_t cols = 12;
};

struct AugmentConfig {
    std::pair<double, double> brightness_range{0.8, 1.2};
    std::pair<double, double> contrast_range{0.8, 1.2};
    // Multiple of the uniform per-bin count (tile pixels / bins); +inf disables clipping.
    double clahe_clip_limit = 4.0;
    ClaheGrid clahe_grid{12, 12};
    bool eval_mode = false;

    void validate() const;

    // Grid scaled from the 12x12-at-512 reference to the given resolution, at least 1x1.
    static ClaheGrid scaled_grid(std::size_t height, std::size_t width);
};

inline constexpr std::size_t kClaheBins = 256;
inline constexpr double kNoClip = std::numeric_limits<double>::infinity();

// Intensity level in [0, 255] a pixel quantizes to.
std::size_t quantize_level(float p);

ViewImage brightness_jitter(const ViewImage& img, double factor);

// Mean-anchored rescale p -> clamp(m + (p - m) * factor, 0, 1).
ViewImage contrast_jitter(const ViewImage& img, double factor);

ViewImage clahe(const ViewImage& img, double clip_limit, ClaheGrid grid);

PseudoRgbView per_channel_augment(const ViewImage& img, const AugmentConfig& cfg, Rng& rng);

PseudoRgbView replicate_channels(const ViewImage& img);

}  // namespace mvrisk::imageprep

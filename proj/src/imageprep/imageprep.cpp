#include "mvrisk/imageprep/imageprep.hpp"

#include <algorithm>
#include <cmath>

namespace mvrisk::imageprep {

void ViewImage::validate() const {
    if (height == 0 || width == 0) throw ValidationError("image '" + id + "' has zero size");
    if (pixels.size() != height * width) throw ValidationError("image '" + id + "' buffer does not match H x W");
    for (float p : pixels)
        if (!(p >= 0.0f && p <= 1.0f)) throw ValidationError("image '" + id + "' has a pixel outside [0,1]");
}

void AugmentConfig::validate() const {
    for (const auto& [lo, hi] : {brightness_range, contrast_range})
        if (!(lo > 0.0 && lo <= hi)) throw InvalidParameter("jitter range must satisfy 0 < lo <= hi");
    if (!(clahe_clip_limit > 0.0)) throw InvalidParameter("clahe clip limit must be positive");
    if (clahe_grid.rows < 1 || clahe_grid.cols < 1) throw InvalidParameter("clahe grid must be at least 1x1");
}

ClaheGrid AugmentConfig::scaled_grid(std::size_t height, std::size_t width) {
    auto scale = [](std::size_t n) {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(12.0 * static_cast<double>(n) / 512.0)));
    };
    return {scale(height), scale(width)};
}

std::size_t quantize_level(float p) {
    const double v = std::floor(static_cast<double>(p) * (kClaheBins - 1) + 0.5);
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(kClaheBins - 1)));
}

ViewImage brightness_jitter(const ViewImage& img, double factor) {
    if (!(factor > 0.0)) throw InvalidParameter("brightness factor must be positive");
    ViewImage out = img;
    const float f = static_cast<float>(factor);
    for (auto& p : out.pixels) p = std::clamp(p * f, 0.0f, 1.0f);
    return out;
}

ViewImage contrast_jitter(const ViewImage& img, double factor) {
    if (!(factor > 0.0)) throw InvalidParameter("contrast factor must be positive");
    ViewImage out = img;
    if (factor == 1.0) return out;
    double sum = 0.0;
    for (float p : img.pixels) sum += p;
    const double m = img.pixels.empty() ? 0.0 : sum / static_cast<double>(img.pixels.size());
    for (auto& p : out.pixels) p = static_cast<float>(std::clamp(m + (p - m) * factor, 0.0, 1.0));
    return out;
}

namespace {

// Per-tile level mapping; identity tiles hold a single occupied level and
// return the input pixel unchanged.
struct TileMap {
    bool identity = false;
    std::array<double, kClaheBins> lut{};
};

TileMap build_tile_map(const ViewImage& img, std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1,
                       double clip_limit) {
    std::array<double, kClaheBins> hist{};
    for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x) hist[quantize_level(img.at(y, x))] += 1.0;
    const double total = static_cast<double>((y1 - y0) * (x1 - x0));
    TileMap map;
    if (std::count_if(hist.begin(), hist.end(), [](double c) { return c > 0.0; }) <= 1) {
        map.identity = true;
        return map;
    }
    if (std::isfinite(clip_limit)) {
        const double limit = clip_limit * total / static_cast<double>(kClaheBins);
        double excess = 0.0;
        for (auto& c : hist) {
            if (c > limit) {
                excess += c - limit;
                c = limit;
            }
        }
        const double share = excess / static_cast<double>(kClaheBins);
        for (auto& c : hist) c += share;
    }
    double cdf = 0.0;
    for (std::size_t k = 0; k < kClaheBins; ++k) {
        cdf += hist[k];
        map.lut[k] = std::min(1.0, cdf / total);
    }
    return map;
}

double apply_map(const TileMap& m, float p) {
    return m.identity ? static_cast<double>(p) : m.lut[quantize_level(p)];
}

// Interpolation coordinate along one axis: lower/upper tile index and weight.
struct AxisWeight {
    std::size_t lo, hi;
    double t;
};

AxisWeight axis_weight(std::size_t pos, std::size_t n, std::size_t tiles) {
    const double tile = static_cast<double>(n) / static_cast<double>(tiles);
    const double u = (static_cast<double>(pos) + 0.5) / tile - 0.5;
    if (u <= 0.0) return {0, 0, 0.0};
    const auto lo = static_cast<std::size_t>(std::floor(u));
    if (lo >= tiles - 1) return {tiles - 1, tiles - 1, 0.0};
    return {lo, lo + 1, u - static_cast<double>(lo)};
}

inline double lerp(double a, double b, double t) { return a + t * (b - a); }

}  // namespace

ViewImage clahe(const ViewImage& img, double clip_limit, ClaheGrid grid) {
    if (grid.rows < 1 || grid.cols < 1) throw InvalidParameter("clahe grid must be at least 1x1");
    if (!(clip_limit > 0.0)) throw InvalidParameter("clahe clip limit must be positive");
    if (grid.rows > img.height || grid.cols > img.width)
        throw InvalidParameter("clahe tile smaller than one pixel for grid " + std::to_string(grid.rows) + "x" +
                               std::to_string(grid.cols));
    std::vector<TileMap> maps(grid.rows * grid.cols);
    for (std::size_t ty = 0; ty < grid.rows; ++ty) {
        const std::size_t y0 = ty * img.height / grid.rows, y1 = (ty + 1) * img.height / grid.rows;
        for (std::size_t tx = 0; tx < grid.cols; ++tx) {
            const std::size_t x0 = tx * img.width / grid.cols, x1 = (tx + 1) * img.width / grid.cols;
            maps[ty * grid.cols + tx] = build_tile_map(img, y0, y1, x0, x1, clip_limit);
        }
    }
    ViewImage out = img;
    for (std::size_t y = 0; y < img.height; ++y) {
        const AxisWeight wy = axis_weight(y, img.height, grid.rows);
        for (std::size_t x = 0; x < img.width; ++x) {
            const AxisWeight wx = axis_weight(x, img.width, grid.cols);
            const float p = img.at(y, x);
            const double top = lerp(apply_map(maps[wy.lo * grid.cols + wx.lo], p),
                                    apply_map(maps[wy.lo * grid.cols + wx.hi], p), wx.t);
            const double bottom = lerp(apply_map(maps[wy.hi * grid.cols + wx.lo], p),
                                       apply_map(maps[wy.hi * grid.cols + wx.hi], p), wx.t);
            out.at(y, x) = static_cast<float>(std::clamp(lerp(top, bottom, wy.t), 0.0, 1.0));
        }
    }
    return out;
}

PseudoRgbView per_channel_augment(const ViewImage& img, const AugmentConfig& cfg, Rng& rng) {
    cfg.validate();
    double fb = 1.0, fc = 1.0;
    if (!cfg.eval_mode) {
        fb = std::uniform_real_distribution<double>(cfg.brightness_range.first, cfg.brightness_range.second)(rng);
        fc = std::uniform_real_distribution<double>(cfg.contrast_range.first, cfg.contrast_range.second)(rng);
    }
    PseudoRgbView out;
    out.height = img.height;
    out.width = img.width;
    out.source_id = img.id;
    out.laterality = img.laterality;
    out.view_position = img.view_position;
    out.channels[0] = brightness_jitter(img, fb).pixels;
    out.channels[1] = contrast_jitter(img, fc).pixels;
    out.channels[2] = clahe(img, cfg.clahe_clip_limit, cfg.clahe_grid).pixels;
    return out;
}

PseudoRgbView replicate_channels(const ViewImage& img) {
    PseudoRgbView out;
    out.height = img.height;
    out.width = img.width;
    out.source_id = img.id;
    out.laterality = img.laterality;
    out.view_position = img.view_position;
    out.channels = {img.pixels, img.pixels, img.pixels};
    return out;
}

}  // namespace mvrisk::imageprep

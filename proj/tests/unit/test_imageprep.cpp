#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "helpers.hpp"
#include "mvrisk/imageprep/image_io.hpp"
#include "mvrisk/imageprep/imageprep.hpp"

using namespace mvrisk;
using namespace mvrisk::imageprep;

namespace {

std::size_t level_of(float p) {
    long v = std::lround(std::floor(static_cast<double>(p) * 255.0 + 0.5));
    return static_cast<std::size_t>(std::clamp(v, 0L, 255L));
}

// Global histogram equalization: each pixel maps to the fraction of pixels
// whose level does not exceed its own.
ViewImage equalize_oracle(const ViewImage& img) {
    std::array<long, 256> count{};
    for (float p : img.pixels) ++count[level_of(p)];
    ViewImage out = img;
    const long distinct = std::count_if(count.begin(), count.end(), [](long c) { return c > 0; });
    if (distinct <= 1) return out;
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        long below = 0;
        for (std::size_t l = 0; l <= level_of(img.pixels[i]); ++l) below += count[l];
        out.pixels[i] = static_cast<float>(static_cast<double>(below) / static_cast<double>(img.pixels.size()));
    }
    return out;
}

// Tiled equalization with clipping, evaluated pixel by pixel: every tile's
// mapping is rebuilt from scratch and blended bilinearly between the tile
// centres that surround the pixel.
ViewImage clahe_oracle(const ViewImage& img, double clip, std::size_t rows, std::size_t cols) {
    auto tile_value = [&](std::size_t ty, std::size_t tx, float p) {
        const std::size_t y0 = ty * img.height / rows, y1 = (ty + 1) * img.height / rows;
        const std::size_t x0 = tx * img.width / cols, x1 = (tx + 1) * img.width / cols;
        std::vector<double> hist(256, 0.0);
        for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t x = x0; x < x1; ++x) hist[level_of(img.at(y, x))] += 1.0;
        if (std::count_if(hist.begin(), hist.end(), [](double c) { return c > 0; }) <= 1) return static_cast<double>(p);
        const double n = static_cast<double>((y1 - y0) * (x1 - x0));
        if (std::isfinite(clip)) {
            const double limit = clip * n / 256.0;
            double excess = 0.0;
            for (auto& c : hist) excess += std::max(0.0, c - limit), c = std::min(c, limit);
            for (auto& c : hist) c += excess / 256.0;
        }
        double cdf = 0.0;
        for (std::size_t l = 0; l <= level_of(p); ++l) cdf += hist[l];
        return std::min(1.0, cdf / n);
    };
    auto neighbours = [](std::size_t pos, std::size_t n, std::size_t tiles) {
        const double size = static_cast<double>(n) / static_cast<double>(tiles);
        const double centre0 = 0.5 * size - 0.5;
        const double last = (static_cast<double>(tiles) - 0.5) * size - 0.5;
        const double c = static_cast<double>(pos);
        if (c <= centre0) return std::tuple<std::size_t, std::size_t, double>{0, 0, 0.0};
        if (c >= last) return std::tuple<std::size_t, std::size_t, double>{tiles - 1, tiles - 1, 0.0};
        const double u = (c - centre0) / size;
        const auto lo = static_cast<std::size_t>(u);
        return std::tuple<std::size_t, std::size_t, double>{lo, lo + 1, u - static_cast<double>(lo)};
    };
    ViewImage out = img;
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) {
            auto [y0, y1, wy] = neighbours(y, img.height, rows);
            auto [x0, x1, wx] = neighbours(x, img.width, cols);
            const float p = img.at(y, x);
            const double top = (1 - wx) * tile_value(y0, x0, p) + wx * tile_value(y0, x1, p);
            const double bot = (1 - wx) * tile_value(y1, x0, p) + wx * tile_value(y1, x1, p);
            out.at(y, x) = static_cast<float>(std::clamp((1 - wy) * top + wy * bot, 0.0, 1.0));
        }
    return out;
}

ViewImage ramp256() {
    ViewImage img(16, 16);
    for (std::size_t i = 0; i < 256; ++i) img.pixels[i] = static_cast<float>(i) / 255.0f;
    return img;
}

}  // namespace

TEST_CASE("brightness jitter") {
    Rng rng(1);
    auto img = testutil::random_image(6, 5, rng);
    CHECK(brightness_jitter(img, 1.0).pixels == img.pixels);
    ViewImage a(1, 2);
    a.pixels = {0.9f, 0.4f};
    auto b = brightness_jitter(a, 1.5);
    CHECK(b.pixels[0] == 1.0f);
    CHECK(brightness_jitter(a, 0.5).pixels[1] == doctest::Approx(0.2));
}

TEST_CASE("contrast jitter about the image mean") {
    Rng rng(2);
    auto img = testutil::random_image(6, 5, rng);
    CHECK(contrast_jitter(img, 1.0).pixels == img.pixels);
    ViewImage c(3, 3, 0.37f);
    CHECK(contrast_jitter(c, 1.7).pixels == c.pixels);
    ViewImage a(1, 2);
    a.pixels = {0.2f, 0.8f};
    auto out = contrast_jitter(a, 0.5);
    CHECK(out.pixels[0] == doctest::Approx(0.35));
    CHECK(out.pixels[1] == doctest::Approx(0.65));
}

TEST_CASE("CLAHE with one tile and no clipping is global histogram equalization") {
    Rng rng(3);
    for (int i = 0; i < 10; ++i) {
        auto img = testutil::random_image(24, 17, rng);
        CHECK(clahe(img, kNoClip, {1, 1}).pixels == equalize_oracle(img).pixels);
    }
    auto ramp = ramp256();
    auto out = clahe(ramp, kNoClip, {1, 1});
    for (std::size_t i = 0; i < 256; ++i) CHECK(std::abs(out.pixels[i] - ramp.pixels[i]) <= 1.0f / 255.0f + 1e-6f);
}

TEST_CASE("CLAHE on a constant image is the identity") {
    ViewImage c(12, 12, 0.42f);
    CHECK(clahe(c, 4.0, {3, 3}).pixels == c.pixels);
    CHECK(clahe(c, kNoClip, {1, 1}).pixels == c.pixels);
}

TEST_CASE("CLAHE matches the tiled oracle with clipping") {
    Rng rng(4);
    for (auto [h, w, r, c, clip] : std::vector<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, double>>{
             {8, 8, 2, 2, 4.0}, {16, 12, 3, 2, 2.0}, {20, 20, 4, 4, kNoClip}, {9, 7, 2, 3, 1.5}}) {
        auto img = testutil::random_image(h, w, rng);
        auto got = clahe(img, clip, {r, c});
        auto want = clahe_oracle(img, clip, r, c);
        for (std::size_t i = 0; i < got.pixels.size(); ++i) CHECK(got.pixels[i] == doctest::Approx(want.pixels[i]).epsilon(1e-6));
    }
}

TEST_CASE("CLAHE rejects bad parameters") {
    ViewImage img(4, 4, 0.5f);
    CHECK_THROWS_AS(clahe(img, 0.0, {1, 1}), InvalidParameter);
    CHECK_THROWS_AS(clahe(img, 2.0, {0, 1}), InvalidParameter);
    CHECK_THROWS_AS(clahe(img, 2.0, {5, 5}), InvalidParameter);
}

TEST_CASE("per-channel augmentation") {
    SUBCASE("eval mode on a ramp with a neutral CLAHE") {
        AugmentConfig cfg;
        cfg.eval_mode = true;
        cfg.clahe_clip_limit = kNoClip;
        cfg.clahe_grid = {1, 1};
        auto ramp = ramp256();
        Rng rng(1);
        auto v = per_channel_augment(ramp, cfg, rng);
        CHECK(v.channels[0] == ramp.pixels);
        CHECK(v.channels[1] == ramp.pixels);
        for (std::size_t i = 0; i < 256; ++i) CHECK(std::abs(v.channels[2][i] - ramp.pixels[i]) <= 1.0f / 255.0f + 1e-6f);
    }
    SUBCASE("seeded runs are identical and the third channel is CLAHE") {
        AugmentConfig cfg;
        cfg.clahe_grid = {2, 2};
        Rng src(5);
        auto img = testutil::random_image(8, 8, src);
        Rng r1(9), r2(9);
        auto a = per_channel_augment(img, cfg, r1);
        auto b = per_channel_augment(img, cfg, r2);
        CHECK(a.channels == b.channels);
        auto want = clahe_oracle(img, cfg.clahe_clip_limit, 2, 2);
        for (std::size_t i = 0; i < 64; ++i) CHECK(a.channels[2][i] == doctest::Approx(want.pixels[i]).epsilon(1e-6));
    }
    SUBCASE("scaled grid") {
        CHECK(AugmentConfig::scaled_grid(512, 512).rows == 12);
        CHECK(AugmentConfig::scaled_grid(128, 64).rows == 3);
        CHECK(AugmentConfig::scaled_grid(128, 64).cols == 2);
        CHECK(AugmentConfig::scaled_grid(16, 16).rows == 1);
    }
}

TEST_CASE("replicate channels") {
    Rng rng(6);
    auto img = testutil::random_image(7, 9, rng);
    auto v = replicate_channels(img);
    CHECK(v.channels[0] == img.pixels);
    CHECK(v.channels[1] == img.pixels);
    CHECK(v.channels[2] == img.pixels);
    auto c = replicate_channels(ViewImage(3, 3, 0.3f));
    for (const auto& ch : c.channels)
        for (float p : ch) CHECK(p == 0.3f);
}

TEST_CASE("image files round trip") {
    Rng rng(7);
    auto img = testutil::random_image(13, 11, rng);
    const auto dir = std::filesystem::temp_directory_path() / "mvrisk_io_test";
    std::filesystem::create_directories(dir);
    write_image(img, dir / "a.raw");
    CHECK(read_image(dir / "a.raw").pixels == img.pixels);
    write_image(img, dir / "a.png");
    auto png = read_image(dir / "a.png");
    REQUIRE(png.height == 13);
    REQUIRE(png.width == 11);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(std::abs(png.pixels[i] - img.pixels[i]) <= 0.5f / 65535.0f + 1e-7f);
    CHECK_THROWS(read_image(dir / "missing.png"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("view validation") {
    ViewImage bad(2, 2, 0.5f);
    bad.pixels[3] = 1.5f;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    ViewImage wrong(2, 2);
    wrong.pixels.pop_back();
    CHECK_THROWS_AS(wrong.validate(), ValidationError);
}

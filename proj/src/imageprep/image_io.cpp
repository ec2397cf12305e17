#include "mvrisk/imageprep/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace mvrisk::imageprep {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw ValidationError("truncated raw image header");
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

}  // namespace

void write_raw(const ViewImage& img, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw MissingArtifact("cannot write " + path.string());
    put_u32(os, static_cast<std::uint32_t>(img.height));
    put_u32(os, static_cast<std::uint32_t>(img.width));
    for (float p : img.pixels) put_u32(os, std::bit_cast<std::uint32_t>(p));
    if (!os) throw MissingArtifact("write failed for " + path.string());
}

ViewImage read_raw(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingArtifact("cannot read " + path.string());
    ViewImage img;
    img.height = get_u32(is);
    img.width = get_u32(is);
    img.pixels.resize(img.height * img.width);
    for (auto& p : img.pixels) p = std::bit_cast<float>(get_u32(is));
    img.id = path.stem().string();
    return img;
}

void write_png16(const ViewImage& img, const std::filesystem::path& path) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw MissingArtifact("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("png encode failed for " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 16,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<unsigned char> row(img.width * 2);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            const auto v = static_cast<std::uint16_t>(std::lround(std::clamp(img.at(y, x), 0.0f, 1.0f) * 65535.0f));
            row[2 * x] = static_cast<unsigned char>(v >> 8);  // PNG is big-endian
            row[2 * x + 1] = static_cast<unsigned char>(v & 0xff);
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

ViewImage read_png(const std::filesystem::path& path) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw MissingArtifact("cannot read " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ValidationError("png decode failed for " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const auto width = png_get_image_width(png, info);
    const auto height = png_get_image_height(png, info);
    const int depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (color != PNG_COLOR_TYPE_GRAY || (depth != 8 && depth != 16)) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ValidationError(path.string() + ": only 8/16-bit grayscale PNG is supported");
    }
    ViewImage img(height, width);
    img.id = path.stem().string();
    std::vector<unsigned char> row(png_get_rowbytes(png, info));
    const float denom = depth == 16 ? 65535.0f : 255.0f;
    for (std::size_t y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (std::size_t x = 0; x < width; ++x) {
            const unsigned v = depth == 16 ? (static_cast<unsigned>(row[2 * x]) << 8) | row[2 * x + 1] : row[x];
            img.at(y, x) = static_cast<float>(v) / denom;
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

ViewImage read_image(const std::filesystem::path& path) {
    return path.extension() == ".png" ? read_png(path) : read_raw(path);
}

void write_image(const ViewImage& img, const std::filesystem::path& path) {
    if (path.extension() == ".png")
        write_png16(img, path);
    else
        write_raw(img, path);
}

}  // namespace mvrisk::imageprep

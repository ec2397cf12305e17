#pragma once

#include <filesystem>

#include "mvrisk/imageprep/imageprep.hpp"

namespace mvrisk::imageprep {

// Raw float image: 8-byte header (height, width as little-endian uint32)
// followed by height*width little-endian float32 values, row-major.
void write_raw(const ViewImage& img, const std::filesystem::path& path);
ViewImage read_raw(const std::filesystem::path& path);

// 16-bit grayscale PNG; intensities map to [0, 65535].
void write_png16(const ViewImage& img, const std::filesystem::path& path);
ViewImage read_png(const std::filesystem::path& path);

// Dispatches on extension: ".png" or anything else as raw.
ViewImage read_image(const std::filesystem::path& path);
void write_image(const ViewImage& img, const std::filesystem::path& path);

}  // namespace mvrisk::imageprep

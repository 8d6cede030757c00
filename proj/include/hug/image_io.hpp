#pragma once

#include "hug/types.hpp"

#include <filesystem>

namespace hug {

/// Reads an 8-bit PNG (gray, gray+alpha, RGB or RGBA) or a binary PPM (P6,
/// maxval 255). Values are mapped linearly to [0,1]; alpha is dropped.
Image read_image(const std::filesystem::path& path);

/// Writes PNG or PPM depending on the extension (.ppm -> P6, otherwise PNG).
/// Values are clamped to [0,1] and rounded to 8 bits.
void write_image(const Image& image, const std::filesystem::path& path);

void write_bitmap_png(const Bitmap& bitmap, const std::filesystem::path& path);
Bitmap read_bitmap_png(const std::filesystem::path& path);

/// 8-bit grayscale PGM (P5) of values in [0,1].
void write_pgm(const std::vector<double>& values, int width, int height, const std::filesystem::path& path);

}  // namespace hug

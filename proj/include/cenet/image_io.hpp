#pragma once

#include "cenet/errors.hpp"
#include "cenet/imageops.hpp"

#include <filesystem>

namespace cenet {

/// Reads an 8-bit PNG/JPEG as a [3, H, W] RGB image with values x / 255.
Image load_image(const std::filesystem::path& path);

/// Writes a [1|3, H, W] image as 8-bit, rounding to nearest. The format
/// follows the file extension.
void save_image(const std::filesystem::path& path, const Image& img);

/// 8-bit quantization used on save: round(x * 255) / 255, clamped to [0, 1].
Image quantize8(const Image& img);

}  // namespace cenet

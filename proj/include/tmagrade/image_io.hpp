#pragma once

#include <filesystem>

#include "tmagrade/types.hpp"

namespace tma {

// 8-bit PNG rasters. Other bit depths and color types are rejected.
ImageU8 read_png_rgb(const std::filesystem::path& path);
Grid<std::uint8_t> read_png_gray(const std::filesystem::path& path);

void write_png_rgb(const std::filesystem::path& path, const ImageU8& image);
void write_png_gray(const std::filesystem::path& path, const Grid<std::uint8_t>& image);

}  // namespace tma

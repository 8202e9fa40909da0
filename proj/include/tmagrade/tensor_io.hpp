#pragma once

#include <filesystem>

#include "tmagrade/types.hpp"

namespace tma {

// Raw tensor cache: 24-byte header (magic "SLM1", u32 H, u32 W, u32 C,
// u32 dtype tag 0 = f32, u32 reserved) then little-endian f32 HWC payload.
void write_tensor(const std::filesystem::path& path, const ImageF& tensor);
ImageF read_tensor(const std::filesystem::path& path);

}  // namespace tma

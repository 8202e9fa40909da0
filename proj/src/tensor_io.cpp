#include "tmagrade/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace tma {
namespace {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

constexpr char kMagic[4] = {'S', 'L', 'M', '1'};
constexpr std::uint32_t kDtypeF32 = 0;

}  // namespace

void write_tensor(const std::filesystem::path& path, const ImageF& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write tensor '" + path.string() + "'");
    const std::uint32_t header[5] = {static_cast<std::uint32_t>(t.height), static_cast<std::uint32_t>(t.width),
                                     static_cast<std::uint32_t>(t.channels), kDtypeF32, 0u};
    out.write(kMagic, 4);
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!out) throw Error("short write to '" + path.string() + "'");
}

ImageF read_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open tensor '" + path.string() + "'");
    char magic[4];
    std::uint32_t header[5];
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(header), sizeof header);
    if (!in) throw Error("'" + path.string() + "': truncated tensor header");
    if (std::memcmp(magic, kMagic, 4) != 0) throw Error("'" + path.string() + "': bad tensor magic");
    if (header[3] != kDtypeF32) throw Error("'" + path.string() + "': unsupported dtype tag " + std::to_string(header[3]));
    ImageF t(static_cast<int>(header[0]), static_cast<int>(header[1]), static_cast<int>(header[2]));
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) throw Error("'" + path.string() + "': truncated tensor payload");
    return t;
}

}  // namespace tma

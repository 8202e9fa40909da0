#include "tmagrade/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

namespace tma {
namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw Error("cannot open '" + path.string() + "'");
    return f;
}

[[noreturn]] void png_error_handler(png_structp, png_const_charp msg) { throw Error(std::string("png: ") + msg); }
void png_warning_handler(png_structp, png_const_charp) {}

struct PngRaster {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;
};

PngRaster read_png(const std::filesystem::path& path, int expected_channels) {
    auto file = open_file(path, "rb");
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw Error("'" + path.string() + "' is not a PNG file");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
    if (!png) throw Error("png: out of memory");
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_read_struct(p, i, nullptr); }
    } guard{&png, &info};

    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int bit_depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (bit_depth != 8)
        throw Error("'" + path.string() + "': unsupported bit depth " + std::to_string(bit_depth) + " (expected 8)");
    const int want_color = expected_channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    if (color != want_color)
        throw Error("'" + path.string() + "': unsupported color type (expected " +
                    (expected_channels == 3 ? std::string("8-bit RGB") : std::string("8-bit grayscale")) + ")");

    PngRaster r;
    r.width = static_cast<int>(png_get_image_width(png, info));
    r.height = static_cast<int>(png_get_image_height(png, info));
    r.channels = expected_channels;
    const std::size_t stride = static_cast<std::size_t>(r.width) * r.channels;
    if (png_get_rowbytes(png, info) != stride) throw Error("'" + path.string() + "': unexpected row layout");
    r.pixels.resize(stride * r.height);
    std::vector<png_bytep> rows(r.height);
    for (int y = 0; y < r.height; ++y) rows[y] = r.pixels.data() + stride * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    return r;
}

void write_png(const std::filesystem::path& path, int height, int width, int channels, const std::uint8_t* pixels) {
    auto file = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
    if (!png) throw Error("png: out of memory");
    png_infop info = png_create_info_struct(png);
    struct Guard {
        png_structp* p;
        png_infop* i;
        ~Guard() { png_destroy_write_struct(p, i); }
    } guard{&png, &info};

    png_init_io(png, file.get());
    png_set_compression_level(png, 3);
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
                 channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    for (int y = 0; y < height; ++y) png_write_row(png, const_cast<png_bytep>(pixels + stride * y));
    png_write_end(png, nullptr);
}

}  // namespace

ImageU8 read_png_rgb(const std::filesystem::path& path) {
    PngRaster r = read_png(path, 3);
    ImageU8 out;
    out.height = r.height;
    out.width = r.width;
    out.channels = 3;
    out.data = std::move(r.pixels);
    return out;
}

Grid<std::uint8_t> read_png_gray(const std::filesystem::path& path) {
    PngRaster r = read_png(path, 1);
    Grid<std::uint8_t> out;
    out.height = r.height;
    out.width = r.width;
    out.data = std::move(r.pixels);
    return out;
}

void write_png_rgb(const std::filesystem::path& path, const ImageU8& image) {
    if (image.channels != 3) throw Error("write_png_rgb: expected 3 channels");
    write_png(path, image.height, image.width, 3, image.data.data());
}

void write_png_gray(const std::filesystem::path& path, const Grid<std::uint8_t>& image) {
    write_png(path, image.height, image.width, 1, image.data.data());
}

}  // namespace tma

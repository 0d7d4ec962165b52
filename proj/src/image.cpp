#include "msa2/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "msa2/tensor.hpp"

namespace msa2 {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct Raw8 {
    int height = 0, width = 0, channels = 0;
    std::vector<std::uint8_t> bytes;
};

Raw8 read_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open " + path.string());
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw DataError("not a PNG file: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("libpng init failed");
    }
    Raw8 out;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("corrupt PNG: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.channels = png_get_channels(png, info);
    out.bytes.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
    rows.resize(out.height);
    for (int y = 0; y < out.height; ++y) rows[y] = out.bytes.data() + static_cast<std::size_t>(y) * out.width * out.channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_png(const std::filesystem::path& path, const Raw8& raw) {
    if (raw.channels != 1 && raw.channels != 3) throw DataError("PNG writer supports 1 or 3 channels");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng init failed");
    }
    std::vector<png_bytep> rows(raw.height);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("PNG write failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, raw.width, raw.height, 8, raw.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    for (int y = 0; y < raw.height; ++y)
        rows[y] = const_cast<png_bytep>(raw.bytes.data() + static_cast<std::size_t>(y) * raw.width * raw.channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace

Image read_image_png(const std::filesystem::path& path) {
    Raw8 raw = read_png(path);
    Image img(raw.height, raw.width, raw.channels);
    for (std::size_t i = 0; i < raw.bytes.size(); ++i) img.pixels[i] = raw.bytes[i] / 255.0;
    return img;
}

void write_image_png(const std::filesystem::path& path, const Image& image) {
    Raw8 raw{image.height, image.width, image.channels, {}};
    raw.bytes.resize(image.pixels.size());
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        const double v = std::round(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0);
        raw.bytes[i] = static_cast<std::uint8_t>(v);
    }
    write_png(path, raw);
}

LabelMap read_mask_png(const std::filesystem::path& path) {
    Raw8 raw = read_png(path);
    if (raw.channels != 1) throw DataError("mask must be single-channel: " + path.string());
    LabelMap m;
    m.height = raw.height;
    m.width = raw.width;
    m.labels = std::move(raw.bytes);
    return m;
}

void write_mask_png(const std::filesystem::path& path, const LabelMap& mask) {
    write_png(path, Raw8{mask.height, mask.width, 1, mask.labels});
}

}  // namespace msa2

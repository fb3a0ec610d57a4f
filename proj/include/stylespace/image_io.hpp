#pragma once

// 8-bit PNG read/write through libpng. Pixels are float in [0,1], planar
// channel-major (C x H x W), which is the layout conv2d expects.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "stylespace/errors.hpp"

namespace stylespace {

struct Image {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;  // channels * height * width

    float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
};

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline unsigned char to_byte(float v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
}

}  // namespace detail

// Grayscale (1 channel) or RGB (3 channels).
inline void write_png(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3) throw ContractError("write_png: need 1 or 3 channels");
    if (img.pixels.size() != img.channels * img.height * img.width || img.height == 0 || img.width == 0) {
        throw DimensionError("write_png: pixel buffer does not match image size");
    }
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng initialisation failed");
    }
    std::vector<unsigned char> row(img.width * img.channels);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("failed writing " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t c = 0; c < img.channels; ++c) row[x * img.channels + c] = detail::to_byte(img.at(c, y, x));
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Reads any PNG and converts it to `channels` (1 or 3) 8-bit channels.
inline Image read_png(const std::string& path, std::size_t channels = 3) {
    if (channels != 1 && channels != 3) throw ContractError("read_png: need 1 or 3 channels");
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open image " + path);
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) throw DataError(path + " is not a PNG");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng initialisation failed");
    }
    // Everything with a destructor lives above setjmp so a libpng longjmp
    // never skips one.
    Image img;
    std::vector<unsigned char> buffer;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("corrupt PNG " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_byte color = png_get_color_type(png, info);
    bool gray = color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA;
    if (channels == 3 && gray) png_set_gray_to_rgb(png);
    if (channels == 1 && !gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.channels = channels;
    std::size_t rowbytes = png_get_rowbytes(png, info);
    if (rowbytes != img.width * channels) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("unsupported PNG layout in " + path);
    }
    buffer.resize(rowbytes * img.height);
    rows.resize(img.height);
    for (std::size_t y = 0; y < img.height; ++y) rows[y] = buffer.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    img.pixels.resize(channels * img.height * img.width);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t c = 0; c < channels; ++c) img.at(c, y, x) = buffer[y * rowbytes + x * channels + c] / 255.f;
        }
    }
    return img;
}

// Bytes as stored: quantizes like write_png so in-memory images can be
// compared with what a reader will see.
inline Image quantized(Image img) {
    for (auto& v : img.pixels) v = detail::to_byte(v) / 255.f;
    return img;
}

}  // namespace stylespace

/**
 * @file   image_io.hpp
 * @brief  8-bit RGB PNG reading and writing (libpng).
 */
#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace gwai {

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// [0,1] -> {0..255}, round half away from zero after clamping.
inline std::uint8_t quantize8(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Interleaved 8-bit RGB raster.
struct Image8 {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> rgb;

    std::uint8_t at(std::size_t c, std::size_t y, std::size_t x) const { return rgb[(y * width + x) * 3 + c]; }
};

template <class T>
Image8 to_image8(const Tensor<T>& chw) {
    if (chw.rank() != 3 || chw.dim(0) != 3) throw ShapeError("image tensor must be [3,H,W], got " + shape_str(chw.shape()));
    Image8 img{chw.dim(2), chw.dim(1), {}};
    const std::size_t hw = img.width * img.height;
    img.rgb.resize(hw * 3);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < hw; ++p) img.rgb[p * 3 + c] = quantize8(static_cast<double>(chw[c * hw + p]));
    return img;
}

template <class T>
Tensor<T> from_image8(const Image8& img) {
    const std::size_t hw = img.width * img.height;
    Tensor<T> t({3, img.height, img.width});
    auto v = t.mutable_data();
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < hw; ++p) v[c * hw + p] = static_cast<T>(img.rgb[p * 3 + c]) / T(255);
    return t;
}

namespace detail {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

/// Error messages are stashed in the user pointer and control returns to
/// the setjmp point, never unwinding through libpng frames.
[[noreturn]] inline void png_fail(png_structp png, png_const_charp msg) {
    if (auto* out = static_cast<std::string*>(png_get_error_ptr(png))) *out = msg;
    png_longjmp(png, 1);
}

inline void png_warn(png_structp, png_const_charp) {}

}  // namespace detail

/// Writes with fixed compression settings and no time chunk, so equal
/// pixels give equal bytes.
inline void write_png(const std::filesystem::path& path, const Image8& img) {
    detail::FilePtr f(std::fopen(path.string().c_str(), "wb"));
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_fail, detail::png_warn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng: out of memory");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng: " + err + " (" + path.string() + ")");
    }
    {
        png_init_io(png, f.get());
        png_set_compression_level(png, 6);
        png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                     PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (std::size_t y = 0; y < img.height; ++y)
            png_write_row(png, img.rgb.data() + y * img.width * 3);
        png_write_end(png, nullptr);
    }
    png_destroy_write_struct(&png, &info);
}

template <class T>
void write_png(const std::filesystem::path& path, const Tensor<T>& chw01) {
    write_png(path, to_image8(chw01));
}

/// Reads any 8-bit PNG, expanding palette/gray and dropping alpha.
inline Image8 read_png_raw(const std::filesystem::path& path) {
    detail::FilePtr f(std::fopen(path.string().c_str(), "rb"));
    if (!f) throw IoError("cannot open " + path.string());
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw IoError(path.string() + " is not a PNG file");
    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_fail, detail::png_warn);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng: out of memory");
    }
    Image8 img;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng: " + err + " (" + path.string() + ")");
    }
    {
        png_init_io(png, f.get());
        png_set_sig_bytes(png, 8);
        png_read_info(png, info);
        const auto bit_depth = png_get_bit_depth(png, info);
        const auto color = png_get_color_type(png, info);
        if (bit_depth == 16) png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if ((color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) && bit_depth < 8)
            png_set_expand_gray_1_2_4_to_8(png);
        if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
        if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        png_read_update_info(png, info);
        img.width = png_get_image_width(png, info);
        img.height = png_get_image_height(png, info);
        if (png_get_rowbytes(png, info) != img.width * 3) png_error(png, "unsupported PNG layout");
        img.rgb.resize(img.width * img.height * 3);
        rows.resize(img.height);
        for (std::size_t y = 0; y < img.height; ++y) rows[y] = img.rgb.data() + y * img.width * 3;
        png_read_image(png, rows.data());
        png_read_end(png, nullptr);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

/// [3,H,W] in [0,1].
template <class T>
Tensor<T> read_png(const std::filesystem::path& path) {
    return from_image8<T>(read_png_raw(path));
}

}  // namespace gwai

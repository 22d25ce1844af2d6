/**
 * @file   resize.hpp
 * @brief  Separable bicubic resampling for the data pipeline.
 *
 * Catmull-Rom kernel (a = -0.5), half-pixel centred coordinates, taps
 * clamped to the image border. Never recorded on the tape.
 */
#pragma once

#include <array>
#include <cmath>

#include "tensor.hpp"

namespace gwai {

/// Keys cubic convolution kernel with a = -0.5.
inline double cubic_kernel(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

namespace detail {

struct CubicTaps {
    std::array<std::ptrdiff_t, 4> index;
    std::array<double, 4> weight;
};

inline std::vector<CubicTaps> cubic_taps(std::size_t in, std::size_t out) {
    std::vector<CubicTaps> taps(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    const auto last = static_cast<std::ptrdiff_t>(in) - 1;
    for (std::size_t o = 0; o < out; ++o) {
        const double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        const double base = std::floor(src);
        const double t = src - base;
        for (int k = 0; k < 4; ++k) {
            const auto idx = static_cast<std::ptrdiff_t>(base) + k - 1;
            taps[o].index[k] = std::clamp<std::ptrdiff_t>(idx, 0, last);
            taps[o].weight[k] = cubic_kernel(t - (k - 1));
        }
    }
    return taps;
}

}  // namespace detail

/// Resizes a [C, H, W] or [B, C, H, W] image to out_h x out_w.
template <class T>
Tensor<T> bicubic_resize(const Tensor<T>& img, std::size_t out_h, std::size_t out_w) {
    if (img.rank() != 3 && img.rank() != 4)
        throw ShapeError("bicubic_resize needs a [C,H,W] or [B,C,H,W] image, got " + shape_str(img.shape()));
    if (out_h < 1 || out_w < 1) throw ShapeError("bicubic_resize: output size must be >= 1");
    const std::size_t H = img.dim(img.rank() - 2), W = img.dim(img.rank() - 1);
    const std::size_t planes = img.numel() / (H * W);
    const auto rows = detail::cubic_taps(H, out_h);
    const auto cols = detail::cubic_taps(W, out_w);

    Shape shape = img.shape();
    shape[shape.size() - 2] = out_h;
    shape[shape.size() - 1] = out_w;
    Tensor<T> out(shape);
    auto o = out.mutable_data();
    auto in = img.data();
    std::vector<double> tmp(H * out_w);
    for (std::size_t p = 0; p < planes; ++p) {
        const T* src = in.data() + p * H * W;
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < out_w; ++j) {
                double acc = 0;
                for (int k = 0; k < 4; ++k) acc += cols[j].weight[k] * static_cast<double>(src[i * W + cols[j].index[k]]);
                tmp[i * out_w + j] = acc;
            }
        T* dst = o.data() + p * out_h * out_w;
        for (std::size_t i = 0; i < out_h; ++i)
            for (std::size_t j = 0; j < out_w; ++j) {
                double acc = 0;
                for (int k = 0; k < 4; ++k) acc += rows[i].weight[k] * tmp[rows[i].index[k] * out_w + j];
                dst[i * out_w + j] = static_cast<T>(acc);
            }
    }
    return out;
}

}  // namespace gwai

/**
 * @file   conv_kernels.hpp
 * @brief  Raw 2-D convolution kernels on NCHW buffers.
 *
 * Two implementations of the same three maps (forward, input gradient,
 * weight gradient): a naive direct loop kept as the reference, and an
 * im2col + GEMM path used for training. Bias is handled by the caller.
 */
#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace gwai::kernels {

struct ConvGeometry {
    std::size_t batch = 1;
    std::size_t in_c = 1, in_h = 1, in_w = 1;
    std::size_t out_c = 1;
    std::size_t k_h = 1, k_w = 1;
    std::size_t stride = 1;
    std::size_t pad = 0;

    std::size_t out_h() const { return (in_h + 2 * pad - k_h) / stride + 1; }
    std::size_t out_w() const { return (in_w + 2 * pad - k_w) / stride + 1; }
    std::size_t in_plane() const { return in_c * in_h * in_w; }
    std::size_t out_plane() const { return out_c * out_h() * out_w(); }
    std::size_t patch() const { return in_c * k_h * k_w; }
    std::size_t weight_size() const { return out_c * patch(); }
};

// ---------------------------------------------------------------------------
// Naive reference.
// ---------------------------------------------------------------------------

template <class T>
void conv_forward_naive(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t o = 0; o < g.out_c; ++o)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    T acc = 0;
                    for (std::size_t c = 0; c < g.in_c; ++c)
                        for (std::size_t u = 0; u < g.k_h; ++u)
                            for (std::size_t v = 0; v < g.k_w; ++v) {
                                const auto r = static_cast<std::ptrdiff_t>(i * g.stride + u) - static_cast<std::ptrdiff_t>(g.pad);
                                const auto s = static_cast<std::ptrdiff_t>(j * g.stride + v) - static_cast<std::ptrdiff_t>(g.pad);
                                if (r < 0 || s < 0 || r >= static_cast<std::ptrdiff_t>(g.in_h) ||
                                    s >= static_cast<std::ptrdiff_t>(g.in_w))
                                    continue;
                                acc += x[((b * g.in_c + c) * g.in_h + r) * g.in_w + s] *
                                       w[((o * g.in_c + c) * g.k_h + u) * g.k_w + v];
                            }
                    y[((b * g.out_c + o) * oh + i) * ow + j] = acc;
                }
}

template <class T>
void conv_backward_input_naive(const ConvGeometry& g, std::span<const T> gy, std::span<const T> w, std::span<T> gx) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    std::fill(gx.begin(), gx.end(), T(0));
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t o = 0; o < g.out_c; ++o)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    const T go = gy[((b * g.out_c + o) * oh + i) * ow + j];
                    for (std::size_t c = 0; c < g.in_c; ++c)
                        for (std::size_t u = 0; u < g.k_h; ++u)
                            for (std::size_t v = 0; v < g.k_w; ++v) {
                                const auto r = static_cast<std::ptrdiff_t>(i * g.stride + u) - static_cast<std::ptrdiff_t>(g.pad);
                                const auto s = static_cast<std::ptrdiff_t>(j * g.stride + v) - static_cast<std::ptrdiff_t>(g.pad);
                                if (r < 0 || s < 0 || r >= static_cast<std::ptrdiff_t>(g.in_h) ||
                                    s >= static_cast<std::ptrdiff_t>(g.in_w))
                                    continue;
                                gx[((b * g.in_c + c) * g.in_h + r) * g.in_w + s] +=
                                    go * w[((o * g.in_c + c) * g.k_h + u) * g.k_w + v];
                            }
                }
}

template <class T>
void conv_backward_weight_naive(const ConvGeometry& g, std::span<const T> x, std::span<const T> gy, std::span<T> gw) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    std::fill(gw.begin(), gw.end(), T(0));
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t o = 0; o < g.out_c; ++o)
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    const T go = gy[((b * g.out_c + o) * oh + i) * ow + j];
                    for (std::size_t c = 0; c < g.in_c; ++c)
                        for (std::size_t u = 0; u < g.k_h; ++u)
                            for (std::size_t v = 0; v < g.k_w; ++v) {
                                const auto r = static_cast<std::ptrdiff_t>(i * g.stride + u) - static_cast<std::ptrdiff_t>(g.pad);
                                const auto s = static_cast<std::ptrdiff_t>(j * g.stride + v) - static_cast<std::ptrdiff_t>(g.pad);
                                if (r < 0 || s < 0 || r >= static_cast<std::ptrdiff_t>(g.in_h) ||
                                    s >= static_cast<std::ptrdiff_t>(g.in_w))
                                    continue;
                                gw[((o * g.in_c + c) * g.k_h + u) * g.k_w + v] +=
                                    go * x[((b * g.in_c + c) * g.in_h + r) * g.in_w + s];
                            }
                }
}

// ---------------------------------------------------------------------------
// im2col + GEMM.
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapRow = Eigen::Map<RowMat<T>>;
template <class T>
using CMapRow = Eigen::Map<const RowMat<T>>;

/// col has shape [patch, oh*ow] for one image.
template <class T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    const auto H = static_cast<std::ptrdiff_t>(g.in_h), W = static_cast<std::ptrdiff_t>(g.in_w);
    const auto pad = static_cast<std::ptrdiff_t>(g.pad);
    for (std::size_t c = 0; c < g.in_c; ++c)
        for (std::size_t u = 0; u < g.k_h; ++u)
            for (std::size_t v = 0; v < g.k_w; ++v) {
                T* row = col + ((c * g.k_h + u) * g.k_w + v) * oh * ow;
                const T* plane = x + c * g.in_h * g.in_w;
                for (std::size_t i = 0; i < oh; ++i) {
                    const auto r = static_cast<std::ptrdiff_t>(i * g.stride + u) - pad;
                    T* dst = row + i * ow;
                    if (r < 0 || r >= H) {
                        std::fill(dst, dst + ow, T(0));
                        continue;
                    }
                    const T* src = plane + r * W;
                    if (g.stride == 1) {
                        const auto off = static_cast<std::ptrdiff_t>(v) - pad;
                        for (std::size_t j = 0; j < ow; ++j) {
                            const auto s = static_cast<std::ptrdiff_t>(j) + off;
                            dst[j] = (s < 0 || s >= W) ? T(0) : src[s];
                        }
                    } else {
                        for (std::size_t j = 0; j < ow; ++j) {
                            const auto s = static_cast<std::ptrdiff_t>(j * g.stride + v) - pad;
                            dst[j] = (s < 0 || s >= W) ? T(0) : src[s];
                        }
                    }
                }
            }
}

template <class T>
void col2im(const ConvGeometry& g, const T* col, T* x) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    const auto H = static_cast<std::ptrdiff_t>(g.in_h), W = static_cast<std::ptrdiff_t>(g.in_w);
    const auto pad = static_cast<std::ptrdiff_t>(g.pad);
    std::fill(x, x + g.in_plane(), T(0));
    for (std::size_t c = 0; c < g.in_c; ++c)
        for (std::size_t u = 0; u < g.k_h; ++u)
            for (std::size_t v = 0; v < g.k_w; ++v) {
                const T* row = col + ((c * g.k_h + u) * g.k_w + v) * oh * ow;
                T* plane = x + c * g.in_h * g.in_w;
                for (std::size_t i = 0; i < oh; ++i) {
                    const auto r = static_cast<std::ptrdiff_t>(i * g.stride + u) - pad;
                    if (r < 0 || r >= H) continue;
                    const T* src = row + i * ow;
                    T* dst = plane + r * W;
                    for (std::size_t j = 0; j < ow; ++j) {
                        const auto s = static_cast<std::ptrdiff_t>(j * g.stride + v) - pad;
                        if (s >= 0 && s < W) dst[s] += src[j];
                    }
                }
            }
}

inline bool is_pointwise(const ConvGeometry& g) { return g.k_h == 1 && g.k_w == 1 && g.stride == 1 && g.pad == 0; }

}  // namespace detail

template <class T>
void conv_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w, std::span<T> y) {
    using namespace detail;
    const std::size_t P = g.out_h() * g.out_w(), K = g.patch();
    std::vector<T> col(is_pointwise(g) ? 0 : K * P);
    CMapRow<T> W(w.data(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(K));
    for (std::size_t b = 0; b < g.batch; ++b) {
        const T* xb = x.data() + b * g.in_plane();
        const T* cp = xb;
        if (!is_pointwise(g)) {
            im2col(g, xb, col.data());
            cp = col.data();
        }
        CMapRow<T> C(cp, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
        MapRow<T> Y(y.data() + b * g.out_plane(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(P));
        Y.noalias() = W * C;
    }
}

template <class T>
void conv_backward_input(const ConvGeometry& g, std::span<const T> gy, std::span<const T> w, std::span<T> gx) {
    using namespace detail;
    const std::size_t P = g.out_h() * g.out_w(), K = g.patch();
    std::vector<T> col(K * P);
    CMapRow<T> W(w.data(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(K));
    for (std::size_t b = 0; b < g.batch; ++b) {
        CMapRow<T> GY(gy.data() + b * g.out_plane(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(P));
        T* gxb = gx.data() + b * g.in_plane();
        if (is_pointwise(g)) {
            MapRow<T> GX(gxb, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
            GX.noalias() = W.transpose() * GY;
            continue;
        }
        MapRow<T> C(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
        C.noalias() = W.transpose() * GY;
        col2im(g, col.data(), gxb);
    }
}

template <class T>
void conv_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> gy, std::span<T> gw) {
    using namespace detail;
    const std::size_t P = g.out_h() * g.out_w(), K = g.patch();
    std::vector<T> col(is_pointwise(g) ? 0 : K * P);
    MapRow<T> GW(gw.data(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(K));
    GW.setZero();
    for (std::size_t b = 0; b < g.batch; ++b) {
        const T* xb = x.data() + b * g.in_plane();
        const T* cp = xb;
        if (!is_pointwise(g)) {
            im2col(g, xb, col.data());
            cp = col.data();
        }
        CMapRow<T> C(cp, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
        CMapRow<T> GY(gy.data() + b * g.out_plane(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(P));
        GW.noalias() += GY * C.transpose();
    }
}

/// out[M,N] = op(a) * op(b), row-major.
template <class T>
void gemm(std::span<const T> a, std::size_t a_rows, std::size_t a_cols, bool trans_a, std::span<const T> b,
          std::size_t b_rows, std::size_t b_cols, bool trans_b, std::span<T> out) {
    using namespace detail;
    CMapRow<T> A(a.data(), static_cast<Eigen::Index>(a_rows), static_cast<Eigen::Index>(a_cols));
    CMapRow<T> B(b.data(), static_cast<Eigen::Index>(b_rows), static_cast<Eigen::Index>(b_cols));
    const auto m = static_cast<Eigen::Index>(trans_a ? a_cols : a_rows);
    const auto n = static_cast<Eigen::Index>(trans_b ? b_rows : b_cols);
    MapRow<T> C(out.data(), m, n);
    if (!trans_a && !trans_b) C.noalias() = A * B;
    else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
    else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
}

}  // namespace gwai::kernels

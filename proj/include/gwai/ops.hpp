/**
 * @file   ops.hpp
 * @brief  Differentiable tensor primitives.
 *
 * Most backward functions are written in terms of other primitives in this
 * file, so gradients can themselves be differentiated (create_graph). The
 * ops marked first-order compute their gradient outside the graph and throw
 * if asked to build a differentiable gradient.
 */
#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "conv_kernels.hpp"
#include "tensor.hpp"

namespace gwai {

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

inline void first_order_only(std::string_view op) {
    if (Tape::current().enabled())
        throw std::logic_error("op '" + std::string(op) + "' does not support differentiable gradients");
}

template <class T>
void check_finite([[maybe_unused]] const Tensor<T>& out, [[maybe_unused]] std::string_view op,
                  [[maybe_unused]] std::initializer_list<const Tensor<T>*> inputs) {
#ifndef NDEBUG
    auto finite = [](const Tensor<T>& t) {
        for (T v : t.data())
            if (!std::isfinite(v)) return false;
        return true;
    };
    if (finite(out)) return;
    for (const auto* in : inputs)
        if (in->defined() && !finite(*in)) return;
    throw std::runtime_error("non-finite output from '" + std::string(op) + "' on finite inputs");
#endif
}

template <class T, class F>
Tensor<T> map_unary(const Tensor<T>& x, F f) {
    Tensor<T> out(x.shape());
    auto o = out.mutable_data();
    auto in = x.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(in[i]);
    return out;
}

template <class T>
void same_shape(const Tensor<T>& a, const Tensor<T>& b, std::string_view op) {
    require(a.shape() == b.shape(),
            std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic.
// ---------------------------------------------------------------------------

template <class T> Tensor<T> neg(const Tensor<T>& x);
template <class T> Tensor<T> scale(const Tensor<T>& x, T c);

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::same_shape(a, b, "add");
    Tensor<T> out(a.shape());
    auto o = out.mutable_data();
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
    out.attach("add", {a, b}, [](const Tensor<T>& g) { return std::vector<Tensor<T>>{g, g}; });
    return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::same_shape(a, b, "sub");
    Tensor<T> out(a.shape());
    auto o = out.mutable_data();
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
    out.attach("sub", {a, b}, [](const Tensor<T>& g) { return std::vector<Tensor<T>>{g, neg(g)}; });
    return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::same_shape(a, b, "mul");
    Tensor<T> out(a.shape());
    auto o = out.mutable_data();
    auto x = a.data(), y = b.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
    out.attach("mul", {a, b}, [a, b](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{mul(g, b), mul(g, a)};
    });
    return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    auto out = detail::map_unary(x, [c](T v) { return v * c; });
    out.attach("scale", {x}, [c](const Tensor<T>& g) { return std::vector<Tensor<T>>{scale(g, c)}; });
    return out;
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
    return scale(x, T(-1));
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
    auto out = detail::map_unary(x, [c](T v) { return v + c; });
    out.attach("add_scalar", {x}, [](const Tensor<T>& g) { return std::vector<Tensor<T>>{g}; });
    return out;
}

/// |x|; the subgradient at 0 is 0.
template <class T>
Tensor<T> abs(const Tensor<T>& x) {
    auto out = detail::map_unary(x, [](T v) { return std::abs(v); });
    if (x.requires_grad()) {
        auto sign = detail::map_unary(x, [](T v) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); });
        out.attach("abs", {x}, [sign](const Tensor<T>& g) { return std::vector<Tensor<T>>{mul(g, sign)}; });
    }
    return out;
}

/// First-order.
template <class T>
Tensor<T> sqrt(const Tensor<T>& x) {
    auto out = detail::map_unary(x, [](T v) { return std::sqrt(v); });
    if (x.requires_grad()) {
        auto d = detail::map_unary(out, [](T v) { return v > 0 ? T(0.5) / v : T(0); });
        out.attach("sqrt", {x}, [d](const Tensor<T>& g) {
            detail::first_order_only("sqrt");
            return std::vector<Tensor<T>>{mul(g, d)};
        });
    }
    detail::check_finite(out, "sqrt", {&x});
    return out;
}

/// First-order.
template <class T>
Tensor<T> log(const Tensor<T>& x) {
    auto out = detail::map_unary(x, [](T v) { return std::log(v); });
    if (x.requires_grad()) {
        auto d = detail::map_unary(x, [](T v) { return T(1) / v; });
        out.attach("log", {x}, [d](const Tensor<T>& g) {
            detail::first_order_only("log");
            return std::vector<Tensor<T>>{mul(g, d)};
        });
    }
    return out;
}

/// First-order.
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    auto out = detail::map_unary(x, [](T v) {
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
    });
    if (x.requires_grad()) {
        auto d = detail::map_unary(out, [](T s) { return s * (T(1) - s); });
        out.attach("sigmoid", {x}, [d](const Tensor<T>& g) {
            detail::first_order_only("sigmoid");
            return std::vector<Tensor<T>>{mul(g, d)};
        });
    }
    return out;
}

/// x if x > 0 else alpha*x. At x == 0 the gradient uses slope alpha.
template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T alpha) {
    if (!(alpha >= T(0) && alpha < T(1))) throw ShapeError("leaky_relu: alpha must lie in [0,1)");
    auto out = detail::map_unary(x, [alpha](T v) { return v > 0 ? v : alpha * v; });
    if (x.requires_grad()) {
        auto slope = detail::map_unary(x, [alpha](T v) { return v > 0 ? T(1) : alpha; });
        out.attach("leaky_relu", {x}, [slope](const Tensor<T>& g) { return std::vector<Tensor<T>>{mul(g, slope)}; });
    }
    return out;
}

/// max(x, 0); gradient 0 at x == 0.
template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return leaky_relu(x, T(0));
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts.
// ---------------------------------------------------------------------------

template <class T> Tensor<T> expand(const Tensor<T>& s, const Shape& shape);

/// Sum of all entries; returns a rank-0 tensor.
template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.data()) acc += v;
    Tensor<T> out(Shape{}, acc);
    auto shape = x.shape();
    out.attach("sum", {x}, [shape](const Tensor<T>& g) { return std::vector<Tensor<T>>{expand(g, shape)}; });
    return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    detail::require(x.numel() > 0, "mean of an empty tensor");
    return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Broadcasts a one-element tensor to `shape`.
template <class T>
Tensor<T> expand(const Tensor<T>& s, const Shape& shape) {
    detail::require(s.numel() == 1, "expand needs a one-element tensor, got " + shape_str(s.shape()));
    Tensor<T> out(shape, s.data()[0]);
    auto src_shape = s.shape();
    out.attach("expand", {s}, [src_shape](const Tensor<T>& g) {
        auto r = sum(g);
        if (!src_shape.empty()) r = Tensor<T>(src_shape, r.vec());
        return std::vector<Tensor<T>>{r};
    });
    return out;
}

template <class T> Tensor<T> expand_per_sample(const Tensor<T>& s, const Shape& shape);

/// [B, ...] -> [B], summing everything but the leading axis.
template <class T>
Tensor<T> sum_per_sample(const Tensor<T>& x) {
    detail::require(x.rank() >= 1, "sum_per_sample needs a batched tensor");
    const std::size_t B = x.dim(0), n = x.numel() / std::max<std::size_t>(B, 1);
    Tensor<T> out(Shape{B});
    auto o = out.mutable_data();
    auto in = x.data();
    for (std::size_t b = 0; b < B; ++b) {
        T acc = 0;
        for (std::size_t i = 0; i < n; ++i) acc += in[b * n + i];
        o[b] = acc;
    }
    auto shape = x.shape();
    out.attach("sum_per_sample", {x},
               [shape](const Tensor<T>& g) { return std::vector<Tensor<T>>{expand_per_sample(g, shape)}; });
    return out;
}

/// [B] -> shape with leading axis B, repeating each entry.
template <class T>
Tensor<T> expand_per_sample(const Tensor<T>& s, const Shape& shape) {
    detail::require(s.rank() == 1 && !shape.empty() && shape[0] == s.dim(0),
                    "expand_per_sample: " + shape_str(s.shape()) + " -> " + shape_str(shape));
    Tensor<T> out(shape);
    const std::size_t B = shape[0], n = out.numel() / std::max<std::size_t>(B, 1);
    auto o = out.mutable_data();
    for (std::size_t b = 0; b < B; ++b) std::fill_n(o.begin() + static_cast<std::ptrdiff_t>(b * n), n, s.data()[b]);
    out.attach("expand_per_sample", {s}, [](const Tensor<T>& g) { return std::vector<Tensor<T>>{sum_per_sample(g)}; });
    return out;
}

template <class T> Tensor<T> broadcast_channels(const Tensor<T>& b, const Shape& shape);

/// [B, C, ...] -> [C].
template <class T>
Tensor<T> channel_sum(const Tensor<T>& x) {
    detail::require(x.rank() >= 2, "channel_sum needs rank >= 2");
    const std::size_t B = x.dim(0), C = x.dim(1), n = x.numel() / std::max<std::size_t>(B * C, 1);
    Tensor<T> out(Shape{C});
    auto o = out.mutable_data();
    auto in = x.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            T acc = 0;
            const T* p = in.data() + (b * C + c) * n;
            for (std::size_t i = 0; i < n; ++i) acc += p[i];
            o[c] += acc;
        }
    auto shape = x.shape();
    out.attach("channel_sum", {x},
               [shape](const Tensor<T>& g) { return std::vector<Tensor<T>>{broadcast_channels(g, shape)}; });
    return out;
}

/// [C] -> [B, C, ...].
template <class T>
Tensor<T> broadcast_channels(const Tensor<T>& b, const Shape& shape) {
    detail::require(b.rank() == 1 && shape.size() >= 2 && shape[1] == b.dim(0),
                    "broadcast_channels: " + shape_str(b.shape()) + " -> " + shape_str(shape));
    Tensor<T> out(shape);
    const std::size_t B = shape[0], C = shape[1], n = out.numel() / std::max<std::size_t>(B * C, 1);
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t c = 0; c < C; ++c)
            std::fill_n(o.begin() + static_cast<std::ptrdiff_t>((i * C + c) * n), n, b.data()[c]);
    out.attach("broadcast_channels", {b}, [](const Tensor<T>& g) { return std::vector<Tensor<T>>{channel_sum(g)}; });
    return out;
}

/// Adds a per-channel bias to a [B, C, ...] tensor.
template <class T>
Tensor<T> bias_add(const Tensor<T>& x, const Tensor<T>& bias) {
    detail::require(x.rank() >= 2 && bias.rank() == 1 && bias.dim(0) == x.dim(1),
                    "bias_add: bias " + shape_str(bias.shape()) + " does not match input " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), C = x.dim(1), n = x.numel() / std::max<std::size_t>(B * C, 1);
    Tensor<T> out(x.shape());
    auto o = out.mutable_data();
    auto in = x.data();
    auto bv = bias.data();
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (i * C + c) * n;
            for (std::size_t k = 0; k < n; ++k) o[base + k] = in[base + k] + bv[c];
        }
    out.attach("bias_add", {x, bias}, [](const Tensor<T>& g) { return std::vector<Tensor<T>>{g, channel_sum(g)}; });
    return out;
}

// ---------------------------------------------------------------------------
// Layout.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    detail::require(numel_of(shape) == x.numel(),
                    "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    Tensor<T> out(shape, x.vec());
    auto orig = x.shape();
    out.attach("reshape", {x}, [orig](const Tensor<T>& g) { return std::vector<Tensor<T>>{reshape(g, orig)}; });
    return out;
}

/// [B, ...] -> [B, N].
template <class T>
Tensor<T> flatten(const Tensor<T>& x) {
    detail::require(x.rank() >= 1, "flatten needs a batched tensor");
    return reshape(x, Shape{x.dim(0), x.numel() / std::max<std::size_t>(x.dim(0), 1)});
}

template <class T> Tensor<T> slice_channels(const Tensor<T>& x, std::size_t offset, std::size_t count);

/// Zero-pads channels: x occupies [offset, offset + C) of `total` channels.
template <class T>
Tensor<T> pad_channels(const Tensor<T>& x, std::size_t offset, std::size_t total) {
    detail::require(x.rank() == 4 && offset + x.dim(1) <= total, "pad_channels: bad range");
    const std::size_t B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> out(Shape{B, total, x.dim(2), x.dim(3)});
    auto o = out.mutable_data();
    auto in = x.data();
    for (std::size_t b = 0; b < B; ++b)
        std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(b * C * hw), C * hw,
                    o.begin() + static_cast<std::ptrdiff_t>((b * total + offset) * hw));
    out.attach("pad_channels", {x}, [offset, C](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{slice_channels(g, offset, C)};
    });
    return out;
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t offset, std::size_t count) {
    detail::require(x.rank() == 4 && offset + count <= x.dim(1), "slice_channels: bad range");
    const std::size_t B = x.dim(0), C = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> out(Shape{B, count, x.dim(2), x.dim(3)});
    auto o = out.mutable_data();
    auto in = x.data();
    for (std::size_t b = 0; b < B; ++b)
        std::copy_n(in.begin() + static_cast<std::ptrdiff_t>((b * C + offset) * hw), count * hw,
                    o.begin() + static_cast<std::ptrdiff_t>(b * count * hw));
    out.attach("slice_channels", {x}, [offset, C](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{pad_channels(g, offset, C)};
    });
    return out;
}

/// Depth-axis concatenation: a fills channels [0, Ca), b fills [Ca, Ca + Cb).
template <class T>
Tensor<T> concat_depth(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require(a.rank() == 4 && b.rank() == 4, "concat_depth needs NCHW tensors");
    detail::require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
                    "concat_depth: spatial/batch mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), hw = a.dim(2) * a.dim(3);
    Tensor<T> out(Shape{B, Ca + Cb, a.dim(2), a.dim(3)});
    auto o = out.mutable_data();
    for (std::size_t i = 0; i < B; ++i) {
        std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(i * Ca * hw), Ca * hw,
                    o.begin() + static_cast<std::ptrdiff_t>(i * (Ca + Cb) * hw));
        std::copy_n(b.data().begin() + static_cast<std::ptrdiff_t>(i * Cb * hw), Cb * hw,
                    o.begin() + static_cast<std::ptrdiff_t>((i * (Ca + Cb) + Ca) * hw));
    }
    out.attach("concat_depth", {a, b}, [Ca, Cb](const Tensor<T>& g) {
        return std::vector<Tensor<T>>{slice_channels(g, 0, Ca), slice_channels(g, Ca, Cb)};
    });
    return out;
}

template <class T> Tensor<T> space_to_depth(const Tensor<T>& x, std::size_t r);

/// [B, C*r*r, H, W] -> [B, C, r*H, r*W] with
/// out(b, c, r*i + dy, r*j + dx) = in(b, c*r*r + dy*r + dx, i, j).
template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, std::size_t r) {
    detail::require(x.rank() == 4 && r >= 1, "pixel_shuffle needs an NCHW tensor");
    detail::require(x.dim(1) % (r * r) == 0, "pixel_shuffle: " + std::to_string(x.dim(1)) +
                                                 " channels not divisible by r^2 = " + std::to_string(r * r));
    const std::size_t B = x.dim(0), C = x.dim(1) / (r * r), H = x.dim(2), W = x.dim(3);
    Tensor<T> out(Shape{B, C, H * r, W * r});
    auto o = out.mutable_data();
    auto in = x.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t dy = 0; dy < r; ++dy)
                for (std::size_t dx = 0; dx < r; ++dx) {
                    const T* src = in.data() + ((b * C * r * r) + c * r * r + dy * r + dx) * H * W;
                    T* dst = o.data() + (b * C + c) * H * r * W * r;
                    for (std::size_t i = 0; i < H; ++i)
                        for (std::size_t j = 0; j < W; ++j) dst[(r * i + dy) * W * r + r * j + dx] = src[i * W + j];
                }
    out.attach("pixel_shuffle", {x}, [r](const Tensor<T>& g) { return std::vector<Tensor<T>>{space_to_depth(g, r)}; });
    return out;
}

/// Exact inverse of pixel_shuffle.
template <class T>
Tensor<T> space_to_depth(const Tensor<T>& x, std::size_t r) {
    detail::require(x.rank() == 4 && r >= 1, "space_to_depth needs an NCHW tensor");
    detail::require(x.dim(2) % r == 0 && x.dim(3) % r == 0, "space_to_depth: spatial size not divisible by r");
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2) / r, W = x.dim(3) / r;
    Tensor<T> out(Shape{B, C * r * r, H, W});
    auto o = out.mutable_data();
    auto in = x.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t dy = 0; dy < r; ++dy)
                for (std::size_t dx = 0; dx < r; ++dx) {
                    T* dst = o.data() + ((b * C * r * r) + c * r * r + dy * r + dx) * H * W;
                    const T* src = in.data() + (b * C + c) * H * r * W * r;
                    for (std::size_t i = 0; i < H; ++i)
                        for (std::size_t j = 0; j < W; ++j) dst[i * W + j] = src[(r * i + dy) * W * r + r * j + dx];
                }
    out.attach("space_to_depth", {x}, [r](const Tensor<T>& g) { return std::vector<Tensor<T>>{pixel_shuffle(g, r)}; });
    return out;
}

// ---------------------------------------------------------------------------
// Convolution.
// ---------------------------------------------------------------------------

struct Conv2dOptions {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

template <class T> Tensor<T> conv2d_input_grad(const Tensor<T>& gy, const Tensor<T>& w, const Shape& x_shape, Conv2dOptions opt);
template <class T> Tensor<T> conv2d_weight_grad(const Tensor<T>& x, const Tensor<T>& gy, const Shape& w_shape, Conv2dOptions opt);

namespace detail {

inline kernels::ConvGeometry conv_geometry(const Shape& x, const Shape& w, Conv2dOptions opt) {
    require(x.size() == 4, "conv2d: input must be [B,Cin,H,W], got " + shape_str(x));
    require(w.size() == 4, "conv2d: weight must be [Cout,Cin,kh,kw], got " + shape_str(w));
    require(x[1] == w[1], "conv2d: input " + shape_str(x) + " has " + std::to_string(x[1]) +
                              " channels but weight " + shape_str(w) + " expects " + std::to_string(w[1]));
    require(opt.stride >= 1, "conv2d: stride must be >= 1");
    require(x[2] + 2 * opt.padding >= w[2] && x[3] + 2 * opt.padding >= w[3],
            "conv2d: kernel " + shape_str(w) + " larger than padded input " + shape_str(x));
    kernels::ConvGeometry g;
    g.batch = x[0];
    g.in_c = x[1];
    g.in_h = x[2];
    g.in_w = x[3];
    g.out_c = w[0];
    g.k_h = w[2];
    g.k_w = w[3];
    g.stride = opt.stride;
    g.pad = opt.padding;
    return g;
}

}  // namespace detail

/// Convolution without bias (cross-correlation, zero padding).
template <class T>
Tensor<T> conv2d_nobias(const Tensor<T>& x, const Tensor<T>& w, Conv2dOptions opt = {}) {
    const auto g = detail::conv_geometry(x.shape(), w.shape(), opt);
    Tensor<T> out(Shape{g.batch, g.out_c, g.out_h(), g.out_w()});
    kernels::conv_forward<T>(g, x.data(), w.data(), out.mutable_data());
    auto xs = x.shape(), ws = w.shape();
    out.attach("conv2d", {x, w}, [x, w, xs, ws, opt](const Tensor<T>& gy) {
        return std::vector<Tensor<T>>{x.requires_grad() ? conv2d_input_grad(gy, w, xs, opt) : Tensor<T>(),
                                      w.requires_grad() ? conv2d_weight_grad(x, gy, ws, opt) : Tensor<T>()};
    });
    detail::check_finite(out, "conv2d", {&x, &w});
    return out;
}

/// Adjoint of conv2d_nobias with respect to its input (a transposed conv).
template <class T>
Tensor<T> conv2d_input_grad(const Tensor<T>& gy, const Tensor<T>& w, const Shape& x_shape, Conv2dOptions opt) {
    const auto g = detail::conv_geometry(x_shape, w.shape(), opt);
    detail::require(gy.shape() == Shape({g.batch, g.out_c, g.out_h(), g.out_w()}),
                    "conv2d_input_grad: upstream gradient has shape " + shape_str(gy.shape()));
    Tensor<T> out(x_shape);
    kernels::conv_backward_input<T>(g, gy.data(), w.data(), out.mutable_data());
    auto ws = w.shape();
    out.attach("conv2d_input_grad", {gy, w}, [gy, w, ws, opt](const Tensor<T>& h) {
        return std::vector<Tensor<T>>{gy.requires_grad() ? conv2d_nobias(h, w, opt) : Tensor<T>(),
                                      w.requires_grad() ? conv2d_weight_grad(h, gy, ws, opt) : Tensor<T>()};
    });
    return out;
}

/// Adjoint of conv2d_nobias with respect to its weight.
template <class T>
Tensor<T> conv2d_weight_grad(const Tensor<T>& x, const Tensor<T>& gy, const Shape& w_shape, Conv2dOptions opt) {
    const auto g = detail::conv_geometry(x.shape(), w_shape, opt);
    detail::require(gy.shape() == Shape({g.batch, g.out_c, g.out_h(), g.out_w()}),
                    "conv2d_weight_grad: upstream gradient has shape " + shape_str(gy.shape()));
    Tensor<T> out(w_shape);
    kernels::conv_backward_weight<T>(g, x.data(), gy.data(), out.mutable_data());
    auto xs = x.shape();
    out.attach("conv2d_weight_grad", {x, gy}, [x, gy, xs, opt](const Tensor<T>& h) {
        return std::vector<Tensor<T>>{x.requires_grad() ? conv2d_input_grad(gy, h, xs, opt) : Tensor<T>(),
                                      gy.requires_grad() ? conv2d_nobias(x, h, opt) : Tensor<T>()};
    });
    return out;
}

/// Convolution with per-output-channel bias.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, Conv2dOptions opt = {}) {
    detail::require(bias.rank() == 1 && bias.dim(0) == w.dim(0),
                    "conv2d: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(w.shape()));
    return bias_add(conv2d_nobias(x, w, opt), bias);
}

// ---------------------------------------------------------------------------
// Dense.
// ---------------------------------------------------------------------------

/// op(a) * op(b) for rank-2 tensors.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false) {
    detail::require(a.rank() == 2 && b.rank() == 2, "matmul needs rank-2 tensors");
    const std::size_t m = trans_a ? a.dim(1) : a.dim(0), ka = trans_a ? a.dim(0) : a.dim(1);
    const std::size_t kb = trans_b ? b.dim(1) : b.dim(0), n = trans_b ? b.dim(0) : b.dim(1);
    detail::require(ka == kb, "matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor<T> out(Shape{m, n});
    kernels::gemm<T>(a.data(), a.dim(0), a.dim(1), trans_a, b.data(), b.dim(0), b.dim(1), trans_b, out.mutable_data());
    out.attach("matmul", {a, b}, [a, b, trans_a, trans_b](const Tensor<T>& g) {
        Tensor<T> ga, gb;
        if (a.requires_grad()) ga = trans_a ? matmul(b, g, trans_b, true) : matmul(g, b, false, !trans_b);
        if (b.requires_grad()) gb = trans_b ? matmul(g, a, true, trans_a) : matmul(a, g, !trans_a, false);
        return std::vector<Tensor<T>>{ga, gb};
    });
    return out;
}

/// y = x W^T + b for x [B, N], W [M, N], b [M].
template <class T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    detail::require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(1),
                    "fully_connected: input " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
    detail::require(b.rank() == 1 && b.dim(0) == w.dim(0), "fully_connected: bias does not match weight");
    return bias_add(matmul(x, w, false, true), b);
}

// ---------------------------------------------------------------------------
// Pooling.
// ---------------------------------------------------------------------------

/// Max pooling without padding. Ties route the gradient to the first
/// maximal entry in row-major window order. First-order.
template <class T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t k, std::size_t stride) {
    detail::require(x.rank() == 4, "max_pool2d needs an NCHW tensor");
    detail::require(k >= 1 && stride >= 1, "max_pool2d: kernel and stride must be >= 1");
    detail::require(k <= x.dim(2) && k <= x.dim(3),
                    "max_pool2d: window " + std::to_string(k) + " larger than input " + shape_str(x.shape()));
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t oh = (H - k) / stride + 1, ow = (W - k) / stride + 1;
    Tensor<T> out(Shape{B, C, oh, ow});
    std::vector<std::size_t> argmax(out.numel());
    auto o = out.mutable_data();
    auto in = x.data();
    for (std::size_t p = 0; p < B * C; ++p)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                std::size_t best = p * H * W + i * stride * W + j * stride;
                for (std::size_t u = 0; u < k; ++u)
                    for (std::size_t v = 0; v < k; ++v) {
                        const std::size_t idx = p * H * W + (i * stride + u) * W + j * stride + v;
                        if (in[idx] > in[best]) best = idx;
                    }
                const std::size_t oi = (p * oh + i) * ow + j;
                o[oi] = in[best];
                argmax[oi] = best;
            }
    auto shape = x.shape();
    out.attach("max_pool2d", {x}, [argmax = std::move(argmax), shape](const Tensor<T>& g) {
        detail::first_order_only("max_pool2d");
        Tensor<T> gx(shape);
        auto d = gx.mutable_data();
        auto gv = g.data();
        for (std::size_t i = 0; i < gv.size(); ++i) d[argmax[i]] += gv[i];
        return std::vector<Tensor<T>>{gx};
    });
    return out;
}

}  // namespace gwai

// Shared test helpers: random tensors, finite differences, reference kernels.
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <gwai/ops.hpp>

namespace gwai::test {

using TD = Tensor<double>;

inline TD random_tensor(Shape s, std::mt19937_64& g, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(numel_of(s));
    for (auto& x : v) x = u(g);
    return TD(std::move(s), std::move(v));
}

inline TD iota_tensor(Shape s, double start = 0.0) {
    std::vector<double> v(numel_of(s));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = start + static_cast<double>(i);
    return TD(std::move(s), std::move(v));
}

/// Central differences of a scalar function of several tensors. Recording
/// stays on so that f may itself take gradients.
inline std::vector<std::vector<double>> numeric_grads(const std::function<double(const std::vector<TD>&)>& f,
                                                      std::vector<TD> xs, double h = 1e-5) {
    std::vector<std::vector<double>> out;
    for (auto& x : xs) {
        std::vector<double> g(x.numel());
        auto v = x.mutable_data();
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double orig = v[i];
            v[i] = orig + h;
            const double up = f(xs);
            v[i] = orig - h;
            const double down = f(xs);
            v[i] = orig;
            g[i] = (up - down) / (2 * h);
        }
        out.push_back(std::move(g));
    }
    return out;
}

inline double rel_err(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-3}); }

/// Max relative error between tape gradients and central differences of
/// loss(xs), where loss maps the tensors to a scalar tensor.
inline double gradient_error(const std::function<TD(const std::vector<TD>&)>& loss, std::vector<TD> xs,
                             double h = 1e-5) {
    for (auto& x : xs) x.set_requires_grad(true);
    auto l = loss(xs);
    auto analytic = grad(l, xs);
    auto numeric = numeric_grads([&](const std::vector<TD>& v) { return loss(v).item(); }, xs, h);
    double worst = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k)
        for (std::size_t i = 0; i < xs[k].numel(); ++i) worst = std::max(worst, rel_err(analytic[k][i], numeric[k][i]));
    return worst;
}

/// Weighted sum with fixed pseudo-random weights, so every output entry
/// contributes a distinct coefficient to the checked gradient.
inline TD probe_sum(const TD& y, std::uint64_t seed = 99) {
    std::mt19937_64 g(seed);
    auto w = random_tensor(y.shape(), g);
    return sum(mul(y, w));
}

/// Straightforward nested-loop convolution used as the reference.
inline std::vector<double> reference_conv(const TD& x, const TD& w, const TD* bias, std::size_t stride,
                                          std::size_t pad) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    const std::size_t OH = (H + 2 * pad - KH) / stride + 1, OW = (W + 2 * pad - KW) / stride + 1;
    std::vector<double> y(B * O * OH * OW, 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t i = 0; i < OH; ++i)
                for (std::size_t j = 0; j < OW; ++j) {
                    double acc = bias ? (*bias)[o] : 0.0;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t u = 0; u < KH; ++u)
                            for (std::size_t v = 0; v < KW; ++v) {
                                const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                                const long s = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                                if (r < 0 || s < 0 || r >= static_cast<long>(H) || s >= static_cast<long>(W)) continue;
                                acc += x[((b * C + c) * H + r) * W + s] * w[((o * C + c) * KH + u) * KW + v];
                            }
                    y[((b * O + o) * OH + i) * OW + j] = acc;
                }
    return y;
}

}  // namespace gwai::test

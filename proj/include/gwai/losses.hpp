/**
 * @file   losses.hpp
 * @brief  Training objectives: content, adversarial, identity, critic with
 *         gradient penalty, the weighted generator total, and the binary
 *         cross-entropy used to pretrain the identity encoder.
 */
#pragma once

#include <algorithm>
#include <functional>
#include <span>

#include "ops.hpp"

namespace gwai {

struct LossWeights {
    double lambda_adv = 0.0;
    double lambda_id = 0.0;
    double lambda_gp = 10.0;

    static constexpr double kAdv = 0.001;
    static constexpr double kId = 0.05;
    static constexpr double kGp = 10.0;

    /// Adversarial phase.
    static LossWeights adversarial() { return {kAdv, kId, kGp}; }
    /// Reconstruction-only phase.
    static LossWeights content_only() { return {0.0, 0.0, kGp}; }

    void validate() const {
        if (lambda_adv < 0 || lambda_id < 0 || lambda_gp < 0) throw ValidationError("loss weights must be >= 0");
    }
};

/// Mean absolute error over every entry (batch, channel, pixel).
template <class T>
Tensor<T> content_loss(const Tensor<T>& sr, const Tensor<T>& gt) {
    if (sr.shape() != gt.shape())
        throw ShapeError("content_loss: SR " + shape_str(sr.shape()) + " vs GT " + shape_str(gt.shape()));
    return mean(abs(sub(sr, gt)));
}

/// -mean(D(I_SR)).
template <class T>
Tensor<T> adversarial_loss(const Tensor<T>& critic_scores) {
    return neg(mean(critic_scores));
}

/// ||e_sr - e_gt||^2 / D, averaged over the batch for [B, D] inputs.
template <class T>
Tensor<T> identity_loss(const Tensor<T>& e_sr, const Tensor<T>& e_gt) {
    if (e_sr.shape() != e_gt.shape())
        throw ShapeError("identity_loss: embedding dims differ, " + shape_str(e_sr.shape()) + " vs " +
                         shape_str(e_gt.shape()));
    auto d = sub(e_sr, e_gt);
    return mean(mul(d, d));
}

template <class T>
using Critic = std::function<Tensor<T>(const Tensor<T>&)>;

/// Interpolates x = eps*gt + (1-eps)*sr per batch element, as a fresh leaf.
template <class T>
Tensor<T> interpolate_samples(const Tensor<T>& sr, const Tensor<T>& gt, std::span<const T> eps) {
    if (sr.shape() != gt.shape()) throw ShapeError("gradient_penalty: SR and GT shapes differ");
    if (sr.rank() < 1 || eps.size() != sr.dim(0)) throw ShapeError("gradient_penalty: need one epsilon per sample");
    for (T e : eps)
        if (!(e >= T(0) && e <= T(1))) throw ValidationError("gradient_penalty: epsilon must lie in [0,1]");
    const std::size_t n = sr.numel() / sr.dim(0);
    Tensor<T> x(sr.shape());
    auto xv = x.mutable_data();
    auto a = sr.data(), b = gt.data();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        const T e = eps[i / n];
        xv[i] = e == T(1) ? b[i] : (e == T(0) ? a[i] : e * b[i] + (T(1) - e) * a[i]);
    }
    return x;
}

/// mean_b (||grad_x D(x_b)||_2 - 1)^2 at the interpolates. The inner
/// gradient is built with create_graph, so the result differentiates
/// through the critic's parameters (double backward).
template <class T>
Tensor<T> gradient_penalty(const Critic<T>& critic, const Tensor<T>& sr, const Tensor<T>& gt, std::span<const T> eps) {
    auto x = interpolate_samples(sr, gt, eps);
    x.set_requires_grad(true);
    const auto scores = critic(x);
    auto g = grad(sum(scores), {x}, /*create_graph=*/true)[0];
    auto norms = sqrt(sum_per_sample(mul(g, g)));
    auto dev = add_scalar(norms, T(-1));
    return mean(mul(dev, dev));
}

/// Per-coordinate central-difference estimate of grad_x sum(D(x)); re-evaluates
/// the critic twice per input entry. For cross-checking only.
template <class T>
Tensor<T> critic_input_gradient_fd(const Critic<T>& critic, const Tensor<T>& x, T h) {
    NoGradGuard guard;
    Tensor<T> g(x.shape());
    auto probe = x.clone();
    auto pv = probe.mutable_data();
    for (std::size_t i = 0; i < pv.size(); ++i) {
        const T orig = pv[i];
        pv[i] = orig + h;
        const T up = sum(critic(probe)).item();
        pv[i] = orig - h;
        const T down = sum(critic(probe)).item();
        pv[i] = orig;
        g.mutable_data()[i] = (up - down) / (T(2) * h);
    }
    return g;
}

/// Penalty value computed from the finite-difference input gradient.
template <class T>
T gradient_penalty_fd(const Critic<T>& critic, const Tensor<T>& sr, const Tensor<T>& gt, std::span<const T> eps, T h) {
    const auto x = interpolate_samples(sr, gt, eps);
    const auto g = critic_input_gradient_fd(critic, x, h);
    const std::size_t B = x.dim(0), n = x.numel() / B;
    T acc = 0;
    for (std::size_t b = 0; b < B; ++b) {
        T s = 0;
        for (std::size_t i = 0; i < n; ++i) s += g[b * n + i] * g[b * n + i];
        const T d = std::sqrt(s) - T(1);
        acc += d * d;
    }
    return acc / static_cast<T>(B);
}

/// L_fake - L_real + lambda_gp * L_gp.
template <class T>
Tensor<T> critic_loss(const Tensor<T>& l_fake, const Tensor<T>& l_real, const Tensor<T>& l_gp, double lambda_gp) {
    return add(sub(l_fake, l_real), scale(l_gp, static_cast<T>(lambda_gp)));
}

/// L_content + lambda_adv * L_adv + lambda_id * L_id.
template <class T>
Tensor<T> total_loss(const Tensor<T>& l_content, const Tensor<T>& l_adv, const Tensor<T>& l_id, const LossWeights& w) {
    return add(add(l_content, scale(l_adv, static_cast<T>(w.lambda_adv))), scale(l_id, static_cast<T>(w.lambda_id)));
}

inline constexpr double kBceClamp = 1e-7;

/// Weighted mean of -[y log p + (1-y) log(1-p)], sum(w l) / sum(w), p clamped
/// to [1e-7, 1-1e-7]. Empty weights give the plain batch mean. First-order.
template <class T>
Tensor<T> bce_loss(const Tensor<T>& p, std::span<const T> labels, std::span<const T> weights = {}) {
    if (p.numel() != labels.size()) throw ShapeError("bce_loss: one label per prediction required");
    if (!weights.empty() && weights.size() != labels.size()) throw ShapeError("bce_loss: one weight per prediction required");
    const T lo = static_cast<T>(kBceClamp), hi = T(1) - static_cast<T>(kBceClamp);
    auto w = [&](std::size_t i) { return weights.empty() ? T(1) : weights[i]; };
    T total = 0;
    for (std::size_t i = 0; i < p.numel(); ++i) total += w(i);
    if (!(total > T(0))) throw ValidationError("bce_loss: weights must have a positive sum");
    T acc = 0;
    std::vector<T> dp(p.numel());
    for (std::size_t i = 0; i < p.numel(); ++i) {
        const T q = std::clamp(p[i], lo, hi);
        const T y = labels[i];
        acc += w(i) * -(y * std::log(q) + (T(1) - y) * std::log(T(1) - q));
        dp[i] = w(i) * (-y / q + (T(1) - y) / (T(1) - q)) / total;
    }
    Tensor<T> out(Shape{}, acc / total);
    Tensor<T> dpt(p.shape(), std::move(dp));
    out.attach("bce_loss", {p}, [dpt](const Tensor<T>& g) {
        detail::first_order_only("bce_loss");
        return std::vector<Tensor<T>>{mul(expand(g, dpt.shape()), dpt)};
    });
    return out;
}

}  // namespace gwai

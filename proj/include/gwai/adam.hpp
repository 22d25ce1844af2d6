/**
 * @file   adam.hpp
 * @brief  Bias-corrected Adam.
 */
#pragma once

#include <cmath>
#include <vector>

#include "tensor.hpp"

namespace gwai {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    /// Whenever the adversarial weight is zero.
    static AdamConfig standard(double lr = 1e-4) { return {lr, 0.9, 0.999, 1e-8}; }
    /// Adversarial phase; the epsilon stays at 1e-8.
    static AdamConfig adversarial(double lr = 1e-4) { return {lr, 0.5, 0.9, 1e-8}; }
};

template <class T>
class Adam {
public:
    Adam(std::vector<Tensor<T>> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
        for (const auto& p : params_) {
            m_.emplace_back(p.numel(), T(0));
            v_.emplace_back(p.numel(), T(0));
        }
    }

    /// One update of every parameter holding a gradient. The step counter
    /// advances once per call.
    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        const auto b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
        const auto step_size = static_cast<T>(cfg_.lr / bc1);
        const auto inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
        const auto eps = static_cast<T>(cfg_.eps);
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = params_[k];
            if (!p.has_grad()) continue;
            const auto g = p.grad();
            if (g.numel() != p.numel()) throw ShapeError("adam: gradient/parameter size mismatch");
            auto pv = p.mutable_data();
            auto gv = g.data();
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < pv.size(); ++i) {
                m[i] = b1 * m[i] + (T(1) - b1) * gv[i];
                v[i] = b2 * v[i] + (T(1) - b2) * gv[i] * gv[i];
                pv[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    std::uint64_t steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }
    const std::vector<T>& first_moment(std::size_t k) const { return m_.at(k); }
    const std::vector<T>& second_moment(std::size_t k) const { return v_.at(k); }

private:
    std::vector<Tensor<T>> params_;
    AdamConfig cfg_;
    std::vector<std::vector<T>> m_, v_;
    std::uint64_t t_ = 0;
};

}  // namespace gwai

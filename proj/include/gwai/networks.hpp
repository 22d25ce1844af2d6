/**
 * @file   networks.hpp
 * @brief  Warper, generator, critic and identity encoder.
 *
 * Every layer reads its weights from a ParamStore by hierarchical name
 * ("gnet.srnet.block3.conv1.w"). The same code runs the full-size layout
 * and the reduced desk/nano layouts; only ArchConfig differs.
 *
 *   Wnet  concat(I_GI, I_LRU) -> log2(sr) x [conv s1, conv s2] (ReLU)
 *         -> conv -> skip(resblocks + conv) -> log2(sr) bare 2x shuffles
 *         -> conv to 2 channels (flow, no activation)
 *   Gnet  SRnet: head conv -> resblocks, fused with GFEnet features after
 *         blocks fi, 2fi, ... -> conv -> + head -> log2(sr) x [conv, 2x
 *         shuffle] -> conv to 3 channels
 *         GFEnet: log2(sr) x [conv s1, conv s2] (ReLU) -> resblocks,
 *         tapped after every fi-th block
 *   Cnet  4 x [conv 5x5 s2, LeakyReLU 0.2] -> fc(1)
 *   Inet  VGG-16: 2,2,3,3,3 convs with 2x2 pools -> fc, fc, fc
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "arch.hpp"
#include "ops.hpp"
#include "params.hpp"
#include "rng.hpp"
#include "warp.hpp"

namespace gwai {

enum class Init : std::uint8_t {
    Zero,
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)); used inside the residual trunks.
    Uniform,
    /// U(-sqrt(6/fan_in), sqrt(6/fan_in)); layers followed by (Leaky)ReLU in
    /// the plain feed-forward stacks.
    UniformRelu,
};

struct ParamSpec {
    std::string name;
    Shape shape;
    Init init = Init::Uniform;
    std::size_t fan_in = 1;
};

namespace detail {

inline void conv_spec(std::vector<ParamSpec>& out, const std::string& name, std::size_t cin, std::size_t cout,
                      std::size_t k, Init init = Init::Uniform) {
    const std::size_t fan = cin * k * k;
    out.push_back({name + ".w", {cout, cin, k, k}, init, fan});
    out.push_back({name + ".b", {cout}, Init::Zero, fan});
}

inline void fc_spec(std::vector<ParamSpec>& out, const std::string& name, std::size_t in, std::size_t outn,
                    Init init) {
    out.push_back({name + ".w", {outn, in}, init, in});
    out.push_back({name + ".b", {outn}, Init::Zero, in});
}

inline void resblock_spec(std::vector<ParamSpec>& out, const std::string& name, std::size_t c) {
    conv_spec(out, name + ".conv1", c, c, 3);
    conv_spec(out, name + ".conv2", c, c, 3);
}

inline std::uint64_t name_hash(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
    return h;
}

}  // namespace detail

inline std::vector<ParamSpec> wnet_specs(const ArchConfig& a) {
    std::vector<ParamSpec> s;
    const std::size_t w = a.wnet_width;
    for (std::size_t d = 0; d < a.scale_steps(); ++d) {
        detail::conv_spec(s, "wnet.down" + std::to_string(d) + ".conv_a", d == 0 ? 6 : w, w, 3, Init::UniformRelu);
        detail::conv_spec(s, "wnet.down" + std::to_string(d) + ".conv_b", w, w, 3, Init::UniformRelu);
    }
    detail::conv_spec(s, "wnet.trunk_in", w, w, 3);
    for (std::size_t k = 0; k < a.n_wnet_blocks; ++k) detail::resblock_spec(s, "wnet.block" + std::to_string(k), w);
    detail::conv_spec(s, "wnet.trunk_out", w, w, 3);
    std::size_t c = w;
    for (std::size_t d = 0; d < a.scale_steps(); ++d) c /= 4;
    detail::conv_spec(s, "wnet.out", c, 2, 3, Init::Zero);
    return s;
}

inline std::vector<ParamSpec> gnet_specs(const ArchConfig& a) {
    std::vector<ParamSpec> s;
    const std::size_t c = a.base_width;
    detail::conv_spec(s, "gnet.srnet.head", 3, c, 3);
    for (std::size_t k = 0; k < a.n_srnet_blocks; ++k)
        detail::resblock_spec(s, "gnet.srnet.block" + std::to_string(k + 1), c);
    if (a.use_guide)
        for (std::size_t f = 0; f < a.n_fusions(); ++f)
            detail::conv_spec(s, "gnet.fuse" + std::to_string(f + 1), 2 * c, c, 3);
    detail::conv_spec(s, "gnet.srnet.body_out", c, c, 3);
    std::size_t in = c;
    for (std::size_t u = 0; u < a.scale_steps(); ++u) {
        detail::conv_spec(s, "gnet.srnet.up" + std::to_string(u), in, a.upscale_width, 3);
        in = a.upscale_width / 4;
    }
    detail::conv_spec(s, "gnet.srnet.out", in, 3, 3, Init::Zero);
    if (a.use_guide) {
        for (std::size_t d = 0; d < a.scale_steps(); ++d) {
            detail::conv_spec(s, "gnet.gfenet.down" + std::to_string(d) + ".conv_a", d == 0 ? 3 : c, c, 3,
                              Init::UniformRelu);
            detail::conv_spec(s, "gnet.gfenet.down" + std::to_string(d) + ".conv_b", c, c, 3, Init::UniformRelu);
        }
        for (std::size_t k = 0; k < a.n_gfenet_blocks; ++k)
            detail::resblock_spec(s, "gnet.gfenet.block" + std::to_string(k + 1), c);
    }
    return s;
}

inline std::size_t critic_final_side(const ArchConfig& a) {
    std::size_t side = a.hr_size;
    for (std::size_t i = 0; i < a.critic_widths.size(); ++i) side = (side + 2 * 2 - 5) / 2 + 1;
    return side;
}

inline std::vector<ParamSpec> cnet_specs(const ArchConfig& a) {
    std::vector<ParamSpec> s;
    std::size_t in = 3;
    for (std::size_t i = 0; i < a.critic_widths.size(); ++i) {
        detail::conv_spec(s, "cnet.conv" + std::to_string(i), in, a.critic_widths[i], 5, Init::UniformRelu);
        in = a.critic_widths[i];
    }
    const std::size_t side = critic_final_side(a);
    detail::fc_spec(s, "cnet.fc", side * side * in, 1, Init::Uniform);
    return s;
}

inline constexpr std::size_t kVggStageConvs[5] = {2, 2, 3, 3, 3};

inline std::vector<ParamSpec> inet_specs(const ArchConfig& a) {
    std::vector<ParamSpec> s;
    std::size_t in = 3;
    for (std::size_t st = 0; st < 5; ++st)
        for (std::size_t k = 0; k < kVggStageConvs[st]; ++k) {
            detail::conv_spec(s, "inet.stage" + std::to_string(st + 1) + ".conv" + std::to_string(k + 1), in,
                              a.inet_widths[st], 3, Init::UniformRelu);
            in = a.inet_widths[st];
        }
    const std::size_t side = a.hr_size / 32;
    const std::size_t d = a.inet_embed_dim;
    detail::fc_spec(s, "inet.fc1", side * side * in, d, Init::UniformRelu);
    detail::fc_spec(s, "inet.fc2", d, d, Init::UniformRelu);
    detail::fc_spec(s, "inet.fc3", d, d, Init::Uniform);
    // Siamese head; only used while pretraining the encoder.
    s.push_back({"inet.siamese.w", {1, d}, Init::Uniform, d});
    s.push_back({"inet.siamese.b", {1}, Init::Zero, d});
    return s;
}

inline std::vector<ParamSpec> model_specs(const ArchConfig& a) {
    a.validate();
    std::vector<ParamSpec> s;
    if (a.use_guide) s = wnet_specs(a);
    for (auto* part : {&gnet_specs, &cnet_specs, &inet_specs}) {
        auto p = (*part)(a);
        s.insert(s.end(), p.begin(), p.end());
    }
    return s;
}

inline std::size_t parameter_count(const std::vector<ParamSpec>& specs) {
    std::size_t n = 0;
    for (const auto& s : specs) n += numel_of(s.shape);
    return n;
}

template <class T>
Tensor<T> init_tensor(const ParamSpec& spec, std::uint64_t seed) {
    Tensor<T> t(spec.shape);
    if (spec.init == Init::Zero) return t;
    const double bound = spec.init == Init::UniformRelu ? std::sqrt(6.0 / static_cast<double>(spec.fan_in))
                                                        : 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
    Rng rng(derive_seed(seed, detail::name_hash(spec.name)));
    for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

template <class T>
ParamStore<T> init_params(const std::vector<ParamSpec>& specs, std::uint64_t seed) {
    ParamStore<T> p;
    for (const auto& s : specs) p.add(s.name, init_tensor<T>(s, seed));
    return p;
}

template <class T>
ParamStore<T> init_params(const ArchConfig& a, std::uint64_t seed) {
    return init_params<T>(model_specs(a), seed);
}

// ---------------------------------------------------------------------------
// Layers.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> conv_layer(const ParamStore<T>& p, const std::string& name, const Tensor<T>& x, std::size_t stride = 1) {
    const auto& w = p.at(name + ".w");
    return conv2d(x, w, p.at(name + ".b"), Conv2dOptions{stride, w.dim(2) / 2});
}

/// x + res_scale * conv(relu(conv(x))), width preserving.
template <class T>
Tensor<T> residual_block(const ParamStore<T>& p, const std::string& name, const Tensor<T>& x, double res_scale) {
    const auto& w1 = p.at(name + ".conv1.w");
    if (x.rank() != 4 || x.dim(1) != w1.dim(1) || w1.dim(0) != w1.dim(1))
        throw ShapeError("residual_block '" + name + "': input " + shape_str(x.shape()) +
                         " does not match block width " + std::to_string(w1.dim(1)));
    auto r = conv_layer(p, name + ".conv2", relu(conv_layer(p, name + ".conv1", x)));
    if (res_scale != 1.0) r = scale(r, static_cast<T>(res_scale));
    return add(x, r);
}

/// Two conv+ReLU layers, the second with stride 2.
template <class T>
Tensor<T> downscale_block(const ParamStore<T>& p, const std::string& name, const Tensor<T>& x) {
    auto y = relu(conv_layer(p, name + ".conv_a", x));
    return relu(conv_layer(p, name + ".conv_b", y, 2));
}

// ---------------------------------------------------------------------------
// Subnetworks.
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void expect_image(const Tensor<T>& x, std::size_t side, const char* what) {
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != side || x.dim(3) != side)
        throw ShapeError(std::string(what) + " must be [B,3," + std::to_string(side) + "," + std::to_string(side) +
                         "], got " + shape_str(x.shape()));
}

}  // namespace detail

template <class T>
FlowField<T> wnet_forward(const ParamStore<T>& p, const ArchConfig& a, const Tensor<T>& guide,
                          const Tensor<T>& lr_upscaled) {
    detail::expect_image(guide, a.hr_size, "Wnet guide");
    detail::expect_image(lr_upscaled, a.hr_size, "Wnet upscaled LR");
    auto x = concat_depth(guide, lr_upscaled);
    for (std::size_t d = 0; d < a.scale_steps(); ++d) x = downscale_block(p, "wnet.down" + std::to_string(d), x);
    x = conv_layer(p, "wnet.trunk_in", x);
    auto trunk = x;
    for (std::size_t k = 0; k < a.n_wnet_blocks; ++k)
        trunk = residual_block(p, "wnet.block" + std::to_string(k), trunk, a.res_scale);
    x = add(x, conv_layer(p, "wnet.trunk_out", trunk));
    for (std::size_t d = 0; d < a.scale_steps(); ++d) x = pixel_shuffle(x, 2);
    return FlowField<T>(conv_layer(p, "wnet.out", x));
}

/// Observations recorded during a generator pass, for tests.
struct GnetTrace {
    std::vector<Shape> fusion_inputs;
    std::vector<std::size_t> fusion_after_block;
};

/// GFEnet features at each fusion point.
template <class T>
std::vector<Tensor<T>> gfenet_forward(const ParamStore<T>& p, const ArchConfig& a, const Tensor<T>& warped) {
    auto x = warped;
    for (std::size_t d = 0; d < a.scale_steps(); ++d) x = downscale_block(p, "gnet.gfenet.down" + std::to_string(d), x);
    std::vector<Tensor<T>> taps;
    for (std::size_t k = 1; k <= a.n_gfenet_blocks; ++k) {
        x = residual_block(p, "gnet.gfenet.block" + std::to_string(k), x, a.res_scale);
        if (k % a.fusion_interval == 0) taps.push_back(x);
    }
    return taps;
}

/// Generator. With `warped` empty the guide branch is skipped (SRnet alone).
template <class T>
Tensor<T> gnet_forward(const ParamStore<T>& p, const ArchConfig& a, const Tensor<T>& lr,
                       const std::optional<Tensor<T>>& warped, GnetTrace* trace = nullptr) {
    detail::expect_image(lr, a.lr_size(), "Gnet LR input");
    std::vector<Tensor<T>> taps;
    if (warped) {
        if (!a.use_guide) throw ValidationError("this generator was built without a guide branch");
        detail::expect_image(*warped, a.hr_size, "Gnet warped guide");
        if (warped->dim(0) != lr.dim(0)) throw ShapeError("Gnet: guide and LR batch sizes differ");
        taps = gfenet_forward(p, a, *warped);
    }
    const auto head = conv_layer(p, "gnet.srnet.head", lr);
    auto x = head;
    std::size_t next = 0;
    for (std::size_t k = 1; k <= a.n_srnet_blocks; ++k) {
        x = residual_block(p, "gnet.srnet.block" + std::to_string(k), x, a.res_scale);
        if (next < taps.size() && k == a.fusion_tap(next)) {
            auto fused = concat_depth(x, taps[next]);
            if (trace) {
                trace->fusion_inputs.push_back(fused.shape());
                trace->fusion_after_block.push_back(k);
            }
            x = conv_layer(p, "gnet.fuse" + std::to_string(next + 1), fused);
            ++next;
        }
    }
    x = add(head, conv_layer(p, "gnet.srnet.body_out", x));
    for (std::size_t u = 0; u < a.scale_steps(); ++u)
        x = pixel_shuffle(conv_layer(p, "gnet.srnet.up" + std::to_string(u), x), 2);
    return conv_layer(p, "gnet.srnet.out", x);
}

/// SRnet alone (guide-free ablation).
template <class T>
Tensor<T> srnet_forward(const ParamStore<T>& p, const ArchConfig& a, const Tensor<T>& lr) {
    return gnet_forward(p, a, lr, std::optional<Tensor<T>>{});
}

/// Wasserstein critic score, [B, 1]. No output activation.
template <class T>
Tensor<T> cnet_forward(const ParamStore<T>& p, const ArchConfig& a, const Tensor<T>& img) {
    detail::expect_image(img, a.hr_size, "Cnet input");
    auto x = img;
    for (std::size_t i = 0; i < a.critic_widths.size(); ++i)
        x = leaky_relu(conv_layer(p, "cnet.conv" + std::to_string(i), x, 2), T(0.2));
    return fully_connected(flatten(x), p.at("cnet.fc.w"), p.at("cnet.fc.b"));
}

/// Identity embedding [B, D]; the last fully connected layer has no ReLU.
template <class T>
Tensor<T> inet_embed(const ParamStore<T>& p, const ArchConfig& a, const Tensor<T>& img) {
    detail::expect_image(img, a.hr_size, "Inet input");
    auto x = img;
    for (std::size_t st = 0; st < 5; ++st) {
        for (std::size_t k = 0; k < kVggStageConvs[st]; ++k)
            x = relu(conv_layer(p, "inet.stage" + std::to_string(st + 1) + ".conv" + std::to_string(k + 1), x));
        x = max_pool2d(x, 2, 2);
    }
    x = flatten(x);
    x = relu(fully_connected(x, p.at("inet.fc1.w"), p.at("inet.fc1.b")));
    x = relu(fully_connected(x, p.at("inet.fc2.w"), p.at("inet.fc2.b")));
    return fully_connected(x, p.at("inet.fc3.w"), p.at("inet.fc3.b"));
}

/// sigmoid(w^T |e1 - e2| + b) from precomputed embeddings, [B, 1].
template <class T>
Tensor<T> siamese_head(const Tensor<T>& e1, const Tensor<T>& e2, const Tensor<T>& w, const Tensor<T>& b) {
    return sigmoid(fully_connected(abs(sub(e1, e2)), w, b));
}

/// Same-identity probability for two image batches through one shared encoder.
template <class T>
Tensor<T> siamese_predict(const ParamStore<T>& p, const ArchConfig& a, const Tensor<T>& x1, const Tensor<T>& x2) {
    return siamese_head(inet_embed(p, a, x1), inet_embed(p, a, x2), p.at("inet.siamese.w"), p.at("inet.siamese.b"));
}

/// Rows i < j of the all-pairs difference operator: +1 at i, -1 at j.
template <class T>
Tensor<T> pair_difference_matrix(std::size_t n) {
    Tensor<T> d({n * (n - 1) / 2, n});
    auto v = d.mutable_data();
    std::size_t row = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j, ++row) {
            v[row * n + i] = T(1);
            v[row * n + j] = T(-1);
        }
    return d;
}

/// siamese_head for every pair i < j of the rows of `e` (row-major over i,
/// then j), [N(N-1)/2, 1].
template <class T>
Tensor<T> siamese_head_all_pairs(const Tensor<T>& e, const Tensor<T>& w, const Tensor<T>& b) {
    return sigmoid(fully_connected(abs(matmul(pair_difference_matrix<T>(e.dim(0)), e)), w, b));
}

/// Same-identity probability for every pair of one image batch; each image
/// is embedded once.
template <class T>
Tensor<T> siamese_all_pairs(const ParamStore<T>& p, const ArchConfig& a, const Tensor<T>& x) {
    return siamese_head_all_pairs(inet_embed(p, a, x), p.at("inet.siamese.w"), p.at("inet.siamese.b"));
}

}  // namespace gwai

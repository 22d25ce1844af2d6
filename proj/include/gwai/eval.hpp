/**
 * @file   eval.hpp
 * @brief  Generator forward pass, PSNR, split evaluation and inference.
 */
#pragma once

#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "checkpoint.hpp"
#include "networks.hpp"
#include "resize.hpp"
#include "synthdata.hpp"
#include "warp.hpp"

namespace gwai {

/// Intermediate tensors of one generator pass.
template <class T>
struct GeneratorOutput {
    Tensor<T> sr;
    FlowField<T> flow;
    Tensor<T> warped;
};

/// Wnet, warp and Gnet for preprocessed inputs; SRnet alone when `guide`
/// is undefined.
template <class T>
GeneratorOutput<T> generate(const ParamStore<T>& p, const ArchConfig& a, const Tensor<T>& lr, const Tensor<T>& guide) {
    GeneratorOutput<T> out;
    if (!guide.defined()) {
        out.sr = srnet_forward(p, a, lr);
        return out;
    }
    const auto up = bicubic_resize(lr.detach(), a.hr_size, a.hr_size);
    out.flow = wnet_forward(p, a, guide, up);
    out.warped = warp_image(guide, out.flow);
    out.sr = gnet_forward(p, a, lr, std::optional<Tensor<T>>(out.warped));
    return out;
}

/// Per-channel affine map c -> scale * x + offset[c] on [B,3,H,W];
/// differentiable in x.
template <class T>
Tensor<T> channel_affine(const Tensor<T>& x, T scale_by, const std::array<double, 3>& offset) {
    Tensor<T> b({3});
    for (std::size_t c = 0; c < 3; ++c) b.mutable_data()[c] = static_cast<T>(offset[c]);
    return bias_add(scale(x, scale_by), b);
}

/// Generator output space [-1,1] -> network input space (v - mean).
template <class T>
Tensor<T> output_to_input_space(const Tensor<T>& x, const ChannelMean& mean) {
    return channel_affine(x, T(0.5), {0.5 - mean[0], 0.5 - mean[1], 0.5 - mean[2]});
}

// ---------------------------------------------------------------------------
// PSNR.
// ---------------------------------------------------------------------------

/// 10 log10(1 / MSE) after quantizing both [0,1] images to 8 bits; +inf for
/// identical images.
template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw ShapeError("psnr: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    if (a.numel() == 0) throw ShapeError("psnr: empty images");
    double se = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = (quantize8(static_cast<double>(a[i])) - quantize8(static_cast<double>(b[i]))) / 255.0;
        se += d * d;
    }
    if (se == 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(static_cast<double>(a.numel()) / se);
}

inline nlohmann::json db_json(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

enum class EvalMode { Full, NoGuide, ShuffledGuide };

inline EvalMode parse_eval_mode(const std::string& s) {
    if (s == "full") return EvalMode::Full;
    if (s == "no-guide") return EvalMode::NoGuide;
    if (s == "shuffled-guide") return EvalMode::ShuffledGuide;
    throw ValidationError("unknown eval mode '" + s + "' (expected full, no-guide or shuffled-guide)");
}

inline std::string to_string(EvalMode m) {
    switch (m) {
        case EvalMode::Full: return "full";
        case EvalMode::NoGuide: return "no-guide";
        case EvalMode::ShuffledGuide: return "shuffled-guide";
    }
    return "full";
}

/// One evaluated image; guide fields are meaningless when has_guide is false.
struct EvalItem {
    std::size_t identity = 0, gt_index = 0;
    bool has_guide = false;
    std::size_t guide_identity = 0, guide_index = 0;
};

struct EvalEntry {
    EvalItem item;
    double psnr = 0;
};

struct EvalReport {
    std::string mode;
    std::string model_id;
    std::string dataset_id;
    std::vector<EvalEntry> entries;
    double mean_psnr = 0;
};

inline nlohmann::json to_json_report(const EvalReport& r) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : r.entries) {
        nlohmann::json j{{"identity", e.item.identity}, {"gt_index", e.item.gt_index}, {"psnr", db_json(e.psnr)}};
        if (e.item.has_guide) {
            j["guide_identity"] = e.item.guide_identity;
            j["guide_index"] = e.item.guide_index;
        }
        entries.push_back(std::move(j));
    }
    return {{"mode", r.mode},
            {"model", r.model_id},
            {"dataset", r.dataset_id},
            {"n", r.entries.size()},
            {"mean_psnr", db_json(r.mean_psnr)},
            {"entries", std::move(entries)}};
}

/// Every image of every identity in `split` serves once as ground truth.
/// Guides are drawn from a stream seeded per (seed, identity, image).
template <class T>
std::vector<EvalItem> eval_items(const Dataset<T>& ds, const std::string& split, EvalMode mode, std::uint64_t seed) {
    std::vector<EvalItem> items;
    const auto gm = mode == EvalMode::Full            ? GuideMode::Normal
                    : mode == EvalMode::ShuffledGuide ? GuideMode::Shuffled
                                                      : GuideMode::None;
    for (auto k : ds.identities(split)) {
        const std::size_t m = ds.images(k).size();
        for (std::size_t j = 0; j < m; ++j) {
            EvalItem it{k, j};
            Rng rng(derive_seed(seed, k, j));
            if (gm == GuideMode::Normal) {
                if (m < 2) throw ValidationError("full-guide evaluation needs >= 2 images per identity");
                auto g = static_cast<std::size_t>(rng.below(m - 1));
                it.has_guide = true;
                it.guide_identity = k;
                it.guide_index = g >= j ? g + 1 : g;
            } else if (gm == GuideMode::Shuffled) {
                std::vector<std::size_t> others;
                for (auto o : ds.identities(split))
                    if (o != k) others.push_back(o);
                if (others.empty()) throw ValidationError("shuffled-guide evaluation needs >= 2 identities in the split");
                it.has_guide = true;
                it.guide_identity = others[rng.below(others.size())];
                it.guide_index = static_cast<std::size_t>(rng.below(ds.images(it.guide_identity).size()));
            }
            items.push_back(it);
        }
    }
    return items;
}

template <class T>
EvalReport evaluate_items(const ModelBundle<T>& model, const Dataset<T>& ds, const std::vector<EvalItem>& items,
                          const std::string& mode_name, std::size_t batch_size = 8) {
    if (items.empty()) throw ValidationError("evaluation split is empty");
    if (ds.hr_size() != model.arch.hr_size)
        throw ValidationError("dataset hr_size " + std::to_string(ds.hr_size()) + " does not match model hr_size " +
                              std::to_string(model.arch.hr_size));
    const auto& mean = model.meta.mean ? model.meta.mean : ds.mean();
    EvalReport r;
    r.mode = mode_name;
    NoGradGuard no_grad;
    for (std::size_t s = 0; s < items.size(); s += batch_size) {
        const std::size_t e = std::min(items.size(), s + batch_size);
        std::vector<Tensor<T>> lr, gi;
        for (std::size_t i = s; i < e; ++i) {
            const auto& it = items[i];
            if (it.has_guide && !model.arch.use_guide)
                throw ValidationError("model has no guide branch; use mode no-guide");
            lr.push_back(make_lr_input(ds.image(it.identity, it.gt_index), model.arch.sr_factor, mean));
            if (it.has_guide) gi.push_back(preprocess_input(ds.image(it.guide_identity, it.guide_index), mean));
        }
        if (!gi.empty() && gi.size() != lr.size()) throw ValidationError("evaluation batch mixes guided and guide-free items");
        const auto sr = deprocess_output(
            generate(model.params, model.arch, stack<T>(lr), gi.empty() ? Tensor<T>() : stack<T>(gi)).sr);
        for (std::size_t i = s; i < e; ++i)
            r.entries.push_back({items[i], psnr(unstack(sr, i - s), ds.image(items[i].identity, items[i].gt_index))});
        Tape::current().clear();
    }
    double acc = 0;
    for (const auto& en : r.entries) acc += en.psnr;
    r.mean_psnr = acc / static_cast<double>(r.entries.size());
    return r;
}

template <class T>
EvalReport evaluate(const ModelBundle<T>& model, const Dataset<T>& ds, const std::string& split, EvalMode mode,
                    std::uint64_t seed) {
    return evaluate_items(model, ds, eval_items(ds, split, mode, seed), to_string(mode));
}

/// Fraction of `n_pairs` same/different pairs from `split` the siamese head
/// classifies correctly at threshold 0.5; half the pairs are same-identity
/// on average.
template <class T>
double pair_accuracy(const ModelBundle<T>& model, const Dataset<T>& ds, const std::string& split, std::size_t n_pairs,
                     std::uint64_t seed, std::size_t batch_size = 16) {
    if (n_pairs == 0) throw ValidationError("pair_accuracy needs n_pairs > 0");
    const auto& pool = ds.identities(split);
    Rng rng(seed);
    NoGradGuard no_grad;
    std::size_t correct = 0;
    for (std::size_t s = 0; s < n_pairs; s += batch_size) {
        const std::size_t n = std::min(n_pairs - s, batch_size);
        std::vector<Tensor<T>> xa, xb;
        std::vector<bool> same;
        for (std::size_t i = 0; i < n; ++i) {
            auto pr = sample_pair(ds, pool, rng);
            xa.push_back(std::move(pr.a));
            xb.push_back(std::move(pr.b));
            same.push_back(pr.label == T(1));
        }
        const auto prob = siamese_predict(model.params, model.arch, stack<T>(xa), stack<T>(xb));
        for (std::size_t i = 0; i < n; ++i) correct += (prob[i] >= T(0.5)) == same[i];
        Tape::current().clear();
    }
    return static_cast<double>(correct) / static_cast<double>(n_pairs);
}

/// Mean absolute difference per pixel and channel to the ground truth.
struct WarpL1 {
    double warped = 0;
    double unwarped = 0;
};

/// Guide-to-ground-truth L1 before and after warping, guides chosen as in
/// full-mode evaluation.
template <class T>
WarpL1 warp_l1(const ModelBundle<T>& model, const Dataset<T>& ds, const std::string& split, std::uint64_t seed,
               std::size_t batch_size = 8) {
    if (!model.arch.use_guide) throw ValidationError("warp_l1 needs a model with a guide branch");
    const auto items = eval_items(ds, split, EvalMode::Full, seed);
    if (items.empty()) throw ValidationError("evaluation split is empty");
    const auto& mean = model.meta.mean ? model.meta.mean : ds.mean();
    const auto& a = model.arch;
    NoGradGuard no_grad;
    WarpL1 r;
    double n = 0;
    for (std::size_t s = 0; s < items.size(); s += batch_size) {
        const std::size_t e = std::min(items.size(), s + batch_size);
        std::vector<Tensor<T>> lr, gi, gt;
        for (std::size_t i = s; i < e; ++i) {
            const auto& it = items[i];
            lr.push_back(make_lr_input(ds.image(it.identity, it.gt_index), a.sr_factor, mean));
            gi.push_back(preprocess_input(ds.image(it.guide_identity, it.guide_index), mean));
            gt.push_back(preprocess_input(ds.image(it.identity, it.gt_index), mean));
        }
        const auto guide = stack<T>(gi), truth = stack<T>(gt);
        const auto up = bicubic_resize(stack<T>(lr), a.hr_size, a.hr_size);
        const auto warped = warp_image(guide, wnet_forward(model.params, a, guide, up));
        for (std::size_t k = 0; k < truth.numel(); ++k) {
            r.warped += std::abs(static_cast<double>(warped[k]) - static_cast<double>(truth[k]));
            r.unwarped += std::abs(static_cast<double>(guide[k]) - static_cast<double>(truth[k]));
        }
        n += static_cast<double>(truth.numel());
        Tape::current().clear();
    }
    r.warped /= n;
    r.unwarped /= n;
    return r;
}

// ---------------------------------------------------------------------------
// Inference.
// ---------------------------------------------------------------------------

/// SR image in [0,1], [3, hr, hr], from [0,1] inputs.
template <class T>
Tensor<T> infer(const ModelBundle<T>& model, const Tensor<T>& lr01, const std::optional<std::type_identity_t<Tensor<T>>>& guide01,
                EvalMode mode) {
    const auto& a = model.arch;
    if (mode == EvalMode::ShuffledGuide) throw ValidationError("infer supports modes full and no-guide");
    if (lr01.rank() != 3 || lr01.dim(0) != 3 || lr01.dim(1) != a.lr_size() || lr01.dim(2) != a.lr_size())
        throw ValidationError("LR image must be " + std::to_string(a.lr_size()) + "x" + std::to_string(a.lr_size()) +
                              " RGB, got " + shape_str(lr01.shape()));
    if (!model.meta.mean) throw ValidationError("model has no preprocessing mean; train it on a dataset first");
    Tensor<T> guide;
    if (mode == EvalMode::Full && a.use_guide) {
        if (!guide01) throw ValidationError("this model needs a guide image (--guide), or use --mode no-guide");
        if (guide01->shape() != Shape{3, a.hr_size, a.hr_size})
            throw ValidationError("guide image must be " + std::to_string(a.hr_size) + "x" + std::to_string(a.hr_size) +
                                  " RGB, got " + shape_str(guide01->shape()));
        guide = reshape(preprocess_input(*guide01, model.meta.mean), {1, 3, a.hr_size, a.hr_size});
    } else if (mode == EvalMode::NoGuide && a.use_guide) {
        throw ValidationError("mode no-guide needs a model trained without a guide branch");
    }
    NoGradGuard no_grad;
    const auto lr = reshape(preprocess_input(lr01, model.meta.mean), {1, 3, a.lr_size(), a.lr_size()});
    auto sr = deprocess_output(generate(model.params, a, lr, guide).sr);
    Tape::current().clear();
    return unstack(sr, 0);
}

}  // namespace gwai

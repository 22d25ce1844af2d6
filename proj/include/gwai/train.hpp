/**
 * @file   train.hpp
 * @brief  Stage configuration and the four training loops.
 *
 * Stages, normally run in this order on one bundle:
 *
 *     inet-pretrain   Siamese identity classifier, cross-entropy
 *     wnet-pretrain   L1 between the warped guide and the ground truth
 *     content         Wnet + Gnet on L1 only
 *     adversarial     5 critic updates per generator update, Inet frozen
 *
 * Every step appends one JSON object to the log. No wall-clock values are
 * logged, so a fixed seed reproduces the log byte for byte.
 */
#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adam.hpp"
#include "checkpoint.hpp"
#include "eval.hpp"
#include "losses.hpp"
#include "networks.hpp"
#include "synthdata.hpp"
#include "warp.hpp"

namespace gwai {

enum class Stage { InetPretrain, WnetPretrain, Content, Adversarial };

inline Stage parse_stage(const std::string& s) {
    if (s == "inet-pretrain") return Stage::InetPretrain;
    if (s == "wnet-pretrain") return Stage::WnetPretrain;
    if (s == "content") return Stage::Content;
    if (s == "adversarial") return Stage::Adversarial;
    throw ValidationError("unknown stage '" + s + "' (expected inet-pretrain, wnet-pretrain, content or adversarial)");
}

inline std::string to_string(Stage s) {
    switch (s) {
        case Stage::InetPretrain: return "inet-pretrain";
        case Stage::WnetPretrain: return "wnet-pretrain";
        case Stage::Content: return "content";
        case Stage::Adversarial: return "adversarial";
    }
    return "content";
}

inline constexpr std::size_t kDefaultCriticSteps = 5;
inline constexpr std::size_t kDefaultPatience = 10;

struct StageConfig {
    Stage stage = Stage::Content;
    double lr = 1e-4;
    std::size_t batch_size = 4;  // inet-pretrain: identities per batch, two images each
    std::size_t steps = 100;
    LossWeights weights = LossWeights::content_only();
    AdamConfig adam = AdamConfig::standard();
    std::size_t n_critic = kDefaultCriticSteps;
    std::uint64_t seed = 0;
    /// Write <out>/<stage>_step<N>.gwai every this many steps (0: end only).
    std::size_t checkpoint_every = 0;
    /// Validation PSNR every this many steps (0: never); stops after
    /// `patience` evaluations without improvement and keeps the best model.
    std::size_t eval_every = 0;
    std::size_t patience = kDefaultPatience;
    std::string train_split = "train";
    std::string val_split = "val";
    /// Architecture used when the output directory holds no model yet.
    ArchConfig arch = ArchConfig::desk();
    /// Seed for fresh parameter initialization.
    std::uint64_t init_seed = 0;

    /// Stage presets: betas (0.5, 0.9) and the standard loss weights for the
    /// adversarial stage, (0.9, 0.999) and zero weights otherwise.
    static StageConfig defaults(Stage s) {
        StageConfig c;
        c.stage = s;
        if (s == Stage::Adversarial) {
            c.weights = LossWeights::adversarial();
            c.adam = AdamConfig::adversarial(c.lr);
        }
        return c;
    }

    void validate() const {
        auto fail = [](const std::string& m) { throw ValidationError("StageConfig: " + m); };
        weights.validate();
        arch.validate();
        if (!(lr > 0)) fail("lr must be > 0");
        if (batch_size == 0) fail("batch_size must be > 0");
        if (stage == Stage::InetPretrain && batch_size < 2) fail("inet-pretrain needs batch_size >= 2 identities");
        if (n_critic == 0) fail("n_critic must be > 0");
        if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0))
            fail("adam betas must lie in [0,1) and eps must be > 0");
        if (stage == Stage::Content && (weights.lambda_adv != 0 || weights.lambda_id != 0))
            fail("the content stage trains on L1 only; lambda_adv and lambda_id must be 0");
        if (eval_every > 0 && patience == 0) fail("patience must be > 0");
    }
};

/// Keys absent from `j` keep the stage defaults. "stage" in the file must
/// agree with `stage` when both are given.
inline StageConfig stage_config_from_json(const nlohmann::json& j, std::optional<Stage> stage = std::nullopt) {
    std::optional<Stage> named;
    if (j.contains("stage")) named = parse_stage(j.at("stage").get<std::string>());
    if (named && stage && *named != *stage)
        throw ValidationError("config is for stage " + to_string(*named) + " but stage " + to_string(*stage) + " was requested");
    const Stage s = stage ? *stage : named ? *named : throw ValidationError("config names no stage");
    auto c = StageConfig::defaults(s);
    try {
        auto take = [&](const char* key, auto& field) {
            if (j.contains(key)) j.at(key).get_to(field);
        };
        take("lr", c.lr);
        c.adam.lr = c.lr;
        take("batch_size", c.batch_size);
        take("steps", c.steps);
        take("n_critic", c.n_critic);
        take("seed", c.seed);
        take("checkpoint_every", c.checkpoint_every);
        take("eval_every", c.eval_every);
        take("patience", c.patience);
        take("train_split", c.train_split);
        take("val_split", c.val_split);
        take("init_seed", c.init_seed);
        if (j.contains("weights")) {
            const auto& w = j.at("weights");
            if (w.contains("lambda_adv")) w.at("lambda_adv").get_to(c.weights.lambda_adv);
            if (w.contains("lambda_id")) w.at("lambda_id").get_to(c.weights.lambda_id);
            if (w.contains("lambda_gp")) w.at("lambda_gp").get_to(c.weights.lambda_gp);
        }
        if (j.contains("adam")) {
            const auto& a = j.at("adam");
            if (a.contains("beta1")) a.at("beta1").get_to(c.adam.beta1);
            if (a.contains("beta2")) a.at("beta2").get_to(c.adam.beta2);
            if (a.contains("eps")) a.at("eps").get_to(c.adam.eps);
        }
        if (j.contains("arch")) c.arch = arch_from_json(j.at("arch"), c.arch);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

inline nlohmann::json stage_config_to_json(const StageConfig& c) {
    return {{"stage", to_string(c.stage)},
            {"lr", c.lr},
            {"batch_size", c.batch_size},
            {"steps", c.steps},
            {"weights", {{"lambda_adv", c.weights.lambda_adv}, {"lambda_id", c.weights.lambda_id}, {"lambda_gp", c.weights.lambda_gp}}},
            {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
            {"n_critic", c.n_critic},
            {"seed", c.seed},
            {"checkpoint_every", c.checkpoint_every},
            {"eval_every", c.eval_every},
            {"patience", c.patience},
            {"train_split", c.train_split},
            {"val_split", c.val_split},
            {"arch", c.arch},
            {"init_seed", c.init_seed}};
}

// ---------------------------------------------------------------------------
// Logging and results.
// ---------------------------------------------------------------------------

/// Append-only JSON-lines sink; optional file and optional observer.
class MetricsLog {
public:
    MetricsLog() = default;
    explicit MetricsLog(const std::filesystem::path& file) : out_(std::make_unique<std::ofstream>(file, std::ios::app)) {
        if (!*out_) throw IoError("cannot open log " + file.string());
    }

    void on_record(std::function<void(const nlohmann::json&)> f) { observer_ = std::move(f); }

    void write(const nlohmann::json& j) {
        if (out_) {
            *out_ << j.dump() << '\n';
            out_->flush();
        }
        if (observer_) observer_(j);
    }

private:
    std::unique_ptr<std::ofstream> out_;
    std::function<void(const nlohmann::json&)> observer_;
};

struct StageResult {
    std::size_t steps_run = 0;
    std::size_t critic_steps = 0;
    std::size_t generator_steps = 0;
    bool stopped_early = false;
    /// Name and best value of the stage's validation metric.
    std::string val_metric;
    std::optional<double> best_val;
    std::vector<std::filesystem::path> checkpoints;
};

struct StageOptions {
    /// Intermediate checkpoints go here; none are written when empty.
    std::optional<std::filesystem::path> out_dir;
    MetricsLog* log = nullptr;
};

namespace detail {

template <class T>
double item(const Tensor<T>& t) {
    return static_cast<double>(t.item());
}

/// Draws `n` triples from identities of one split.
template <class T>
TripleBatch<T> draw_batch(const Dataset<T>& ds, const std::vector<std::size_t>& pool, std::size_t n, Rng& rng,
                          GuideMode mode, std::size_t sr) {
    std::vector<TrainingTriple<T>> ts;
    for (std::size_t i = 0; i < n; ++i) ts.push_back(sample_triple(ds, pool[rng.below(pool.size())], rng, mode, sr));
    return collate(ts);
}

/// Ground truth moved from [-1,1] into the network input space.
template <class T>
Tensor<T> gt_in_input_space(const Tensor<T>& gt, const ChannelMean& mean) {
    return output_to_input_space(gt, mean);
}

template <class T>
std::vector<Tensor<T>> trainable(ParamStore<T>& p, std::initializer_list<const char*> prefixes) {
    std::vector<Tensor<T>> out;
    for (const char* pre : prefixes)
        for (auto& t : p.group(pre)) out.push_back(t);
    return out;
}

}  // namespace detail

/// Stage validation metric on the config's validation split: pair accuracy
/// for inet-pretrain, warped-guide L1 for wnet-pretrain, full-guide PSNR
/// otherwise.
struct ValMetric {
    std::string name;
    double value = 0;
    bool higher_is_better = true;
};

inline constexpr std::size_t kValidationPairs = 256;

template <class T>
ValMetric validation_metric(const ModelBundle<T>& model, const Dataset<T>& ds, const StageConfig& cfg) {
    const auto seed = derive_seed(cfg.seed, 0x7A1);
    switch (cfg.stage) {
        case Stage::InetPretrain:
            return {"val_accuracy", pair_accuracy(model, ds, cfg.val_split, kValidationPairs, seed), true};
        case Stage::WnetPretrain: return {"val_warp_l1", warp_l1(model, ds, cfg.val_split, seed).warped, false};
        default: break;
    }
    const auto mode = model.arch.use_guide ? EvalMode::Full : EvalMode::NoGuide;
    return {"val_psnr", evaluate(model, ds, cfg.val_split, mode, seed).mean_psnr, true};
}

/// Runs one stage on `model` in place. Preconditions are checked before
/// any parameter changes; with steps == 0 the bundle is left untouched.
template <class T>
StageResult run_stage(ModelBundle<T>& model, const Dataset<T>& ds, const StageConfig& cfg, const StageOptions& opt = {}) {
    cfg.validate();
    const auto& a = model.arch;
    if (ds.hr_size() != a.hr_size)
        throw ValidationError("dataset hr_size " + std::to_string(ds.hr_size()) + " does not match model hr_size " +
                              std::to_string(a.hr_size));
    check_params(a, model.params);
    const auto& pool = ds.identities(cfg.train_split);
    if (pool.empty()) throw ValidationError("split '" + cfg.train_split + "' has no identities");
    if (!ds.mean()) throw ValidationError("dataset has no mean.json; regenerate it with gen-data");
    if (model.meta.mean && *model.meta.mean != *ds.mean())
        throw ValidationError("dataset mean differs from the mean this model was trained with");
    if (cfg.stage == Stage::InetPretrain && pool.size() < 2)
        throw ValidationError("inet-pretrain needs >= 2 training identities");
    if (cfg.stage == Stage::WnetPretrain && !a.use_guide) throw ValidationError("wnet-pretrain needs a guided model");
    if (cfg.stage == Stage::Adversarial && !model.meta.has_completed(to_string(Stage::InetPretrain)))
        throw ValidationError("the adversarial stage needs a pretrained Inet; run inet-pretrain first");
    if (cfg.stage == Stage::Adversarial && model.params.group("cnet.").empty())
        throw ValidationError("the adversarial stage needs critic parameters");
    if (cfg.eval_every > 0 && ds.identities(cfg.val_split).empty())
        throw ValidationError("early stopping needs a non-empty '" + cfg.val_split + "' split");

    StageResult res;
    if (cfg.steps == 0) return res;

    model.meta.mean = ds.mean();
    const ChannelMean cmean = *model.meta.mean;
    const std::string stage_name = to_string(cfg.stage);
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(cfg.stage) + 1));
    auto& p = model.params;
    const std::size_t B = cfg.batch_size, sr = a.sr_factor;
    const GuideMode gmode = a.use_guide ? GuideMode::Normal : GuideMode::None;

    // Only the parameters optimized in this stage carry gradients.
    for (auto& [n, t] : p) t.set_requires_grad(false);
    auto enable = [&](std::initializer_list<const char*> prefixes) {
        for (const char* pre : prefixes) p.set_trainable(pre, true);
        return detail::trainable(p, prefixes);
    };

    std::optional<Adam<T>> gen_opt, critic_opt;
    switch (cfg.stage) {
        case Stage::InetPretrain: gen_opt.emplace(enable({"inet."}), cfg.adam); break;
        case Stage::WnetPretrain: gen_opt.emplace(enable({"wnet."}), cfg.adam); break;
        case Stage::Content: gen_opt.emplace(enable({"wnet.", "gnet."}), cfg.adam); break;
        case Stage::Adversarial:
            gen_opt.emplace(enable({"wnet.", "gnet."}), cfg.adam);
            critic_opt.emplace(enable({"cnet."}), cfg.adam);
            break;
    }

    auto log = [&](nlohmann::json j) {
        if (opt.log) opt.log->write(j);
    };
    auto save_snapshot = [&](std::size_t step) {
        if (!opt.out_dir) return;
        auto path = *opt.out_dir / (stage_name + "_step" + std::to_string(step) + ".gwai");
        auto snap = model.clone();
        snap.meta.stage = stage_name;
        snap.meta.step = step;
        save_bundle(snap, path);
        res.checkpoints.push_back(path);
    };

    std::optional<ParamStore<T>> best;
    std::size_t since_best = 0;
    const Critic<T> critic = [&](const Tensor<T>& x) { return cnet_forward(p, a, x); };

    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        nlohmann::json rec{{"stage", stage_name}, {"step", step}};
        switch (cfg.stage) {
            case Stage::InetPretrain: {
                // B identities x 2 images, every pair scored; positives and
                // negatives each carry half the loss
                const auto batch = sample_identity_batch(ds, pool, B, rng);
                const auto prob = siamese_all_pairs(p, a, stack<T>(batch.images));
                const std::size_t n = batch.images.size();
                const std::size_t n_pos = B, n_neg = n * (n - 1) / 2 - B;
                std::vector<T> labels, weights;
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = i + 1; j < n; ++j) {
                        const bool same = i / 2 == j / 2;
                        labels.push_back(same ? T(1) : T(0));
                        weights.push_back(static_cast<T>(0.5 / static_cast<double>(same ? n_pos : n_neg)));
                    }
                const auto loss = bce_loss(prob, std::span<const T>(labels), std::span<const T>(weights));
                double acc = 0;
                for (std::size_t i = 0; i < labels.size(); ++i)
                    acc += ((prob[i] >= T(0.5)) == (labels[i] == T(1))) ? static_cast<double>(weights[i]) : 0.0;
                gen_opt->zero_grad();
                backward(loss);
                gen_opt->step();
                rec["loss"] = detail::item(loss);
                rec["accuracy"] = acc;
                break;
            }
            case Stage::WnetPretrain: {
                const auto b = detail::draw_batch(ds, pool, B, rng, GuideMode::Normal, sr);
                const auto up = bicubic_resize(b.lr, a.hr_size, a.hr_size);
                const auto warped = warp_image(b.guide, wnet_forward(p, a, b.guide, up));
                const auto target = detail::gt_in_input_space(b.gt, cmean);
                const auto loss = content_loss(warped, target);
                gen_opt->zero_grad();
                backward(loss);
                gen_opt->step();
                rec["loss"] = detail::item(loss);
                {
                    NoGradGuard ng;
                    rec["l1_unwarped"] = detail::item(content_loss(b.guide, target));
                }
                break;
            }
            case Stage::Content: {
                const auto b = detail::draw_batch(ds, pool, B, rng, gmode, sr);
                const auto loss = content_loss(generate(p, a, b.lr, b.guide).sr, b.gt);
                gen_opt->zero_grad();
                backward(loss);
                gen_opt->step();
                rec["loss"] = detail::item(loss);
                rec["content"] = detail::item(loss);
                break;
            }
            case Stage::Adversarial: {
                double w_est = 0, last_critic = 0, last_gp = 0;
                for (std::size_t c = 0; c < cfg.n_critic; ++c) {
                    const auto b = detail::draw_batch(ds, pool, B, rng, gmode, sr);
                    Tensor<T> fake;
                    {
                        NoGradGuard ng;
                        fake = generate(p, a, b.lr, b.guide).sr;
                    }
                    std::vector<T> eps(B);
                    for (auto& e : eps) e = static_cast<T>(rng.uniform());
                    const auto l_fake = mean(critic(fake));
                    const auto l_real = mean(critic(b.gt));
                    const auto l_gp = gradient_penalty(critic, fake, b.gt, std::span<const T>(eps));
                    const auto loss = critic_loss(l_fake, l_real, l_gp, cfg.weights.lambda_gp);
                    critic_opt->zero_grad();
                    backward(loss);
                    critic_opt->step();
                    ++res.critic_steps;
                    w_est = detail::item(l_real) - detail::item(l_fake);
                    last_critic = detail::item(loss);
                    last_gp = detail::item(l_gp);
                    log({{"stage", stage_name},
                         {"step", step},
                         {"event", "critic"},
                         {"critic_step", res.critic_steps},
                         {"fake", detail::item(l_fake)},
                         {"real", detail::item(l_real)},
                         {"gradient_penalty", last_gp},
                         {"critic_loss", last_critic},
                         {"lambda_gp", cfg.weights.lambda_gp}});
                    Tape::current().clear();
                }
                const auto b = detail::draw_batch(ds, pool, B, rng, gmode, sr);
                const auto out = generate(p, a, b.lr, b.guide).sr;
                const auto l_content = content_loss(out, b.gt);
                const auto l_adv = adversarial_loss(critic(out));
                const auto l_id = identity_loss(inet_embed(p, a, output_to_input_space(out, cmean)),
                                                inet_embed(p, a, detail::gt_in_input_space(b.gt, cmean)));
                const auto loss = total_loss(l_content, l_adv, l_id, cfg.weights);
                gen_opt->zero_grad();
                // The critic is not updated here; its gradients are discarded.
                backward(loss);
                gen_opt->step();
                critic_opt->zero_grad();
                ++res.generator_steps;
                rec["loss"] = detail::item(loss);
                rec["content"] = detail::item(l_content);
                rec["adversarial"] = detail::item(l_adv);
                rec["identity"] = detail::item(l_id);
                rec["critic_loss"] = last_critic;
                rec["gradient_penalty"] = last_gp;
                rec["wasserstein"] = w_est;
                rec["critic_steps"] = res.critic_steps;
                rec["generator_steps"] = res.generator_steps;
                rec["lambda_adv"] = cfg.weights.lambda_adv;
                rec["lambda_id"] = cfg.weights.lambda_id;
                rec["lambda_gp"] = cfg.weights.lambda_gp;
                break;
            }
        }
        Tape::current().clear();
        res.steps_run = step;
        log(rec);

        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.steps) save_snapshot(step);

        if (cfg.eval_every > 0 && step % cfg.eval_every == 0) {
            const auto m = validation_metric(model, ds, cfg);
            log({{"stage", stage_name}, {"step", step}, {"event", "eval"}, {m.name, db_json(m.value)}});
            res.val_metric = m.name;
            const bool better = !res.best_val || (m.higher_is_better ? m.value > *res.best_val : m.value < *res.best_val);
            if (better) {
                res.best_val = m.value;
                best = p.clone();
                since_best = 0;
            } else if (++since_best >= cfg.patience) {
                res.stopped_early = true;
                break;
            }
        }
    }

    if (best) {
        for (auto& [n, t] : p) {
            auto src = best->at(n).data();
            std::copy(src.begin(), src.end(), t.mutable_data().begin());
        }
    }
    for (auto& [n, t] : p) {
        t.zero_grad();
        t.set_requires_grad(true);
    }
    model.meta.stage = stage_name;
    model.meta.step = res.steps_run;
    if (!model.meta.has_completed(stage_name)) model.meta.completed_stages.push_back(stage_name);
    save_snapshot(res.steps_run);
    log({{"stage", stage_name}, {"event", "end"}, {"steps", res.steps_run}, {"stopped_early", res.stopped_early},
         {"critic_steps", res.critic_steps}, {"generator_steps", res.generator_steps}});
    return res;
}

/// Output-directory workflow: resumes <out>/model.gwai when present,
/// otherwise initializes from cfg.arch; writes model.gwai and
/// <stage>.jsonl into `out`.
template <class T>
StageResult train_in_directory(const StageConfig& cfg, const std::filesystem::path& data_dir,
                               const std::filesystem::path& out, std::ostream* echo = nullptr) {
    cfg.validate();
    const auto ds = Dataset<T>::load(data_dir);
    std::filesystem::create_directories(out);
    const auto model_path = out / "model.gwai";
    auto model = std::filesystem::exists(model_path) ? load_bundle<T>(model_path)
                                                     : ModelBundle<T>::init(cfg.arch, cfg.init_seed);
    const auto log_path = out / (to_string(cfg.stage) + ".jsonl");
    std::filesystem::remove(log_path);
    MetricsLog log(log_path);
    if (echo) log.on_record([echo](const nlohmann::json& j) { *echo << j.dump() << '\n' << std::flush; });
    auto res = run_stage(model, ds, cfg, {out, &log});
    save_bundle(model, model_path);
    return res;
}

}  // namespace gwai

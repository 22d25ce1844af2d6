// Acceptance run: one PASS/FAIL line per criterion; exit status 0 only when
// every selected criterion passes.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <gwai/eval.hpp>
#include <gwai/gradcheck.hpp>
#include <gwai/train.hpp>

#ifndef GWAI_CLI_PATH
#error "GWAI_CLI_PATH must name the gwai executable"
#endif

using namespace gwai;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

fs::path fresh_dir(const fs::path& p) {
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

/// Empty when both trees hold the same relative paths with identical bytes;
/// otherwise the first difference.
std::string tree_difference(const fs::path& a, const fs::path& b) {
    auto listing = [](const fs::path& root) {
        std::set<std::string> out;
        for (const auto& e : fs::recursive_directory_iterator(root))
            if (e.is_regular_file()) out.insert(fs::relative(e.path(), root).string());
        return out;
    };
    const auto la = listing(a), lb = listing(b);
    if (la != lb) return "file lists differ (" + std::to_string(la.size()) + " vs " + std::to_string(lb.size()) + ")";
    for (const auto& rel : la)
        if (file_bytes(a / rel) != file_bytes(b / rel)) return rel + " differs";
    return {};
}

std::string tensor_bytes(const Tensor<float>& t) {
    const auto d = t.data();
    return std::string(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(float));
}

std::string group_bytes(const ModelBundle<float>& m, const std::string& prefix) {
    std::string out;
    for (const auto& t : m.params.group(prefix)) out += tensor_bytes(t);
    return out;
}

Dataset<float> make_dataset(const fs::path& dir, std::size_t ids, std::size_t per_id, std::uint64_t seed, double val,
                            double test, NuisanceProfile nu = NuisanceProfile::Full, std::size_t hr = 64) {
    DatasetSpec s;
    s.n_identities = ids;
    s.images_per_identity = per_id;
    s.hr_size = hr;
    s.seed = seed;
    s.val_frac = val;
    s.test_frac = test;
    s.nuisance = nu;
    build_dataset(s, fresh_dir(dir));
    return Dataset<float>::load(dir);
}

StageConfig desk_config(Stage st, std::size_t steps, std::size_t batch, double lr, std::uint64_t seed) {
    auto c = StageConfig::defaults(st);
    c.arch = ArchConfig::desk();
    c.steps = steps;
    c.batch_size = batch;
    c.lr = c.adam.lr = lr;
    c.seed = seed;
    return c;
}

// ---------------------------------------------------------------------------

Outcome gradient_checks(const fs::path&) {
    const auto t0 = Clock::now();
    GradcheckOptions o;
    o.tol = 1e-4;
    const auto reports = gradcheck_all(o);
    const double secs = seconds_since(t0);
    std::size_t passed = 0;
    const GradcheckReport* worst = &reports.front();
    for (const auto& r : reports) {
        passed += r.passed;
        if (r.max_rel_err > worst->max_rel_err) worst = &r;
    }
    std::string missing;
    const auto names = gradcheck_names();
    for (const char* need : {"bilinear_sample", "compose_sampling_grid", "warp", "wnet_warp_l1", "content_loss",
                             "adversarial_loss", "identity_loss", "critic_loss", "total_loss", "gradient_penalty",
                             "wnet", "gnet", "srnet", "cnet", "inet", "siamese"})
        if (std::find(names.begin(), names.end(), need) == names.end()) missing += std::string(" ") + need;
    const bool ok = passed == reports.size() && missing.empty() && secs < 300;
    return {ok, fmt("%zu/%zu checks below 1e-4, worst %s %.2e, %.1f s", passed, reports.size(), worst->name.c_str(),
                    worst->max_rel_err, secs) +
                    (missing.empty() ? "" : ", missing:" + missing)};
}

Outcome warp_identities(const fs::path&) {
    using TD = Tensor<double>;
    Rng rng(2024);
    std::size_t exact = 0, zero_outside = 0, outside_total = 0;
    for (int n = 0; n < 100; ++n) {
        const auto side = static_cast<std::size_t>(4 + rng.below(29));
        TD img({1, 3, side, side});
        for (auto& v : img.mutable_data()) v = rng.uniform(-2, 2);
        exact += warp_image(img, FlowField<double>::zeros(1, side, side)).vec() == img.vec();

        // sample points whose bilinear support lies entirely off the image
        TD pts({1, 2, side, side});
        auto pv = pts.mutable_data();
        const double s = static_cast<double>(side);
        for (std::size_t i = 0; i < side * side; ++i) {
            double a = rng.uniform(-1, s), b = rng.uniform(-1, s);
            switch (rng.below(4)) {
                case 0: a = rng.uniform(-5, -1); break;
                case 1: a = rng.uniform(s, s + 4); break;
                case 2: b = rng.uniform(-5, -1); break;
                default: b = rng.uniform(s, s + 4); break;
            }
            pv[i] = a;
            pv[side * side + i] = b;
        }
        const auto sampled = bilinear_sample(img, pts);
        for (double v : sampled.data()) zero_outside += v == 0.0;
        outside_total += 3 * side * side;
    }
    TD quad({1, 1, 2, 2}, std::vector<double>{0, 1, 2, 3});
    TD center({1, 2, 2, 2}, 0.5);
    double worst = 0;
    const auto mid = bilinear_sample(quad, center);
    for (double v : mid.data()) worst = std::max(worst, std::abs(v - 1.5));
    const bool ok = exact == 100 && zero_outside == outside_total && worst <= 1e-12;
    return {ok, fmt("zero flow exact on %zu/100 images, %zu/%zu outside samples zero, 2x2 center error %.1e", exact,
                    zero_outside, outside_total, worst)};
}

Outcome penalty_closed_forms(const fs::path&) {
    using TD = Tensor<double>;
    Rng rng(77);
    auto random = [&](Shape s) {
        TD t(std::move(s));
        for (auto& v : t.mutable_data()) v = rng.uniform(-1, 1);
        return t;
    };
    const Critic<double> sum_critic = [](const TD& x) { return sum_per_sample(x); };
    const Critic<double> one_hot = [](const TD& x) {
        TD mask(x.shape());
        const std::size_t n = x.numel() / x.dim(0);
        for (std::size_t b = 0; b < x.dim(0); ++b) mask.mutable_data()[b * n + 7] = 1.0;
        return sum_per_sample(mul(x, mask));
    };
    double sum_err = 0, hot_err = 0;
    for (Shape s : {Shape{2, 3, 4, 5}, Shape{3, 3, 8, 8}, Shape{1, 1, 6, 2}}) {
        const auto sr = random(s), gt = random(s);
        std::vector<double> eps(s[0]);
        for (auto& e : eps) e = rng.uniform();
        const double N = static_cast<double>(s[1] * s[2] * s[3]);
        const double want = (std::sqrt(N) - 1) * (std::sqrt(N) - 1);
        sum_err = std::max(sum_err, std::abs(gradient_penalty(sum_critic, sr, gt, std::span<const double>(eps)).item() - want));
        hot_err = std::max(hot_err, std::abs(gradient_penalty(one_hot, sr, gt, std::span<const double>(eps)).item()));
        Tape::current().clear();
    }
    struct Scripted {
        double fake, real, gp, lambda;
    };
    std::size_t exact = 0;
    const std::vector<Scripted> cases{{2, 5, 0.1, 10}, {1.5, 1.5, 0.7, 0}, {-3.25, 0.5, 0.125, 10}, {0.75, -2, 4, 0.5}};
    for (const auto& c : cases) {
        const auto got = critic_loss(TD({}, c.fake), TD({}, c.real), TD({}, c.gp), c.lambda).item();
        exact += got == c.fake - c.real + c.lambda * c.gp;
    }
    const bool ok = sum_err <= 1e-6 && hot_err <= 1e-6 && exact == cases.size();
    return {ok, fmt("sum-critic error %.1e, one-hot penalty %.1e, critic loss exact on %zu/%zu scripted cases", sum_err,
                    hot_err, exact, cases.size())};
}

Outcome overfit(const fs::path& work) {
    const auto t0 = Clock::now();
    const auto ds = make_dataset(work / "overfit_data", 4, 4, 41, 0.0, 0.0);
    auto model = ModelBundle<float>::init(ArchConfig::desk(), 41);
    auto cfg = desk_config(Stage::Content, 3000, 4, 4e-3, 41);
    cfg.val_split = "train";
    cfg.eval_every = 250;
    cfg.patience = cfg.steps;
    const auto r = run_stage(model, ds, cfg);
    const double p = evaluate(model, ds, "train", EvalMode::Full, 41).mean_psnr;
    const double mins = seconds_since(t0) / 60;
    return {p >= 30.0 && mins <= 30, fmt("training-set PSNR %.2f dB after %zu steps (need >= 30), %.1f min", p,
                                        r.steps_run, mins)};
}

Outcome warper_pretraining(const fs::path& work) {
    const auto t0 = Clock::now();
    const auto ds = make_dataset(work / "warp_data", 16, 4, 51, 0.0, 0.0, NuisanceProfile::TranslationOnly);
    auto model = ModelBundle<float>::init(ArchConfig::desk(), 51);
    const auto before = warp_l1(model, ds, "train", 51);
    run_stage(model, ds, desk_config(Stage::WnetPretrain, 1500, 4, 1e-4, 51));
    const auto after = warp_l1(model, ds, "train", 51);
    const double mins = seconds_since(t0) / 60;
    const double ratio = after.warped / after.unwarped;
    return {ratio < 0.8 && mins <= 15, fmt("L1 warped %.4f vs unwarped %.4f (ratio %.3f, need < 0.8; %.4f before "
                                           "training), %.1f min",
                                           after.warped, after.unwarped, ratio, before.warped, mins)};
}

Outcome identity_pretraining(const fs::path& work) {
    const auto t0 = Clock::now();
    // 480 training identities; 16 more select the best snapshot, 16 are scored
    const auto ds = make_dataset(work / "identity_data", 512, 4, 61, 1.0 / 32, 1.0 / 32);
    const auto held_out = ds.identities("test").size();
    auto model = ModelBundle<float>::init(ArchConfig::desk(), 61);
    auto cfg = desk_config(Stage::InetPretrain, 2000, 12, 2e-4, 61);
    cfg.eval_every = 250;
    cfg.patience = cfg.steps;
    run_stage(model, ds, cfg);
    const double acc = pair_accuracy(model, ds, "test", 1000, 61);
    const double mins = seconds_since(t0) / 60;
    return {held_out == 16 && acc >= 0.95 && mins <= 15,
            fmt("pair accuracy %.3f on %zu held-out identities (need >= 0.95), %.1f min", acc, held_out, mins)};
}

Outcome schedule_fidelity(const fs::path& work) {
    const auto ds = make_dataset(work / "schedule_data", 8, 3, 71, 0.0, 0.0);
    auto model = ModelBundle<float>::init(ArchConfig::desk(), 71);
    run_stage(model, ds, desk_config(Stage::InetPretrain, 2, 4, 1e-4, 71));
    const auto inet_before = group_bytes(model, "inet.");
    const auto cnet_before = group_bytes(model, "cnet.");

    std::vector<nlohmann::json> recs;
    MetricsLog log;
    log.on_record([&](const nlohmann::json& j) { recs.push_back(j); });
    const std::size_t G = 6;
    const auto r = run_stage(model, ds, desk_config(Stage::Adversarial, G, 2, 1e-4, 71), {std::nullopt, &log});

    std::size_t gen = 0, interleave_ok = 0, critic_ok = 0, critic_recs = 0, total_ok = 0, lambda_ok = 0;
    std::size_t since = 0;
    // float32 arithmetic: a few ulps of the largest term
    auto close = [](double got, double want, double scale) { return std::abs(got - want) <= 1e-6 * std::max(1.0, scale); };
    for (const auto& j : recs) {
        const auto ev = j.value("event", "");
        if (ev == "critic") {
            ++since;
            ++critic_recs;
            const double f = j.at("fake"), re = j.at("real"), gp = j.at("gradient_penalty"), lg = j.at("lambda_gp");
            critic_ok += close(j.at("critic_loss"), f - re + lg * gp, std::abs(f) + std::abs(re) + lg * std::abs(gp)) &&
                         lg == 10.0;
            continue;
        }
        if (!ev.empty()) continue;
        ++gen;
        interleave_ok += since == 5;
        since = 0;
        const double la = j.at("lambda_adv"), li = j.at("lambda_id"), lg = j.at("lambda_gp");
        lambda_ok += la == 0.001 && li == 0.05 && lg == 10.0;
        const double c = j.at("content"), adv = j.at("adversarial"), id = j.at("identity");
        total_ok += close(j.at("loss"), c + la * adv + li * id, std::abs(c) + la * std::abs(adv) + li * std::abs(id));
    }
    const bool inet_frozen = group_bytes(model, "inet.") == inet_before;
    const bool cnet_moved = group_bytes(model, "cnet.") != cnet_before;
    const bool ok = gen == G && r.generator_steps == G && r.critic_steps == 5 * G && interleave_ok == G &&
                    critic_recs == 5 * G && critic_ok == critic_recs && lambda_ok == G && total_ok == G &&
                    inet_frozen && cnet_moved;
    return {ok, fmt("%zu generator / %zu critic updates, 5 critic per generator on %zu/%zu, lambdas (0.001, 0.05, 10) "
                    "on %zu/%zu, generator total on %zu/%zu, critic loss on %zu/%zu, inet %s, critic %s",
                    r.generator_steps, r.critic_steps, interleave_ok, gen, lambda_ok, gen, total_ok, gen, critic_ok,
                    critic_recs, inet_frozen ? "frozen" : "CHANGED", cnet_moved ? "trained" : "unchanged")};
}

int run_cli(const std::vector<std::string>& args, const fs::path& log) {
    std::string cmd = "\"" GWAI_CLI_PATH "\"";
    for (const auto& a : args) cmd += " '" + a + "'";
    cmd += " >> '" + log.string() + "' 2>&1";
    return std::system(cmd.c_str());
}

Outcome determinism(const fs::path& work) {
    const auto t0 = Clock::now();
    const auto cfg_dir = fresh_dir(work / "determinism_configs");
    const std::vector<std::string> stages{"inet-pretrain", "wnet-pretrain", "content", "adversarial"};
    for (const auto& s : stages) {
        nlohmann::json c{{"stage", s},       {"steps", 50},          {"batch_size", 2},
                         {"seed", 81},       {"eval_every", 25},     {"checkpoint_every", 25},
                         {"init_seed", 81},  {"arch", {{"preset", "desk"}}}};
        std::ofstream(cfg_dir / (s + ".json")) << c.dump(2) << '\n';
    }
    auto pipeline = [&](const fs::path& root) -> std::string {
        fresh_dir(root);
        const auto log = root / "console.txt";
        if (run_cli({"gen-data", "--out", (root / "data").string(), "--identities", "8", "--per-identity", "3",
                     "--hr-size", "64", "--seed", "81", "--val-frac", "0.25", "--test-frac", "0"},
                    log) != 0)
            return "gen-data failed";
        for (const auto& s : stages)
            if (run_cli({"train", "--config", (cfg_dir / (s + ".json")).string(), "--data", (root / "data").string(),
                         "--out", (root / "run").string(), "--stage", s, "--quiet"},
                        log) != 0)
                return s + " failed";
        return {};
    };
    for (const char* r : {"run_a", "run_b"})
        if (auto err = pipeline(work / r); !err.empty()) return {false, std::string(r) + ": " + err};
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(work / "run_a"))
        files += e.is_regular_file() && e.path().filename() != "console.txt";
    std::string diff = tree_difference(work / "run_a" / "data", work / "run_b" / "data");
    if (diff.empty()) diff = tree_difference(work / "run_a" / "run", work / "run_b" / "run");
    const double mins = seconds_since(t0) / 60;
    return {diff.empty(), diff.empty() ? fmt("two CLI pipelines byte-identical over %zu files, %.1f min", files, mins)
                                       : "runs differ: " + diff};
}

Outcome round_trips(const fs::path& work) {
    std::size_t checked = 0;
    std::string failure;
    // checkpoints: initial, after each stage, and step snapshots
    const auto ds = make_dataset(work / "roundtrip_data", 6, 3, 91, 0.0, 0.0, NuisanceProfile::Full, 32);
    auto model = ModelBundle<float>::init(ArchConfig::nano(), 91);
    const auto ckpt_dir = fresh_dir(work / "roundtrip_ckpt");
    auto check_file = [&](const fs::path& p) {
        const auto before = file_bytes(p);
        const auto copy = p.parent_path() / (p.stem().string() + ".resaved");
        save_bundle(load_bundle<float>(p), copy);
        const bool same_bundle = file_bytes(copy) == before;
        const bool same_codec = encode_checkpoint(decode_checkpoint(read_file_bytes(p))) == read_file_bytes(p);
        ++checked;
        if ((!same_bundle || !same_codec) && failure.empty()) failure = p.filename().string() + " changed on re-save";
    };
    save_bundle(model, ckpt_dir / "init.gwai");
    check_file(ckpt_dir / "init.gwai");
    for (auto st : {Stage::InetPretrain, Stage::WnetPretrain, Stage::Content, Stage::Adversarial}) {
        auto c = StageConfig::defaults(st);
        c.arch = ArchConfig::nano();
        c.steps = 4;
        c.batch_size = 2;
        c.checkpoint_every = 2;
        c.seed = 91;
        const auto r = run_stage(model, ds, c, {ckpt_dir, nullptr});
        for (const auto& p : r.checkpoints) check_file(p);
    }
    auto dmodel = ModelBundle<double>::init(ArchConfig::nano(), 92);
    save_bundle(dmodel, ckpt_dir / "double.gwai");
    const auto d1 = file_bytes(ckpt_dir / "double.gwai");
    save_bundle(load_bundle<double>(ckpt_dir / "double.gwai"), ckpt_dir / "double2.gwai");
    ++checked;
    if (file_bytes(ckpt_dir / "double2.gwai") != d1 && failure.empty()) failure = "f64 checkpoint changed on re-save";

    // datasets: same seed, same bytes
    DatasetSpec s;
    s.n_identities = 10;
    s.images_per_identity = 3;
    s.hr_size = 48;
    s.seed = 93;
    build_dataset(s, fresh_dir(work / "regen_a"));
    build_dataset(s, fresh_dir(work / "regen_b"));
    const auto diff = tree_difference(work / "regen_a", work / "regen_b");
    const bool meta_ok = file_bytes(work / "regen_a" / "manifest.json") == file_bytes(work / "regen_b" / "manifest.json") &&
                         file_bytes(work / "regen_a" / "mean.json") == file_bytes(work / "regen_b" / "mean.json") &&
                         !file_bytes(work / "regen_a" / "mean.json").empty();
    const bool ok = failure.empty() && diff.empty() && meta_ok;
    return {ok, fmt("%zu checkpoints re-saved byte-identically, regenerated dataset %s, manifest and mean %s", checked,
                    diff.empty() ? "identical" : ("differs: " + diff).c_str(), meta_ok ? "identical" : "differ") +
                    (failure.empty() ? "" : ", " + failure)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    std::vector<int> only;
    std::string work = (fs::temp_directory_path() / "gwai_acceptance").string();
    app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
    app.add_option("--work", work, "Scratch directory")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    const std::map<int, std::pair<std::string, std::function<Outcome(const fs::path&)>>> criteria{
        {1, {"gradient checks", gradient_checks}},
        {2, {"warp identities", warp_identities}},
        {3, {"gradient penalty closed forms", penalty_closed_forms}},
        {4, {"content overfit", overfit}},
        {5, {"warper pretraining", warper_pretraining}},
        {6, {"identity pretraining", identity_pretraining}},
        {7, {"adversarial schedule", schedule_fidelity}},
        {8, {"pipeline determinism", determinism}},
        {9, {"checkpoint and dataset round trips", round_trips}},
    };
    const fs::path root = fs::absolute(work);
    fs::create_directories(root);
    std::size_t failed = 0, ran = 0;
    for (const auto& [id, c] : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Outcome o;
        try {
            o = c.second(fresh_dir(root / ("criterion" + std::to_string(id))));
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        Tape::current().clear();
        ++ran;
        failed += !o.pass;
        std::printf("criterion %d %s %s: %s\n", id, o.pass ? "PASS" : "FAIL", c.first.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%zu/%zu criteria passed\n", ran - failed, ran);
    return failed == 0 ? 0 : 1;
}

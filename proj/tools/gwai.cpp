// gwai: dataset generation, staged training, inference, evaluation and
// gradient checks.
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <gwai/eval.hpp>
#include <gwai/gradcheck.hpp>
#include <gwai/train.hpp>

using namespace gwai;
using T = float;

namespace {

constexpr int kValidation = 1;
constexpr int kRuntime = 2;

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("config " + path + " is not valid JSON: " + e.what());
    }
}

struct GenData {
    std::string out;
    DatasetSpec spec;
    std::string nuisance = "full";

    int run() {
        spec.nuisance = parse_nuisance_profile(nuisance);
        spec.validate();
        const auto m = build_dataset(spec, out);
        nlohmann::json j = m;
        j["out"] = out;
        std::cout << j.dump() << '\n';
        return 0;
    }
};

struct Train {
    std::string config, data, out, stage;
    bool quiet = false;

    int run() {
        const auto cfg = stage_config_from_json(read_json_file(config), parse_stage(stage));
        cfg.validate();
        const auto res = train_in_directory<T>(cfg, data, out, quiet ? nullptr : &std::cout);
        nlohmann::json j{{"stage", stage},
                         {"steps_run", res.steps_run},
                         {"critic_steps", res.critic_steps},
                         {"generator_steps", res.generator_steps},
                         {"stopped_early", res.stopped_early},
                         {"model", (std::filesystem::path(out) / "model.gwai").string()}};
        if (res.best_val) j["best_" + res.val_metric] = db_json(*res.best_val);
        std::cout << j.dump() << '\n';
        return 0;
    }
};

struct Infer {
    std::string model, lr, guide, mode = "full", out;

    int run() {
        const auto em = parse_eval_mode(mode);
        if (em == EvalMode::ShuffledGuide) throw ValidationError("infer supports modes full and no-guide");
        if (em == EvalMode::NoGuide && !guide.empty()) throw ValidationError("--guide cannot be combined with --mode no-guide");
        const auto bundle = load_bundle<T>(model);
        std::optional<Tensor<T>> g;
        if (!guide.empty()) g = read_png<T>(guide);
        const auto sr = infer(bundle, read_png<T>(lr), g, em);
        write_png(out, sr);
        std::cout << nlohmann::json{{"out", out}, {"mode", mode}, {"size", sr.dim(1)}}.dump() << '\n';
        return 0;
    }
};

struct Eval {
    std::string model, data, split = "test", mode = "full";
    std::uint64_t seed = 0;

    int run() {
        const auto em = parse_eval_mode(mode);
        const auto bundle = load_bundle<T>(model);
        const auto ds = Dataset<T>::load(data);
        auto r = evaluate(bundle, ds, split, em, seed);
        r.model_id = model;
        r.dataset_id = data;
        auto j = to_json_report(r);
        j["split"] = split;
        j["seed"] = seed;
        std::cout << j.dump() << '\n';
        return 0;
    }
};

struct Gradcheck {
    std::string op;
    double tol = 1e-4;
    std::uint64_t seed = 0;

    int run() {
        GradcheckOptions o;
        o.tol = tol;
        o.seed = seed;
        std::vector<GradcheckReport> reports;
        if (op.empty())
            reports = gradcheck_all(o);
        else
            reports.push_back(gradcheck(op, o));
        std::size_t failed = 0;
        for (const auto& r : reports) {
            std::printf("%-24s %s  max_rel_err=%.3e  coords=%zu\n", r.name.c_str(), r.passed ? "PASS" : "FAIL",
                        r.max_rel_err, r.coords);
            failed += r.passed ? 0 : 1;
        }
        std::printf("%zu/%zu passed (tol %.1e)\n", reports.size() - failed, reports.size(), tol);
        return failed == 0 ? 0 : kRuntime;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Guided face super-resolution: data, training, inference, evaluation"};
    app.require_subcommand(1);

    GenData gen;
    auto* g = app.add_subcommand("gen-data", "Render a synthetic face dataset");
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--identities", gen.spec.n_identities, "Number of identities")->required();
    g->add_option("--per-identity", gen.spec.images_per_identity, "Images per identity")->required();
    g->add_option("--hr-size", gen.spec.hr_size, "HR side length in pixels")->required();
    g->add_option("--seed", gen.spec.seed, "Generator seed")->required();
    g->add_option("--val-frac", gen.spec.val_frac, "Fraction of identities in val")->capture_default_str();
    g->add_option("--test-frac", gen.spec.test_frac, "Fraction of identities in test")->capture_default_str();
    g->add_option("--nuisance", gen.nuisance, "Nuisance profile: full, translation or none")->capture_default_str();

    Train tr;
    auto* t = app.add_subcommand("train", "Run one training stage");
    t->add_option("--config", tr.config, "Stage config (JSON)")->required();
    t->add_option("--data", tr.data, "Dataset directory")->required();
    t->add_option("--out", tr.out, "Run directory (model.gwai, logs, checkpoints)")->required();
    t->add_option("--stage", tr.stage, "inet-pretrain, wnet-pretrain, content or adversarial")->required();
    t->add_flag("--quiet", tr.quiet, "Do not echo log records");

    Infer inf;
    auto* i = app.add_subcommand("infer", "Super-resolve one image");
    i->add_option("--model", inf.model, "Model checkpoint")->required();
    i->add_option("--lr", inf.lr, "LR input PNG")->required();
    i->add_option("--guide", inf.guide, "Guide PNG of the same identity");
    i->add_option("--mode", inf.mode, "full or no-guide")->capture_default_str();
    i->add_option("--out", inf.out, "Output PNG")->required();

    Eval ev;
    auto* e = app.add_subcommand("eval", "Mean PSNR over a dataset split");
    e->add_option("--model", ev.model, "Model checkpoint")->required();
    e->add_option("--data", ev.data, "Dataset directory")->required();
    e->add_option("--split", ev.split, "Split name")->capture_default_str();
    e->add_option("--mode", ev.mode, "full, no-guide or shuffled-guide")->capture_default_str();
    e->add_option("--seed", ev.seed, "Guide selection seed")->capture_default_str();

    Gradcheck gc;
    auto* c = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
    c->add_option("--op", gc.op, "Single check to run (default: all)");
    c->add_option("--tol", gc.tol, "Relative error bound")->capture_default_str();
    c->add_option("--seed", gc.seed, "Input seed")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? 0 : kValidation;
    }

    try {
        if (*g) return gen.run();
        if (*t) return tr.run();
        if (*i) return inf.run();
        if (*e) return ev.run();
        if (*c) return gc.run();
    } catch (const ValidationError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kValidation;
    } catch (const ShapeError& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kValidation;
    } catch (const std::exception& err) {
        std::cerr << "failure: " << err.what() << '\n';
        return kRuntime;
    }
    return kRuntime;
}

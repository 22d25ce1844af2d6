/**
 * @file   gradcheck.hpp
 * @brief  Registry of finite-difference gradient checks.
 *
 * Each check builds double-precision inputs, reduces the checked function
 * to a scalar with fixed random probe weights, and compares grad() with
 * central differences. Inputs are placed away from kinks (|x| >= 0.1 for
 * abs/relu, distinct pooling values, sample points a quarter pixel or
 * more off the lattice) so that the two derivatives agree.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "arch.hpp"
#include "losses.hpp"
#include "networks.hpp"
#include "ops.hpp"
#include "rng.hpp"
#include "warp.hpp"

namespace gwai {

struct GradcheckOptions {
    double tol = 1e-4;
    double h = 1e-5;
    std::uint64_t seed = 0;
};

struct GradcheckReport {
    std::string name;
    double max_rel_err = 0;
    std::size_t coords = 0;
    bool passed = false;
};

namespace gradcheck_detail {

using TD = Tensor<double>;

/// Scalar function of the leaves `inputs`; `max_coords` caps the entries
/// checked per input (0: all). A nonzero `h` replaces the default step.
struct Problem {
    std::vector<TD> inputs;
    std::function<TD(const std::vector<TD>&)> f;
    std::size_t max_coords = 0;
    double h = 0;
};

/// |a - n| / max(|a|, |n|, 1e-3).
inline double rel_err(double a, double n) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-3});
}

inline TD uniform(Shape s, Rng& r, double lo = -1.0, double hi = 1.0) {
    TD t(std::move(s));
    for (auto& v : t.mutable_data()) v = r.uniform(lo, hi);
    return t;
}

/// Magnitudes in [0.1, 1] with random signs.
inline TD off_zero(Shape s, Rng& r) {
    TD t(std::move(s));
    for (auto& v : t.mutable_data()) v = (r.below(2) ? 1.0 : -1.0) * r.uniform(0.1, 1.0);
    return t;
}

/// Distinct values spaced 1e-2 apart in random order.
inline TD distinct(Shape s, Rng& r) {
    TD t(std::move(s));
    auto v = t.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i) * 1e-2;
    r.shuffle(v);
    return t;
}

inline TD probe(const TD& y, std::uint64_t seed) {
    Rng r(derive_seed(seed, 0x9B));
    return sum(mul(y, uniform(y.shape(), r)));
}

inline GradcheckReport run(const std::string& name, Problem p, const GradcheckOptions& o) {
    for (auto& x : p.inputs) x.set_requires_grad(true);
    std::vector<TD> analytic;
    {
        const auto l = p.f(p.inputs);
        analytic = grad(l, p.inputs);
    }
    Tape::current().clear();
    GradcheckReport rep{name};
    Rng pick(derive_seed(o.seed, 0xC0));
    const double h = p.h > 0 ? p.h : o.h;
    for (std::size_t k = 0; k < p.inputs.size(); ++k) {
        auto& x = p.inputs[k];
        std::vector<std::size_t> idx(x.numel());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (p.max_coords > 0 && idx.size() > p.max_coords) {
            pick.shuffle(idx);
            idx.resize(p.max_coords);
        }
        auto v = x.mutable_data();
        for (auto i : idx) {
            const double orig = v[i];
            v[i] = orig + h;
            const double up = p.f(p.inputs).item();
            v[i] = orig - h;
            const double dn = p.f(p.inputs).item();
            v[i] = orig;
            Tape::current().clear();
            const double num = (up - dn) / (2 * h);
            rep.max_rel_err = std::max(rep.max_rel_err, rel_err(analytic[k][i], num));
            ++rep.coords;
        }
    }
    rep.passed = rep.max_rel_err < o.tol;
    return rep;
}

/// Parameters of one subnetwork as leaves, plus extra inputs appended.
struct NetProblem {
    ParamStore<double> params;
    std::vector<std::string> names;
};

inline NetProblem net_params(const ArchConfig& a, const std::string& prefix, std::uint64_t seed) {
    NetProblem np{init_params<double>(a, seed), {}};
    np.names = np.params.names(prefix);
    // zero-initialized output layers get small random values so that every
    // upstream parameter has a nonzero gradient
    Rng r(derive_seed(seed, 0x0E));
    for (const char* n : {"wnet.out.w", "gnet.srnet.out.w", "inet.siamese.w"})
        if (np.params.contains(n) && std::string(n).starts_with(prefix))
            for (auto& v : np.params.at(n).mutable_data()) v = r.uniform(-0.1, 0.1);
    return np;
}

/// Rebinds `inputs` (in `names` order) into the store, then calls `body`.
template <class F>
Problem net_problem(NetProblem np, std::vector<TD> extra, std::size_t max_coords, F body) {
    Problem p;
    for (const auto& n : np.names) p.inputs.push_back(np.params.at(n));
    const std::size_t n_params = np.names.size();
    for (auto& e : extra) p.inputs.push_back(e);
    auto store = std::make_shared<ParamStore<double>>(std::move(np.params));
    auto names = std::make_shared<std::vector<std::string>>(std::move(np.names));
    p.f = [store, names, n_params, body](const std::vector<TD>& in) {
        std::vector<TD> extra_in(in.begin() + static_cast<std::ptrdiff_t>(n_params), in.end());
        return body(*store, extra_in);
    };
    p.max_coords = max_coords;
    return p;
}

inline ArchConfig check_arch() { return ArchConfig::nano(); }

/// Pixel-unit sampling grid: lattice plus offsets of 0.25..0.75 px, so no
/// sample lies within a quarter pixel of a kink.
inline TD jittered_grid(std::size_t b, std::size_t h, std::size_t w, Rng& r) {
    TD g({b, 2, h, w});
    auto v = g.mutable_data();
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                v[((n * 2 + 0) * h + i) * w + j] = static_cast<double>(i) + r.uniform(0.25, 0.75) - (i + 1 == h ? 1.0 : 0.0);
                v[((n * 2 + 1) * h + i) * w + j] = static_cast<double>(j) + r.uniform(0.25, 0.75) - (j + 1 == w ? 1.0 : 0.0);
            }
    return g;
}

/// Flow of 0.3..0.45 px per axis plus a small varying part, in normalized units.
inline TD jittered_flow(std::size_t b, std::size_t h, std::size_t w, Rng& r) {
    TD f({b, 2, h, w});
    auto v = f.mutable_data();
    const std::size_t hw = h * w;
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t c = 0; c < 2; ++c) {
            const double side = static_cast<double>(c == 0 ? h : w) - 1;
            for (std::size_t i = 0; i < hw; ++i) v[(n * 2 + c) * hw + i] = r.uniform(0.3, 0.45) * 2.0 / side;
        }
    return f;
}

using Factory = std::function<Problem(std::uint64_t)>;

inline std::vector<std::pair<std::string, Factory>> registry() {
    std::vector<std::pair<std::string, Factory>> R;
    auto unary = [&](std::string name, std::function<TD(const TD&)> op, std::function<TD(Shape, Rng&)> gen) {
        R.emplace_back(name, [op, gen](std::uint64_t s) {
            Rng r(s);
            Problem p{{gen({2, 3, 4}, r)}, nullptr};
            p.f = [op, s](const std::vector<TD>& in) { return probe(op(in[0]), s); };
            return p;
        });
    };
    auto binary = [&](std::string name, std::function<TD(const TD&, const TD&)> op, Shape sa, Shape sb) {
        R.emplace_back(name, [op, sa, sb](std::uint64_t s) {
            Rng r(s);
            Problem p{{uniform(sa, r), uniform(sb, r)}, nullptr};
            p.f = [op, s](const std::vector<TD>& in) { return probe(op(in[0], in[1]), s); };
            return p;
        });
    };
    auto any = [](Shape sh, Rng& r) { return uniform(std::move(sh), r); };
    auto positive = [](Shape sh, Rng& r) { return uniform(std::move(sh), r, 0.5, 2.0); };
    auto nonzero = [](Shape sh, Rng& r) { return off_zero(std::move(sh), r); };

    // elementwise and reductions
    binary("add", [](const TD& a, const TD& b) { return add(a, b); }, {2, 3}, {2, 3});
    binary("sub", [](const TD& a, const TD& b) { return sub(a, b); }, {2, 3}, {2, 3});
    binary("mul", [](const TD& a, const TD& b) { return mul(a, b); }, {2, 3}, {2, 3});
    unary("scale", [](const TD& x) { return scale(x, 1.7); }, any);
    unary("neg", [](const TD& x) { return neg(x); }, any);
    unary("add_scalar", [](const TD& x) { return add_scalar(x, 0.3); }, any);
    unary("abs", [](const TD& x) { return abs(x); }, nonzero);
    unary("sqrt", [](const TD& x) { return sqrt(x); }, positive);
    unary("log", [](const TD& x) { return log(x); }, positive);
    unary("sigmoid", [](const TD& x) { return sigmoid(x); }, any);
    unary("relu", [](const TD& x) { return relu(x); }, nonzero);
    unary("leaky_relu", [](const TD& x) { return leaky_relu(x, 0.2); }, nonzero);
    unary("sum", [](const TD& x) { return scale(sum(x), 1.0); }, any);
    unary("mean", [](const TD& x) { return mean(x); }, any);
    unary("sum_per_sample", [](const TD& x) { return sum_per_sample(x); }, any);
    unary("channel_sum", [](const TD& x) { return channel_sum(reshape(x, {1, 2, 3, 4})); }, any);
    unary("reshape", [](const TD& x) { return reshape(x, {6, 4}); }, any);
    unary("flatten", [](const TD& x) { return flatten(x); }, any);
    R.emplace_back("expand", [](std::uint64_t s) {
        Rng r(s);
        Problem p{{uniform({}, r)}, nullptr};
        p.f = [s](const std::vector<TD>& in) { return probe(expand(in[0], {2, 3}), s); };
        return p;
    });
    R.emplace_back("expand_per_sample", [](std::uint64_t s) {
        Rng r(s);
        Problem p{{uniform({2}, r)}, nullptr};
        p.f = [s](const std::vector<TD>& in) { return probe(expand_per_sample(in[0], {2, 3, 2, 2}), s); };
        return p;
    });
    R.emplace_back("broadcast_channels", [](std::uint64_t s) {
        Rng r(s);
        Problem p{{uniform({3}, r)}, nullptr};
        p.f = [s](const std::vector<TD>& in) { return probe(broadcast_channels(in[0], {2, 3, 2, 2}), s); };
        return p;
    });
    binary("bias_add", [](const TD& x, const TD& b) { return bias_add(x, b); }, {2, 3, 2, 2}, {3});

    // layout
    binary("concat", [](const TD& a, const TD& b) { return concat_depth(a, b); }, {2, 2, 3, 3}, {2, 3, 3, 3});
    unary("pad_channels", [](const TD& x) { return pad_channels(reshape(x, {2, 3, 2, 2}), 1, 5); }, any);
    unary("slice_channels", [](const TD& x) { return slice_channels(reshape(x, {2, 3, 2, 2}), 1, 2); }, any);
    R.emplace_back("pixel_shuffle", [](std::uint64_t s) {
        Rng r(s);
        Problem p{{uniform({2, 8, 3, 3}, r)}, nullptr};
        p.f = [s](const std::vector<TD>& in) { return probe(pixel_shuffle(in[0], 2), s); };
        return p;
    });
    R.emplace_back("space_to_depth", [](std::uint64_t s) {
        Rng r(s);
        Problem p{{uniform({2, 2, 4, 6}, r)}, nullptr};
        p.f = [s](const std::vector<TD>& in) { return probe(space_to_depth(in[0], 2), s); };
        return p;
    });

    // linear layers
    for (std::size_t stride : {1, 2}) {
        R.emplace_back(stride == 1 ? "conv2d" : "conv2d_stride2", [stride](std::uint64_t s) {
            Rng r(s);
            Problem p{{uniform({2, 3, 6, 5}, r), uniform({4, 3, 3, 3}, r), uniform({4}, r)}, nullptr};
            p.f = [s, stride](const std::vector<TD>& in) { return probe(conv2d(in[0], in[1], in[2], {stride, 1}), s); };
            return p;
        });
    }
    binary("matmul", [](const TD& a, const TD& b) { return matmul(a, b); }, {3, 4}, {4, 2});
    binary("matmul_transposed", [](const TD& a, const TD& b) { return matmul(a, b, true, true); }, {4, 3}, {2, 4});
    R.emplace_back("fully_connected", [](std::uint64_t s) {
        Rng r(s);
        Problem p{{uniform({3, 5}, r), uniform({4, 5}, r), uniform({4}, r)}, nullptr};
        p.f = [s](const std::vector<TD>& in) { return probe(fully_connected(in[0], in[1], in[2]), s); };
        return p;
    });
    R.emplace_back("max_pool2d", [](std::uint64_t s) {
        Rng r(s);
        Problem p{{distinct({2, 2, 4, 6}, r)}, nullptr};
        p.f = [s](const std::vector<TD>& in) { return probe(max_pool2d(in[0], 2, 2), s); };
        return p;
    });

    // warping
    R.emplace_back("bilinear_sample", [](std::uint64_t s) {
        Rng r(s);
        Problem p{{uniform({2, 3, 5, 6}, r), jittered_grid(2, 5, 6, r)}, nullptr};
        p.f = [s](const std::vector<TD>& in) { return probe(bilinear_sample(in[0], in[1]), s); };
        return p;
    });
    R.emplace_back("compose_sampling_grid", [](std::uint64_t s) {
        Rng r(s);
        Problem p{{uniform({2, 2, 4, 5}, r)}, nullptr};
        p.f = [s](const std::vector<TD>& in) {
            return probe(compose_sampling_grid(FlowField<double>(in[0]), make_grid<double>(4, 5)), s);
        };
        return p;
    });
    R.emplace_back("warp", [](std::uint64_t s) {
        Rng r(s);
        Problem p{{uniform({2, 3, 6, 6}, r), jittered_flow(2, 6, 6, r)}, nullptr};
        p.f = [s](const std::vector<TD>& in) { return probe(warp_image(in[0], FlowField<double>(in[1])), s); };
        return p;
    });
    R.emplace_back("wnet_warp_l1", [](std::uint64_t s) {
        const auto a = check_arch();
        auto np = net_params(a, "wnet.", s);
        // output layer: tiny weights, bias holding the flow at 0.3..0.45 px
        Rng r(derive_seed(s, 0x31));
        for (auto& v : np.params.at("wnet.out.w").mutable_data()) v = r.uniform(-1e-3, 1e-3);
        auto bias = np.params.at("wnet.out.b").mutable_data();
        bias[0] = 0.37 * 2.0 / static_cast<double>(a.hr_size - 1);
        bias[1] = 0.41 * 2.0 / static_cast<double>(a.hr_size - 1);
        const std::size_t hr = a.hr_size;
        std::vector<TD> extra{uniform({1, 3, hr, hr}, r), uniform({1, 3, hr, hr}, r), uniform({1, 3, hr, hr}, r)};
        return net_problem(std::move(np), extra, 6, [a](const ParamStore<double>& p, const std::vector<TD>& in) {
            const auto& guide = in[0];
            const auto warped = warp_image(guide, wnet_forward(p, a, guide, in[1]));
            return content_loss(warped, in[2]);
        });
    });

    // losses
    R.emplace_back("content_loss", [](std::uint64_t s) {
        Rng r(s);
        Problem p{{uniform({2, 3, 4, 4}, r), uniform({2, 3, 4, 4}, r)}, nullptr};
        p.f = [](const std::vector<TD>& in) { return content_loss(in[0], in[1]); };
        return p;
    });
    R.emplace_back("adversarial_loss", [](std::uint64_t s) {
        Rng r(s);
        Problem p{{uniform({4, 1}, r)}, nullptr};
        p.f = [](const std::vector<TD>& in) { return adversarial_loss(in[0]); };
        return p;
    });
    R.emplace_back("identity_loss", [](std::uint64_t s) {
        Rng r(s);
        Problem p{{uniform({3, 5}, r), uniform({3, 5}, r)}, nullptr};
        p.f = [](const std::vector<TD>& in) { return identity_loss(in[0], in[1]); };
        return p;
    });
    R.emplace_back("critic_loss", [](std::uint64_t s) {
        Rng r(s);
        Problem p{{uniform({}, r), uniform({}, r), uniform({}, r, 0.1, 1.0)}, nullptr};
        p.f = [](const std::vector<TD>& in) { return critic_loss(in[0], in[1], in[2], 10.0); };
        return p;
    });
    R.emplace_back("total_loss", [](std::uint64_t s) {
        Rng r(s);
        Problem p{{uniform({}, r), uniform({}, r), uniform({}, r)}, nullptr};
        p.f = [](const std::vector<TD>& in) { return total_loss(in[0], in[1], in[2], LossWeights::adversarial()); };
        return p;
    });
    R.emplace_back("bce_loss", [](std::uint64_t s) {
        Rng r(s);
        Problem p{{uniform({4, 1}, r, 0.1, 0.9)}, nullptr};
        p.f = [](const std::vector<TD>& in) {
            static const std::vector<double> labels{1, 0, 0, 1};
            return bce_loss(in[0], std::span<const double>(labels));
        };
        return p;
    });
    R.emplace_back("siamese_head_all_pairs", [](std::uint64_t s) {
        Rng r(s);
        // rows spaced 0.5 apart per column keep every |e_i - e_j| off the kink
        TD e({3, 4});
        auto v = e.mutable_data();
        for (std::size_t c = 0; c < 4; ++c) {
            std::vector<double> col{-0.5, 0.0, 0.5};
            for (std::size_t i = 2; i > 0; --i) std::swap(col[i], col[r.below(i + 1)]);
            for (std::size_t i = 0; i < 3; ++i) v[i * 4 + c] = col[i] + r.uniform(-0.1, 0.1);
        }
        Problem p{{e, uniform({1, 4}, r), uniform({1}, r)}, nullptr};
        p.f = [s](const std::vector<TD>& in) { return probe(siamese_head_all_pairs(in[0], in[1], in[2]), s); };
        return p;
    });
    R.emplace_back("bce_loss_weighted", [](std::uint64_t s) {
        Rng r(s);
        Problem p{{uniform({4, 1}, r, 0.1, 0.9)}, nullptr};
        p.f = [](const std::vector<TD>& in) {
            static const std::vector<double> labels{1, 0, 0, 1}, weights{0.5, 0.25, 0.25, 0};
            return bce_loss(in[0], std::span<const double>(labels), std::span<const double>(weights));
        };
        return p;
    });
    R.emplace_back("gradient_penalty", [](std::uint64_t s) {
        const auto a = check_arch();
        auto np = net_params(a, "cnet.", s);
        Rng r(derive_seed(s, 0x47));
        const std::size_t hr = a.hr_size;
        std::vector<TD> extra{uniform({2, 3, hr, hr}, r), uniform({2, 3, hr, hr}, r)};
        const std::vector<double> eps{r.uniform(), r.uniform()};
        return net_problem(std::move(np), extra, 4, [a, eps](const ParamStore<double>& p, const std::vector<TD>& in) {
            const Critic<double> c = [&](const TD& x) { return cnet_forward(p, a, x); };
            return gradient_penalty(c, in[0], in[1], std::span<const double>(eps));
        });
    });

    // subnetworks
    R.emplace_back("residual_block", [](std::uint64_t s) {
        Rng r(s);
        ParamStore<double> ps;
        ps.add("rb.conv1.w", uniform({3, 3, 3, 3}, r, -0.3, 0.3));
        ps.add("rb.conv1.b", uniform({3}, r, -0.1, 0.1));
        ps.add("rb.conv2.w", uniform({3, 3, 3, 3}, r, -0.3, 0.3));
        ps.add("rb.conv2.b", uniform({3}, r, -0.1, 0.1));
        NetProblem np{std::move(ps), {"rb.conv1.w", "rb.conv1.b", "rb.conv2.w", "rb.conv2.b"}};
        return net_problem(std::move(np), {uniform({2, 3, 5, 5}, r)}, 0,
                           [s](const ParamStore<double>& p, const std::vector<TD>& in) {
                               return probe(residual_block(p, "rb", in[0], 1.0), s);
                           });
    });
    auto net = [&](std::string name, std::string prefix, std::function<std::vector<Shape>(const ArchConfig&)> shapes,
                   std::function<TD(const ParamStore<double>&, const ArchConfig&, const std::vector<TD>&)> fwd) {
        R.emplace_back(name, [prefix, shapes, fwd](std::uint64_t s) {
            const auto a = check_arch();
            Rng r(derive_seed(s, 0x5E));
            std::vector<TD> extra;
            for (auto sh : shapes(a)) extra.push_back(uniform(sh, r));
            return net_problem(net_params(a, prefix, s), extra, 4,
                               [a, fwd, s](const ParamStore<double>& p, const std::vector<TD>& in) {
                                   return probe(fwd(p, a, in), s);
                               });
        });
    };
    auto img = [](const ArchConfig&, std::size_t side) { return Shape{1, 3, side, side}; };
    net("wnet", "wnet.", [&](const ArchConfig& a) { return std::vector<Shape>{img(a, a.hr_size), img(a, a.hr_size)}; },
        [](const ParamStore<double>& p, const ArchConfig& a, const std::vector<TD>& in) {
            return wnet_forward(p, a, in[0], in[1]).values;
        });
    net("gnet", "gnet.", [&](const ArchConfig& a) { return std::vector<Shape>{img(a, a.lr_size()), img(a, a.hr_size)}; },
        [](const ParamStore<double>& p, const ArchConfig& a, const std::vector<TD>& in) {
            return gnet_forward(p, a, in[0], std::optional<TD>(in[1]));
        });
    net("srnet", "gnet.srnet.", [&](const ArchConfig& a) { return std::vector<Shape>{img(a, a.lr_size())}; },
        [](const ParamStore<double>& p, const ArchConfig& a, const std::vector<TD>& in) {
            return srnet_forward(p, a, in[0]);
        });
    net("cnet", "cnet.", [&](const ArchConfig& a) { return std::vector<Shape>{img(a, a.hr_size)}; },
        [](const ParamStore<double>& p, const ArchConfig& a, const std::vector<TD>& in) {
            return cnet_forward(p, a, in[0]);
        });
    net("inet", "inet.", [&](const ArchConfig& a) { return std::vector<Shape>{img(a, a.hr_size)}; },
        [](const ParamStore<double>& p, const ArchConfig& a, const std::vector<TD>& in) {
            return inet_embed(p, a, in[0]);
        });
    net("siamese", "inet.", [&](const ArchConfig& a) { return std::vector<Shape>{img(a, a.hr_size), img(a, a.hr_size)}; },
        [](const ParamStore<double>& p, const ArchConfig& a, const std::vector<TD>& in) {
            return siamese_predict(p, a, in[0], in[1]);
        });

    // Linear in each single coordinate: central differences are exact for
    // any step, so a unit step leaves only rounding error.
    static const std::vector<std::string> kPerCoordinateLinear = {
        "add", "sub", "mul", "scale", "neg", "add_scalar", "sum", "mean", "sum_per_sample", "channel_sum",
        "reshape", "flatten", "expand", "expand_per_sample", "broadcast_channels", "bias_add", "concat",
        "pad_channels", "slice_channels", "pixel_shuffle", "space_to_depth", "conv2d", "conv2d_stride2", "matmul",
        "matmul_transposed", "fully_connected", "compose_sampling_grid", "adversarial_loss", "critic_loss",
        "total_loss"};
    for (auto& [name, make] : R)
        if (std::find(kPerCoordinateLinear.begin(), kPerCoordinateLinear.end(), name) != kPerCoordinateLinear.end())
            make = [inner = make](std::uint64_t s) {
                auto p = inner(s);
                p.h = 1.0;
                return p;
            };
    return R;
}

}  // namespace gradcheck_detail

inline std::vector<std::string> gradcheck_names() {
    std::vector<std::string> n;
    for (const auto& [name, f] : gradcheck_detail::registry()) n.push_back(name);
    return n;
}

inline GradcheckReport gradcheck(const std::string& name, const GradcheckOptions& o = {}) {
    for (const auto& [n, make] : gradcheck_detail::registry())
        if (n == name) return gradcheck_detail::run(n, make(derive_seed(o.seed, detail::name_hash(n))), o);
    std::string list;
    for (const auto& n : gradcheck_names()) list += (list.empty() ? "" : ", ") + n;
    throw ValidationError("unknown gradcheck op '" + name + "'; registered: " + list);
}

inline std::vector<GradcheckReport> gradcheck_all(const GradcheckOptions& o = {}) {
    std::vector<GradcheckReport> out;
    for (const auto& n : gradcheck_names()) out.push_back(gradcheck(n, o));
    return out;
}

}  // namespace gwai

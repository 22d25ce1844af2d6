#include <gtest/gtest.h>

#include <cmath>

#include <gwai/networks.hpp>
#include <gwai/resize.hpp>
#include <gwai/synthdata.hpp>

#include "support.hpp"

using namespace gwai;
using gwai::test::TD;
using TF = Tensor<float>;

namespace {

template <class T>
ParamStore<T> zero_params(const ArchConfig& a) {
    auto p = init_params<T>(a, 1);
    for (auto& [n, t] : p)
        for (auto& v : t.mutable_data()) v = T(0);
    return p;
}

/// Every tensor, including the zero-initialized output layers, drawn at random.
ParamStore<double> dense_random_params(const ArchConfig& a, std::uint64_t seed) {
    std::mt19937_64 g(seed);
    auto p = init_params<double>(a, seed);
    for (auto& [n, t] : p) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, t.numel() / t.dim(0))));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& v : t.mutable_data()) v = u(g) + (n.ends_with(".b") ? 0.05 : 0.0);
    }
    return p;
}

ParamStore<double> block_params(std::size_t c, double w1, double w2, std::uint64_t seed) {
    std::mt19937_64 g(seed);
    ParamStore<double> p;
    p.add("rb.conv1.w", scale(test::random_tensor({c, c, 3, 3}, g), w1));
    p.add("rb.conv1.b", TD::zeros({c}));
    p.add("rb.conv2.w", scale(test::random_tensor({c, c, 3, 3}, g), w2));
    p.add("rb.conv2.b", TD::zeros({c}));
    return p;
}

// Closed-form count of the full-size layout, written out layer by layer.
std::size_t full_size_count() {
    auto conv = [](std::size_t i, std::size_t o, std::size_t k) { return o * i * k * k + o; };
    auto fc = [](std::size_t i, std::size_t o) { return o * i + o; };
    std::size_t wnet = conv(6, 64, 3) + conv(64, 64, 3) + 2 * 2 * conv(64, 64, 3) + conv(64, 64, 3) +
                       8 * 2 * conv(64, 64, 3) + conv(64, 64, 3) + conv(1, 2, 3);
    std::size_t srnet = conv(3, 64, 3) + 16 * 2 * conv(64, 64, 3) + conv(64, 64, 3) + conv(64, 256, 3) +
                        2 * conv(64, 256, 3) + conv(64, 3, 3);
    std::size_t fusion = 3 * conv(128, 64, 3);
    std::size_t gfenet = conv(3, 64, 3) + 5 * conv(64, 64, 3) + 12 * 2 * conv(64, 64, 3);
    std::size_t cnet = conv(3, 64, 5) + conv(64, 128, 5) + conv(128, 256, 5) + conv(256, 512, 5) + fc(16 * 16 * 512, 1);
    std::size_t inet = conv(3, 64, 3) + conv(64, 64, 3) + conv(64, 128, 3) + conv(128, 128, 3) + conv(128, 256, 3) +
                       2 * conv(256, 256, 3) + conv(256, 512, 3) + 2 * conv(512, 512, 3) + 3 * conv(512, 512, 3) +
                       fc(8 * 8 * 512, 4096) + 2 * fc(4096, 4096) + 4096 + 1;
    return wnet + srnet + fusion + gfenet + cnet + inet;
}

}  // namespace

TEST(ResidualBlock, ZeroWeightsPassThrough) {
    std::mt19937_64 g(1);
    auto x = test::random_tensor({1, 4, 6, 6}, g);
    EXPECT_EQ(residual_block(block_params(4, 0.0, 0.0, 2), "rb", x, 1.0).vec(), x.vec());
}

TEST(ResidualBlock, ZeroScalePassesThrough) {
    std::mt19937_64 g(3);
    auto x = test::random_tensor({2, 4, 5, 5}, g);
    EXPECT_EQ(residual_block(block_params(4, 1.0, 1.0, 4), "rb", x, 0.0).vec(), x.vec());
}

TEST(ResidualBlock, PreservesShapeAndRejectsWidthMismatch) {
    std::mt19937_64 g(5);
    auto p = block_params(64, 0.1, 0.1, 6);
    EXPECT_EQ(residual_block(p, "rb", test::random_tensor({1, 64, 32, 32}, g), 1.0).shape(), (Shape{1, 64, 32, 32}));
    EXPECT_THROW(residual_block(p, "rb", TD::ones({1, 32, 8, 8}), 1.0), ShapeError);
}

TEST(Wnet, DeskShapes) {
    const auto a = ArchConfig::desk();
    auto p = init_params<float>(a, 7);
    std::mt19937_64 g(8);
    NoGradGuard ng;
    auto flow = wnet_forward(p, a, TF({2, 3, 64, 64}, 0.1f), TF({2, 3, 64, 64}, -0.2f));
    EXPECT_EQ(flow.values.shape(), (Shape{2, 2, 64, 64}));
    EXPECT_THROW(wnet_forward(p, a, TF({1, 3, 32, 32}), TF({1, 3, 32, 32})), ShapeError);
}

TEST(Wnet, ZeroParametersGiveIdentityWarp) {
    const auto a = ArchConfig::nano();
    auto p = zero_params<double>(a);
    std::mt19937_64 g(9);
    auto gi = test::random_tensor({1, 3, 32, 32}, g), lru = test::random_tensor({1, 3, 32, 32}, g);
    auto flow = wnet_forward(p, a, gi, lru);
    for (double v : flow.values.data()) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(warp_image(gi, flow).vec(), gi.vec());
}

TEST(Wnet, DefaultInitStartsAtIdentityWarp) {
    const auto a = ArchConfig::desk();
    auto p = init_params<float>(a, 10);
    std::mt19937_64 g(11);
    NoGradGuard ng;
    TF gi({1, 3, 64, 64}, 0.3f);
    auto flow = wnet_forward(p, a, gi, TF({1, 3, 64, 64}, 0.1f));
    for (float v : flow.values.data()) EXPECT_EQ(v, 0.0f);
    EXPECT_EQ(warp_image(gi, flow).vec(), gi.vec());
}

TEST(Gnet, DeskShapesAndFusionDepth) {
    const auto a = ArchConfig::desk();
    auto p = init_params<float>(a, 12);
    NoGradGuard ng;
    GnetTrace trace;
    auto sr = gnet_forward(p, a, TF({2, 3, 8, 8}, 0.1f), std::optional<TF>(TF({2, 3, 64, 64}, 0.2f)), &trace);
    EXPECT_EQ(sr.shape(), (Shape{2, 3, 64, 64}));
    ASSERT_EQ(trace.fusion_inputs.size(), 3u);
    EXPECT_EQ(trace.fusion_after_block, (std::vector<std::size_t>{2, 4, 6}));
    for (const auto& s : trace.fusion_inputs) EXPECT_EQ(s, (Shape{2, 32, 8, 8}));
    EXPECT_THROW(gnet_forward(p, a, TF({2, 3, 16, 16}), std::optional<TF>(TF({2, 3, 64, 64}))), ShapeError);
    EXPECT_THROW(gnet_forward(p, a, TF({2, 3, 8, 8}), std::optional<TF>(TF({2, 3, 32, 32}))), ShapeError);
}

TEST(Gnet, GuideFreeSrnetShapes) {
    auto a = ArchConfig::desk();
    a.use_guide = false;
    auto p = init_params<float>(a, 13);
    EXPECT_FALSE(p.contains("wnet.out.w"));
    EXPECT_FALSE(p.contains("gnet.fuse1.w"));
    NoGradGuard ng;
    EXPECT_EQ(srnet_forward(p, a, TF({3, 3, 8, 8}, 0.1f)).shape(), (Shape{3, 3, 64, 64}));
}

TEST(Gnet, FullScaleShapesAndFusionDepth) {
    const auto a = ArchConfig::paper();
    auto specs = wnet_specs(a);
    for (auto& s : gnet_specs(a)) specs.push_back(s);
    auto p = init_params<float>(specs, 14);
    NoGradGuard ng;
    TF gi({1, 3, 256, 256}, 0.1f), lru({1, 3, 256, 256}, 0.05f);
    auto flow = wnet_forward(p, a, gi, lru);
    EXPECT_EQ(flow.values.shape(), (Shape{1, 2, 256, 256}));
    GnetTrace trace;
    auto sr = gnet_forward(p, a, TF({1, 3, 32, 32}, 0.1f), std::optional<TF>(warp_image(gi, flow)), &trace);
    EXPECT_EQ(sr.shape(), (Shape{1, 3, 256, 256}));
    EXPECT_EQ(trace.fusion_after_block, (std::vector<std::size_t>{4, 8, 12}));
    for (const auto& s : trace.fusion_inputs) EXPECT_EQ(s[1], 128u);
}

TEST(Cnet, ShapesAndZeroParameters) {
    const auto a = ArchConfig::desk();
    EXPECT_EQ(critic_final_side(a), 4u);
    EXPECT_EQ(critic_final_side(ArchConfig::paper()), 16u);
    auto specs = cnet_specs(ArchConfig::paper());
    EXPECT_EQ(specs.back().shape, (Shape{1}));
    EXPECT_EQ(specs[specs.size() - 2].shape, (Shape{1, 16 * 16 * 512}));
    auto p = init_params<float>(a, 15);
    EXPECT_EQ(p.at("cnet.fc.w").shape(), (Shape{1, 4 * 4 * 128}));
    NoGradGuard ng;
    std::mt19937_64 g(16);
    EXPECT_EQ(cnet_forward(p, a, TF({3, 3, 64, 64}, 0.5f)).shape(), (Shape{3, 1}));
    auto z = zero_params<double>(ArchConfig::nano());
    auto s = cnet_forward(z, ArchConfig::nano(), test::random_tensor({2, 3, 32, 32}, g));
    for (double v : s.data()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(cnet_forward(p, a, TF({1, 3, 32, 32})), ShapeError);
}

TEST(Inet, DeskShapesAndPurity) {
    const auto a = ArchConfig::desk();
    auto p = init_params<float>(a, 17);
    NoGradGuard ng;
    TF x({2, 3, 64, 64}, 0.25f);
    auto e1 = inet_embed(p, a, x), e2 = inet_embed(p, a, x);
    EXPECT_EQ(e1.shape(), (Shape{2, 128}));
    EXPECT_EQ(e1.vec(), e2.vec());
    EXPECT_THROW(inet_embed(p, a, TF({1, 3, 32, 32})), ShapeError);
}

TEST(Inet, FullScaleLayerShapes) {
    const auto specs = inet_specs(ArchConfig::paper());
    auto find = [&](const std::string& n) {
        for (const auto& s : specs)
            if (s.name == n) return s.shape;
        return Shape{};
    };
    EXPECT_EQ(find("inet.fc1.w"), (Shape{4096, 8 * 8 * 512}));
    EXPECT_EQ(find("inet.fc3.w"), (Shape{4096, 4096}));
    EXPECT_EQ(find("inet.siamese.w"), (Shape{1, 4096}));
    EXPECT_EQ(find("inet.stage5.conv3.w"), (Shape{512, 512, 3, 3}));
}

TEST(Siamese, ClosedForms) {
    const auto a = ArchConfig::nano();
    auto p = init_params<double>(a, 18);
    std::mt19937_64 g(19);
    auto x = test::random_tensor({1, 3, 32, 32}, g);
    p.at("inet.siamese.b").mutable_data()[0] = 0.3;
    auto same = siamese_predict(p, a, x, x);
    EXPECT_NEAR(same.item(), 1.0 / (1.0 + std::exp(-0.3)), 1e-15);
    for (auto& v : p.at("inet.siamese.w").mutable_data()) v = 0.0;
    auto other = siamese_predict(p, a, x, test::random_tensor({1, 3, 32, 32}, g));
    EXPECT_NEAR(other.item(), 1.0 / (1.0 + std::exp(-0.3)), 1e-15);

    TD e1({1, 4}, std::vector<double>{0, 0, 1, 0}), e2({1, 4});
    TD w({1, 4}, std::vector<double>{0, 0, 2, 0}), b({1}, std::vector<double>{-1});
    EXPECT_NEAR(siamese_head(e1, e2, w, b).item(), 0.7310585786300049, 1e-12);
}

TEST(Siamese, AllPairsMatchesPairwisePrediction) {
    const auto a = ArchConfig::nano();
    auto p = init_params<double>(a, 22);
    std::mt19937_64 g(23);
    for (auto& v : p.at("inet.siamese.w").mutable_data()) v = std::uniform_real_distribution<double>(-2, 2)(g);
    std::vector<TD> xs;
    for (int i = 0; i < 4; ++i) xs.push_back(test::random_tensor({3, 32, 32}, g));
    NoGradGuard ng;
    const auto all = siamese_all_pairs(p, a, stack<double>(xs));
    ASSERT_EQ(all.shape(), (Shape{6, 1}));
    std::size_t row = 0;
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = i + 1; j < 4; ++j, ++row) {
            const std::vector<TD> xi{xs[i]}, xj{xs[j]};
            const auto one = siamese_predict(p, a, stack<double>(xi), stack<double>(xj));
            EXPECT_NEAR(all[row], one.item(), 1e-12) << i << "," << j;
        }
    EXPECT_EQ(pair_difference_matrix<double>(3).vec(), (std::vector<double>{1, -1, 0, 1, 0, -1, 0, 1, -1}));
}

TEST(Networks, ShapeContractOverConfigGrid) {
    for (std::size_t sr : {2, 4}) {
        for (std::size_t fi : {1, 2}) {
            ArchConfig a = ArchConfig::nano();
            a.sr_factor = sr;
            a.wnet_width = sr == 2 ? 4 : 16;
            a.n_gfenet_blocks = 2;
            a.fusion_interval = fi;
            a.n_srnet_blocks = 3;
            a.validate();
            auto p = init_params<double>(a, 20 + sr + fi);
            NoGradGuard ng;
            TD gi({2, 3, 32, 32}, 0.1), lr({2, 3, a.lr_size(), a.lr_size()}, 0.2);
            auto flow = wnet_forward(p, a, gi, bicubic_resize(lr, 32, 32));
            auto sr_img = gnet_forward(p, a, lr, std::optional<TD>(warp_image(gi, flow)));
            EXPECT_EQ(sr_img.shape(), (Shape{2, 3, 32, 32})) << "sr=" << sr << " fi=" << fi;
        }
    }
}

TEST(Networks, ConfigValidation) {
    auto a = ArchConfig::desk();
    a.sr_factor = 6;
    EXPECT_THROW(a.validate(), ValidationError);
    a = ArchConfig::desk();
    a.n_gfenet_blocks = 5;
    EXPECT_THROW(a.validate(), ValidationError);
    a = ArchConfig::desk();
    a.wnet_width = 16;
    EXPECT_THROW(a.validate(), ValidationError);
    EXPECT_NO_THROW(ArchConfig::paper().validate());
    EXPECT_NO_THROW(ArchConfig::nano().validate());
}

TEST(Networks, GradientReachesEveryParameter) {
    // nano topology, widened so that random ReLU layers are not dead by chance
    auto a = ArchConfig::nano();
    a.wnet_width = 16;
    a.base_width = 6;
    a.critic_widths = {4, 4, 4, 4};
    a.inet_widths = {8, 8, 8, 8, 8};
    a.inet_embed_dim = 16;
    auto p = dense_random_params(a, 21);
    std::mt19937_64 g(22);
    auto gi = test::random_tensor({2, 3, 32, 32}, g), gt = test::random_tensor({2, 3, 32, 32}, g);
    auto lr = bicubic_resize(gt, 16, 16);
    auto flow = wnet_forward(p, a, gi, bicubic_resize(lr, 32, 32));
    auto sr = gnet_forward(p, a, lr, std::optional<TD>(warp_image(gi, flow)));
    // The Siamese term alone leaves Inet biases with exactly cancelling
    // contributions when both branches share activation patterns, so the
    // embedding of the generated image enters directly as well.
    auto loss = add(add(mean(abs(sub(sr, gt))), mean(cnet_forward(p, a, sr))),
                    add(mean(siamese_predict(p, a, sr, gt)), mean(inet_embed(p, a, sr))));
    backward(loss);
    for (const auto& [name, t] : p) {
        ASSERT_TRUE(t.has_grad()) << name;
        bool nonzero = false;
        for (double v : t.grad().data()) nonzero |= v != 0.0;
        EXPECT_TRUE(nonzero) << name;
    }
}

TEST(Networks, FullScaleParameterCount) {
    const auto a = ArchConfig::paper();
    EXPECT_EQ(parameter_count(model_specs(a)), full_size_count());
    auto ban = a;
    ban.use_guide = false;
    EXPECT_LT(parameter_count(model_specs(ban)), parameter_count(model_specs(a)));
}

TEST(Networks, InitIsSeedDeterministic) {
    const auto a = ArchConfig::nano();
    auto p1 = init_params<float>(a, 5), p2 = init_params<float>(a, 5), p3 = init_params<float>(a, 6);
    bool differs = false;
    for (const auto& [n, t] : p1) {
        EXPECT_EQ(t.vec(), p2.at(n).vec()) << n;
        differs |= t.vec() != p3.at(n).vec();
    }
    EXPECT_TRUE(differs);
}

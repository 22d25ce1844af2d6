#include <gtest/gtest.h>

#include <cmath>

#include <gwai/conv_kernels.hpp>
#include <gwai/ops.hpp>
#include <gwai/resize.hpp>

#include "support.hpp"

using namespace gwai;
using gwai::test::TD;

namespace {

std::mt19937_64 rng_for(std::uint64_t s) { return std::mt19937_64(s); }

TD tensor(Shape s, std::vector<double> v) { return TD(std::move(s), std::move(v)); }

}  // namespace

TEST(Tensor, ShapeAndDataLengthMustAgree) {
    EXPECT_THROW(TD({2, 3}, std::vector<double>(5)), ShapeError);
    TD t({2, 3}, 1.5);
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.rank(), 2u);
}

TEST(Conv2d, ScalarKernelDoublesOnes) {
    auto y = conv2d(TD::ones({1, 1, 3, 3}), tensor({1, 1, 1, 1}, {2}), tensor({1}, {0}));
    EXPECT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
    for (double v : y.data()) EXPECT_EQ(v, 2.0);
}

TEST(Conv2d, SamePaddingShape) {
    auto g = rng_for(1);
    auto y = conv2d(test::random_tensor({1, 3, 32, 32}, g), test::random_tensor({64, 3, 3, 3}, g), TD::zeros({64}),
                    {.stride = 1, .padding = 1});
    EXPECT_EQ(y.shape(), (Shape{1, 64, 32, 32}));
}

TEST(Conv2d, StridedWindowSums) {
    auto y = conv2d(test::iota_tensor({1, 1, 4, 4}), TD::ones({1, 1, 2, 2}), TD::zeros({1}), {.stride = 2, .padding = 0});
    EXPECT_EQ(y.vec(), (std::vector<double>{10, 18, 42, 50}));
}

TEST(Conv2d, ChannelMismatchNamesBothShapes) {
    try {
        conv2d(TD::ones({1, 2, 4, 4}), TD::ones({1, 3, 3, 3}), TD::zeros({1}));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string m = e.what();
        EXPECT_NE(m.find("[1,2,4,4]"), std::string::npos) << m;
        EXPECT_NE(m.find("[1,3,3,3]"), std::string::npos) << m;
    }
}

TEST(Conv2d, MatchesReferenceLoops) {
    auto g = rng_for(2);
    struct Case {
        Shape x, w;
        std::size_t stride, pad;
    };
    for (const auto& c : {Case{{2, 8, 16, 16}, {5, 8, 3, 3}, 1, 1}, Case{{2, 3, 16, 16}, {4, 3, 5, 5}, 2, 2},
                          Case{{1, 4, 9, 7}, {6, 4, 1, 1}, 1, 0}, Case{{2, 2, 8, 8}, {3, 2, 3, 3}, 2, 0}}) {
        auto x = test::random_tensor(c.x, g), w = test::random_tensor(c.w, g), b = test::random_tensor({c.w[0]}, g);
        auto y = conv2d(x, w, b, {c.stride, c.pad});
        auto ref = test::reference_conv(x, w, &b, c.stride, c.pad);
        ASSERT_EQ(y.numel(), ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
    }
}

TEST(Conv2d, FastBackwardMatchesShippedNaiveKernels) {
    auto g = rng_for(3);
    auto x = test::random_tensor({2, 3, 9, 8}, g), w = test::random_tensor({4, 3, 3, 3}, g);
    const kernels::ConvGeometry geo{.batch = 2, .in_c = 3, .in_h = 9, .in_w = 8, .out_c = 4, .k_h = 3, .k_w = 3,
                                    .stride = 2, .pad = 1};
    auto gy = test::random_tensor({2, 4, geo.out_h(), geo.out_w()}, g);
    std::vector<double> a(x.numel()), b(x.numel()), wa(w.numel()), wb(w.numel());
    kernels::conv_backward_input<double>(geo, gy.data(), w.data(), a);
    kernels::conv_backward_input_naive<double>(geo, gy.data(), w.data(), b);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    kernels::conv_backward_weight<double>(geo, x.data(), gy.data(), wa);
    kernels::conv_backward_weight_naive<double>(geo, x.data(), gy.data(), wb);
    for (std::size_t i = 0; i < wa.size(); ++i) EXPECT_NEAR(wa[i], wb[i], 1e-12);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
    auto g = rng_for(4);
    auto err = test::gradient_error(
        [](const std::vector<TD>& v) { return test::probe_sum(conv2d(v[0], v[1], v[2], {2, 1})); },
        {test::random_tensor({2, 2, 5, 6}, g), test::random_tensor({3, 2, 3, 3}, g), test::random_tensor({3}, g)});
    EXPECT_LT(err, 1e-6);
}

TEST(Conv2d, SecondOrderMatchesFiniteDifferences) {
    // d/dw of ||d(probe(conv))/dx||^2 exercises the transposed and weight-gradient convolutions.
    auto g = rng_for(5);
    auto err = test::gradient_error(
        [](const std::vector<TD>& v) {
            auto x = v[0].detach();
            x.set_requires_grad(true);
            auto y = test::probe_sum(leaky_relu(conv2d(x, v[1], v[2], {1, 1}), 0.2));
            auto gx = grad(y, {x}, true)[0];
            return sum(mul(gx, gx));
        },
        {test::random_tensor({1, 2, 4, 4}, g), test::random_tensor({2, 2, 3, 3}, g), test::random_tensor({2}, g)});
    EXPECT_LT(err, 1e-6);
}

TEST(Activations, ReluAndLeakyRelu) {
    auto x = tensor({3}, {-1, 0, 2});
    EXPECT_EQ(relu(x).vec(), (std::vector<double>{0, 0, 2}));
    auto l = leaky_relu(x, 0.2);
    EXPECT_DOUBLE_EQ(l[0], -0.2);
    EXPECT_EQ(l[1], 0.0);
    EXPECT_EQ(l[2], 2.0);
}

TEST(Activations, LeakyReluBackwardNegativeSlope) {
    auto x = tensor({1}, {-3});
    x.set_requires_grad(true);
    auto gx = grad(sum(leaky_relu(x, 0.2)), {x}, false, TD(Shape{}, 5.0))[0];
    EXPECT_DOUBLE_EQ(gx[0], 1.0);
}

TEST(Activations, SubgradientAtZeroUsesNegativeBranch) {
    auto x = tensor({1}, {0});
    x.set_requires_grad(true);
    EXPECT_EQ(grad(sum(relu(x)), {x})[0][0], 0.0);
    EXPECT_DOUBLE_EQ(grad(sum(leaky_relu(x, 0.2)), {x})[0][0], 0.2);
}

TEST(MaxPool, WindowMaximum) {
    auto y = max_pool2d(tensor({1, 1, 2, 2}, {1, 2, 3, 4}), 2, 2);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_EQ(y[0], 4.0);
    auto c = max_pool2d(TD({1, 2, 4, 4}, 0.375), 2, 2);
    EXPECT_EQ(c.shape(), (Shape{1, 2, 2, 2}));
    for (double v : c.data()) EXPECT_EQ(v, 0.375);
}

TEST(MaxPool, TieRoutesToFirstOccurrence) {
    auto x = tensor({1, 1, 2, 2}, {7, 7, 7, 7});
    x.set_requires_grad(true);
    backward(sum(max_pool2d(x, 2, 2)));
    EXPECT_EQ(x.grad().vec(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(MaxPool, RejectsOversizedWindow) { EXPECT_THROW(max_pool2d(TD::ones({1, 1, 2, 3}), 3, 1), ShapeError); }

TEST(PixelShuffle, LayoutDefinition) {
    auto y = pixel_shuffle(tensor({1, 4, 1, 1}, {1, 2, 3, 4}), 2);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
    EXPECT_EQ(y.vec(), (std::vector<double>{1, 2, 3, 4}));
    EXPECT_EQ(pixel_shuffle(TD::ones({1, 64, 8, 8}), 2).shape(), (Shape{1, 16, 16, 16}));
    EXPECT_THROW(pixel_shuffle(TD::ones({1, 6, 2, 2}), 2), ShapeError);
}

TEST(PixelShuffle, SpaceToDepthIsExactInverse) {
    auto g = rng_for(6);
    auto x = test::random_tensor({2, 8, 3, 5}, g);
    EXPECT_EQ(space_to_depth(pixel_shuffle(x, 2), 2).vec(), x.vec());
    auto z = test::random_tensor({2, 3, 6, 4}, g);
    EXPECT_EQ(pixel_shuffle(space_to_depth(z, 2), 2).vec(), z.vec());
}

TEST(ConcatDepth, StacksChannels) {
    auto a = TD({1, 2, 2, 2}, 1.0), b = TD({1, 3, 2, 2}, 2.0);
    auto y = concat_depth(a, b);
    EXPECT_EQ(y.shape(), (Shape{1, 5, 2, 2}));
    EXPECT_EQ(y[7], 1.0);
    EXPECT_EQ(y[8], 2.0);
    EXPECT_THROW(concat_depth(a, TD::ones({1, 1, 3, 2})), ShapeError);
}

TEST(FullyConnected, AffineMap) {
    auto y = fully_connected(tensor({1, 2}, {1, 2}), tensor({2, 2}, {1, 0, 0, 1}), tensor({2}, {0.5, -0.5}));
    EXPECT_EQ(y.vec(), (std::vector<double>{1.5, 1.5}));
    EXPECT_THROW(fully_connected(TD::ones({1, 3}), TD::ones({2, 2}), TD::zeros({2})), ShapeError);
}

TEST(Bicubic, KernelInterpolates) {
    EXPECT_EQ(cubic_kernel(0.0), 1.0);
    for (double x : {-2.0, -1.0, 1.0, 2.0}) EXPECT_EQ(cubic_kernel(x), 0.0);
}

TEST(Bicubic, ConstantImageStaysConstant) {
    auto img = TD({3, 16, 16}, 0.3);
    for (auto [h, w] : {std::pair{2, 2}, {5, 7}, {40, 24}}) {
        auto y = bicubic_resize(img, h, w);
        for (double v : y.data()) EXPECT_NEAR(v, 0.3, 1e-15);
    }
}

TEST(Bicubic, DownThenUpRestoresShape) {
    auto g = rng_for(7);
    auto img = test::random_tensor({3, 256, 256}, g, 0, 1);
    auto lr = bicubic_resize(img, 32, 32);
    EXPECT_EQ(lr.shape(), (Shape{3, 32, 32}));
    EXPECT_EQ(bicubic_resize(lr, 256, 256).shape(), img.shape());
}

TEST(Backward, SumAndSquare) {
    auto g = rng_for(8);
    auto x = test::random_tensor({3, 4}, g);
    x.set_requires_grad(true);
    backward(sum(x));
    for (double v : x.grad().data()) EXPECT_EQ(v, 1.0);
    x.zero_grad();
    backward(sum(mul(x, x)));
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * x[i]);
}

TEST(Backward, AccumulatesAcrossCalls) {
    auto x = tensor({2}, {1, 2});
    x.set_requires_grad(true);
    backward(sum(x));
    backward(sum(scale(x, 3.0)));
    EXPECT_EQ(x.grad().vec(), (std::vector<double>{4, 4}));
}

TEST(Backward, RejectsNonScalar) {
    auto x = TD::ones({2});
    x.set_requires_grad(true);
    EXPECT_THROW(backward(mul(x, x)), ShapeError);
}

TEST(Backward, MultiUseTensorSumsContributions) {
    auto x = tensor({1}, {3});
    x.set_requires_grad(true);
    auto y = add(mul(x, x), add(x, x));
    backward(sum(y));
    EXPECT_DOUBLE_EQ(x.grad()[0], 2 * 3 + 2);
}

TEST(Backward, VisitsNodesInReverseRecordingOrder) {
    auto x = tensor({1}, {2});
    x.set_requires_grad(true);
    auto a = mul(x, x);
    auto b = add(a, x);
    auto c = mul(b, a);
    ASSERT_TRUE(a.grad_fn() && b.grad_fn() && c.grad_fn());
    EXPECT_LT(a.grad_fn()->seq, b.grad_fn()->seq);
    EXPECT_LT(b.grad_fn()->seq, c.grad_fn()->seq);
    backward(sum(c));
    // c = (x^2 + x) x^2 -> dc/dx = 4x^3 + 3x^2
    EXPECT_DOUBLE_EQ(x.grad()[0], 4 * 8 + 3 * 4);
}

TEST(Backward, PrimitivesMatchFiniteDifferences) {
    auto g = rng_for(9);
    using F = std::function<TD(const std::vector<TD>&)>;
    struct Case {
        const char* name;
        F f;
        std::vector<Shape> shapes;
        double lo = -1, hi = 1;
    };
    const std::vector<Case> cases = {
        {"add", [](auto& v) { return test::probe_sum(add(v[0], v[1])); }, {{2, 3}, {2, 3}}},
        {"mul", [](auto& v) { return test::probe_sum(mul(v[0], v[1])); }, {{2, 3}, {2, 3}}},
        {"sqrt", [](auto& v) { return test::probe_sum(sqrt(v[0])); }, {{5}}, 0.5, 2},
        {"log", [](auto& v) { return test::probe_sum(log(v[0])); }, {{5}}, 0.5, 2},
        {"sigmoid", [](auto& v) { return test::probe_sum(sigmoid(v[0])); }, {{5}}},
        {"leaky_relu", [](auto& v) { return test::probe_sum(leaky_relu(v[0], 0.2)); }, {{7}}},
        {"max_pool2d", [](auto& v) { return test::probe_sum(max_pool2d(v[0], 2, 2)); }, {{1, 2, 4, 4}}},
        {"pixel_shuffle", [](auto& v) { return test::probe_sum(pixel_shuffle(v[0], 2)); }, {{1, 8, 2, 3}}},
        {"concat", [](auto& v) { return test::probe_sum(concat_depth(v[0], v[1])); }, {{1, 2, 2, 2}, {1, 1, 2, 2}}},
        {"fc", [](auto& v) { return test::probe_sum(fully_connected(v[0], v[1], v[2])); }, {{2, 3}, {4, 3}, {4}}},
        {"mean", [](auto& v) { return mean(mul(v[0], v[0])); }, {{3, 3}}},
    };
    for (const auto& c : cases) {
        std::vector<TD> xs;
        for (const auto& s : c.shapes) xs.push_back(test::random_tensor(s, g, c.lo, c.hi));
        EXPECT_LT(test::gradient_error(c.f, xs), 1e-6) << c.name;
    }
}

TEST(Purity, ForwardOpsAreBitwiseRepeatable) {
    auto g = rng_for(10);
    auto x = test::random_tensor({2, 3, 8, 8}, g), w = test::random_tensor({4, 3, 3, 3}, g), b = TD::zeros({4});
    EXPECT_EQ(conv2d(x, w, b, {1, 1}).vec(), conv2d(x, w, b, {1, 1}).vec());
    EXPECT_EQ(max_pool2d(x, 2, 2).vec(), max_pool2d(x, 2, 2).vec());
    EXPECT_EQ(bicubic_resize(x, 5, 5).vec(), bicubic_resize(x, 5, 5).vec());
}

TEST(Tape, ClearedTapeReleasesSavedValues) {
    {
        auto x = TD({64}, 1.0);
        x.set_requires_grad(true);
        auto y = mul(x, x);
        backward(sum(y));
    }
    Tape::current().clear();
    EXPECT_EQ(Tape::current().live_nodes(), 0u);
}

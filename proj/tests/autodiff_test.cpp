#include <gtest/gtest.h>

#include "rgbx/graph.hpp"
#include "rgbx/nnops.hpp"
#include "rgbx/selfcheck.hpp"

using namespace rgbx;

namespace {

Buffer grad_or_zeros(Tensor t) {
    Buffer g = t.grad();
    if (g.empty()) g.assign(t.size(), 0.0);
    return g;
}

} // namespace

TEST(Elementwise, BasicExamples) {
    Graph g;
    Tensor a = g.leaf({2}, {1, 2});
    Tensor b = g.leaf({2}, {3, 4});
    EXPECT_EQ(add(a, b).value(), (Buffer{4, 6}));

    Tensor c = g.leaf({3}, {-2, 0, 3});
    EXPECT_EQ(abs(c).value(), (Buffer{2, 0, 3}));

    Tensor r = g.leaf({2}, {-1, 0.5});
    EXPECT_EQ(relu(r).value(), (Buffer{0, 0.5}));

    Tensor m = mul(a, 2.0);
    EXPECT_EQ(m.value(), (Buffer{2, 4}));
}

TEST(Elementwise, ShapeMismatchThrows) {
    Graph g;
    Tensor a = g.leaf({2}, {1, 2});
    Tensor b = g.leaf({3}, {1, 2, 3});
    EXPECT_THROW(add(a, b), std::invalid_argument);
}

TEST(Elementwise, DivRecordsFaultOnTinyDivisor) {
    Graph g;
    Tensor a = g.leaf({2}, {1, 1});
    Tensor b = g.leaf({2}, {1e-13, 1.0});
    div(a, b);
    EXPECT_GE(g.fault_count(), 1);

    Graph g2;
    Tensor c = g2.leaf({2}, {1, 1});
    Tensor e = g2.leaf({2}, {0.5, 1.0});
    div(c, e);
    EXPECT_EQ(g2.fault_count(), 0);
}

TEST(Reduce, MeanAndMaskedForms) {
    Graph g;
    Tensor a = g.leaf({3}, {1, 2, 3});
    EXPECT_DOUBLE_EQ(reduce_mean(a).item(), 2.0);

    Tensor mask = g.leaf({3}, {1, 0, 1});
    EXPECT_DOUBLE_EQ(reduce_mean(a, mask, 1e-6).item(), (1.0 + 3.0) / (2.0 + 1e-6));

    Tensor s = g.leaf({1}, {5});
    Tensor zmask = g.leaf({1}, {0});
    EXPECT_DOUBLE_EQ(reduce_sum(s, zmask).item(), 0.0);
}

TEST(Conv2d, IdentityKernel1x1) {
    Graph g;
    Tensor x = g.leaf({1, 1, 1, 1}, {5});
    Tensor w = g.leaf({1, 1, 1, 1}, {1});
    Tensor b = g.leaf({1}, {0});
    EXPECT_EQ(conv2d(x, w, b, 1).value(), (Buffer{5}));
}

TEST(Conv2d, HandComputed3x3OnFixedGrid) {
    Graph g;
    Buffer grid(16);
    for (int i = 0; i < 16; ++i) grid[i] = i + 1;
    Tensor x = g.leaf({1, 1, 4, 4}, grid);
    Tensor w = g.leaf({1, 1, 3, 3}, Buffer(9, 1.0));
    Tensor b = g.leaf({1}, {0});
    Tensor y = conv2d(x, w, b, 1);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
    // Interior outputs equal the sum of the 3x3 window around each pixel.
    EXPECT_DOUBLE_EQ(y.value()[1 * 4 + 1], 54.0);
    EXPECT_DOUBLE_EQ(y.value()[1 * 4 + 2], 63.0);
    EXPECT_DOUBLE_EQ(y.value()[2 * 4 + 1], 90.0);
    EXPECT_DOUBLE_EQ(y.value()[2 * 4 + 2], 99.0);
}

TEST(Conv2d, Stride2ShapeAndErrors) {
    Graph g;
    Tensor x = g.leaf({1, 1, 4, 4}, Buffer(16, 1.0));
    Tensor w = g.leaf({1, 1, 3, 3}, Buffer(9, 0.1));
    Tensor b = g.leaf({1}, {0});
    EXPECT_EQ(conv2d(x, w, b, 2).shape(), (Shape{1, 1, 2, 2}));

    Tensor odd = g.leaf({1, 1, 5, 4}, Buffer(20, 1.0));
    EXPECT_THROW(conv2d(odd, w, b, 2), std::invalid_argument);

    Tensor w2 = g.leaf({1, 2, 3, 3}, Buffer(18, 0.1));
    EXPECT_THROW(conv2d(x, w2, b, 1), std::invalid_argument);
}

TEST(Conv2d, MatchesReferenceOnRandomInput) {
    Rng rng(99);
    const int n = 2, ci = 3, h = 6, w = 6, co = 4;
    Buffer x(n * ci * h * w), wgt(co * ci * 9), bias(co);
    for (double& v : x) v = rng.uniform(-1, 1);
    for (double& v : wgt) v = rng.uniform(-1, 1);
    for (double& v : bias) v = rng.uniform(-1, 1);
    for (int stride : {1, 2}) {
        Graph g;
        Tensor y = conv2d(g.leaf({n, ci, h, w}, x), g.leaf({co, ci, 3, 3}, wgt),
                          g.leaf({co}, bias), stride);
        Buffer ref = selfcheck::reference_conv2d(x, n, ci, h, w, wgt, co, 3, bias, stride);
        ASSERT_EQ(y.value().size(), ref.size());
        for (size_t i = 0; i < ref.size(); ++i)
            EXPECT_NEAR(y.value()[i], ref[i], 1e-12) << "stride " << stride << " idx " << i;
    }
}

TEST(Upsample, ReplicationAndBackward) {
    Graph g;
    Tensor x = g.leaf({1, 1, 2, 2}, {1, 2, 3, 4}, true);
    Tensor y = nearest_upsample2(x);
    EXPECT_EQ(y.value(), (Buffer{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));

    Tensor c = g.leaf({1, 1, 2, 2}, Buffer(4, 7.0));
    for (double v : nearest_upsample2(c).value()) EXPECT_DOUBLE_EQ(v, 7.0);

    // Backward of an all-ones upstream gradient sums each 2x2 block.
    Tensor loss = reduce_sum(y);
    g.backward(loss);
    EXPECT_EQ(x.grad(), (Buffer{4, 4, 4, 4}));
}

TEST(Downsample, BlockMeanAndShape) {
    Graph g;
    Tensor x = g.leaf({1, 1, 2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(avg_downsample2(x).value(), (Buffer{2.5}));

    Tensor c = g.leaf({1, 1, 4, 4}, Buffer(16, 3.25));
    Tensor y = avg_downsample2(c);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
    for (double v : y.value()) EXPECT_DOUBLE_EQ(v, 3.25);

    Tensor odd = g.leaf({1, 1, 3, 4}, Buffer(12, 1.0));
    EXPECT_THROW(avg_downsample2(odd), std::invalid_argument);
}

TEST(Sobel, ConstantAndRamps) {
    const int n = 6;
    Graph g;
    Tensor c = g.leaf({1, 1, n, n}, Buffer(n * n, 2.0));
    auto [ch, cw] = sobel_gradients(c);
    for (int r = 1; r + 1 < n; ++r)
        for (int k = 1; k + 1 < n; ++k) {
            EXPECT_DOUBLE_EQ(ch.value()[r * n + k], 0.0);
            EXPECT_DOUBLE_EQ(cw.value()[r * n + k], 0.0);
        }

    Buffer hram(n * n), vram(n * n);
    for (int r = 0; r < n; ++r)
        for (int k = 0; k < n; ++k) {
            hram[r * n + k] = k;
            vram[r * n + k] = r;
        }
    auto [hh, hw] = sobel_gradients(g.leaf({1, 1, n, n}, hram));
    auto [vh, vw] = sobel_gradients(g.leaf({1, 1, n, n}, vram));
    for (int r = 1; r + 1 < n; ++r)
        for (int k = 1; k + 1 < n; ++k) {
            EXPECT_DOUBLE_EQ(hw.value()[r * n + k], 8.0);
            EXPECT_DOUBLE_EQ(hh.value()[r * n + k], 0.0);
            EXPECT_DOUBLE_EQ(vh.value()[r * n + k], 8.0);
            EXPECT_DOUBLE_EQ(vw.value()[r * n + k], 0.0);
        }
}

TEST(Concat, ShapeValuesAndBackward) {
    Graph g;
    Tensor a = g.leaf({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, true);
    Tensor b = g.leaf({1, 1, 2, 2}, {9, 10, 11, 12}, true);
    Tensor y = concat_channels(a, b);
    EXPECT_EQ(y.shape(), (Shape{1, 3, 2, 2}));
    EXPECT_EQ(y.value(), (Buffer{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}));

    Buffer weights(12);
    for (int i = 0; i < 12; ++i) weights[i] = i + 1;
    Tensor loss = reduce_sum(mul(y, g.leaf({1, 3, 2, 2}, weights)));
    g.backward(loss);
    EXPECT_EQ(a.grad(), (Buffer{1, 2, 3, 4, 5, 6, 7, 8}));
    EXPECT_EQ(b.grad(), (Buffer{9, 10, 11, 12}));

    Tensor c = g.leaf({1, 1, 3, 2}, Buffer(6, 0.0));
    EXPECT_THROW(concat_channels(a, c), std::invalid_argument);
}

TEST(Backward, AnalyticExample) {
    Graph g;
    Tensor w = g.leaf({2}, {1, 2}, true);
    Tensor loss = reduce_mean(square(w));
    g.backward(loss);
    // d/dw mean(w^2) = 2w / M = w for M = 2
    EXPECT_EQ(w.grad(), (Buffer{1, 2}));
}

TEST(Backward, DisconnectedParameterHasZeroGrad) {
    Graph g;
    Tensor w = g.leaf({2}, {1, 2}, true);
    Tensor p = g.leaf({2}, {5, 5}, true);
    g.backward(reduce_mean(square(w)));
    EXPECT_EQ(grad_or_zeros(p), (Buffer{0, 0}));
}

TEST(Backward, NonScalarLossThrows) {
    Graph g;
    Tensor w = g.leaf({2}, {1, 2}, true);
    EXPECT_THROW(g.backward(square(w)), std::invalid_argument);
}

TEST(Backward, RepeatedCallsAccumulate) {
    Graph g;
    Tensor w = g.leaf({2}, {1, 2}, true);
    Tensor loss = reduce_mean(square(w));
    g.backward(loss);
    g.backward(loss);
    EXPECT_EQ(w.grad(), (Buffer{2, 4}));
    g.zero_grad();
    g.backward(loss);
    EXPECT_EQ(w.grad(), (Buffer{1, 2}));
}

TEST(Backward, LinearInLossScale) {
    Rng rng(4);
    Buffer data(36);
    for (double& v : data) v = rng.uniform(-1, 1);
    const double alpha = 3.5;
    Graph g1, g2;
    Tensor a1 = g1.leaf({1, 1, 6, 6}, data, true);
    Tensor a2 = g2.leaf({1, 1, 6, 6}, data, true);
    g1.backward(reduce_mean(square(a1)));
    g2.backward(mul(reduce_mean(square(a2)), alpha));
    for (size_t i = 0; i < data.size(); ++i)
        EXPECT_NEAR(a2.grad()[i], alpha * a1.grad()[i], 1e-12);
}

TEST(Graph, ReplayReproducesForwardBitwise) {
    Rng rng(11);
    Buffer x(2 * 3 * 8 * 8), w(4 * 3 * 9), b(4, 0.1);
    for (double& v : x) v = rng.uniform(-1, 1);
    for (double& v : w) v = rng.normal(0, 0.3);
    Graph g;
    Tensor xt = g.leaf({2, 3, 8, 8}, x, true);
    Tensor y = conv2d(xt, g.leaf({4, 3, 3, 3}, w, true), g.leaf({4}, b, true), 2);
    Tensor z = nearest_upsample2(relu(y));
    auto [sh, sw] = sobel_gradients(z);
    Tensor loss = reduce_mean(abs(add(sh, sw)));
    Buffer before_loss = loss.value();
    Buffer before_z = z.value();
    g.replay();
    EXPECT_EQ(loss.value(), before_loss);
    EXPECT_EQ(z.value(), before_z);
}

TEST(GradientFidelity, EveryOpMatchesFiniteDifferences) {
    for (const auto& item : selfcheck::op_gradient_suite())
        EXPECT_TRUE(item.pass) << item.name << " max rel err " << item.err << " tol " << item.tol;
}

TEST(BatchNorm, TrainingModeRequiresBatch) {
    Graph g;
    BatchNormState state(2);
    Tensor x = g.leaf({1, 2, 2, 2}, Buffer(8, 1.0));
    Tensor gamma = g.leaf({2}, {1, 1});
    Tensor beta = g.leaf({2}, {0, 0});
    EXPECT_THROW(batch_norm(x, gamma, beta, true, state), std::invalid_argument);
}

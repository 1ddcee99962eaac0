#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>

#include "rgbx/net.hpp"
#include "rgbx/selfcheck.hpp"

using namespace rgbx;

namespace {

NetConfig toy_config() {
    NetConfig c;
    c.levels = 1;
    c.base_channels = 2;
    c.blocks_per_level = 1;
    return c;
}

Buffer random_buffer(size_t n, uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Rng rng(seed);
    Buffer b(n);
    for (double& v : b) v = rng.uniform(lo, hi);
    return b;
}

RgbField random_rgb(int h, int w, uint64_t seed) {
    RgbField f(h, w);
    Rng rng(seed);
    for (double& v : f.data) v = rng.uniform(0, 1);
    return f;
}

DepthField random_depth(int h, int w, uint64_t seed) {
    DepthField f(h, w);
    Rng rng(seed);
    for (double& v : f.values) v = rng.uniform(0.1, 1);
    return f;
}

} // namespace

TEST(ResidualBlock, IdentityAtZeroAlphaBitwise) {
    std::vector<ParamDesc> reg;
    ResidualBlock blk(BlockKind::ReZero, 3, "blk", reg);
    Rng rng(5);
    for (auto& p : reg)
        if (p.shape.size() == 4)
            for (double& v : *p.data) v = rng.normal(0, 0.5);
    Graph g;
    Tensor x = g.leaf(Shape{2, 3, 8, 8}, random_buffer(2 * 3 * 64, 6));
    Tensor y = blk.forward(g, x);
    EXPECT_EQ(y.value(), x.value());
}

TEST(ResidualBlock, AlphaOneZeroWeightsGivesBiasPath) {
    std::vector<ParamDesc> reg;
    ResidualBlock blk(BlockKind::ReZero, 2, "blk", reg);
    blk.alpha()[0] = 1.0;
    blk.conv2_bias() = {0.25, -0.5};
    Graph g;
    Buffer xv = random_buffer(2 * 16, 7);
    Tensor x = g.leaf(Shape{1, 2, 4, 4}, xv);
    Tensor y = blk.forward(g, x);
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 16; ++i) {
            const double bias = c == 0 ? 0.25 : -0.5;
            EXPECT_DOUBLE_EQ(y.value()[c * 16 + i], xv[size_t(c) * 16 + i] + bias);
        }
}

TEST(ResidualBlock, AlphaGradientEqualsResidualBranch) {
    std::vector<ParamDesc> reg;
    ResidualBlock blk(BlockKind::ReZero, 2, "blk", reg);
    Rng rng(8);
    for (auto& p : reg)
        if (p.shape.size() == 4)
            for (double& v : *p.data) v = rng.normal(0, 0.5);
    Buffer xv = random_buffer(2 * 16, 9);

    // residual branch = out(alpha=1) - out(alpha=0)
    blk.alpha()[0] = 1.0;
    Graph g1;
    Buffer out1 = blk.forward(g1, g1.leaf(Shape{1, 2, 4, 4}, xv)).value();
    blk.alpha()[0] = 0.0;
    Graph g0;
    Buffer out0 = blk.forward(g0, g0.leaf(Shape{1, 2, 4, 4}, xv)).value();

    const size_t probe = 13;
    Graph g;
    Tensor x = g.leaf(Shape{1, 2, 4, 4}, xv);
    Tensor y = blk.forward(g, x);
    g.backward(gather(y, {probe}));
    // find the alpha leaf gradient
    double dalpha = 0.0;
    bool found = false;
    for (size_t id = 0; id < g.node_count(); ++id) {
        const auto& n = g.node(int(id));
        if (!n.forward && n.requires_grad && n.shape == Shape{1} && !n.grad.empty()) {
            dalpha = n.grad[0];
            found = true;
        }
    }
    ASSERT_TRUE(found);
    EXPECT_NEAR(dalpha, out1[probe] - out0[probe], 1e-10);

    // finite-difference cross-check
    auto eval = [&](double a) {
        blk.alpha()[0] = a;
        Graph ge;
        return blk.forward(ge, ge.leaf(Shape{1, 2, 4, 4}, xv)).value()[probe];
    };
    const double fd = (eval(1e-5) - eval(-1e-5)) / 2e-5;
    EXPECT_NEAR(dalpha, fd, 1e-6);
}

TEST(BnBlock, ConstantInputNormalizesToBiasPath) {
    std::vector<ParamDesc> reg;
    ResidualBlock blk(BlockKind::BatchNorm, 2, "blk", reg);
    Rng rng(10);
    for (auto& p : reg)
        if (p.shape.size() == 4)
            for (double& v : *p.data) v = rng.normal(0, 0.5);
    blk.conv2_bias() = {0.125, 0.375};
    // constant per-channel input, batch of 2
    Buffer xv(2 * 2 * 16);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 2; ++c)
            for (int i = 0; i < 16; ++i) xv[(size_t(n) * 2 + c) * 16 + i] = c == 0 ? 0.3 : 0.9;
    Graph g;
    Tensor y = blk.forward(g, g.leaf(Shape{2, 2, 4, 4}, xv), true);
    // normalized activations are 0, so only conv biases survive the branch
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 2; ++c)
            for (int i = 0; i < 16; ++i) {
                const double in = c == 0 ? 0.3 : 0.9;
                const double bias = c == 0 ? 0.125 : 0.375;
                EXPECT_NEAR(y.value()[(size_t(n) * 2 + c) * 16 + i], in + bias, 1e-9);
            }
}

TEST(BatchNormOp, RemovesBatchScaleUpToEps) {
    Buffer xv = random_buffer(2 * 2 * 16, 11, 0.2, 1.0);
    Buffer scaled = xv;
    for (double& v : scaled) v *= 100.0;
    auto normalized = [](const Buffer& data) {
        Graph g;
        BatchNormState st(2);
        Tensor x = g.leaf(Shape{2, 2, 4, 4}, data);
        Tensor gamma = g.leaf(Shape{2}, {1, 1});
        Tensor beta = g.leaf(Shape{2}, {0, 0});
        return batch_norm(x, gamma, beta, true, st).value();
    };
    // eps = 1e-5 inside the sqrt shifts normalized values by ~eps/(2 var).
    Buffer a = normalized(xv), b = normalized(scaled);
    for (size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 5e-4);
}

TEST(BatchNormOp, InferenceIsPureAffine) {
    Graph g;
    BatchNormState st(1);
    st.running_mean = {0.4};
    st.running_var = {2.0};
    Buffer xv = random_buffer(16, 12);
    Tensor x = g.leaf(Shape{1, 1, 4, 4}, xv);
    Tensor y = batch_norm(x, g.leaf(Shape{1}, {1.5}), g.leaf(Shape{1}, {0.3}), false, st);
    const double inv = 1.0 / std::sqrt(2.0 + 1e-5);
    for (size_t i = 0; i < xv.size(); ++i)
        EXPECT_NEAR(y.value()[i], (xv[i] - 0.4) * inv * 1.5 + 0.3, 1e-12);
}

TEST(UNet, OutputShapeAndSizeValidation) {
    UNet net(toy_config());
    net.init_weights(1);
    Graph g;
    Tensor in = g.leaf(Shape{2, 5, 8, 6}, random_buffer(2 * 5 * 48, 13));
    Tensor out = net.forward(g, in);
    EXPECT_EQ(out.shape(), (Shape{2, 1, 8, 6}));

    Graph g2;
    Tensor bad = g2.leaf(Shape{1, 5, 9, 8}, random_buffer(5 * 72, 14));
    EXPECT_THROW(net.forward(g2, bad), std::invalid_argument);
}

TEST(UNet, InitZeroAlphasAndSeededDeterminism) {
    UNet a(toy_config()), b(toy_config());
    a.init_weights(77);
    b.init_weights(77);
    for (size_t i = 0; i < a.params().size(); ++i) {
        EXPECT_EQ(*a.params()[i].data, *b.params()[i].data) << a.params()[i].name;
        if (a.params()[i].name.ends_with(".alpha"))
            EXPECT_DOUBLE_EQ((*a.params()[i].data)[0], 0.0);
    }
    UNet c(toy_config());
    c.init_weights(78);
    bool any_diff = false;
    for (size_t i = 0; i < a.params().size(); ++i)
        if (*a.params()[i].data != *c.params()[i].data) any_diff = true;
    EXPECT_TRUE(any_diff);
}

TEST(UNet, HeInitVarianceWithinTenPercent) {
    UNet net; // desk config; enc3 convs have fan_in = 128 * 9 = 1152
    net.init_weights(123);
    for (const auto& p : net.params()) {
        if (p.shape.size() != 4) continue;
        const size_t fan_in = size_t(p.shape[1]) * p.shape[2] * p.shape[3];
        if (fan_in < 1024) continue;
        double mean = 0;
        for (double v : *p.data) mean += v;
        mean /= double(p.data->size());
        double var = 0;
        for (double v : *p.data) var += (v - mean) * (v - mean);
        var /= double(p.data->size());
        EXPECT_NEAR(var, 2.0 / double(fan_in), 0.1 * 2.0 / double(fan_in)) << p.name;
    }
}

// With all scales at zero the blocks are identities, so scrambling their
// conv weights must not change the network output.
TEST(UNet, InitOutputIndependentOfBlockWeights) {
    NetConfig cfg = toy_config();
    UNet a(cfg), b(cfg);
    a.init_weights(31);
    b.init_weights(31);
    Rng rng(99);
    for (const auto& p : b.params()) {
        const bool block_param = p.name.find(".c1.") != std::string::npos ||
                                 p.name.find(".c2.") != std::string::npos;
        if (block_param)
            for (double& v : *p.data) v = rng.normal(0, 1);
    }
    RgbField rgb = random_rgb(16, 16, 1);
    DepthField x = random_depth(16, 16, 2);
    EXPECT_EQ(a.infer(rgb, x), b.infer(rgb, x));
}

TEST(UNet, BatchIndependenceReZeroButNotBn) {
    const int h = 8, w = 8;
    Buffer sample_a = random_buffer(5 * h * w, 41);
    Buffer sample_b = random_buffer(5 * h * w, 42, 0.5, 3.0);
    Buffer batch = sample_a;
    batch.insert(batch.end(), sample_b.begin(), sample_b.end());

    NetConfig rz = toy_config();
    UNet net(rz);
    net.init_weights(5);
    for (const auto& p : net.params())
        if (p.name.ends_with(".alpha")) (*p.data)[0] = 0.4;
    Graph g1, g2;
    Buffer alone = net.forward(g1, g1.leaf(Shape{1, 5, h, w}, sample_a)).value();
    Buffer batched = net.forward(g2, g2.leaf(Shape{2, 5, h, w}, batch)).value();
    for (size_t i = 0; i < alone.size(); ++i) EXPECT_NEAR(batched[i], alone[i], 1e-6);

    NetConfig bn = toy_config();
    bn.block_kind = BlockKind::BatchNorm;
    UNet bnet(bn);
    bnet.init_weights(5);
    Graph g3, g4;
    Buffer b_alone = bnet.forward(g3, g3.leaf(Shape{2, 5, h, w}, [&] {
                              Buffer two = sample_a;
                              two.insert(two.end(), sample_a.begin(), sample_a.end());
                              return two;
                          }()), true)
                         .value();
    Buffer b_mixed = bnet.forward(g4, g4.leaf(Shape{2, 5, h, w}, batch), true).value();
    double worst = 0;
    for (size_t i = 0; i < alone.size(); ++i)
        worst = std::max(worst, std::fabs(b_mixed[i] - b_alone[i]));
    EXPECT_GT(worst, 1e-6);
}

TEST(UNet, ParameterCountMatchesHandFormula) {
    // levels=1, base=2, blocks=1, in=5, out=1:
    //   stem 5->2: 92   enc block @2: 77   down 2->4: 76
    //   bottom block @4: 297   reduce 6->2: 110   dec block @2: 77
    //   head 2->1: 19   total 748
    UNet net(toy_config());
    EXPECT_EQ(net.parameter_count(), 748u);
}

TEST(UNet, CheckpointRoundTripBitwise) {
    NetConfig cfg = toy_config();
    UNet net(cfg);
    net.init_weights(2024);
    for (const auto& p : net.params())
        if (p.name.ends_with(".alpha")) (*p.data)[0] = 0.17;
    RgbField rgb = random_rgb(16, 16, 3);
    DepthField x = random_depth(16, 16, 4);
    Buffer before = net.infer(rgb, x);

    const std::string path = "/tmp/rgbx_test_ckpt.bin";
    save_checkpoint(net, path);
    UNet loaded = load_checkpoint(path);
    EXPECT_EQ(loaded.infer(rgb, x), before);
    std::remove(path.c_str());

    EXPECT_THROW(load_checkpoint("/tmp/rgbx_missing_ckpt.bin"), IoError);
}

TEST(UNet, BnCheckpointCarriesRunningStats) {
    NetConfig cfg = toy_config();
    cfg.block_kind = BlockKind::BatchNorm;
    UNet net(cfg);
    net.init_weights(7);
    // a training-mode pass moves the running statistics
    Graph g;
    net.forward(g, g.leaf(Shape{2, 5, 8, 8}, random_buffer(2 * 5 * 64, 8)), true);
    RgbField rgb = random_rgb(8, 8, 9);
    DepthField x = random_depth(8, 8, 10);
    Buffer before = net.infer(rgb, x);

    const std::string path = "/tmp/rgbx_test_bn_ckpt.bin";
    save_checkpoint(net, path);
    UNet loaded = load_checkpoint(path);
    EXPECT_EQ(loaded.infer(rgb, x), before);
    std::remove(path.c_str());
}

TEST(UNet, ToyNetGradientsMatchFiniteDifferences) {
    auto item = selfcheck::toy_net_gradient_check();
    EXPECT_TRUE(item.pass) << item.name << " max rel err " << item.err;
}

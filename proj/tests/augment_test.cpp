#include <gtest/gtest.h>

#include <cmath>

#include "rgbx/augment.hpp"

using namespace rgbx;

namespace {

DepthField constant_field(int h, int w, double v) { return DepthField(h, w, v, 1); }

RgbField flat_rgb(int h, int w, double v = 0.5) {
    RgbField f(h, w);
    for (double& x : f.data) x = v;
    return f;
}

DepthField ramp_scene(int h, int w) {
    DepthField f(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) f.at(r, c) = 1.0 + r * 0.1 + c * 0.05;
    return f;
}

} // namespace

TEST(GaussianNoise, SampleStdWithinFivePercent) {
    DepthField z = constant_field(256, 256, 0.5);
    for (double std : {0.01, 0.05, 0.1}) {
        DepthField out = add_gaussian_noise(z, std, 7);
        double mean = 0;
        for (size_t i = 0; i < out.size(); ++i) mean += out.values[i] - 0.5;
        mean /= out.size();
        double var = 0;
        for (size_t i = 0; i < out.size(); ++i) {
            const double d = out.values[i] - 0.5 - mean;
            var += d * d;
        }
        const double sample_std = std::sqrt(var / out.size());
        EXPECT_NEAR(sample_std, std, 0.05 * std) << "std " << std;
        EXPECT_EQ(out.valid, z.valid);
    }
}

TEST(GaussianNoise, RangeCheckAndDeterminism) {
    DepthField z = constant_field(8, 8, 0.5);
    EXPECT_THROW(add_gaussian_noise(z, 0.005, 1), std::invalid_argument);
    EXPECT_THROW(add_gaussian_noise(z, 0.2, 1), std::invalid_argument);
    DepthField a = add_gaussian_noise(z, 0.05, 42);
    DepthField b = add_gaussian_noise(z, 0.05, 42);
    EXPECT_EQ(a.values, b.values);
    // clamped at zero
    DepthField tiny = constant_field(64, 64, 0.001);
    DepthField n = add_gaussian_noise(tiny, 0.1, 3);
    for (double v : n.values) EXPECT_GE(v, 0.0);
}

TEST(SaltPepper, EndpointsAndBinomialCount) {
    DepthField z = constant_field(100, 100, 0.5);
    DepthField id = add_salt_pepper(z, 0.0, 5);
    EXPECT_EQ(id.values, z.values);

    DepthField all = add_salt_pepper(z, 1.0, 5);
    for (double v : all.values) EXPECT_TRUE(v == 0.0 || v == 1.0);

    DepthField some = add_salt_pepper(z, 0.3, 5);
    size_t altered = 0;
    for (size_t i = 0; i < some.size(); ++i) altered += some.values[i] != 0.5;
    const double sigma = std::sqrt(10000 * 0.3 * 0.7);
    EXPECT_NEAR(double(altered), 3000.0, 3 * sigma);
    EXPECT_EQ(some.valid, z.valid);
}

TEST(Blur, ConstantTiledAndShape) {
    DepthField c = constant_field(32, 32, 0.7);
    DepthField bc = blur_downup(c, 4);
    for (double v : bc.values) EXPECT_DOUBLE_EQ(v, 0.7);

    // 2x2 tile [[1,2],[3,4]] averages to 2.5 everywhere at zoom 2.
    DepthField t(16, 16);
    for (int r = 0; r < 16; ++r)
        for (int col = 0; col < 16; ++col)
            t.at(r, col) = 1.0 + (r % 2) * 2 + (col % 2);
    DepthField bt = blur_downup(t, 2);
    for (double v : bt.values) EXPECT_DOUBLE_EQ(v, 2.5);

    for (int zoom : {2, 4, 8, 16}) {
        DepthField out = blur_downup(ramp_scene(48, 80), zoom);
        EXPECT_EQ(out.height, 48);
        EXPECT_EQ(out.width, 80);
    }
    // non-divisible dims take the reflect-pad path
    DepthField odd = blur_downup(ramp_scene(30, 42), 16);
    EXPECT_EQ(odd.height, 30);
    EXPECT_EQ(odd.width, 42);
    EXPECT_THROW(blur_downup(c, 3), std::invalid_argument);
}

TEST(Blur, MaskAllValidInBlockRule) {
    DepthField z = constant_field(8, 8, 1.0);
    z.invalidate(3, 3);
    DepthField out = blur_downup(z, 2);
    // the 2x2 block containing (3,3) is invalid, others stay valid
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) {
            const bool in_block = (r / 2 == 1 && c / 2 == 1);
            EXPECT_EQ(out.valid_at(r, c), in_block ? 0 : 1);
        }
}

TEST(Sparsify, EndpointsBinomialAndNesting) {
    DepthField z = constant_field(100, 100, 0.5);
    EXPECT_EQ(sparsify(z, 0.0, 9).valid_count(), 0u);
    EXPECT_EQ(sparsify(z, 1.0, 9).valid_count(), z.valid_count());

    DepthField s = sparsify(z, 0.1, 9);
    EXPECT_NEAR(double(s.valid_count()), 1000.0, 90.0); // 3 sigma of Binomial(1e4, 0.1)

    // same seed across rates yields nested masks
    DepthField a = sparsify(z, 0.05, 31);
    DepthField b = sparsify(z, 0.5, 31);
    for (size_t i = 0; i < a.size(); ++i)
        if (a.valid[i]) EXPECT_TRUE(b.valid[i]);
    // dropped pixels store zero
    for (size_t i = 0; i < s.size(); ++i)
        if (!s.valid[i]) EXPECT_DOUBLE_EQ(s.values[i], 0.0);
}

TEST(HoleMasks, CoverageContractAndDeterminism) {
    auto masks = synth_hole_masks(12, 64, 64, 77);
    ASSERT_EQ(masks.size(), 12u);
    for (const auto& m : masks) {
        EXPECT_GE(m.hole_pixels(), 1u);
        EXPECT_GE(m.coverage(), 0.01);
        EXPECT_LE(m.coverage(), 0.30);
    }
    auto again = synth_hole_masks(12, 64, 64, 77);
    for (size_t i = 0; i < masks.size(); ++i) EXPECT_EQ(masks[i].keep, again[i].keep);
}

TEST(InjectHoles, IdentityFullFrameAndMonotonic) {
    DepthField z = ramp_scene(32, 32);
    auto masks = synth_hole_masks(4, 32, 32, 5);
    DepthField id = inject_holes(z, masks, 0, 1);
    EXPECT_EQ(id.values, z.values);

    HoleMask full{32, 32, std::vector<uint8_t>(32 * 32, 0)};
    for (uint64_t seed : {1u, 2u, 3u})
        EXPECT_EQ(inject_holes(z, {full}, 1, seed).valid_count(), 0u);

    for (uint64_t seed : {4u, 5u, 6u}) {
        DepthField out = inject_holes(z, masks, 2, seed);
        EXPECT_LE(out.valid_fraction(), z.valid_fraction());
    }
}

TEST(Pipeline, IdentityPathAndDegenerateRejection) {
    AugmentConfig cfg;
    cfg.target_height = 32;
    // all gates off, sparsify keeps everything -> X equals GT bitwise
    cfg.stage_gate_prob = 0.0;
    cfg.flip_prob = 0.0;
    cfg.rate_zero_prob = 0.0;
    cfg.rate_one_prob = 1.0;
    DepthField gt = ramp_scene(32, 32);
    TrainingSample s = make_training_sample(flat_rgb(32, 32), gt, cfg, 123);
    EXPECT_EQ(s.x.values, s.gt.values);
    EXPECT_EQ(s.x.valid, s.gt.valid);
    // GT is rescaled to [0,1] by its max valid depth
    EXPECT_NEAR(s.gt.max_valid(), 1.0, 1e-12);

    DepthField empty(32, 32, 0.0, 0);
    EXPECT_THROW(make_training_sample(flat_rgb(32, 32), empty, cfg, 1), std::invalid_argument);
}

TEST(Pipeline, RateZeroPathGivesEmptyX) {
    AugmentConfig cfg;
    cfg.target_height = 32;
    cfg.stage_gate_prob = 0.0;
    cfg.flip_prob = 0.0;
    cfg.rate_zero_prob = 1.0;
    cfg.rate_one_prob = 0.0;
    TrainingSample s = make_training_sample(flat_rgb(32, 32), ramp_scene(32, 32), cfg, 9);
    EXPECT_EQ(s.x.valid_count(), 0u);
    EXPECT_EQ(s.gt.valid_count(), s.gt.size());
}

TEST(Pipeline, DeterministicAndMaskSubset) {
    AugmentConfig cfg;
    cfg.target_height = 32;
    DepthField gt = ramp_scene(40, 52);
    RgbField rgb = flat_rgb(40, 52);
    auto holes = synth_hole_masks(6, 32, 48, 3);

    TrainingSample a = make_training_sample(rgb, gt, cfg, 2024, holes);
    TrainingSample b = make_training_sample(rgb, gt, cfg, 2024, holes);
    EXPECT_EQ(a.x.values, b.x.values);
    EXPECT_EQ(a.x.valid, b.x.valid);
    EXPECT_EQ(a.gt.values, b.gt.values);
    EXPECT_EQ(a.rgb.data, b.rgb.data);
    // width rounds down to a multiple of 16
    EXPECT_EQ(a.gt.width % 16, 0);
    EXPECT_EQ(a.gt.height, 32);

    for (uint64_t seed = 0; seed < 200; ++seed) {
        TrainingSample s = make_training_sample(rgb, gt, cfg, seed, holes);
        for (size_t i = 0; i < s.x.size(); ++i)
            if (s.x.valid[i]) EXPECT_TRUE(s.gt.valid[i]);
        // GT values only see geometry, never degradation: all in [0,1]
        for (size_t i = 0; i < s.gt.size(); ++i) {
            EXPECT_GE(s.gt.values[i], 0.0);
            EXPECT_LE(s.gt.values[i], 1.0);
        }
    }
}

TEST(Pipeline, SparsityDistributionHasEndpointMass) {
    AugmentConfig cfg;
    cfg.target_height = 32;
    DepthField gt = ramp_scene(32, 32);
    RgbField rgb = flat_rgb(32, 32);
    auto holes = synth_hole_masks(6, 32, 32, 11);

    const int n = 1000;
    int empty = 0, full = 0;
    double lo_frac = 1.0, hi_frac = 0.0;
    for (int i = 0; i < n; ++i) {
        TrainingSample s = make_training_sample(rgb, gt, cfg, 5000 + i, holes);
        const double frac = s.x.valid_fraction();
        lo_frac = std::min(lo_frac, frac);
        hi_frac = std::max(hi_frac, frac);
        if (s.x.valid_count() == 0) ++empty;
        if (s.x.valid == s.gt.valid) ++full;
    }
    // empty-X mass: at least rate_zero_prob, minus 3 sigma
    const double p0 = cfg.rate_zero_prob;
    EXPECT_GE(empty, int(n * p0 - 3 * std::sqrt(n * p0 * (1 - p0))));
    // full-X mass: rate-one AND no holes imposed
    const double p1 = cfg.rate_one_prob * (1 - cfg.stage_gate_prob);
    EXPECT_GE(full, int(n * p1 - 3 * std::sqrt(n * p1 * (1 - p1))));
    EXPECT_LT(lo_frac, 0.05);
    EXPECT_GT(hi_frac, 0.95);
}

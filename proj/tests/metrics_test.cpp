#include <gtest/gtest.h>

#include <cmath>

#include "rgbx/metrics.hpp"
#include "rgbx/selfcheck.hpp"

using namespace rgbx;

namespace {

DepthField random_field(int h, int w, uint64_t seed, double valid_prob = 1.0) {
    Rng rng(seed);
    DepthField f(h, w);
    for (size_t i = 0; i < f.size(); ++i) {
        f.valid[i] = rng.bernoulli(valid_prob) ? 1 : 0;
        f.values[i] = f.valid[i] ? rng.uniform(0.05, 1.0) : 0.0;
    }
    return f;
}

} // namespace

TEST(Oe, PerfectAndSinglePairExample) {
    DepthField z = random_field(8, 8, 1);
    EXPECT_DOUBLE_EQ(metric_oe(z.values, z), 0.0);

    // One pair: d ratio 1.005 -> label 0, z ratio 1.02 -> label +1.
    DepthField z2(1, 2);
    z2.values = {1.02, 1.0};
    Buffer d2{1.005, 1.0};
    EXPECT_DOUBLE_EQ(metric_oe(d2, z2), 1.0);
}

TEST(Oe, ScaleInvariant) {
    DepthField z = random_field(12, 12, 2);
    Buffer d(z.size());
    for (size_t i = 0; i < z.size(); ++i) d[i] = 3.7 * z.values[i];
    EXPECT_DOUBLE_EQ(metric_oe(d, z), 0.0);
}

TEST(Oe, DegenerateAndDeterministic) {
    DepthField one(1, 1, 0.5, 1);
    EXPECT_DOUBLE_EQ(metric_oe(one.values, one), 0.0);

    // 64x64 forces the sampled-pair path (budget below total pairs).
    DepthField z = random_field(64, 64, 3);
    Rng rng(55);
    Buffer d(z.size());
    for (double& v : d) v = rng.uniform(0.05, 1.0);
    size_t used1 = 0, used2 = 0;
    const double a = metric_oe(d, z, 20000, 42, &used1);
    const double b = metric_oe(d, z, 20000, 42, &used2);
    EXPECT_DOUBLE_EQ(a, b);
    EXPECT_EQ(used1, 20000u);
    EXPECT_EQ(used1, used2);
}

TEST(Srmse, HandExampleAndSweep) {
    DepthField z = random_field(8, 8, 4);
    EXPECT_DOUBLE_EQ(metric_srmse(z.values, z), 0.0);

    DepthField z2(1, 2);
    z2.values = {0.0, 1.0};
    Buffer d2{0.0, 2.0};
    EXPECT_NEAR(metric_srmse(d2, z2), 0.0, 1e-5);

    DepthField zu = random_field(8, 8, 5);
    for (double s : {0.1, 1.0, 10.0})
        for (double f : {-5.0, 0.0, 5.0}) {
            Buffer d(zu.size());
            for (size_t i = 0; i < zu.size(); ++i) d[i] = s * zu.values[i] + f;
            EXPECT_LE(metric_srmse(d, zu), 1e-4) << "s=" << s << " f=" << f;
        }
}

TEST(RmseAbs, HandExamples) {
    DepthField z = random_field(8, 8, 6);
    EXPECT_DOUBLE_EQ(metric_rmse(z.values, z), 0.0);
    EXPECT_DOUBLE_EQ(metric_abs_rel(z.values, z), 0.0);

    const double c = 0.23;
    Buffer d(z.size());
    for (size_t i = 0; i < z.size(); ++i) d[i] = z.values[i] + c;
    EXPECT_NEAR(metric_rmse(d, z), c, 1e-12);

    for (size_t i = 0; i < z.size(); ++i) d[i] = 1.1 * z.values[i];
    EXPECT_NEAR(metric_abs_rel(d, z), 0.1, 1e-12);
}

TEST(Metrics, MatchBruteForceOracles) {
    for (const auto& item : selfcheck::metric_oracle_suite(100))
        EXPECT_TRUE(item.pass) << item.name << " err " << item.err;
}

TEST(Metrics, ReportCountsPopulated) {
    DepthField z = random_field(16, 16, 9, 0.9);
    Rng rng(10);
    Buffer d(z.size());
    for (double& v : d) v = rng.uniform(0.05, 1.0);
    MetricReport r = compute_metrics(d, z);
    EXPECT_EQ(r.pixel_count, z.valid_count());
    EXPECT_GT(r.pair_count, 0u);
    EXPECT_GE(r.oe, 0.0);
    EXPECT_LE(r.oe, 1.0);
    EXPECT_GE(r.srmse, 0.0);
    EXPECT_GE(r.rmse, 0.0);
    EXPECT_GE(r.abs_rel, 0.0);
}

#include <gtest/gtest.h>

#include <cmath>

#include "rgbx/synth.hpp"

using namespace rgbx;

TEST(Scene, DepthsInRangeAndFullyValid) {
    for (uint64_t seed : {1u, 2u, 3u}) {
        SceneSpec spec;
        spec.seed = seed;
        spec.depth_min = 2.0;
        spec.depth_max = 40.0;
        SynthScene s = generate_scene(spec);
        EXPECT_EQ(s.depth.valid_count(), s.depth.size());
        for (double d : s.depth.values) {
            EXPECT_GE(d, spec.depth_min);
            EXPECT_LE(d, spec.depth_max);
        }
        for (double v : s.rgb.data) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }
}

// Where the primitive id changes between neighbours (a generator-known depth
// discontinuity), the RGB must change too.
TEST(Scene, DepthDiscontinuitiesAreRgbEdges) {
    for (uint64_t seed : {5u, 6u, 7u, 8u}) {
        SceneSpec spec;
        spec.seed = seed;
        SynthScene s = generate_scene(spec);
        const int h = s.depth.height, w = s.depth.width;
        int boundary_pixels = 0;
        for (int r = 0; r < h; ++r)
            for (int c = 0; c + 1 < w; ++c) {
                const int a = s.primitive_id[size_t(r) * w + c];
                const int b = s.primitive_id[size_t(r) * w + c + 1];
                if (a == b) continue;
                ++boundary_pixels;
                double linf = 0;
                for (int ch = 0; ch < 3; ++ch)
                    linf = std::max(linf, std::fabs(s.rgb.at(ch, r, c) - s.rgb.at(ch, r, c + 1)));
                EXPECT_GT(linf, 0.01) << "seed " << seed << " at " << r << "," << c;
            }
        EXPECT_GT(boundary_pixels, 0);
    }
}

TEST(Scene, SeededDeterminism) {
    SceneSpec spec;
    spec.seed = 99;
    SynthScene a = generate_scene(spec);
    SynthScene b = generate_scene(spec);
    EXPECT_EQ(a.depth.values, b.depth.values);
    EXPECT_EQ(a.rgb.data, b.rgb.data);
    EXPECT_EQ(a.primitive_id, b.primitive_id);
}

TEST(Split, BandMixAndDisjointSeeds) {
    auto split = generate_split(32, 7);
    ASSERT_EQ(split.size(), 32u);
    int indoor = 0, outdoor = 0;
    for (const auto& s : split) {
        const double dmax = s.depth.max_valid();
        if (dmax <= 10.0) ++indoor;
        else ++outdoor;
    }
    // alternating bands: exact 50/50, trivially within 3 sigma of Binomial
    EXPECT_EQ(indoor, 16);
    EXPECT_EQ(outdoor, 16);

    // disjoint split seeds give different scenes
    auto train = generate_split(4, 100);
    auto test = generate_split(4, 101);
    for (const auto& a : train)
        for (const auto& b : test) EXPECT_NE(a.depth.values, b.depth.values);

    auto again = generate_split(32, 7);
    for (size_t i = 0; i < split.size(); ++i) {
        EXPECT_EQ(split[i].depth.values, again[i].depth.values);
        EXPECT_EQ(split[i].rgb.data, again[i].rgb.data);
    }
}

TEST(Split, SingleSceneAndBothBandsAtSixteen) {
    EXPECT_EQ(generate_split(1, 3).size(), 1u);
    auto split = generate_split(16, 12345);
    bool has_indoor = false, has_outdoor = false;
    for (const auto& s : split) {
        if (s.depth.max_valid() <= 10.0) has_indoor = true;
        else has_outdoor = true;
    }
    EXPECT_TRUE(has_indoor);
    EXPECT_TRUE(has_outdoor);
}

#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "rgbx/field.hpp"
#include "rgbx/rng.hpp"

namespace rgbx {

// Deterministic generator of small RGB + depth scenes: a z-buffer of random
// fronto-parallel rectangles, tilted planes and spheres over a receding
// ground plane. Per-primitive flat albedo shaded by depth-derived normals
// keeps RGB structure aligned with depth discontinuities. GT is fully valid.

struct SceneSpec {
    uint64_t seed = 0;
    double depth_min = 1.0;  // meters
    double depth_max = 10.0; // meters
    int primitive_count = 6;
    int height = 64;
    int width = 64;
};

struct SynthScene {
    RgbField rgb;
    DepthField depth;
    std::vector<int> primitive_id; // 0 = ground plane
};

namespace detail {

inline void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
    h = h - std::floor(h);
    const double i = std::floor(h * 6.0);
    const double f = h * 6.0 - i;
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - f * s);
    const double t = v * (1.0 - (1.0 - f) * s);
    switch (int(i) % 6) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

} // namespace detail

inline SynthScene generate_scene(const SceneSpec& spec) {
    if (spec.primitive_count < 1) throw std::invalid_argument("generate_scene: need >= 1 primitive");
    if (!(spec.depth_max > spec.depth_min) || !(spec.depth_min > 0))
        throw std::invalid_argument("generate_scene: require max > min > 0");
    const int h = spec.height, w = spec.width;
    Rng rng(spec.seed);
    SynthScene s{RgbField(h, w), DepthField(h, w), std::vector<int>(size_t(h) * w, 0)};
    const double range = spec.depth_max - spec.depth_min;

    // Ground plane: near at the bottom row, receding to max depth at the top.
    const double near_ground = spec.depth_min + 0.35 * range;
    for (int r = 0; r < h; ++r) {
        const double t = h > 1 ? double(r) / (h - 1) : 0.0;
        const double d = spec.depth_max + (near_ground - spec.depth_max) * t;
        for (int c = 0; c < w; ++c) s.depth.at(r, c) = d;
    }

    for (int p = 1; p <= spec.primitive_count; ++p) {
        const int kind = int(rng.uniform_int(0, 2));
        const double dz = spec.depth_min + rng.uniform(0.05, 0.75) * range;
        if (kind == 0 || kind == 1) { // rectangle, flat or tilted
            const int rh = std::max(2, int(rng.uniform(0.1, 0.5) * h));
            const int rw = std::max(2, int(rng.uniform(0.1, 0.5) * w));
            const int r0 = int(rng.uniform_int(0, std::max(0, h - rh)));
            const int c0 = int(rng.uniform_int(0, std::max(0, w - rw)));
            double gr = 0.0, gc = 0.0;
            if (kind == 1) {
                gr = rng.uniform(-0.6, 0.6) * range / h;
                gc = rng.uniform(-0.6, 0.6) * range / w;
            }
            for (int r = r0; r < std::min(h, r0 + rh); ++r)
                for (int c = c0; c < std::min(w, c0 + rw); ++c) {
                    double d = dz + gr * (r - r0) + gc * (c - c0);
                    d = std::clamp(d, spec.depth_min, spec.depth_max);
                    if (d < s.depth.at(r, c)) {
                        s.depth.at(r, c) = d;
                        s.primitive_id[size_t(r) * w + c] = p;
                    }
                }
        } else { // sphere front surface
            const double cy = rng.uniform(0.1, 0.9) * h;
            const double cx = rng.uniform(0.1, 0.9) * w;
            const double rad = rng.uniform(0.08, 0.25) * std::min(h, w);
            const double bulge = 0.1 * range;
            for (int r = std::max(0, int(cy - rad)); r <= std::min(h - 1, int(cy + rad)); ++r)
                for (int c = std::max(0, int(cx - rad)); c <= std::min(w - 1, int(cx + rad)); ++c) {
                    const double rho2 = (r - cy) * (r - cy) + (c - cx) * (c - cx);
                    if (rho2 > rad * rad) continue;
                    double d = dz - bulge * std::sqrt(1.0 - rho2 / (rad * rad));
                    d = std::clamp(d, spec.depth_min, spec.depth_max);
                    if (d < s.depth.at(r, c)) {
                        s.depth.at(r, c) = d;
                        s.primitive_id[size_t(r) * w + c] = p;
                    }
                }
        }
    }

    // Flat albedo per primitive (golden-angle hue steps keep neighbours
    // apart) shaded by depth-derived normals.
    std::vector<std::array<double, 3>> albedo(size_t(spec.primitive_count) + 1);
    for (size_t i = 0; i < albedo.size(); ++i) {
        double r, g, b;
        detail::hsv_to_rgb(0.11 + 0.618033988749895 * double(i), 0.65, 0.9, r, g, b);
        albedo[i] = {r, g, b};
    }
    const double lx = 0.4, ly = -0.3, lz = 0.85;
    const double lnorm = std::sqrt(lx * lx + ly * ly + lz * lz);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            auto dn = [&](int rr, int cc) {
                rr = std::clamp(rr, 0, h - 1);
                cc = std::clamp(cc, 0, w - 1);
                return (s.depth.at(rr, cc) - spec.depth_min) / range;
            };
            const double gx = (dn(r, c + 1) - dn(r, c - 1)) * 0.5 * 8.0;
            const double gy = (dn(r + 1, c) - dn(r - 1, c)) * 0.5 * 8.0;
            const double nn = std::sqrt(gx * gx + gy * gy + 1.0);
            const double ndotl = (-gx * lx - gy * ly + lz) / (nn * lnorm);
            const double shade = 0.55 + 0.45 * std::max(0.0, ndotl);
            const auto& a = albedo[size_t(s.primitive_id[size_t(r) * w + c])];
            for (int ch = 0; ch < 3; ++ch)
                s.rgb.at(ch, r, c) = std::clamp(a[size_t(ch)] * shade, 0.0, 1.0);
        }
    return s;
}

// n scenes with seeds derived by fixed splitting, alternating between the
// indoor (1-10 m) and outdoor (10-100 m) scale bands.
inline std::vector<SynthScene> generate_split(int n, uint64_t seed, int height = 64,
                                              int width = 64) {
    if (n < 1) throw std::invalid_argument("generate_split: n must be >= 1");
    std::vector<SynthScene> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        SceneSpec spec;
        spec.seed = derive_seed(seed, 0x5ce4e, uint64_t(i));
        Rng rng(derive_seed(spec.seed, 1));
        if (i % 2 == 0) {
            spec.depth_min = rng.uniform(1.0, 2.0);
            spec.depth_max = rng.uniform(spec.depth_min + 2.0, 10.0);
        } else {
            spec.depth_min = rng.uniform(10.0, 20.0);
            spec.depth_max = rng.uniform(spec.depth_min + 15.0, 100.0);
        }
        spec.primitive_count = int(rng.uniform_int(4, 9));
        spec.height = height;
        spec.width = width;
        out.push_back(generate_scene(spec));
    }
    return out;
}

} // namespace rgbx

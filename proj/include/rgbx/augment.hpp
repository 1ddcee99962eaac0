#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "rgbx/field.hpp"
#include "rgbx/rng.hpp"

namespace rgbx {

// Degradation pipeline: GT depth -> raw X map with controlled noise, blur,
// sparsity and holes. Every stage is a pure function of (inputs, seed); the
// sample pipeline derives per-stage seeds by fixed splitting.

struct AugmentConfig {
    double gaussian_std_min = 0.01;
    double gaussian_std_max = 0.1;
    double saltpepper_prob_min = 0.0;
    double saltpepper_prob_max = 1.0;
    std::vector<int> zoom_factors{2, 4, 8, 16};
    double sparsity_min = 0.0;
    double sparsity_max = 1.0;
    int hole_count_min = 1;
    int hole_count_max = 4;
    double flip_prob = 0.5;
    double stage_gate_prob = 0.5;
    // Probability mass placed on the exact endpoints of the sparsify rate,
    // so the empty-X and full-X regimes appear with fixed frequency.
    double rate_zero_prob = 0.125;
    double rate_one_prob = 0.125;
    // Draw the remaining rates log-uniformly over [rate_log_floor, 1]
    // instead of uniformly, covering the few-anchor regimes densely.
    bool sparsity_log_uniform = false;
    double rate_log_floor = 1e-3;
    int target_height = 64;
    // Divisor taking depth to [0,1]: a fixed scale shared by every sample
    // (preserves scene-scale diversity), or 0 to use each sample's max
    // valid depth.
    double depth_scale = 0.0;

    void validate() const {
        auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
        if (!(gaussian_std_min < gaussian_std_max) ||
            !in(gaussian_std_min, 0.01, 0.1) || !in(gaussian_std_max, 0.01, 0.1))
            throw std::invalid_argument("augment: gaussian std range must lie in [0.01, 0.1]");
        if (!(saltpepper_prob_min < saltpepper_prob_max) ||
            !in(saltpepper_prob_min, 0, 1) || !in(saltpepper_prob_max, 0, 1))
            throw std::invalid_argument("augment: salt-pepper range must lie in [0, 1]");
        if (zoom_factors.empty()) throw std::invalid_argument("augment: empty zoom set");
        for (int z : zoom_factors)
            if (z != 2 && z != 4 && z != 8 && z != 16)
                throw std::invalid_argument("augment: zoom factors must be in {2,4,8,16}");
        if (!(sparsity_min < sparsity_max) || !in(sparsity_min, 0, 1) || !in(sparsity_max, 0, 1))
            throw std::invalid_argument("augment: sparsity range must lie in [0, 1]");
        if (hole_count_min < 0 || hole_count_max < hole_count_min)
            throw std::invalid_argument("augment: bad hole count range");
        if (!in(flip_prob, 0, 1) || !in(stage_gate_prob, 0, 1) ||
            !in(rate_zero_prob, 0, 1) || !in(rate_one_prob, 0, 1) ||
            rate_zero_prob + rate_one_prob > 1.0)
            throw std::invalid_argument("augment: bad probability");
        if (target_height < 16) throw std::invalid_argument("augment: target height < 16");
        if (depth_scale < 0) throw std::invalid_argument("augment: negative depth scale");
        if (rate_log_floor <= 0 || rate_log_floor >= 1)
            throw std::invalid_argument("augment: rate log floor must lie in (0, 1)");
    }
};

// 0 marks pixels to invalidate, 1 marks pixels to keep.
struct HoleMask {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> keep;

    size_t hole_pixels() const {
        size_t n = 0;
        for (uint8_t k : keep) n += (k == 0);
        return n;
    }
    double coverage() const { return keep.empty() ? 0.0 : double(hole_pixels()) / keep.size(); }
};

struct TrainingSample {
    RgbField rgb;
    DepthField gt;
    DepthField x;
};

// Additive Gaussian noise at valid pixels, clamped at 0; the mask is
// untouched. std must lie in [0.01, 0.1].
inline DepthField add_gaussian_noise(const DepthField& z, double std, uint64_t seed) {
    if (std < 0.01 || std > 0.1)
        throw std::invalid_argument("add_gaussian_noise: std outside [0.01, 0.1]");
    Rng rng(seed);
    DepthField out = z;
    for (size_t i = 0; i < out.size(); ++i)
        if (out.valid[i]) out.values[i] = std::max(0.0, out.values[i] + rng.normal(0.0, std));
    return out;
}

// Each valid pixel is replaced by 0 or 1 (equal odds) with probability prob.
inline DepthField add_salt_pepper(const DepthField& z, double prob, uint64_t seed) {
    if (prob < 0.0 || prob > 1.0)
        throw std::invalid_argument("add_salt_pepper: prob outside [0, 1]");
    Rng rng(seed);
    DepthField out = z;
    for (size_t i = 0; i < out.size(); ++i) {
        if (!out.valid[i]) continue;
        if (rng.uniform() < prob) out.values[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
    return out;
}

namespace detail {

inline int reflect_index(int i, int n) {
    // reflect without repeating the edge sample: ... 2 1 0 1 2 ...
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

inline DepthField reflect_pad(const DepthField& z, int ph, int pw) {
    DepthField out(z.height + ph, z.width + pw);
    for (int r = 0; r < out.height; ++r)
        for (int c = 0; c < out.width; ++c) {
            const int sr = reflect_index(r, z.height);
            const int sc = reflect_index(c, z.width);
            out.at(r, c) = z.at(sr, sc);
            out.valid_at(r, c) = z.valid_at(sr, sc);
        }
    return out;
}

} // namespace detail

// Average-downsample by `zoom` then nearest-upsample back. A low-resolution
// block is valid only when every source pixel in it is valid. Dimensions not
// divisible by the zoom are reflect-padded and cropped back.
inline DepthField blur_downup(const DepthField& z, int zoom) {
    if (zoom != 2 && zoom != 4 && zoom != 8 && zoom != 16)
        throw std::invalid_argument("blur_downup: zoom must be in {2,4,8,16}");
    const int ph = (zoom - z.height % zoom) % zoom;
    const int pw = (zoom - z.width % zoom) % zoom;
    const DepthField src = (ph || pw) ? detail::reflect_pad(z, ph, pw) : z;
    DepthField out(src.height, src.width);
    const int bh = src.height / zoom, bw = src.width / zoom;
    for (int br = 0; br < bh; ++br)
        for (int bc = 0; bc < bw; ++bc) {
            double acc = 0.0;
            bool all_valid = true;
            for (int r = 0; r < zoom; ++r)
                for (int c = 0; c < zoom; ++c) {
                    acc += src.at(br * zoom + r, bc * zoom + c);
                    all_valid = all_valid && src.valid_at(br * zoom + r, bc * zoom + c);
                }
            const double mean = all_valid ? acc / (zoom * zoom) : 0.0;
            for (int r = 0; r < zoom; ++r)
                for (int c = 0; c < zoom; ++c) {
                    out.at(br * zoom + r, bc * zoom + c) = mean;
                    out.valid_at(br * zoom + r, bc * zoom + c) = all_valid ? 1 : 0;
                }
        }
    if (ph || pw) {
        DepthField crop(z.height, z.width);
        for (int r = 0; r < z.height; ++r)
            for (int c = 0; c < z.width; ++c) {
                crop.at(r, c) = out.at(r, c);
                crop.valid_at(r, c) = out.valid_at(r, c);
            }
        return crop;
    }
    return out;
}

// Keeps each currently-valid pixel with probability `rate`. One uniform draw
// is consumed per valid pixel in row-major order, so the same seed yields
// nested masks across rates.
inline DepthField sparsify(const DepthField& z, double rate, uint64_t seed) {
    if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("sparsify: rate outside [0, 1]");
    Rng rng(seed);
    DepthField out = z;
    for (size_t i = 0; i < out.size(); ++i) {
        if (!out.valid[i]) continue;
        if (!(rng.uniform() < rate)) {
            out.valid[i] = 0;
            out.values[i] = 0.0;
        }
    }
    return out;
}

namespace detail {

inline void stamp_ellipse(HoleMask& m, double cy, double cx, double a, double b, double theta) {
    const double ct = std::cos(theta), st = std::sin(theta);
    const double rmax = std::max(a, b);
    for (int r = std::max(0, int(cy - rmax)); r <= std::min(m.height - 1, int(cy + rmax)); ++r)
        for (int c = std::max(0, int(cx - rmax)); c <= std::min(m.width - 1, int(cx + rmax)); ++c) {
            const double dy = r - cy, dx = c - cx;
            const double u = (dx * ct + dy * st) / a;
            const double v = (-dx * st + dy * ct) / b;
            if (u * u + v * v <= 1.0) m.keep[size_t(r) * m.width + c] = 0;
        }
}

inline void stamp_polygon(HoleMask& m, double cy, double cx, const std::vector<double>& ang,
                          const std::vector<double>& rad) {
    const int nv = int(ang.size());
    std::vector<double> py(nv), px(nv);
    double rmax = 0;
    for (int i = 0; i < nv; ++i) {
        py[i] = cy + rad[i] * std::sin(ang[i]);
        px[i] = cx + rad[i] * std::cos(ang[i]);
        rmax = std::max(rmax, rad[i]);
    }
    for (int r = std::max(0, int(cy - rmax)); r <= std::min(m.height - 1, int(cy + rmax)); ++r)
        for (int c = std::max(0, int(cx - rmax)); c <= std::min(m.width - 1, int(cx + rmax)); ++c) {
            bool inside = true;
            for (int i = 0; i < nv && inside; ++i) {
                const int j = (i + 1) % nv;
                const double cross = (px[j] - px[i]) * (r - py[i]) - (py[j] - py[i]) * (c - px[i]);
                inside = cross >= 0.0;
            }
            if (inside) m.keep[size_t(r) * m.width + c] = 0;
        }
}

} // namespace detail

// Procedural hole masks: unions of random ellipses and convex polygons, each
// mask covering 1-30% of the frame.
inline std::vector<HoleMask> synth_hole_masks(int n, int height, int width, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("synth_hole_masks: n must be >= 1");
    std::vector<HoleMask> masks;
    masks.reserve(n);
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, 0x601e5, uint64_t(i)));
        HoleMask m{height, width, std::vector<uint8_t>(size_t(height) * width, 1)};
        const double target = rng.uniform(0.02, 0.28);
        const double scale = std::min(height, width);
        while (m.coverage() < std::max(target, 0.011)) {
            HoleMask before = m;
            const double cy = rng.uniform(0, height - 1);
            const double cx = rng.uniform(0, width - 1);
            if (rng.bernoulli(0.5)) {
                detail::stamp_ellipse(m, cy, cx, rng.uniform(0.05, 0.18) * scale,
                                      rng.uniform(0.05, 0.18) * scale, rng.uniform(0, 6.2831853));
            } else {
                const int nv = int(rng.uniform_int(3, 7));
                std::vector<double> ang(nv), rad(nv);
                double base = rng.uniform(0, 6.2831853);
                for (int v = 0; v < nv; ++v) {
                    ang[v] = base + 6.2831853 * v / nv;
                    rad[v] = rng.uniform(0.05, 0.18) * scale;
                }
                detail::stamp_polygon(m, cy, cx, ang, rad);
            }
            m.keep[size_t(int(cy)) * width + int(cx)] = 0;
            if (m.coverage() > 0.30) {
                m = before;
                if (m.hole_pixels() == 0) m.keep[size_t(int(cy)) * width + int(cx)] = 0;
                break;
            }
        }
        masks.push_back(std::move(m));
    }
    return masks;
}

// Imposes `count` transformed holes. Each selected mask is randomly cropped,
// rotated about a random pivot, isotropically scaled in [0.5, 2], and
// flipped; the crop is sampled in frame-normalized coordinates with clamped
// lookups, so an all-hole mask invalidates the whole frame under any
// transform. Covered pixels become invalid.
inline DepthField inject_holes(const DepthField& z, const std::vector<HoleMask>& holes,
                               int count, uint64_t seed) {
    if (count == 0) return z;
    if (holes.empty()) throw std::invalid_argument("inject_holes: empty hole list");
    Rng rng(seed);
    DepthField out = z;
    for (int t = 0; t < count; ++t) {
        const HoleMask& h = holes[size_t(rng.uniform_int(0, int64_t(holes.size()) - 1))];
        // random crop window
        const int ch = std::max(1, int(h.height * rng.uniform(0.5, 1.0)));
        const int cw = std::max(1, int(h.width * rng.uniform(0.5, 1.0)));
        const int oy = int(rng.uniform_int(0, h.height - ch));
        const int ox = int(rng.uniform_int(0, h.width - cw));
        const double theta = rng.uniform(0, 6.2831853);
        const double s = rng.uniform(0.5, 2.0);
        const bool fh = rng.bernoulli(0.5), fv = rng.bernoulli(0.5);
        const double py = rng.uniform(0, out.height - 1);
        const double px = rng.uniform(0, out.width - 1);
        const double ct = std::cos(-theta), st = std::sin(-theta);
        for (int r = 0; r < out.height; ++r)
            for (int c = 0; c < out.width; ++c) {
                // inverse similarity transform in frame coordinates
                const double dy = (r - py) / s, dx = (c - px) / s;
                const double qy = dx * st + dy * ct + py;
                const double qx = dx * ct - dy * st + px;
                double u = out.height > 1 ? qy / (out.height - 1) : 0.0;
                double v = out.width > 1 ? qx / (out.width - 1) : 0.0;
                u = std::clamp(u, 0.0, 1.0);
                v = std::clamp(v, 0.0, 1.0);
                if (fv) u = 1.0 - u;
                if (fh) v = 1.0 - v;
                const int iy = int(std::lround(u * (ch - 1)));
                const int ix = int(std::lround(v * (cw - 1)));
                if (h.keep[size_t(oy + iy) * h.width + (ox + ix)] == 0) out.invalidate(r, c);
            }
    }
    return out;
}

// Full sample pipeline: rescale depth to [0,1] by the scene's max valid
// depth, resize to the target height (width rounded down to a multiple of
// 16), random horizontal flip, then build X from a copy of GT through gated
// stages: gaussian noise, salt-and-pepper, blur, sparsify (always), holes.
// GT itself is never degraded.
inline TrainingSample make_training_sample(const RgbField& rgb, const DepthField& gt,
                                           const AugmentConfig& cfg, uint64_t seed,
                                           const std::vector<HoleMask>& holes = {}) {
    cfg.validate();
    if (rgb.height != gt.height || rgb.width != gt.width)
        throw std::invalid_argument("make_training_sample: rgb/gt misaligned");
    const double zmax = gt.max_valid();
    if (gt.valid_count() == 0 || zmax <= 0.0)
        throw std::invalid_argument("make_training_sample: degenerate scene without valid depth");
    const double divisor = cfg.depth_scale > 0.0 ? cfg.depth_scale : zmax;

    TrainingSample s;
    s.gt = gt;
    for (size_t i = 0; i < s.gt.size(); ++i)
        if (s.gt.valid[i]) s.gt.values[i] /= divisor;

    const int th = cfg.target_height;
    int tw = int(int64_t(gt.width) * th / gt.height) / 16 * 16;
    tw = std::max(16, tw);
    s.gt = resize_nearest(s.gt, th, tw);
    s.rgb = resize_bilinear(rgb, th, tw);

    {
        Rng rng(derive_seed(seed, 1));
        if (rng.uniform() < cfg.flip_prob) {
            hflip_inplace(s.gt);
            hflip_inplace(s.rgb);
        }
    }

    s.x = s.gt;
    {
        Rng rng(derive_seed(seed, 2));
        if (rng.uniform() < cfg.stage_gate_prob)
            s.x = add_gaussian_noise(s.x, rng.uniform(cfg.gaussian_std_min, cfg.gaussian_std_max),
                                     derive_seed(seed, 3));
    }
    {
        Rng rng(derive_seed(seed, 4));
        if (rng.uniform() < cfg.stage_gate_prob)
            s.x = add_salt_pepper(s.x, rng.uniform(cfg.saltpepper_prob_min, cfg.saltpepper_prob_max),
                                  derive_seed(seed, 5));
    }
    {
        Rng rng(derive_seed(seed, 6));
        if (rng.uniform() < cfg.stage_gate_prob)
            s.x = blur_downup(s.x, cfg.zoom_factors[size_t(
                rng.uniform_int(0, int64_t(cfg.zoom_factors.size()) - 1))]);
    }
    {
        Rng rng(derive_seed(seed, 7));
        const double u = rng.uniform();
        double rate;
        if (u < cfg.rate_zero_prob) rate = 0.0;
        else if (u < cfg.rate_zero_prob + cfg.rate_one_prob) rate = 1.0;
        else if (cfg.sparsity_log_uniform)
            rate = std::exp(rng.uniform(std::log(cfg.rate_log_floor), 0.0));
        else rate = rng.uniform(cfg.sparsity_min, cfg.sparsity_max);
        s.x = sparsify(s.x, rate, derive_seed(seed, 8));
    }
    {
        Rng rng(derive_seed(seed, 9));
        if (rng.uniform() < cfg.stage_gate_prob && cfg.hole_count_max > 0) {
            const int count = int(rng.uniform_int(cfg.hole_count_min, cfg.hole_count_max));
            if (count > 0) {
                const std::vector<HoleMask>& lib =
                    holes.empty() ? synth_hole_masks(4, s.gt.height, s.gt.width, derive_seed(seed, 10))
                                  : holes;
                s.x = inject_holes(s.x, lib, count, derive_seed(seed, 11));
            }
        }
    }
    return s;
}

} // namespace rgbx

#pragma once

#include <algorithm>
#include <cstdint>
#include <unordered_set>

#include "rgbx/field.hpp"
#include "rgbx/graph.hpp"
#include "rgbx/nnops.hpp"

namespace rgbx {

// Standardization variants: mean + mean absolute deviation (the default),
// mean + standard deviation (z-score), median + mean absolute deviation
// from the median. Config strings: "g2s", "zs", "ms".
enum class Standardizer { MeanDev, ZScore, MedianDev };

enum class GradOperator { Sobel, ForwardDiff };

enum class RegressionCase { Affine, Scale, Direct };

struct RegressionInfo {
    RegressionCase kind = RegressionCase::Affine;
    size_t valid_count = 0;    // M_V
    size_t distinct_count = 0; // M_dv
};

struct StandardizeStats {
    double center = 0.0;
    double spread = 0.0;
    double epsilon = 0.0;
};

struct StandardizeResult {
    Tensor field;
    StandardizeStats stats;
};

struct LossConfig {
    double lambda = 0.5;
    double epsilon = 1e-6;
    Standardizer standardizer = Standardizer::MeanDev;
    GradOperator grad_op = GradOperator::Sobel;
    int scales = 4;
};

struct LossBreakdown {
    double total = 0.0;
    double sa_term = 0.0;
    double sg_term = 0.0;
    double lambda = 0.0;
    RegressionCase kind = RegressionCase::Affine;
    size_t valid_count = 0;
    size_t distinct_count = 0;
};

// Ordinal label with ratio threshold tau: +1 / -1 / 0.
inline int depth_ordinal(double a, double b, double tau) {
    const double r = a / b;
    if (r >= 1.0 + tau) return 1;
    if (r <= 1.0 / (1.0 + tau)) return -1;
    return 0;
}

namespace detail {

inline Tensor mask_leaf(Graph& g, const DepthField& f) {
    Buffer m(f.size());
    for (size_t i = 0; i < f.size(); ++i) m[i] = f.valid[i] ? 1.0 : 0.0;
    return g.leaf(Shape{f.height, f.width}, std::move(m), false);
}

inline Tensor values_leaf(Graph& g, const DepthField& f) {
    return g.leaf(Shape{1, 1, f.height, f.width}, f.values, false);
}

inline size_t mask_count(const DepthField& f) { return f.valid_count(); }

// Median over masked entries as a differentiable selection; ties broken by
// pixel index so the choice is deterministic.
inline Tensor masked_median(Tensor a, const DepthField& domain) {
    const Buffer& v = a.value();
    std::vector<std::pair<double, size_t>> entries;
    entries.reserve(domain.size());
    for (size_t i = 0; i < domain.size(); ++i)
        if (domain.valid[i]) entries.emplace_back(v[i], i);
    std::sort(entries.begin(), entries.end());
    const size_t m = entries.size();
    if (m % 2 == 1) return gather(a, {entries[m / 2].second});
    Tensor two = gather(a, {entries[m / 2 - 1].second, entries[m / 2].second});
    return reduce_mean(two);
}

} // namespace detail

// M_dv counts distinct intensity values among valid pixels after quantizing
// to 1e-6 resolution, so floating-point noise cannot inflate the case.
inline RegressionInfo classify_regression(const DepthField& x) {
    RegressionInfo info;
    std::unordered_set<int64_t> distinct;
    for (size_t i = 0; i < x.size(); ++i) {
        if (!x.valid[i]) continue;
        ++info.valid_count;
        distinct.insert(llround(x.values[i] / 1e-6));
    }
    info.distinct_count = distinct.size();
    info.kind = info.distinct_count == 0 ? RegressionCase::Affine
              : info.distinct_count == 1 ? RegressionCase::Scale
                                         : RegressionCase::Direct;
    return info;
}

// Standardizes `a` over the pixels selected by `domain`: (a - center) /
// (spread + epsilon), zeroed outside the domain. An empty domain yields an
// all-zero field with center = spread = 0.
inline StandardizeResult standardize(Tensor a, const DepthField& domain,
                                     Standardizer variant, double epsilon) {
    Graph& g = *a.graph;
    Tensor mask = detail::mask_leaf(g, domain);
    const double m = double(detail::mask_count(domain));
    if (m == 0.0) return {mul(a, mask), {0.0, 0.0, epsilon}};

    Tensor center;
    if (variant == Standardizer::MedianDev) {
        center = detail::masked_median(a, domain);
    } else {
        center = div(reduce_sum(mul(a, mask)), m);
    }
    Tensor centered = sub(a, center);
    Tensor spread;
    if (variant == Standardizer::ZScore) {
        spread = sqrt(div(reduce_sum(mul(square(centered), mask)), m));
    } else {
        spread = div(reduce_sum(mul(abs(centered), mask)), m);
    }
    Tensor out = mul(div(centered, add(spread, epsilon)), mask);
    return {out, {center.item(), spread.item(), epsilon}};
}

// Scale-adaptive loss: mean absolute difference of standardized fields over
// GT-valid pixels, plus an absolute term over pixels valid in both x and z.
inline Tensor scale_adaptive_loss(Tensor d, const DepthField& z, const DepthField& x,
                                  Standardizer variant = Standardizer::MeanDev,
                                  double epsilon = 1e-6) {
    Graph& g = *d.graph;
    if (d.size() != z.size()) throw std::invalid_argument("scale_adaptive_loss: shape mismatch");
    Tensor zt = detail::values_leaf(g, z);
    const double m = double(detail::mask_count(z));

    Tensor rel;
    if (m > 0.0) {
        Tensor sd = standardize(d, z, variant, epsilon).field;
        Tensor sz = standardize(zt, z, variant, epsilon).field;
        rel = div(reduce_sum(abs(sub(sd, sz))), m);
    } else {
        rel = g.scalar(0.0);
    }

    // V = valid in both x and z.
    Buffer vm(z.size());
    double mv = 0.0;
    for (size_t i = 0; i < z.size(); ++i) {
        vm[i] = (x.valid[i] && z.valid[i]) ? 1.0 : 0.0;
        mv += vm[i];
    }
    Tensor vmask = g.leaf(Shape{z.height, z.width}, std::move(vm), false);
    Tensor absolute = div(reduce_sum(mul(abs(sub(d, zt)), vmask)), mv + epsilon);
    return add(rel, absolute);
}

namespace detail {

// Downsamples a 0/1 validity mask by the all-valid-in-block rule.
inline std::vector<uint8_t> pool_valid(const std::vector<uint8_t>& v, int h, int w) {
    std::vector<uint8_t> out(size_t(h / 2) * (w / 2));
    for (int r = 0; r < h / 2; ++r)
        for (int c = 0; c < w / 2; ++c)
            out[size_t(r) * (w / 2) + c] =
                v[size_t(2 * r) * w + 2 * c] && v[size_t(2 * r) * w + 2 * c + 1] &&
                v[size_t(2 * r + 1) * w + 2 * c] && v[size_t(2 * r + 1) * w + 2 * c + 1];
    return out;
}

// Pixels whose full gradient-operator support lies in bounds and on valid
// pixels. Sobel uses the 3x3 neighbourhood; forward differences use the
// {(r,c),(r+1,c),(r,c+1)} stencil.
inline Buffer support_mask(const std::vector<uint8_t>& v, int h, int w, GradOperator op,
                           double& count) {
    Buffer e(size_t(h) * w, 0.0);
    count = 0.0;
    if (op == GradOperator::Sobel) {
        for (int r = 1; r + 1 < h; ++r)
            for (int c = 1; c + 1 < w; ++c) {
                bool ok = true;
                for (int dr = -1; dr <= 1 && ok; ++dr)
                    for (int dc = -1; dc <= 1 && ok; ++dc)
                        ok = v[size_t(r + dr) * w + (c + dc)];
                if (ok) {
                    e[size_t(r) * w + c] = 1.0;
                    count += 1.0;
                }
            }
    } else {
        for (int r = 0; r + 1 < h; ++r)
            for (int c = 0; c + 1 < w; ++c)
                if (v[size_t(r) * w + c] && v[size_t(r + 1) * w + c] && v[size_t(r) * w + c + 1]) {
                    e[size_t(r) * w + c] = 1.0;
                    count += 1.0;
                }
    }
    return e;
}

} // namespace detail

// Multi-scale scale-invariant gradient term. The standardized residual is
// zero at GT-invalid pixels; at each scale, gradient outputs whose support
// touches an invalid pixel are excluded. All scales share one denominator,
// the GT-valid pixel count, so coarser scales contribute proportionally to
// their size. Scales that cannot be formed (odd dims or fields smaller
// than the operator) are skipped with a recorded warning.
inline Tensor gradient_matching_loss(Tensor d, const DepthField& z,
                                     Standardizer variant = Standardizer::MeanDev,
                                     double epsilon = 1e-6,
                                     GradOperator op = GradOperator::Sobel,
                                     int scales = 4) {
    Graph& g = *d.graph;
    if (d.size() != z.size()) throw std::invalid_argument("gradient_matching_loss: shape mismatch");
    if (detail::mask_count(z) == 0) return g.scalar(0.0);
    if (d.shape().size() != 4) d = reshape(d, Shape{1, 1, z.height, z.width});

    Tensor zt = detail::values_leaf(g, z);
    Tensor sd = standardize(d, z, variant, epsilon).field;
    Tensor sz = standardize(zt, z, variant, epsilon).field;
    Tensor residual = sub(sd, sz);

    std::vector<uint8_t> vmask(z.valid.begin(), z.valid.end());
    int h = z.height, w = z.width;
    Tensor total = g.scalar(0.0);
    const double m = double(detail::mask_count(z));
    const int min_dim = op == GradOperator::Sobel ? 3 : 2;
    for (int k = 1; k <= scales; ++k) {
        if (k > 1) {
            if (h % 2 || w % 2 || h / 2 < min_dim || w / 2 < min_dim) {
                g.warn("gradient_matching_loss: only " + std::to_string(k - 1) + " of " +
                       std::to_string(scales) + " scales feasible for " + std::to_string(z.height) +
                       "x" + std::to_string(z.width));
                break;
            }
            residual = avg_downsample2(residual);
            vmask = detail::pool_valid(vmask, h, w);
            h /= 2;
            w /= 2;
        } else if (h < min_dim || w < min_dim) {
            g.warn("gradient_matching_loss: field too small for any scale");
            break;
        }
        double count = 0.0;
        Buffer e = detail::support_mask(vmask, h, w, op, count);
        Tensor et = g.leaf(Shape{h, w}, std::move(e), false);
        auto [gh, gw] = op == GradOperator::Sobel ? sobel_gradients(residual)
                                                  : diff_gradients(residual);
        total = add(total, reduce_sum(mul(add(abs(gh), abs(gw)), et)));
    }
    return div(total, m + epsilon);
}

// Combined objective: scale-adaptive term + lambda * gradient term.
inline std::pair<Tensor, LossBreakdown> unified_loss(Tensor d, const DepthField& z,
                                                     const DepthField& x,
                                                     const LossConfig& cfg = {}) {
    Tensor sa = scale_adaptive_loss(d, z, x, cfg.standardizer, cfg.epsilon);
    Tensor sg = gradient_matching_loss(d, z, cfg.standardizer, cfg.epsilon, cfg.grad_op, cfg.scales);
    Tensor total = add(sa, mul(sg, cfg.lambda));
    LossBreakdown b;
    b.sa_term = sa.item();
    b.sg_term = sg.item();
    b.lambda = cfg.lambda;
    b.total = total.item();
    RegressionInfo info = classify_regression(x);
    b.kind = info.kind;
    b.valid_count = info.valid_count;
    b.distinct_count = info.distinct_count;
    return {total, b};
}

namespace detail {

inline Tensor masked_mean_exact(Tensor per_pixel, const DepthField& z) {
    Graph& g = *per_pixel.graph;
    const double m = double(mask_count(z));
    if (m == 0.0) return g.scalar(0.0);
    Tensor mask = mask_leaf(g, z);
    return div(reduce_sum(mul(per_pixel, mask)), m);
}

} // namespace detail

inline Tensor l1_loss(Tensor d, const DepthField& z) {
    Graph& g = *d.graph;
    Tensor zt = detail::values_leaf(g, z);
    return detail::masked_mean_exact(abs(sub(d, zt)), z);
}

inline Tensor l2_loss(Tensor d, const DepthField& z) {
    Graph& g = *d.graph;
    Tensor zt = detail::values_leaf(g, z);
    return detail::masked_mean_exact(square(sub(d, zt)), z);
}

// Log-space scale-invariant loss, mean(D^2) - mean(D)^2 with D = log d - log z.
// The squared-sum coefficient is 1/M^2 so the value is invariant under
// d -> s*d; inputs are clamped at 1e-6 before the log.
inline Tensor scale_invariant_loss(Tensor d, const DepthField& z) {
    Graph& g = *d.graph;
    const double m = double(detail::mask_count(z));
    if (m == 0.0) return g.scalar(0.0);
    Tensor zt = detail::values_leaf(g, z);
    Tensor delta = sub(log(clamp_min(d, 1e-6)), log(clamp_min(zt, 1e-6)));
    Tensor mask = detail::mask_leaf(g, z);
    Tensor mean_sq = div(reduce_sum(mul(square(delta), mask)), m);
    Tensor mean = div(reduce_sum(mul(delta, mask)), m);
    return sub(mean_sq, square(mean));
}

// Median/mean-absolute-deviation standardization on both fields, compared in
// L1 over GT-valid pixels. The spread is guarded by max(spread, epsilon), so
// the loss is exactly invariant under d -> s*d + f whenever the spread
// dominates epsilon.
inline Tensor affine_invariant_loss(Tensor d, const DepthField& z, double epsilon = 1e-6) {
    Graph& g = *d.graph;
    const double m = double(detail::mask_count(z));
    if (m == 0.0) return g.scalar(0.0);
    Tensor zt = detail::values_leaf(g, z);
    Tensor mask = detail::mask_leaf(g, z);

    auto standardized = [&](Tensor a) {
        Tensor med = detail::masked_median(a, z);
        Tensor centered = sub(a, med);
        Tensor spread = div(reduce_sum(mul(abs(centered), mask)), m);
        return div(centered, clamp_min(spread, epsilon));
    };
    Tensor sd = standardized(d);
    Tensor sz = standardized(zt);
    return div(reduce_sum(mul(abs(sub(sd, sz)), mask)), m);
}

struct PixelPair {
    size_t i = 0;
    size_t j = 0;
};

// Pairwise ranking loss; ordinal labels derive from z with the ratio
// threshold tau, logistic on ordered pairs and squared on ties.
inline Tensor ranking_loss(Tensor d, const DepthField& z, const std::vector<PixelPair>& pairs,
                           double tau = 0.01) {
    Graph& g = *d.graph;
    if (pairs.empty()) return g.scalar(0.0);
    std::vector<size_t> oi, oj; // ordered pairs
    Buffer neg_label;
    std::vector<size_t> ti, tj; // ties
    for (const PixelPair& p : pairs) {
        const double zi = std::max(z.values[p.i], 1e-6);
        const double zj = std::max(z.values[p.j], 1e-6);
        const int l = depth_ordinal(zi, zj, tau);
        if (l == 0) {
            ti.push_back(p.i);
            tj.push_back(p.j);
        } else {
            oi.push_back(p.i);
            oj.push_back(p.j);
            neg_label.push_back(double(-l));
        }
    }
    Tensor total = g.scalar(0.0);
    if (!oi.empty()) {
        Tensor diff = sub(gather(d, oi), gather(d, oj));
        Tensor sign = g.leaf(Shape{int(neg_label.size())}, neg_label, false);
        total = add(total, reduce_sum(log(add(exp(mul(diff, sign)), 1.0))));
    }
    if (!ti.empty()) {
        Tensor diff = sub(gather(d, ti), gather(d, tj));
        total = add(total, reduce_sum(square(diff)));
    }
    return div(total, double(pairs.size()));
}

} // namespace rgbx

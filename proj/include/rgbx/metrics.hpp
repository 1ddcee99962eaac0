#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <unordered_set>
#include <vector>

#include "rgbx/field.hpp"
#include "rgbx/losses.hpp"
#include "rgbx/rng.hpp"

namespace rgbx {

struct MetricReport {
    double oe = 0.0;
    double srmse = 0.0;
    double rmse = 0.0;
    double abs_rel = 0.0;
    size_t pixel_count = 0;
    size_t pair_count = 0;
};

namespace detail {

// Sample `want` distinct values from [0, total) (Floyd's algorithm).
inline std::vector<uint64_t> sample_distinct(uint64_t total, uint64_t want, Rng& rng) {
    std::vector<uint64_t> out;
    out.reserve(want);
    std::unordered_set<uint64_t> seen;
    for (uint64_t t = total - want; t < total; ++t) {
        uint64_t r = uint64_t(rng.uniform_int(0, int64_t(t)));
        if (seen.insert(r).second) out.push_back(r);
        else {
            seen.insert(t);
            out.push_back(t);
        }
    }
    return out;
}

// Decode unordered pair index k in [0, n*(n-1)/2) to (i, j) with i < j.
inline void decode_pair(uint64_t k, size_t n, size_t& i, size_t& j) {
    // offset(i) = i*n - i*(i+1)/2 is the first index of row i
    size_t lo = 0, hi = n - 1;
    while (lo + 1 < hi) {
        size_t mid = (lo + hi) / 2;
        uint64_t off = uint64_t(mid) * n - uint64_t(mid) * (mid + 1) / 2;
        if (off <= k) lo = mid;
        else hi = mid;
    }
    uint64_t off_hi = uint64_t(hi) * n - uint64_t(hi) * (hi + 1) / 2;
    i = (off_hi <= k) ? hi : lo;
    uint64_t off = uint64_t(i) * n - uint64_t(i) * (i + 1) / 2;
    j = size_t(k - off) + i + 1;
}

} // namespace detail

// Ordinal error: fraction of pixel pairs whose depth-order labels
// (threshold tau = 0.01) disagree between d and z. Pairs are drawn without
// replacement from GT-valid pixels with z > 0; all pairs are used when
// fewer than `pair_budget` exist. d is clamped at 1e-6.
inline double metric_oe(const Buffer& d, const DepthField& z, size_t pair_budget = 50000,
                        uint64_t seed = 0, size_t* pairs_used = nullptr, double tau = 0.01) {
    std::vector<size_t> px;
    for (size_t i = 0; i < z.size(); ++i)
        if (z.valid[i] && z.values[i] > 0.0) px.push_back(i);
    const size_t n = px.size();
    if (pairs_used) *pairs_used = 0;
    if (n < 2) {
        std::cerr << "metric_oe: fewer than 2 valid pixels, returning 0\n";
        return 0.0;
    }
    auto disagree = [&](size_t a, size_t b) {
        const double da = std::max(d[a], 1e-6), db = std::max(d[b], 1e-6);
        return depth_ordinal(da, db, tau) != depth_ordinal(z.values[a], z.values[b], tau);
    };
    const uint64_t total = uint64_t(n) * (n - 1) / 2;
    uint64_t mismatches = 0, used = 0;
    if (total <= pair_budget) {
        for (size_t a = 0; a < n; ++a)
            for (size_t b = a + 1; b < n; ++b)
                mismatches += disagree(px[a], px[b]);
        used = total;
    } else {
        Rng rng(seed);
        for (uint64_t k : detail::sample_distinct(total, pair_budget, rng)) {
            size_t a, b;
            detail::decode_pair(k, n, a, b);
            mismatches += disagree(px[a], px[b]);
        }
        used = pair_budget;
    }
    if (pairs_used) *pairs_used = used;
    return double(mismatches) / double(used);
}

// Root mean squared difference of the two fields standardized by mean and
// mean absolute deviation over GT-valid pixels.
inline double metric_srmse(const Buffer& d, const DepthField& z, double epsilon = 1e-6) {
    std::vector<size_t> px;
    for (size_t i = 0; i < z.size(); ++i)
        if (z.valid[i]) px.push_back(i);
    if (px.empty()) {
        std::cerr << "metric_srmse: empty mask, returning 0\n";
        return 0.0;
    }
    const double n = double(px.size());
    double md = 0.0, mz = 0.0;
    for (size_t i : px) {
        md += d[i];
        mz += z.values[i];
    }
    md /= n;
    mz /= n;
    double sd = 0.0, sz = 0.0;
    for (size_t i : px) {
        sd += std::fabs(d[i] - md);
        sz += std::fabs(z.values[i] - mz);
    }
    sd /= n;
    sz /= n;
    double acc = 0.0;
    for (size_t i : px) {
        const double e = (d[i] - md) / (sd + epsilon) - (z.values[i] - mz) / (sz + epsilon);
        acc += e * e;
    }
    return std::sqrt(acc / n);
}

inline double metric_rmse(const Buffer& d, const DepthField& z) {
    double acc = 0.0, n = 0.0;
    for (size_t i = 0; i < z.size(); ++i) {
        if (!z.valid[i]) continue;
        const double e = d[i] - z.values[i];
        acc += e * e;
        n += 1.0;
    }
    if (n == 0.0) {
        std::cerr << "metric_rmse: empty mask, returning 0\n";
        return 0.0;
    }
    return std::sqrt(acc / n);
}

// Mean of |d - z| / z over GT-valid pixels with z above 1e-6.
inline double metric_abs_rel(const Buffer& d, const DepthField& z) {
    double acc = 0.0, n = 0.0;
    for (size_t i = 0; i < z.size(); ++i) {
        if (!z.valid[i] || z.values[i] <= 1e-6) continue;
        acc += std::fabs(d[i] - z.values[i]) / z.values[i];
        n += 1.0;
    }
    if (n == 0.0) {
        std::cerr << "metric_abs_rel: empty domain, returning 0\n";
        return 0.0;
    }
    return acc / n;
}

inline MetricReport compute_metrics(const Buffer& d, const DepthField& z,
                                    size_t pair_budget = 50000, uint64_t seed = 0,
                                    double epsilon = 1e-6) {
    MetricReport r;
    r.oe = metric_oe(d, z, pair_budget, seed, &r.pair_count);
    r.srmse = metric_srmse(d, z, epsilon);
    r.rmse = metric_rmse(d, z);
    r.abs_rel = metric_abs_rel(d, z);
    r.pixel_count = z.valid_count();
    return r;
}

} // namespace rgbx

#pragma once

// Diagnostics used by the `selftest` CLI command and the test suites:
// a central-finite-difference gradient checker and independent brute-force
// reimplementations of the evaluation metrics. The oracles here share no
// code with the implementations they check.

#include <functional>
#include <sstream>
#include <string>

#include "rgbx/losses.hpp"
#include "rgbx/metrics.hpp"
#include "rgbx/net.hpp"
#include "rgbx/nnops.hpp"
#include "rgbx/rng.hpp"

namespace rgbx::selfcheck {

struct CheckItem {
    std::string name;
    double err = 0.0;
    double tol = 0.0;
    bool pass = false;
};

// Central finite differences (step h) on the given parameter buffers.
// `eval` must recompute the scalar from the buffers' current contents.
// Error per entry is |fd - analytic| / max(1, |fd|, |analytic|).
template <class Eval>
double fd_max_rel_err(Eval&& eval, const std::vector<Buffer*>& params,
                      const std::vector<Buffer>& analytic, double h = 1e-5,
                      size_t max_per_param = 0, uint64_t seed = 7) {
    Rng rng(seed);
    double worst = 0.0;
    for (size_t p = 0; p < params.size(); ++p) {
        Buffer& buf = *params[p];
        std::vector<size_t> idx;
        if (max_per_param == 0 || buf.size() <= max_per_param) {
            idx.resize(buf.size());
            for (size_t i = 0; i < buf.size(); ++i) idx[i] = i;
        } else {
            for (size_t i = 0; i < max_per_param; ++i)
                idx.push_back(size_t(rng.uniform_int(0, int64_t(buf.size()) - 1)));
        }
        for (size_t i : idx) {
            const double orig = buf[i];
            buf[i] = orig + h;
            const double fp = eval();
            buf[i] = orig - h;
            const double fm = eval();
            buf[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = analytic[p].empty() ? 0.0 : analytic[p][i];
            const double denom = std::max({1.0, std::fabs(fd), std::fabs(an)});
            worst = std::max(worst, std::fabs(fd - an) / denom);
        }
    }
    return worst;
}

// ---- Brute-force metric oracles (naive double loops) ----

inline double naive_oe(const Buffer& d, const DepthField& z, double tau = 0.01) {
    std::vector<size_t> px;
    for (size_t i = 0; i < z.size(); ++i)
        if (z.valid[i] && z.values[i] > 0.0) px.push_back(i);
    if (px.size() < 2) return 0.0;
    auto label = [tau](double a, double b) {
        if (a / b >= 1.0 + tau) return 1;
        if (a / b <= 1.0 / (1.0 + tau)) return -1;
        return 0;
    };
    uint64_t bad = 0, total = 0;
    for (size_t a = 0; a < px.size(); ++a)
        for (size_t b = a + 1; b < px.size(); ++b) {
            const size_t i = px[a], j = px[b];
            const double di = d[i] < 1e-6 ? 1e-6 : d[i];
            const double dj = d[j] < 1e-6 ? 1e-6 : d[j];
            if (label(di, dj) != label(z.values[i], z.values[j])) ++bad;
            ++total;
        }
    return double(bad) / double(total);
}

inline double naive_srmse(const Buffer& d, const DepthField& z, double epsilon = 1e-6) {
    double n = 0.0;
    for (size_t i = 0; i < z.size(); ++i)
        if (z.valid[i]) n += 1.0;
    if (n == 0.0) return 0.0;
    double md = 0.0, mz = 0.0;
    for (size_t i = 0; i < z.size(); ++i)
        if (z.valid[i]) {
            md += d[i];
            mz += z.values[i];
        }
    md /= n;
    mz /= n;
    double sd = 0.0, sz = 0.0;
    for (size_t i = 0; i < z.size(); ++i)
        if (z.valid[i]) {
            sd += std::fabs(d[i] - md);
            sz += std::fabs(z.values[i] - mz);
        }
    sd /= n;
    sz /= n;
    double acc = 0.0;
    for (size_t i = 0; i < z.size(); ++i)
        if (z.valid[i]) {
            const double e = (d[i] - md) / (sd + epsilon) - (z.values[i] - mz) / (sz + epsilon);
            acc += e * e;
        }
    return std::sqrt(acc / n);
}

inline double naive_rmse(const Buffer& d, const DepthField& z) {
    double acc = 0.0, n = 0.0;
    for (size_t i = 0; i < z.size(); ++i)
        if (z.valid[i]) {
            acc += (d[i] - z.values[i]) * (d[i] - z.values[i]);
            n += 1.0;
        }
    return n == 0.0 ? 0.0 : std::sqrt(acc / n);
}

inline double naive_abs_rel(const Buffer& d, const DepthField& z) {
    double acc = 0.0, n = 0.0;
    for (size_t i = 0; i < z.size(); ++i)
        if (z.valid[i] && z.values[i] > 1e-6) {
            acc += std::fabs(d[i] - z.values[i]) / z.values[i];
            n += 1.0;
        }
    return n == 0.0 ? 0.0 : acc / n;
}

// Reference direct convolution, used by the unit tests as an independent
// route against the im2col path.
inline Buffer reference_conv2d(const Buffer& x, int n, int ci, int h, int w, const Buffer& wgt,
                               int co, int k, const Buffer& bias, int stride) {
    const int pad = (k - 1) / 2;
    const int ho = (h + 2 * pad - k) / stride + 1;
    const int wo = (w + 2 * pad - k) / stride + 1;
    Buffer out(size_t(n) * co * ho * wo, 0.0);
    for (int b = 0; b < n; ++b)
        for (int o = 0; o < co; ++o)
            for (int r = 0; r < ho; ++r)
                for (int c = 0; c < wo; ++c) {
                    double acc = bias[o];
                    for (int ic = 0; ic < ci; ++ic)
                        for (int kh = 0; kh < k; ++kh)
                            for (int kw = 0; kw < k; ++kw) {
                                const int hi = r * stride + kh - pad;
                                const int wi = c * stride + kw - pad;
                                if (hi < 0 || hi >= h || wi < 0 || wi >= w) continue;
                                acc += x[((size_t(b) * ci + ic) * h + hi) * w + wi] *
                                       wgt[((size_t(o) * ci + ic) * k + kh) * k + kw];
                            }
                    out[((size_t(b) * co + o) * ho + r) * wo + c] = acc;
                }
    return out;
}

// ---- Canned suites ----

namespace detail {

inline Buffer random_buffer(size_t n, Rng& rng, double lo, double hi) {
    Buffer b(n);
    for (double& v : b) v = rng.uniform(lo, hi);
    return b;
}

// Loss = sum(r .* out) for fixed random r, so every output element matters.
inline Tensor weighted_sum(Tensor out, Rng& rng) {
    Buffer r(out.size());
    for (double& v : r) v = rng.uniform(-1.0, 1.0);
    Tensor rt = out.graph->leaf(out.shape(), std::move(r), false);
    return reduce_sum(mul(out, rt));
}

template <class Build>
CheckItem check_op(const std::string& name, double tol, std::vector<Shape> in_shapes,
                   std::vector<std::pair<double, double>> ranges, Build build, uint64_t seed,
                   bool signed_inputs = false) {
    Rng rng(seed);
    std::vector<Buffer> data;
    for (size_t i = 0; i < in_shapes.size(); ++i) {
        Buffer b = random_buffer(shape_numel(in_shapes[i]), rng, ranges[i].first, ranges[i].second);
        if (signed_inputs)
            for (double& v : b)
                if (rng.bernoulli(0.5)) v = -v;
        data.push_back(std::move(b));
    }
    auto eval = [&]() {
        Graph g;
        std::vector<Tensor> ins;
        for (size_t i = 0; i < in_shapes.size(); ++i)
            ins.push_back(g.leaf(in_shapes[i], data[i], true));
        Rng wr(seed + 1);
        return weighted_sum(build(g, ins), wr).item();
    };
    // Analytic gradients from one taped pass.
    Graph g;
    std::vector<Tensor> ins;
    for (size_t i = 0; i < in_shapes.size(); ++i)
        ins.push_back(g.leaf(in_shapes[i], data[i], true));
    Rng wr(seed + 1);
    Tensor loss = weighted_sum(build(g, ins), wr);
    g.backward(loss);
    std::vector<Buffer> analytic;
    for (Tensor t : ins) {
        Buffer gr = t.grad();
        if (gr.empty()) gr.assign(t.size(), 0.0);
        analytic.push_back(std::move(gr));
    }
    std::vector<Buffer*> params;
    for (Buffer& b : data) params.push_back(&b);
    CheckItem item{name, fd_max_rel_err(eval, params, analytic), tol, false};
    item.pass = item.err <= tol;
    return item;
}

inline DepthField random_depth_field(int h, int w, Rng& rng, double valid_prob,
                                     double lo = 0.1, double hi = 1.0) {
    DepthField f(h, w);
    for (size_t i = 0; i < f.size(); ++i) {
        f.valid[i] = rng.bernoulli(valid_prob) ? 1 : 0;
        f.values[i] = f.valid[i] ? rng.uniform(lo, hi) : 0.0;
    }
    return f;
}

template <class LossFn>
CheckItem check_loss(const std::string& name, double tol, const DepthField& z, LossFn make_loss,
                     uint64_t seed) {
    Rng rng(seed);
    Buffer d = random_buffer(z.size(), rng, 0.1, 1.2);
    auto eval = [&]() {
        Graph g;
        Tensor dt = g.leaf(Shape{1, 1, z.height, z.width}, d, true);
        return make_loss(dt).item();
    };
    Graph g;
    Tensor dt = g.leaf(Shape{1, 1, z.height, z.width}, d, true);
    Tensor loss = make_loss(dt);
    g.backward(loss);
    Buffer analytic = dt.grad();
    if (analytic.empty()) analytic.assign(d.size(), 0.0);
    CheckItem item{name, fd_max_rel_err(eval, {&d}, {analytic}), tol, false};
    item.pass = item.err <= tol;
    return item;
}

} // namespace detail

// Gradient fidelity for every registered op, randomized small tensors.
inline std::vector<CheckItem> op_gradient_suite(uint64_t seed = 20240801) {
    using detail::check_op;
    std::vector<CheckItem> items;
    const double tol = 1e-4;
    const Shape s88{1, 1, 8, 8};
    auto rng_pos = std::make_pair(0.3, 1.5);

    items.push_back(check_op("add", tol, {s88, s88}, {rng_pos, rng_pos},
        [](Graph&, std::vector<Tensor>& in) { return add(in[0], in[1]); }, seed, true));
    items.push_back(check_op("sub", tol, {s88, s88}, {rng_pos, rng_pos},
        [](Graph&, std::vector<Tensor>& in) { return sub(in[0], in[1]); }, seed + 1, true));
    items.push_back(check_op("mul", tol, {s88, s88}, {rng_pos, rng_pos},
        [](Graph&, std::vector<Tensor>& in) { return mul(in[0], in[1]); }, seed + 2, true));
    items.push_back(check_op("div", tol, {s88, s88}, {rng_pos, rng_pos},
        [](Graph&, std::vector<Tensor>& in) { return div(in[0], in[1]); }, seed + 3));
    items.push_back(check_op("mul_scalar_broadcast", tol, {s88, Shape{1}}, {rng_pos, rng_pos},
        [](Graph&, std::vector<Tensor>& in) { return mul(in[0], in[1]); }, seed + 4, true));
    items.push_back(check_op("abs", tol, {s88}, {rng_pos},
        [](Graph&, std::vector<Tensor>& in) { return abs(in[0]); }, seed + 5, true));
    items.push_back(check_op("relu", tol, {s88}, {rng_pos},
        [](Graph&, std::vector<Tensor>& in) { return relu(in[0]); }, seed + 6, true));
    items.push_back(check_op("log", tol, {s88}, {rng_pos},
        [](Graph&, std::vector<Tensor>& in) { return log(in[0]); }, seed + 7));
    items.push_back(check_op("square", tol, {s88}, {rng_pos},
        [](Graph&, std::vector<Tensor>& in) { return square(in[0]); }, seed + 8, true));
    items.push_back(check_op("exp", tol, {s88}, {std::make_pair(-1.0, 1.0)},
        [](Graph&, std::vector<Tensor>& in) { return exp(in[0]); }, seed + 9));
    items.push_back(check_op("sqrt", tol, {s88}, {rng_pos},
        [](Graph&, std::vector<Tensor>& in) { return sqrt(in[0]); }, seed + 10));
    items.push_back(check_op("reduce_sum", tol, {s88}, {rng_pos},
        [](Graph&, std::vector<Tensor>& in) { return reduce_sum(in[0]); }, seed + 11, true));
    items.push_back(check_op("reduce_mean", tol, {s88}, {rng_pos},
        [](Graph&, std::vector<Tensor>& in) { return reduce_mean(in[0]); }, seed + 12, true));
    items.push_back(check_op("reduce_mean_masked", tol, {s88}, {rng_pos},
        [seed](Graph& g, std::vector<Tensor>& in) {
            Rng mr(seed + 100);
            Buffer m(64);
            for (double& v : m) v = mr.bernoulli(0.7) ? 1.0 : 0.0;
            Tensor mt = g.leaf(Shape{1, 1, 8, 8}, std::move(m), false);
            return reduce_mean(in[0], mt, 1e-6);
        }, seed + 13, true));
    items.push_back(check_op("gather", tol, {s88}, {rng_pos},
        [](Graph&, std::vector<Tensor>& in) {
            return gather(in[0], {0, 5, 5, 17, 63});
        }, seed + 14, true));
    items.push_back(check_op("conv2d_3x3_s1", tol, {Shape{1, 2, 6, 6}, Shape{3, 2, 3, 3}, Shape{3}},
        {rng_pos, std::make_pair(-0.8, 0.8), std::make_pair(-0.5, 0.5)},
        [](Graph&, std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2], 1); }, seed + 15, true));
    items.push_back(check_op("conv2d_3x3_s2", tol, {Shape{1, 2, 6, 6}, Shape{3, 2, 3, 3}, Shape{3}},
        {rng_pos, std::make_pair(-0.8, 0.8), std::make_pair(-0.5, 0.5)},
        [](Graph&, std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2], 2); }, seed + 16, true));
    items.push_back(check_op("conv2d_1x1_s1", tol, {Shape{2, 3, 4, 4}, Shape{2, 3, 1, 1}, Shape{2}},
        {rng_pos, std::make_pair(-0.8, 0.8), std::make_pair(-0.5, 0.5)},
        [](Graph&, std::vector<Tensor>& in) { return conv2d(in[0], in[1], in[2], 1); }, seed + 17, true));
    items.push_back(check_op("nearest_upsample2", tol, {Shape{1, 2, 4, 4}}, {rng_pos},
        [](Graph&, std::vector<Tensor>& in) { return nearest_upsample2(in[0]); }, seed + 18, true));
    items.push_back(check_op("avg_downsample2", tol, {s88}, {rng_pos},
        [](Graph&, std::vector<Tensor>& in) { return avg_downsample2(in[0]); }, seed + 19, true));
    items.push_back(check_op("sobel_h", tol, {s88}, {rng_pos},
        [](Graph&, std::vector<Tensor>& in) { return sobel_gradients(in[0]).first; }, seed + 20, true));
    items.push_back(check_op("sobel_w", tol, {s88}, {rng_pos},
        [](Graph&, std::vector<Tensor>& in) { return sobel_gradients(in[0]).second; }, seed + 21, true));
    items.push_back(check_op("diff_h", tol, {s88}, {rng_pos},
        [](Graph&, std::vector<Tensor>& in) { return diff_gradients(in[0]).first; }, seed + 22, true));
    items.push_back(check_op("diff_w", tol, {s88}, {rng_pos},
        [](Graph&, std::vector<Tensor>& in) { return diff_gradients(in[0]).second; }, seed + 23, true));
    items.push_back(check_op("concat_channels", tol, {Shape{1, 2, 4, 4}, Shape{1, 3, 4, 4}},
        {rng_pos, rng_pos},
        [](Graph&, std::vector<Tensor>& in) { return concat_channels(in[0], in[1]); }, seed + 24, true));
    items.push_back(check_op("batch_norm_train", 1e-4 * 5,
        {Shape{3, 2, 4, 4}, Shape{2}, Shape{2}},
        {rng_pos, std::make_pair(0.5, 1.5), std::make_pair(-0.5, 0.5)},
        [](Graph&, std::vector<Tensor>& in) {
            static thread_local BatchNormState state(2);
            state = BatchNormState(2);
            return batch_norm(in[0], in[1], in[2], true, state);
        }, seed + 25, true));
    items.push_back(check_op("batch_norm_eval", tol, {Shape{1, 2, 4, 4}, Shape{2}, Shape{2}},
        {rng_pos, std::make_pair(0.5, 1.5), std::make_pair(-0.5, 0.5)},
        [](Graph&, std::vector<Tensor>& in) {
            static thread_local BatchNormState state(2);
            state = BatchNormState(2);
            state.running_mean = {0.2, 0.6};
            state.running_var = {0.8, 1.3};
            return batch_norm(in[0], in[1], in[2], false, state);
        }, seed + 26, true));
    return items;
}

// Gradient fidelity for every loss w.r.t. d on random 8x8 fields.
inline std::vector<CheckItem> loss_gradient_suite(uint64_t seed = 20240802) {
    using detail::check_loss;
    std::vector<CheckItem> items;
    const double tol = 1e-4;
    Rng rng(seed);
    DepthField z = detail::random_depth_field(8, 8, rng, 0.85);
    DepthField x_partial = z;
    for (size_t i = 0; i < x_partial.size(); ++i)
        if (x_partial.valid[i] && rng.bernoulli(0.6)) x_partial.invalidate(i % 8, int(i / 8));
    DepthField x_empty(8, 8, 0.0, 0);

    items.push_back(check_loss("scale_adaptive_g2s", tol, z,
        [&](Tensor d) { return scale_adaptive_loss(d, z, x_partial, Standardizer::MeanDev); }, seed + 1));
    items.push_back(check_loss("scale_adaptive_zs", tol, z,
        [&](Tensor d) { return scale_adaptive_loss(d, z, x_partial, Standardizer::ZScore); }, seed + 2));
    items.push_back(check_loss("scale_adaptive_ms", tol, z,
        [&](Tensor d) { return scale_adaptive_loss(d, z, x_partial, Standardizer::MedianDev); }, seed + 3));
    items.push_back(check_loss("gradient_term_sobel", tol, z,
        [&](Tensor d) { return gradient_matching_loss(d, z); }, seed + 4));
    items.push_back(check_loss("gradient_term_diff", tol, z,
        [&](Tensor d) {
            return gradient_matching_loss(d, z, Standardizer::MeanDev, 1e-6, GradOperator::ForwardDiff);
        }, seed + 5));
    items.push_back(check_loss("unified", tol, z,
        [&](Tensor d) { return unified_loss(d, z, x_empty).first; }, seed + 6));
    items.push_back(check_loss("l1", tol, z, [&](Tensor d) { return l1_loss(d, z); }, seed + 7));
    items.push_back(check_loss("l2", tol, z, [&](Tensor d) { return l2_loss(d, z); }, seed + 8));
    items.push_back(check_loss("scale_invariant", tol, z,
        [&](Tensor d) { return scale_invariant_loss(d, z); }, seed + 9));
    items.push_back(check_loss("affine_invariant", tol, z,
        [&](Tensor d) { return affine_invariant_loss(d, z); }, seed + 10));
    items.push_back(check_loss("ranking", tol, z,
        [&](Tensor d) {
            std::vector<PixelPair> pairs;
            Rng pr(seed + 11);
            for (int i = 0; i < 40; ++i)
                pairs.push_back({size_t(pr.uniform_int(0, 63)), size_t(pr.uniform_int(0, 63))});
            return ranking_loss(d, z, pairs);
        }, seed + 12));
    return items;
}

// Forward+backward through a small 2-level net against finite differences,
// on a sampled subset of entries from every parameter tensor.
inline CheckItem toy_net_gradient_check(uint64_t seed = 20240804) {
    NetConfig cfg;
    cfg.levels = 2;
    cfg.base_channels = 4;
    cfg.blocks_per_level = 1;
    UNet net(cfg);
    net.init_weights(seed);
    // Nudge the ReZero scales off zero so the residual branches participate.
    for (const auto& p : net.params())
        if (p.name.ends_with(".alpha")) (*p.data)[0] = 0.3;

    Rng rng(seed + 1);
    Buffer input(size_t(5) * 16 * 16);
    for (double& v : input) v = rng.uniform(0.0, 1.0);

    auto eval = [&]() {
        Graph g;
        Tensor in = g.leaf(Shape{1, 5, 16, 16}, input, false);
        Tensor out = net.forward(g, in, false);
        Rng wr(seed + 2);
        return detail::weighted_sum(out, wr).item();
    };
    Graph g;
    Tensor in = g.leaf(Shape{1, 5, 16, 16}, input, false);
    Tensor out = net.forward(g, in, false);
    Rng wr(seed + 2);
    Tensor loss = detail::weighted_sum(out, wr);
    g.backward(loss);

    std::vector<Buffer*> bufs;
    std::vector<Buffer> analytic(net.params().size());
    for (const auto& p : net.params()) bufs.push_back(p.data.get());
    // Collect gradients by matching leaf storage to parameter buffers.
    for (size_t id = 0; id < g.node_count(); ++id) {
        const auto& n = g.node(int(id));
        if (n.forward || n.grad.empty()) continue;
        for (size_t p = 0; p < bufs.size(); ++p)
            if (n.value.get() == bufs[p]) analytic[p] = n.grad;
    }
    for (size_t p = 0; p < bufs.size(); ++p)
        if (analytic[p].empty()) analytic[p].assign(bufs[p]->size(), 0.0);

    CheckItem item{"toy_net_full_path", fd_max_rel_err(eval, bufs, analytic, 1e-5, 6, seed + 3),
                   1e-3, false};
    item.pass = item.err <= item.tol;
    return item;
}

// Metrics vs brute-force oracles on random field pairs.
inline std::vector<CheckItem> metric_oracle_suite(int n_pairs = 100, uint64_t seed = 20240803) {
    std::vector<CheckItem> items;
    double worst_oe = 0, worst_srmse = 0, worst_rmse = 0, worst_abs = 0;
    Rng rng(seed);
    for (int t = 0; t < n_pairs; ++t) {
        DepthField z = detail::random_depth_field(16, 16, rng, 0.9, 0.05, 1.0);
        Buffer d = detail::random_buffer(z.size(), rng, 0.05, 1.1);
        worst_oe = std::max(worst_oe, std::fabs(metric_oe(d, z) - naive_oe(d, z)));
        worst_srmse = std::max(worst_srmse, std::fabs(metric_srmse(d, z) - naive_srmse(d, z)));
        worst_rmse = std::max(worst_rmse, std::fabs(metric_rmse(d, z) - naive_rmse(d, z)));
        worst_abs = std::max(worst_abs, std::fabs(metric_abs_rel(d, z) - naive_abs_rel(d, z)));
    }
    const double tol = 1e-10;
    items.push_back({"oe_vs_bruteforce", worst_oe, tol, worst_oe <= tol});
    items.push_back({"srmse_vs_bruteforce", worst_srmse, tol, worst_srmse <= tol});
    items.push_back({"rmse_vs_bruteforce", worst_rmse, tol, worst_rmse <= tol});
    items.push_back({"abs_rel_vs_bruteforce", worst_abs, tol, worst_abs <= tol});
    return items;
}

} // namespace rgbx::selfcheck

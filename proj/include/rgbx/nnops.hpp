#pragma once

#include <Eigen/Core>

#include <array>
#include <cstring>
#include <utility>

#include "rgbx/graph.hpp"

namespace rgbx {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

struct ConvDims {
    int n, ci, h, w, co, k, stride, pad, ho, wo;
};

inline ConvDims conv_dims(const Shape& x, const Shape& wgt, int stride) {
    if (x.size() != 4 || wgt.size() != 4)
        throw std::invalid_argument("conv2d: expects NCHW input and OIKK weight");
    ConvDims d;
    d.n = x[0]; d.ci = x[1]; d.h = x[2]; d.w = x[3];
    d.co = wgt[0]; d.k = wgt[2]; d.stride = stride;
    if (wgt[1] != d.ci) throw std::invalid_argument("conv2d: channel mismatch");
    if (wgt[3] != d.k || (d.k != 1 && d.k != 3))
        throw std::invalid_argument("conv2d: kernel must be 1x1 or 3x3");
    if (stride != 1 && stride != 2) throw std::invalid_argument("conv2d: stride must be 1 or 2");
    if (stride == 2 && (d.h % 2 || d.w % 2))
        throw std::invalid_argument("conv2d: stride 2 requires even spatial size");
    d.pad = (d.k - 1) / 2;
    d.ho = (d.h + 2 * d.pad - d.k) / stride + 1;
    d.wo = (d.w + 2 * d.pad - d.k) / stride + 1;
    return d;
}

// col is (ci*k*k) x (ho*wo), row-major.
inline void im2col(const double* x, const ConvDims& d, double* col) {
    const int hw = d.ho * d.wo;
    for (int c = 0; c < d.ci; ++c) {
        const double* plane = x + size_t(c) * d.h * d.w;
        for (int kh = 0; kh < d.k; ++kh) {
            for (int kw = 0; kw < d.k; ++kw) {
                double* row = col + size_t((c * d.k + kh) * d.k + kw) * hw;
                for (int ho = 0; ho < d.ho; ++ho) {
                    const int hi = ho * d.stride + kh - d.pad;
                    double* out = row + size_t(ho) * d.wo;
                    if (hi < 0 || hi >= d.h) {
                        std::memset(out, 0, sizeof(double) * d.wo);
                        continue;
                    }
                    const double* src = plane + size_t(hi) * d.w;
                    if (d.stride == 1) {
                        // wi = wo + kw - pad; copy the in-range span, zero the rest
                        const int off = kw - d.pad;
                        const int lo = std::max(0, -off);
                        const int hi_w = std::min(d.wo, d.w - off);
                        for (int wo = 0; wo < lo; ++wo) out[wo] = 0.0;
                        if (hi_w > lo) std::memcpy(out + lo, src + lo + off, sizeof(double) * (hi_w - lo));
                        for (int wo = std::max(lo, hi_w); wo < d.wo; ++wo) out[wo] = 0.0;
                    } else {
                        for (int wo = 0; wo < d.wo; ++wo) {
                            const int wi = wo * d.stride + kw - d.pad;
                            out[wo] = (wi >= 0 && wi < d.w) ? src[wi] : 0.0;
                        }
                    }
                }
            }
        }
    }
}

inline void col2im_add(const double* col, const ConvDims& d, double* x_grad) {
    const int hw = d.ho * d.wo;
    for (int c = 0; c < d.ci; ++c) {
        double* plane = x_grad + size_t(c) * d.h * d.w;
        for (int kh = 0; kh < d.k; ++kh) {
            for (int kw = 0; kw < d.k; ++kw) {
                const double* row = col + size_t((c * d.k + kh) * d.k + kw) * hw;
                for (int ho = 0; ho < d.ho; ++ho) {
                    const int hi = ho * d.stride + kh - d.pad;
                    if (hi < 0 || hi >= d.h) continue;
                    double* dst = plane + size_t(hi) * d.w;
                    const double* src = row + size_t(ho) * d.wo;
                    if (d.stride == 1) {
                        const int off = kw - d.pad;
                        const int lo = std::max(0, -off);
                        const int hi_w = std::min(d.wo, d.w - off);
                        for (int wo = lo; wo < hi_w; ++wo) dst[wo + off] += src[wo];
                    } else {
                        for (int wo = 0; wo < d.wo; ++wo) {
                            const int wi = wo * d.stride + kw - d.pad;
                            if (wi >= 0 && wi < d.w) dst[wi] += src[wo];
                        }
                    }
                }
            }
        }
    }
}

// Reused per-thread scratch for the im2col buffers; the large allocations
// otherwise cross the allocator's mmap threshold on every conv call.
inline Buffer& conv_scratch(int which) {
    static thread_local Buffer bufs[2];
    return bufs[which];
}

inline double* scratch_data(int which, size_t need) {
    Buffer& b = conv_scratch(which);
    if (b.size() < need) b.resize(need);
    return b.data();
}

} // namespace detail

// Cross-correlation plus bias. 3x3 kernels use one-pixel zero padding so
// stride 1 preserves the spatial size; stride 2 halves even sizes.
inline Tensor conv2d(Tensor x, Tensor weight, Tensor bias, int stride = 1) {
    detail::check_same_graph(x, weight);
    detail::check_same_graph(x, bias);
    Graph& g = *x.graph;
    const detail::ConvDims d = detail::conv_dims(x.shape(), weight.shape(), stride);
    if (bias.shape() != Shape{d.co}) throw std::invalid_argument("conv2d: bias shape mismatch");
    const int idx = x.id, idw = weight.id, idb = bias.id;
    bool rg = g.node(idx).requires_grad || g.node(idw).requires_grad || g.node(idb).requires_grad;
    return g.make_node(
        Shape{d.n, d.co, d.ho, d.wo}, rg,
        [idx, idw, idb, d](Graph& g, int self) {
            const Buffer& vx = g.val(idx);
            const Buffer& vw = g.val(idw);
            const Buffer& vb = g.val(idb);
            Buffer& out = g.val(self);
            const int hw = d.ho * d.wo;
            const int ck2 = d.ci * d.k * d.k;
            double* col = detail::scratch_data(0, size_t(ck2) * hw);
            Eigen::Map<const RowMat> W(vw.data(), d.co, ck2);
            for (int n = 0; n < d.n; ++n) {
                detail::im2col(vx.data() + size_t(n) * d.ci * d.h * d.w, d, col);
                Eigen::Map<const RowMat> C(col, ck2, hw);
                Eigen::Map<RowMat> O(out.data() + size_t(n) * d.co * hw, d.co, hw);
                O.noalias() = W * C;
                for (int co = 0; co < d.co; ++co) O.row(co).array() += vb[co];
            }
        },
        [idx, idw, idb, d](Graph& g, int self) {
            const Buffer& go = g.node(self).grad;
            const Buffer& vx = g.val(idx);
            const Buffer& vw = g.val(idw);
            Buffer* gx = g.grad_sink(idx);
            Buffer* gw = g.grad_sink(idw);
            Buffer* gb = g.grad_sink(idb);
            const int hw = d.ho * d.wo;
            const int ck2 = d.ci * d.k * d.k;
            double* col = (gw || gx) ? detail::scratch_data(0, size_t(ck2) * hw) : nullptr;
            double* dcol = gx ? detail::scratch_data(1, size_t(ck2) * hw) : nullptr;
            Eigen::Map<const RowMat> W(vw.data(), d.co, ck2);
            for (int n = 0; n < d.n; ++n) {
                Eigen::Map<const RowMat> GO(go.data() + size_t(n) * d.co * hw, d.co, hw);
                if (gb) {
                    // plain loop: Eigen's vectorized redux groups terms by
                    // buffer alignment, which breaks run-to-run determinism
                    for (int co = 0; co < d.co; ++co) {
                        const double* row = go.data() + (size_t(n) * d.co + co) * hw;
                        double acc = 0.0;
                        for (int i = 0; i < hw; ++i) acc += row[i];
                        (*gb)[co] += acc;
                    }
                }
                if (gw || gx)
                    detail::im2col(vx.data() + size_t(n) * d.ci * d.h * d.w, d, col);
                if (gw) {
                    Eigen::Map<const RowMat> C(col, ck2, hw);
                    Eigen::Map<RowMat> GW(gw->data(), d.co, ck2);
                    GW.noalias() += GO * C.transpose();
                }
                if (gx) {
                    Eigen::Map<RowMat> DC(dcol, ck2, hw);
                    DC.noalias() = W.transpose() * GO;
                    detail::col2im_add(dcol, d, gx->data() + size_t(n) * d.ci * d.h * d.w);
                }
            }
        });
}

// Each pixel replicated into a 2x2 block; backward sums the block grads.
inline Tensor nearest_upsample2(Tensor x) {
    Graph& g = *x.graph;
    const Shape& s = x.shape();
    if (s.size() != 4) throw std::invalid_argument("nearest_upsample2: expects NCHW");
    const int n = s[0], c = s[1], h = s[2], w = s[3];
    const int idx = x.id;
    return g.make_node(
        Shape{n, c, 2 * h, 2 * w}, g.node(idx).requires_grad,
        [idx, n, c, h, w](Graph& g, int self) {
            const Buffer& vx = g.val(idx);
            Buffer& out = g.val(self);
            for (int p = 0; p < n * c; ++p) {
                const double* src = vx.data() + size_t(p) * h * w;
                double* dst = out.data() + size_t(p) * 4 * h * w;
                for (int r = 0; r < h; ++r)
                    for (int cc = 0; cc < w; ++cc) {
                        const double v = src[r * w + cc];
                        double* q = dst + size_t(2 * r) * 2 * w + 2 * cc;
                        q[0] = v; q[1] = v;
                        q[2 * w] = v; q[2 * w + 1] = v;
                    }
            }
        },
        [idx, n, c, h, w](Graph& g, int self) {
            const Buffer& go = g.node(self).grad;
            Buffer* gx = g.grad_sink(idx);
            if (!gx) return;
            for (int p = 0; p < n * c; ++p) {
                double* dst = gx->data() + size_t(p) * h * w;
                const double* src = go.data() + size_t(p) * 4 * h * w;
                for (int r = 0; r < h; ++r)
                    for (int cc = 0; cc < w; ++cc) {
                        const double* q = src + size_t(2 * r) * 2 * w + 2 * cc;
                        dst[r * w + cc] += q[0] + q[1] + q[2 * w] + q[2 * w + 1];
                    }
            }
        });
}

// 2x2 average pooling; spatial dims must be even.
inline Tensor avg_downsample2(Tensor x) {
    Graph& g = *x.graph;
    const Shape& s = x.shape();
    if (s.size() != 4) throw std::invalid_argument("avg_downsample2: expects NCHW");
    const int n = s[0], c = s[1], h = s[2], w = s[3];
    if (h % 2 || w % 2) throw std::invalid_argument("avg_downsample2: odd spatial size");
    const int idx = x.id;
    return g.make_node(
        Shape{n, c, h / 2, w / 2}, g.node(idx).requires_grad,
        [idx, n, c, h, w](Graph& g, int self) {
            const Buffer& vx = g.val(idx);
            Buffer& out = g.val(self);
            const int oh = h / 2, ow = w / 2;
            for (int p = 0; p < n * c; ++p) {
                const double* src = vx.data() + size_t(p) * h * w;
                double* dst = out.data() + size_t(p) * oh * ow;
                for (int r = 0; r < oh; ++r)
                    for (int cc = 0; cc < ow; ++cc) {
                        const double* q = src + size_t(2 * r) * w + 2 * cc;
                        dst[r * ow + cc] = 0.25 * (q[0] + q[1] + q[w] + q[w + 1]);
                    }
            }
        },
        [idx, n, c, h, w](Graph& g, int self) {
            const Buffer& go = g.node(self).grad;
            Buffer* gx = g.grad_sink(idx);
            if (!gx) return;
            const int oh = h / 2, ow = w / 2;
            for (int p = 0; p < n * c; ++p) {
                double* dst = gx->data() + size_t(p) * h * w;
                const double* src = go.data() + size_t(p) * oh * ow;
                for (int r = 0; r < oh; ++r)
                    for (int cc = 0; cc < ow; ++cc) {
                        const double v = 0.25 * src[r * ow + cc];
                        double* q = dst + size_t(2 * r) * w + 2 * cc;
                        q[0] += v; q[1] += v;
                        q[w] += v; q[w + 1] += v;
                    }
            }
        });
}

namespace detail {

inline void correlate3_plane(const double* src, int h, int w,
                             const std::array<double, 9>& k, double* dst, bool accumulate) {
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int dr = 0; dr < 3; ++dr) {
                const int rr = r + dr - 1;
                if (rr < 0 || rr >= h) continue;
                for (int dc = 0; dc < 3; ++dc) {
                    const int cc = c + dc - 1;
                    if (cc < 0 || cc >= w) continue;
                    acc += k[dr * 3 + dc] * src[rr * w + cc];
                }
            }
            if (accumulate) dst[r * w + c] += acc;
            else dst[r * w + c] = acc;
        }
}

inline Tensor fixed_correlate3(Tensor x, const std::array<double, 9>& kernel) {
    Graph& g = *x.graph;
    const Shape& s = x.shape();
    if (s.size() != 4 || s[2] < 3 || s[3] < 3)
        throw std::invalid_argument("fixed_correlate3: expects NCHW with spatial dims >= 3");
    const int planes = s[0] * s[1], h = s[2], w = s[3];
    const int idx = x.id;
    std::array<double, 9> flipped;
    for (int i = 0; i < 9; ++i) flipped[i] = kernel[8 - i];
    return g.make_node(
        s, g.node(idx).requires_grad,
        [idx, planes, h, w, kernel](Graph& g, int self) {
            const Buffer& vx = g.val(idx);
            Buffer& out = g.val(self);
            for (int p = 0; p < planes; ++p)
                correlate3_plane(vx.data() + size_t(p) * h * w, h, w, kernel,
                                 out.data() + size_t(p) * h * w, false);
        },
        [idx, planes, h, w, flipped](Graph& g, int self) {
            const Buffer& go = g.node(self).grad;
            Buffer* gx = g.grad_sink(idx);
            if (!gx) return;
            for (int p = 0; p < planes; ++p)
                correlate3_plane(go.data() + size_t(p) * h * w, h, w, flipped,
                                 gx->data() + size_t(p) * h * w, true);
        });
}

} // namespace detail

// Unnormalized Sobel responses with zero padding; returns (grad_h, grad_w).
inline std::pair<Tensor, Tensor> sobel_gradients(Tensor x) {
    static constexpr std::array<double, 9> kh{-1, -2, -1, 0, 0, 0, 1, 2, 1};
    static constexpr std::array<double, 9> kw{-1, 0, 1, -2, 0, 2, -1, 0, 1};
    return {detail::fixed_correlate3(x, kh), detail::fixed_correlate3(x, kw)};
}

namespace detail {

// axis 0: rows (h direction), axis 1: columns (w direction).
inline Tensor forward_diff(Tensor x, int axis) {
    Graph& g = *x.graph;
    const Shape& s = x.shape();
    if (s.size() != 4) throw std::invalid_argument("forward_diff: expects NCHW");
    const int planes = s[0] * s[1], h = s[2], w = s[3];
    const int idx = x.id;
    return g.make_node(
        s, g.node(idx).requires_grad,
        [idx, planes, h, w, axis](Graph& g, int self) {
            const Buffer& vx = g.val(idx);
            Buffer& out = g.val(self);
            for (int p = 0; p < planes; ++p) {
                const double* src = vx.data() + size_t(p) * h * w;
                double* dst = out.data() + size_t(p) * h * w;
                for (int r = 0; r < h; ++r)
                    for (int c = 0; c < w; ++c) {
                        if (axis == 0)
                            dst[r * w + c] = r + 1 < h ? src[(r + 1) * w + c] - src[r * w + c] : 0.0;
                        else
                            dst[r * w + c] = c + 1 < w ? src[r * w + c + 1] - src[r * w + c] : 0.0;
                    }
            }
        },
        [idx, planes, h, w, axis](Graph& g, int self) {
            const Buffer& go = g.node(self).grad;
            Buffer* gx = g.grad_sink(idx);
            if (!gx) return;
            for (int p = 0; p < planes; ++p) {
                const double* src = go.data() + size_t(p) * h * w;
                double* dst = gx->data() + size_t(p) * h * w;
                for (int r = 0; r < h; ++r)
                    for (int c = 0; c < w; ++c) {
                        const double v = src[r * w + c];
                        if (axis == 0 && r + 1 < h) {
                            dst[(r + 1) * w + c] += v;
                            dst[r * w + c] -= v;
                        } else if (axis == 1 && c + 1 < w) {
                            dst[r * w + c + 1] += v;
                            dst[r * w + c] -= v;
                        }
                    }
            }
        });
}

} // namespace detail

// First-order forward differences; last row/column outputs are zero.
inline std::pair<Tensor, Tensor> diff_gradients(Tensor x) {
    return {detail::forward_diff(x, 0), detail::forward_diff(x, 1)};
}

inline Tensor concat_channels(Tensor a, Tensor b) {
    detail::check_same_graph(a, b);
    Graph& g = *a.graph;
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
        throw std::invalid_argument("concat_channels: spatial or batch mismatch");
    const int n = sa[0], ca = sa[1], cb = sb[1], hw = sa[2] * sa[3];
    const int ida = a.id, idb = b.id;
    bool rg = g.node(ida).requires_grad || g.node(idb).requires_grad;
    return g.make_node(
        Shape{n, ca + cb, sa[2], sa[3]}, rg,
        [ida, idb, n, ca, cb, hw](Graph& g, int self) {
            const Buffer& va = g.val(ida);
            const Buffer& vb = g.val(idb);
            Buffer& out = g.val(self);
            for (int i = 0; i < n; ++i) {
                std::memcpy(out.data() + size_t(i) * (ca + cb) * hw,
                            va.data() + size_t(i) * ca * hw, sizeof(double) * ca * hw);
                std::memcpy(out.data() + size_t(i) * (ca + cb) * hw + size_t(ca) * hw,
                            vb.data() + size_t(i) * cb * hw, sizeof(double) * cb * hw);
            }
        },
        [ida, idb, n, ca, cb, hw](Graph& g, int self) {
            const Buffer& go = g.node(self).grad;
            if (Buffer* ga = g.grad_sink(ida))
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < ca * hw; ++j)
                        (*ga)[size_t(i) * ca * hw + j] += go[size_t(i) * (ca + cb) * hw + j];
            if (Buffer* gb = g.grad_sink(idb))
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < cb * hw; ++j)
                        (*gb)[size_t(i) * cb * hw + j] += go[size_t(i) * (ca + cb) * hw + size_t(ca) * hw + j];
        });
}

// Running statistics for a batch-norm layer; owned by the block, updated
// once per training-mode forward (not on graph replay).
struct BatchNormState {
    Buffer running_mean;
    Buffer running_var;
    double momentum = 0.1;

    explicit BatchNormState(int channels = 0)
        : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// Per-channel batch normalization over (N, H, W). Training mode uses batch
// statistics and requires N >= 2; inference mode is a pure affine map from
// the running statistics.
inline Tensor batch_norm(Tensor x, Tensor gamma, Tensor beta, bool training,
                         BatchNormState& state, double eps = 1e-5) {
    detail::check_same_graph(x, gamma);
    detail::check_same_graph(x, beta);
    Graph& g = *x.graph;
    const Shape& s = x.shape();
    if (s.size() != 4) throw std::invalid_argument("batch_norm: expects NCHW");
    const int n = s[0], c = s[1], h = s[2], w = s[3];
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
        throw std::invalid_argument("batch_norm: parameter shape mismatch");
    if (training && n < 2)
        throw std::invalid_argument("batch_norm: training mode requires batch size >= 2");
    if (int(state.running_mean.size()) != c)
        throw std::invalid_argument("batch_norm: state channel mismatch");

    const int idx = x.id, idg = gamma.id, idb = beta.id;
    // Inference statistics are frozen into the node at creation time.
    auto frozen_mean = std::make_shared<Buffer>(state.running_mean);
    auto frozen_var = std::make_shared<Buffer>(state.running_var);
    bool rg = g.node(idx).requires_grad || g.node(idg).requires_grad || g.node(idb).requires_grad;

    Tensor out = g.make_node(
        s, rg,
        [idx, idg, idb, n, c, h, w, training, eps, frozen_mean, frozen_var](Graph& g, int self) {
            const Buffer& vx = g.val(idx);
            const Buffer& vg = g.val(idg);
            const Buffer& vb = g.val(idb);
            Buffer& outv = g.val(self);
            const size_t plane = size_t(h) * w;
            const double m = double(n) * plane;
            for (int ch = 0; ch < c; ++ch) {
                double mean, var;
                if (training) {
                    double acc = 0.0;
                    for (int i = 0; i < n; ++i) {
                        const double* src = vx.data() + (size_t(i) * c + ch) * plane;
                        for (size_t j = 0; j < plane; ++j) acc += src[j];
                    }
                    mean = acc / m;
                    double acc2 = 0.0;
                    for (int i = 0; i < n; ++i) {
                        const double* src = vx.data() + (size_t(i) * c + ch) * plane;
                        for (size_t j = 0; j < plane; ++j) {
                            const double d = src[j] - mean;
                            acc2 += d * d;
                        }
                    }
                    var = acc2 / m;
                } else {
                    mean = (*frozen_mean)[ch];
                    var = (*frozen_var)[ch];
                }
                const double inv_sigma = 1.0 / std::sqrt(var + eps);
                for (int i = 0; i < n; ++i) {
                    const double* src = vx.data() + (size_t(i) * c + ch) * plane;
                    double* dst = outv.data() + (size_t(i) * c + ch) * plane;
                    for (size_t j = 0; j < plane; ++j)
                        dst[j] = (src[j] - mean) * inv_sigma * vg[ch] + vb[ch];
                }
            }
        },
        [idx, idg, idb, n, c, h, w, training, eps, frozen_mean, frozen_var](Graph& g, int self) {
            const Buffer& go = g.node(self).grad;
            const Buffer& vx = g.val(idx);
            const Buffer& vg = g.val(idg);
            Buffer* gx = g.grad_sink(idx);
            Buffer* gg = g.grad_sink(idg);
            Buffer* gb = g.grad_sink(idb);
            const size_t plane = size_t(h) * w;
            const double m = double(n) * plane;
            for (int ch = 0; ch < c; ++ch) {
                double mean, var;
                if (training) {
                    double acc = 0.0;
                    for (int i = 0; i < n; ++i) {
                        const double* src = vx.data() + (size_t(i) * c + ch) * plane;
                        for (size_t j = 0; j < plane; ++j) acc += src[j];
                    }
                    mean = acc / m;
                    double acc2 = 0.0;
                    for (int i = 0; i < n; ++i) {
                        const double* src = vx.data() + (size_t(i) * c + ch) * plane;
                        for (size_t j = 0; j < plane; ++j) {
                            const double d = src[j] - mean;
                            acc2 += d * d;
                        }
                    }
                    var = acc2 / m;
                } else {
                    mean = (*frozen_mean)[ch];
                    var = (*frozen_var)[ch];
                }
                const double inv_sigma = 1.0 / std::sqrt(var + eps);
                double sum_go = 0.0, sum_go_xhat = 0.0;
                for (int i = 0; i < n; ++i) {
                    const double* src = vx.data() + (size_t(i) * c + ch) * plane;
                    const double* gsrc = go.data() + (size_t(i) * c + ch) * plane;
                    for (size_t j = 0; j < plane; ++j) {
                        sum_go += gsrc[j];
                        sum_go_xhat += gsrc[j] * (src[j] - mean) * inv_sigma;
                    }
                }
                if (gg) (*gg)[ch] += sum_go_xhat;
                if (gb) (*gb)[ch] += sum_go;
                if (gx) {
                    for (int i = 0; i < n; ++i) {
                        const double* src = vx.data() + (size_t(i) * c + ch) * plane;
                        const double* gsrc = go.data() + (size_t(i) * c + ch) * plane;
                        double* dst = gx->data() + (size_t(i) * c + ch) * plane;
                        for (size_t j = 0; j < plane; ++j) {
                            const double xhat = (src[j] - mean) * inv_sigma;
                            if (training)
                                dst[j] += vg[ch] * inv_sigma *
                                          (gsrc[j] - sum_go / m - xhat * sum_go_xhat / m);
                            else
                                dst[j] += vg[ch] * inv_sigma * gsrc[j];
                        }
                    }
                }
            }
        });

    if (training) {
        // One-time running-statistics update, outside the replayable closure.
        const Buffer& vx = g.val(idx);
        const size_t plane = size_t(h) * w;
        const double m = double(n) * plane;
        for (int ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                const double* src = vx.data() + (size_t(i) * c + ch) * plane;
                for (size_t j = 0; j < plane; ++j) acc += src[j];
            }
            const double mean = acc / m;
            double acc2 = 0.0;
            for (int i = 0; i < n; ++i) {
                const double* src = vx.data() + (size_t(i) * c + ch) * plane;
                for (size_t j = 0; j < plane; ++j) {
                    const double d = src[j] - mean;
                    acc2 += d * d;
                }
            }
            const double var = acc2 / m;
            state.running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mean;
            state.running_var[ch] = (1.0 - state.momentum) * state.running_var[ch] + state.momentum * var;
        }
    }
    return out;
}

} // namespace rgbx

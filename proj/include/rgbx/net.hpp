#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rgbx/errors.hpp"
#include "rgbx/field.hpp"
#include "rgbx/graph.hpp"
#include "rgbx/nnops.hpp"
#include "rgbx/rng.hpp"

namespace rgbx {

enum class BlockKind { ReZero, BatchNorm };

struct NetConfig {
    int levels = 4;
    int base_channels = 16;
    int blocks_per_level = 2;
    BlockKind block_kind = BlockKind::ReZero;
    int in_channels = 5;
    int out_channels = 1;

    int divisor() const { return 1 << levels; }

    static NetConfig desk() { return {}; }
    // Same topology at base width 32; lands near 20M parameters.
    static NetConfig large() {
        NetConfig c;
        c.base_channels = 32;
        return c;
    }
};

struct ParamDesc {
    std::string name;
    Shape shape;
    std::shared_ptr<Buffer> data;
};

namespace detail {

struct ConvParam {
    std::shared_ptr<Buffer> w;
    std::shared_ptr<Buffer> b;
    int in_ch = 0, out_ch = 0, stride = 1;
};

inline ConvParam make_conv_param(const std::string& name, int in_ch, int out_ch, int stride,
                                 std::vector<ParamDesc>& registry) {
    ConvParam c;
    c.in_ch = in_ch;
    c.out_ch = out_ch;
    c.stride = stride;
    c.w = std::make_shared<Buffer>(size_t(out_ch) * in_ch * 9, 0.0);
    c.b = std::make_shared<Buffer>(size_t(out_ch), 0.0);
    registry.push_back({name + ".w", Shape{out_ch, in_ch, 3, 3}, c.w});
    registry.push_back({name + ".b", Shape{out_ch}, c.b});
    return c;
}

inline Tensor apply_conv(Graph& g, const ConvParam& c, Tensor x) {
    Tensor w = g.leaf_shared(Shape{c.out_ch, c.in_ch, 3, 3}, c.w);
    Tensor b = g.leaf_shared(Shape{c.out_ch}, c.b);
    return conv2d(x, w, b, c.stride);
}

} // namespace detail

// Pre-activation residual block of two 3x3 convolutions. The ReZero kind
// scales the residual branch by a learnable scalar initialized to 0, so the
// block is the bitwise identity at initialization; the batch-norm kind puts
// per-channel normalization inside the branch and has no scale.
class ResidualBlock {
public:
    ResidualBlock(BlockKind kind, int width, const std::string& name,
                  std::vector<ParamDesc>& registry)
        : kind_(kind), width_(width) {
        c1_ = detail::make_conv_param(name + ".c1", width, width, 1, registry);
        c2_ = detail::make_conv_param(name + ".c2", width, width, 1, registry);
        if (kind == BlockKind::ReZero) {
            alpha_ = std::make_shared<Buffer>(1, 0.0);
            registry.push_back({name + ".alpha", Shape{1}, alpha_});
        } else {
            g1_ = std::make_shared<Buffer>(size_t(width), 1.0);
            e1_ = std::make_shared<Buffer>(size_t(width), 0.0);
            g2_ = std::make_shared<Buffer>(size_t(width), 1.0);
            e2_ = std::make_shared<Buffer>(size_t(width), 0.0);
            registry.push_back({name + ".gamma1", Shape{width}, g1_});
            registry.push_back({name + ".eta1", Shape{width}, e1_});
            registry.push_back({name + ".gamma2", Shape{width}, g2_});
            registry.push_back({name + ".eta2", Shape{width}, e2_});
            bn1_ = BatchNormState(width);
            bn2_ = BatchNormState(width);
        }
    }

    Tensor forward(Graph& g, Tensor x, bool training = false) {
        if (x.shape().size() != 4 || x.shape()[1] != width_)
            throw std::invalid_argument("block: channel mismatch");
        if (kind_ == BlockKind::ReZero) {
            Tensor t = detail::apply_conv(g, c1_, relu(x));
            t = detail::apply_conv(g, c2_, relu(t));
            return add(x, mul(t, g.leaf_shared(Shape{1}, alpha_)));
        }
        Tensor t = batch_norm(x, g.leaf_shared(Shape{width_}, g1_),
                              g.leaf_shared(Shape{width_}, e1_), training, bn1_);
        t = detail::apply_conv(g, c1_, relu(t));
        t = batch_norm(t, g.leaf_shared(Shape{width_}, g2_),
                       g.leaf_shared(Shape{width_}, e2_), training, bn2_);
        t = detail::apply_conv(g, c2_, relu(t));
        return add(x, t);
    }

    BlockKind kind() const { return kind_; }
    int width() const { return width_; }
    Buffer& alpha() { return *alpha_; }
    Buffer& conv2_bias() { return *c2_.b; }

    void reset_statistics() {
        if (kind_ == BlockKind::BatchNorm) {
            bn1_ = BatchNormState(width_);
            bn2_ = BatchNormState(width_);
        }
    }

    void collect_bn_buffers(std::vector<Buffer*>& out) {
        if (kind_ != BlockKind::BatchNorm) return;
        out.push_back(&bn1_.running_mean);
        out.push_back(&bn1_.running_var);
        out.push_back(&bn2_.running_mean);
        out.push_back(&bn2_.running_var);
    }

private:
    BlockKind kind_;
    int width_;
    detail::ConvParam c1_, c2_;
    std::shared_ptr<Buffer> alpha_;
    std::shared_ptr<Buffer> g1_, e1_, g2_, e2_;
    BatchNormState bn1_, bn2_;
};

// U-Net over a 5-channel RGB+X input: stem conv, `levels` encoder stages of
// residual blocks each followed by a stride-2 conv that doubles the width,
// mirrored by a decoder of nearest upsampling, skip concatenation, a
// channel-reducing conv and blocks, then a linear 1-channel head.
class UNet {
public:
    explicit UNet(NetConfig cfg = {}) : cfg_(cfg) {
        int w = cfg.base_channels;
        stem_ = detail::make_conv_param("stem", cfg.in_channels, w, 1, params_);
        for (int l = 0; l < cfg.levels; ++l) {
            enc_.emplace_back();
            for (int k = 0; k < cfg.blocks_per_level; ++k)
                enc_.back().emplace_back(cfg.block_kind, w,
                                         "enc" + std::to_string(l) + ".b" + std::to_string(k), params_);
            down_.push_back(detail::make_conv_param("down" + std::to_string(l), w, 2 * w, 2, params_));
            w *= 2;
        }
        for (int k = 0; k < cfg.blocks_per_level; ++k)
            bottom_.emplace_back(cfg.block_kind, w, "bottom.b" + std::to_string(k), params_);
        for (int l = cfg.levels - 1; l >= 0; --l) {
            const int skip_w = cfg.base_channels << l;
            reduce_.push_back(
                detail::make_conv_param("reduce" + std::to_string(l), w + skip_w, skip_w, 1, params_));
            dec_.emplace_back();
            for (int k = 0; k < cfg.blocks_per_level; ++k)
                dec_.back().emplace_back(cfg.block_kind, skip_w,
                                         "dec" + std::to_string(l) + ".b" + std::to_string(k), params_);
            w = skip_w;
        }
        head_ = detail::make_conv_param("head", w, cfg.out_channels, 1, params_);
    }

    const NetConfig& config() const { return cfg_; }
    const std::vector<ParamDesc>& params() const { return params_; }

    size_t parameter_count() const {
        size_t n = 0;
        for (const auto& p : params_) n += shape_numel(p.shape);
        return n;
    }

    // He-normal conv weights (std = sqrt(2 / fan_in)), zero biases, all
    // ReZero scales 0, BN gamma 1 / eta 0, running statistics reset.
    void init_weights(uint64_t seed) {
        Rng rng(seed);
        for (auto& p : params_) {
            Buffer& buf = *p.data;
            if (p.shape.size() == 4) {
                const double std = std::sqrt(2.0 / double(p.shape[1] * p.shape[2] * p.shape[3]));
                for (double& v : buf) v = rng.normal(0.0, std);
            } else if (p.name.ends_with("gamma1") || p.name.ends_with("gamma2")) {
                for (double& v : buf) v = 1.0;
            } else {
                for (double& v : buf) v = 0.0; // biases, alphas, etas
            }
        }
        for_each_block([](ResidualBlock& b) { b.reset_statistics(); });
    }

    Tensor forward(Graph& g, Tensor in, bool training = false) {
        const Shape& s = in.shape();
        if (s.size() != 4 || s[1] != cfg_.in_channels)
            throw std::invalid_argument("unet: expects NCHW input with " +
                                        std::to_string(cfg_.in_channels) + " channels");
        if (s[2] % cfg_.divisor() || s[3] % cfg_.divisor())
            throw std::invalid_argument("unet: spatial dims must be divisible by " +
                                        std::to_string(cfg_.divisor()));
        Tensor cur = relu(detail::apply_conv(g, stem_, in));
        std::vector<Tensor> skips;
        for (int l = 0; l < cfg_.levels; ++l) {
            for (auto& b : enc_[size_t(l)]) cur = b.forward(g, cur, training);
            skips.push_back(cur);
            cur = detail::apply_conv(g, down_[size_t(l)], cur);
        }
        for (auto& b : bottom_) cur = b.forward(g, cur, training);
        for (int i = 0; i < cfg_.levels; ++i) {
            cur = nearest_upsample2(cur);
            cur = concat_channels(cur, skips[size_t(cfg_.levels - 1 - i)]);
            cur = detail::apply_conv(g, reduce_[size_t(i)], cur);
            for (auto& b : dec_[size_t(i)]) cur = b.forward(g, cur, training);
        }
        return detail::apply_conv(g, head_, relu(cur));
    }

    // Single-sample inference with frozen statistics; returns H*W values.
    Buffer infer(const RgbField& rgb, const DepthField& x) {
        Graph g;
        Tensor out = forward(g, assemble_input(g, rgb, x), false);
        return out.value();
    }

    // 5-channel input: RGB, X values with invalid pixels as 0, X validity.
    static Tensor assemble_input(Graph& g, const RgbField& rgb, const DepthField& x) {
        if (rgb.height != x.height || rgb.width != x.width)
            throw std::invalid_argument("assemble_input: rgb/x misaligned");
        const size_t plane = size_t(rgb.height) * rgb.width;
        Buffer data(5 * plane);
        std::memcpy(data.data(), rgb.data.data(), sizeof(double) * 3 * plane);
        for (size_t i = 0; i < plane; ++i) {
            data[3 * plane + i] = x.valid[i] ? x.values[i] : 0.0;
            data[4 * plane + i] = x.valid[i] ? 1.0 : 0.0;
        }
        return g.leaf(Shape{1, 5, rgb.height, rgb.width}, std::move(data), false);
    }

    // BN running statistics in declaration order (empty for ReZero nets).
    std::vector<Buffer*> bn_buffers() {
        std::vector<Buffer*> out;
        for_each_block([&](ResidualBlock& b) { b.collect_bn_buffers(out); });
        return out;
    }

    template <class Fn>
    void for_each_block(Fn fn) {
        for (auto& lvl : enc_)
            for (auto& b : lvl) fn(b);
        for (auto& b : bottom_) fn(b);
        for (auto& lvl : dec_)
            for (auto& b : lvl) fn(b);
    }

private:
    NetConfig cfg_;
    detail::ConvParam stem_, head_;
    std::vector<std::vector<ResidualBlock>> enc_;
    std::vector<detail::ConvParam> down_;
    std::vector<ResidualBlock> bottom_;
    std::vector<detail::ConvParam> reduce_;
    std::vector<std::vector<ResidualBlock>> dec_;
    std::vector<ParamDesc> params_;
};

// ---- Checkpoint file ----
//
// Versioned binary layout, all multi-byte values little-endian:
//   bytes 0-7   magic "RGBXCKPT"
//   u32         version (1)
//   u32 x 6     levels, base_channels, blocks_per_level, block_kind,
//               in_channels, out_channels
//   u64         total parameter doubles
//   f64 x N     parameters in declaration order
//   u64         total batch-norm statistics doubles (0 for ReZero)
//   f64 x M     running mean/var pairs in declaration order

namespace detail {

inline void put_u64(std::ostream& os, uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}
inline void put_u32(std::ostream& os, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = char((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}
inline void put_f64(std::ostream& os, double d) {
    uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(os, v);
}
inline uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
    return v;
}
inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(b[i]) << (8 * i);
    return v;
}
inline double get_f64(std::istream& is) {
    uint64_t v = get_u64(is);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

} // namespace detail

inline void save_checkpoint(UNet& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write("RGBXCKPT", 8);
    detail::put_u32(os, 1);
    const NetConfig& c = net.config();
    for (int v : {c.levels, c.base_channels, c.blocks_per_level,
                  int(c.block_kind), c.in_channels, c.out_channels})
        detail::put_u32(os, uint32_t(v));
    detail::put_u64(os, net.parameter_count());
    for (const auto& p : net.params())
        for (double v : *p.data) detail::put_f64(os, v);
    uint64_t bn_total = 0;
    for (Buffer* b : net.bn_buffers()) bn_total += b->size();
    detail::put_u64(os, bn_total);
    for (Buffer* b : net.bn_buffers())
        for (double v : *b) detail::put_f64(os, v);
    if (!os) throw IoError("checkpoint write failed: " + path);
}

inline UNet load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "RGBXCKPT", 8) != 0)
        throw IoError("bad checkpoint magic: " + path);
    if (detail::get_u32(is) != 1) throw IoError("unsupported checkpoint version: " + path);
    NetConfig c;
    c.levels = int(detail::get_u32(is));
    c.base_channels = int(detail::get_u32(is));
    c.blocks_per_level = int(detail::get_u32(is));
    c.block_kind = BlockKind(detail::get_u32(is));
    c.in_channels = int(detail::get_u32(is));
    c.out_channels = int(detail::get_u32(is));
    UNet net(c);
    const uint64_t total = detail::get_u64(is);
    if (total != net.parameter_count()) throw IoError("checkpoint parameter count mismatch");
    for (const auto& p : net.params())
        for (double& v : *p.data) v = detail::get_f64(is);
    const uint64_t bn_total = detail::get_u64(is);
    uint64_t bn_expect = 0;
    for (Buffer* b : net.bn_buffers()) bn_expect += b->size();
    if (bn_total != bn_expect) throw IoError("checkpoint statistics size mismatch");
    for (Buffer* b : net.bn_buffers())
        for (double& v : *b) v = detail::get_f64(is);
    if (!is) throw IoError("checkpoint truncated: " + path);
    return net;
}

} // namespace rgbx

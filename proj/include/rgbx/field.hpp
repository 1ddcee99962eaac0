#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace rgbx {

// H x W grid of non-negative depth values plus a 0/1 validity mask.
// Values at invalid pixels are stored as 0 and must never be read as depth.
struct DepthField {
    int height = 0;
    int width = 0;
    std::vector<double> values;   // row-major
    std::vector<uint8_t> valid;   // 0/1, same shape

    DepthField() = default;
    DepthField(int h, int w, double value = 0.0, uint8_t v = 1)
        : height(h), width(w), values(size_t(h) * w, value), valid(size_t(h) * w, v) {}

    size_t size() const { return values.size(); }
    double& at(int r, int c) { return values[size_t(r) * width + c]; }
    double at(int r, int c) const { return values[size_t(r) * width + c]; }
    uint8_t& valid_at(int r, int c) { return valid[size_t(r) * width + c]; }
    uint8_t valid_at(int r, int c) const { return valid[size_t(r) * width + c]; }

    size_t valid_count() const {
        size_t n = 0;
        for (uint8_t v : valid) n += v;
        return n;
    }
    double valid_fraction() const { return size() ? double(valid_count()) / double(size()) : 0.0; }

    void invalidate(int r, int c) {
        valid_at(r, c) = 0;
        at(r, c) = 0.0;
    }

    double max_valid() const {
        double m = 0.0;
        for (size_t i = 0; i < size(); ++i)
            if (valid[i]) m = std::max(m, values[i]);
        return m;
    }
};

// H x W x 3 color grid, planar channel-major storage, values in [0, 1].
struct RgbField {
    int height = 0;
    int width = 0;
    std::vector<double> data; // 3 * H * W, planar

    RgbField() = default;
    RgbField(int h, int w) : height(h), width(w), data(size_t(3) * h * w, 0.0) {}

    size_t plane() const { return size_t(height) * width; }
    double& at(int ch, int r, int c) { return data[ch * plane() + size_t(r) * width + c]; }
    double at(int ch, int r, int c) const { return data[ch * plane() + size_t(r) * width + c]; }
};

inline void hflip_inplace(DepthField& f) {
    for (int r = 0; r < f.height; ++r)
        for (int c = 0; c < f.width / 2; ++c) {
            std::swap(f.at(r, c), f.at(r, f.width - 1 - c));
            std::swap(f.valid_at(r, c), f.valid_at(r, f.width - 1 - c));
        }
}

inline void hflip_inplace(RgbField& f) {
    for (int ch = 0; ch < 3; ++ch)
        for (int r = 0; r < f.height; ++r)
            for (int c = 0; c < f.width / 2; ++c)
                std::swap(f.at(ch, r, c), f.at(ch, r, f.width - 1 - c));
}

// Nearest-neighbour resize for depth and masks; index mapping uses the
// pixel-center convention.
inline DepthField resize_nearest(const DepthField& in, int oh, int ow) {
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("resize_nearest: bad target size");
    DepthField out(oh, ow);
    for (int r = 0; r < oh; ++r) {
        int sr = std::min(in.height - 1, int((r + 0.5) * in.height / oh));
        for (int c = 0; c < ow; ++c) {
            int sc = std::min(in.width - 1, int((c + 0.5) * in.width / ow));
            out.at(r, c) = in.at(sr, sc);
            out.valid_at(r, c) = in.valid_at(sr, sc);
        }
    }
    for (size_t i = 0; i < out.size(); ++i)
        if (!out.valid[i]) out.values[i] = 0.0;
    return out;
}

inline RgbField resize_bilinear(const RgbField& in, int oh, int ow) {
    if (oh <= 0 || ow <= 0) throw std::invalid_argument("resize_bilinear: bad target size");
    RgbField out(oh, ow);
    for (int r = 0; r < oh; ++r) {
        double fy = (r + 0.5) * in.height / oh - 0.5;
        fy = std::clamp(fy, 0.0, double(in.height - 1));
        int y0 = int(fy);
        int y1 = std::min(y0 + 1, in.height - 1);
        double wy = fy - y0;
        for (int c = 0; c < ow; ++c) {
            double fx = (c + 0.5) * in.width / ow - 0.5;
            fx = std::clamp(fx, 0.0, double(in.width - 1));
            int x0 = int(fx);
            int x1 = std::min(x0 + 1, in.width - 1);
            double wx = fx - x0;
            for (int ch = 0; ch < 3; ++ch) {
                double top = in.at(ch, y0, x0) * (1 - wx) + in.at(ch, y0, x1) * wx;
                double bot = in.at(ch, y1, x0) * (1 - wx) + in.at(ch, y1, x1) * wx;
                out.at(ch, r, c) = top * (1 - wy) + bot * wy;
            }
        }
    }
    return out;
}

} // namespace rgbx

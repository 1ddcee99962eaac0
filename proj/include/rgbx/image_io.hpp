#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rgbx/errors.hpp"
#include "rgbx/field.hpp"

namespace rgbx {

// RGB as binary PPM (P6, 8-bit, [0,1] <-> 0..255), depth as grayscale PFM
// ("Pf", negative scale = little-endian, bottom-up rows, non-positive
// values meaning invalid), masks as binary PGM (P5, 0/255).

namespace detail {

// Reads one whitespace-separated header token, skipping '#' comments.
inline std::string pnm_token(std::istream& is) {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {}
            continue;
        }
        if (!std::isspace(c)) {
            tok.push_back(char(c));
            break;
        }
    }
    while ((c = is.get()) != EOF && !std::isspace(c)) tok.push_back(char(c));
    if (tok.empty()) throw IoError("truncated header");
    return tok;
}

inline int pnm_int(std::istream& is) {
    const std::string tok = pnm_token(is);
    try {
        return std::stoi(tok);
    } catch (...) {
        throw IoError("malformed header token: " + tok);
    }
}

} // namespace detail

inline void write_ppm(const std::string& path, const RgbField& rgb) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "P6\n" << rgb.width << " " << rgb.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(rgb.width) * 3);
    for (int r = 0; r < rgb.height; ++r) {
        for (int c = 0; c < rgb.width; ++c)
            for (int ch = 0; ch < 3; ++ch) {
                const double v = std::clamp(rgb.at(ch, r, c), 0.0, 1.0);
                row[size_t(c) * 3 + ch] = (unsigned char)std::lround(v * 255.0);
            }
        os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
    if (!os) throw IoError("write failed: " + path);
}

inline RgbField read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    if (detail::pnm_token(is) != "P6") throw IoError("not a binary PPM: " + path);
    const int w = detail::pnm_int(is);
    const int h = detail::pnm_int(is);
    const int maxval = detail::pnm_int(is);
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
        throw IoError("unsupported PPM header: " + path);
    RgbField rgb(h, w);
    std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
    for (int r = 0; r < h; ++r) {
        is.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size()));
        if (!is) throw IoError("truncated PPM payload: " + path);
        for (int c = 0; c < w; ++c)
            for (int ch = 0; ch < 3; ++ch)
                rgb.at(ch, r, c) = double(row[size_t(c) * 3 + ch]) / double(maxval);
    }
    return rgb;
}

inline void write_pfm(const std::string& path, const DepthField& depth) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "Pf\n" << depth.width << " " << depth.height << "\n-1.0\n";
    std::vector<float> row(static_cast<size_t>(depth.width));
    // PFM rasters run bottom-to-top.
    for (int r = depth.height - 1; r >= 0; --r) {
        for (int c = 0; c < depth.width; ++c)
            row[size_t(c)] = depth.valid_at(r, c) ? float(depth.at(r, c)) : -1.0f;
        os.write(reinterpret_cast<const char*>(row.data()),
                 std::streamsize(row.size() * sizeof(float)));
    }
    if (!os) throw IoError("write failed: " + path);
}

inline DepthField read_pfm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    const std::string kind = detail::pnm_token(is);
    if (kind != "Pf") throw IoError("not a grayscale PFM: " + path);
    const int w = detail::pnm_int(is);
    const int h = detail::pnm_int(is);
    double scale;
    try {
        scale = std::stod(detail::pnm_token(is));
    } catch (...) {
        throw IoError("malformed PFM scale: " + path);
    }
    if (w <= 0 || h <= 0 || scale == 0.0) throw IoError("unsupported PFM header: " + path);
    const bool little_endian = scale < 0.0;
    DepthField depth(h, w);
    std::vector<float> row(static_cast<size_t>(w));
    for (int r = h - 1; r >= 0; --r) {
        is.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size() * sizeof(float)));
        if (!is) throw IoError("truncated PFM payload: " + path);
        for (int c = 0; c < w; ++c) {
            float v = row[size_t(c)];
            if (!little_endian) {
                uint32_t bits;
                std::memcpy(&bits, &v, 4);
                bits = __builtin_bswap32(bits);
                std::memcpy(&v, &bits, 4);
            }
            if (v > 0.0f) {
                depth.at(r, c) = double(v);
                depth.valid_at(r, c) = 1;
            } else {
                depth.at(r, c) = 0.0;
                depth.valid_at(r, c) = 0;
            }
        }
    }
    return depth;
}

inline void write_pgm(const std::string& path, int height, int width,
                      const std::vector<uint8_t>& mask) {
    if (mask.size() != size_t(height) * width) throw std::invalid_argument("write_pgm: size mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "P5\n" << width << " " << height << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(width));
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) row[size_t(c)] = mask[size_t(r) * width + c] ? 255 : 0;
        os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
    if (!os) throw IoError("write failed: " + path);
}

struct PgmImage {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> mask; // 0/1
};

inline PgmImage read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    if (detail::pnm_token(is) != "P5") throw IoError("not a binary PGM: " + path);
    const int w = detail::pnm_int(is);
    const int h = detail::pnm_int(is);
    const int maxval = detail::pnm_int(is);
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
        throw IoError("unsupported PGM header: " + path);
    PgmImage img{h, w, std::vector<uint8_t>(size_t(h) * w)};
    std::vector<unsigned char> row(static_cast<size_t>(w));
    for (int r = 0; r < h; ++r) {
        is.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size()));
        if (!is) throw IoError("truncated PGM payload: " + path);
        for (int c = 0; c < w; ++c) img.mask[size_t(r) * w + c] = row[size_t(c)] >= 128 ? 1 : 0;
    }
    return img;
}

} // namespace rgbx

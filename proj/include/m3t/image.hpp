#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "m3t/tensor.hpp"

namespace m3t {

struct GrayImage {
    idx height = 0;
    idx width = 0;
    std::vector<std::uint8_t> pixels;  // row-major
};

// Binary PGM (P5, maxval 255). Header comments are skipped on read.
inline GrayImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image: " + path);
    auto next_token = [&]() -> std::string {
        std::string tok;
        char c;
        while (in.get(c)) {
            if (c == '#') {
                while (in.get(c) && c != '\n') {
                }
                continue;
            }
            if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
                if (!tok.empty()) return tok;
                continue;
            }
            tok.push_back(c);
        }
        return tok;
    };
    if (next_token() != "P5") throw DataError(path + ": not a P5 PGM");
    GrayImage img;
    try {
        img.width = std::stoll(next_token());
        img.height = std::stoll(next_token());
        const long long maxval = std::stoll(next_token());
        if (maxval != 255) throw DataError(path + ": unsupported PGM maxval");
    } catch (const std::invalid_argument&) {
        throw DataError(path + ": malformed PGM header");
    }
    if (img.width <= 0 || img.height <= 0) throw DataError(path + ": bad PGM dimensions");
    img.pixels.resize(static_cast<size_t>(img.width * img.height));
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
        throw DataError(path + ": truncated PGM payload");
    return img;
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write image: " + path);
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw DataError("failed writing image: " + path);
}

// Grayscale bytes -> [H, W, 3] float in [0, 1], channels replicated.
template <class S>
Tensor<S> gray_to_rgb_tensor(const GrayImage& img) {
    Tensor<S> t(Shape{img.height, img.width, 3});
    S* p = t.data();
    for (size_t i = 0; i < img.pixels.size(); ++i) {
        const S v = static_cast<S>(img.pixels[i]) / S(255);
        p[i * 3 + 0] = v;
        p[i * 3 + 1] = v;
        p[i * 3 + 2] = v;
    }
    return t;
}

// Bilinear resize of a [H, W, C] tensor; no aspect-ratio preservation.
template <class S>
Tensor<S> resize_bilinear(const Tensor<S>& src, idx out_h, idx out_w) {
    if (src.rank() != 3) throw ShapeError("resize_bilinear wants [H, W, C]");
    const idx H = src.extent(0), W = src.extent(1), C = src.extent(2);
    if (out_h <= 0 || out_w <= 0) throw ContractError("resize target must be positive");
    if (out_h == H && out_w == W) return src;
    Tensor<S> dst(Shape{out_h, out_w, C});
    const S* ps = src.data();
    S* pd = dst.data();
    const double sy = static_cast<double>(H) / static_cast<double>(out_h);
    const double sx = static_cast<double>(W) / static_cast<double>(out_w);
    for (idx y = 0; y < out_h; ++y) {
        const double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        idx y0 = static_cast<idx>(std::floor(fy));
        const double wy = fy - static_cast<double>(y0);
        idx y1 = y0 + 1;
        y0 = std::clamp<idx>(y0, 0, H - 1);
        y1 = std::clamp<idx>(y1, 0, H - 1);
        for (idx x = 0; x < out_w; ++x) {
            const double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            idx x0 = static_cast<idx>(std::floor(fx));
            const double wx = fx - static_cast<double>(x0);
            idx x1 = x0 + 1;
            x0 = std::clamp<idx>(x0, 0, W - 1);
            x1 = std::clamp<idx>(x1, 0, W - 1);
            for (idx c = 0; c < C; ++c) {
                const double v00 = ps[(y0 * W + x0) * C + c];
                const double v01 = ps[(y0 * W + x1) * C + c];
                const double v10 = ps[(y1 * W + x0) * C + c];
                const double v11 = ps[(y1 * W + x1) * C + c];
                const double top = v00 + (v01 - v00) * wx;
                const double bot = v10 + (v11 - v10) * wx;
                pd[(y * out_w + x) * C + c] = static_cast<S>(top + (bot - top) * wy);
            }
        }
    }
    return dst;
}

// Read a PGM, replicate to 3 channels, and resize to the model input.
template <class S>
Tensor<S> load_image_as_input(const std::string& path, idx size) {
    return resize_bilinear(gray_to_rgb_tensor<S>(read_pgm(path)), size, size);
}

}  // namespace m3t

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "m3t/image.hpp"
#include "m3t/tensor.hpp"

// M3TF feature file: magic "M3TF" | version u16 LE | rank u16 LE |
// extents u32 LE each | payload float32 LE row-major.

namespace m3t {

namespace detail {

inline void put_u16(std::string& buf, std::uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint16_t get_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline constexpr std::uint16_t kFeatureFileVersion = 1;

template <class S>
void save_features(const std::string& path, const Tensor<S>& t) {
    std::string buf;
    buf += "M3TF";
    detail::put_u16(buf, kFeatureFileVersion);
    detail::put_u16(buf, static_cast<std::uint16_t>(t.rank()));
    for (idx e : t.shape()) detail::put_u32(buf, static_cast<std::uint32_t>(e));
    for (idx i = 0; i < t.numel(); ++i) {
        const float v = static_cast<float>(t.data()[i]);
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        detail::put_u32(buf, bits);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write feature file: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("failed writing feature file: " + path);
}

template <class S>
Tensor<S> load_features(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open feature file: " + path);
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
    if (buf.size() < 8 || std::memcmp(buf.data(), "M3TF", 4) != 0)
        throw DataError(path + ": bad magic, not an M3TF feature file");
    const std::uint16_t version = detail::get_u16(buf.data() + 4);
    if (version != kFeatureFileVersion)
        throw DataError(strf("%s: unsupported version %u", path.c_str(), version));
    const std::uint16_t rank = detail::get_u16(buf.data() + 6);
    size_t at = 8;
    if (buf.size() < at + 4u * rank) throw DataError(path + ": truncated header");
    Shape shape;
    idx numel = 1;
    for (std::uint16_t i = 0; i < rank; ++i) {
        const std::uint32_t e = detail::get_u32(buf.data() + at);
        at += 4;
        if (e == 0) throw DataError(path + ": zero extent in header");
        shape.push_back(static_cast<idx>(e));
        numel *= static_cast<idx>(e);
    }
    const size_t want = at + 4u * static_cast<size_t>(numel);
    if (buf.size() < want)
        throw DataError(strf("%s: truncated payload (%zu bytes, header wants %zu)", path.c_str(),
                             buf.size(), want));
    if (buf.size() > want)
        throw DataError(strf("%s: payload length mismatch (%zu bytes, header wants %zu)",
                             path.c_str(), buf.size(), want));
    std::vector<S> values(static_cast<size_t>(numel));
    for (idx i = 0; i < numel; ++i) {
        const std::uint32_t bits = detail::get_u32(buf.data() + at);
        at += 4;
        float v;
        std::memcpy(&v, &bits, 4);
        values[static_cast<size_t>(i)] = static_cast<S>(v);
    }
    return Tensor<S>(std::move(shape), std::move(values));
}

// Gate heatmap: min-max normalized 8-bit PGM plus a sidecar text file
// ("<path>.txt") holding the header and raw values at full precision.
template <class S>
void export_gate_heatmap(const Tensor<S>& alpha, const std::string& path) {
    if (alpha.rank() != 2) throw ShapeError("heatmap wants a [H, W] gate map");
    const idx H = alpha.extent(0), W = alpha.extent(1);
    S lo = alpha.data()[0], hi = alpha.data()[0];
    for (idx i = 0; i < alpha.numel(); ++i) {
        lo = std::min(lo, alpha.data()[i]);
        hi = std::max(hi, alpha.data()[i]);
    }
    GrayImage img;
    img.height = H;
    img.width = W;
    img.pixels.resize(static_cast<size_t>(H * W), 0);
    const double range = static_cast<double>(hi - lo);
    if (range > 0) {
        for (idx i = 0; i < alpha.numel(); ++i) {
            const double norm = (static_cast<double>(alpha.data()[i]) - static_cast<double>(lo)) / range;
            img.pixels[static_cast<size_t>(i)] =
                static_cast<std::uint8_t>(norm * 255.0 + 0.5);
        }
    }
    write_pgm(path, img);
    std::ofstream txt(path + ".txt", std::ios::binary);
    if (!txt) throw DataError("cannot write heatmap sidecar: " + path + ".txt");
    txt << H << " " << W << "\n";
    for (idx y = 0; y < H; ++y) {
        for (idx x = 0; x < W; ++x) {
            if (x) txt << " ";
            txt << strf("%.17g", static_cast<double>(alpha.data()[y * W + x]));
        }
        txt << "\n";
    }
    if (!txt) throw DataError("failed writing heatmap sidecar: " + path + ".txt");
}

}  // namespace m3t

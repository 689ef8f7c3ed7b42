#pragma once

#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "m3t/config.hpp"
#include "m3t/model.hpp"
#include "m3t/optim.hpp"
#include "m3t/vocab.hpp"

// M3TC checkpoint: magic | u16 version | config text | vocabulary text |
// optimizer step | global step | RNG state text | length-prefixed named
// tensors as float32 LE (parameter values followed by Adam first/second
// moments). A plain-text manifest sits next to the binary.

namespace m3t {

namespace detail {

inline void put_str(std::string& buf, const std::string& s) {
    put_u32(buf, static_cast<std::uint32_t>(s.size()));
    buf += s;
}

inline void put_u64(std::string& buf, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::uint8_t* p;
    size_t size;
    size_t at = 0;
    std::string path;

    void need(size_t n, const char* what) const {
        if (at + n > size)
            throw DataError(strf("%s: truncated checkpoint while reading %s", path.c_str(), what));
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        const std::uint16_t v = get_u16(p + at);
        at += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        const std::uint32_t v = get_u32(p + at);
        at += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[at + static_cast<size_t>(i)]) << (8 * i);
        at += 8;
        return v;
    }
    std::string str(const char* what) {
        const std::uint32_t n = u32(what);
        need(n, what);
        std::string s(reinterpret_cast<const char*>(p + at), n);
        at += n;
        return s;
    }
    std::vector<float> floats(size_t n, const char* what) {
        need(4 * n, what);
        std::vector<float> out(n);
        std::memcpy(out.data(), p + at, 4 * n);
        at += 4 * n;
        return out;
    }
};

}  // namespace detail

inline constexpr std::uint16_t kCheckpointVersion = 1;

template <class S>
void save_checkpoint(const std::string& path, const M3TModel<S>& model, const AdamState<S>& adam,
                     idx global_step, const std::string& rng_state, const Vocabulary& vocab) {
    std::string buf;
    buf += "M3TC";
    detail::put_u16(buf, kCheckpointVersion);
    detail::put_str(buf, model.config().serialize());
    detail::put_str(buf, vocab.serialize());
    detail::put_u64(buf, static_cast<std::uint64_t>(adam.step));
    detail::put_u64(buf, static_cast<std::uint64_t>(global_step));
    detail::put_str(buf, rng_state);
    const auto& params = model.params();
    detail::put_u32(buf, static_cast<std::uint32_t>(params.size()));
    std::string manifest;
    for (size_t i = 0; i < params.items.size(); ++i) {
        const auto& [name, t] = params.items[i];
        detail::put_str(buf, name);
        detail::put_u16(buf, static_cast<std::uint16_t>(t.rank()));
        for (idx e : t.shape()) detail::put_u32(buf, static_cast<std::uint32_t>(e));
        auto dump = [&](const S* src, size_t n) {
            for (size_t j = 0; j < n; ++j) {
                const float v = static_cast<float>(src[j]);
                std::uint32_t bits;
                std::memcpy(&bits, &v, 4);
                detail::put_u32(buf, bits);
            }
        };
        dump(t.data(), static_cast<size_t>(t.numel()));
        dump(adam.m[i].data(), adam.m[i].size());
        dump(adam.v[i].data(), adam.v[i].size());
        manifest += name + " " + shape_str(t.shape()) + " " + std::to_string(t.numel()) + "\n";
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("failed writing checkpoint: " + path);
    std::ofstream mf(path + ".manifest.txt", std::ios::binary);
    mf << manifest;
}

template <class S>
struct LoadedCheckpoint {
    ModelConfig config;
    Vocabulary vocab;
    std::unique_ptr<M3TModel<S>> model;
    AdamState<S> adam;
    idx global_step = 0;
    std::string rng_state;
};

template <class S>
LoadedCheckpoint<S> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < 6 || std::memcmp(bytes.data(), "M3TC", 4) != 0)
        throw DataError(path + ": bad magic, not an M3TC checkpoint");
    detail::Reader r{bytes.data(), bytes.size(), 4, path};
    const std::uint16_t version = r.u16("version");
    if (version != kCheckpointVersion)
        throw DataError(strf("%s: unsupported checkpoint version %u", path.c_str(), version));

    LoadedCheckpoint<S> out;
    out.config = ModelConfig::deserialize(r.str("config"));
    out.vocab = Vocabulary::deserialize(r.str("vocabulary"));
    const idx adam_step = static_cast<idx>(r.u64("optimizer step"));
    out.global_step = static_cast<idx>(r.u64("global step"));
    out.rng_state = r.str("rng state");

    out.model = std::make_unique<M3TModel<S>>(out.config, out.vocab.size());
    out.adam = AdamState<S>(out.config.lr, out.config.adam_beta1, out.config.adam_beta2,
                            out.config.adam_eps);
    out.adam.init(out.model->params());
    out.adam.step = adam_step;

    const std::uint32_t n_tensors = r.u32("tensor count");
    auto& params = out.model->params();
    if (n_tensors != params.size())
        throw DataError(strf("%s: %u tensors but the configured model has %zu parameters",
                             path.c_str(), n_tensors, params.size()));
    for (size_t i = 0; i < params.items.size(); ++i) {
        auto& [name, t] = params.items[i];
        const std::string stored = r.str("tensor name");
        if (stored != name)
            throw DataError(strf("%s: tensor %zu is %s, expected %s", path.c_str(), i,
                                 stored.c_str(), name.c_str()));
        const std::uint16_t rank = r.u16("tensor rank");
        Shape shape;
        for (std::uint16_t d = 0; d < rank; ++d)
            shape.push_back(static_cast<idx>(r.u32("tensor extent")));
        if (shape != t.shape())
            throw DataError(strf("%s: tensor %s stored as %s, model wants %s", path.c_str(),
                                 name.c_str(), shape_str(shape).c_str(),
                                 shape_str(t.shape()).c_str()));
        const size_t n = static_cast<size_t>(t.numel());
        const auto values = r.floats(n, name.c_str());
        const auto m = r.floats(n, name.c_str());
        const auto v = r.floats(n, name.c_str());
        for (size_t j = 0; j < n; ++j) {
            t.data()[j] = static_cast<S>(values[j]);
            out.adam.m[i][j] = static_cast<S>(m[j]);
            out.adam.v[i][j] = static_cast<S>(v[j]);
        }
    }
    if (r.at != r.size) throw DataError(path + ": trailing bytes after checkpoint payload");
    return out;
}

}  // namespace m3t

#pragma once

#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace m3t {

using idx = std::int64_t;

// printf-style formatting into a std::string
inline std::string strf(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    va_list copy;
    va_copy(copy, args);
    int n = std::vsnprintf(nullptr, 0, fmt, copy);
    va_end(copy);
    std::string out(n > 0 ? static_cast<size_t>(n) : 0, '\0');
    if (n > 0) std::vsnprintf(out.data(), out.size() + 1, fmt, args);
    va_end(args);
    return out;
}

// Shape/dimension mismatch between tensors.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite math is required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API misuse: non-scalar loss, consumed tape, missing gradients, ...
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Out-of-range ids (vocabulary, embedding rows, class targets).
struct IndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed external input: corpus files, feature files, checkpoints, configs.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// SplitMix64 finalizer; used to derive per-call dropout seeds from
// (global seed, step, op index) so masks are reproducible.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
    return mix64(mix64(a) ^ mix64(b ^ 0x517cc1b727220a95ULL) ^ (c * 0x2545f4914f6cdd1dULL));
}

}  // namespace m3t

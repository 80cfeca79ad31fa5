#pragma once

#include <cstdint>
#include <span>

#include "simcore/rng.hpp"

namespace hybsim::harness {

// Position-keyed pseudo-random stream content. A sink can verify any byte
// knowing only the stream seed and the byte offset.
inline std::uint8_t pattern_byte(std::uint64_t seed, std::uint64_t pos) {
    return static_cast<std::uint8_t>(sim::mix64(seed ^ (pos >> 3)) >> ((pos & 7) * 8));
}

inline void fill_pattern(std::uint64_t seed, std::uint64_t pos, std::span<std::uint8_t> out) {
    std::size_t i = 0;
    while (i < out.size()) {
        const std::uint64_t p = pos + i;
        const std::uint64_t word = sim::mix64(seed ^ (p >> 3));
        for (std::uint64_t b = p & 7; b < 8 && i < out.size(); ++b, ++i) {
            out[i] = static_cast<std::uint8_t>(word >> (b * 8));
        }
    }
}

// Index of the first mismatching byte, or out.size() when all match.
inline std::size_t verify_pattern(std::uint64_t seed, std::uint64_t pos, std::span<const std::uint8_t> bytes) {
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        if (bytes[i] != pattern_byte(seed, pos + i)) return i;
    }
    return bytes.size();
}

} // namespace hybsim::harness

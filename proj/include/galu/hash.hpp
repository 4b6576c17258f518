#pragma once

#include <bit>
#include <cstdint>
#include <string_view>

namespace galu {

/// Incremental FNV-1a, fed little-endian so hashes agree across platforms.
struct Fnv1a {
    std::uint64_t state = 0xCBF29CE484222325ull;

    void byte(std::uint8_t b) {
        state ^= b;
        state *= 0x100000001B3ull;
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) byte(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void i32(std::int32_t v) { u64(static_cast<std::uint64_t>(static_cast<std::uint32_t>(v))); }
    void str(std::string_view s) {
        for (char c : s) byte(static_cast<std::uint8_t>(c));
    }
};

}  // namespace galu

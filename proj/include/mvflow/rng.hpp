#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace mvflow {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Stateless: the output is a
/// pure function of (counter, key), so any draw can be regenerated independently.
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter generate(Counter ctr, Key key) {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kWeyl0;
                key[1] += kWeyl1;
            }
            ctr = single_round(ctr, key);
        }
        return ctr;
    }

    static Key key_from_seed(std::uint64_t seed) {
        return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

    static Counter single_round(const Counter& c, const Key& k) {
        const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
};

/// Uniform in the open interval (0, 1) from 64 random bits.
inline double open_unit_interval(std::uint64_t bits) {
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal addressed by (seed, a, b, c, stream) through Box-Muller on one Philox block.
inline double counter_normal(std::uint64_t seed, std::uint32_t a, std::uint32_t b, std::uint32_t c,
                             std::uint32_t stream) {
    const auto out = Philox4x32::generate({a, b, c, stream}, Philox4x32::key_from_seed(seed));
    const std::uint64_t bits1 = (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
    const std::uint64_t bits2 = (static_cast<std::uint64_t>(out[2]) << 32) | out[3];
    const double u1 = open_unit_interval(bits1);
    const double u2 = open_unit_interval(bits2);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Standard uniform addressed like counter_normal (used for test-instance generation).
inline double counter_uniform(std::uint64_t seed, std::uint32_t a, std::uint32_t b, std::uint32_t c,
                              std::uint32_t stream) {
    const auto out = Philox4x32::generate({a, b, c, stream}, Philox4x32::key_from_seed(seed));
    return open_unit_interval((static_cast<std::uint64_t>(out[0]) << 32) | out[1]);
}

}  // namespace mvflow

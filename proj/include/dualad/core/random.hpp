#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace dualad {

using Rng = std::mt19937_64;

/// Derive an independent child seed from a master seed and a stream tag.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

// Distribution output of std::normal_distribution is implementation-defined,
// so golden files would not be portable across standard libraries. These
// helpers only use the raw engine output.

inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Box-Muller standard normal.
inline double standard_normal(Rng& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// Fisher-Yates using the raw engine (std::shuffle is implementation-defined).
template <typename Container>
void shuffle(Container& c, Rng& rng) {
    for (std::size_t i = c.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        using std::swap;
        swap(c[i - 1], c[j]);
    }
}

} // namespace dualad

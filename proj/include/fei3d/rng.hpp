#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

namespace fei3d {

/// xoshiro256** generator seeded through SplitMix64.
///
/// The stream is defined entirely by integer arithmetic on the 64-bit seed,
/// so a given seed yields the same sequence on every platform. No std::
/// distribution is used anywhere because their outputs are
/// implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept;

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() noexcept;

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01() noexcept;
    /// Uniform double in [lo, hi). Throws a domain error unless lo < hi.
    double uniform(double lo, double hi);
    /// Unbiased integer in [0, bound). bound must be non-zero.
    std::uint64_t below(std::uint64_t bound);
    /// Standard normal via Box-Muller; the spare value is cached.
    double normal() noexcept;

    /// Independent generator derived from this one's stream.
    Rng split() noexcept;

    /// Fisher-Yates shuffle driven by below().
    void shuffle(std::span<std::size_t> items);

    friend bool operator==(const Rng &, const Rng &) = default;

private:
    std::uint64_t seed_;
    std::array<std::uint64_t, 4> state_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace fei3d

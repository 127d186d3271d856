#include "fei3d/rng.hpp"

#include "fei3d/error.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>

namespace fei3d {

namespace {

std::uint64_t splitmix64(std::uint64_t &x) noexcept {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed) noexcept : seed_(seed) {
    std::uint64_t x = seed;
    for (auto &word : state_) {
        word = splitmix64(x);
    }
}

std::uint64_t Rng::next_u64() noexcept {
    const std::uint64_t result = std::rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = std::rotl(state_[3], 45);
    return result;
}

double Rng::uniform01() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) {
    if (!(lo < hi)) {
        throw Error(ErrorKind::domain, "uniform: need lo < hi, got [" + std::to_string(lo) + ", " +
                                           std::to_string(hi) + ")");
    }
    const double v = lo + (hi - lo) * uniform01();
    // rounding in lo + (hi - lo) * u can land exactly on hi
    return v < hi ? v : std::nextafter(hi, lo);
}

std::uint64_t Rng::below(std::uint64_t bound) {
    if (bound == 0) {
        throw Error(ErrorKind::domain, "below: bound must be non-zero");
    }
    // rejection on the top of the range keeps the result unbiased
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % bound);
    std::uint64_t draw = next_u64();
    while (draw >= limit) {
        draw = next_u64();
    }
    return draw % bound;
}

double Rng::normal() noexcept {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) {
        u1 = uniform01();
    }
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

Rng Rng::split() noexcept { return Rng(next_u64()); }

void Rng::shuffle(std::span<std::size_t> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(below(i));
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace fei3d

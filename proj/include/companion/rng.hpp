#pragma once

// Deterministic random streams. Every consumer (initialization, data synthesis,
// epoch shuffling) draws from its own stream keyed by (seed, purpose tag), so
// adding draws in one place never perturbs another.
//
// Algorithms are pinned for cross-platform reproducibility:
//   key    = splitmix64_mix(seed ^ fnv1a64(tag))
//   state  = four successive SplitMix64 outputs seeded with key
//   next() = xoshiro256**
//   uniform01 = (next() >> 11) * 2^-53            in [0, 1)
//   normal    = Box-Muller on (1 - u1, u2), cosine branch only, no caching
//   below(n)  = high 64 bits of next() * n

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace companion {

class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

constexpr std::uint64_t stream_key(std::uint64_t seed, std::string_view tag) noexcept {
  return SplitMix64(seed ^ fnv1a64(tag)).next();
}

class Xoshiro256 {
 public:
  explicit constexpr Xoshiro256(std::uint64_t seed) noexcept {
    SplitMix64 sm(seed);
    for (auto& w : s_) w = sm.next();
  }

  constexpr std::uint64_t next() noexcept {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  double uniform01() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound) noexcept {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * bound) >> 64);
  }

  double normal() noexcept {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  const std::array<std::uint64_t, 4>& state() const noexcept { return s_; }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> s_{};
};

inline Xoshiro256 rng_stream(std::uint64_t seed, std::string_view purpose_tag) {
  return Xoshiro256(stream_key(seed, purpose_tag));
}

}  // namespace companion

#pragma once

// Counter-based random numbers (Philox4x32-10) with splittable seeding.
//
// Every variate is a pure function of (seed, stream, index), so replications
// can be generated on any number of workers in any order and still produce
// identical values.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

namespace fraclt {

/// SplitMix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Derives the seed of child stream `index` from `seed`.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return mix64(mix64(seed) ^ mix64(index + 0x632be59bd9b4e019ull));
}

class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter apply(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kW0;
        key[1] += kW1;
      }
      ctr = single_round(ctr, key);
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;

  static constexpr Counter single_round(const Counter& c, const Key& k) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

/// A stream of variates addressed by a 64-bit index.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed, std::uint64_t stream = 0)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_(stream) {}

  RandomStream split(std::uint64_t child) const {
    const std::uint64_t seed = (static_cast<std::uint64_t>(key_[1]) << 32) | key_[0];
    return RandomStream(derive_seed(seed ^ mix64(stream_), child), 0);
  }

  Philox4x32::Counter block(std::uint64_t index) const {
    return Philox4x32::apply({static_cast<std::uint32_t>(index),
                              static_cast<std::uint32_t>(index >> 32),
                              static_cast<std::uint32_t>(stream_),
                              static_cast<std::uint32_t>(stream_ >> 32)},
                             key_);
  }

  /// Two uniforms in (0,1) from block `index`.
  std::array<double, 2> uniform_pair(std::uint64_t index) const {
    const auto b = block(index);
    return {to_unit(b[0], b[1]), to_unit(b[2], b[3])};
  }

  double uniform(std::uint64_t index) const { return uniform_pair(index)[0]; }

  /// Two independent standard normals from block `index` (Box-Muller).
  std::array<double, 2> normal_pair(std::uint64_t index) const {
    const auto [u1, u2] = uniform_pair(index);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return {radius * std::cos(angle), radius * std::sin(angle)};
  }

  /// Fills `out` with normals; element k depends only on (stream, k).
  void fill_normal(std::span<double> out) const {
    for (std::size_t k = 0; k < out.size(); k += 2) {
      const auto z = normal_pair(k / 2);
      out[k] = z[0];
      if (k + 1 < out.size()) out[k + 1] = z[1];
    }
  }

  std::vector<double> normals(std::size_t n) const {
    std::vector<double> v(n);
    fill_normal(v);
    return v;
  }

 private:
  static double to_unit(std::uint32_t lo, std::uint32_t hi) {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  Philox4x32::Key key_;
  std::uint64_t stream_;
};

}  // namespace fraclt

#pragma once

// Counter-based random numbers. Every draw is a pure function of a key tuple,
// so results do not depend on evaluation order or thread count.

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace depin {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Mixes a list of 64-bit words into one key.
inline std::uint64_t hash_key(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x6A09E667F3BCC909ull;
  for (auto w : words) h = splitmix64(h ^ splitmix64(w));
  return h;
}

inline std::uint64_t to_word(std::int64_t v) { return static_cast<std::uint64_t>(v); }

/// Uniform in [0, 1) with 53 random bits.
inline double to_unit(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

// Sequential stream seeded from a key. Used inside a single cell, where the
// order of draws is fixed by construction.
class KeyedStream {
 public:
  explicit KeyedStream(std::uint64_t key) : state_(key) {}

  std::uint64_t next_bits() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  double uniform() { return to_unit(next_bits()); }

  // (0, 1]: safe for logarithms.
  double uniform_pos() { return 1.0 - uniform(); }

  /// Poisson variate by inversion; large means are split into chunks so
  /// exp(-mean) never underflows.
  std::uint64_t poisson(double mean) {
    std::uint64_t total = 0;
    while (mean > 0.0) {
      double chunk = mean > 100.0 ? 100.0 : mean;
      mean -= chunk;
      double p = std::exp(-chunk);
      double cdf = p;
      double u = uniform();
      std::uint64_t k = 0;
      while (u > cdf && k < 100000) {
        ++k;
        p *= chunk / static_cast<double>(k);
        cdf += p;
        if (p < 1e-300 && cdf >= 1.0) break;
      }
      total += k;
    }
    return total;
  }

 private:
  std::uint64_t state_;
};

}  // namespace depin

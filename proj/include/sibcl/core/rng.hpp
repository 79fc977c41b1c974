#pragma once

// Splittable counter-based random number generation.
//
// A stream is identified by a 64-bit key. Draw i of a stream is
//   finalize(key + (i + 1) * 0x9E3779B97F4A7C15)
// where finalize is the SplitMix64 output function. Child streams are derived
// from a parent key and a tag with derive(). String tags are hashed with
// 64-bit FNV-1a. Every distribution below is defined in terms of next_u64()
// only, so datasets are reproducible from another language.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <utility>
#include <vector>

namespace sibcl {

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t finalize64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

constexpr std::uint64_t derive_key(std::uint64_t key, std::uint64_t tag) noexcept {
  return finalize64(key ^ (finalize64(tag) + kGoldenGamma));
}

class Rng {
 public:
  explicit constexpr Rng(std::uint64_t key = 0) noexcept : key_(key) {}

  // Stream for a named purpose ("generation", "augmentation", "init", ...)
  // and an index under a master seed.
  static Rng stream(std::uint64_t seed, std::string_view purpose,
                    std::uint64_t index = 0) noexcept {
    return Rng(derive_key(derive_key(seed, fnv1a64(purpose)), index));
  }

  Rng split(std::uint64_t tag) const noexcept { return Rng(derive_key(key_, tag)); }
  Rng split(std::string_view tag) const noexcept { return split(fnv1a64(tag)); }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return finalize64(key_ + counter_ * kGoldenGamma);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection keeps it unbiased.
  std::uint64_t uniform_int(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  // Box-Muller, one normal per two uniforms (no cached second value).
  double normal() noexcept {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Identity permutation 0..n-1 shuffled by rng.
inline std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  rng.shuffle(p);
  return p;
}

}  // namespace sibcl

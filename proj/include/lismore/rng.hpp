#pragma once

// Deterministic random number generation. Everything that draws randomness in
// this project goes through Rng so that runs are reproducible bit-for-bit
// across platforms and standard libraries. The generator is SplitMix64
// (Steele/Lea/Vigna); integer and floating-point mappings are spelled out here
// rather than delegated to <random> distributions, whose outputs are
// implementation-defined.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace lismore {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random mantissa bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). Rejection-sampled to avoid modulo bias.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::next_below: n must be positive");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  // Box-Muller transform; the spare value is cached so draws come in a fixed
  // order regardless of how callers interleave with other methods.
  double next_normal(double mean, double stddev) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mean + stddev * r * std::cos(theta);
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a over the label, mixed with the root seed through one SplitMix64
// step. Used to fan a single experiment seed out to independent consumers
// (split, init, noise, shuffle) without manual seed bookkeeping.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  Rng mix(root ^ h);
  return mix.next_u64();
}

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label,
                                 std::uint64_t index) {
  return derive_seed(derive_seed(root, label), "#") ^ Rng(index).next_u64();
}

// Fisher-Yates, fixed iteration order.
template <typename T>
void shuffle(std::vector<T>& values, Rng& rng) {
  if (values.size() < 2) return;
  for (std::size_t i = values.size() - 1; i > 0; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_below(i + 1));
    if (i != j) std::swap(values[i], values[j]);
  }
}

}  // namespace lismore

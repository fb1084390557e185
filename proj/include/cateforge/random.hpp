#pragma once

// Counter-based random streams. Every draw is a pure function of
// (seed, stream, counter...) so results do not depend on the standard
// library's distribution implementations or on call interleaving.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>
#include <utility>

#include "cateforge/common.hpp"

namespace cateforge::rng {

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_key(std::uint64_t seed, std::uint64_t a) noexcept {
  return mix64(seed ^ mix64(a));
}

template <typename... Rest>
constexpr std::uint64_t hash_key(std::uint64_t seed, std::uint64_t a, Rest... rest) noexcept {
  return hash_key(hash_key(seed, a), static_cast<std::uint64_t>(rest)...);
}

// Uniform in the open interval (0, 1) with 53 bits of resolution.
constexpr double to_unit(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

template <typename... Keys>
double uniform_at(std::uint64_t seed, Keys... keys) noexcept {
  return to_unit(hash_key(seed, static_cast<std::uint64_t>(keys)...));
}

// Standard normal via Box-Muller on two keyed uniforms.
template <typename... Keys>
double normal_at(std::uint64_t seed, Keys... keys) noexcept {
  double u1 = uniform_at(seed, static_cast<std::uint64_t>(keys)..., 0u);
  double u2 = uniform_at(seed, static_cast<std::uint64_t>(keys)..., 1u);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Derive an independent seed for a named purpose.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) noexcept {
  return hash_key(seed, fnv1a64(purpose));
}

// Sequential stream over a keyed counter.
class Stream {
 public:
  explicit Stream(std::uint64_t seed, std::uint64_t stream = 0) noexcept
      : key_(hash_key(seed, stream)) {}

  std::uint64_t next_u64() noexcept { return hash_key(key_, counter_++); }
  double uniform() noexcept { return to_unit(next_u64()); }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  double normal() noexcept {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  template <typename T>
  void shuffle(std::span<T> v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Poisson draw by CDF inversion of a single uniform.
inline std::int64_t poisson_inverse(double lambda, double u) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error("poisson_inverse: invalid mean");
  double p = std::exp(-lambda);
  double cdf = p;
  std::int64_t k = 0;
  while (u > cdf && k < 100000) {
    ++k;
    p *= lambda / static_cast<double>(k);
    cdf += p;
    if (p == 0.0 && static_cast<double>(k) > lambda) break;
  }
  return k;
}

}  // namespace cateforge::rng

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace patchguard {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Used for every seed derivation in the project.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// FNV-1a over the bytes of a label.
constexpr std::uint64_t hash_label(std::string_view label) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Child seed for a named stream: mix64(master ^ fnv1a(label)).
/// This is how the master experiment seed fans out to modules
/// ("dataset", "poison", "train", "defense", ...).
constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view label) {
  return mix64(master ^ hash_label(label));
}

/// Child seed for an indexed stream (per sample, per trial, per epoch).
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return mix64(mix64(master) ^ (index * 0xD1B54A32D192ED03ULL + 1));
}

/// Uniform integer in [0, n) by rejection on the raw generator output.
/// Implemented here rather than through std::uniform_int_distribution so the
/// draw sequence is fixed across standard libraries and a generator that
/// always returns its minimum yields 0.
template <class URBG>
std::size_t uniform_below(URBG& gen, std::size_t n) {
  using U = std::uint64_t;
  const U span = static_cast<U>(URBG::max() - URBG::min());
  const U bound = static_cast<U>(n);
  if (bound <= 1) return 0;
  if (span == ~U{0}) {
    const U limit = ~U{0} - (~U{0} % bound) - 1;
    for (;;) {
      const U r = static_cast<U>(gen() - URBG::min());
      if (r <= limit) return static_cast<std::size_t>(r % bound);
    }
  }
  const U range = span + 1;
  const U limit = range - (range % bound);
  for (;;) {
    const U r = static_cast<U>(gen() - URBG::min());
    if (r < limit) return static_cast<std::size_t>(r % bound);
  }
}

/// Uniform double in [0, 1) from the top 53 bits.
template <class URBG>
double uniform01(URBG& gen) {
  return static_cast<double>(static_cast<std::uint64_t>(gen() - URBG::min()) >> 11) *
         0x1.0p-53;
}

/// Standard normal via Box-Muller (one value per call; deterministic).
template <class URBG>
double standard_normal(URBG& gen) {
  double u1 = uniform01(gen);
  while (u1 <= 0.0) u1 = uniform01(gen);
  const double u2 = uniform01(gen);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// Forward Fisher-Yates: position i swaps with i + uniform_below(n - i).
template <class URBG>
std::vector<std::size_t> random_permutation(std::size_t n, URBG& gen) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const std::size_t j = i + uniform_below(gen, n - i);
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

/// k distinct indices from [0, n), uniform without replacement, in draw order.
template <class URBG>
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, URBG& gen) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k && i + 1 < n; ++i) {
    const std::size_t j = i + uniform_below(gen, n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace patchguard

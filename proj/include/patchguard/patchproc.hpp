#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchguard/errors.hpp"
#include "patchguard/rng.hpp"
#include "patchguard/tensor.hpp"

namespace patchguard {

/// An l×l grid over an image. When l does not divide a side, the image is
/// padded by edge replication to the next multiple, transformed, and cropped.
struct PatchGrid {
  std::size_t side = 8;

  std::size_t patches() const { return side * side; }
  /// Pixel height and width of one patch for an H×W image (after padding).
  std::pair<std::size_t, std::size_t> patch_extent(std::size_t height, std::size_t width) const;
  void validate() const;
};

enum class PatchTransformKind { drop, shuffle };

struct PatchTransformSpec {
  PatchTransformKind kind = PatchTransformKind::drop;
  PatchGrid grid;
  /// Patches dropped per trial (drop only).
  std::size_t drop_count = 0;
};

void to_json(nlohmann::json& j, const PatchTransformSpec& s);
void from_json(const nlohmann::json& j, PatchTransformSpec& s);

struct PatchTransformOutcome {
  Image image;
  /// Sorted dropped patch indices, or the permutation (output patch i takes
  /// input patch descriptor[i]). Patches are numbered row-major.
  std::vector<std::size_t> descriptor;
};

/// Pixel value written into dropped patches.
inline constexpr float kDropFill = 0.0f;

/// Zeroes the listed patches.
Image replay_drop(const Image& x, const PatchGrid& grid, const std::vector<std::size_t>& dropped);

/// Rearranges patches so output patch i is input patch permutation[i].
Image replay_shuffle(const Image& x, const PatchGrid& grid,
                     const std::vector<std::size_t>& permutation);

Image replay(const Image& x, const PatchTransformSpec& spec,
             const std::vector<std::size_t>& descriptor);

template <class URBG>
PatchTransformOutcome patch_drop(const Image& x, const PatchGrid& grid, std::size_t drop_count,
                                 URBG& gen) {
  grid.validate();
  if (drop_count > grid.patches()) {
    throw ConfigError("patch_drop: M = " + std::to_string(drop_count) + " exceeds L = " +
                      std::to_string(grid.patches()));
  }
  auto dropped = sample_without_replacement(grid.patches(), drop_count, gen);
  std::sort(dropped.begin(), dropped.end());
  auto image = replay_drop(x, grid, dropped);
  return {std::move(image), std::move(dropped)};
}

template <class URBG>
PatchTransformOutcome patch_shuffle(const Image& x, const PatchGrid& grid, URBG& gen) {
  grid.validate();
  auto perm = random_permutation(grid.patches(), gen);
  auto image = replay_shuffle(x, grid, perm);
  return {std::move(image), std::move(perm)};
}

/// Draw for one trial from its own seeded stream.
PatchTransformOutcome apply_transform(const Image& x, const PatchTransformSpec& spec,
                                      std::uint64_t trial_seed);

/// Seed of trial t under a master seed; trials are independent streams.
inline std::uint64_t trial_seed(std::uint64_t master, std::size_t trial) {
  return derive_seed(master, static_cast<std::uint64_t>(trial));
}

/// T independent outcomes, trial t drawn from trial_seed(seed, t).
std::vector<PatchTransformOutcome> apply_trials(const Image& x, const PatchTransformSpec& spec,
                                                std::size_t trials, std::uint64_t seed);

}  // namespace patchguard

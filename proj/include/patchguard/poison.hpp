#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchguard/dataset.hpp"
#include "patchguard/tensor.hpp"

namespace patchguard {

enum class TriggerFamily { patch, single_pixel, blend, sinusoid };

std::string family_name(TriggerFamily family);
TriggerFamily parse_family(const std::string& name);

enum class Corner { top_left, top_right, bottom_left, bottom_right };

std::string corner_name(Corner corner);
Corner parse_corner(const std::string& name);

/// A trigger applied as x∘(1−m) + Δ∘m + offset, clamped to [0,1].
/// `offset` is zero for every family except the additive sinusoid, whose mask
/// and pattern are zero instead.
struct TriggerSpec {
  TriggerFamily family = TriggerFamily::patch;
  std::size_t target = 0;
  Image mask;
  Image pattern;
  Image offset;
  /// Construction parameters; enough to rebuild the trigger from JSON.
  nlohmann::json params;

  const Shape& image_shape() const { return mask.shape(); }
};

/// patch_size×patch_size square at `corner` holding `values` (one per channel,
/// or a single value for all channels).
TriggerSpec make_patch_trigger(const Shape& image_shape, std::size_t patch_size, Corner corner,
                               std::vector<float> values, std::size_t target);

TriggerSpec make_single_pixel_trigger(const Shape& image_shape, std::size_t row, std::size_t col,
                                      std::vector<float> values, std::size_t target);

/// Constant mask alpha over a full-image pattern.
TriggerSpec make_blend_trigger(const Image& pattern, double alpha, std::size_t target);

/// Named blend patterns: "checkerboard" (pixel-level 0/1 alternation, same in
/// every channel) or "noise" (uniform [0,1] per element from `seed`).
Image blend_pattern(const std::string& kind, const Shape& image_shape, std::uint64_t seed = 0);

/// Blend trigger over a named pattern; the name is kept for serialization.
TriggerSpec make_blend_trigger(const std::string& kind, const Shape& image_shape, double alpha,
                               std::size_t target, std::uint64_t seed = 0);

/// Vertical strips: every pixel in column j gains v·sin(2π·j·f/W).
TriggerSpec make_sinusoid_trigger(const Shape& image_shape, double amplitude, double frequency,
                                  std::size_t target);

/// Unclamped superposition x∘(1−m) + Δ∘m + offset at any precision.
template <typename T>
Tensor<T> superimpose(const Tensor<T>& x, const Tensor<T>& mask, const Tensor<T>& pattern,
                      const Tensor<T>& offset);

/// Superimposes the trigger and clamps to [0,1]. The input is not modified.
Image apply_trigger(const Image& x, const TriggerSpec& trigger);

void to_json(nlohmann::json& j, const TriggerSpec& t);
/// Rebuilds through the make_* constructors, so validation applies.
void from_json(const nlohmann::json& j, TriggerSpec& t);

struct PoisonRecord {
  std::uint64_t id = 0;
  std::size_t original_label = 0;
  bool poisoned = true;
  TriggerFamily family = TriggerFamily::patch;
};

void to_json(nlohmann::json& j, const PoisonRecord& r);
void from_json(const nlohmann::json& j, PoisonRecord& r);

struct PoisonedDataset {
  LabeledDataset data;
  /// Per-sample flag aligned with data.images.
  std::vector<bool> poisoned;
  std::size_t target = 0;

  std::size_t poisoned_count() const;
};

struct PoisonPolicy {
  /// Rates above this are rejected unless raised explicitly.
  double max_rate = 0.1;
};

struct PoisonResult {
  PoisonedDataset dataset;
  /// Only the poisoned samples, in dataset order.
  std::vector<PoisonRecord> records;
};

/// Triggers ⌊rate·N⌋ samples chosen uniformly without replacement from those
/// whose label differs from the target, and relabels them to the target.
PoisonResult poison_dataset(const LabeledDataset& dataset, const TriggerSpec& trigger, double rate,
                            std::uint64_t seed, const PoisonPolicy& policy = {});

/// Non-target samples with the trigger applied and relabeled to the target;
/// accuracy on this view is the attack success rate.
LabeledDataset triggered_view(const LabeledDataset& dataset, const TriggerSpec& trigger);

}  // namespace patchguard

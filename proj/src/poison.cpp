#include "patchguard/poison.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "patchguard/errors.hpp"
#include "patchguard/rng.hpp"

namespace patchguard {

namespace {

constexpr int kTriggerFormatVersion = 1;

void require_image_shape(const Shape& shape, const char* what) {
  if (shape.size() != 3 || shape_numel(shape) == 0) {
    throw ConfigError(std::string(what) + ": image shape must be C×H×W, got " +
                      shape_string(shape));
  }
}

std::vector<float> channel_values(std::vector<float> values, std::size_t channels,
                                  const char* what) {
  if (values.size() == 1) values.assign(channels, values.front());
  if (values.size() != channels) {
    throw ConfigError(std::string(what) + ": expected 1 or " + std::to_string(channels) +
                      " pattern values, got " + std::to_string(values.size()));
  }
  for (float v : values) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw ConfigError(std::string(what) + ": pattern values must lie in [0,1]");
    }
  }
  return values;
}

TriggerSpec empty_trigger(TriggerFamily family, const Shape& shape, std::size_t target) {
  TriggerSpec t;
  t.family = family;
  t.target = target;
  t.mask = Image(shape, 0.0f);
  t.pattern = Image(shape, 0.0f);
  t.offset = Image(shape, 0.0f);
  return t;
}

}  // namespace

std::string family_name(TriggerFamily family) {
  switch (family) {
    case TriggerFamily::patch:
      return "patch";
    case TriggerFamily::single_pixel:
      return "single_pixel";
    case TriggerFamily::blend:
      return "blend";
    case TriggerFamily::sinusoid:
      return "sinusoid";
  }
  return "unknown";
}

TriggerFamily parse_family(const std::string& name) {
  if (name == "patch") return TriggerFamily::patch;
  if (name == "single_pixel") return TriggerFamily::single_pixel;
  if (name == "blend") return TriggerFamily::blend;
  if (name == "sinusoid") return TriggerFamily::sinusoid;
  throw ConfigError("unknown trigger family '" + name +
                    "' (expected patch, single_pixel, blend or sinusoid)");
}

std::string corner_name(Corner corner) {
  switch (corner) {
    case Corner::top_left:
      return "top_left";
    case Corner::top_right:
      return "top_right";
    case Corner::bottom_left:
      return "bottom_left";
    case Corner::bottom_right:
      return "bottom_right";
  }
  return "unknown";
}

Corner parse_corner(const std::string& name) {
  if (name == "top_left") return Corner::top_left;
  if (name == "top_right") return Corner::top_right;
  if (name == "bottom_left") return Corner::bottom_left;
  if (name == "bottom_right") return Corner::bottom_right;
  throw ConfigError("unknown corner '" + name + "'");
}

TriggerSpec make_patch_trigger(const Shape& image_shape, std::size_t patch_size, Corner corner,
                               std::vector<float> values, std::size_t target) {
  require_image_shape(image_shape, "patch trigger");
  const std::size_t c = image_shape[0], h = image_shape[1], w = image_shape[2];
  if (patch_size == 0 || patch_size > std::min(h, w)) {
    throw ConfigError("patch trigger: patch size " + std::to_string(patch_size) +
                      " must be in [1, " + std::to_string(std::min(h, w)) + "]");
  }
  values = channel_values(std::move(values), c, "patch trigger");
  auto t = empty_trigger(TriggerFamily::patch, image_shape, target);
  const bool bottom = corner == Corner::bottom_left || corner == Corner::bottom_right;
  const bool right = corner == Corner::top_right || corner == Corner::bottom_right;
  const std::size_t y0 = bottom ? h - patch_size : 0;
  const std::size_t x0 = right ? w - patch_size : 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = y0; y < y0 + patch_size; ++y) {
      for (std::size_t x = x0; x < x0 + patch_size; ++x) {
        t.mask.at(ch, y, x) = 1.0f;
        t.pattern.at(ch, y, x) = values[ch];
      }
    }
  }
  t.params = {{"size", patch_size}, {"corner", corner_name(corner)}, {"values", values}};
  return t;
}

TriggerSpec make_single_pixel_trigger(const Shape& image_shape, std::size_t row, std::size_t col,
                                      std::vector<float> values, std::size_t target) {
  require_image_shape(image_shape, "single-pixel trigger");
  if (row >= image_shape[1] || col >= image_shape[2]) {
    throw ConfigError("single-pixel trigger: position (" + std::to_string(row) + ", " +
                      std::to_string(col) + ") outside " + std::to_string(image_shape[1]) + "×" +
                      std::to_string(image_shape[2]) + " image");
  }
  values = channel_values(std::move(values), image_shape[0], "single-pixel trigger");
  auto t = empty_trigger(TriggerFamily::single_pixel, image_shape, target);
  // One spatial location; every channel of it is written.
  for (std::size_t ch = 0; ch < image_shape[0]; ++ch) {
    t.mask.at(ch, row, col) = 1.0f;
    t.pattern.at(ch, row, col) = values[ch];
  }
  t.params = {{"row", row}, {"col", col}, {"values", values}};
  return t;
}

TriggerSpec make_blend_trigger(const Image& pattern, double alpha, std::size_t target) {
  require_image_shape(pattern.shape(), "blend trigger");
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("blend trigger: alpha must lie in (0,1), got " + std::to_string(alpha));
  }
  for (float v : pattern.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ConfigError("blend trigger: pattern must lie in [0,1]");
  }
  auto t = empty_trigger(TriggerFamily::blend, pattern.shape(), target);
  t.mask.fill(static_cast<float>(alpha));
  t.pattern = pattern;
  t.params = {{"alpha", alpha}, {"pattern", {{"kind", "data"}, {"values", pattern.storage()}}}};
  return t;
}

Image blend_pattern(const std::string& kind, const Shape& image_shape, std::uint64_t seed) {
  require_image_shape(image_shape, "blend pattern");
  Image out(image_shape);
  if (kind == "checkerboard") {
    for (std::size_t c = 0; c < image_shape[0]; ++c)
      for (std::size_t y = 0; y < image_shape[1]; ++y)
        for (std::size_t x = 0; x < image_shape[2]; ++x)
          out.at(c, y, x) = static_cast<float>((y + x) % 2);
  } else if (kind == "noise") {
    Rng gen(derive_seed(seed, "blend-noise"));
    for (auto& v : out.data()) v = static_cast<float>(uniform01(gen));
  } else {
    throw ConfigError("unknown blend pattern '" + kind + "' (expected checkerboard or noise)");
  }
  return out;
}

TriggerSpec make_blend_trigger(const std::string& kind, const Shape& image_shape, double alpha,
                               std::size_t target, std::uint64_t seed) {
  auto t = make_blend_trigger(blend_pattern(kind, image_shape, seed), alpha, target);
  nlohmann::json pattern{{"kind", kind}};
  if (kind == "noise") pattern["seed"] = seed;
  t.params["pattern"] = std::move(pattern);
  return t;
}

TriggerSpec make_sinusoid_trigger(const Shape& image_shape, double amplitude, double frequency,
                                  std::size_t target) {
  require_image_shape(image_shape, "sinusoid trigger");
  if (!(amplitude > 0.0 && amplitude <= 0.25)) {
    throw ConfigError("sinusoid trigger: amplitude must lie in (0, 0.25], got " +
                      std::to_string(amplitude));
  }
  if (!(frequency >= 1.0)) {
    throw ConfigError("sinusoid trigger: frequency must be >= 1, got " +
                      std::to_string(frequency));
  }
  auto t = empty_trigger(TriggerFamily::sinusoid, image_shape, target);
  const double width = static_cast<double>(image_shape[2]);
  for (std::size_t c = 0; c < image_shape[0]; ++c)
    for (std::size_t y = 0; y < image_shape[1]; ++y)
      for (std::size_t x = 0; x < image_shape[2]; ++x)
        t.offset.at(c, y, x) = static_cast<float>(
            amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(x) * frequency / width));
  t.params = {{"amplitude", amplitude}, {"frequency", frequency}};
  return t;
}

template <typename T>
Tensor<T> superimpose(const Tensor<T>& x, const Tensor<T>& mask, const Tensor<T>& pattern,
                      const Tensor<T>& offset) {
  x.require_same_shape(mask, "apply_trigger mask");
  x.require_same_shape(pattern, "apply_trigger pattern");
  x.require_same_shape(offset, "apply_trigger offset");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] * (T{1} - mask[i]) + pattern[i] * mask[i] + offset[i];
  }
  return out;
}

template Tensor<float> superimpose(const Tensor<float>&, const Tensor<float>&,
                                   const Tensor<float>&, const Tensor<float>&);
template Tensor<double> superimpose(const Tensor<double>&, const Tensor<double>&,
                                    const Tensor<double>&, const Tensor<double>&);

Image apply_trigger(const Image& x, const TriggerSpec& trigger) {
  auto out = superimpose(x, trigger.mask, trigger.pattern, trigger.offset);
  for (auto& v : out.data()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

void to_json(nlohmann::json& j, const TriggerSpec& t) {
  j = nlohmann::json{{"format_version", kTriggerFormatVersion},
                     {"family", family_name(t.family)},
                     {"target", t.target},
                     {"image_shape", t.image_shape()},
                     {"params", t.params}};
}

void from_json(const nlohmann::json& j, TriggerSpec& t) {
  try {
    const int version = j.value("format_version", kTriggerFormatVersion);
    if (version != kTriggerFormatVersion) {
      throw FormatError("trigger: unsupported format_version " + std::to_string(version));
    }
    const auto family = parse_family(j.at("family").get<std::string>());
    const auto target = j.at("target").get<std::size_t>();
    const auto shape = j.at("image_shape").get<Shape>();
    const auto& p = j.at("params");
    switch (family) {
      case TriggerFamily::patch:
        t = make_patch_trigger(shape, p.at("size").get<std::size_t>(),
                               parse_corner(p.value("corner", std::string("bottom_right"))),
                               p.value("values", std::vector<float>{1.0f}), target);
        break;
      case TriggerFamily::single_pixel:
        t = make_single_pixel_trigger(shape, p.at("row").get<std::size_t>(),
                                      p.at("col").get<std::size_t>(),
                                      p.value("values", std::vector<float>{1.0f}), target);
        break;
      case TriggerFamily::blend: {
        const auto& pattern = p.at("pattern");
        const auto kind = pattern.at("kind").get<std::string>();
        const double alpha = p.at("alpha").get<double>();
        if (kind == "data") {
          t = make_blend_trigger(Image(shape, pattern.at("values").get<std::vector<float>>()),
                                 alpha, target);
        } else {
          t = make_blend_trigger(kind, shape, alpha, target,
                                 pattern.value("seed", std::uint64_t{0}));
        }
        break;
      }
      case TriggerFamily::sinusoid:
        t = make_sinusoid_trigger(shape, p.at("amplitude").get<double>(),
                                  p.at("frequency").get<double>(), target);
        break;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("trigger: ") + e.what());
  }
}

void to_json(nlohmann::json& j, const PoisonRecord& r) {
  j = nlohmann::json{{"id", r.id},
                     {"original_label", r.original_label},
                     {"poisoned", r.poisoned},
                     {"family", family_name(r.family)}};
}

void from_json(const nlohmann::json& j, PoisonRecord& r) {
  r.id = j.at("id").get<std::uint64_t>();
  r.original_label = j.at("original_label").get<std::size_t>();
  r.poisoned = j.value("poisoned", true);
  r.family = parse_family(j.at("family").get<std::string>());
}

std::size_t PoisonedDataset::poisoned_count() const {
  return static_cast<std::size_t>(std::count(poisoned.begin(), poisoned.end(), true));
}

PoisonResult poison_dataset(const LabeledDataset& dataset, const TriggerSpec& trigger, double rate,
                            std::uint64_t seed, const PoisonPolicy& policy) {
  if (!(rate > 0.0)) throw ConfigError("poison: rate must be positive, got " + std::to_string(rate));
  if (rate > 1.0) throw ConfigError("poison: rate cannot exceed 1");
  if (rate > policy.max_rate) {
    throw ConfigError("poison: rate " + std::to_string(rate) + " exceeds the policy limit " +
                      std::to_string(policy.max_rate) + "; raise max_rate to allow it");
  }
  if (trigger.target >= dataset.num_classes) {
    throw ConfigError("poison: target class " + std::to_string(trigger.target) +
                      " does not exist in a " + std::to_string(dataset.num_classes) +
                      "-class dataset");
  }
  if (!dataset.empty() && dataset.image_shape() != trigger.image_shape()) {
    throw DimensionError("poison: trigger shape " + shape_string(trigger.image_shape()) +
                         " does not match images " + shape_string(dataset.image_shape()));
  }

  PoisonResult result;
  result.dataset.data = dataset;
  result.dataset.target = trigger.target;
  result.dataset.poisoned.assign(dataset.size(), false);

  const auto count = static_cast<std::size_t>(std::floor(rate * static_cast<double>(dataset.size())));
  if (count == 0) {
    spdlog::warn("poison: rate {} on {} samples selects no sample; dataset left unchanged", rate,
                 dataset.size());
    return result;
  }
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset.labels[i] != trigger.target) eligible.push_back(i);
  }
  if (count > eligible.size()) {
    throw ConfigError("poison: " + std::to_string(count) + " samples requested but only " +
                      std::to_string(eligible.size()) + " are outside the target class");
  }
  Rng gen(derive_seed(seed, "poison-select"));
  auto picks = sample_without_replacement(eligible.size(), count, gen);
  std::sort(picks.begin(), picks.end());
  for (std::size_t pick : picks) {
    const std::size_t i = eligible[pick];
    auto& d = result.dataset.data;
    result.records.push_back({d.ids[i], d.labels[i], true, trigger.family});
    d.images[i] = apply_trigger(d.images[i], trigger);
    d.labels[i] = trigger.target;
    result.dataset.poisoned[i] = true;
  }
  return result;
}

LabeledDataset triggered_view(const LabeledDataset& dataset, const TriggerSpec& trigger) {
  LabeledDataset out;
  out.num_classes = dataset.num_classes;
  out.split = dataset.split + "-triggered";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset.labels[i] == trigger.target) continue;
    out.images.push_back(apply_trigger(dataset.images[i], trigger));
    out.labels.push_back(trigger.target);
    out.ids.push_back(dataset.ids[i]);
  }
  return out;
}

}  // namespace patchguard

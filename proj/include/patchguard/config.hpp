#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchguard/dataset.hpp"
#include "patchguard/defense.hpp"
#include "patchguard/poison.hpp"
#include "patchguard/train.hpp"

namespace patchguard {

struct DatasetSection {
  /// {"kind": "synthetic", num_classes, per_class, image_size, channels}
  /// {"kind": "idx", images, labels[, num_classes]}
  /// {"kind": "cifar", files}
  nlohmann::json source;
  std::array<double, 3> splits{0.8, 0.1, 0.1};
  std::optional<std::uint64_t> seed;
};

struct AttackSection {
  TriggerFamily family = TriggerFamily::patch;
  std::size_t target = 0;
  double rate = 0.05;
  double max_rate = 0.1;
  /// Family parameters as accepted by the trigger constructors.
  nlohmann::json params;
  std::optional<std::uint64_t> seed;

  /// Trigger for images of the given shape.
  TriggerSpec trigger(const Shape& image_shape) const;
};

struct TrainingSection {
  TrainOptions options;
  std::optional<std::uint64_t> seed;
};

struct DefenseSection {
  DetectionProfile profile;
  std::optional<std::uint64_t> seed;
  /// Clean samples from the validation split used for calibration.
  std::size_t calibration_size = 400;
  /// Trials of the no-clean-data profile used by filter-retrain.
  std::size_t no_clean_data_trials = 4;
  /// Bootstrap epochs for filter-retrain; training.epochs when absent.
  std::optional<std::size_t> bootstrap_epochs;
};

struct SweepSection {
  std::size_t drop_grid = 8;
  std::vector<std::size_t> drop_counts{0, 3, 6, 9, 12};
  std::vector<std::size_t> shuffle_grids{1, 2, 4, 8};
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 0;
  DatasetSection dataset;
  /// Absent for a benign run.
  std::optional<AttackSection> attack;
  /// Architecture fields only ({"arch": "vit"|"cnn", ...}); image shape,
  /// class count and normalization come from the data.
  nlohmann::json model;
  TrainingSection training;
  DefenseSection defense;
  SweepSection sweep;
  std::optional<std::filesystem::path> output_dir;

  /// Seed of a module: the section's explicit seed, else derived from the
  /// master seed and the module name.
  std::uint64_t module_seed(std::string_view module) const;
  /// Full network config for data of the given shape and classes.
  nlohmann::json network_config(const Shape& image_shape, std::size_t num_classes,
                                const Normalization& normalization) const;
  /// Detection profile with its seed resolved.
  DetectionProfile detection_profile() const;
};

/// Strict parse: unknown keys and ill-typed values raise ConfigError naming
/// the field path (e.g. "defense.trials").
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical form with every default filled in; parse(serialize(c)) == c.
nlohmann::json serialize_config(const ExperimentConfig& config);

}  // namespace patchguard

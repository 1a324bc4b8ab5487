#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchguard/dataset.hpp"
#include "patchguard/model.hpp"
#include "patchguard/patchproc.hpp"
#include "patchguard/train.hpp"

namespace patchguard {

struct DetectionProfile {
  std::size_t trials = 32;
  std::size_t drop_grid = 8;
  std::size_t drop_count = 6;
  std::size_t shuffle_grid = 4;
  /// Percentiles of the clean flip-count distributions used by calibrate().
  double drop_percentile = 90.0;
  double shuffle_percentile = 10.0;
  std::optional<std::size_t> k_drop;
  std::optional<std::size_t> k_shuffle;
  std::uint64_t seed = 0;
  /// Stop a sample's trials once its verdict is settled. Counts are then
  /// partial; off by default.
  bool early_exit = false;

  PatchTransformSpec drop_spec() const;
  PatchTransformSpec shuffle_spec() const;
  bool has_thresholds() const { return k_drop && k_shuffle; }
  void validate() const;
};

void to_json(nlohmann::json& j, const DetectionProfile& p);
void from_json(const nlohmann::json& j, DetectionProfile& p);

struct FlipCounts {
  std::uint64_t id = 0;
  std::size_t drop_flips = 0;
  std::size_t shuffle_flips = 0;
  std::size_t trials = 0;
  std::size_t prediction = 0;
  bool truncated = false;
};

/// Everything needed to recount a sample's flips without the random streams.
struct FlipTrace {
  std::vector<std::vector<std::size_t>> drop_descriptors;
  std::vector<std::vector<std::size_t>> shuffle_descriptors;
  std::vector<std::size_t> drop_predictions;
  std::vector<std::size_t> shuffle_predictions;
};

/// Master seed of a sample's drop or shuffle trials. Depends only on the
/// profile seed and the sample id, so scores do not depend on batching.
std::uint64_t sample_trial_seed(const DetectionProfile& profile, std::uint64_t id,
                                PatchTransformKind kind);

/// Predicts x once, then counts label changes over T PatchDrop trials and T
/// PatchShuffle trials.
FlipCounts flip_counts(const Classifier& model, const Image& x, std::uint64_t id,
                       const DetectionProfile& profile, FlipTrace* trace = nullptr);

/// Recount from stored descriptors.
FlipCounts replay_flip_counts(const Classifier& model, const Image& x, std::uint64_t id,
                              const DetectionProfile& profile, const FlipTrace& trace);

std::vector<FlipCounts> score_dataset(const Classifier& model, const LabeledDataset& data,
                                      const DetectionProfile& profile, std::size_t threads = 1);

/// Value at 1-based rank ⌈percentile/100·K⌉ of the ascending sort (rank 1
/// when that evaluates to 0).
std::size_t nearest_rank_percentile(std::vector<std::size_t> values, double percentile);

struct Calibration {
  DetectionProfile profile;
  std::vector<FlipCounts> counts;
};

/// Sets k_drop and k_shuffle from the flip counts of clean samples.
Calibration calibrate(const Classifier& model, const LabeledDataset& clean,
                      const DetectionProfile& profile, std::size_t threads = 1);

/// Thresholds from already computed clean counts.
DetectionProfile calibrate_from_counts(std::span<const FlipCounts> clean_counts,
                                       const DetectionProfile& profile);

/// Thresholds for when no clean data is available: k_drop = 0, k_shuffle = T.
DetectionProfile no_clean_data_profile(std::size_t trials, DetectionProfile base = {});

enum class Decision { clean, backdoor };
enum class Rule { none, drop, shuffle, both };

std::string decision_name(Decision d);
std::string rule_name(Rule r);

struct Verdict {
  std::uint64_t id = 0;
  Decision decision = Decision::clean;
  Rule rule = Rule::none;
  std::size_t drop_flips = 0;
  std::size_t shuffle_flips = 0;
  std::size_t k_drop = 0;
  std::size_t k_shuffle = 0;

  bool flagged() const { return decision == Decision::backdoor; }
};

/// Backdoor iff drop_flips > k_drop or shuffle_flips < k_shuffle.
Verdict decide(const FlipCounts& counts, std::size_t k_drop, std::size_t k_shuffle);

Verdict detect(const Classifier& model, const Image& x, std::uint64_t id,
               const DetectionProfile& profile);

std::vector<Verdict> decide_all(std::span<const FlipCounts> counts,
                                const DetectionProfile& profile);

std::vector<Verdict> detect_dataset(const Classifier& model, const LabeledDataset& data,
                                    const DetectionProfile& profile, std::size_t threads = 1);

/// CSV with header id,F_d,F_s,k_d,k_s,decision,rule.
void write_verdicts_csv(const std::filesystem::path& path, std::span<const Verdict> verdicts);
std::vector<Verdict> read_verdicts_csv(const std::filesystem::path& path);

struct MannWhitneyResult {
  double u = 0.0;
  double z = 0.0;
  double p_value = 1.0;
};

/// One-sided test that `greater` is stochastically larger than `other`
/// (normal approximation with tie and continuity corrections).
MannWhitneyResult mann_whitney_greater(std::span<const double> greater,
                                       std::span<const double> other);

struct RemovalReport {
  std::size_t total = 0;
  std::size_t flagged = 0;
  std::size_t kept = 0;
  /// Filled only when ground truth was supplied for evaluation.
  std::optional<std::size_t> removed_poisoned;
  std::optional<std::size_t> removed_clean;
  std::optional<std::size_t> poisoned_total;
};

void to_json(nlohmann::json& j, const RemovalReport& r);

struct FilterRetrainOptions {
  nlohmann::json model_config;
  TrainOptions bootstrap;
  TrainOptions retrain;
  DetectionProfile profile = no_clean_data_profile(32);
  std::size_t threads = 1;
};

struct FilterRetrainResult {
  LabeledDataset filtered;
  std::unique_ptr<Network<float>> bootstrap_model;
  std::unique_ptr<Network<float>> model;
  std::vector<Verdict> verdicts;
  RemovalReport report;
  std::vector<EpochMetrics> bootstrap_history;
  std::vector<EpochMetrics> retrain_history;
};

/// Bootstrap-trains on the possibly poisoned set, flags samples with the
/// profile, drops them and retrains from scratch. `ground_truth` feeds the
/// removal report only.
FilterRetrainResult filter_retrain(const LabeledDataset& train_set,
                                   const FilterRetrainOptions& options,
                                   const std::vector<bool>* ground_truth = nullptr,
                                   const TrainMonitor& monitor = {});

}  // namespace patchguard

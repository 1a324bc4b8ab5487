#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchguard/dataset.hpp"
#include "patchguard/defense.hpp"
#include "patchguard/model.hpp"
#include "patchguard/patchproc.hpp"
#include "patchguard/poison.hpp"

namespace patchguard {

/// How attack success rate is counted; echoed into every JSON report.
inline constexpr const char* kAsrConvention =
    "samples whose true label is the target are excluded from the ASR denominator";

/// One row of a report. Rates that do not apply to a row are absent.
struct MetricsRecord {
  std::string experiment_id;
  std::string model;
  std::string attack;
  /// "drop" or "shuffle" for sweeps; "detect:clean" / "detect:backdoor" for
  /// detection groups; "none" for plain evaluation.
  std::string transform = "none";
  /// Dropped-patch count for drop, grid side for shuffle.
  double param = 0.0;
  std::uint64_t seed = 0;
  std::optional<double> clean_acc;
  std::optional<double> asr;
  std::optional<double> tpr;
  std::optional<double> tnr;
  std::size_t n_clean = 0;
  std::size_t n_backdoor = 0;
  std::optional<double> fd_mean;
  std::optional<double> fd_var;
  std::optional<double> fs_mean;
  std::optional<double> fs_var;

  bool operator==(const MetricsRecord&) const = default;
};

void to_json(nlohmann::json& j, const MetricsRecord& r);
void from_json(const nlohmann::json& j, MetricsRecord& r);

double clean_accuracy(const Classifier& model, const LabeledDataset& test, std::size_t threads = 1);

/// Applies the trigger to every test image whose label differs from the
/// target and returns the fraction predicted as the target.
double attack_success_rate(const Classifier& model, const LabeledDataset& test,
                           const TriggerSpec& trigger, std::size_t threads = 1);

struct DetectionRates {
  /// Absent when there are no poisoned samples.
  std::optional<double> tpr;
  /// Absent when there are no clean samples.
  std::optional<double> tnr;
  std::size_t n_poisoned = 0;
  std::size_t n_clean = 0;
};

DetectionRates tpr_tnr(std::span<const Verdict> verdicts, const std::vector<bool>& poisoned);

struct FlipSummary {
  double fd_mean = 0.0;
  double fd_var = 0.0;
  double fs_mean = 0.0;
  double fs_var = 0.0;
};

/// Means and population variances of the flip counts.
FlipSummary summarize_flips(std::span<const FlipCounts> counts);

struct SweepTags {
  std::string experiment_id = "sweep";
  std::string model = "vit";
  std::string attack = "none";
};

/// Clean accuracy and ASR with every image drop-transformed, one record per
/// (M, seed). `triggered` holds trigger-bearing images labeled with the
/// target (see triggered_view); it may be empty, leaving ASR absent.
std::vector<MetricsRecord> sweep_drop(const Classifier& model, const LabeledDataset& clean,
                                      const LabeledDataset& triggered, const PatchGrid& grid,
                                      std::span<const std::size_t> drop_counts,
                                      std::span<const std::uint64_t> seeds,
                                      const SweepTags& tags = {}, std::size_t threads = 1);

/// As sweep_drop, shuffling on each listed grid side.
std::vector<MetricsRecord> sweep_shuffle(const Classifier& model, const LabeledDataset& clean,
                                         const LabeledDataset& triggered,
                                         std::span<const std::size_t> grid_sides,
                                         std::span<const std::uint64_t> seeds,
                                         const SweepTags& tags = {}, std::size_t threads = 1);

/// Transforms each image with a stream keyed by (seed, sample id).
LabeledDataset transform_dataset(const LabeledDataset& data, const PatchTransformSpec& spec,
                                 std::uint64_t seed);

struct SweepPoint {
  double param = 0.0;
  std::size_t seeds = 0;
  std::optional<double> clean_acc_mean, clean_acc_var;
  std::optional<double> asr_mean, asr_var;
};

/// Mean and population variance across seeds per sweep coordinate.
std::vector<SweepPoint> summarize_sweep(std::span<const MetricsRecord> records);

enum class ReportFormat { csv, json };

/// Column order of the CSV report.
const std::vector<std::string>& report_columns();

/// CSV: header row and one row per record, absent values as empty cells.
/// JSON: {"asr_convention", "config", "records"}.
void emit_report(std::span<const MetricsRecord> records, const std::filesystem::path& path,
                 ReportFormat format, const nlohmann::json& config = nlohmann::json::object());

std::vector<MetricsRecord> read_report_csv(const std::filesystem::path& path);

}  // namespace patchguard

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "patchguard/config.hpp"

namespace patchguard {

struct RunOptions {
  std::filesystem::path out;
  std::size_t threads = 1;
  /// Rerun even when the stamp says the outputs are current.
  bool force = false;
};

struct CommandResult {
  std::string command;
  bool skipped = false;
  std::vector<std::filesystem::path> outputs;
};

/// --out, else config output.dir, else $PATCHGUARD_OUT/<name>, else runs/<name>.
std::filesystem::path resolve_output_dir(const ExperimentConfig& config,
                                         const std::optional<std::filesystem::path>& flag);

/// Names of the files a run directory holds.
namespace artifacts {
inline constexpr const char* kConfig = "config.json";
inline constexpr const char* kData = "data";
inline constexpr const char* kTrigger = "trigger.json";
/// Ground truth of the poisoning. Only evaluation reads it; detection never does.
inline constexpr const char* kPoisonManifest = "evaluation_only/poison_manifest.json";
inline constexpr const char* kModel = "model.ckpt";
inline constexpr const char* kTrainHistory = "train_history.json";
inline constexpr const char* kProfile = "profile.json";
inline constexpr const char* kCalibration = "calibration.json";
inline constexpr const char* kVerdicts = "verdicts";
inline constexpr const char* kReportCsv = "report.csv";
inline constexpr const char* kReportJson = "report.json";
inline constexpr const char* kSweepCsv = "sweep.csv";
inline constexpr const char* kSweepJson = "sweep.json";
inline constexpr const char* kFilterDir = "filter_retrain";
inline constexpr const char* kStamps = "stamps";
inline constexpr const char* kTriggeredTest = "test-triggered";
}  // namespace artifacts

/// Builds the dataset, splits it, poisons the training split (when the
/// config has an attack) and writes data/, trigger.json and the
/// evaluation-only poison manifest.
CommandResult cmd_poison(const ExperimentConfig& config, const RunOptions& run);

/// Trains on data/train and writes model.ckpt plus the epoch history.
CommandResult cmd_train(const ExperimentConfig& config, const RunOptions& run);

/// Sets thresholds from clean validation samples; writes profile.json.
CommandResult cmd_calibrate(const ExperimentConfig& config, const RunOptions& run);

/// Screens dataset splits with the calibrated profile and writes one verdict
/// CSV per split. `data_dir` defaults to the run's data/; `splits` defaults
/// to every split except train and val.
CommandResult cmd_detect(const ExperimentConfig& config, const RunOptions& run,
                         const std::optional<std::filesystem::path>& data_dir = std::nullopt,
                         const std::vector<std::string>& splits = {});

/// Clean accuracy, ASR and, when verdicts exist, TPR/TNR with flip
/// statistics; writes report.csv and report.json.
CommandResult cmd_evaluate(const ExperimentConfig& config, const RunOptions& run);

/// PatchDrop and PatchShuffle sweeps; writes sweep.csv and sweep.json.
CommandResult cmd_sweep(const ExperimentConfig& config, const RunOptions& run);

/// Bootstrap, filter with the no-clean-data profile, retrain; writes
/// filter_retrain/.
CommandResult cmd_filter_retrain(const ExperimentConfig& config, const RunOptions& run);

/// Runs a command by its CLI name.
CommandResult run_command(const std::string& name, const ExperimentConfig& config,
                          const RunOptions& run);

}  // namespace patchguard

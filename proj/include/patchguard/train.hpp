#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "patchguard/adam.hpp"
#include "patchguard/dataset.hpp"
#include "patchguard/model.hpp"

namespace patchguard {

struct TrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  AdamOptions adam;
  /// Cosine decay of the learning rate to zero over all steps.
  bool cosine_schedule = true;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  /// Each batch is cut into this many fixed contiguous shards whose gradients
  /// are summed in shard order, so results do not depend on `threads`.
  std::size_t shards = 4;
};

void to_json(nlohmann::json& j, const TrainOptions& o);
void from_json(const nlohmann::json& j, TrainOptions& o);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_accuracy;
  std::optional<double> asr;
};

void to_json(nlohmann::json& j, const EpochMetrics& m);

/// Optional held-out views scored after every epoch. `triggered` holds
/// triggered non-target images labeled with the target, so its accuracy is the
/// attack success rate.
struct TrainMonitor {
  const LabeledDataset* val = nullptr;
  const LabeledDataset* triggered = nullptr;
  std::function<void(const EpochMetrics&)> on_epoch;
};

/// Mini-batch Adam on softmax cross-entropy. Deterministic given the options;
/// a non-finite loss throws TrainingError naming the epoch and batch.
std::vector<EpochMetrics> train(Network<float>& model, const LabeledDataset& data,
                                const TrainOptions& options, const TrainMonitor& monitor = {});

/// Fraction of samples whose prediction equals the label.
double accuracy(const Classifier& model, const LabeledDataset& data, std::size_t threads = 1);

}  // namespace patchguard

#include "patchguard/train.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <numbers>

#include "patchguard/errors.hpp"
#include "patchguard/parallel.hpp"
#include "patchguard/rng.hpp"

namespace patchguard {

void to_json(nlohmann::json& j, const TrainOptions& o) {
  j = nlohmann::json{{"epochs", o.epochs},
                     {"batch_size", o.batch_size},
                     {"lr", o.adam.lr},
                     {"beta1", o.adam.beta1},
                     {"beta2", o.adam.beta2},
                     {"eps", o.adam.eps},
                     {"cosine_schedule", o.cosine_schedule},
                     {"shards", o.shards}};
}

void from_json(const nlohmann::json& j, TrainOptions& o) {
  TrainOptions d;
  o.epochs = j.value("epochs", d.epochs);
  o.batch_size = j.value("batch_size", d.batch_size);
  o.adam.lr = j.value("lr", d.adam.lr);
  o.adam.beta1 = j.value("beta1", d.adam.beta1);
  o.adam.beta2 = j.value("beta2", d.adam.beta2);
  o.adam.eps = j.value("eps", d.adam.eps);
  o.cosine_schedule = j.value("cosine_schedule", d.cosine_schedule);
  o.shards = j.value("shards", d.shards);
}

void to_json(nlohmann::json& j, const EpochMetrics& m) {
  j = nlohmann::json{{"epoch", m.epoch}, {"train_loss", m.train_loss}};
  j["val_accuracy"] = m.val_accuracy ? nlohmann::json(*m.val_accuracy) : nlohmann::json();
  j["asr"] = m.asr ? nlohmann::json(*m.asr) : nlohmann::json();
}

double accuracy(const Classifier& model, const LabeledDataset& data, std::size_t threads) {
  if (data.empty()) throw InputError("accuracy: empty dataset");
  const auto pred = predict_batch(model, data.images, threads);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) correct += pred.labels[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<EpochMetrics> train(Network<float>& model, const LabeledDataset& data,
                                const TrainOptions& options, const TrainMonitor& monitor) {
  if (options.batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (options.shards == 0) throw ConfigError("train: shards must be positive");
  if (!(options.adam.lr > 0.0)) throw ConfigError("train: lr must be positive");
  std::vector<EpochMetrics> history;
  if (options.epochs == 0) return history;
  if (data.empty()) throw InputError("train: empty dataset");
  if (data.num_classes != model.num_classes()) {
    throw ConfigError("train: dataset has " + std::to_string(data.num_classes) +
                      " classes, model head has " + std::to_string(model.num_classes()));
  }
  if (data.image_shape() != model.input_shape()) {
    throw DimensionError("train: dataset images " + shape_string(data.image_shape()) +
                         " do not match model input " + shape_string(model.input_shape()));
  }

  auto& params = model.parameters();
  auto state = AdamState<float>::zeros_like(params);
  std::vector<std::vector<Tensor<float>>> shard_grads(options.shards);
  for (auto& g : shard_grads) g = model.make_gradient_buffers();
  std::vector<double> shard_loss(options.shards);

  const std::size_t n = data.size();
  const std::size_t batches = (n + options.batch_size - 1) / options.batch_size;
  const std::size_t total_steps = batches * options.epochs;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    Rng gen(derive_seed(derive_seed(options.seed, "epoch"), epoch));
    const auto order = random_permutation(n, gen);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b, ++step) {
      const std::size_t begin = b * options.batch_size;
      const std::size_t count = std::min(options.batch_size, n - begin);
      const float scale = 1.0f / static_cast<float>(count);
      const std::size_t shards = std::min(options.shards, count);
      parallel_for(shards, options.threads, [&](std::size_t s) {
        auto& grads = shard_grads[s];
        for (auto& g : grads) g.fill(0.0f);
        double loss = 0.0;
        const std::size_t lo = begin + s * count / shards;
        const std::size_t hi = begin + (s + 1) * count / shards;
        for (std::size_t i = lo; i < hi; ++i) {
          const std::size_t idx = order[i];
          loss += model.accumulate_gradients(data.images[idx], data.labels[idx], scale, grads);
        }
        shard_loss[s] = loss;
      });
      double batch_loss = 0.0;
      for (auto& p : params) p.zero_grad();
      for (std::size_t s = 0; s < shards; ++s) {
        batch_loss += shard_loss[s];
        for (std::size_t k = 0; k < params.size(); ++k) params[k].grad += shard_grads[s][k];
      }
      if (!std::isfinite(batch_loss)) {
        throw TrainingError("train: non-finite loss at epoch " + std::to_string(epoch + 1) +
                            ", batch " + std::to_string(b + 1));
      }
      loss_sum += batch_loss;
      AdamOptions adam = options.adam;
      if (options.cosine_schedule) {
        const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
        adam.lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
      }
      adam_step<float>(params, state, adam);
    }
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.train_loss = loss_sum / static_cast<double>(n);
    if (monitor.val && !monitor.val->empty()) m.val_accuracy = accuracy(model, *monitor.val, options.threads);
    if (monitor.triggered && !monitor.triggered->empty()) {
      m.asr = accuracy(model, *monitor.triggered, options.threads);
    }
    spdlog::info("epoch {}/{} loss {:.4f} val_acc {} asr {}", m.epoch, options.epochs,
                 m.train_loss, m.val_accuracy ? std::to_string(*m.val_accuracy) : "-",
                 m.asr ? std::to_string(*m.asr) : "-");
    if (monitor.on_epoch) monitor.on_epoch(m);
    history.push_back(m);
  }
  return history;
}

}  // namespace patchguard

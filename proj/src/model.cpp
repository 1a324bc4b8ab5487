#include "patchguard/model.hpp"

#include <algorithm>

#include "patchguard/cnn.hpp"
#include "patchguard/parallel.hpp"
#include "patchguard/vit.hpp"

namespace patchguard {

std::size_t Classifier::predict(const Image& x) const {
  const auto scores = logits(x);
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) -
                                  scores.begin());
}

Prediction predict_batch(const Classifier& model, std::span<const Image> batch,
                         std::size_t threads) {
  Prediction out;
  out.labels.resize(batch.size());
  out.logits.resize(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    if (batch[i].shape() != model.input_shape()) {
      throw DimensionError("predict: batch item " + std::to_string(i) + " has shape " +
                           shape_string(batch[i].shape()) + ", model expects " +
                           shape_string(model.input_shape()));
    }
    out.logits[i] = model.logits(batch[i]);
    out.labels[i] = static_cast<std::size_t>(
        std::max_element(out.logits[i].begin(), out.logits[i].end()) - out.logits[i].begin());
  });
  return out;
}

void Normalization::validate(std::size_t channels) const {
  if (mean.empty() && stddev.empty()) return;
  if (mean.size() != channels || stddev.size() != channels) {
    throw ConfigError("normalization: expected " + std::to_string(channels) +
                      " per-channel mean/std values");
  }
  for (float s : stddev) {
    if (!(s > 0.0f)) throw ConfigError("normalization: std must be positive");
  }
}

void to_json(nlohmann::json& j, const Normalization& n) {
  j = nlohmann::json{{"mean", n.mean}, {"std", n.stddev}};
}

void from_json(const nlohmann::json& j, Normalization& n) {
  n.mean = j.value("mean", std::vector<float>{});
  n.stddev = j.value("std", std::vector<float>{});
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
std::vector<float> Network<T>::logits(const Image& x) const {
  Tensor<T> out;
  if constexpr (std::is_same_v<T, float>) {
    out = forward(x);
  } else {
    out = forward(x.template cast<T>());
  }
  return std::vector<float>(out.data().begin(), out.data().end());
}

template <typename T>
std::vector<Tensor<T>> Network<T>::make_gradient_buffers() const {
  std::vector<Tensor<T>> grads;
  grads.reserve(params_.size());
  for (const auto& p : params_) grads.emplace_back(p.value.shape());
  return grads;
}

template <typename T>
Tensor<T> Network<T>::normalize_input(const Tensor<T>& x) const {
  if (normalization_.empty()) return x;
  Tensor<T> out = x;
  const std::size_t channels = x.dim(0);
  const std::size_t plane = x.size() / channels;
  for (std::size_t c = 0; c < channels; ++c) {
    const T mean = static_cast<T>(normalization_.mean[c]);
    const T inv = T{1} / static_cast<T>(normalization_.stddev[c]);
    T* ptr = out.raw() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) ptr[i] = (ptr[i] - mean) * inv;
  }
  return out;
}

template <typename T>
Parameter<T>& Network<T>::add_parameter(std::string name, Tensor<T> value) {
  params_.emplace_back(std::move(name), std::move(value));
  return params_.back();
}

template <typename T>
std::unique_ptr<Network<T>> make_network(const nlohmann::json& config) {
  const auto arch = config.value("arch", std::string{});
  if (arch == "vit") return std::make_unique<TinyViT<T>>(config.get<TinyViTConfig>());
  if (arch == "cnn") return std::make_unique<TinyCNN<T>>(config.get<TinyCNNConfig>());
  throw ConfigError("model.arch must be \"vit\" or \"cnn\", got \"" + arch + "\"");
}

template class Network<float>;
template class Network<double>;
template std::unique_ptr<Network<float>> make_network<float>(const nlohmann::json&);
template std::unique_ptr<Network<double>> make_network<double>(const nlohmann::json&);

}  // namespace patchguard

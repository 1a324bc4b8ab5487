#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "patchguard/model.hpp"

namespace patchguard {

/// Stack of conv(k×k, same padding) → ReLU → optional 2×2 max-pool blocks,
/// flattened into a linear head.
struct TinyCNNConfig {
  Shape image_shape{3, 32, 32};
  std::vector<std::size_t> channels{32, 64, 128};
  std::vector<std::size_t> kernel_sizes{3, 3, 3};
  std::vector<bool> pool{true, true, true};
  std::size_t num_classes = 10;
  Normalization normalization;
  std::uint64_t init_seed = 0;

  /// C×H×W after the last block.
  Shape feature_shape() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const TinyCNNConfig& c);
void from_json(const nlohmann::json& j, TinyCNNConfig& c);

template <typename T>
class TinyCNN final : public Network<T> {
 public:
  explicit TinyCNN(TinyCNNConfig config);

  std::string architecture() const override { return "cnn"; }
  nlohmann::json config_json() const override;
  std::size_t num_classes() const override { return config_.num_classes; }
  Shape input_shape() const override { return config_.image_shape; }
  const TinyCNNConfig& config() const { return config_; }

  Tensor<T> forward(const Tensor<T>& x) const override;
  T accumulate_gradients(const Tensor<T>& x, std::size_t label, T scale,
                         std::vector<Tensor<T>>& grads) const override;

 private:
  const Tensor<T>& p(std::size_t i) const { return this->parameters()[i].value; }

  TinyCNNConfig config_;
};

}  // namespace patchguard

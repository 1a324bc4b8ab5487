#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "patchguard/tensor.hpp"

namespace patchguard {

/// Anything that maps an image to class scores. The defense and the
/// evaluation code only see this interface; implementations must allow
/// concurrent calls to logits()/predict().
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::size_t num_classes() const = 0;
  virtual Shape input_shape() const = 0;
  virtual std::vector<float> logits(const Image& x) const = 0;

  /// Index of the first maximal logit.
  virtual std::size_t predict(const Image& x) const;
};

struct Prediction {
  std::vector<std::size_t> labels;
  std::vector<std::vector<float>> logits;
};

/// Batched prediction; row i of the result depends only on batch[i].
Prediction predict_batch(const Classifier& model, std::span<const Image> batch,
                         std::size_t threads = 1);

/// Per-channel affine input normalization (x − mean)/std applied inside the
/// model, so stored images stay in raw [0,1] pixel space. Empty = identity.
struct Normalization {
  std::vector<float> mean;
  std::vector<float> stddev;

  bool empty() const { return mean.empty(); }
  void validate(std::size_t channels) const;
};

void to_json(nlohmann::json& j, const Normalization& n);
void from_json(const nlohmann::json& j, Normalization& n);

/// A trainable classifier over scalar type T. Float is used for training and
/// inference; the same architecture instantiated at double serves the
/// end-to-end gradient check.
template <typename T>
class Network : public Classifier {
 public:
  virtual std::string architecture() const = 0;
  virtual nlohmann::json config_json() const = 0;

  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  /// Logits [num_classes] for one raw (unnormalized) image.
  virtual Tensor<T> forward(const Tensor<T>& x) const = 0;

  /// Cross-entropy loss of (x, label); adds scale·∂loss/∂θ into grads[i] for
  /// every parameter i. Does not touch the network, so shards of a batch can
  /// run concurrently into separate gradient buffers.
  virtual T accumulate_gradients(const Tensor<T>& x, std::size_t label, T scale,
                                 std::vector<Tensor<T>>& grads) const = 0;

  std::vector<float> logits(const Image& x) const override;

  /// Zeroed gradient buffers shaped like the parameters.
  std::vector<Tensor<T>> make_gradient_buffers() const;

 protected:
  Tensor<T> normalize_input(const Tensor<T>& x) const;
  void set_normalization(Normalization n) { normalization_ = std::move(n); }
  Parameter<T>& add_parameter(std::string name, Tensor<T> value);

 private:
  std::vector<Parameter<T>> params_;
  Normalization normalization_;
};

/// Builds a network of either architecture from its JSON config
/// ({"arch": "vit"|"cnn", ...}).
template <typename T>
std::unique_ptr<Network<T>> make_network(const nlohmann::json& config);

/// Copies parameter values between networks of identical architecture.
template <typename Dst, typename Src>
void copy_parameters(const Network<Src>& src, Network<Dst>& dst) {
  auto& d = dst.parameters();
  const auto& s = src.parameters();
  if (d.size() != s.size()) throw DimensionError("copy_parameters: parameter count mismatch");
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i].name != s[i].name || d[i].value.shape() != s[i].value.shape()) {
      throw DimensionError("copy_parameters: parameter " + s[i].name + " does not match " +
                           d[i].name);
    }
    for (std::size_t j = 0; j < d[i].value.size(); ++j)
      d[i].value[j] = static_cast<Dst>(s[i].value[j]);
  }
}

}  // namespace patchguard

#include "patchguard/cnn.hpp"

#include <cmath>

#include "patchguard/ops.hpp"
#include "patchguard/rng.hpp"

namespace patchguard {

Shape TinyCNNConfig::feature_shape() const {
  std::size_t h = image_shape.at(1), w = image_shape.at(2);
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (pool[i]) {
      h /= 2;
      w /= 2;
    }
  }
  return {channels.empty() ? image_shape[0] : channels.back(), h, w};
}

void TinyCNNConfig::validate() const {
  if (image_shape.size() != 3) {
    throw ConfigError("cnn: image shape must be C×H×W, got " + shape_string(image_shape));
  }
  if (channels.size() != kernel_sizes.size() || channels.size() != pool.size()) {
    throw ConfigError("cnn: channels, kernel_sizes and pool must have equal length");
  }
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] == 0) throw ConfigError("cnn: zero-width conv block " + std::to_string(i));
    if (kernel_sizes[i] == 0 || kernel_sizes[i] % 2 == 0) {
      throw ConfigError("cnn: kernel size of block " + std::to_string(i) +
                        " must be odd for same padding");
    }
  }
  const auto f = feature_shape();
  if (f[1] < 1 || f[2] < 1) {
    throw ConfigError("cnn: pooling schedule shrinks " + shape_string(image_shape) +
                      " below 1×1");
  }
  if (num_classes < 2) throw ConfigError("cnn: num_classes must be at least 2");
  normalization.validate(image_shape[0]);
}

void to_json(nlohmann::json& j, const TinyCNNConfig& c) {
  j = nlohmann::json{{"arch", "cnn"},
                     {"image_shape", c.image_shape},
                     {"channels", c.channels},
                     {"kernel_sizes", c.kernel_sizes},
                     {"pool", c.pool},
                     {"num_classes", c.num_classes},
                     {"normalization", c.normalization},
                     {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, TinyCNNConfig& c) {
  TinyCNNConfig d;
  c.image_shape = j.value("image_shape", d.image_shape);
  c.channels = j.value("channels", d.channels);
  c.kernel_sizes = j.value("kernel_sizes", d.kernel_sizes);
  c.pool = j.value("pool", d.pool);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.normalization = j.value("normalization", d.normalization);
  c.init_seed = j.value("init_seed", d.init_seed);
}

template <typename T>
TinyCNN<T>::TinyCNN(TinyCNNConfig config) : config_(std::move(config)) {
  config_.validate();
  this->set_normalization(config_.normalization);
  Rng rng(derive_seed(config_.init_seed, "cnn-init"));
  std::size_t in = config_.image_shape[0];
  for (std::size_t i = 0; i < config_.channels.size(); ++i) {
    const std::size_t k = config_.kernel_sizes[i], out = config_.channels[i];
    const double stddev = std::sqrt(2.0 / static_cast<double>(in * k * k));
    Tensor<T> w({out, in, k, k});
    for (auto& v : w.data()) v = static_cast<T>(stddev * standard_normal(rng));
    this->add_parameter("conv." + std::to_string(i) + ".weight", std::move(w));
    this->add_parameter("conv." + std::to_string(i) + ".bias", Tensor<T>({out}));
    in = out;
  }
  const std::size_t flat = shape_numel(config_.feature_shape());
  const double bound = std::sqrt(6.0 / static_cast<double>(flat + config_.num_classes));
  Tensor<T> head({flat, config_.num_classes});
  for (auto& v : head.data()) v = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
  this->add_parameter("head.weight", std::move(head));
  this->add_parameter("head.bias", Tensor<T>({config_.num_classes}));
}

template <typename T>
nlohmann::json TinyCNN<T>::config_json() const {
  return config_;
}

template <typename T>
Tensor<T> TinyCNN<T>::forward(const Tensor<T>& x) const {
  if (x.shape() != config_.image_shape) {
    throw DimensionError("cnn: input " + shape_string(x.shape()) + " does not match model input " +
                         shape_string(config_.image_shape));
  }
  auto h = this->normalize_input(x);
  for (std::size_t i = 0; i < config_.channels.size(); ++i) {
    const ops::Conv2dGeometry geo{1, config_.kernel_sizes[i] / 2};
    h = ops::relu(ops::conv2d(h, p(2 * i), p(2 * i + 1), geo));
    if (config_.pool[i]) h = ops::max_pool2d(h, 2);
  }
  const std::size_t head = 2 * config_.channels.size();
  const auto flat = h.reshaped({1, h.size()});
  return ops::linear(flat, p(head), p(head + 1)).reshaped({config_.num_classes});
}

template <typename T>
T TinyCNN<T>::accumulate_gradients(const Tensor<T>& x, std::size_t label, T scale,
                                   std::vector<Tensor<T>>& grads) const {
  if (x.shape() != config_.image_shape) {
    throw DimensionError("cnn: input " + shape_string(x.shape()) + " does not match model input " +
                         shape_string(config_.image_shape));
  }
  const std::size_t blocks = config_.channels.size();
  std::vector<Tensor<T>> inputs(blocks), pre(blocks), act(blocks);
  auto h = this->normalize_input(x);
  for (std::size_t i = 0; i < blocks; ++i) {
    const ops::Conv2dGeometry geo{1, config_.kernel_sizes[i] / 2};
    inputs[i] = h;
    pre[i] = ops::conv2d(h, p(2 * i), p(2 * i + 1), geo);
    act[i] = ops::relu(pre[i]);
    h = config_.pool[i] ? ops::max_pool2d(act[i], 2) : act[i];
  }
  const std::size_t head = 2 * blocks;
  const auto flat = h.reshaped({1, h.size()});
  const auto logits = ops::linear(flat, p(head), p(head + 1));
  const std::size_t labels[] = {label};
  const auto loss = ops::softmax_cross_entropy(logits, labels);

  auto accumulate = [&](std::size_t index, const Tensor<T>& g) {
    auto& dst = grads[index];
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += scale * g[i];
  };

  const auto hg = ops::linear_backward(flat, p(head), loss.dlogits);
  accumulate(head, hg.dweight);
  accumulate(head + 1, hg.dbias);
  auto dh = hg.dx.reshaped(h.shape());
  for (std::size_t i = blocks; i-- > 0;) {
    const ops::Conv2dGeometry geo{1, config_.kernel_sizes[i] / 2};
    const auto dact = config_.pool[i] ? ops::max_pool2d_backward(act[i], 2, dh) : dh;
    const auto dpre = ops::relu_backward(pre[i], dact);
    auto cg = ops::conv2d_backward(inputs[i], p(2 * i), geo, dpre);
    accumulate(2 * i, cg.dkernel);
    accumulate(2 * i + 1, cg.dbias);
    dh = std::move(cg.dx);
  }
  return loss.loss;
}

template class TinyCNN<float>;
template class TinyCNN<double>;

}  // namespace patchguard

#include "patchguard/adam.hpp"

#include <cmath>
#include <string>

namespace patchguard {

template <typename T>
void adam_step(std::span<Parameter<T>> params, AdamState<T>& state, const AdamOptions& options) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state holds " +
                         std::to_string(state.first_moment.size()) + " moments for " +
                         std::to_string(params.size()) + " parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(options.beta1);
  const T b2 = static_cast<T>(options.beta2);
  const T correction1 = static_cast<T>(1.0 - std::pow(options.beta1, t));
  const T correction2 = static_cast<T>(1.0 - std::pow(options.beta2, t));
  const T lr = static_cast<T>(options.lr);
  const T eps = static_cast<T>(options.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    p.value.require_same_shape(p.grad, "adam_step gradient");
    p.value.require_same_shape(m, "adam_step first moment");
    p.value.require_same_shape(v, "adam_step second moment");
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const T g = p.grad[j];
      m[j] = b1 * m[j] + (T{1} - b1) * g;
      v[j] = b2 * v[j] + (T{1} - b2) * g * g;
      const T mhat = m[j] / correction1;
      const T vhat = v[j] / correction2;
      p.value[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template void adam_step<float>(std::span<Parameter<float>>, AdamState<float>&, const AdamOptions&);
template void adam_step<double>(std::span<Parameter<double>>, AdamState<double>&,
                                const AdamOptions&);

}  // namespace patchguard

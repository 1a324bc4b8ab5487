#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "patchguard/tensor.hpp"

namespace patchguard {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
  std::int64_t step = 0;

  static AdamState zeros_like(std::span<const Parameter<T>> params) {
    AdamState s;
    for (const auto& p : params) {
      s.first_moment.emplace_back(p.value.shape());
      s.second_moment.emplace_back(p.value.shape());
    }
    return s;
  }
};

/// One bias-corrected Adam update of every parameter from its `grad` buffer:
///   m ← β1·m + (1−β1)·g,  v ← β2·v + (1−β2)·g²
///   p ← p − lr·(m/(1−β1ᵗ)) / (sqrt(v/(1−β2ᵗ)) + eps)
template <typename T>
void adam_step(std::span<Parameter<T>> params, AdamState<T>& state, const AdamOptions& options);

}  // namespace patchguard

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "patchguard/model.hpp"
#include "patchguard/tensor.hpp"

namespace patchguard {

/// A differentiable function of several tensors, checked at float64.
struct DifferentiableOp {
  using Inputs = std::vector<Tensor<double>>;

  std::string name;
  /// Draws a valid evaluation point for the given seed.
  std::function<Inputs(std::uint64_t seed)> sample_inputs;
  std::function<Tensor<double>(const Inputs&)> forward;
  /// Gradients of Σ dout∘forward(inputs) with respect to each
  /// differentiable input, in order.
  std::function<Inputs(const Inputs&, const Tensor<double>& dout)> backward;
  /// Leading inputs that are differentiated; the rest (labels, geometry)
  /// are constants. Zero means all of them.
  std::size_t differentiable_inputs = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor for the relative error |a−n| / max(|a|, |n|, floor).
  double denominator_floor = 1e-6;
};

struct GradCheckReport {
  std::string op;
  bool passed = false;
  double max_relative_error = 0.0;
  std::string worst_location;
  std::size_t checked = 0;
  std::string failure;
};

/// Compares the analytic gradient of Σ R∘op(x) (R a seeded random projection)
/// against central finite differences over every input element.
GradCheckReport grad_check(const DifferentiableOp& op, std::uint64_t seed,
                           const GradCheckOptions& options = {});

/// Central-difference check of a scalar function against a supplied analytic
/// gradient, restricted to the listed coordinates. Used for end-to-end model
/// checks where only a parameter subset is probed.
GradCheckReport grad_check_scalar(const std::string& name,
                                  const std::function<double()>& loss,
                                  const std::vector<double*>& coordinates,
                                  const std::vector<double>& analytic,
                                  const GradCheckOptions& options = {});

/// Loss gradient of a whole network with respect to `coordinates` randomly
/// chosen scalar parameters (seeded), against central differences.
GradCheckReport model_grad_check(Network<double>& model, const Tensor<double>& x,
                                 std::size_t label, std::size_t coordinates, std::uint64_t seed,
                                 const GradCheckOptions& options = {});

/// Every differentiable op of the tensor core wrapped for checking.
std::vector<DifferentiableOp> registered_ops();

}  // namespace patchguard

#include "patchguard/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "patchguard/ops.hpp"
#include "patchguard/rng.hpp"

namespace patchguard {
namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = scale * standard_normal(rng);
  return t;
}

double relative_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

double projected(const Tensor<double>& y, const Tensor<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

}  // namespace

GradCheckReport grad_check(const DifferentiableOp& op, std::uint64_t seed,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  report.op = op.name;
  auto inputs = op.sample_inputs(seed);
  const auto y = op.forward(inputs);
  if (!y.all_finite()) {
    report.failure = "forward produced non-finite output";
    return report;
  }
  Rng rng(derive_seed(seed, "projection"));
  const auto proj = random_tensor(y.shape(), rng);
  const auto analytic = op.backward(inputs, proj);
  const std::size_t checked_inputs =
      op.differentiable_inputs == 0 ? inputs.size() : op.differentiable_inputs;
  if (analytic.size() != checked_inputs) {
    report.failure = "backward returned " + std::to_string(analytic.size()) + " gradients for " +
                     std::to_string(checked_inputs) + " inputs";
    return report;
  }
  for (std::size_t a = 0; a < checked_inputs; ++a) {
    if (analytic[a].shape() != inputs[a].shape()) {
      report.failure = "gradient " + std::to_string(a) + " has shape " +
                       shape_string(analytic[a].shape()) + ", input has " +
                       shape_string(inputs[a].shape());
      return report;
    }
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      const double saved = inputs[a][i];
      inputs[a][i] = saved + options.step;
      const double plus = projected(op.forward(inputs), proj);
      inputs[a][i] = saved - options.step;
      const double minus = projected(op.forward(inputs), proj);
      inputs[a][i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double exact = analytic[a][i];
      std::ostringstream where;
      where << "input " << a << " element " << i;
      if (!std::isfinite(numeric) || !std::isfinite(exact)) {
        report.failure = "non-finite gradient at " + where.str();
        report.worst_location = where.str();
        return report;
      }
      const double err = relative_error(exact, numeric, options.denominator_floor);
      ++report.checked;
      if (err >= report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_location = where.str();
      }
    }
  }
  report.passed = report.max_relative_error <= options.tolerance;
  return report;
}

GradCheckReport grad_check_scalar(const std::string& name, const std::function<double()>& loss,
                                  const std::vector<double*>& coordinates,
                                  const std::vector<double>& analytic,
                                  const GradCheckOptions& options) {
  GradCheckReport report;
  report.op = name;
  if (coordinates.size() != analytic.size()) {
    report.failure = "coordinate/gradient count mismatch";
    return report;
  }
  for (std::size_t i = 0; i < coordinates.size(); ++i) {
    double* x = coordinates[i];
    const double saved = *x;
    *x = saved + options.step;
    const double plus = loss();
    *x = saved - options.step;
    const double minus = loss();
    *x = saved;
    const double numeric = (plus - minus) / (2.0 * options.step);
    if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
      report.failure = "non-finite gradient at coordinate " + std::to_string(i);
      report.worst_location = "coordinate " + std::to_string(i);
      return report;
    }
    const double err = relative_error(analytic[i], numeric, options.denominator_floor);
    ++report.checked;
    if (err >= report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_location = "coordinate " + std::to_string(i);
    }
  }
  report.passed = report.max_relative_error <= options.tolerance;
  return report;
}

GradCheckReport model_grad_check(Network<double>& model, const Tensor<double>& x,
                                 std::size_t label, std::size_t coordinates, std::uint64_t seed,
                                 const GradCheckOptions& options) {
  auto& params = model.parameters();
  std::size_t total = 0;
  for (const auto& p : params) total += p.value.size();
  Rng gen(derive_seed(seed, "model-grad-check"));
  const auto flat = sample_without_replacement(total, std::min(coordinates, total), gen);

  std::vector<double*> coords;
  std::vector<std::string> names;
  for (std::size_t f : flat) {
    for (auto& p : params) {
      if (f < p.value.size()) {
        coords.push_back(&p.value[f]);
        names.push_back(p.name + "[" + std::to_string(f) + "]");
        break;
      }
      f -= p.value.size();
    }
  }
  auto grads = model.make_gradient_buffers();
  model.accumulate_gradients(x, label, 1.0, grads);
  std::vector<double> analytic;
  for (std::size_t f : flat) {
    for (const auto& g : grads) {
      if (f < g.size()) {
        analytic.push_back(g[f]);
        break;
      }
      f -= g.size();
    }
  }
  const auto loss = [&] {
    auto scratch = model.make_gradient_buffers();
    return model.accumulate_gradients(x, label, 0.0, scratch);
  };
  auto report = grad_check_scalar(model.architecture(), loss, coords, analytic, options);
  // Name the worst coordinate by parameter.
  const std::string prefix = "coordinate ";
  if (report.worst_location.rfind(prefix, 0) == 0) {
    const auto i = std::stoul(report.worst_location.substr(prefix.size()));
    if (i < names.size()) report.worst_location = names[i];
  }
  return report;
}

std::vector<DifferentiableOp> registered_ops() {
  using Inputs = DifferentiableOp::Inputs;
  using T = Tensor<double>;
  std::vector<DifferentiableOp> ops_list;

  ops_list.push_back(
      {"matmul",
       [](std::uint64_t seed) {
         Rng rng(seed);
         const std::size_t m = 2 + uniform_below(rng, 4), k = 2 + uniform_below(rng, 4),
                           n = 2 + uniform_below(rng, 4);
         return Inputs{random_tensor({m, k}, rng), random_tensor({k, n}, rng)};
       },
       [](const Inputs& in) { return ops::matmul(in[0], in[1]); },
       [](const Inputs& in, const T& d) {
         auto g = ops::matmul_backward(in[0], in[1], d);
         return Inputs{g.da, g.db};
       }});

  ops_list.push_back(
      {"linear",
       [](std::uint64_t seed) {
         Rng rng(seed);
         const std::size_t rows = 1 + uniform_below(rng, 4), in = 2 + uniform_below(rng, 5),
                           out = 2 + uniform_below(rng, 5);
         return Inputs{random_tensor({rows, in}, rng), random_tensor({in, out}, rng),
                       random_tensor({out}, rng)};
       },
       [](const Inputs& in) { return ops::linear(in[0], in[1], in[2]); },
       [](const Inputs& in, const T& d) {
         auto g = ops::linear_backward(in[0], in[1], d);
         return Inputs{g.dx, g.dweight, g.dbias};
       }});

  ops_list.push_back(
      {"conv2d",
       [](std::uint64_t seed) {
         Rng rng(seed);
         const std::size_t stride = 1 + uniform_below(rng, 2), pad = uniform_below(rng, 2);
         return Inputs{random_tensor({3, 6, 6}, rng), random_tensor({2, 3, 3, 3}, rng, 0.5),
                       random_tensor({2}, rng), T({2}, std::vector<double>{double(stride), double(pad)})};
       },
       [](const Inputs& in) {
         const ops::Conv2dGeometry g{static_cast<std::size_t>(in[3][0]),
                                     static_cast<std::size_t>(in[3][1])};
         return ops::conv2d(in[0], in[1], in[2], g);
       },
       [](const Inputs& in, const T& d) {
         const ops::Conv2dGeometry geo{static_cast<std::size_t>(in[3][0]),
                                       static_cast<std::size_t>(in[3][1])};
         auto g = ops::conv2d_backward(in[0], in[1], geo, d);
         return Inputs{g.dx, g.dkernel, g.dbias};
       },
       3});

  ops_list.push_back(
      {"max_pool2d",
       [](std::uint64_t seed) {
         Rng rng(seed);
         return Inputs{random_tensor({2, 4, 6}, rng)};
       },
       [](const Inputs& in) { return ops::max_pool2d(in[0], 2); },
       [](const Inputs& in, const T& d) { return Inputs{ops::max_pool2d_backward(in[0], 2, d)}; }});

  ops_list.push_back(
      {"relu",
       [](std::uint64_t seed) {
         Rng rng(seed);
         return Inputs{random_tensor({3, 5}, rng)};
       },
       [](const Inputs& in) { return ops::relu(in[0]); },
       [](const Inputs& in, const T& d) { return Inputs{ops::relu_backward(in[0], d)}; }});

  ops_list.push_back(
      {"gelu",
       [](std::uint64_t seed) {
         Rng rng(seed);
         return Inputs{random_tensor({3, 5}, rng, 2.0)};
       },
       [](const Inputs& in) { return ops::gelu(in[0]); },
       [](const Inputs& in, const T& d) { return Inputs{ops::gelu_backward(in[0], d)}; }});

  ops_list.push_back(
      {"layer_norm",
       [](std::uint64_t seed) {
         Rng rng(seed);
         return Inputs{random_tensor({2, 8}, rng), random_tensor({8}, rng),
                       random_tensor({8}, rng)};
       },
       [](const Inputs& in) { return ops::layer_norm(in[0], in[1], in[2], 1e-5); },
       [](const Inputs& in, const T& d) {
         auto g = ops::layer_norm_backward(in[0], in[1], 1e-5, d);
         return Inputs{g.dx, g.dgamma, g.dbeta};
       }});

  ops_list.push_back(
      {"attention",
       [](std::uint64_t seed) {
         Rng rng(seed);
         return Inputs{random_tensor({4, 8}, rng), random_tensor({4, 8}, rng),
                       random_tensor({4, 8}, rng)};
       },
       [](const Inputs& in) { return ops::attention(in[0], in[1], in[2], 2); },
       [](const Inputs& in, const T& d) {
         auto g = ops::attention_backward(in[0], in[1], in[2], 2, d);
         return Inputs{g.dq, g.dk, g.dv};
       }});

  ops_list.push_back(
      {"softmax_cross_entropy",
       [](std::uint64_t seed) {
         Rng rng(seed);
         // Labels travel in a second (non-differentiated) input.
         T labels({3});
         for (auto& l : labels.data()) l = static_cast<double>(uniform_below(rng, 5));
         return Inputs{random_tensor({3, 5}, rng), labels};
       },
       [](const Inputs& in) {
         std::vector<std::size_t> labels;
         for (double l : in[1].data()) labels.push_back(static_cast<std::size_t>(l));
         return T({1}, std::vector<double>{ops::softmax_cross_entropy(in[0], labels).loss});
       },
       [](const Inputs& in, const T& d) {
         std::vector<std::size_t> labels;
         for (double l : in[1].data()) labels.push_back(static_cast<std::size_t>(l));
         auto g = ops::softmax_cross_entropy(in[0], labels).dlogits;
         g *= d[0];
         return Inputs{g};
       },
       1});

  return ops_list;
}

}  // namespace patchguard

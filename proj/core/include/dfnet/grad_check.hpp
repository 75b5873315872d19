#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dfnet/ops.hpp"
#include "dfnet/tensor.hpp"

namespace dfnet {

struct GradCheckReport {
  std::string op_name;
  double max_rel_error = 0.0;
  bool passed = false;
  double tolerance = 0.0;
};

/// Scalar-valued function of a set of tensors, rebuilt on every call.
using GradFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares reverse-mode gradients of `op` against central finite
/// differences in 64-bit precision. Relative error uses the denominator
/// max(|analytic|, |numeric|, 1e-8).
inline GradCheckReport grad_check(const std::string& op_name, const GradFn& op,
                                  std::vector<Tensor<double>> inputs, double tolerance,
                                  double step = 1e-5) {
  for (auto& in : inputs) in.set_requires_grad(true);

  Tensor<double> y = op(inputs);
  check_shape(y.size() == 1, "grad_check: op must be scalar-valued");
  y.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) {
    std::vector<double> g(in.grad().begin(), in.grad().end());
    if (g.empty()) g.assign(static_cast<std::size_t>(in.size()), 0.0);
    for (double v : g)
      check_value(std::isfinite(v), "grad_check: non-finite gradient in op " + op_name);
    analytic.push_back(std::move(g));
    in.zero_grad();
  }

  double max_rel = 0.0;
  {
    NoGradGuard ng;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      auto vals = inputs[i].data_mut();
      for (std::size_t e = 0; e < vals.size(); ++e) {
        const double orig = vals[e];
        vals[e] = orig + step;
        const double fp = op(inputs).item();
        vals[e] = orig - step;
        const double fm = op(inputs).item();
        vals[e] = orig;
        const double numeric = (fp - fm) / (2.0 * step);
        check_value(std::isfinite(numeric),
                    "grad_check: non-finite finite-difference value in op " + op_name);
        const double ana = analytic[i][e];
        const double denom = std::max({std::fabs(ana), std::fabs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::fabs(ana - numeric) / denom);
      }
    }
  }
  return {op_name, max_rel, max_rel <= tolerance, tolerance};
}

}  // namespace dfnet

#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fuselab/ops.hpp"

namespace fuselab {

struct GradCheckResult {
  double max_rel_error = 0.0;  // over elements whose absolute error exceeds abs_tol
  double max_abs_error = 0.0;
  std::size_t elements = 0;
  bool passed = true;
};

struct GradCheckOptions {
  double step = 1e-5;
  double rel_tol = 1e-4;
  double abs_tol = 1e-7;
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares reverse-mode gradients of `f` at `inputs` against central finite
/// differences. Inputs must be leaves with requires_grad set.
inline GradCheckResult check_gradients(const ScalarFn& f, std::vector<Tensor> inputs,
                                       const GradCheckOptions& opt = {}) {
  for (auto& in : inputs) in.zero_grad();
  Tensor loss = f(inputs);
  backward(loss);

  GradCheckResult result;
  for (auto& in : inputs) {
    if (!in.requires_grad()) continue;
    std::vector<double> analytic(in.size(), 0.0);
    if (in.has_grad()) analytic.assign(in.grad().begin(), in.grad().end());
    auto values = in.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      double plus, minus;
      {
        NoGradGuard guard;
        values[i] = saved + opt.step;
        plus = f(inputs).item();
        values[i] = saved - opt.step;
        minus = f(inputs).item();
      }
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * opt.step);
      const double err = std::abs(analytic[i] - numeric);
      result.max_abs_error = std::max(result.max_abs_error, err);
      if (err > opt.abs_tol) {
        const double rel = err / std::max(std::abs(analytic[i]), std::abs(numeric));
        result.max_rel_error = std::max(result.max_rel_error, rel);
        if (rel >= opt.rel_tol) result.passed = false;
      }
      ++result.elements;
    }
  }
  return result;
}

/// Uniform tensor in [lo, hi] flagged for gradient.
inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0,
                            bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

/// Reduces `t` to a scalar through fixed random weights so every output
/// element contributes a distinct coefficient.
inline Tensor random_projection(const Tensor& t, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor w = random_tensor(t.shape(), rng, -1.0, 1.0, false);
  return sum(mul(t, w));
}

}  // namespace fuselab

#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "fuselab/layers.hpp"

namespace fuselab {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moments are keyed by parameter name, so the update of one parameter never
/// depends on where it sits in the registration order.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> first;
  std::map<std::string, std::vector<double>> second;
};

class MissingGradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One bias-corrected Adam update over `params`. Gradients are read, not cleared.
inline void adam_step(const ParameterList& params, AdamState& state) {
  for (const auto& p : params)
    if (!p.value.has_grad()) throw MissingGradientError("parameter '" + p.name + "' has no gradient");
  ++state.step;
  const auto& cfg = state.config;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto p : params) {
    auto g = p.value.grad();
    auto& m = state.first[p.name];
    auto& v = state.second[p.name];
    if (m.empty()) {
      m.assign(g.size(), 0.0);
      v.assign(g.size(), 0.0);
    }
    if (m.size() != g.size()) throw DimensionError("optimizer state shape changed for '" + p.name + "'");
    auto w = p.value.mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace fuselab

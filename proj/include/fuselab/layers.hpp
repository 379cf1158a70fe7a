#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fuselab/ops.hpp"
#include "fuselab/random.hpp"

namespace fuselab {

enum class Mode { train, eval };

/// A named trainable tensor. Names are dotted paths, e.g. "encoder.text.lstm.W_ih".
struct Parameter {
  std::string name;
  Tensor value;
};

using ParameterList = std::vector<Parameter>;

inline std::size_t count_parameters(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

inline void zero_grads(const ParameterList& params) {
  for (auto p : params) p.value.zero_grad();
}

inline std::string join_name(const std::string& prefix, const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

/// Temporarily stops a set of parameters from taking gradient.
class FreezeGuard {
 public:
  explicit FreezeGuard(ParameterList params) : params_(std::move(params)) {
    for (auto& p : params_) p.value.set_requires_grad(false);
  }
  ~FreezeGuard() {
    for (auto& p : params_) p.value.set_requires_grad(true);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  ParameterList params_;
};

inline Tensor uniform_param(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

// ---------------------------------------------------------------------------

/// x * W + b with W uniform in +-1/sqrt(fan_in).
class Affine {
 public:
  Affine() = default;
  Affine(std::size_t in, std::size_t out, Rng& rng)
      : weight_(uniform_param({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng)),
        bias_(uniform_param({out}, 1.0 / std::sqrt(static_cast<double>(in)), rng)) {}

  Tensor operator()(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(1) != in_features())
      throw DimensionError("affine expects [b x " + std::to_string(in_features()) + "], got " + to_string(x.shape()));
    return add(matmul(x, weight_), bias_);
  }

  std::size_t in_features() const { return weight_.dim(0); }
  std::size_t out_features() const { return weight_.dim(1); }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

  void collect(ParameterList& out, const std::string& prefix) const {
    out.push_back({join_name(prefix, "W"), weight_});
    out.push_back({join_name(prefix, "b"), bias_});
  }

 private:
  Tensor weight_;
  Tensor bias_;
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(std::size_t vocab, std::size_t dim, Rng& rng) : table_(uniform_param({vocab, dim}, 0.5, rng)) {}

  Tensor operator()(const std::vector<int>& ids) const { return gather_rows(table_, ids); }
  std::size_t vocab_size() const { return table_.dim(0); }
  std::size_t dim() const { return table_.dim(1); }
  Tensor& table() { return table_; }

  void collect(ParameterList& out, const std::string& prefix) const { out.push_back({join_name(prefix, "E"), table_}); }

 private:
  Tensor table_;
};

struct LstmState {
  Tensor h;
  Tensor c;
};

/// Standard LSTM cell. Gate blocks along the 4h axis are ordered i, f, o, g;
/// the forget-gate bias starts at 1.
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(std::size_t input, std::size_t hidden, Rng& rng) : hidden_(hidden) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    w_ih_ = uniform_param({input, 4 * hidden}, bound, rng);
    w_hh_ = uniform_param({hidden, 4 * hidden}, bound, rng);
    std::vector<double> b(4 * hidden, 0.0);
    for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = 1.0;
    bias_ = Tensor({4 * hidden}, std::move(b), true);
  }

  LstmState step(const Tensor& x, const LstmState& state) const {
    if (x.rank() != 2 || x.dim(1) != w_ih_.dim(0))
      throw DimensionError("lstm input expects [b x " + std::to_string(w_ih_.dim(0)) + "], got " +
                           to_string(x.shape()));
    if (state.h.shape() != Shape{x.dim(0), hidden_} || state.c.shape() != state.h.shape())
      throw DimensionError("lstm state shape mismatch: " + to_string(state.h.shape()));
    Tensor gates = add(add(matmul(x, w_ih_), matmul(state.h, w_hh_)), bias_);
    Tensor i = sigmoid(slice(gates, 1, 0, hidden_));
    Tensor f = sigmoid(slice(gates, 1, hidden_, hidden_));
    Tensor o = sigmoid(slice(gates, 1, 2 * hidden_, hidden_));
    Tensor g = tanh(slice(gates, 1, 3 * hidden_, hidden_));
    Tensor c = add(mul(f, state.c), mul(i, g));
    Tensor h = mul(o, tanh(c));
    return {h, c};
  }

  LstmState zero_state(std::size_t batch) const {
    return {Tensor::zeros({batch, hidden_}), Tensor::zeros({batch, hidden_})};
  }

  std::size_t hidden() const { return hidden_; }
  std::size_t input() const { return w_ih_.dim(0); }
  Tensor& w_ih() { return w_ih_; }
  Tensor& w_hh() { return w_hh_; }
  Tensor& bias() { return bias_; }

  void collect(ParameterList& out, const std::string& prefix) const {
    out.push_back({join_name(prefix, "W_ih"), w_ih_});
    out.push_back({join_name(prefix, "W_hh"), w_hh_});
    out.push_back({join_name(prefix, "b"), bias_});
  }

 private:
  std::size_t hidden_ = 0;
  Tensor w_ih_;
  Tensor w_hh_;
  Tensor bias_;
};

/// Per-feature batch normalization (eps 1e-5, running-stat momentum 0.9).
class BatchNorm {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.9;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t dim)
      : gamma_(Tensor::full({dim}, 1.0, true)),
        beta_(Tensor::zeros({dim}, true)),
        running_mean_(Tensor::zeros({dim})),
        running_var_(Tensor::full({dim}, 1.0)) {}

  Tensor operator()(const Tensor& x, Mode mode) {
    if (x.rank() != 2 || x.dim(1) != gamma_.size())
      throw DimensionError("batch_norm expects [b x " + std::to_string(gamma_.size()) + "], got " +
                           to_string(x.shape()));
    if (mode == Mode::eval) {
      Tensor inv_std = div(Tensor::scalar(1.0), sqrt(add_scalar(running_var_, kEps)));
      return add(mul(mul(sub(x, running_mean_), inv_std), gamma_), beta_);
    }
    if (x.dim(0) < 2) throw DimensionError("batch_norm in train mode needs a batch of at least 2");
    Tensor mu = mean(x, 0);
    Tensor centered = sub(x, mu);
    Tensor var = mean(square(centered), 0);
    Tensor inv_std = div(Tensor::scalar(1.0), sqrt(add_scalar(var, kEps)));
    auto rm = running_mean_.mutable_data();
    auto rv = running_var_.mutable_data();
    for (std::size_t j = 0; j < rm.size(); ++j) {
      rm[j] = kMomentum * rm[j] + (1.0 - kMomentum) * mu[j];
      rv[j] = kMomentum * rv[j] + (1.0 - kMomentum) * var[j];
    }
    return add(mul(mul(centered, inv_std), gamma_), beta_);
  }

  Tensor& gamma() { return gamma_; }
  Tensor& beta() { return beta_; }
  const Tensor& running_mean() const { return running_mean_; }
  const Tensor& running_var() const { return running_var_; }

  void collect(ParameterList& out, const std::string& prefix) const {
    out.push_back({join_name(prefix, "gamma"), gamma_});
    out.push_back({join_name(prefix, "beta"), beta_});
  }
  void collect_buffers(ParameterList& out, const std::string& prefix) const {
    out.push_back({join_name(prefix, "running_mean"), running_mean_});
    out.push_back({join_name(prefix, "running_var"), running_var_});
  }

 private:
  Tensor gamma_;
  Tensor beta_;
  Tensor running_mean_;
  Tensor running_var_;
};

/// Inverted dropout: train mode zeroes with probability p and scales the
/// survivors by 1/(1-p); eval mode is the identity.
inline Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout probability must be in [0, 1), got " + std::to_string(p));
  if (mode == Mode::eval || p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<double> m(x.size());
  for (auto& v : m) v = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  return mul(x, Tensor(x.shape(), std::move(m)));
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean negative log-likelihood of `targets` under row-softmax of `logits`,
/// skipping positions equal to `ignore_index`.
inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_index = -1) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size())
    throw DimensionError("cross entropy expects [n x V] logits for " + std::to_string(targets.size()) +
                         " targets, got " + to_string(logits.shape()));
  const std::size_t n = logits.dim(0), v = logits.dim(1);
  const auto x = logits.data();
  std::vector<double> probs(n * v, 0.0);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] == ignore_index) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v)
      throw std::out_of_range("target " + std::to_string(targets[r]) + " outside [0, " + std::to_string(v) + ")");
    const double* row = x.data() + r * v;
    double hi = row[0];
    for (std::size_t j = 1; j < v; ++j) hi = std::max(hi, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += (probs[r * v + j] = std::exp(row[j] - hi));
    for (std::size_t j = 0; j < v; ++j) probs[r * v + j] /= z;
    total += std::log(z) + hi - row[targets[r]];
    ++count;
  }
  const double denom = count ? static_cast<double>(count) : 1.0;
  return detail::make_result({}, {total / denom}, {logits},
                             [probs = std::move(probs), targets, ignore_index, n, v, denom](
                                 const TensorImpl& o, std::span<const detail::InputRef> in) {
                               auto* g = detail::grad_of(in[0]);
                               if (!g) return;
                               const double go = o.grad[0] / denom;
                               for (std::size_t r = 0; r < n; ++r) {
                                 if (targets[r] == ignore_index) continue;
                                 for (std::size_t j = 0; j < v; ++j) (*g)[r * v + j] += go * probs[r * v + j];
                                 (*g)[r * v + targets[r]] -= go;
                               }
                             });
}

/// Multi-class hinge: mean over rows of sum_{j != y} max(0, margin + s_j - s_y).
inline Tensor multiclass_hinge(const Tensor& logits, const std::vector<int>& targets, double margin = 1.0) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size())
    throw DimensionError("hinge expects [n x C] logits for " + std::to_string(targets.size()) + " targets");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  const auto x = logits.data();
  std::vector<double> active(n * c, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= c)
      throw std::out_of_range("target " + std::to_string(targets[r]) + " outside [0, " + std::to_string(c) + ")");
    const double sy = x[r * c + targets[r]];
    for (std::size_t j = 0; j < c; ++j) {
      if (static_cast<int>(j) == targets[r]) continue;
      const double m = margin + x[r * c + j] - sy;
      if (m > 0) {
        total += m;
        active[r * c + j] = 1.0;
      }
    }
  }
  return detail::make_result({}, {total / static_cast<double>(n)}, {logits},
                             [active = std::move(active), targets, n, c](const TensorImpl& o,
                                                                         std::span<const detail::InputRef> in) {
                               auto* g = detail::grad_of(in[0]);
                               if (!g) return;
                               const double go = o.grad[0] / static_cast<double>(n);
                               for (std::size_t r = 0; r < n; ++r)
                                 for (std::size_t j = 0; j < c; ++j)
                                   if (active[r * c + j] != 0.0) {
                                     (*g)[r * c + j] += go;
                                     (*g)[r * c + targets[r]] -= go;
                                   }
                             });
}

}  // namespace fuselab

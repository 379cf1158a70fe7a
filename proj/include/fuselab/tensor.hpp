#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace fuselab {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericDomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

struct TensorImpl;

namespace detail {

/// One input edge of a recorded operation. `takes_grad` is fixed when the
/// operation runs, so freezing a parameter afterwards does not matter.
struct InputRef {
  TensorImpl* impl;
  bool takes_grad;
  TensorImpl* operator->() const { return impl; }
};

/// Backward rule of one recorded operation. Reads `out.grad` and accumulates
/// into the grads of inputs that take gradient.
using BackwardFn = std::function<void(const TensorImpl& out, std::span<const InputRef> inputs)>;

struct Node {
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::vector<std::uint8_t> takes_grad;
  BackwardFn backward;
  bool consumed = false;
};

inline std::uint64_t& sequence_counter() {
  thread_local std::uint64_t counter = 0;
  return counter;
}

inline int& no_grad_depth() {
  thread_local int depth = 0;
  return depth;
}

}  // namespace detail

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  bool has_grad = false;
  std::vector<double> grad;
  std::shared_ptr<detail::Node> node;

  /// Zero-initialized grad buffer, allocated on first use.
  std::vector<double>& grad_buffer() {
    if (!has_grad) {
      grad.assign(data.size(), 0.0);
      has_grad = true;
    }
    return grad;
  }
};

inline bool grad_enabled() { return detail::no_grad_depth() == 0; }

/// Disables graph recording for the enclosing scope (per thread).
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth(); }
  ~NoGradGuard() { --detail::no_grad_depth(); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Dense row-major float64 tensor. Copies share storage; use clone() for a
/// deep copy.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : impl_(std::make_shared<TensorImpl>()) {
    for (auto d : shape)
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + fuselab::to_string(shape));
    if (numel(shape) != data.size())
      throw DimensionError("shape " + fuselab::to_string(shape) + " does not match " +
                           std::to_string(data.size()) + " values");
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }
  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({}, {value}, requires_grad);
  }
  static Tensor vector(std::vector<double> values, bool requires_grad = false) {
    const auto n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
  }

  bool defined() const { return static_cast<bool>(impl_); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t size() const { return impl_->data.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + fuselab::to_string(shape()));
    return impl_->data[0];
  }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return impl_->data[r * impl_->shape.back() + c]; }

  bool requires_grad() const { return impl_->requires_grad; }
  /// Only valid on leaves; interior nodes derive the flag from their inputs.
  Tensor& set_requires_grad(bool flag) {
    if (impl_->node) throw GraphError("requires_grad can only be changed on leaf tensors");
    impl_->requires_grad = flag;
    return *this;
  }
  bool is_leaf() const { return !impl_->node; }

  bool has_grad() const { return impl_->has_grad; }
  std::span<const double> grad() const {
    if (!impl_->has_grad) return {};
    return impl_->grad;
  }
  Tensor grad_tensor() const {
    if (!impl_->has_grad) throw GraphError("tensor has no gradient");
    return Tensor(impl_->shape, impl_->grad);
  }
  void zero_grad() {
    impl_->grad.clear();
    impl_->has_grad = false;
  }

  Tensor clone() const { return Tensor(impl_->shape, impl_->data, impl_->requires_grad); }

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

  static Tensor from_impl(std::shared_ptr<TensorImpl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
  }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

namespace detail {

/// Creates the result of an operation and, when any input requires grad and
/// recording is enabled, attaches a graph node carrying `backward`.
inline Tensor make_result(Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                          BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  auto node = std::make_shared<Node>();
  node->seq = ++sequence_counter();
  node->inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    node->inputs.push_back(in.impl_ptr());
    node->takes_grad.push_back(in.requires_grad() ? 1 : 0);
  }
  node->backward = std::move(backward);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

inline Tensor make_result(Shape shape, std::vector<double> data, const std::vector<Tensor>& inputs,
                          BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (!needs) return out;
  auto node = std::make_shared<Node>();
  node->seq = ++sequence_counter();
  node->inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    node->inputs.push_back(in.impl_ptr());
    node->takes_grad.push_back(in.requires_grad() ? 1 : 0);
  }
  node->backward = std::move(backward);
  out.impl()->requires_grad = true;
  out.impl()->node = std::move(node);
  return out;
}

/// Grad buffer of an input edge, or nullptr when it does not take gradient.
inline std::vector<double>* grad_of(const InputRef& in) {
  return in.takes_grad ? &in.impl->grad_buffer() : nullptr;
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls; interior gradients are recomputed. The traversed graph is consumed
/// unless `retain_graph` is set.
inline void backward(const Tensor& loss, bool retain_graph = false) {
  if (!loss.defined()) throw GraphError("backward on undefined tensor");
  if (loss.size() != 1)
    throw DimensionError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  if (!loss.requires_grad()) throw GraphError("loss does not require grad");

  std::vector<TensorImpl*> interior;
  std::vector<std::shared_ptr<TensorImpl>> keep_alive;
  std::unordered_set<TensorImpl*> seen;
  std::vector<TensorImpl*> stack{loss.impl()};
  seen.insert(loss.impl());
  while (!stack.empty()) {
    TensorImpl* t = stack.back();
    stack.pop_back();
    if (!t->node) continue;
    if (t->node->consumed) throw GraphError("backward through a graph that was already consumed");
    interior.push_back(t);
    for (std::size_t i = 0; i < t->node->inputs.size(); ++i) {
      const auto& in = t->node->inputs[i];
      if (t->node->takes_grad[i] && seen.insert(in.get()).second) {
        stack.push_back(in.get());
        keep_alive.push_back(in);
      }
    }
  }
  std::sort(interior.begin(), interior.end(),
            [](const TensorImpl* a, const TensorImpl* b) { return a->node->seq > b->node->seq; });

  for (TensorImpl* t : interior) {
    t->grad.assign(t->data.size(), 0.0);
    t->has_grad = true;
  }
  loss.impl()->grad[0] = 1.0;

  std::vector<detail::InputRef> raw_inputs;
  for (TensorImpl* t : interior) {
    auto& node = *t->node;
    raw_inputs.clear();
    for (std::size_t i = 0; i < node.inputs.size(); ++i)
      raw_inputs.push_back({node.inputs[i].get(), node.takes_grad[i] != 0});
    node.backward(*t, raw_inputs);
  }
  if (!retain_graph) {
    for (TensorImpl* t : interior) {
      t->node->consumed = true;
      t->node->backward = nullptr;
      t->node->inputs.clear();
      t->node->takes_grad.clear();
    }
  }
}

/// Same storage values, no graph history.
inline Tensor detach(const Tensor& t) { return Tensor(t.shape(), std::vector<double>(t.data().begin(), t.data().end())); }

}  // namespace fuselab

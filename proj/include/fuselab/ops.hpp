#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fuselab/tensor.hpp"

namespace fuselab {

namespace detail {

// Operand broadcast against the output shape. Only bias-style expansion is
// supported: a scalar, a trailing row vector [n] / [1,n], or a column [m,1].
enum class Bcast { full, scalar, row, col };

inline Bcast classify_operand(const Shape& operand, const Shape& out) {
  if (operand == out) return Bcast::full;
  if (numel(operand) == 1) return Bcast::scalar;
  if (out.size() >= 2) {
    const auto n = out.back();
    const auto m = numel(out) / n;
    if ((operand.size() == 1 && operand[0] == n) || (operand.size() == 2 && operand[0] == 1 && operand[1] == n))
      return Bcast::row;
    if (out.size() == 2 && operand.size() == 2 && operand[0] == m && operand[1] == 1) return Bcast::col;
  }
  throw DimensionError("cannot broadcast " + to_string(operand) + " to " + to_string(out));
}

inline std::size_t bcast_index(Bcast kind, std::size_t i, std::size_t cols) {
  switch (kind) {
    case Bcast::full: return i;
    case Bcast::scalar: return 0;
    case Bcast::row: return i % cols;
    case Bcast::col: return i / cols;
  }
  return i;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (numel(a) >= numel(b) && a.size() >= b.size()) return a;
  return b;
}

enum class BinaryKind { add, sub, mul, div };

inline Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const Bcast ka = classify_operand(a.shape(), out_shape);
  const Bcast kb = classify_operand(b.shape(), out_shape);
  const std::size_t cols = out_shape.empty() ? 1 : out_shape.back();
  const std::size_t n = numel(out_shape);
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = ad[bcast_index(ka, i, cols)];
    const double y = bd[bcast_index(kb, i, cols)];
    switch (kind) {
      case BinaryKind::add: out[i] = x + y; break;
      case BinaryKind::sub: out[i] = x - y; break;
      case BinaryKind::mul: out[i] = x * y; break;
      case BinaryKind::div:
        if (y == 0.0) throw NumericDomainError("division by zero");
        out[i] = x / y;
        break;
    }
  }
  return make_result(out_shape, std::move(out), {a, b},
                     [ka, kb, cols, kind](const TensorImpl& o, std::span<const detail::InputRef> in) {
                       auto* ga = grad_of(in[0]);
                       auto* gb = grad_of(in[1]);
                       const auto& av = in[0]->data;
                       const auto& bv = in[1]->data;
                       const auto& g = o.grad;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const std::size_t ia = bcast_index(ka, i, cols);
                         const std::size_t ib = bcast_index(kb, i, cols);
                         switch (kind) {
                           case BinaryKind::add:
                             if (ga) (*ga)[ia] += g[i];
                             if (gb) (*gb)[ib] += g[i];
                             break;
                           case BinaryKind::sub:
                             if (ga) (*ga)[ia] += g[i];
                             if (gb) (*gb)[ib] -= g[i];
                             break;
                           case BinaryKind::mul:
                             if (ga) (*ga)[ia] += g[i] * bv[ib];
                             if (gb) (*gb)[ib] += g[i] * av[ia];
                             break;
                           case BinaryKind::div:
                             if (ga) (*ga)[ia] += g[i] / bv[ib];
                             if (gb) (*gb)[ib] -= g[i] * av[ia] / (bv[ib] * bv[ib]);
                             break;
                         }
                       }
                     });
}

/// Elementwise map with derivative expressed through input x and output y.
template <class F, class DF>
Tensor unary(const Tensor& x, F f, DF df) {
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  return make_result(x.shape(), std::move(out), {x},
                     [df](const TensorImpl& o, std::span<const detail::InputRef> in) {
                       auto* gx = grad_of(in[0]);
                       if (!gx) return;
                       const auto& xv = in[0]->data;
                       for (std::size_t i = 0; i < o.grad.size(); ++i) (*gx)[i] += o.grad[i] * df(xv[i], o.data[i]);
                     });
}

inline std::size_t normalize_axis(long axis, std::size_t rank) {
  const long r = static_cast<long>(rank);
  if (axis < -r || axis >= r)
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::add); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::sub); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::mul); }
inline Tensor div(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinaryKind::div); }

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary(x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}
inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}
inline Tensor neg(const Tensor& x) { return scale(x, -1.0); }

inline Tensor tanh(const Tensor& x) {
  return detail::unary(x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline double sigmoid_value(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(x, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor leaky_relu(const Tensor& x, double alpha = 0.2) {
  return detail::unary(
      x, [alpha](double v) { return v >= 0 ? v : alpha * v; },
      [alpha](double v, double) { return v >= 0 ? 1.0 : alpha; });
}

inline Tensor exp(const Tensor& x) {
  for (double v : x.data())
    if (!std::isfinite(std::exp(v))) throw NumericDomainError("exp overflow at input " + std::to_string(v));
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  for (double v : x.data())
    if (!(v > 0.0)) throw NumericDomainError("log of non-positive value " + std::to_string(v));
  return detail::unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor sqrt(const Tensor& x) {
  for (double v : x.data())
    if (!(v > 0.0)) throw NumericDomainError("sqrt of non-positive value " + std::to_string(v));
  return detail::unary(x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

/// max(x, lo); gradient passes only where x > lo.
inline Tensor clamp_min(const Tensor& x, double lo) {
  return detail::unary(
      x, [lo](double v) { return v > lo ? v : lo; }, [lo](double v, double) { return v > lo ? 1.0 : 0.0; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }
inline Tensor operator+(double c, const Tensor& a) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return add_scalar(a, -c); }
inline Tensor operator-(double c, const Tensor& a) { return add_scalar(neg(a), c); }

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul shape mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bd.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return detail::make_result({m, n}, std::move(out), {a, b},
                             [m, k, n](const TensorImpl& o, std::span<const detail::InputRef> in) {
                               const auto& g = o.grad;
                               if (auto* ga = detail::grad_of(in[0])) {
                                 // dA = dC * B^T
                                 const auto& bv = in[1]->data;
                                 for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t p = 0; p < k; ++p) {
                                     const double* grow = g.data() + i * n;
                                     const double* brow = bv.data() + p * n;
                                     double s = 0.0;
                                     for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
                                     (*ga)[i * k + p] += s;
                                   }
                               }
                               if (auto* gb = detail::grad_of(in[1])) {
                                 // dB = A^T * dC
                                 const auto& av = in[0]->data;
                                 for (std::size_t i = 0; i < m; ++i) {
                                   const double* grow = g.data() + i * n;
                                   for (std::size_t p = 0; p < k; ++p) {
                                     const double aval = av[i * k + p];
                                     if (aval == 0.0) continue;
                                     double* gbrow = gb->data() + p * n;
                                     for (std::size_t j = 0; j < n; ++j) gbrow[j] += aval * grow[j];
                                   }
                                 }
                               }
                             });
}

// ---------------------------------------------------------------------------
// Structural
// ---------------------------------------------------------------------------

inline Tensor concat(const std::vector<Tensor>& parts, long axis_in = -1) {
  if (parts.empty()) throw DimensionError("concat of an empty list");
  if (parts.size() == 1) return parts.front();
  const Shape& first = parts.front().shape();
  const std::size_t axis = detail::normalize_axis(axis_in, first.size());
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = (d == axis) || s[d] == first[d];
    if (!ok) throw DimensionError("concat shape mismatch: " + to_string(first) + " vs " + to_string(s));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_axis = out_shape[axis];
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[axis]);

  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto pd = parts[pi].data();
    const std::size_t w = widths[pi];
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pd.data() + o * w * inner, w * inner, out.data() + (o * out_axis + offset) * inner);
    offset += w;
  }
  return detail::make_result(out_shape, std::move(out), parts,
                             [widths, outer, inner, out_axis](const TensorImpl& o, std::span<const detail::InputRef> in) {
                               std::size_t off = 0;
                               for (std::size_t pi = 0; pi < in.size(); ++pi) {
                                 const std::size_t w = widths[pi];
                                 if (auto* g = detail::grad_of(in[pi])) {
                                   for (std::size_t r = 0; r < outer; ++r) {
                                     const double* src = o.grad.data() + (r * out_axis + off) * inner;
                                     double* dst = g->data() + r * w * inner;
                                     for (std::size_t j = 0; j < w * inner; ++j) dst[j] += src[j];
                                   }
                                 }
                                 off += w;
                               }
                             });
}

/// Contiguous range [start, start+length) along `axis`.
inline Tensor slice(const Tensor& x, long axis_in, std::size_t start, std::size_t length) {
  const std::size_t axis = detail::normalize_axis(axis_in, x.rank());
  const Shape& s = x.shape();
  if (length == 0 || start + length > s[axis])
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for " + to_string(s));
  Shape out_shape = s;
  out_shape[axis] = length;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t full = s[axis];
  const auto xd = x.data();
  std::vector<double> out(numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xd.data() + (o * full + start) * inner, length * inner, out.data() + o * length * inner);
  return detail::make_result(out_shape, std::move(out), {x},
                             [outer, inner, full, start, length](const TensorImpl& o, std::span<const detail::InputRef> in) {
                               auto* g = detail::grad_of(in[0]);
                               if (!g) return;
                               for (std::size_t r = 0; r < outer; ++r) {
                                 const double* src = o.grad.data() + r * length * inner;
                                 double* dst = g->data() + (r * full + start) * inner;
                                 for (std::size_t j = 0; j < length * inner; ++j) dst[j] += src[j];
                               }
                             });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size())
    throw DimensionError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  return detail::make_result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()), {x},
                             [](const TensorImpl& o, std::span<const detail::InputRef> in) {
                               auto* g = detail::grad_of(in[0]);
                               if (!g) return;
                               for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[i] += o.grad[i];
                             });
}

/// Stacks L tensors of shape [b x h] into [b x L x h].
inline Tensor stack_steps(const std::vector<Tensor>& steps) {
  if (steps.empty()) throw DimensionError("stack_steps of an empty list");
  std::vector<Tensor> expanded;
  expanded.reserve(steps.size());
  for (const auto& s : steps) {
    if (s.rank() != 2 || s.shape() != steps.front().shape())
      throw DimensionError("stack_steps expects equal [b x h] tensors, got " + to_string(s.shape()));
    expanded.push_back(reshape(s, {s.dim(0), 1, s.dim(1)}));
  }
  if (expanded.size() == 1) return expanded.front();
  return concat(expanded, 1);
}

/// Rows of `table` selected by `ids`: the embedding lookup.
inline Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw DimensionError("gather_rows expects a matrix, got " + to_string(table.shape()));
  const std::size_t rows = table.dim(0), cols = table.dim(1);
  if (ids.empty()) throw DimensionError("gather_rows with no ids");
  const auto td = table.data();
  std::vector<double> out(ids.size() * cols);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows)
      throw DimensionError("id " + std::to_string(ids[i]) + " outside table of " + std::to_string(rows) + " rows");
    std::copy_n(td.data() + ids[i] * cols, cols, out.data() + i * cols);
  }
  return detail::make_result({ids.size(), cols}, std::move(out), {table},
                             [ids, cols](const TensorImpl& o, std::span<const detail::InputRef> in) {
                               auto* g = detail::grad_of(in[0]);
                               if (!g) return;
                               for (std::size_t i = 0; i < ids.size(); ++i) {
                                 double* dst = g->data() + ids[i] * cols;
                                 const double* src = o.grad.data() + i * cols;
                                 for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
                               }
                             });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

enum class Reduce { sum, mean, max };

/// Reduces over all elements (scalar result) or over one axis (axis removed).
inline Tensor reduce(Reduce op, const Tensor& x, std::optional<long> axis_in = std::nullopt) {
  const Shape& s = x.shape();
  std::size_t outer = 1, len = x.size(), inner = 1;
  Shape out_shape;
  if (axis_in) {
    const std::size_t axis = detail::normalize_axis(*axis_in, s.size());
    len = s[axis];
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis) out_shape.push_back(s[d]);
  }
  const auto xd = x.data();
  std::vector<double> out(outer * inner);
  std::vector<std::size_t> argmax(op == Reduce::max ? out.size() : 0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * len * inner + j;
      double acc = op == Reduce::max ? -std::numeric_limits<double>::infinity() : 0.0;
      std::size_t best = 0;
      for (std::size_t r = 0; r < len; ++r) {
        const double v = xd[base + r * inner];
        if (op == Reduce::max) {
          if (v > acc) {
            acc = v;
            best = r;
          }
        } else {
          acc += v;
        }
      }
      if (op == Reduce::mean) acc /= static_cast<double>(len);
      out[o * inner + j] = acc;
      if (op == Reduce::max) argmax[o * inner + j] = best;
    }
  return detail::make_result(
      out_shape, std::move(out), {x},
      [op, outer, len, inner, argmax](const TensorImpl& o, std::span<const detail::InputRef> in) {
        auto* g = detail::grad_of(in[0]);
        if (!g) return;
        const double w = op == Reduce::mean ? 1.0 / static_cast<double>(len) : 1.0;
        for (std::size_t oi = 0; oi < outer; ++oi)
          for (std::size_t j = 0; j < inner; ++j) {
            const std::size_t base = oi * len * inner + j;
            const double go = o.grad[oi * inner + j];
            if (op == Reduce::max) {
              (*g)[base + argmax[oi * inner + j] * inner] += go;
            } else {
              for (std::size_t r = 0; r < len; ++r) (*g)[base + r * inner] += go * w;
            }
          }
      });
}

inline Tensor sum(const Tensor& x, std::optional<long> axis = std::nullopt) { return reduce(Reduce::sum, x, axis); }
inline Tensor mean(const Tensor& x, std::optional<long> axis = std::nullopt) { return reduce(Reduce::mean, x, axis); }
inline Tensor max(const Tensor& x, std::optional<long> axis = std::nullopt) { return reduce(Reduce::max, x, axis); }

// ---------------------------------------------------------------------------
// Attention primitives
// ---------------------------------------------------------------------------

/// Row-wise softmax of [b x L] scores; positions with mask==0 get exactly 0.
inline Tensor masked_softmax(const Tensor& scores, const std::vector<std::uint8_t>& mask) {
  if (scores.rank() != 2) throw DimensionError("masked_softmax expects [b x L], got " + to_string(scores.shape()));
  const std::size_t b = scores.dim(0), len = scores.dim(1);
  if (mask.size() != b * len) throw DimensionError("mask size does not match scores " + to_string(scores.shape()));
  const auto sd = scores.data();
  std::vector<double> out(b * len, 0.0);
  for (std::size_t r = 0; r < b; ++r) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i)
      if (mask[r * len + i]) hi = std::max(hi, sd[r * len + i]);
    if (hi == -std::numeric_limits<double>::infinity())
      throw DimensionError("all source positions masked in row " + std::to_string(r));
    double z = 0.0;
    for (std::size_t i = 0; i < len; ++i)
      if (mask[r * len + i]) z += (out[r * len + i] = std::exp(sd[r * len + i] - hi));
    for (std::size_t i = 0; i < len; ++i) out[r * len + i] /= z;
  }
  return detail::make_result({b, len}, std::move(out), {scores},
                             [b, len](const TensorImpl& o, std::span<const detail::InputRef> in) {
                               auto* g = detail::grad_of(in[0]);
                               if (!g) return;
                               for (std::size_t r = 0; r < b; ++r) {
                                 const double* y = o.data.data() + r * len;
                                 const double* gy = o.grad.data() + r * len;
                                 double dot = 0.0;
                                 for (std::size_t i = 0; i < len; ++i) dot += y[i] * gy[i];
                                 for (std::size_t i = 0; i < len; ++i) (*g)[r * len + i] += y[i] * (gy[i] - dot);
                               }
                             });
}

/// scores[r, i] = <query[r, :], states[r, i, :]>.
inline Tensor batched_dot(const Tensor& query, const Tensor& states) {
  if (query.rank() != 2 || states.rank() != 3 || query.dim(0) != states.dim(0) || query.dim(1) != states.dim(2))
    throw DimensionError("batched_dot shape mismatch: " + to_string(query.shape()) + " vs " +
                         to_string(states.shape()));
  const std::size_t b = states.dim(0), len = states.dim(1), h = states.dim(2);
  const auto q = query.data();
  const auto s = states.data();
  std::vector<double> out(b * len, 0.0);
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t i = 0; i < len; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < h; ++j) acc += q[r * h + j] * s[(r * len + i) * h + j];
      out[r * len + i] = acc;
    }
  return detail::make_result({b, len}, std::move(out), {query, states},
                             [b, len, h](const TensorImpl& o, std::span<const detail::InputRef> in) {
                               auto* gq = detail::grad_of(in[0]);
                               auto* gs = detail::grad_of(in[1]);
                               const auto& qv = in[0]->data;
                               const auto& sv = in[1]->data;
                               for (std::size_t r = 0; r < b; ++r)
                                 for (std::size_t i = 0; i < len; ++i) {
                                   const double go = o.grad[r * len + i];
                                   if (go == 0.0) continue;
                                   for (std::size_t j = 0; j < h; ++j) {
                                     if (gq) (*gq)[r * h + j] += go * sv[(r * len + i) * h + j];
                                     if (gs) (*gs)[(r * len + i) * h + j] += go * qv[r * h + j];
                                   }
                                 }
                             });
}

/// context[r, :] = sum_i weights[r, i] * states[r, i, :].
inline Tensor weighted_sum(const Tensor& weights, const Tensor& states) {
  if (weights.rank() != 2 || states.rank() != 3 || weights.dim(0) != states.dim(0) ||
      weights.dim(1) != states.dim(1))
    throw DimensionError("weighted_sum shape mismatch: " + to_string(weights.shape()) + " vs " +
                         to_string(states.shape()));
  const std::size_t b = states.dim(0), len = states.dim(1), h = states.dim(2);
  const auto w = weights.data();
  const auto s = states.data();
  std::vector<double> out(b * h, 0.0);
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t i = 0; i < len; ++i) {
      const double wi = w[r * len + i];
      if (wi == 0.0) continue;
      for (std::size_t j = 0; j < h; ++j) out[r * h + j] += wi * s[(r * len + i) * h + j];
    }
  return detail::make_result({b, h}, std::move(out), {weights, states},
                             [b, len, h](const TensorImpl& o, std::span<const detail::InputRef> in) {
                               auto* gw = detail::grad_of(in[0]);
                               auto* gs = detail::grad_of(in[1]);
                               const auto& wv = in[0]->data;
                               const auto& sv = in[1]->data;
                               for (std::size_t r = 0; r < b; ++r)
                                 for (std::size_t i = 0; i < len; ++i) {
                                   double acc = 0.0;
                                   for (std::size_t j = 0; j < h; ++j) {
                                     const double go = o.grad[r * h + j];
                                     acc += go * sv[(r * len + i) * h + j];
                                     if (gs) (*gs)[(r * len + i) * h + j] += go * wv[r * len + i];
                                   }
                                   if (gw) (*gw)[r * len + i] += acc;
                                 }
                             });
}

}  // namespace fuselab

#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "fuselab/auto_fusion.hpp"
#include "fuselab/encoders.hpp"
#include "fuselab/gan_fusion.hpp"
#include "fuselab/gradcheck.hpp"
#include "fuselab/heads.hpp"
#include "fuselab/layers.hpp"
#include "fuselab/random.hpp"

namespace fuselab {

/// One entry of the finite-difference catalog: an op or layer and a routine
/// that checks it on a fresh random instance drawn from `seed`.
struct GradCheckEntry {
  std::string name;
  std::string kind;  // "op" or "layer"
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

struct GradCheckSummary {
  std::string name;
  std::string kind;
  std::size_t cases = 0;
  std::size_t failures = 0;
  double max_rel_error = 0.0;  // only elements past the absolute floor count
  double max_abs_error = 0.0;
  double seconds = 0.0;
};

namespace gc {

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

/// Values whose magnitude lies in [lo, hi] with random sign.
inline Tensor signed_magnitude(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t = random_tensor(std::move(shape), rng, lo, hi);
  std::bernoulli_distribution flip(0.5);
  for (auto& v : t.mutable_data())
    if (flip(rng)) v = -v;
  return t;
}

/// Resamples entries closer than `gap` to `kink` so the finite difference
/// never straddles a non-differentiable point.
inline void avoid(Tensor& t, double kink, Rng& rng, double gap = 1e-3) {
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  for (auto& v : t.mutable_data())
    while (std::abs(v - kink) < gap) v = dist(rng);
}

/// Distinct values at least 0.2 apart, in random order, so max has a unique
/// winner with room for the probe step.
inline Tensor distinct(Shape shape, Rng& rng) {
  std::vector<double> v(numel(shape));
  std::iota(v.begin(), v.end(), 0.0);
  std::shuffle(v.begin(), v.end(), rng);
  std::uniform_real_distribution<double> jitter(0.0, 0.1);
  for (auto& x : v) x = 0.3 * x - 1.0 + jitter(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

inline std::vector<Tensor> with_params(std::vector<Tensor> inputs, const ParameterList& params) {
  for (const auto& p : params) inputs.push_back(p.value);
  return inputs;
}

inline std::vector<std::uint8_t> random_mask(std::size_t b, std::size_t len, Rng& rng) {
  std::vector<std::uint8_t> mask(b * len, 0);
  for (std::size_t r = 0; r < b; ++r) {
    const std::size_t keep = pick(rng, 1, len);
    for (std::size_t t = 0; t < keep; ++t) mask[r * len + t] = 1;
  }
  return mask;
}

inline std::vector<int> random_ids(std::size_t n, int lo, int hi, Rng& rng) {
  std::vector<int> ids(n);
  std::uniform_int_distribution<int> d(lo, hi);
  for (auto& x : ids) x = d(rng);
  return ids;
}

inline GradCheckEntry unary(std::string name, std::function<Tensor(const Tensor&)> f,
                            std::function<Tensor(Shape, Rng&)> sample) {
  return {name, "op", [f, sample](std::uint64_t seed) {
            Rng rng(seed);
            Tensor x = sample({pick(rng, 1, 4), pick(rng, 1, 4)}, rng);
            return check_gradients([&](const std::vector<Tensor>& in) { return random_projection(f(in[0]), seed); },
                                   {x});
          }};
}

inline GradCheckEntry binary(std::string name, std::function<Tensor(const Tensor&, const Tensor&)> f,
                             bool positive_rhs = false) {
  return {name, "op", [f, positive_rhs](std::uint64_t seed) {
            Rng rng(seed);
            const std::size_t r = pick(rng, 1, 4), c = pick(rng, 1, 4);
            Tensor a = random_tensor({r, c}, rng);
            // Right operand is full, a bias row or a column, to cover broadcasting.
            const std::size_t form = pick(rng, 0, 2);
            Shape bs = form == 0 ? Shape{r, c} : form == 1 ? Shape{1, c} : Shape{r, 1};
            Tensor b = positive_rhs ? signed_magnitude(bs, rng, 0.5, 2.0) : random_tensor(bs, rng);
            return check_gradients(
                [&](const std::vector<Tensor>& in) { return random_projection(f(in[0], in[1]), seed); }, {a, b});
          }};
}

}  // namespace gc

/// Every differentiable op and composed layer, each with a random-instance
/// generator. Shared by the unit tests, the CLI and the acceptance run.
inline std::vector<GradCheckEntry> gradcheck_catalog() {
  using gc::pick;
  auto plain = [](Shape s, Rng& rng) { return random_tensor(std::move(s), rng); };
  auto positive = [](Shape s, Rng& rng) { return random_tensor(std::move(s), rng, 0.5, 2.0); };
  auto off_zero = [](Shape s, Rng& rng) {
    Tensor t = random_tensor(std::move(s), rng);
    gc::avoid(t, 0.0, rng);
    return t;
  };
  auto off_half = [](Shape s, Rng& rng) {
    Tensor t = random_tensor(std::move(s), rng);
    gc::avoid(t, 0.5, rng);
    return t;
  };

  std::vector<GradCheckEntry> cat;
  cat.push_back(gc::binary("add", [](const Tensor& a, const Tensor& b) { return add(a, b); }));
  cat.push_back(gc::binary("sub", [](const Tensor& a, const Tensor& b) { return sub(a, b); }));
  cat.push_back(gc::binary("mul", [](const Tensor& a, const Tensor& b) { return mul(a, b); }));
  cat.push_back(gc::binary("div", [](const Tensor& a, const Tensor& b) { return div(a, b); }, true));
  cat.push_back(gc::unary("scale", [](const Tensor& x) { return scale(x, -1.7); }, plain));
  cat.push_back(gc::unary("add_scalar", [](const Tensor& x) { return add_scalar(x, 0.3); }, plain));
  cat.push_back(gc::unary("tanh", [](const Tensor& x) { return tanh(x); }, plain));
  cat.push_back(gc::unary("sigmoid", [](const Tensor& x) { return sigmoid(x); }, plain));
  cat.push_back(gc::unary("leaky_relu", [](const Tensor& x) { return leaky_relu(x); }, off_zero));
  cat.push_back(gc::unary("exp", [](const Tensor& x) { return exp(x); }, plain));
  cat.push_back(gc::unary("log", [](const Tensor& x) { return log(x); }, positive));
  cat.push_back(gc::unary("sqrt", [](const Tensor& x) { return sqrt(x); }, positive));
  cat.push_back(gc::unary("square", [](const Tensor& x) { return square(x); }, plain));
  cat.push_back(gc::unary("clamp_min", [](const Tensor& x) { return clamp_min(x, 0.5); }, off_half));
  cat.push_back(gc::unary("sum", [](const Tensor& x) { return sum(x, 0); }, plain));
  cat.push_back(gc::unary("mean", [](const Tensor& x) { return mean(x, 1); }, plain));
  cat.push_back(gc::unary("max", [](const Tensor& x) { return max(x, 1); },
                          [](Shape s, Rng& rng) { return gc::distinct(std::move(s), rng); }));
  cat.push_back(gc::unary("dropout", [](const Tensor& x) {
    Rng mask_rng(17);  // same mask on every probe
    return dropout(x, 0.3, Mode::train, mask_rng);
  }, plain));

  cat.push_back({"matmul", "op", [](std::uint64_t seed) {
                   Rng rng(seed);
                   const std::size_t n = pick(rng, 1, 4), k = pick(rng, 1, 4), m = pick(rng, 1, 4);
                   return check_gradients(
                       [&](const std::vector<Tensor>& in) { return random_projection(matmul(in[0], in[1]), seed); },
                       {random_tensor({n, k}, rng), random_tensor({k, m}, rng)});
                 }});
  cat.push_back({"concat", "op", [](std::uint64_t seed) {
                   Rng rng(seed);
                   const std::size_t r = pick(rng, 1, 3);
                   std::vector<Tensor> parts;
                   for (std::size_t i = pick(rng, 1, 3); i > 0; --i) parts.push_back(random_tensor({r, pick(rng, 1, 3)}, rng));
                   return check_gradients(
                       [&](const std::vector<Tensor>& in) { return random_projection(concat(in, 1), seed); }, parts);
                 }});
  cat.push_back({"slice_reshape", "op", [](std::uint64_t seed) {
                   Rng rng(seed);
                   const std::size_t r = pick(rng, 1, 3), c = pick(rng, 2, 5);
                   const std::size_t start = pick(rng, 0, c - 1), len = pick(rng, 1, c - start);
                   return check_gradients(
                       [&](const std::vector<Tensor>& in) {
                         return random_projection(reshape(slice(in[0], 1, start, len), {r * len}), seed);
                       },
                       {random_tensor({r, c}, rng)});
                 }});
  cat.push_back({"stack_steps", "op", [](std::uint64_t seed) {
                   Rng rng(seed);
                   const std::size_t b = pick(rng, 1, 3), h = pick(rng, 1, 3);
                   std::vector<Tensor> steps;
                   for (std::size_t i = pick(rng, 1, 4); i > 0; --i) steps.push_back(random_tensor({b, h}, rng));
                   return check_gradients(
                       [&](const std::vector<Tensor>& in) { return random_projection(stack_steps(in), seed); }, steps);
                 }});
  cat.push_back({"gather_rows", "op", [](std::uint64_t seed) {
                   Rng rng(seed);
                   const std::size_t v = pick(rng, 1, 5);
                   auto ids = gc::random_ids(pick(rng, 1, 6), 0, static_cast<int>(v) - 1, rng);
                   return check_gradients(
                       [&](const std::vector<Tensor>& in) { return random_projection(gather_rows(in[0], ids), seed); },
                       {random_tensor({v, pick(rng, 1, 3)}, rng)});
                 }});
  cat.push_back({"masked_softmax", "op", [](std::uint64_t seed) {
                   Rng rng(seed);
                   const std::size_t b = pick(rng, 1, 3), len = pick(rng, 1, 5);
                   auto mask = gc::random_mask(b, len, rng);
                   return check_gradients(
                       [&](const std::vector<Tensor>& in) { return random_projection(masked_softmax(in[0], mask), seed); },
                       {random_tensor({b, len}, rng)});
                 }});
  cat.push_back({"batched_dot", "op", [](std::uint64_t seed) {
                   Rng rng(seed);
                   const std::size_t b = pick(rng, 1, 3), len = pick(rng, 1, 4), h = pick(rng, 1, 4);
                   return check_gradients(
                       [&](const std::vector<Tensor>& in) { return random_projection(batched_dot(in[0], in[1]), seed); },
                       {random_tensor({b, h}, rng), random_tensor({b, len, h}, rng)});
                 }});
  cat.push_back({"weighted_sum", "op", [](std::uint64_t seed) {
                   Rng rng(seed);
                   const std::size_t b = pick(rng, 1, 3), len = pick(rng, 1, 4), h = pick(rng, 1, 4);
                   return check_gradients(
                       [&](const std::vector<Tensor>& in) { return random_projection(weighted_sum(in[0], in[1]), seed); },
                       {random_tensor({b, len}, rng), random_tensor({b, len, h}, rng)});
                 }});
  cat.push_back({"softmax_cross_entropy", "op", [](std::uint64_t seed) {
                   Rng rng(seed);
                   const std::size_t n = pick(rng, 1, 4), v = pick(rng, 2, 5);
                   auto targets = gc::random_ids(n, 0, static_cast<int>(v) - 1, rng);
                   if (n > 1) targets[0] = -1;  // one ignored row
                   return check_gradients(
                       [&](const std::vector<Tensor>& in) { return softmax_cross_entropy(in[0], targets); },
                       {random_tensor({n, v}, rng)});
                 }});
  cat.push_back({"multiclass_hinge", "op", [](std::uint64_t seed) {
                   Rng rng(seed);
                   const std::size_t n = pick(rng, 1, 4), c = pick(rng, 2, 4);
                   auto targets = gc::random_ids(n, 0, static_cast<int>(c) - 1, rng);
                   Tensor x;
                   for (bool ok = false; !ok;) {
                     x = random_tensor({n, c}, rng);
                     ok = true;
                     for (std::size_t r = 0; r < n; ++r)
                       for (std::size_t j = 0; j < c; ++j)
                         if (static_cast<int>(j) != targets[r] && std::abs(1.0 + x[r * c + j] - x[r * c + targets[r]]) < 1e-3)
                           ok = false;
                   }
                   return check_gradients(
                       [&](const std::vector<Tensor>& in) { return multiclass_hinge(in[0], targets); }, {x});
                 }});

  cat.push_back({"affine", "layer", [](std::uint64_t seed) {
                   Rng rng(seed);
                   Affine layer(pick(rng, 1, 4), pick(rng, 1, 4), rng);
                   Tensor x = random_tensor({pick(rng, 1, 4), layer.weight().dim(0)}, rng);
                   return check_gradients(
                       [&](const std::vector<Tensor>& in) { return random_projection(layer(in[0]), seed); },
                       {x, layer.weight(), layer.bias()});
                 }});
  cat.push_back({"embedding", "layer", [](std::uint64_t seed) {
                   Rng rng(seed);
                   const std::size_t v = pick(rng, 1, 6);
                   Embedding emb(v, pick(rng, 1, 4), rng);
                   auto ids = gc::random_ids(pick(rng, 1, 6), 0, static_cast<int>(v) - 1, rng);
                   ParameterList params;
                   emb.collect(params, "e");
                   return check_gradients([&](const std::vector<Tensor>&) { return random_projection(emb(ids), seed); },
                                          gc::with_params({}, params));
                 }});
  cat.push_back({"lstm_step", "layer", [](std::uint64_t seed) {
                   Rng rng(seed);
                   const std::size_t b = pick(rng, 1, 3), in_w = pick(rng, 1, 4), h = pick(rng, 1, 4);
                   LstmCell cell(in_w, h, rng);
                   Tensor x = random_tensor({b, in_w}, rng);
                   Tensor h0 = random_tensor({b, h}, rng, -1, 1), c0 = random_tensor({b, h}, rng, -1, 1);
                   return check_gradients(
                       [&](const std::vector<Tensor>& in) {
                         auto s = cell.step(in[0], {in[1], in[2]});
                         return random_projection(concat({s.h, s.c}, 1), seed);
                       },
                       {x, h0, c0, cell.w_ih(), cell.w_hh(), cell.bias()});
                 }});
  cat.push_back({"batch_norm", "layer", [](std::uint64_t seed) {
                   Rng rng(seed);
                   BatchNorm bn(pick(rng, 1, 4));
                   for (auto& g : bn.gamma().mutable_data()) g = std::uniform_real_distribution<double>(0.5, 1.5)(rng);
                   Tensor x = random_tensor({pick(rng, 3, 6), bn.gamma().dim(0)}, rng);
                   return check_gradients(
                       [&](const std::vector<Tensor>& in) { return random_projection(bn(in[0], Mode::train), seed); },
                       {x, bn.gamma(), bn.beta()});
                 }});
  cat.push_back({"text_encoder", "layer", [](std::uint64_t seed) {
                   Rng rng(seed);
                   const std::size_t b = pick(rng, 1, 3), len = pick(rng, 1, 4);
                   TextEncoder enc(8, pick(rng, 1, 3), pick(rng, 1, 4), rng);
                   std::vector<std::size_t> lengths(b);
                   std::vector<int> ids(b * len, kPad);
                   for (std::size_t r = 0; r < b; ++r) {
                     lengths[r] = pick(rng, 1, len);
                     for (std::size_t t = 0; t < lengths[r]; ++t) ids[r * len + t] = static_cast<int>(pick(rng, 4, 7));
                   }
                   ParameterList params;
                   enc.collect(params, "t");
                   return check_gradients(
                       [&](const std::vector<Tensor>&) {
                         auto out = enc(ids, len, lengths);
                         return add(random_projection(out.summary, seed), random_projection(out.states, seed + 1));
                       },
                       gc::with_params({}, params));
                 }});
  cat.push_back({"attention_step", "layer", [](std::uint64_t seed) {
                   Rng rng(seed);
                   const std::size_t b = pick(rng, 1, 3), len = pick(rng, 1, 4), h_enc = pick(rng, 1, 4);
                   const std::size_t hidden = pick(rng, 1, 4), fused = pick(rng, 1, 3);
                   const auto cond = pick(rng, 0, 1) ? DecoderConditioning::every_step : DecoderConditioning::init;
                   AttentiveDecoder dec(7, pick(rng, 1, 3), hidden, h_enc, fused, cond, rng);
                   DecoderContext ctx{random_tensor({b, len, h_enc}, rng), gc::random_mask(b, len, rng),
                                      random_tensor({b, fused}, rng)};
                   auto prev = gc::random_ids(b, 1, 6, rng);
                   Tensor h0 = random_tensor({b, hidden}, rng, -1, 1), c0 = random_tensor({b, hidden}, rng, -1, 1);
                   ParameterList params;
                   dec.collect(params, "d");
                   return check_gradients(
                       [&](const std::vector<Tensor>& in) {
                         DecoderContext c{in[0], ctx.mask, in[1]};
                         return random_projection(dec.step(prev, {in[2], in[3]}, c).logits, seed);
                       },
                       gc::with_params({ctx.states, ctx.z_fuse, h0, c0}, params));
                 }});
  cat.push_back({"decoder_loss", "layer", [](std::uint64_t seed) {
                   Rng rng(seed);
                   const std::size_t b = pick(rng, 1, 2), len = pick(rng, 1, 3), steps = pick(rng, 1, 3);
                   AttentiveDecoder dec(6, 2, 3, 2, 2, DecoderConditioning::init, rng);
                   DecoderContext ctx{random_tensor({b, len, 2}, rng), gc::random_mask(b, len, rng),
                                      random_tensor({b, 2}, rng)};
                   auto inputs = gc::random_ids(b * steps, 1, 5, rng);
                   auto targets = gc::random_ids(b * steps, 2, 5, rng);
                   ParameterList params;
                   dec.collect(params, "d");
                   return check_gradients(
                       [&](const std::vector<Tensor>& in) {
                         return dec.teacher_forced_loss({in[0], ctx.mask, in[1]}, inputs, targets, steps);
                       },
                       gc::with_params({ctx.states, ctx.z_fuse}, params));
                 }});
  cat.push_back({"classifier_head", "layer", [](std::uint64_t seed) {
                   Rng rng(seed);
                   const bool bn = pick(rng, 0, 1) == 1;
                   const std::size_t in_w = pick(rng, 1, 4), c = pick(rng, 2, 4), n = pick(rng, 3, 5);
                   ClassifierHead head(in_w, pick(rng, 1, 4), c, rng, bn);
                   // Keep every pre-activation off the leaky ReLU corner. A fresh
                   // batch norm matches the head's own at initialization.
                   Tensor z;
                   for (bool clear = false; !clear;) {
                     z = random_tensor({n, in_w}, rng);
                     Tensor h = head.hidden_layer()(z);
                     if (bn) h = BatchNorm(h.dim(1))(h, Mode::train);
                     clear = std::none_of(h.data().begin(), h.data().end(), [](double v) { return std::abs(v) < 1e-3; });
                   }
                   auto labels = gc::random_ids(n, 0, static_cast<int>(c) - 1, rng);
                   ParameterList params;
                   head.collect(params, "h");
                   return check_gradients(
                       [&](const std::vector<Tensor>& in) {
                         return softmax_cross_entropy(head(in[0], bn ? Mode::train : Mode::eval), labels);
                       },
                       gc::with_params({z}, params));
                 }});
  cat.push_back({"auto_fusion", "layer", [](std::uint64_t seed) {
                   Rng rng(seed);
                   const std::size_t n = pick(rng, 1, 4);
                   std::vector<Tensor> parts;
                   std::size_t width = 0;
                   for (std::size_t i = pick(rng, 1, 3); i > 0; --i) {
                     parts.push_back(random_tensor({n, pick(rng, 1, 3)}, rng));
                     width += parts.back().dim(1);
                   }
                   AutoFusionNet net(width, pick(rng, 1, 4), rng);
                   ParameterList params;
                   net.collect(params, "af");
                   const std::size_t k = parts.size();
                   return check_gradients(
                       [&](const std::vector<Tensor>& in) {
                         auto out = net(std::vector<Tensor>(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(k)));
                         return add(out.j_fusion, random_projection(out.z_fuse, seed));
                       },
                       gc::with_params(parts, params));
                 }});
  // The discriminators are frozen inside the generator objective, so the two
  // halves of the stack are checked against their own losses.
  auto gan_instance = [](Rng& rng, std::map<Modality, std::size_t>& widths, LatentBundle& bundle,
                         std::vector<Tensor>& inputs) {
    const std::size_t n = pick(rng, 1, 3);
    const bool bimodal = pick(rng, 0, 1) == 1;
    for (auto m : kModalityOrder) {
      if (bimodal && m == Modality::video) continue;
      widths[m] = pick(rng, 1, 3);
      bundle.get(m) = random_tensor({n, widths[m]}, rng, -1, 1);
      inputs.push_back(*bundle.get(m));
    }
    const std::size_t d = pick(rng, 1, 3);
    return GanFusionStack(widths, {pick(rng, 1, 2), d, pick(rng, 1, 3)}, d, rng);
  };
  cat.push_back({"gan_fusion", "layer", [gan_instance](std::uint64_t seed) {
                   Rng rng(seed);
                   std::map<Modality, std::size_t> widths;
                   LatentBundle bundle;
                   std::vector<Tensor> inputs;
                   GanFusionStack stack = gan_instance(rng, widths, bundle, inputs);
                   ParameterList params;
                   stack.collect(params, "g");
                   return check_gradients(
                       [&](const std::vector<Tensor>&) {
                         Rng noise(seed ^ 0x5A5A);
                         auto out = stack.fuse(bundle, noise, 1.0);
                         return add(out.j_fusion, random_projection(out.z_fuse, seed));
                       },
                       gc::with_params(inputs, params));
                 }});
  cat.push_back({"gan_discriminator", "layer", [gan_instance](std::uint64_t seed) {
                   Rng rng(seed);
                   std::map<Modality, std::size_t> widths;
                   LatentBundle bundle;
                   std::vector<Tensor> inputs;
                   GanFusionStack stack = gan_instance(rng, widths, bundle, inputs);
                   ParameterList params;
                   stack.collect_discriminators(params, "g");
                   return check_gradients(
                       [&](const std::vector<Tensor>&) {
                         Rng noise(seed ^ 0x5A5A);
                         return stack.discriminator_loss(stack.forward(bundle, noise, 1.0));
                       },
                       gc::with_params({}, params));
                 }});
  return cat;
}

/// Runs `cases` random instances of every catalog entry whose name passes
/// `filter` (empty runs all).
inline std::vector<GradCheckSummary> run_gradcheck_suite(std::size_t cases, std::uint64_t master_seed,
                                                         const std::string& filter = {}) {
  std::vector<GradCheckSummary> out;
  for (const auto& entry : gradcheck_catalog()) {
    if (!filter.empty() && entry.name.find(filter) == std::string::npos) continue;
    GradCheckSummary s{entry.name, entry.kind};
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t base = derive_seed(master_seed, entry.name);
    for (std::size_t i = 0; i < cases; ++i) {
      const auto r = entry.run(derive_seed(base, i));
      ++s.cases;
      if (!r.passed) ++s.failures;
      s.max_rel_error = std::max(s.max_rel_error, r.max_rel_error);
      s.max_abs_error = std::max(s.max_abs_error, r.max_abs_error);
    }
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.push_back(s);
  }
  return out;
}

}  // namespace fuselab

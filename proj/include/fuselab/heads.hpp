#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "fuselab/layers.hpp"

namespace fuselab {

inline constexpr int kPad = 0;
inline constexpr int kSos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;

/// affine(d_fuse -> h) + LeakyReLU + affine(h -> C), with optional batch norm
/// on the hidden layer.
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(std::size_t in, std::size_t hidden, std::size_t classes, Rng& rng, bool batch_norm = false)
      : hidden_(in, hidden, rng), out_(hidden, classes, rng) {
    if (batch_norm) norm_.emplace(hidden);
  }

  Tensor operator()(const Tensor& z_fuse, Mode mode = Mode::eval) {
    if (z_fuse.rank() != 2 || z_fuse.dim(1) != hidden_.in_features())
      throw DimensionError("classifier expects width " + std::to_string(hidden_.in_features()) + ", got " +
                           to_string(z_fuse.shape()));
    Tensor h = hidden_(z_fuse);
    if (norm_) h = (*norm_)(h, mode);
    return out_(leaky_relu(h));
  }

  std::size_t classes() const { return out_.out_features(); }
  Affine& hidden_layer() { return hidden_; }
  Affine& output_layer() { return out_; }

  void collect(ParameterList& out, const std::string& prefix) const {
    hidden_.collect(out, join_name(prefix, "hidden"));
    if (norm_) norm_->collect(out, join_name(prefix, "bn"));
    out_.collect(out, join_name(prefix, "out"));
  }
  void collect_buffers(ParameterList& out, const std::string& prefix) const {
    if (norm_) norm_->collect_buffers(out, join_name(prefix, "bn"));
  }

 private:
  Affine hidden_;
  std::optional<BatchNorm> norm_;
  Affine out_;
};

enum class DecoderConditioning { init, every_step };

/// Source side seen by the decoder: text encoder states, their mask, and the
/// fused vector.
struct DecoderContext {
  Tensor states;                   // [b x L x h_enc]
  std::vector<std::uint8_t> mask;  // [b x L]
  Tensor z_fuse;                   // [b x d_fuse]
};

struct DecodeStep {
  Tensor logits;
  LstmState state;
  Tensor attention;
};

/// LSTM decoder with general (bilinear) attention over text encoder states.
/// The fused vector enters through h0 = tanh(bridge(z_fuse)), and optionally
/// as an extra input at every step.
class AttentiveDecoder {
 public:
  AttentiveDecoder() = default;
  AttentiveDecoder(std::size_t vocab, std::size_t embed, std::size_t hidden, std::size_t encoder_hidden,
                   std::size_t fused_width, DecoderConditioning conditioning, Rng& rng)
      : conditioning_(conditioning),
        embed_(vocab, embed, rng),
        lstm_(embed + (conditioning == DecoderConditioning::every_step ? fused_width : 0), hidden, rng),
        bridge_(fused_width, hidden, rng),
        attn_(uniform_param({hidden, encoder_hidden}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng)),
        out_(hidden + encoder_hidden, vocab, rng) {}

  LstmState init_state(const Tensor& z_fuse) const {
    Tensor h0 = tanh(bridge_(z_fuse));
    return {h0, Tensor::zeros(h0.shape())};
  }

  DecodeStep step(const std::vector<int>& prev_tokens, const LstmState& state, const DecoderContext& ctx) const {
    Tensor x = embed_(prev_tokens);
    if (conditioning_ == DecoderConditioning::every_step) x = concat({x, ctx.z_fuse}, 1);
    LstmState next = lstm_.step(x, state);
    Tensor scores = batched_dot(matmul(next.h, attn_), ctx.states);
    Tensor weights = masked_softmax(scores, ctx.mask);
    Tensor context = weighted_sum(weights, ctx.states);
    Tensor logits = out_(concat({next.h, context}, 1));
    return {logits, next, weights};
  }

  /// Teacher-forced cross entropy. `inputs` and `targets` are [b x T]
  /// row-major; PAD targets are ignored.
  Tensor teacher_forced_loss(const DecoderContext& ctx, const std::vector<int>& inputs, const std::vector<int>& targets,
                             std::size_t steps) const {
    const std::size_t b = ctx.z_fuse.dim(0);
    if (inputs.size() != b * steps || targets.size() != b * steps)
      throw DimensionError("decoder inputs do not form a [b x T] grid");
    LstmState state = init_state(ctx.z_fuse);
    std::vector<Tensor> all_logits;
    std::vector<int> flat_targets;
    flat_targets.reserve(b * steps);
    std::vector<int> prev(b);
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t r = 0; r < b; ++r) prev[r] = inputs[r * steps + t];
      DecodeStep s = step(prev, state, ctx);
      state = s.state;
      all_logits.push_back(s.logits);
      for (std::size_t r = 0; r < b; ++r) flat_targets.push_back(targets[r * steps + t]);
    }
    return softmax_cross_entropy(concat(all_logits, 0), flat_targets, kPad);
  }

  /// Argmax decoding from SOS until EOS or `max_len` tokens. Returned
  /// sequences exclude SOS and EOS.
  std::vector<std::vector<int>> decode_greedy(const DecoderContext& ctx, std::size_t max_len) const {
    NoGradGuard no_grad;
    const std::size_t b = ctx.z_fuse.dim(0);
    std::vector<std::vector<int>> out(b);
    std::vector<bool> done(b, false);
    std::vector<int> prev(b, kSos);
    LstmState state = init_state(ctx.z_fuse);
    for (std::size_t t = 0; t < max_len; ++t) {
      DecodeStep s = step(prev, state, ctx);
      state = s.state;
      const std::size_t v = s.logits.dim(1);
      bool all_done = true;
      for (std::size_t r = 0; r < b; ++r) {
        const auto row = s.logits.data().subspan(r * v, v);
        const int best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        prev[r] = best;
        if (done[r]) continue;
        if (best == kEos) done[r] = true;
        else out[r].push_back(best);
        all_done = all_done && done[r];
      }
      if (all_done) break;
    }
    return out;
  }

  std::size_t vocab_size() const { return embed_.vocab_size(); }
  DecoderConditioning conditioning() const { return conditioning_; }
  Tensor& attention_weight() { return attn_; }

  void collect(ParameterList& out, const std::string& prefix) const {
    embed_.collect(out, join_name(prefix, "embed"));
    lstm_.collect(out, join_name(prefix, "lstm"));
    bridge_.collect(out, join_name(prefix, "bridge"));
    out.push_back({join_name(prefix, "attn.W_a"), attn_});
    out_.collect(out, join_name(prefix, "out"));
  }

 private:
  DecoderConditioning conditioning_ = DecoderConditioning::init;
  Embedding embed_;
  LstmCell lstm_;
  Affine bridge_;
  Tensor attn_;
  Affine out_;
};

}  // namespace fuselab

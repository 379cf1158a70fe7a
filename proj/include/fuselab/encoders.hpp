#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fuselab/layers.hpp"

namespace fuselab {

enum class Modality { video, speech, text };

/// Fixed concatenation order used everywhere: video, speech, text.
inline constexpr std::array<Modality, 3> kModalityOrder{Modality::video, Modality::speech, Modality::text};

inline char modality_code(Modality m) {
  switch (m) {
    case Modality::video: return 'v';
    case Modality::speech: return 's';
    case Modality::text: return 't';
  }
  return '?';
}

inline std::string modality_name(Modality m) {
  switch (m) {
    case Modality::video: return "video";
    case Modality::speech: return "speech";
    case Modality::text: return "text";
  }
  return "unknown";
}

class ModalitySet {
 public:
  ModalitySet() = default;
  ModalitySet(std::initializer_list<Modality> ms) {
    for (auto m : ms) insert(m);
  }

  /// Parses codes such as "vst", "s,t" or "t".
  static ModalitySet parse(const std::string& text) {
    ModalitySet set;
    for (char c : text) {
      if (c == ',' || c == '-' || c == ' ') continue;
      if (c == 'v') set.insert(Modality::video);
      else if (c == 's') set.insert(Modality::speech);
      else if (c == 't') set.insert(Modality::text);
      else throw std::invalid_argument(std::string("unknown modality code '") + c + "'");
    }
    return set;
  }

  void insert(Modality m) { bits_[static_cast<int>(m)] = true; }
  bool contains(Modality m) const { return bits_[static_cast<int>(m)]; }
  std::size_t count() const { return bits_[0] + bits_[1] + bits_[2]; }

  std::vector<Modality> list() const {
    std::vector<Modality> out;
    for (auto m : kModalityOrder)
      if (contains(m)) out.push_back(m);
    return out;
  }

  std::string str() const {
    std::string s;
    for (auto m : list()) s += modality_code(m);
    return s;
  }

  bool operator==(const ModalitySet&) const = default;

 private:
  std::array<bool, 3> bits_{false, false, false};
};

/// Unimodal latents of one batch. Text additionally carries its per-token
/// encoder states [b x L x h] and padding mask for attention.
struct LatentBundle {
  std::optional<Tensor> video;
  std::optional<Tensor> speech;
  std::optional<Tensor> text;
  Tensor text_states;
  std::vector<std::uint8_t> text_mask;

  const std::optional<Tensor>& get(Modality m) const {
    switch (m) {
      case Modality::video: return video;
      case Modality::speech: return speech;
      case Modality::text: return text;
    }
    return text;
  }
  std::optional<Tensor>& get(Modality m) { return const_cast<std::optional<Tensor>&>(std::as_const(*this).get(m)); }

  ModalitySet present() const {
    ModalitySet s;
    for (auto m : kModalityOrder)
      if (get(m)) s.insert(m);
    return s;
  }

  std::size_t batch() const {
    for (auto m : kModalityOrder)
      if (get(m)) return get(m)->dim(0);
    throw std::logic_error("latent bundle has no modality");
  }

  /// Latents of the present modalities in the fixed order.
  std::vector<Tensor> ordered() const {
    std::vector<Tensor> out;
    for (auto m : kModalityOrder)
      if (get(m)) out.push_back(*get(m));
    return out;
  }

  void validate() const {
    if (present().count() == 0) throw std::invalid_argument("latent bundle needs at least one modality");
    if (text && (!text_states.defined() || text_mask.empty()))
      throw std::invalid_argument("text latent present without its state sequence");
    const std::size_t b = batch();
    for (auto m : kModalityOrder)
      if (get(m) && get(m)->dim(0) != b) throw DimensionError("latent batch sizes disagree");
  }
};

// ---------------------------------------------------------------------------

/// Per-feature standardization with statistics frozen from the training split.
class Standardizer {
 public:
  Standardizer() = default;
  explicit Standardizer(std::size_t dim) : mean_(Tensor::zeros({dim})), std_(Tensor::full({dim}, 1.0)) {}

  /// `rows` is row-major [n x dim].
  void fit(const std::vector<double>& rows) {
    const std::size_t d = mean_.size();
    if (rows.empty() || rows.size() % d != 0)
      throw DimensionError("standardizer fit expects rows of width " + std::to_string(d));
    const std::size_t n = rows.size() / d;
    auto m = mean_.mutable_data();
    auto s = std_.mutable_data();
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += rows[i * d + j];
      m[j] = acc / static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) var += (rows[i * d + j] - m[j]) * (rows[i * d + j] - m[j]);
      const double sd = std::sqrt(var / static_cast<double>(n));
      s[j] = sd > 1e-8 ? sd : 1.0;
    }
  }

  Tensor operator()(const Tensor& x) const { return div(sub(x, mean_), std_); }

  std::size_t dim() const { return mean_.size(); }
  const Tensor& mean() const { return mean_; }
  const Tensor& stddev() const { return std_; }

  void collect_buffers(ParameterList& out, const std::string& prefix) const {
    out.push_back({join_name(prefix, "mean"), mean_});
    out.push_back({join_name(prefix, "std"), std_});
  }

 private:
  Tensor mean_;
  Tensor std_;
};

/// Feed-forward learner for pre-extracted feature vectors (speech, video):
/// standardize -> affine -> tanh.
class VectorEncoder {
 public:
  VectorEncoder() = default;
  VectorEncoder(std::size_t input_width, std::size_t latent, Rng& rng) : norm_(input_width), fc_(input_width, latent, rng) {}

  Tensor operator()(const Tensor& features) const {
    if (features.rank() != 2 || features.dim(1) != norm_.dim())
      throw DimensionError("feature width mismatch: expected " + std::to_string(norm_.dim()) + ", got " +
                           to_string(features.shape()));
    return tanh(fc_(norm_(features)));
  }

  Standardizer& normalizer() { return norm_; }
  const Standardizer& normalizer() const { return norm_; }
  Affine& fc() { return fc_; }
  std::size_t latent() const { return fc_.out_features(); }

  void collect(ParameterList& out, const std::string& prefix) const { fc_.collect(out, join_name(prefix, "fc")); }
  void collect_buffers(ParameterList& out, const std::string& prefix) const {
    norm_.collect_buffers(out, join_name(prefix, "norm"));
  }

 private:
  Standardizer norm_;
  Affine fc_;
};

struct TextEncoding {
  Tensor summary;                   // [b x h], hidden state at each row's true length
  Tensor states;                    // [b x L x h]
  std::vector<std::uint8_t> mask;   // [b x L], 1 for real tokens
};

/// Embedding lookup followed by an unrolled LSTM over padded id rows.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(std::size_t vocab, std::size_t embed, std::size_t hidden, Rng& rng)
      : embed_(vocab, embed, rng), lstm_(embed, hidden, rng) {}

  /// `ids` is row-major [b x L]; positions at or beyond a row's length are
  /// padding and never influence that row's summary.
  TextEncoding operator()(const std::vector<int>& ids, std::size_t max_len, const std::vector<std::size_t>& lengths) const {
    const std::size_t b = lengths.size();
    if (b == 0 || max_len == 0 || ids.size() != b * max_len)
      throw DimensionError("token ids do not form a [" + std::to_string(b) + " x " + std::to_string(max_len) + "] grid");
    for (auto len : lengths) {
      if (len == 0) throw std::invalid_argument("zero-length text sequence");
      if (len > max_len) throw std::invalid_argument("sequence length exceeds padded width");
    }
    for (int id : ids)
      if (id < 0 || static_cast<std::size_t>(id) >= embed_.vocab_size())
        throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of " +
                                std::to_string(embed_.vocab_size()));

    TextEncoding enc;
    enc.mask.assign(b * max_len, 0);
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t t = 0; t < lengths[r]; ++t) enc.mask[r * max_len + t] = 1;

    LstmState state = lstm_.zero_state(b);
    std::vector<Tensor> states;
    std::vector<int> column(b);
    for (std::size_t t = 0; t < max_len; ++t) {
      for (std::size_t r = 0; r < b; ++r) column[r] = ids[r * max_len + t];
      LstmState next = lstm_.step(embed_(column), state);
      bool all_live = true;
      std::vector<double> live(b);
      for (std::size_t r = 0; r < b; ++r) {
        live[r] = t < lengths[r] ? 1.0 : 0.0;
        all_live = all_live && live[r] == 1.0;
      }
      if (!all_live) {
        Tensor keep = Tensor::matrix(b, 1, live);
        Tensor hold = Tensor::matrix(b, 1, [&] {
          std::vector<double> v(b);
          for (std::size_t r = 0; r < b; ++r) v[r] = 1.0 - live[r];
          return v;
        }());
        next.h = add(mul(next.h, keep), mul(state.h, hold));
        next.c = add(mul(next.c, keep), mul(state.c, hold));
      }
      state = next;
      states.push_back(state.h);
    }
    enc.summary = state.h;
    enc.states = stack_steps(states);
    return enc;
  }

  std::size_t hidden() const { return lstm_.hidden(); }
  std::size_t vocab_size() const { return embed_.vocab_size(); }
  Embedding& embedding() { return embed_; }
  LstmCell& lstm() { return lstm_; }

  void collect(ParameterList& out, const std::string& prefix) const {
    embed_.collect(out, join_name(prefix, "embed"));
    lstm_.collect(out, join_name(prefix, "lstm"));
  }

 private:
  Embedding embed_;
  LstmCell lstm_;
};

}  // namespace fuselab

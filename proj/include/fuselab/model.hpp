#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "fuselab/auto_fusion.hpp"
#include "fuselab/config.hpp"
#include "fuselab/data.hpp"
#include "fuselab/encoders.hpp"
#include "fuselab/gan_fusion.hpp"
#include "fuselab/heads.hpp"

namespace fuselab {

/// Sizes the model takes from the data rather than from the config.
struct ModelShape {
  std::size_t speech_width = 0;
  std::size_t video_width = 0;
  std::size_t source_vocab = 0;
  std::size_t target_vocab = 0;
  std::size_t classes = 0;
};

/// One minibatch in model-ready layout.
struct Batch {
  std::size_t size = 0;
  std::optional<Tensor> video;
  std::optional<Tensor> speech;
  std::vector<int> text_ids;  // [size x text_len], PAD beyond each length
  std::size_t text_len = 0;
  std::vector<std::size_t> lengths;
  std::vector<int> labels;
  std::vector<int> decoder_inputs;   // [size x decoder_steps], SOS-prefixed
  std::vector<int> decoder_targets;  // [size x decoder_steps], EOS-terminated
  std::size_t decoder_steps = 0;
  std::vector<std::vector<int>> references;
};

/// Builds a batch from `indices`. When `word_drop` is set, the source text is
/// passed through apply_word_drop with that probability and stream.
inline Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& indices, const ModalitySet& modalities,
                        std::optional<std::pair<double, Rng*>> word_drop = std::nullopt) {
  Batch b;
  b.size = indices.size();
  if (b.size == 0) throw std::invalid_argument("empty batch");
  auto gather = [&](Modality m) {
    std::vector<double> rows;
    std::size_t width = 0;
    for (auto i : indices) {
      const auto& s = ds.samples.at(i);
      const auto& f = m == Modality::video ? s.video : s.speech;
      if (!f) throw std::runtime_error("sample " + std::to_string(i) + " lacks the " + modality_name(m) + " modality");
      if (width == 0) width = f->size();
      if (f->size() != width) throw DimensionError(modality_name(m) + " feature widths differ within the dataset");
      rows.insert(rows.end(), f->begin(), f->end());
    }
    return Tensor::matrix(b.size, width, std::move(rows));
  };
  if (modalities.contains(Modality::video)) b.video = gather(Modality::video);
  if (modalities.contains(Modality::speech)) b.speech = gather(Modality::speech);
  if (modalities.contains(Modality::text)) {
    std::vector<std::vector<int>> rows;
    for (auto i : indices) {
      const auto& s = ds.samples.at(i);
      if (!s.text || s.text->empty())
        throw std::runtime_error("sample " + std::to_string(i) + " lacks the text modality");
      rows.push_back(word_drop ? apply_word_drop(*s.text, word_drop->first, *word_drop->second) : *s.text);
      b.text_len = std::max(b.text_len, rows.back().size());
    }
    b.text_ids.assign(b.size * b.text_len, kPad);
    for (std::size_t r = 0; r < b.size; ++r) {
      std::copy(rows[r].begin(), rows[r].end(), b.text_ids.begin() + static_cast<std::ptrdiff_t>(r * b.text_len));
      b.lengths.push_back(rows[r].size());
    }
  }
  if (ds.task == Task::classification) {
    for (auto i : indices) b.labels.push_back(ds.samples[i].label);
  } else {
    for (auto i : indices) {
      b.references.push_back(ds.samples[i].target);
      b.decoder_steps = std::max(b.decoder_steps, ds.samples[i].target.size() + 1);
    }
    b.decoder_inputs.assign(b.size * b.decoder_steps, kPad);
    b.decoder_targets.assign(b.size * b.decoder_steps, kPad);
    for (std::size_t r = 0; r < b.size; ++r) {
      const auto& t = b.references[r];
      b.decoder_inputs[r * b.decoder_steps] = kSos;
      for (std::size_t k = 0; k < t.size(); ++k) {
        b.decoder_inputs[r * b.decoder_steps + k + 1] = t[k];
        b.decoder_targets[r * b.decoder_steps + k] = t[k];
      }
      b.decoder_targets[r * b.decoder_steps + t.size()] = kEos;
    }
  }
  return b;
}

/// Encoders, fusion and task head wired per the config.
class FusionModel {
 public:
  FusionModel() = default;
  // Copies would share parameter storage; models move but never copy.
  FusionModel(const FusionModel&) = delete;
  FusionModel& operator=(const FusionModel&) = delete;
  FusionModel(FusionModel&&) = default;
  FusionModel& operator=(FusionModel&&) = default;

  FusionModel(const ExperimentConfig& cfg, const ModelShape& shape) : cfg_(cfg), shape_(shape) {
    cfg.validate();
    Rng rng = make_stream(cfg.seed, "init");
    std::map<Modality, std::size_t> widths;
    if (cfg.modalities.contains(Modality::video)) {
      if (shape.video_width == 0) throw ConfigError("video modality requested but the data has no video features");
      video_.emplace(shape.video_width, cfg.video_latent, rng);
      widths[Modality::video] = cfg.video_latent;
    }
    if (cfg.modalities.contains(Modality::speech)) {
      if (shape.speech_width == 0) throw ConfigError("speech modality requested but the data has no speech features");
      speech_.emplace(shape.speech_width, cfg.speech_latent, rng);
      widths[Modality::speech] = cfg.speech_latent;
    }
    if (cfg.modalities.contains(Modality::text)) {
      if (shape.source_vocab <= 4) throw ConfigError("text modality requested but the source vocabulary is empty");
      text_.emplace(shape.source_vocab, cfg.text_embed, cfg.text_hidden, rng);
      widths[Modality::text] = cfg.text_hidden;
    }
    std::size_t concat_width = 0;
    for (const auto& [m, w] : widths) concat_width += w;
    switch (cfg.fusion) {
      case FusionKind::concat: fused_width_ = concat_width; break;
      case FusionKind::autofusion:
        auto_.emplace(concat_width, cfg.d_fuse, rng);
        fused_width_ = cfg.d_fuse;
        break;
      case FusionKind::gan:
        gan_.emplace(widths, GanDims{cfg.d_noise, cfg.d_fuse, cfg.disc_hidden}, cfg.d_fuse, rng);
        fused_width_ = cfg.d_fuse;
        break;
    }
    if (cfg.task == Task::classification) {
      if (shape.classes < 2) throw ConfigError("classification needs at least two classes");
      classifier_.emplace(fused_width_, cfg.head_hidden, shape.classes, rng, cfg.batch_norm);
    } else {
      if (shape.target_vocab <= 4) throw ConfigError("translation needs a non-empty target vocabulary");
      decoder_.emplace(shape.target_vocab, cfg.decoder_embed, cfg.decoder_hidden, cfg.text_hidden, fused_width_,
                       cfg.decoder_conditioning, rng);
    }
  }

  const ExperimentConfig& config() const { return cfg_; }
  const ModelShape& shape() const { return shape_; }
  std::size_t fused_width() const { return fused_width_; }
  bool is_gan() const { return gan_.has_value(); }
  const GanFusionStack& gan() const { return *gan_; }

  /// Fits the feature standardizers on the training split.
  void fit_normalizers(const Dataset& train) {
    auto fit = [&](std::optional<VectorEncoder>& enc, bool video) {
      if (!enc) return;
      std::vector<double> rows;
      for (const auto& s : train.samples) {
        const auto& f = video ? s.video : s.speech;
        if (f) rows.insert(rows.end(), f->begin(), f->end());
      }
      enc->normalizer().fit(rows);
    };
    fit(video_, true);
    fit(speech_, false);
  }

  LatentBundle encode(const Batch& b) const {
    LatentBundle bundle;
    if (video_) bundle.video = (*video_)(*b.video);
    if (speech_) bundle.speech = (*speech_)(*b.speech);
    if (text_) {
      auto enc = (*text_)(b.text_ids, b.text_len, b.lengths);
      bundle.text = enc.summary;
      bundle.text_states = enc.states;
      bundle.text_mask = std::move(enc.mask);
    }
    bundle.validate();
    return bundle;
  }

  /// Non-adversarial fusion (concat or auto). GAN fusion goes through gan().
  FusionOutput fuse_static(const LatentBundle& bundle) const {
    if (auto_) return (*auto_)(bundle.ordered());
    auto parts = bundle.ordered();
    return {parts.size() == 1 ? parts.front() : concat(parts, 1), Tensor::scalar(0.0)};
  }

  /// Full fusion pass. With GAN fusion `noise_sigma` controls the generator
  /// noise; evaluation passes 0.
  FusionOutput fuse(const LatentBundle& bundle, Rng& noise_rng, double noise_sigma) const {
    if (gan_) return gan_->fuse(bundle, noise_rng, noise_sigma, cfg_.generator_loss);
    return fuse_static(bundle);
  }

  Tensor task_loss(const Batch& b, const LatentBundle& bundle, const Tensor& z_fuse, Mode mode) {
    if (classifier_) {
      Tensor logits = (*classifier_)(z_fuse, mode);
      return cfg_.task_loss == TaskLoss::hinge ? multiclass_hinge(logits, b.labels)
                                               : softmax_cross_entropy(logits, b.labels);
    }
    return decoder_->teacher_forced_loss(decoder_context(bundle, z_fuse), b.decoder_inputs, b.decoder_targets,
                                         b.decoder_steps);
  }

  Tensor logits(const Tensor& z_fuse) { return (*classifier_)(z_fuse, Mode::eval); }

  std::vector<std::vector<int>> decode(const LatentBundle& bundle, const Tensor& z_fuse, std::size_t max_len) const {
    return decoder_->decode_greedy(decoder_context(bundle, z_fuse), max_len);
  }

  /// Everything Adam updates in the main step (discriminators excluded).
  ParameterList parameters() const {
    ParameterList out;
    if (video_) video_->collect(out, "enc.video");
    if (speech_) speech_->collect(out, "enc.speech");
    if (text_) text_->collect(out, "enc.text");
    if (auto_) auto_->collect(out, "fusion.auto");
    if (gan_) gan_->collect(out, "fusion.gan");
    if (classifier_) classifier_->collect(out, "head.cls");
    if (decoder_) decoder_->collect(out, "head.dec");
    return out;
  }

  ParameterList discriminator_parameters() const {
    ParameterList out;
    if (gan_) gan_->collect_discriminators(out, "fusion.gan");
    return out;
  }

  /// Non-trainable state: standardizer statistics, batch-norm running stats and
/// frozen GAN projections.
  ParameterList buffers() const {
    ParameterList out;
    if (video_) video_->collect_buffers(out, "enc.video");
    if (speech_) speech_->collect_buffers(out, "enc.speech");
    if (gan_) gan_->collect_buffers(out, "fusion.gan");
    if (classifier_) classifier_->collect_buffers(out, "head.cls");
    return out;
  }

  /// All named tensors of the model: parameters, discriminators, buffers.
  ParameterList state() const {
    ParameterList out = parameters();
    for (auto& p : discriminator_parameters()) out.push_back(p);
    for (auto& p : buffers()) out.push_back(p);
    return out;
  }

 private:
  DecoderContext decoder_context(const LatentBundle& bundle, const Tensor& z_fuse) const {
    if (!bundle.text) throw std::logic_error("decoder needs text encoder states");
    return {bundle.text_states, bundle.text_mask, z_fuse};
  }

  ExperimentConfig cfg_;
  ModelShape shape_;
  std::size_t fused_width_ = 0;
  std::optional<VectorEncoder> video_;
  std::optional<VectorEncoder> speech_;
  std::optional<TextEncoder> text_;
  std::optional<AutoFusionNet> auto_;
  std::optional<GanFusionStack> gan_;
  std::optional<ClassifierHead> classifier_;
  std::optional<AttentiveDecoder> decoder_;
};

}  // namespace fuselab

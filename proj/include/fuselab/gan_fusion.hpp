#pragma once

#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "fuselab/auto_fusion.hpp"
#include "fuselab/encoders.hpp"

namespace fuselab {

class FusionUnavailableError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class GeneratorLoss { non_saturating, minimax };

inline constexpr double kLogClamp = 1e-12;

struct GanDims {
  std::size_t noise = 8;
  std::size_t compare = 32;  // d_r: width of z_g and z_tr
  std::size_t disc_hidden = 32;
};

/// affine(d_m + d_noise -> d_r) + LeakyReLU + affine(d_r -> d_r)
class Generator {
 public:
  Generator() = default;
  Generator(std::size_t in, std::size_t out, Rng& rng) : l1_(in, out, rng), l2_(out, out, rng) {}
  Tensor operator()(const Tensor& x) const { return l2_(leaky_relu(l1_(x))); }
  void collect(ParameterList& out, const std::string& prefix) const {
    l1_.collect(out, join_name(prefix, "l1"));
    l2_.collect(out, join_name(prefix, "l2"));
  }

 private:
  Affine l1_;
  Affine l2_;
};

/// affine(d_r -> h_D) + LeakyReLU + affine(h_D -> 1) + sigmoid
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(std::size_t in, std::size_t hidden, Rng& rng) : l1_(in, hidden, rng), l2_(hidden, 1, rng) {}
  Tensor operator()(const Tensor& z) const { return sigmoid(l2_(leaky_relu(l1_(z)))); }
  ParameterList parameters() const {
    ParameterList out;
    collect(out, "");
    return out;
  }
  void collect(ParameterList& out, const std::string& prefix) const {
    l1_.collect(out, join_name(prefix, "l1"));
    l2_.collect(out, join_name(prefix, "l2"));
  }

 private:
  Affine l1_;
  Affine l2_;
};

/// -[mean log D(z_tr) + mean log(1 - D(z_g))]. Both inputs are detached, so
/// the backward pass reaches only the discriminator.
inline Tensor discriminator_loss(const Discriminator& d, const Tensor& z_tr, const Tensor& z_g) {
  Tensor real = d(detach(z_tr));
  Tensor fake = d(detach(z_g));
  return neg(add(mean(log(clamp_min(real, kLogClamp))), mean(log(clamp_min(1.0 - fake, kLogClamp)))));
}

/// Generator side of the adversarial loss, evaluated with the discriminator
/// frozen so no gradient lands on its parameters.
inline Tensor generator_loss(const Discriminator& d, const Tensor& z_g,
                             GeneratorLoss variant = GeneratorLoss::non_saturating) {
  FreezeGuard frozen(d.parameters());
  Tensor fake = d(z_g);
  if (variant == GeneratorLoss::minimax) return mean(log(clamp_min(1.0 - fake, kLogClamp)));
  return neg(mean(log(clamp_min(fake, kLogClamp))));
}

/// Fraction of samples the discriminator labels correctly at threshold 0.5.
inline double discriminator_accuracy(const Discriminator& d, const Tensor& z_tr, const Tensor& z_g) {
  NoGradGuard no_grad;
  Tensor real = d(z_tr);
  Tensor fake = d(z_g);
  std::size_t correct = 0;
  for (double p : real.data()) correct += p > 0.5;
  for (double p : fake.data()) correct += p < 0.5;
  return static_cast<double>(correct) / static_cast<double>(real.size() + fake.size());
}

inline Tensor gaussian_noise(std::size_t rows, std::size_t cols, double sigma, Rng& rng) {
  std::vector<double> v(rows * cols, 0.0);
  if (sigma > 0.0) {
    std::normal_distribution<double> dist(0.0, sigma);
    for (auto& x : v) x = dist(rng);
  }
  return Tensor::matrix(rows, cols, std::move(v));
}

struct GanModuleOutput {
  Tensor z_g;
  Tensor z_tr;
  Tensor j_inner;  // reconstruction loss of the inner autofuser, 0 when absent
};

/// Adversarial fusion module for one target modality. The generator maps the
/// target latent (plus noise) toward z_tr, the autofused complementary latents.
class GanFusionModule {
 public:
  GanFusionModule() = default;
  GanFusionModule(Modality target, const std::map<Modality, std::size_t>& widths, const GanDims& dims, Rng& rng)
      : target_(target), dims_(dims) {
    if (!widths.count(target)) throw std::invalid_argument("target modality " + modality_name(target) + " absent");
    std::size_t complement_width = 0;
    for (auto m : kModalityOrder)
      if (m != target && widths.count(m)) {
        complements_.push_back(m);
        complement_width += widths.at(m);
      }
    if (complements_.empty())
      throw FusionUnavailableError("GAN fusion for " + modality_name(target) +
                                   " needs a complementary modality; fall back to concat fusion");
    generator_ = Generator(widths.at(target) + dims.noise, dims.compare, rng);
    discriminator_ = Discriminator(dims.compare, dims.disc_hidden, rng);
    if (complements_.size() >= 2) {
      inner_.emplace(complement_width, dims.compare, rng);
    } else if (complement_width != dims.compare) {
      projection_.emplace(complement_width, dims.compare, rng);
    }
  }

  GanModuleOutput forward(const LatentBundle& bundle, Rng& noise_rng, double sigma) const {
    const auto& z_target = bundle.get(target_);
    if (!z_target) throw FusionUnavailableError("target modality " + modality_name(target_) + " missing from batch");
    std::vector<Tensor> comp;
    for (auto m : complements_) {
      if (!bundle.get(m)) throw FusionUnavailableError("complementary modality " + modality_name(m) + " missing");
      comp.push_back(*bundle.get(m));
    }
    const std::size_t b = z_target->dim(0);
    GanModuleOutput out;
    out.z_g = generator_(concat({*z_target, gaussian_noise(b, dims_.noise, sigma, noise_rng)}, 1));
    if (inner_) {
      FusionOutput fused = (*inner_)(comp);
      out.z_tr = fused.z_fuse;
      out.j_inner = fused.j_fusion;
    } else {
      if (projection_) {
        // A fixed map: no objective trains it, and z_tr only ever reaches D detached.
        NoGradGuard no_grad;
        out.z_tr = (*projection_)(comp.front());
      } else {
        out.z_tr = comp.front();
      }
      out.j_inner = Tensor::scalar(0.0);
    }
    return out;
  }

  Modality target() const { return target_; }
  const std::vector<Modality>& complements() const { return complements_; }
  const Generator& generator() const { return generator_; }
  const Discriminator& discriminator() const { return discriminator_; }
  bool has_inner_autofusion() const { return inner_.has_value(); }
  bool has_projection() const { return projection_.has_value(); }

  /// Everything except the discriminator.
  void collect(ParameterList& out, const std::string& prefix) const {
    generator_.collect(out, join_name(prefix, "G"));
    if (inner_) inner_->collect(out, join_name(prefix, "inner"));
  }
  /// The width-matching projection is frozen, so it is state rather than a parameter.
  void collect_buffers(ParameterList& out, const std::string& prefix) const {
    if (projection_) projection_->collect(out, join_name(prefix, "proj"));
  }
  void collect_discriminator(ParameterList& out, const std::string& prefix) const {
    discriminator_.collect(out, join_name(prefix, "D"));
  }

 private:
  Modality target_ = Modality::text;
  GanDims dims_;
  std::vector<Modality> complements_;
  Generator generator_;
  Discriminator discriminator_;
  std::optional<AutoFusionNet> inner_;
  std::optional<Affine> projection_;
};

struct GanForward {
  std::vector<Modality> targets;
  std::vector<GanModuleOutput> modules;
};

/// One module per present modality, and F_c over the concatenated generator
/// outputs producing z_fuse.
class GanFusionStack {
 public:
  GanFusionStack() = default;
  GanFusionStack(const std::map<Modality, std::size_t>& widths, const GanDims& dims, std::size_t fused_width, Rng& rng) {
    if (widths.size() < 2) throw FusionUnavailableError("GAN fusion needs at least two modalities");
    for (auto m : kModalityOrder)
      if (widths.count(m)) modules_.emplace_back(m, widths, dims, rng);
    fuse_ = Affine(modules_.size() * dims.compare, fused_width, rng);
  }

  GanForward forward(const LatentBundle& bundle, Rng& noise_rng, double sigma) const {
    GanForward out;
    for (const auto& module : modules_) {
      out.targets.push_back(module.target());
      out.modules.push_back(module.forward(bundle, noise_rng, sigma));
    }
    return out;
  }

  /// Sum over modules of the discriminator losses.
  Tensor discriminator_loss(const GanForward& fwd) const {
    Tensor total;
    for (std::size_t i = 0; i < modules_.size(); ++i) {
      Tensor l = fuselab::discriminator_loss(modules_[i].discriminator(), fwd.modules[i].z_tr, fwd.modules[i].z_g);
      total = total.defined() ? add(total, l) : l;
    }
    return total;
  }

  /// z_fuse from the generator outputs; J_fusion is the sum of per-module
  /// generator losses plus inner autofusion reconstruction losses.
  FusionOutput finish(const GanForward& fwd, GeneratorLoss variant = GeneratorLoss::non_saturating) const {
    std::vector<Tensor> generated;
    Tensor j;
    for (std::size_t i = 0; i < modules_.size(); ++i) {
      const auto& mo = fwd.modules[i];
      generated.push_back(mo.z_g);
      Tensor term = add(generator_loss(modules_[i].discriminator(), mo.z_g, variant), mo.j_inner);
      j = j.defined() ? add(j, term) : term;
    }
    return {fuse_(concat(generated, 1)), j};
  }

  FusionOutput fuse(const LatentBundle& bundle, Rng& noise_rng, double sigma,
                    GeneratorLoss variant = GeneratorLoss::non_saturating) const {
    if (bundle.present().count() < 2) throw FusionUnavailableError("GAN fusion needs at least two modalities");
    return finish(forward(bundle, noise_rng, sigma), variant);
  }

  const std::vector<GanFusionModule>& modules() const { return modules_; }
  const GanFusionModule& module(Modality m) const {
    for (const auto& mod : modules_)
      if (mod.target() == m) return mod;
    throw std::out_of_range("no GAN module for " + modality_name(m));
  }
  std::size_t fused_width() const { return fuse_.out_features(); }

  void collect(ParameterList& out, const std::string& prefix) const {
    for (const auto& m : modules_) m.collect(out, join_name(prefix, std::string(1, modality_code(m.target()))));
    fuse_.collect(out, join_name(prefix, "Fc"));
  }
  void collect_discriminators(ParameterList& out, const std::string& prefix) const {
    for (const auto& m : modules_)
      m.collect_discriminator(out, join_name(prefix, std::string(1, modality_code(m.target()))));
  }
  void collect_buffers(ParameterList& out, const std::string& prefix) const {
    for (const auto& m : modules_)
      m.collect_buffers(out, join_name(prefix, std::string(1, modality_code(m.target()))));
  }

 private:
  std::vector<GanFusionModule> modules_;
  Affine fuse_;
};

}  // namespace fuselab

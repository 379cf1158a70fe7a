#pragma once

#include <stdexcept>
#include <vector>

#include "fuselab/layers.hpp"

namespace fuselab {

/// Fused representation plus the fusion-specific loss it contributes.
struct FusionOutput {
  Tensor z_fuse;
  Tensor j_fusion;
};

/// Mean over the batch of the per-sample squared Euclidean distance.
inline Tensor reconstruction_loss(const Tensor& reconstructed, const Tensor& original) {
  if (reconstructed.shape() != original.shape())
    throw DimensionError("reconstruction shape mismatch: " + to_string(reconstructed.shape()) + " vs " +
                         to_string(original.shape()));
  return mean(sum(square(sub(reconstructed, original)), 1));
}

/// Compress-and-reconstruct fusion. The concatenated latents (width k) pass
/// through T = tanh(affine k->t); F_c = affine t->k reconstructs them. The
/// bottleneck is the fused vector.
class AutoFusionNet {
 public:
  AutoFusionNet() = default;
  AutoFusionNet(std::size_t concat_width, std::size_t fused_width, Rng& rng)
      : compress_(concat_width, fused_width, rng), reconstruct_(fused_width, concat_width, rng) {}

  FusionOutput operator()(const std::vector<Tensor>& latents) const {
    if (latents.empty()) throw std::invalid_argument("autofuse needs at least one latent");
    const std::size_t b = latents.front().dim(0);
    for (const auto& z : latents)
      if (z.rank() != 2 || z.dim(0) != b)
        throw DimensionError("autofuse batch mismatch: " + to_string(z.shape()) + " vs batch " + std::to_string(b));
    Tensor zk = concat(latents, 1);
    Tensor zt = tanh(compress_(zk));
    Tensor zk_hat = reconstruct_(zt);
    return {zt, reconstruction_loss(zk_hat, zk)};
  }

  std::size_t concat_width() const { return compress_.in_features(); }
  std::size_t fused_width() const { return compress_.out_features(); }
  Affine& compress() { return compress_; }
  Affine& reconstruct() { return reconstruct_; }

  void collect(ParameterList& out, const std::string& prefix) const {
    compress_.collect(out, join_name(prefix, "T"));
    reconstruct_.collect(out, join_name(prefix, "Fc"));
  }

 private:
  Affine compress_;
  Affine reconstruct_;
};

}  // namespace fuselab

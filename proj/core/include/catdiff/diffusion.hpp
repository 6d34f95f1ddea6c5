#pragma once

#include <cstdint>
#include <vector>

#include "catdiff/tensor.hpp"

namespace catdiff {

class Rng;

/// Per-step variance tables, indexed by t in [1, T].
class NoiseSchedule {
 public:
  NoiseSchedule(std::vector<double> betas);

  std::size_t steps() const { return beta_.size(); }
  double beta(std::size_t t) const { return beta_.at(check(t)); }
  double alpha(std::size_t t) const { return alpha_.at(check(t)); }
  double alpha_bar(std::size_t t) const { return alpha_bar_.at(check(t)); }
  double sigma(std::size_t t) const { return sigma_.at(check(t)); }

 private:
  std::size_t check(std::size_t t) const;
  std::vector<double> beta_, alpha_, alpha_bar_, sigma_;
};

/// Linear betas from beta_start to beta_end; sigma_t = sqrt(beta_t).
NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end);

/// Exact space-to-depth codec: [3×R×R] <-> [3p²×(R/p)×(R/p)].
/// Channel c = (ch·p + py)·p + px holds pixel (gy·p + py, gx·p + px).
class LatentCodec {
 public:
  explicit LatentCodec(std::size_t latent_patch) : patch_(latent_patch) {}
  Tensor encode(const Tensor& image) const;
  Tensor decode(const Tensor& latent) const;
  std::size_t patch() const { return patch_; }

 private:
  std::size_t patch_;
};

/// sqrt(ab)·z + sqrt(1 − ab)·eps.
Tensor q_sample(const Tensor& z, const Tensor& eps, double alpha_bar);
Tensor q_sample(const Tensor& z, std::size_t t, const Tensor& eps, const NoiseSchedule& schedule);

/// One reverse step: (z_t − (1−α_t)/sqrt(1−ᾱ_t)·eps_pred)/sqrt(α_t) + σ_t·noise.
/// At t = 1 the noise term is dropped and `noise` may be undefined.
Tensor ddpm_step(const Tensor& z_t, std::size_t t, const Tensor& eps_pred, const NoiseSchedule& schedule,
                 const Tensor& noise);

/// [C×G×G] <-> [G²×C] token layout. Both are recorded on the tape.
Tensor latent_to_tokens(const Tensor& latent);
Tensor tokens_to_latent(const Tensor& tokens, std::size_t grid);

/// Pixel mask [1×R×R] -> [1×G×G] by max-pooling p×p cells.
Tensor mask_to_latent(const Tensor& mask, std::size_t latent_patch);

/// z ⊙ (1 − m) with the [1×G×G] mask broadcast over channels.
Tensor mask_latent(const Tensor& latent, const Tensor& latent_mask);

/// Image in [0,1] -> diffusion space in [-1,1] (2·encode(x) − 1), and back
/// with clamping to [0,1].
Tensor image_to_diffusion(const LatentCodec& codec, const Tensor& image);
Tensor diffusion_to_image(const LatentCodec& codec, const Tensor& latent);

}  // namespace catdiff

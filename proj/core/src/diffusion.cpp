#include "catdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "catdiff/errors.hpp"
#include "catdiff/ops.hpp"

namespace catdiff {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
  if (beta_.empty()) throw ConfigError("noise schedule needs at least one step");
  double running = 1.0;
  for (double b : beta_) {
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("noise schedule betas must lie in (0, 1)");
    alpha_.push_back(1.0 - b);
    running *= 1.0 - b;
    alpha_bar_.push_back(running);
    sigma_.push_back(std::sqrt(b));
  }
}

std::size_t NoiseSchedule::check(std::size_t t) const {
  if (t < 1 || t > beta_.size())
    throw ContractError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(beta_.size()) + "]");
  return t - 1;
}

NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("make_schedule: T must be at least 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw ConfigError("make_schedule: need 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas[i] = beta_start + (beta_end - beta_start) * frac;
  }
  return NoiseSchedule(std::move(betas));
}

Tensor LatentCodec::encode(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != image.dim(2))
    throw ContractError("latent_encode: expected [3×R×R], got " + shape_str(image.shape()));
  const std::size_t R = image.dim(1), p = patch_;
  if (p == 0 || R % p != 0)
    throw ConfigError("latent patch " + std::to_string(p) + " does not divide resolution " + std::to_string(R));
  const std::size_t G = R / p;
  Tensor z({3 * p * p, G, G});
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t py = 0; py < p; ++py)
      for (std::size_t px = 0; px < p; ++px) {
        const std::size_t c = (ch * p + py) * p + px;
        for (std::size_t gy = 0; gy < G; ++gy)
          for (std::size_t gx = 0; gx < G; ++gx)
            z[(c * G + gy) * G + gx] = image[(ch * R + gy * p + py) * R + gx * p + px];
      }
  return z;
}

Tensor LatentCodec::decode(const Tensor& latent) const {
  const std::size_t p = patch_;
  if (latent.rank() != 3 || latent.dim(0) != 3 * p * p || latent.dim(1) != latent.dim(2))
    throw ContractError("latent_decode: expected [" + std::to_string(3 * p * p) + "×G×G], got " +
                        shape_str(latent.shape()));
  const std::size_t G = latent.dim(1), R = G * p;
  Tensor image({3, R, R});
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t py = 0; py < p; ++py)
      for (std::size_t px = 0; px < p; ++px) {
        const std::size_t c = (ch * p + py) * p + px;
        for (std::size_t gy = 0; gy < G; ++gy)
          for (std::size_t gx = 0; gx < G; ++gx)
            image[(ch * R + gy * p + py) * R + gx * p + px] = latent[(c * G + gy) * G + gx];
      }
  return image;
}

Tensor q_sample(const Tensor& z, const Tensor& eps, double alpha_bar) {
  if (z.shape() != eps.shape())
    throw ContractError("q_sample: z " + shape_str(z.shape()) + " and eps " + shape_str(eps.shape()) + " differ");
  const float a = static_cast<float>(std::sqrt(alpha_bar));
  const float b = static_cast<float>(std::sqrt(1.0 - alpha_bar));
  Tensor out(z.shape());
  for (std::size_t i = 0; i < z.numel(); ++i) out[i] = a * z[i] + b * eps[i];
  return out;
}

Tensor q_sample(const Tensor& z, std::size_t t, const Tensor& eps, const NoiseSchedule& schedule) {
  return q_sample(z, eps, schedule.alpha_bar(t));
}

Tensor ddpm_step(const Tensor& z_t, std::size_t t, const Tensor& eps_pred, const NoiseSchedule& schedule,
                 const Tensor& noise) {
  const double alpha = schedule.alpha(t);
  const double coef = (1.0 - alpha) / std::sqrt(1.0 - schedule.alpha_bar(t));
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
  const bool add_noise = t > 1;
  if (z_t.shape() != eps_pred.shape())
    throw ContractError("ddpm_step: eps prediction " + shape_str(eps_pred.shape()) + " vs z_t " +
                        shape_str(z_t.shape()));
  if (add_noise && (!noise.defined() || noise.shape() != z_t.shape()))
    throw ContractError("ddpm_step: noise must match z_t for t > 1");
  const double sigma = add_noise ? schedule.sigma(t) : 0.0;
  Tensor out(z_t.shape());
  for (std::size_t i = 0; i < z_t.numel(); ++i) {
    double v = (static_cast<double>(z_t[i]) - coef * eps_pred[i]) * inv_sqrt_alpha;
    if (add_noise) v += sigma * noise[i];
    out[i] = static_cast<float>(v);
  }
  return out;
}

Tensor latent_to_tokens(const Tensor& latent) {
  if (latent.rank() != 3) throw ContractError("latent_to_tokens: expected [C×G×G]");
  const std::size_t C = latent.dim(0), G = latent.dim(1);
  return transpose(reshape(latent, {C, G * G}));
}

Tensor tokens_to_latent(const Tensor& tokens, std::size_t grid) {
  if (tokens.rank() != 2 || tokens.dim(0) != grid * grid)
    throw ContractError("tokens_to_latent: expected [G²×C] tokens, got " + shape_str(tokens.shape()));
  const std::size_t C = tokens.dim(1);
  return reshape(transpose(tokens), {C, grid, grid});
}

Tensor mask_to_latent(const Tensor& mask, std::size_t latent_patch) {
  if (mask.rank() != 3 || mask.dim(0) != 1) throw ContractError("mask_to_latent: expected [1×R×R]");
  const std::size_t R = mask.dim(1);
  if (latent_patch == 0 || R % latent_patch != 0) throw ConfigError("mask_to_latent: latent patch must divide R");
  const std::size_t G = R / latent_patch;
  Tensor out({1, G, G});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < R; ++c)
      if (mask[r * R + c] != 0.0f) out[(r / latent_patch) * G + c / latent_patch] = 1.0f;
  return out;
}

Tensor mask_latent(const Tensor& latent, const Tensor& latent_mask) {
  const std::size_t plane = latent_mask.numel();
  if (latent.rank() != 3 || latent.dim(1) * latent.dim(2) != plane)
    throw ContractError("mask_latent: mask " + shape_str(latent_mask.shape()) + " does not fit latent " +
                        shape_str(latent.shape()));
  Tensor out = latent.clone();
  for (std::size_t i = 0; i < out.numel(); ++i)
    if (latent_mask[i % plane] != 0.0f) out[i] = 0.0f;
  return out;
}

Tensor image_to_diffusion(const LatentCodec& codec, const Tensor& image) {
  Tensor z = codec.encode(image);
  for (auto& v : z.data()) v = 2.0f * v - 1.0f;
  return z;
}

Tensor diffusion_to_image(const LatentCodec& codec, const Tensor& latent) {
  Tensor z = latent.clone();
  for (auto& v : z.data()) v = std::clamp(0.5f * (v + 1.0f), 0.0f, 1.0f);
  return codec.decode(z);
}

}  // namespace catdiff

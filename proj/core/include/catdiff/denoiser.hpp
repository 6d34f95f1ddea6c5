#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "catdiff/config.hpp"
#include "catdiff/diffusion.hpp"
#include "catdiff/nn.hpp"

namespace catdiff {

class Rng;

/// Which visual prompt, if any, the reference adapters see.
enum class Variant { baseline, context_only, full };

Variant parse_variant(const std::string& text);
std::string to_string(Variant v);

struct DenoiserConfig {
  std::size_t latent_channels = 48;  // C_z
  std::size_t grid = 8;              // G
  std::size_t width = 48;            // d_h
  std::size_t heads = 4;
  std::size_t blocks = 4;
  std::size_t prompt_width = 32;     // width of ṽ rows
  std::size_t prompt_rows = 16;      // N/4
  std::size_t text_width = 48;       // d_c
  std::size_t classes = 8;
  std::size_t timesteps = 100;
  Variant variant = Variant::full;

  static DenoiserConfig from(const Config& cfg, Variant variant);
  std::size_t input_channels() const { return 2 * latent_channels + 1; }
};

/// Records the stages a block evaluated and the token count each saw.
struct BlockTrace {
  std::vector<std::string> stages;
  std::vector<std::size_t> tokens;
};

/// H_s = SelfAttn(H) + H; H_r = RefAdapter(H_s, ṽ, ṽ) + H_s;
/// H_x = CrossAttn(H_r, C, C) + H_r; then an MLP with its own residual.
/// Attention inputs are layer-normalized. Without an adapter H_r = H_s.
class DenoiserBlock {
 public:
  DenoiserBlock() = default;
  /// Adapter weights come from `adapter_rng` so the shared weights of the
  /// three variants match under one seed.
  DenoiserBlock(const DenoiserConfig& config, Rng& rng, Rng& adapter_rng);

  Tensor operator()(const Tensor& h, const Tensor& vprompt, const Tensor& text, BlockTrace* trace = nullptr) const;

  bool has_adapter() const { return has_adapter_; }
  const MultiHeadAttention& adapter() const { return ref_attn_; }
  void collect(NamedTensors& out, const std::string& prefix) const;

 private:
  LayerNorm norm_self_, norm_ref_, norm_cross_, norm_mlp_;
  MultiHeadAttention self_attn_, ref_attn_, cross_attn_;
  Mlp mlp_;
  bool has_adapter_ = false;
};

/// Sinusoidal embedding of a timestep: [sin(t·f_i) | cos(t·f_i)],
/// f_i = 10000^(−i/half).
Tensor timestep_embedding(std::size_t t, std::size_t width);

/// ε-prediction network ε_θ([z_t, z ⊙ (1 − m), m], t, c, ṽ) over G² latent tokens.
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& config, std::uint64_t seed);
  Denoiser(const Denoiser& other);
  Denoiser& operator=(const Denoiser&) = delete;

  /// Latent-shaped ε-prediction. `vprompt` is ignored (and may be undefined)
  /// for the baseline variant.
  Tensor forward(const Tensor& z_t, const Tensor& masked_latent, const Tensor& latent_mask, std::size_t t,
                 std::size_t class_id, const Tensor& vprompt, std::vector<BlockTrace>* traces = nullptr) const;

  /// Same with explicit text features C [N_c×d_c] instead of a class lookup.
  Tensor forward_with_text(const Tensor& z_t, const Tensor& masked_latent, const Tensor& latent_mask, std::size_t t,
                           const Tensor& text, const Tensor& vprompt, std::vector<BlockTrace>* traces = nullptr) const;

  /// Text features C for a class: one row of the learnable table.
  Tensor text_features(std::size_t class_id) const;

  NamedTensors parameters() const;
  void freeze();
  bool frozen() const { return frozen_; }
  const DenoiserConfig& config() const { return config_; }

 private:
  DenoiserConfig config_;
  Linear in_proj_;
  Tensor positions_;
  Linear time_fc1_, time_fc2_;
  Tensor text_table_;
  std::vector<DenoiserBlock> blocks_;
  LayerNorm out_norm_;
  Linear out_proj_;
  bool frozen_ = false;
};

/// One training example for the ε-objective. Latents live in diffusion space.
struct DiffusionExample {
  Tensor z0;             // [C_z×G×G]
  Tensor masked_latent;  // z0 ⊙ (1 − m)
  Tensor latent_mask;    // [1×G×G]
  std::size_t class_id = 0;
  Tensor vprompt;        // [(N/4)×d], undefined for the baseline
};

using EpsPredictor = std::function<Tensor(const DiffusionExample& ex, const Tensor& z_t, std::size_t t)>;

/// Mean over the batch of mse(ε_θ(q_sample(z0, t, ε), t), ε) with
/// t ~ U{1..T} and ε ~ N(0, I) drawn from `rng` per example.
Tensor ldm_loss(std::span<const DiffusionExample> batch, const EpsPredictor& predictor,
                const NoiseSchedule& schedule, Rng& rng);

}  // namespace catdiff

#include "catdiff/denoiser.hpp"

#include <cmath>

#include "catdiff/errors.hpp"
#include "catdiff/ops.hpp"
#include "catdiff/rng.hpp"

namespace catdiff {

Variant parse_variant(const std::string& text) {
  if (text == "baseline") return Variant::baseline;
  if (text == "context_only") return Variant::context_only;
  if (text == "full") return Variant::full;
  throw ConfigError("unknown variant '" + text + "' (expected baseline, context_only or full)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::context_only: return "context_only";
    case Variant::full: return "full";
  }
  return "?";
}

DenoiserConfig DenoiserConfig::from(const Config& cfg, Variant variant) {
  DenoiserConfig d;
  d.latent_channels = cfg.latent_channels();
  d.grid = cfg.latent_grid();
  d.width = cfg.denoiser_width;
  d.heads = cfg.denoiser_heads;
  d.blocks = cfg.denoiser_blocks;
  d.prompt_width = cfg.width;
  d.prompt_rows = cfg.num_patches() / 4;
  d.text_width = cfg.denoiser_width;
  d.classes = cfg.classes;
  d.timesteps = cfg.timesteps;
  d.variant = variant;
  return d;
}

DenoiserBlock::DenoiserBlock(const DenoiserConfig& config, Rng& rng, Rng& adapter_rng)
    : norm_self_(config.width),
      norm_ref_(config.width),
      norm_cross_(config.width),
      norm_mlp_(config.width),
      self_attn_(config.width, config.width, config.heads, rng),
      cross_attn_(config.width, config.text_width, config.heads, rng),
      mlp_(config.width, rng),
      has_adapter_(config.variant != Variant::baseline) {
  if (has_adapter_) ref_attn_ = MultiHeadAttention(config.width, config.prompt_width, config.heads, adapter_rng, true);
}

Tensor DenoiserBlock::operator()(const Tensor& h, const Tensor& vprompt, const Tensor& text, BlockTrace* trace) const {
  auto note = [&](const char* stage, const Tensor& x) {
    if (!trace) return;
    trace->stages.emplace_back(stage);
    trace->tokens.push_back(x.dim(0));
  };
  note("H", h);
  const Tensor n1 = norm_self_(h);
  const Tensor h_s = add(self_attn_(n1, n1, n1), h);
  note("H_s", h_s);
  Tensor h_r = h_s;
  if (has_adapter_) {
    h_r = add(ref_attn_(norm_ref_(h_s), vprompt, vprompt), h_s);
    note("H_r", h_r);
  }
  const Tensor h_x = add(cross_attn_(norm_cross_(h_r), text, text), h_r);
  note("H_x", h_x);
  return add(mlp_(norm_mlp_(h_x)), h_x);
}

void DenoiserBlock::collect(NamedTensors& out, const std::string& prefix) const {
  norm_self_.collect(out, prefix + ".norm_self");
  self_attn_.collect(out, prefix + ".self_attn");
  if (has_adapter_) {
    norm_ref_.collect(out, prefix + ".norm_ref");
    ref_attn_.collect(out, prefix + ".ref_adapter");
  }
  norm_cross_.collect(out, prefix + ".norm_cross");
  cross_attn_.collect(out, prefix + ".cross_attn");
  norm_mlp_.collect(out, prefix + ".norm_mlp");
  mlp_.collect(out, prefix + ".mlp");
}

Tensor timestep_embedding(std::size_t t, std::size_t width) {
  if (width < 2 || width % 2 != 0) throw ConfigError("timestep embedding width must be even and >= 2");
  const std::size_t half = width / 2;
  Tensor out({1, width});
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    const double arg = static_cast<double>(t) * freq;
    out[i] = static_cast<float>(std::sin(arg));
    out[half + i] = static_cast<float>(std::cos(arg));
  }
  return out;
}

Denoiser::Denoiser(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
  if (config.width % config.heads != 0)
    throw ConfigError("denoiser width " + std::to_string(config.width) + " is not divisible by " +
                      std::to_string(config.heads) + " heads");
  Rng rng(derive_seed(seed, 0xD1FF));
  Rng adapter_rng(derive_seed(seed, 0xADA));
  const std::size_t d = config.width;
  in_proj_ = Linear(config.input_channels(), d, rng);
  positions_ = make_param(Tensor::randn({config.grid * config.grid, d}, rng, 0.1f));
  time_fc1_ = Linear(d, d, rng);
  time_fc2_ = Linear(d, d, rng);
  text_table_ = make_param(Tensor::randn({config.classes, config.text_width}, rng, 1.0f));
  for (std::size_t b = 0; b < config.blocks; ++b) blocks_.emplace_back(config, rng, adapter_rng);
  out_norm_ = LayerNorm(d);
  out_proj_ = Linear(d, config.latent_channels, rng);
}

Denoiser::Denoiser(const Denoiser& other) : Denoiser(other.config_, 0) {
  assign_parameters(parameters(), other.parameters());
  if (other.frozen_) freeze();
}

Tensor Denoiser::text_features(std::size_t class_id) const {
  if (class_id >= config_.classes)
    throw ContractError("denoiser: class id " + std::to_string(class_id) + " out of range");
  const std::size_t row[] = {class_id};
  return gather_rows(text_table_, row);
}

Tensor Denoiser::forward(const Tensor& z_t, const Tensor& masked_latent, const Tensor& latent_mask, std::size_t t,
                         std::size_t class_id, const Tensor& vprompt, std::vector<BlockTrace>* traces) const {
  return forward_with_text(z_t, masked_latent, latent_mask, t, text_features(class_id), vprompt, traces);
}

Tensor Denoiser::forward_with_text(const Tensor& z_t, const Tensor& masked_latent, const Tensor& latent_mask,
                                   std::size_t t, const Tensor& text, const Tensor& vprompt,
                                   std::vector<BlockTrace>* traces) const {
  const std::size_t C = config_.latent_channels, G = config_.grid;
  const Shape latent_shape{C, G, G};
  if (z_t.shape() != latent_shape)
    throw ContractError("denoiser: z_t has shape " + shape_str(z_t.shape()) + ", expected " + shape_str(latent_shape));
  if (masked_latent.shape() != latent_shape)
    throw ContractError("denoiser: masked latent has shape " + shape_str(masked_latent.shape()) + ", expected " +
                        shape_str(latent_shape));
  if (latent_mask.shape() != Shape{1, G, G})
    throw ContractError("denoiser: latent mask has shape " + shape_str(latent_mask.shape()) + ", expected " +
                        shape_str({1, G, G}));
  if (t < 1 || t > config_.timesteps)
    throw ContractError("denoiser: timestep " + std::to_string(t) + " outside [1, " +
                        std::to_string(config_.timesteps) + "]");
  if (text.rank() != 2 || text.dim(1) != config_.text_width)
    throw ContractError("denoiser: text features have shape " + shape_str(text.shape()));
  if (config_.variant != Variant::baseline &&
      (!vprompt.defined() || vprompt.shape() != Shape{config_.prompt_rows, config_.prompt_width}))
    throw ContractError("denoiser: visual prompt must be [" + std::to_string(config_.prompt_rows) + "×" +
                        std::to_string(config_.prompt_width) + "], got " +
                        (vprompt.defined() ? shape_str(vprompt.shape()) : std::string("none")));

  const Tensor channels[] = {latent_to_tokens(z_t), latent_to_tokens(masked_latent), latent_to_tokens(latent_mask)};
  Tensor h = add(in_proj_(concat_cols(channels)), positions_);
  const Tensor temb = time_fc2_(gelu(time_fc1_(timestep_embedding(t, config_.width))));
  h = add_row(h, temb);
  if (traces) traces->assign(blocks_.size(), {});
  for (std::size_t b = 0; b < blocks_.size(); ++b) h = blocks_[b](h, vprompt, text, traces ? &(*traces)[b] : nullptr);
  return tokens_to_latent(out_proj_(out_norm_(h)), G);
}

NamedTensors Denoiser::parameters() const {
  NamedTensors out;
  in_proj_.collect(out, "in_proj");
  out.emplace_back("positions", positions_);
  time_fc1_.collect(out, "time_fc1");
  time_fc2_.collect(out, "time_fc2");
  out.emplace_back("text_table", text_table_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].collect(out, "block" + std::to_string(b));
  out_norm_.collect(out, "out_norm");
  out_proj_.collect(out, "out_proj");
  return out;
}

void Denoiser::freeze() {
  frozen_ = true;
  set_requires_grad(parameters(), false);
}

Tensor ldm_loss(std::span<const DiffusionExample> batch, const EpsPredictor& predictor,
                const NoiseSchedule& schedule, Rng& rng) {
  if (batch.empty()) throw ContractError("ldm_loss: empty batch");
  std::vector<Tensor> losses;
  losses.reserve(batch.size());
  for (const auto& ex : batch) {
    const std::size_t t = 1 + rng.index(schedule.steps());
    const Tensor eps = Tensor::randn(ex.z0.shape(), rng);
    const Tensor z_t = q_sample(ex.z0, t, eps, schedule);
    losses.push_back(mse(predictor(ex, z_t, t), eps));
  }
  if (losses.size() == 1) return losses[0];
  return scale(sum(concat_rows(losses)), 1.0f / static_cast<float>(losses.size()));
}

}  // namespace catdiff

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace catdiff {

/// Every tunable of the pipeline. Text form is one `key = value` per line;
/// '#' starts a comment. Unknown keys are rejected.
struct Config {
  std::uint64_t seed = 7;

  // data
  std::size_t resolution = 32;
  std::size_t patch = 4;
  std::size_t latent_patch = 4;
  std::size_t classes = 8;
  double min_area = 0.05;
  double max_area = 0.40;
  std::size_t n_train = 640;
  std::size_t n_test = 160;

  // teacher + inpainter feature space
  std::size_t width = 32;
  std::size_t heads = 4;
  std::size_t teacher_layers = 2;
  std::size_t inpainter_layers = 4;
  double tau = 0.07;

  // denoiser
  std::size_t denoiser_width = 48;
  std::size_t denoiser_heads = 4;
  std::size_t denoiser_blocks = 4;
  std::size_t timesteps = 100;
  double beta_start = 1e-3;
  double beta_end = 0.2;
  std::string vprompt_source = "predicted";  // predicted | ground_truth

  // optimization
  double lr = 1e-3;
  std::size_t batch_size = 8;
  std::size_t teacher_epochs = 100;
  std::size_t inpainter_epochs = 40;
  std::size_t denoiser_epochs = 20;
  // Ablation only: epochs of a shared adapter-free trunk per seed that every
  // variant then continues from. 0 trains each variant from scratch.
  std::size_t denoiser_pretrain_epochs = 0;

  // evaluation
  std::size_t eval_scenes = 96;
  std::string eval_mask = "seg";  // seg | bbox
  std::size_t ablation_seeds = 3;
  std::size_t hist_bins = 20;

  std::string output_dir = "runs";

  bool operator==(const Config&) const = default;

  std::size_t grid() const { return resolution / patch; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t latent_grid() const { return resolution / latent_patch; }
  std::size_t latent_channels() const { return 3 * latent_patch * latent_patch; }

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  std::string serialize() const;
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Architecture-defining fields per stage; checkpoints carry their hash.
  std::string teacher_signature() const;
  std::string inpainter_signature() const;
  std::string denoiser_signature(const std::string& variant) const;
};

std::uint64_t fnv1a64(const std::string& text);

}  // namespace catdiff

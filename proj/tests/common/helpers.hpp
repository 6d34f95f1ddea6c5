#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "catdiff/config.hpp"
#include "catdiff/rng.hpp"
#include "catdiff/tensor.hpp"

namespace testutil {

// Small pipeline used wherever a test needs every stage to run in seconds.
inline catdiff::Config tiny_config() {
  catdiff::Config c;
  c.resolution = 16;
  c.patch = 4;
  c.latent_patch = 4;
  c.classes = 4;
  c.n_train = 16;
  c.n_test = 8;
  c.width = 16;
  c.heads = 2;
  c.teacher_layers = 1;
  c.inpainter_layers = 1;
  c.denoiser_width = 16;
  c.denoiser_heads = 2;
  c.denoiser_blocks = 1;
  c.timesteps = 8;
  c.teacher_epochs = 2;
  c.inpainter_epochs = 2;
  c.denoiser_epochs = 2;
  c.batch_size = 4;
  c.eval_scenes = 4;
  c.ablation_seeds = 1;
  return c;
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("catdiff_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline catdiff::Tensor random_tensor(catdiff::Shape shape, std::uint64_t seed, float stddev = 1.0f) {
  catdiff::Rng rng(seed);
  return catdiff::Tensor::randn(std::move(shape), rng, stddev);
}

}  // namespace testutil

#pragma once

#include <cstdint>
#include <vector>

#include "catdiff/nn.hpp"

namespace catdiff {

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

struct AdamState {
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> second_moment;
  std::uint64_t step = 0;
};

/// Bias-corrected Adam over a fixed parameter list. Every parameter must be
/// trainable (requires_grad); frozen tensors are rejected at construction.
class Adam {
 public:
  Adam(NamedTensors params, AdamConfig config = {});

  /// Applies one update from the current gradients, then zeroes them.
  /// Throws NumericError naming the parameter if a gradient is not finite.
  void step();
  void zero_grad();

  const AdamState& state() const { return state_; }
  const AdamConfig& config() const { return config_; }

 private:
  NamedTensors params_;
  AdamConfig config_;
  AdamState state_;
};

}  // namespace catdiff

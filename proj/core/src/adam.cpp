#include "catdiff/adam.hpp"

#include <cmath>

#include "catdiff/errors.hpp"

namespace catdiff {

Adam::Adam(NamedTensors params, AdamConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0.0f)) throw ConfigError("Adam learning rate must be positive");
  for (const auto& [name, t] : params_) {
    if (!t.requires_grad())
      throw ContractError("Adam: parameter '" + name + "' is frozen and cannot be optimized");
    state_.first_moment.emplace_back(t.numel(), 0.0f);
    state_.second_moment.emplace_back(t.numel(), 0.0f);
  }
}

void Adam::step() {
  for (const auto& [name, t] : params_) {
    for (float g : t.grad())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + name + "'");
  }
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const float bc1 = static_cast<float>(1.0 - std::pow(static_cast<double>(config_.beta1), t));
  const float bc2 = static_cast<float>(1.0 - std::pow(static_cast<double>(config_.beta2), t));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    Tensor param = params_[p].second;
    float* w = param.ptr();
    const float* g = param.grad().data();
    float* m = state_.first_moment[p].data();
    float* v = state_.second_moment[p].data();
    for (std::size_t i = 0; i < param.numel(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0f - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0f - config_.beta2) * g[i] * g[i];
      const float m_hat = m[i] / bc1;
      const float v_hat = v[i] / bc2;
      w[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
  zero_grad();
}

void Adam::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

}  // namespace catdiff

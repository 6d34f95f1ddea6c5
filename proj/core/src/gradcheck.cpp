#include "catdiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "catdiff/errors.hpp"
#include "catdiff/tape.hpp"

namespace catdiff {

float finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, float h) {
  const bool had_grad = x.requires_grad();
  if (!had_grad) x.set_requires_grad(true);

  std::vector<float> analytic(x.numel(), 0.0f);
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = f(x);
    if (loss.numel() != 1) throw ContractError("finite_diff_check: f must return a scalar");
    if (loss.requires_grad()) {
      tape.backward(loss);
      std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    }
  }

  float worst = 0.0f;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float orig = x[i];
    const float plus = orig + h;
    const float minus = orig - h;
    x[i] = plus;
    const double up = f(x).item();
    x[i] = minus;
    const double down = f(x).item();
    x[i] = orig;
    // Use the representable step, not the nominal one.
    const double numeric = (up - down) / (static_cast<double>(plus) - static_cast<double>(minus));
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(static_cast<double>(analytic[i])));
    worst = std::max(worst, static_cast<float>(err));
  }
  if (!had_grad) x.set_requires_grad(false);
  return worst;
}

}  // namespace catdiff

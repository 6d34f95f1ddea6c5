#pragma once

#include <functional>

#include "catdiff/tensor.hpp"

namespace catdiff {

/// Compares the tape gradient of a scalar function against central finite
/// differences at every coordinate of `x`. Returns
/// max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
///
/// `f` must be deterministic; a non-deterministic f gives a meaningless
/// result and is not detected. `x` is restored on return.
float finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, float h = 1e-3f);

}  // namespace catdiff

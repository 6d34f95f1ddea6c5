#pragma once

#include <span>
#include <vector>

#include "catdiff/tensor.hpp"

// Differentiable tensor operations. Each op computes its forward value
// eagerly and, if a tape is active and any input requires grad, records a
// backward rule on it. "Rows" of a tensor are its trailing-axis vectors.

namespace catdiff {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);
/// x[..., n] + row[n]; the only broadcasting the library supports.
Tensor add_row(const Tensor& x, const Tensor& row);

/// a[m×k] · b[k×n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
/// Per-row normalization with biased variance, then gain/bias affine.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f);
/// tanh approximation.
Tensor gelu(const Tensor& x);

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
/// Stacks matrices along rows; rank-1 inputs are joined into one vector.
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
/// Embedding lookup: result row i = table[rows[i]].
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows);
Tensor reshape(const Tensor& x, Shape shape);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// [m×n] -> [1×n] column means.
Tensor mean_rows(const Tensor& x);
/// mean((a-b)^2) over all entries.
Tensor mse(const Tensor& a, const Tensor& b);
/// x / sqrt(|x|^2 + eps) per row.
Tensor l2_normalize_rows(const Tensor& x, float eps = 1e-12f);
/// Mean over rows of -log softmax(logits[i])[targets[i]].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

// Raw kernels, exposed for the benchmarks and for non-differentiable callers.
namespace kernels {
/// c[m×n] += a[m×k] · b[k×n]
void gemm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n);
/// c[k×n] += a[m×k]^T · b[m×n]
void gemm_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n);
/// c[m×n] += a[m×k] · b[n×k]^T
void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n);
}  // namespace kernels

}  // namespace catdiff

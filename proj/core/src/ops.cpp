#include "catdiff/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numbers>

#include "catdiff/errors.hpp"
#include "catdiff/tape.hpp"

namespace catdiff {

namespace {

Tape* recording(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = active_tape();
  if (!tape) return nullptr;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return tape;
  return nullptr;
}

Tape* recording(std::span<const Tensor> inputs) {
  Tape* tape = active_tape();
  if (!tape) return nullptr;
  for (const Tensor& t : inputs)
    if (t.requires_grad()) return tape;
  return nullptr;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_rank2(const char* op, const Tensor& a) {
  if (a.rank() != 2) throw ContractError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

std::size_t row_width(const Tensor& x) { return x.shape().back(); }
std::size_t row_count(const Tensor& x) { return x.numel() / x.shape().back(); }

}  // namespace

namespace kernels {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

void gemm_nn(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  Map(c, M, N).noalias() += ConstMap(a, M, K) * ConstMap(b, K, N);
}

void gemm_tn(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  Map(c, K, N).noalias() += ConstMap(a, M, K).transpose() * ConstMap(b, M, N);
}

void gemm_nt(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
  Map(c, M, N).noalias() += ConstMap(a, M, K) * ConstMap(b, N, K).transpose();
}

}  // namespace kernels

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] + b[i];
  if (Tape* tape = recording({&a, &b})) {
    out.set_requires_grad(true);
    tape->record({a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto gx = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gx = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] - b[i];
  if (Tape* tape = recording({&a, &b})) {
    out.set_requires_grad(true);
    tape->record({a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto gx = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gx = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * b[i];
  if (Tape* tape = recording({&a, &b})) {
    out.set_requires_grad(true);
    tape->record({a, b}, out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto gx = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * b[i];
      }
      if (b.requires_grad()) {
        auto gx = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * a[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, float factor) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a[i] * factor;
  if (Tape* tape = recording({&a})) {
    out.set_requires_grad(true);
    tape->record({a}, out, [a, out, factor]() mutable {
      auto g = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor add_row(const Tensor& x, const Tensor& row) {
  const std::size_t n = row_width(x);
  if (row.numel() != n)
    throw ContractError("add_row: row of " + std::to_string(row.numel()) + " elements cannot broadcast over " +
                        shape_str(x.shape()));
  const std::size_t m = row_count(x);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] + row[j];
  if (Tape* tape = recording({&x, &row})) {
    out.set_requires_grad(true);
    tape->record({x, row}, out, [x, row, out, m, n]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (row.requires_grad()) {
        auto gr = row.grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ContractError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out({m, n});
  kernels::gemm_nn(a.ptr(), b.ptr(), out.ptr(), m, k, n);
  if (Tape* tape = recording({&a, &b})) {
    out.set_requires_grad(true);
    tape->record({a, b}, out, [a, b, out, m, k, n]() mutable {
      const float* g = out.grad().data();
      if (a.requires_grad()) {
        kernels::gemm_nt(g, b.ptr(), a.grad().data(), m, n, k);
      }
      if (b.requires_grad()) kernels::gemm_tn(a.ptr(), g, b.grad().data(), m, k, n);
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank2("transpose", a);
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  if (Tape* tape = recording({&a})) {
    out.set_requires_grad(true);
    tape->record({a}, out, [a, out, m, n]() mutable {
      auto g = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  const std::size_t n = row_width(x), m = row_count(x);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const float* xi = x.ptr() + i * n;
    float* yi = out.ptr() + i * n;
    const float mx = *std::max_element(xi, xi + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      total += yi[j];
    }
    const float inv = static_cast<float>(1.0 / total);
    for (std::size_t j = 0; j < n; ++j) yi[j] *= inv;
  }
  if (Tape* tape = recording({&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out, m, n]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * out[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          gx[i * n + j] += out[i * n + j] * (g[i * n + j] - static_cast<float>(dot));
      }
    });
  }
  return out;
}

Tensor log_softmax(const Tensor& x) {
  const std::size_t n = row_width(x), m = row_count(x);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const float* xi = x.ptr() + i * n;
    const float mx = *std::max_element(xi, xi + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(static_cast<double>(xi[j] - mx));
    const float lse = mx + static_cast<float>(std::log(total));
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xi[j] - lse;
  }
  if (Tape* tape = recording({&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out, m, n]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < m; ++i) {
        double gsum = 0.0;
        for (std::size_t j = 0; j < n; ++j) gsum += g[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          gx[i * n + j] += g[i * n + j] - std::exp(out[i * n + j]) * static_cast<float>(gsum);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  const std::size_t n = row_width(x), m = row_count(x);
  if (n < 2) throw ContractError("layer_norm: row width must be at least 2");
  if (gain.numel() != n || bias.numel() != n)
    throw ContractError("layer_norm: gain/bias must have " + std::to_string(n) + " elements");
  Tensor out(x.shape());
  std::vector<float> xhat(x.numel());
  std::vector<float> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const float* xi = x.ptr() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xi[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = static_cast<float>(is);
    for (std::size_t j = 0; j < n; ++j) {
      const float xh = static_cast<float>((xi[j] - mu) * is);
      xhat[i * n + j] = xh;
      out[i * n + j] = xh * gain[j] + bias[j];
    }
  }
  if (Tape* tape = recording({&x, &gain, &bias})) {
    out.set_requires_grad(true);
    tape->record({x, gain, bias}, out,
                 [x, gain, bias, out, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)]() mutable {
                   auto g = out.grad();
                   if (gain.requires_grad()) {
                     auto gg = gain.grad();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
                   }
                   if (bias.requires_grad()) {
                     auto gb = bias.grad();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                   }
                   if (x.requires_grad()) {
                     auto gx = x.grad();
                     std::vector<float> dxh(n);
                     for (std::size_t i = 0; i < m; ++i) {
                       double s1 = 0.0, s2 = 0.0;
                       for (std::size_t j = 0; j < n; ++j) {
                         dxh[j] = g[i * n + j] * gain[j];
                         s1 += dxh[j];
                         s2 += dxh[j] * xhat[i * n + j];
                       }
                       const float mean1 = static_cast<float>(s1 / static_cast<double>(n));
                       const float mean2 = static_cast<float>(s2 / static_cast<double>(n));
                       for (std::size_t j = 0; j < n; ++j)
                         gx[i * n + j] += inv_std[i] * (dxh[j] - mean1 - xhat[i * n + j] * mean2);
                     }
                   }
                 });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  constexpr float c = 0.7978845608028654f;  // sqrt(2/pi)
  constexpr float k = 0.044715f;
  Tensor out(x.shape());
  std::vector<float> th(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float v = x[i];
    th[i] = std::tanh(c * (v + k * v * v * v));
    out[i] = 0.5f * v * (1.0f + th[i]);
  }
  if (Tape* tape = recording({&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out, th = std::move(th)]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const float v = x[i];
        const float t = th[i];
        const float d = 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * c * (1.0f + 3.0f * k * v * v);
        gx[i] += g[i] * d;
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank2("slice_rows", x);
  const std::size_t n = x.dim(1);
  if (count == 0 || start + count > x.dim(0))
    throw ContractError("slice_rows: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                        ") out of bounds for " + shape_str(x.shape()));
  Tensor out({count, n});
  std::copy_n(x.ptr() + start * n, count * n, out.ptr());
  if (Tape* tape = recording({&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out, start, n]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[start * n + i] += g[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank2("slice_cols", x);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (count == 0 || start + count > n)
    throw ContractError("slice_cols: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                        ") out of bounds for " + shape_str(x.shape()));
  Tensor out({m, count});
  for (std::size_t i = 0; i < m; ++i) std::copy_n(x.ptr() + i * n + start, count, out.ptr() + i * count);
  if (Tape* tape = recording({&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out, start, m, n, count]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < count; ++j) gx[i * n + start + j] += g[i * count + j];
    });
  }
  return out;
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const bool vectors = parts[0].rank() == 1;
  const std::size_t n = vectors ? 1 : parts[0].dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (vectors) {
      if (p.rank() != 1) throw ContractError("concat_rows: cannot mix vectors with " + shape_str(p.shape()));
    } else {
      require_rank2("concat_rows", p);
      if (p.dim(1) != n) throw ContractError("concat_rows: column mismatch " + shape_str(p.shape()));
    }
    rows += p.dim(0);
  }
  Tensor out(vectors ? Shape{rows} : Shape{rows, n});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy_n(p.ptr(), p.numel(), out.ptr() + offset);
    offset += p.numel();
  }
  if (Tape* tape = recording(parts)) {
    out.set_requires_grad(true);
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    tape->record(inputs, out, [inputs, out]() mutable {
      auto g = out.grad();
      std::size_t off = 0;
      for (auto& p : inputs) {
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
        }
        off += p.numel();
      }
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t m = parts[0].dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_rank2("concat_cols", p);
    if (p.dim(0) != m) throw ContractError("concat_cols: row mismatch " + shape_str(p.shape()));
    cols += p.dim(1);
  }
  Tensor out({m, cols});
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t i = 0; i < m; ++i) std::copy_n(p.ptr() + i * w, w, out.ptr() + i * cols + offset);
    offset += w;
  }
  if (Tape* tape = recording(parts)) {
    out.set_requires_grad(true);
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    tape->record(inputs, out, [inputs, out, m, cols]() mutable {
      auto g = out.grad();
      std::size_t off = 0;
      for (auto& p : inputs) {
        const std::size_t w = p.dim(1);
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * cols + off + j];
        }
        off += w;
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> rows) {
  require_rank2("gather_rows", table);
  if (rows.empty()) throw ContractError("gather_rows: empty index list");
  const std::size_t k = table.dim(0), n = table.dim(1);
  Tensor out({rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= k)
      throw ContractError("gather_rows: index " + std::to_string(rows[i]) + " out of range for table of " +
                          std::to_string(k) + " rows");
    std::copy_n(table.ptr() + rows[i] * n, n, out.ptr() + i * n);
  }
  if (Tape* tape = recording({&table})) {
    out.set_requires_grad(true);
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    tape->record({table}, out, [table, out, n, idx = std::move(idx)]() mutable {
      auto g = out.grad();
      auto gt = table.grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < n; ++j) gt[idx[i] * n + j] += g[i * n + j];
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  Tensor out = x.reshaped(std::move(shape));
  if (Tape* tape = recording({&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (float v : x.data()) total += v;
  Tensor out = Tensor::scalar(static_cast<float>(total));
  if (Tape* tape = recording({&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out]() mutable {
      const float g = out.grad()[0];
      for (auto& v : x.grad()) v += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  double total = 0.0;
  for (float v : x.data()) total += v;
  const std::size_t count = x.numel();
  Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(count)));
  if (Tape* tape = recording({&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out, count]() mutable {
      const float g = out.grad()[0] / static_cast<float>(count);
      for (auto& v : x.grad()) v += g;
    });
  }
  return out;
}

Tensor mean_rows(const Tensor& x) {
  require_rank2("mean_rows", x);
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out({1, n});
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += x[i * n + j];
    out[j] = static_cast<float>(s / static_cast<double>(m));
  }
  if (Tape* tape = recording({&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out, m, n]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      const float inv = 1.0f / static_cast<float>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j] * inv;
    });
  }
  return out;
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape("mse", a, b);
  double total = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    total += d * d;
  }
  const std::size_t count = a.numel();
  Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(count)));
  if (Tape* tape = recording({&a, &b})) {
    out.set_requires_grad(true);
    tape->record({a, b}, out, [a, b, out, count]() mutable {
      const float g = 2.0f * out.grad()[0] / static_cast<float>(count);
      if (a.requires_grad()) {
        auto gx = a.grad();
        for (std::size_t i = 0; i < count; ++i) gx[i] += g * (a[i] - b[i]);
      }
      if (b.requires_grad()) {
        auto gx = b.grad();
        for (std::size_t i = 0; i < count; ++i) gx[i] -= g * (a[i] - b[i]);
      }
    });
  }
  return out;
}

Tensor l2_normalize_rows(const Tensor& x, float eps) {
  const std::size_t n = row_width(x), m = row_count(x);
  Tensor out(x.shape());
  std::vector<float> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(x[i * n + j]) * x[i * n + j];
    norms[i] = static_cast<float>(std::sqrt(s + eps));
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] / norms[i];
  }
  if (Tape* tape = recording({&x})) {
    out.set_requires_grad(true);
    tape->record({x}, out, [x, out, m, n, norms = std::move(norms)]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * out[i * n + j];
        for (std::size_t j = 0; j < n; ++j)
          gx[i * n + j] += (g[i * n + j] - out[i * n + j] * static_cast<float>(dot)) / norms[i];
      }
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  require_rank2("cross_entropy", logits);
  const std::size_t m = logits.dim(0), n = logits.dim(1);
  if (targets.size() != m)
    throw ContractError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(m) +
                        " rows");
  std::vector<float> probs(m * n);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] >= n) throw ContractError("cross_entropy: target out of range");
    const float* li = logits.ptr() + i * n;
    const float mx = *std::max_element(li, li + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(static_cast<double>(li[j] - mx));
    for (std::size_t j = 0; j < n; ++j) probs[i * n + j] = static_cast<float>(std::exp(static_cast<double>(li[j] - mx)) / z);
    total += -(static_cast<double>(li[targets[i]] - mx) - std::log(z));
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(m)));
  if (Tape* tape = recording({&logits})) {
    out.set_requires_grad(true);
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    tape->record({logits}, out, [logits, out, m, n, probs = std::move(probs), tgt = std::move(tgt)]() mutable {
      const float g = out.grad()[0] / static_cast<float>(m);
      auto gl = logits.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          gl[i * n + j] += g * (probs[i * n + j] - (j == tgt[i] ? 1.0f : 0.0f));
    });
  }
  return out;
}

}  // namespace catdiff

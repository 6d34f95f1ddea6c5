#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "catdiff/tensor.hpp"

namespace catdiff {

class Rng;

/// Ordered (name, tensor) pairs. Order is construction order and is the
/// serialization order of checkpoints.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Creates a trainable tensor (requires_grad on).
Tensor make_param(Tensor init);

/// FNV-1a over names, shapes and raw bytes of every tensor.
std::uint64_t parameter_hash(const NamedTensors& params);

struct Linear {
  Tensor weight;  // [in × out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, float init_scale = 1.0f);
  /// Weight and bias start at exactly zero.
  static Linear zero(std::size_t in, std::size_t out);

  Tensor operator()(const Tensor& x) const;
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
  void collect(NamedTensors& out, const std::string& prefix) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t width);
  Tensor operator()(const Tensor& x) const;
  void collect(NamedTensors& out, const std::string& prefix) const;
};

/// Output = Module(Query, Key, Value): per head softmax(Q K^T / sqrt(d_head)) V,
/// heads concatenated, then the output projection. Keys and values may have a
/// different width than the queries.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t width, std::size_t kv_width, std::size_t heads, Rng& rng,
                     bool zero_output = false);

  Tensor operator()(const Tensor& query, const Tensor& key, const Tensor& value) const;

  std::size_t heads() const { return heads_; }
  std::size_t width() const { return width_; }
  void collect(NamedTensors& out, const std::string& prefix) const;

  Linear q_proj, k_proj, v_proj, out_proj;

 private:
  std::size_t width_ = 0;
  std::size_t heads_ = 1;
};

/// Two-layer GELU perceptron with 4x hidden expansion.
struct Mlp {
  Linear fc1, fc2;

  Mlp() = default;
  Mlp(std::size_t width, Rng& rng, std::size_t expansion = 4);
  Tensor operator()(const Tensor& x) const;
  void collect(NamedTensors& out, const std::string& prefix) const;
};

/// Pre-norm encoder layer: x + Attn(LN(x)), then + Mlp(LN(.)).
struct TransformerLayer {
  LayerNorm norm1, norm2;
  MultiHeadAttention attn;
  Mlp mlp;

  TransformerLayer() = default;
  TransformerLayer(std::size_t width, std::size_t heads, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(NamedTensors& out, const std::string& prefix) const;
};

/// Copies values from `source` into the matching tensors of `target`
/// (same names, same order, same shapes).
void assign_parameters(const NamedTensors& target, const NamedTensors& source);

void set_requires_grad(const NamedTensors& params, bool on);

}  // namespace catdiff

#include "catdiff/nn.hpp"

#include <algorithm>
#include <cmath>

#include "catdiff/errors.hpp"
#include "catdiff/ops.hpp"
#include "catdiff/rng.hpp"

namespace catdiff {

Tensor make_param(Tensor init) {
  init.set_requires_grad(true);
  return init;
}

std::uint64_t parameter_hash(const NamedTensors& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : params) {
    feed(name.data(), name.size());
    for (auto d : t.shape()) {
      const std::uint64_t d64 = d;
      feed(&d64, sizeof d64);
    }
    feed(t.ptr(), t.numel() * sizeof(float));
  }
  return h;
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, float init_scale)
    : weight(make_param(Tensor::randn({in, out}, rng, init_scale / std::sqrt(static_cast<float>(in))))),
      bias(make_param(Tensor::zeros({out}))) {}

Linear Linear::zero(std::size_t in, std::size_t out) {
  Linear l;
  l.weight = make_param(Tensor::zeros({in, out}));
  l.bias = make_param(Tensor::zeros({out}));
  return l;
}

Tensor Linear::operator()(const Tensor& x) const { return add_row(matmul(x, weight), bias); }

void Linear::collect(NamedTensors& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

LayerNorm::LayerNorm(std::size_t width)
    : gain(make_param(Tensor::ones({width}))), bias(make_param(Tensor::zeros({width}))) {}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }

void LayerNorm::collect(NamedTensors& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".gain", gain);
  out.emplace_back(prefix + ".bias", bias);
}

MultiHeadAttention::MultiHeadAttention(std::size_t width, std::size_t kv_width, std::size_t heads, Rng& rng,
                                       bool zero_output)
    : width_(width), heads_(heads) {
  if (heads == 0 || width % heads != 0)
    throw ConfigError("attention width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  q_proj = Linear(width, width, rng);
  k_proj = Linear(kv_width, width, rng);
  v_proj = Linear(kv_width, width, rng);
  out_proj = zero_output ? Linear::zero(width, width) : Linear(width, width, rng);
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& key, const Tensor& value) const {
  if (key.dim(0) != value.dim(0))
    throw ContractError("attention: key rows " + std::to_string(key.dim(0)) + " != value rows " +
                        std::to_string(value.dim(0)));
  const Tensor q = q_proj(query);
  const Tensor k = k_proj(key);
  const Tensor v = v_proj(value);
  const std::size_t head_dim = width_ / heads_;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(head_dim));
  std::vector<Tensor> ctx;
  ctx.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    const Tensor qh = heads_ == 1 ? q : slice_cols(q, h * head_dim, head_dim);
    const Tensor kh = heads_ == 1 ? k : slice_cols(k, h * head_dim, head_dim);
    const Tensor vh = heads_ == 1 ? v : slice_cols(v, h * head_dim, head_dim);
    const Tensor weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt));
    ctx.push_back(matmul(weights, vh));
  }
  const Tensor merged = heads_ == 1 ? ctx[0] : concat_cols(ctx);
  return out_proj(merged);
}

void MultiHeadAttention::collect(NamedTensors& out, const std::string& prefix) const {
  q_proj.collect(out, prefix + ".q");
  k_proj.collect(out, prefix + ".k");
  v_proj.collect(out, prefix + ".v");
  out_proj.collect(out, prefix + ".out");
}

Mlp::Mlp(std::size_t width, Rng& rng, std::size_t expansion)
    : fc1(width, width * expansion, rng), fc2(width * expansion, width, rng) {}

Tensor Mlp::operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }

void Mlp::collect(NamedTensors& out, const std::string& prefix) const {
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

TransformerLayer::TransformerLayer(std::size_t width, std::size_t heads, Rng& rng)
    : norm1(width), norm2(width), attn(width, width, heads, rng), mlp(width, rng) {}

Tensor TransformerLayer::operator()(const Tensor& x) const {
  const Tensor h = norm1(x);
  const Tensor a = add(x, attn(h, h, h));
  return add(a, mlp(norm2(a)));
}

void TransformerLayer::collect(NamedTensors& out, const std::string& prefix) const {
  norm1.collect(out, prefix + ".norm1");
  attn.collect(out, prefix + ".attn");
  norm2.collect(out, prefix + ".norm2");
  mlp.collect(out, prefix + ".mlp");
}

void assign_parameters(const NamedTensors& target, const NamedTensors& source) {
  if (target.size() != source.size())
    throw ContractError("parameter count mismatch: expected " + std::to_string(target.size()) + ", got " +
                        std::to_string(source.size()));
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto& [tname, t] = target[i];
    const auto& [sname, s] = source[i];
    if (tname != sname) throw ContractError("parameter name mismatch: expected '" + tname + "', got '" + sname + "'");
    if (t.shape() != s.shape())
      throw ContractError("parameter '" + tname + "' shape mismatch: expected " + shape_str(t.shape()) + ", got " +
                          shape_str(s.shape()));
    Tensor dst = t;
    std::copy(s.data().begin(), s.data().end(), dst.data().begin());
  }
}

void set_requires_grad(const NamedTensors& params, bool on) {
  for (const auto& [name, t] : params) {
    Tensor handle = t;
    handle.set_requires_grad(on);
  }
}

}  // namespace catdiff

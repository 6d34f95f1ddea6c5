#include "catdiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "catdiff/errors.hpp"
#include "catdiff/rng.hpp"

namespace catdiff {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

namespace {
void check_shape(const Shape& shape) {
  if (shape.empty()) throw ContractError("tensor shape must have at least one dimension");
  for (auto d : shape)
    if (d == 0) throw ContractError("tensor dimensions must be positive, got " + shape_str(shape));
}
}  // namespace

Tensor::Tensor(Shape shape, float fill) : storage_(std::make_shared<Storage>()) {
  check_shape(shape);
  storage_->data.assign(shape_numel(shape), fill);
  storage_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : storage_(std::make_shared<Storage>()) {
  check_shape(shape);
  if (shape_numel(shape) != values.size())
    throw ContractError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                        shape_str(shape));
  storage_->shape = std::move(shape);
  storage_->data = std::move(values);
}

Tensor Tensor::randn(Shape shape, Rng& rng, float stddev) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.normal()) * stddev;
  return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, float lo, float hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

const Shape& Tensor::shape() const {
  if (!storage_) throw ContractError("use of undefined tensor");
  return storage_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ContractError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}


std::span<float> Tensor::data() {
  if (!storage_) throw ContractError("use of undefined tensor");
  return storage_->data;
}

std::span<const float> Tensor::data() const {
  if (!storage_) throw ContractError("use of undefined tensor");
  return storage_->data;
}

float Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return storage_->data[0];
}


void Tensor::set_requires_grad(bool on) {
  if (!storage_) throw ContractError("use of undefined tensor");
  storage_->requires_grad = on;
  if (on) {
    storage_->grad.assign(storage_->data.size(), 0.0f);
  } else {
    storage_->grad.clear();
    storage_->grad.shrink_to_fit();
  }
}

bool Tensor::has_grad() const { return storage_ && !storage_->grad.empty(); }

std::span<float> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient buffer");
  return storage_->grad;
}

void Tensor::zero_grad() const {
  if (has_grad()) std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0f);
}

Tensor Tensor::clone() const { return Tensor(shape(), storage_->data); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel())
    throw ContractError("cannot reshape " + shape_str(this->shape()) + " to " + shape_str(shape));
  return Tensor(std::move(shape), storage_->data);
}

bool Tensor::all_finite() const {
  return std::all_of(data().begin(), data().end(), [](float v) { return std::isfinite(v); });
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.ptr(), b.ptr(), a.numel() * sizeof(float)) == 0;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ContractError("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  float m = 0.0f;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace catdiff

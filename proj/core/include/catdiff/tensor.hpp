#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace catdiff {

class Rng;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float32 array with an optional gradient buffer.
///
/// A Tensor is a shared handle: copies alias the same storage, so a module
/// parameter and the Tensor recorded on a tape are the same object. Use
/// clone() for an independent value.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0f); }
  static Tensor scalar(float v) { return Tensor(Shape{1}, v); }
  static Tensor randn(Shape shape, Rng& rng, float stddev = 1.0f);
  static Tensor uniform(Shape shape, Rng& rng, float lo, float hi);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return storage_ ? storage_->data.size() : 0; }

  std::span<float> data();
  std::span<const float> data() const;
  float* ptr() { return data().data(); }
  const float* ptr() const { return data().data(); }
  // Unchecked element access; the tensor must be defined.
  float& operator[](std::size_t i) { return storage_->data[i]; }
  float operator[](std::size_t i) const { return storage_->data[i]; }
  /// Value of a single-element tensor.
  float item() const;

  bool requires_grad() const { return storage_ && storage_->requires_grad; }
  /// Enabling allocates a zeroed gradient buffer of the same length.
  void set_requires_grad(bool on);
  bool has_grad() const;
  /// The gradient buffer is writable through any handle, including const
  /// ones; backward rules accumulate into it.
  std::span<float> grad() const;
  void zero_grad() const;

  /// Deep copy of shape and data; the copy does not require grad.
  Tensor clone() const;
  /// Same data, new shape of equal element count (deep copy, no tape).
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;
  /// Identity of the underlying storage.
  const void* id() const { return storage_.get(); }

 private:
  struct Storage {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> storage_;
};

/// Bitwise equality of shape and data.
bool bit_equal(const Tensor& a, const Tensor& b);
float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace catdiff

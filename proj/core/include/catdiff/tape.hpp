#pragma once

#include <functional>
#include <vector>

#include "catdiff/tensor.hpp"

namespace catdiff {

/// Ordered record of differentiable operations. Ops append to the tape that
/// is active on the calling thread (see TapeScope) whenever one of their
/// inputs requires grad; with no active tape, forward passes record nothing.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  void record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward);

  /// Zeroes the gradient of every tensor on the tape, seeds d(loss)=1 and
  /// replays backward rules in reverse order.
  void backward(const Tensor& loss);

  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

 private:
  struct Entry {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
};

/// Makes a tape active for the current thread for the lifetime of the scope.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// backward(loss, tape): loss must be a single-element tensor produced on tape.
void backward(const Tensor& loss, Tape& tape);

}  // namespace catdiff

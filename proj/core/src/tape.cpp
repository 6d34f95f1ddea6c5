#include "catdiff/tape.hpp"

#include "catdiff/errors.hpp"

namespace catdiff {

namespace {
thread_local Tape* current_tape = nullptr;
}

Tape* active_tape() { return current_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(current_tape) { current_tape = &tape; }
TapeScope::~TapeScope() { current_tape = previous_; }

void Tape::record(std::vector<Tensor> inputs, Tensor output, BackwardFn backward) {
  entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("(undefined)")));
  if (!loss.requires_grad()) throw ContractError("backward: loss was not produced on the tape");

  // Zero everything first so every tape tensor ends with exactly d(loss)/d(tensor).
  for (auto& e : entries_) {
    for (auto& in : e.inputs)
      if (in.requires_grad()) in.zero_grad();
    e.output.zero_grad();
  }
  Tensor seed = loss;
  seed.grad()[0] = 1.0f;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
}

void backward(const Tensor& loss, Tape& tape) { tape.backward(loss); }

}  // namespace catdiff

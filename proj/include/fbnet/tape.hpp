// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <thread>
#include <vector>

#include "fbnet/error.hpp"
#include "fbnet/tensor.hpp"

namespace fbnet {

// Reverse-mode gradient tape.
//
// Operations executed while a TapeScope is active on the current thread, and
// that consume at least one tensor with requires_grad set, append a backward
// rule here. Rules run in reverse recording order and accumulate (+=) into
// the gradients of their inputs, so a tensor consumed twice receives the sum
// of both contributions.
//
// Threading contract: a tape belongs to the thread that created it. Only that
// thread may activate it or replay it; attempts from another thread throw
// ContractError. Forward passes on threads with no active tape record
// nothing and can run concurrently on shared, read-only parameters.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> rule);
  std::size_t size() const { return rules_.size(); }
  void clear() { rules_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays every rule once, newest first.
  template <typename T>
  void backward(Tensor<T>& loss);

  std::thread::id owner() const { return owner_; }

 private:
  void check_owner() const;
  void replay();

  std::vector<std::function<void()>> rules_;
  std::thread::id owner_;
};

// Tape that new operations on this thread record into, or nullptr.
Tape* active_tape();

// Activates a tape for the current thread for the lifetime of the scope.
// Passing nullptr suspends recording (used to evaluate perturbed inputs
// during finite-difference checks).
class TapeScope {
 public:
  explicit TapeScope(Tape* tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// True when an op over these inputs must be recorded.
template <typename... Ts>
bool should_record(const Ts&... inputs) {
  return active_tape() != nullptr && ((inputs.defined() && inputs.requires_grad()) || ...);
}

template <typename T>
void Tape::backward(Tensor<T>& loss) {
  check_owner();
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  }
  loss.grad_mut()[0] += T(1);
  replay();
}

// Replays the active tape from `loss`.
template <typename T>
void backward(Tensor<T>& loss) {
  Tape* tape = active_tape();
  if (tape == nullptr) {
    throw ContractError("backward() called with no active tape");
  }
  tape->backward(loss);
}

}  // namespace fbnet

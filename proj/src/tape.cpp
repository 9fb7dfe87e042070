// SPDX-License-Identifier: Apache-2.0
#include "fbnet/tape.hpp"

namespace fbnet {

namespace {
thread_local Tape* current_tape = nullptr;
}  // namespace

Tape::Tape() : owner_(std::this_thread::get_id()) {}

void Tape::check_owner() const {
  if (std::this_thread::get_id() != owner_) {
    throw ContractError("tape used from a thread that does not own it");
  }
}

void Tape::record(std::function<void()> rule) {
  check_owner();
  rules_.push_back(std::move(rule));
}

void Tape::replay() {
  for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) {
    (*it)();
  }
}

Tape* active_tape() { return current_tape; }

TapeScope::TapeScope(Tape* tape) : previous_(current_tape) {
  if (tape != nullptr && tape->owner() != std::this_thread::get_id()) {
    throw ContractError("cannot activate a tape owned by another thread");
  }
  current_tape = tape;
}

TapeScope::~TapeScope() { current_tape = previous_; }

}  // namespace fbnet

#pragma once

#include <functional>
#include <vector>

#include "fmiseg/numerics/tensor.hpp"

namespace fmiseg {

/// Wengert list for reverse-mode differentiation.
///
/// Ops append a backward closure while a tape is active and at least one input
/// requires a gradient. backward() replays the closures in reverse order; each
/// closure reads its output's gradient and accumulates into its inputs.
class Tape {
 public:
  using Entry = std::function<void()>;

  void record(Entry entry) { entries_.push_back(std::move(entry)); }
  size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and runs all recorded closures, then clears.
  void backward(Tensor loss) {
    if (loss.numel() != 1) throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) {
      clear();
      return;
    }
    loss.grad()[0] += 1.0f;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    clear();
  }

 private:
  std::vector<Entry> entries_;
};

namespace detail {
inline Tape*& active_tape_slot() {
  thread_local Tape* tape = nullptr;
  return tape;
}
}  // namespace detail

inline Tape* active_tape() { return detail::active_tape_slot(); }

/// Makes `tape` the recording target for the current thread until destruction.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape) : prev_(detail::active_tape_slot()) { detail::active_tape_slot() = &tape; }
  ~TapeScope() { detail::active_tape_slot() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

/// Suspends recording (inference).
class NoGradScope {
 public:
  NoGradScope() : prev_(detail::active_tape_slot()) { detail::active_tape_slot() = nullptr; }
  ~NoGradScope() { detail::active_tape_slot() = prev_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* prev_;
};

}  // namespace fmiseg

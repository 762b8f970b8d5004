#pragma once

#include <array>
#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

#include "diffstack/matrix.hpp"

namespace diffstack {

enum StackAction : std::size_t { kPush = 0, kPop = 1, kNoOp = 2 };

// Probabilities of (push, pop, no-op), in that order.
using ActionDist = std::array<real, 3>;

// Continuous stack. cells[0] is the top; reads past the depth see 0.
struct StackState {
  Vector cells;
  std::size_t read_width = 3;

  std::size_t depth() const { return cells.size(); }
  real at(std::size_t i) const { return i < cells.size() ? cells[i] : real(0); }
  bool operator==(const StackState&) const = default;
};

// softmax(A z + bias). A must be 3 x m.
ActionDist action_dist(std::span<const real> z, const Matrix& a, std::span<const real> bias = {});

// logistic(D z + bias). D must be 1 x m.
real push_value(std::span<const real> z, const Matrix& d, real bias = 0);

// One blended push/pop/no-op update; the result is one cell deeper.
// literal selects the no-op term on the top cell only (non-top cells then
// vanish under a pure no-op).
StackState stack_step(const StackState& prev, const ActionDist& a, real push, bool literal = false);

// (S[0], ..., S[k-1]) zero padded, k = read_width.
Vector read_topk(const StackState& s);

// argmax with ties resolved toward the lowest index.
StackAction dominant_action(const ActionDist& a);

// ct + 1 when the dominant action is no-op, otherwise 0.
std::size_t noop_counter_update(std::size_t ct, const ActionDist& a);

// Per-step record for interpretability exports.
struct StackTraceRow {
  std::size_t t = 0;
  ActionDist action{};
  real push = 0;
  Vector top;
};

void write_stack_trace_csv(std::ostream& out, std::span<const StackTraceRow> rows);

}  // namespace diffstack

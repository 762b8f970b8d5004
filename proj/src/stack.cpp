#include "diffstack/stack.hpp"

#include <iomanip>

#include "diffstack/activations.hpp"

namespace diffstack {

ActionDist action_dist(std::span<const real> z, const Matrix& a, std::span<const real> bias) {
  if (a.rows != 3 || a.cols != z.size()) throw ShapeError("action_dist: A must be 3 x m");
  if (!bias.empty() && bias.size() != 3) throw ShapeError("action_dist: bias must have 3 entries");
  std::array<real, 3> logits{};
  matvec(a, z, logits);
  if (!bias.empty()) {
    for (std::size_t i = 0; i < 3; ++i) logits[i] += bias[i];
  }
  ActionDist out{};
  softmax_into(logits, out);
  return out;
}

real push_value(std::span<const real> z, const Matrix& d, real bias) {
  if (d.rows != 1 || d.cols != z.size()) throw ShapeError("push_value: D must be 1 x m");
  real s = bias;
  for (std::size_t j = 0; j < z.size(); ++j) s += d(0, j) * z[j];
  return logistic(s);
}

StackState stack_step(const StackState& prev, const ActionDist& a, real push, bool literal) {
  StackState next;
  next.read_width = prev.read_width;
  const std::size_t depth = prev.depth();
  next.cells.resize(depth + 1);
  next.cells[0] = a[kPush] * push + a[kPop] * prev.at(1) + a[kNoOp] * prev.at(0);
  for (std::size_t i = 1; i <= depth; ++i) {
    next.cells[i] = a[kPush] * prev.at(i - 1) + a[kPop] * prev.at(i + 1);
    if (!literal) next.cells[i] += a[kNoOp] * prev.at(i);
  }
  return next;
}

Vector read_topk(const StackState& s) {
  Vector out(s.read_width);
  for (std::size_t i = 0; i < s.read_width; ++i) out[i] = s.at(i);
  return out;
}

StackAction dominant_action(const ActionDist& a) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < 3; ++i) {
    if (a[i] > a[best]) best = i;
  }
  return static_cast<StackAction>(best);
}

std::size_t noop_counter_update(std::size_t ct, const ActionDist& a) {
  return dominant_action(a) == kNoOp ? ct + 1 : 0;
}

void write_stack_trace_csv(std::ostream& out, std::span<const StackTraceRow> rows) {
  std::size_t width = 0;
  for (const auto& r : rows) width = std::max(width, r.top.size());
  out << "t,a_push,a_pop,a_noop,push";
  for (std::size_t i = 0; i < width; ++i) out << ",top" << i;
  out << '\n';
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.t << ',' << r.action[0] << ',' << r.action[1] << ',' << r.action[2] << ',' << r.push;
    for (std::size_t i = 0; i < width; ++i) out << ',' << (i < r.top.size() ? r.top[i] : real(0));
    out << '\n';
  }
}

}  // namespace diffstack

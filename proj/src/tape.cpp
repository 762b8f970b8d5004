#include "diffstack/tape.hpp"

#include <algorithm>
#include <cmath>

#include "diffstack/activations.hpp"

namespace diffstack {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace

void Tape::clear() {
  val_.clear();
  grad_.clear();
  nodes_.clear();
  params_.clear();
}

Ref Tape::alloc(std::uint32_t rows, std::uint32_t cols) {
  Ref r{static_cast<std::uint32_t>(val_.size()), rows, cols};
  val_.resize(val_.size() + std::size_t(rows) * cols, real(0));
  return r;
}

Ref Tape::constant(std::span<const real> v, std::uint32_t rows, std::uint32_t cols) {
  require(v.size() == std::size_t(rows) * cols, "constant: size does not match shape");
  Ref r = alloc(rows, cols);
  std::copy(v.begin(), v.end(), val_.begin() + r.off);
  nodes_.push_back({Op::Leaf, r, {}, {}, {}});
  return r;
}

Ref Tape::parameter(const Matrix& value, Matrix& grad, std::string_view name) {
  require(value.same_shape(grad), "parameter: gradient buffer shape mismatch");
  Ref r = constant(value.flat(), static_cast<std::uint32_t>(value.rows), static_cast<std::uint32_t>(value.cols));
  params_.push_back({r, &grad, name});
  return r;
}

Ref Tape::matvec(Ref w, Ref x) {
  require(w.cols == x.size(), "matvec: inner dimensions differ");
  Ref out = alloc(w.rows);
  const real* W = v(w);
  const real* X = v(x);
  real* Y = v(out);
  for (std::uint32_t i = 0; i < w.rows; ++i) {
    real s = 0;
    const real* row = W + std::size_t(i) * w.cols;
    for (std::uint32_t j = 0; j < w.cols; ++j) s += row[j] * X[j];
    Y[i] = s;
  }
  nodes_.push_back({Op::MatVec, out, w, x, {}});
  return out;
}

Ref Tape::column(Ref w, std::uint32_t j) {
  require(j < w.cols, "column: index out of range");
  Ref out = alloc(w.rows);
  const real* W = v(w);
  real* Y = v(out);
  for (std::uint32_t i = 0; i < w.rows; ++i) Y[i] = W[std::size_t(i) * w.cols + j];
  nodes_.push_back({Op::Column, out, w, {}, {}, j});
  return out;
}

Ref Tape::add(Ref a, Ref b) {
  require(a.size() == b.size(), "add: size mismatch");
  Ref out = alloc(a.rows, a.cols);
  const real* A = v(a);
  const real* B = v(b);
  real* Y = v(out);
  for (std::size_t i = 0; i < out.size(); ++i) Y[i] = A[i] + B[i];
  nodes_.push_back({Op::Add, out, a, b, {}});
  return out;
}

Ref Tape::sub(Ref a, Ref b) {
  require(a.size() == b.size(), "sub: size mismatch");
  Ref out = alloc(a.rows, a.cols);
  const real* A = v(a);
  const real* B = v(b);
  real* Y = v(out);
  for (std::size_t i = 0; i < out.size(); ++i) Y[i] = A[i] - B[i];
  nodes_.push_back({Op::Sub, out, a, b, {}});
  return out;
}

Ref Tape::mul(Ref a, Ref b) {
  require(a.size() == b.size(), "mul: size mismatch");
  Ref out = alloc(a.rows, a.cols);
  const real* A = v(a);
  const real* B = v(b);
  real* Y = v(out);
  for (std::size_t i = 0; i < out.size(); ++i) Y[i] = A[i] * B[i];
  nodes_.push_back({Op::Mul, out, a, b, {}});
  return out;
}

Ref Tape::scale(Ref a, real k) {
  Ref out = alloc(a.rows, a.cols);
  const real* A = v(a);
  real* Y = v(out);
  for (std::size_t i = 0; i < out.size(); ++i) Y[i] = k * A[i];
  nodes_.push_back({Op::Scale, out, a, {}, {}, 0, k});
  return out;
}

Ref Tape::one_minus(Ref a) {
  Ref out = alloc(a.rows, a.cols);
  const real* A = v(a);
  real* Y = v(out);
  for (std::size_t i = 0; i < out.size(); ++i) Y[i] = real(1) - A[i];
  nodes_.push_back({Op::OneMinus, out, a, {}, {}});
  return out;
}

Ref Tape::scaled_tanh(Ref a) {
  Ref out = alloc(a.rows, a.cols);
  const real* A = v(a);
  real* Y = v(out);
  for (std::size_t i = 0; i < out.size(); ++i) Y[i] = diffstack::scaled_tanh(A[i]);
  nodes_.push_back({Op::ScaledTanh, out, a, {}, {}});
  return out;
}

Ref Tape::logistic(Ref a) {
  Ref out = alloc(a.rows, a.cols);
  const real* A = v(a);
  real* Y = v(out);
  for (std::size_t i = 0; i < out.size(); ++i) Y[i] = diffstack::logistic(A[i]);
  nodes_.push_back({Op::Logistic, out, a, {}, {}});
  return out;
}

Ref Tape::softmax(Ref a) {
  require(a.size() > 0, "softmax: empty input");
  Ref out = alloc(a.rows, a.cols);
  softmax_into(value(a), {v(out), out.size()});
  nodes_.push_back({Op::Softmax, out, a, {}, {}});
  return out;
}

Ref Tape::dot(Ref a, Ref b) {
  require(a.size() == b.size(), "dot: size mismatch");
  Ref out = alloc(1);
  const real* A = v(a);
  const real* B = v(b);
  real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += A[i] * B[i];
  val_[out.off] = s;
  nodes_.push_back({Op::Dot, out, a, b, {}});
  return out;
}

Ref Tape::softmax_xent(Ref logits, std::uint32_t target) {
  require(target < logits.size(), "softmax_xent: target out of range");
  require(logits.size() > 0, "softmax_xent: empty logits");
  Ref out = alloc(1);
  Ref probs = alloc(logits.rows);
  softmax_into(value(logits), {v(probs), probs.size()});
  const real lse = log_sum_exp(value(logits));
  val_[out.off] = lse - val_[logits.off + target];
  nodes_.push_back({Op::SoftmaxXent, out, logits, probs, {}, target});
  return out;
}

std::span<const real> Tape::softmax_of(Ref xent) const {
  // The probability slice is allocated directly after the loss scalar.
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->op == Op::SoftmaxXent && it->out.off == xent.off) return value(it->b);
  }
  throw std::invalid_argument("softmax_of: not a softmax_xent result");
}

Ref Tape::half_sq_err(Ref prediction, real target) {
  require(prediction.size() == 1, "half_sq_err: prediction must be scalar");
  Ref out = alloc(1);
  const real d = val_[prediction.off] - target;
  val_[out.off] = real(0.5) * d * d;
  nodes_.push_back({Op::HalfSqErr, out, prediction, {}, {}, 0, target});
  return out;
}

Ref Tape::stack_step(Ref stack, Ref action, Ref push, bool literal) {
  require(action.size() == 3, "stack_step: action must have 3 entries");
  require(push.size() == 1, "stack_step: push value must be scalar");
  const std::uint32_t depth = stack.rows;
  Ref out = alloc(depth + 1);
  const real* S = v(stack);
  const real* a = v(action);
  const real pv = val_[push.off];
  real* Y = v(out);
  auto at = [&](std::int64_t i) -> real { return (i >= 0 && i < depth) ? S[i] : real(0); };
  Y[0] = a[0] * pv + a[1] * at(1) + a[2] * at(0);
  for (std::uint32_t i = 1; i <= depth; ++i) {
    Y[i] = a[0] * at(i - 1) + a[1] * at(i + 1);
    if (!literal) Y[i] += a[2] * at(i);
  }
  nodes_.push_back({literal ? Op::StackStepLiteral : Op::StackStep, out, stack, action, push});
  return out;
}

Ref Tape::read_top(Ref stack, std::uint32_t k) {
  Ref out = alloc(k);
  const real* S = v(stack);
  real* Y = v(out);
  for (std::uint32_t i = 0; i < k; ++i) Y[i] = i < stack.rows ? S[i] : real(0);
  nodes_.push_back({Op::ReadTop, out, stack, {}, {}, k});
  return out;
}

void Tape::backward(std::span<const Ref> seeds) {
  grad_.assign(val_.size(), real(0));
  for (const Ref& s : seeds) {
    require(s.size() == 1, "backward: seeds must be scalars");
    grad_[s.off] += real(1);
  }

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const Node& n = *it;
    const real* go = g(n.out);
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::MatVec: {
        const real* W = v(n.a);
        const real* X = v(n.b);
        real* gW = g(n.a);
        real* gX = g(n.b);
        const std::uint32_t cols = n.a.cols;
        for (std::uint32_t i = 0; i < n.a.rows; ++i) {
          const real gi = go[i];
          if (gi == real(0)) continue;
          const std::size_t base = std::size_t(i) * cols;
          for (std::uint32_t j = 0; j < cols; ++j) {
            gW[base + j] += gi * X[j];
            gX[j] += gi * W[base + j];
          }
        }
        break;
      }
      case Op::Column: {
        real* gW = g(n.a);
        for (std::uint32_t i = 0; i < n.a.rows; ++i) gW[std::size_t(i) * n.a.cols + n.aux] += go[i];
        break;
      }
      case Op::Add: {
        real* ga = g(n.a);
        real* gb = g(n.b);
        for (std::size_t i = 0; i < n.out.size(); ++i) {
          ga[i] += go[i];
          gb[i] += go[i];
        }
        break;
      }
      case Op::Sub: {
        real* ga = g(n.a);
        real* gb = g(n.b);
        for (std::size_t i = 0; i < n.out.size(); ++i) {
          ga[i] += go[i];
          gb[i] -= go[i];
        }
        break;
      }
      case Op::Mul: {
        const real* A = v(n.a);
        const real* B = v(n.b);
        real* ga = g(n.a);
        real* gb = g(n.b);
        for (std::size_t i = 0; i < n.out.size(); ++i) {
          ga[i] += go[i] * B[i];
          gb[i] += go[i] * A[i];
        }
        break;
      }
      case Op::Scale: {
        real* ga = g(n.a);
        for (std::size_t i = 0; i < n.out.size(); ++i) ga[i] += n.k * go[i];
        break;
      }
      case Op::OneMinus: {
        real* ga = g(n.a);
        for (std::size_t i = 0; i < n.out.size(); ++i) ga[i] -= go[i];
        break;
      }
      case Op::ScaledTanh: {
        const real* Y = v(n.out);
        real* ga = g(n.a);
        for (std::size_t i = 0; i < n.out.size(); ++i) ga[i] += go[i] * scaled_tanh_grad_from_output(Y[i]);
        break;
      }
      case Op::Logistic: {
        const real* Y = v(n.out);
        real* ga = g(n.a);
        for (std::size_t i = 0; i < n.out.size(); ++i) ga[i] += go[i] * Y[i] * (real(1) - Y[i]);
        break;
      }
      case Op::Softmax: {
        const real* Y = v(n.out);
        real* ga = g(n.a);
        real inner = 0;
        for (std::size_t i = 0; i < n.out.size(); ++i) inner += go[i] * Y[i];
        for (std::size_t i = 0; i < n.out.size(); ++i) ga[i] += Y[i] * (go[i] - inner);
        break;
      }
      case Op::Dot: {
        const real* A = v(n.a);
        const real* B = v(n.b);
        real* ga = g(n.a);
        real* gb = g(n.b);
        const real g0 = go[0];
        for (std::size_t i = 0; i < n.a.size(); ++i) {
          ga[i] += g0 * B[i];
          gb[i] += g0 * A[i];
        }
        break;
      }
      case Op::SoftmaxXent: {
        const real* P = v(n.b);
        real* ga = g(n.a);
        const real g0 = go[0];
        for (std::size_t i = 0; i < n.a.size(); ++i) ga[i] += g0 * P[i];
        ga[n.aux] -= g0;
        break;
      }
      case Op::HalfSqErr: {
        g(n.a)[0] += go[0] * (val_[n.a.off] - n.k);
        break;
      }
      case Op::StackStep:
      case Op::StackStepLiteral: {
        const bool literal = n.op == Op::StackStepLiteral;
        const std::uint32_t depth = n.a.rows;
        const real* S = v(n.a);
        const real* a = v(n.b);
        const real pv = val_[n.c.off];
        real* gS = g(n.a);
        real* ga = g(n.b);
        real& gv = grad_[n.c.off];
        auto at = [&](std::int64_t i) -> real { return (i >= 0 && i < depth) ? S[i] : real(0); };
        auto acc = [&](std::int64_t i, real x) {
          if (i >= 0 && i < depth) gS[i] += x;
        };
        {
          const real g0 = go[0];
          ga[0] += g0 * pv;
          gv += g0 * a[0];
          ga[1] += g0 * at(1);
          acc(1, g0 * a[1]);
          ga[2] += g0 * at(0);
          acc(0, g0 * a[2]);
        }
        for (std::uint32_t i = 1; i <= depth; ++i) {
          const real gi = go[i];
          ga[0] += gi * at(i - 1);
          acc(std::int64_t(i) - 1, gi * a[0]);
          ga[1] += gi * at(i + 1);
          acc(std::int64_t(i) + 1, gi * a[1]);
          if (!literal) {
            ga[2] += gi * at(i);
            acc(i, gi * a[2]);
          }
        }
        break;
      }
      case Op::ReadTop: {
        real* gS = g(n.a);
        for (std::uint32_t i = 0; i < n.aux && i < n.a.rows; ++i) gS[i] += go[i];
        break;
      }
    }
  }

  for (const Param& p : params_) {
    const real* gp = g(p.ref);
    real* dst = p.grad->data.data();
    for (std::size_t i = 0; i < p.ref.size(); ++i) {
      if (!std::isfinite(gp[i])) throw NonFiniteError(std::string(p.name), "backward");
      dst[i] += gp[i];
    }
  }
}

}  // namespace diffstack

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "diffstack/matrix.hpp"

namespace diffstack {

// Handle to a slice of the tape's value arena. Vectors have cols == 1.
struct Ref {
  std::uint32_t off = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 1;

  std::size_t size() const { return std::size_t(rows) * cols; }
};

// Reverse-mode gradient tape over vector-valued primitives.
//
// Values live in one flat arena, so recording a forward pass does no per-op
// heap allocation once the tape has warmed up. clear() keeps capacity; a
// training loop clears the tape once per truncation window.
//
// Parameters are copied into the arena by parameter(); backward() adds their
// gradients into the caller-owned gradient matrices.
class Tape {
 public:
  enum class Op : std::uint8_t {
    Leaf,
    MatVec,
    Column,
    Add,
    Sub,
    Mul,
    Scale,
    OneMinus,
    ScaledTanh,
    Logistic,
    Softmax,
    Dot,
    SoftmaxXent,
    HalfSqErr,
    StackStep,
    StackStepLiteral,
    ReadTop,
  };

  void clear();
  std::size_t length() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

  Ref constant(std::span<const real> v, std::uint32_t rows, std::uint32_t cols = 1);
  Ref constant(std::span<const real> v) { return constant(v, static_cast<std::uint32_t>(v.size())); }
  Ref scalar(real x) { return constant(std::span<const real>(&x, 1)); }
  Ref parameter(const Matrix& value, Matrix& grad, std::string_view name);

  std::span<const real> value(Ref r) const { return {val_.data() + r.off, r.size()}; }
  real scalar_value(Ref r) const { return val_[r.off]; }
  // Only meaningful after backward().
  std::span<const real> grad(Ref r) const { return {grad_.data() + r.off, r.size()}; }

  Ref matvec(Ref w, Ref x);
  // W e_j for a one-hot input.
  Ref column(Ref w, std::uint32_t j);
  Ref add(Ref a, Ref b);
  Ref sub(Ref a, Ref b);
  Ref mul(Ref a, Ref b);
  Ref scale(Ref a, real k);
  Ref one_minus(Ref a);
  Ref scaled_tanh(Ref a);
  Ref logistic(Ref a);
  Ref softmax(Ref a);
  Ref dot(Ref a, Ref b);
  // -log softmax(logits)[target]. The probabilities are kept on the tape and
  // can be read back with softmax_of().
  Ref softmax_xent(Ref logits, std::uint32_t target);
  std::span<const real> softmax_of(Ref xent) const;
  Ref half_sq_err(Ref prediction, real target);

  // Continuous stack update. stack has depth L, action is (push, pop, noop),
  // push is a scalar; the result has depth L + 1. With literal == true the
  // no-op term is applied to the top cell only.
  Ref stack_step(Ref stack, Ref action, Ref push, bool literal = false);
  // First k cells, zero past depth.
  Ref read_top(Ref stack, std::uint32_t k);

  // Seeds d(seed)/d(seed) = 1 for every scalar in seeds and sweeps the tape
  // backwards. Parameter gradients are added into their registered buffers.
  // Throws NonFiniteError naming the first parameter whose gradient is not
  // finite.
  void backward(std::span<const Ref> seeds);
  void backward(Ref seed) { backward(std::span<const Ref>(&seed, 1)); }

 private:
  struct Node {
    Op op;
    Ref out;
    Ref a;
    Ref b;
    Ref c;
    std::uint32_t aux = 0;
    real k = 0;
  };
  struct Param {
    Ref ref;
    Matrix* grad;
    std::string_view name;
  };

  Ref alloc(std::uint32_t rows, std::uint32_t cols = 1);
  real* v(Ref r) { return val_.data() + r.off; }
  real* g(Ref r) { return grad_.data() + r.off; }

  std::vector<real> val_;
  std::vector<real> grad_;
  std::vector<Node> nodes_;
  std::vector<Param> params_;
};

}  // namespace diffstack

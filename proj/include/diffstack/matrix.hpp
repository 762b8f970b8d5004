#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffstack {

#ifdef DIFFSTACK_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

using Vector = std::vector<real>;

// Dense row-major matrix. Column vectors are stored as rows x 1.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vector data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, real fill = 0) : rows(r), cols(c), data(r * c, fill) {}

  real& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  real operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::size_t size() const { return data.size(); }
  std::span<real> flat() { return data; }
  std::span<const real> flat() const { return data; }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  void set_zero() { std::fill(data.begin(), data.end(), real(0)); }

  bool operator==(const Matrix& o) const = default;
};

inline bool all_finite(std::span<const real> v) {
  for (real x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline bool all_finite(const Matrix& m) { return all_finite(m.flat()); }

// Raised whenever a forward or backward value stops being finite. The message
// names the tensor so a diverging trial can be diagnosed from its report.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& tensor, const std::string& where)
      : std::runtime_error("non-finite value in '" + tensor + "' during " + where), tensor_(tensor) {}
  const std::string& tensor() const { return tensor_; }

 private:
  std::string tensor_;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// y = W x
void matvec(const Matrix& w, std::span<const real> x, std::span<real> y);

}  // namespace diffstack

#pragma once

#include <span>

#include "diffstack/matrix.hpp"

namespace diffstack {

// LeCun's scaled hyperbolic tangent, 1.7519 * tanh(2x/3).
inline constexpr real kScaledTanhGain = real(1.7519);
inline constexpr real kScaledTanhSlope = real(2.0 / 3.0);

inline real scaled_tanh(real x) { return kScaledTanhGain * std::tanh(kScaledTanhSlope * x); }

// Derivative expressed through the output y = scaled_tanh(x).
inline real scaled_tanh_grad_from_output(real y) {
  const real t = y / kScaledTanhGain;
  return kScaledTanhGain * kScaledTanhSlope * (real(1) - t * t);
}

inline real logistic(real x) {
  if (x >= 0) return real(1) / (real(1) + std::exp(-x));
  const real e = std::exp(x);
  return e / (real(1) + e);
}

Vector scaled_tanh(std::span<const real> x);
Vector logistic(std::span<const real> x);

// Max-subtracted softmax. Throws std::invalid_argument on empty input.
Vector softmax(std::span<const real> x);
void softmax_into(std::span<const real> x, std::span<real> out);

// log(sum(exp(x))) computed with max subtraction.
real log_sum_exp(std::span<const real> x);

}  // namespace diffstack

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "diffstack/activations.hpp"
#include "diffstack/matrix.hpp"
#include "diffstack/rng.hpp"

namespace diffstack {

void matvec(const Matrix& w, std::span<const real> x, std::span<real> y) {
  if (x.size() != w.cols || y.size() != w.rows) throw ShapeError("matvec: shape mismatch");
  for (std::size_t i = 0; i < w.rows; ++i) {
    real s = 0;
    for (std::size_t j = 0; j < w.cols; ++j) s += w(i, j) * x[j];
    y[i] = s;
  }
}

Vector scaled_tanh(std::span<const real> x) {
  Vector y(x.size());
  std::transform(x.begin(), x.end(), y.begin(), [](real v) { return scaled_tanh(v); });
  return y;
}

Vector logistic(std::span<const real> x) {
  Vector y(x.size());
  std::transform(x.begin(), x.end(), y.begin(), [](real v) { return logistic(v); });
  return y;
}

void softmax_into(std::span<const real> x, std::span<real> out) {
  if (x.empty()) throw std::invalid_argument("softmax: empty input");
  if (out.size() != x.size()) throw ShapeError("softmax: output size mismatch");
  const real mx = *std::max_element(x.begin(), x.end());
  real total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    total += out[i];
  }
  for (real& o : out) o /= total;
}

Vector softmax(std::span<const real> x) {
  Vector y(x.size());
  softmax_into(x, y);
  return y;
}

real log_sum_exp(std::span<const real> x) {
  if (x.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  const real mx = *std::max_element(x.begin(), x.end());
  real total = 0;
  for (real v : x) total += std::exp(v - mx);
  return mx + std::log(total);
}

std::uint64_t Rng::splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t Rng::derive_seed(std::uint64_t seed, std::string_view label, std::uint64_t index) {
  // FNV-1a over the label, then mixed with seed and index.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(seed ^ h) + index);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: empty range");
  // Lemire's nearly-divisionless method.
  unsigned __int128 m = static_cast<unsigned __int128>(next()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      m = static_cast<unsigned __int128>(next()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform01();
  while (u1 <= 0.0) u1 = uniform01();
  const double u2 = uniform01();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Vector gaussian(Rng& rng, real mu, real sigma2, std::size_t n) {
  if (!(sigma2 >= 0)) throw std::invalid_argument("gaussian: variance must be non-negative");
  Vector out(n, mu);
  if (sigma2 == 0) return out;
  const double sd = std::sqrt(static_cast<double>(sigma2));
  for (real& x : out) x = static_cast<real>(mu + sd * rng.normal());
  return out;
}

void init_uniform_fan_in(Matrix& m, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (real& x : m.data) x = static_cast<real>(rng.uniform(-bound, bound));
}

}  // namespace diffstack

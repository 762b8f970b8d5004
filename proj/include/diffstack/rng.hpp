#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "diffstack/matrix.hpp"

namespace diffstack {

// Deterministic random stream.
//
// Engine: std::mt19937_64 (the standard fixes its output sequence exactly).
// Seeding: the 64-bit seed is passed through SplitMix64 before it reaches the
// engine, so nearby seeds give unrelated streams.
// Transforms are written out here rather than using <random> distributions,
// whose algorithms are implementation-defined:
//   uniform01  = (next() >> 11) * 2^-53                     in [0, 1)
//   below(n)   = Lemire multiply-shift with rejection        in [0, n)
//   normal     = Box-Muller, both outputs used in order
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next() { return engine_(); }
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  std::uint64_t below(std::uint64_t n);
  double normal();
  bool bernoulli(double p) { return uniform01() < p; }

  // Independent child stream keyed by (this seed, label, index). Derivation
  // does not consume draws from the parent.
  Rng substream(std::string_view label, std::uint64_t index = 0) const {
    return Rng(derive_seed(seed_, label, index));
  }

  static std::uint64_t splitmix64(std::uint64_t x);
  static std::uint64_t derive_seed(std::uint64_t seed, std::string_view label, std::uint64_t index);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0;
};

// n i.i.d. draws of N(mu, sigma2). sigma2 == 0 returns the constant mu without
// consuming draws. Negative variance is rejected.
Vector gaussian(Rng& rng, real mu, real sigma2, std::size_t n);

// Uniform in +-1/sqrt(fan_in).
void init_uniform_fan_in(Matrix& m, std::size_t fan_in, Rng& rng);

}  // namespace diffstack

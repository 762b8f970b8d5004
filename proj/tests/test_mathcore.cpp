#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "diffstack/activations.hpp"
#include "diffstack/rng.hpp"
#include "diffstack/tape.hpp"
#include "oracles.hpp"

using namespace diffstack;

TEST_CASE("scaled tanh") {
  CHECK(scaled_tanh(real(0)) == 0);
  CHECK(std::abs(scaled_tanh(real(50)) - 1.7519) < 1e-9);
  const long double want = 1.7519L * std::tanh(1.0L);
  CHECK(std::abs(static_cast<long double>(scaled_tanh(real(1.5))) - want) < 1e-14L);
  Vector xs{-3, -0.5, 0.25, 8};
  Vector ys = scaled_tanh(xs);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    CHECK(std::abs(ys[i]) < 1.7519);
    CHECK(std::abs(ys[i] - static_cast<double>(oracle::ltanh_scaled(xs[i]))) < 1e-14);
  }
}

TEST_CASE("softmax") {
  Vector u = softmax(Vector{0, 0, 0});
  for (real v : u) CHECK(std::abs(v - 1.0 / 3) < 1e-15);

  Vector big = softmax(Vector{1000, 0});
  CHECK(all_finite(big));
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] < 1e-300);

  Vector s = softmax(Vector{1, 2, 3});
  const long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(s[i] - static_cast<double>(std::exp(i + 1.0L) / z)) < 1e-15);
  CHECK(std::abs(std::accumulate(s.begin(), s.end(), 0.0) - 1.0) < 1e-12);

  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Vector x(7);
    for (auto& v : x) v = rng.uniform(-30, 30);
    Vector p = softmax(x);
    oracle::LVec lx(x.begin(), x.end());
    oracle::LVec lp = oracle::lsoftmax(lx);
    double sum = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(p[i] >= 0);
      CHECK(std::abs(p[i] - static_cast<double>(lp[i])) < 1e-15);
      sum += p[i];
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("logistic") {
  CHECK(logistic(real(0)) == 0.5);
  for (double x : {0.3, 2.0, 7.5, 40.0}) CHECK(logistic(-x) == doctest::Approx(1 - logistic(x)).epsilon(1e-14));
  CHECK(std::abs(logistic(real(2)) - static_cast<double>(1.0L / (1.0L + std::exp(-2.0L)))) < 3e-16);
  CHECK(logistic(real(-800)) >= 0);
  CHECK(std::isfinite(logistic(real(-800))));
}

TEST_CASE("rng determinism and generator construction") {
  Rng a(42), b(42), c(43);
  const auto first = a.next();
  CHECK(first == b.next());
  CHECK(first != c.next());

  // The engine is mt19937_64 seeded with splitmix64(seed).
  auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  std::mt19937_64 ref(mix(42));
  Rng d(42);
  for (int i = 0; i < 1000; ++i) CHECK(d.next() == ref());

  CHECK(Rng::derive_seed(1, "shuffle", 0) != Rng::derive_seed(1, "noise", 0));
  CHECK(Rng::derive_seed(1, "shuffle", 0) != Rng::derive_seed(1, "shuffle", 1));
  CHECK(Rng::derive_seed(1, "shuffle", 3) == Rng::derive_seed(1, "shuffle", 3));
  CHECK(Rng(5).substream("x", 2).next() == Rng(Rng::derive_seed(5, "x", 2)).next());
}

TEST_CASE("rng below is unbiased and in range") {
  Rng rng(11);
  CHECK_THROWS_AS(rng.below(0), std::invalid_argument);
  const std::uint64_t n = 7;
  std::vector<std::size_t> counts(n, 0);
  const std::size_t draws = 700000;
  for (std::size_t i = 0; i < draws; ++i) {
    auto v = rng.below(n);
    REQUIRE(v < n);
    ++counts[v];
  }
  // Chi-square with 6 degrees of freedom; 22.46 is the 0.999 quantile.
  double chi2 = 0;
  const double expect = static_cast<double>(draws) / n;
  for (auto c : counts) chi2 += (c - expect) * (c - expect) / expect;
  CHECK(chi2 < 22.46);
}

TEST_CASE("gaussian") {
  Rng rng(9);
  for (real v : gaussian(rng, 0, 0, 16)) CHECK(v == 0);
  for (real v : gaussian(rng, real(0.25), 0, 4)) CHECK(v == 0.25);
  CHECK_THROWS_AS(gaussian(rng, 0, -1, 3), std::invalid_argument);

  Rng big(2024);
  Vector xs = gaussian(big, 0, 1, 1000000);
  double mean = 0, sq = 0;
  for (real x : xs) {
    mean += x;
    sq += x * x;
  }
  mean /= xs.size();
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(sq / xs.size() - 1.0) < 0.01);

  Rng r1(77), r2(77);
  CHECK(gaussian(r1, 0, real(1e-3), 5) == gaussian(r2, 0, real(1e-3), 5));
}

namespace {

// Central differences of f over every entry of the leaf values.
template <typename F>
double fd_rel_error(std::vector<Vector>& leaves, const std::vector<Vector>& analytic, F f, double h = 1e-5) {
  double diff = 0;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    for (std::size_t i = 0; i < leaves[l].size(); ++i) {
      const real orig = leaves[l][i];
      leaves[l][i] = orig + h;
      const double up = f();
      leaves[l][i] = orig - h;
      const double down = f();
      leaves[l][i] = orig;
      const double fd = (up - down) / (2 * h);
      diff += (fd - analytic[l][i]) * (fd - analytic[l][i]);
    }
  }
  double an = 0;
  for (auto& g : analytic)
    for (real v : g) an += v * v;
  return std::sqrt(diff) / std::max(std::sqrt(an), 1e-12);
}

}  // namespace

TEST_CASE("tape: constant loss has zero gradient") {
  Tape tape;
  Matrix w(2, 3, 0.5), gw(2, 3);
  Ref pw = tape.parameter(w, gw, "W");
  (void)pw;
  Ref c = tape.scalar(4.0);
  tape.backward(c);
  for (real g : gw.data) CHECK(g == 0);
}

TEST_CASE("tape: half squared norm of W x") {
  Rng rng(1);
  Matrix w(3, 4), gw(3, 4);
  for (auto& v : w.data) v = rng.uniform(-1, 1);
  Vector x{0.3, -1.2, 0.7, 2.0};
  Tape tape;
  Ref pw = tape.parameter(w, gw, "W");
  Ref wx = tape.matvec(pw, tape.constant(x));
  Ref loss = tape.scale(tape.dot(wx, wx), 0.5);
  tape.backward(loss);
  for (std::size_t r = 0; r < 3; ++r) {
    double y = 0;
    for (std::size_t c = 0; c < 4; ++c) y += w(r, c) * x[c];
    for (std::size_t c = 0; c < 4; ++c) CHECK(gw(r, c) == doctest::Approx(y * x[c]).epsilon(1e-12));
  }
}

TEST_CASE("tape: every primitive against finite differences") {
  Rng rng(5);
  for (int point = 0; point < 20; ++point) {
    std::vector<Vector> leaves(4, Vector(4));
    for (auto& l : leaves)
      for (auto& v : l) v = rng.uniform(-1.5, 1.5);
    Matrix w(4, 4);
    for (auto& v : w.data) v = rng.uniform(-1, 1);
    leaves.push_back(w.data);
    leaves.push_back(Vector{0.6, 0.1, 0.3});   // action distribution
    leaves.push_back(Vector{0.4});             // push value
    const std::uint32_t target = static_cast<std::uint32_t>(point % 4);

    // Builds a scalar that touches every op once.
    auto build = [&](Tape& t, std::vector<Matrix>& grads) {
      std::vector<Ref> refs;
      grads.clear();
      for (auto& l : leaves) grads.emplace_back(static_cast<std::size_t>(l.size()), 1);
      grads[4] = Matrix(4, 4);
      for (std::size_t i = 0; i < leaves.size(); ++i) {
        Matrix m = i == 4 ? Matrix(4, 4) : Matrix(leaves[i].size(), 1);
        m.data = leaves[i];
        refs.push_back(t.parameter(m, grads[i], "p"));
      }
      Ref a = refs[0], b = refs[1], c = refs[2], d = refs[3], W = refs[4];
      Ref s1 = t.scaled_tanh(t.add(t.matvec(W, a), b));
      Ref s2 = t.logistic(t.sub(c, t.mul(d, s1)));
      Ref s3 = t.one_minus(t.scale(s2, 0.7));
      Ref s4 = t.softmax(t.add(s3, t.column(W, 2)));
      Ref xent = t.softmax_xent(t.mul(s4, a), target);
      Ref sq = t.half_sq_err(t.dot(s1, s2), 0.3);
      Ref stack = t.stack_step(t.read_top(s1, 3), refs[5], refs[6]);
      Ref lit = t.stack_step(stack, refs[5], refs[6], true);
      Ref top = t.read_top(lit, 3);
      Ref total = t.add(t.add(xent, sq), t.dot(top, t.read_top(c, 3)));
      return total;
    };
    std::vector<Matrix> grads;
    Tape tape;
    Ref loss = build(tape, grads);
    tape.backward(loss);
    std::vector<Vector> analytic;
    for (auto& g : grads) analytic.push_back(g.data);
    auto eval = [&]() {
      Tape t;
      std::vector<Matrix> g;
      return static_cast<double>(t.scalar_value(build(t, g)));
    };
    CHECK(fd_rel_error(leaves, analytic, eval) < 1e-4);
  }
}

TEST_CASE("tape: non-finite gradient names the parameter") {
  Tape tape;
  Matrix w(1, 1, std::numeric_limits<real>::infinity()), gw(1, 1);
  Ref pw = tape.parameter(w, gw, "W_bad");
  Ref loss = tape.dot(pw, pw);
  try {
    tape.backward(loss);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(e.tensor() == "W_bad");
  }
}

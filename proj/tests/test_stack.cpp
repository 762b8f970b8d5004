#include "doctest.h"
#include "diffstack/activations.hpp"
#include "diffstack/stack.hpp"
#include "diffstack/tape.hpp"
#include "oracles.hpp"

using namespace diffstack;

namespace {

StackState make(Vector cells) {
  StackState s;
  s.cells = std::move(cells);
  return s;
}

void check_cells(const StackState& s, const Vector& want) {
  REQUIRE(s.depth() >= want.size());
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(s.at(i) == doctest::Approx(want[i]).epsilon(1e-15));
  for (std::size_t i = want.size(); i < s.depth() + 2; ++i) CHECK(s.at(i) == 0);
}

}  // namespace

TEST_CASE("action distribution") {
  Vector z{0.3, -0.2};
  Matrix a(3, 2);
  ActionDist u = action_dist(z, a);
  for (real p : u) CHECK(p == doctest::Approx(1.0 / 3).epsilon(1e-15));

  ActionDist hot = action_dist(z, a, Vector{0, 50, 0});
  CHECK(hot[kPop] > 1 - 1e-15);

  Rng rng(6);
  for (int i = 0; i < 20; ++i) {
    Matrix w(3, 5);
    Vector zz(5);
    for (auto& v : w.data) v = rng.uniform(-2, 2);
    for (auto& v : zz) v = rng.uniform(-2, 2);
    ActionDist d = action_dist(zz, w);
    oracle::LVec lz(zz.begin(), zz.end());
    oracle::LVec want = oracle::lsoftmax(oracle::affine(w, lz));
    double sum = 0;
    for (int k = 0; k < 3; ++k) {
      CHECK(std::abs(d[k] - static_cast<double>(want[k])) < 1e-15);
      sum += d[k];
    }
    CHECK(std::abs(sum - 1) < 1e-12);
  }
  CHECK_THROWS_AS(action_dist(z, Matrix(2, 2)), ShapeError);
}

TEST_CASE("push value") {
  Vector z{1.0, 2.0};
  CHECK(push_value(z, Matrix(1, 2)) == 0.5);
  Matrix d(1, 2, 40.0);
  CHECK(push_value(z, d) > 1 - 1e-15);
  Matrix r(1, 2);
  r.data = {0.37, -0.81};
  CHECK(std::abs(push_value(z, r, 0.1) - static_cast<double>(oracle::lsigmoid(0.37L - 1.62L + 0.1L))) < 1e-16);
  CHECK_THROWS_AS(push_value(z, Matrix(2, 2)), ShapeError);
}

TEST_CASE("stack step examples") {
  check_cells(stack_step(make({0.2, 0.5}), {1, 0, 0}, 0.7), {0.7, 0.2, 0.5});
  check_cells(stack_step(make({0.2, 0.5, 0.9}), {0, 1, 0}, 0.3), {0.5, 0.9, 0});

  // NoOP keeps the whole stack; the literal variant zeroes the cells below the top.
  StackState s = make({0.2, 0.5, 0.9});
  check_cells(stack_step(s, {0, 0, 1}, 0.3), {0.2, 0.5, 0.9});
  check_cells(stack_step(s, {0, 0, 1}, 0.3, true), {0.2, 0, 0});

  // Scripted blended step.
  StackState b = stack_step(s, {0.5, 0.3, 0.2}, 0.8);
  check_cells(b, {0.5 * 0.8 + 0.3 * 0.5 + 0.2 * 0.2, 0.5 * 0.2 + 0.3 * 0.9 + 0.2 * 0.5, 0.5 * 0.5 + 0.2 * 0.9,
                  0.5 * 0.9});
  CHECK(b.depth() == 4);
}

TEST_CASE("read top k") {
  StackState s;
  CHECK(read_topk(s) == Vector{0, 0, 0});
  CHECK(read_topk(make({0.4})) == Vector{0.4, 0, 0});
  CHECK(read_topk(make({1, 2, 3, 4, 5})) == Vector{1, 2, 3});
  StackState wide = make({1, 2});
  wide.read_width = 4;
  CHECK(read_topk(wide) == Vector{1, 2, 0, 0});
}

TEST_CASE("noop counter") {
  CHECK(noop_counter_update(0, {0.1, 0.2, 0.7}) == 1);
  CHECK(noop_counter_update(5, {0.7, 0.2, 0.1}) == 0);
  CHECK(noop_counter_update(3, {0.4, 0.2, 0.4}) == 0);
  CHECK(noop_counter_update(3, {0.2, 0.4, 0.4}) == 0);
  CHECK(dominant_action({0.4, 0.2, 0.4}) == kPush);
}

TEST_CASE("one-hot actions follow a discrete stack") {
  Rng rng(31);
  for (int seq = 0; seq < 2000; ++seq) {
    StackState s;
    oracle::DiscreteStack ref;
    for (int t = 0; t < 30; ++t) {
      const int act = static_cast<int>(rng.below(3));
      const double v = rng.uniform01();
      ActionDist a{};
      a[act] = 1;
      s = stack_step(s, a, v);
      ref.apply(act, v);
      for (std::size_t i = 0; i < s.depth() + 1; ++i) REQUIRE(s.at(i) == ref.at(i));
    }
  }
}

TEST_CASE("stack cells stay in [0,1] under convex blending") {
  Rng rng(2);
  StackState s;
  for (int t = 0; t < 200; ++t) {
    real a0 = rng.uniform01(), a1 = rng.uniform01(), a2 = rng.uniform01();
    const real sum = a0 + a1 + a2;
    s = stack_step(s, {a0 / sum, a1 / sum, a2 / sum}, rng.uniform01());
    for (real c : s.cells) {
      REQUIRE(c >= 0);
      REQUIRE(c <= 1 + 1e-12);
    }
    REQUIRE(read_topk(s).size() == 3);
  }
}

TEST_CASE("stack step gradients") {
  Rng rng(8);
  for (bool literal : {false, true}) {
    for (int point = 0; point < 20; ++point) {
      Matrix S(5, 1), A(3, 1), V(1, 1);
      for (auto& v : S.data) v = rng.uniform01();
      for (auto& v : A.data) v = rng.uniform(0.05, 1);
      V.data[0] = rng.uniform01();
      Matrix w(6, 1);
      for (auto& v : w.data) v = rng.uniform(-1, 1);
      auto loss = [&](Tape& t, Matrix& gS, Matrix& gA, Matrix& gV) {
        Ref out = t.stack_step(t.parameter(S, gS, "S"), t.parameter(A, gA, "a"), t.parameter(V, gV, "v"), literal);
        return t.dot(out, t.constant(w.data));
      };
      Matrix gS(5, 1), gA(3, 1), gV(1, 1);
      Tape tape;
      tape.backward(loss(tape, gS, gA, gV));
      double diff = 0, norm = 0;
      for (Matrix* m : {&S, &A, &V}) {
        const Matrix& g = m == &S ? gS : (m == &A ? gA : gV);
        for (std::size_t i = 0; i < m->data.size(); ++i) {
          const real orig = m->data[i];
          const double h = 1e-5;
          Matrix a(5, 1), b(3, 1), c(1, 1);
          m->data[i] = orig + h;
          Tape t1;
          const double up = t1.scalar_value(loss(t1, a, b, c));
          m->data[i] = orig - h;
          Tape t2;
          const double down = t2.scalar_value(loss(t2, a, b, c));
          m->data[i] = orig;
          const double fd = (up - down) / (2 * h);
          diff += (fd - g.data[i]) * (fd - g.data[i]);
          norm += g.data[i] * g.data[i];
        }
      }
      CHECK(std::sqrt(diff / std::max(norm, 1e-24)) < 1e-4);
    }
  }
}

TEST_CASE("stack trace csv") {
  std::vector<StackTraceRow> rows{{1, {0.5, 0.25, 0.25}, 0.75, {0.1, 0, 0}}};
  std::ostringstream out;
  write_stack_trace_csv(out, rows);
  CHECK(out.str() == "t,a_push,a_pop,a_noop,push,top0,top1,top2\n1,0.5,0.25,0.25,0.75,0.1,0,0\n");
}

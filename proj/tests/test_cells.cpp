#include "doctest.h"
#include "diffstack/activations.hpp"
#include "diffstack/cells.hpp"
#include "diffstack/training.hpp"
#include "oracles.hpp"

using namespace diffstack;

namespace {

constexpr std::size_t kVocab = 5;

struct Run {
  std::vector<StepResult> steps;
};

Run run(const Model& m, const TokenSeq& xs, StepMode mode = StepMode::Eval, Rng* noise = nullptr) {
  Run r;
  CellState s = initial_cell_state(m);
  StackState st = initial_stack(m);
  for (Token x : xs) {
    StepResult res = step(m, x, s, st, mode, noise);
    s = res.state;
    st = res.stack;
    r.steps.push_back(std::move(res));
  }
  return r;
}

double max_gap(const Vector& a, const oracle::LVec& b) {
  double g = 0;
  for (std::size_t i = 0; i < a.size(); ++i) g = std::max(g, std::abs(a[i] - static_cast<double>(b[i])));
  return g;
}

}  // namespace

TEST_CASE("family names round trip") {
  for (Family f : kAllFamilies) CHECK(parse_family(family_name(f)) == f);
  CHECK(!parse_family("transformer"));
}

TEST_CASE("zero parameters are neutral") {
  for (Family f : kAllFamilies) {
    CAPTURE(family_name(f));
    Model m{ModelParams::zeros(f, {kVocab, 6, 3}), {}};
    Run r = run(m, {0, 1, 2, 3, 1, 0});
    for (const auto& s : r.steps) {
      for (real v : s.state.z) CHECK(v == 0);
      for (real p : s.p_next) CHECK(p == doctest::Approx(1.0 / kVocab).epsilon(1e-15));
      CHECK(s.recognition == 0.5);
      CHECK(!s.carried);
    }
  }
}

TEST_CASE("every family matches a hand-written reference") {
  Rng tokens(4);
  for (Family f : kAllFamilies) {
    for (int variant = 0; variant < 4; ++variant) {
      CAPTURE(family_name(f));
      CAPTURE(variant);
      Model m = oracle::random_model(f, kVocab, 6, 100 + variant);
      m.options.carry_forward = variant != 1;
      m.options.literal_noop = variant == 2;
      if (variant >= 2 && m.params.has(Role::Ba)) m.params.get(Role::Ba).data[kNoOp] += variant == 3 ? 4.0 : 1.5;
      const TokenSeq xs = oracle::random_tokens(tokens, 20, kVocab - 1);
      Run r = run(m, xs);
      oracle::RefState ref = oracle::reference_initial(m);
      std::size_t carried = 0;
      for (std::size_t t = 0; t < xs.size(); ++t) {
        oracle::RefStep want = oracle::reference_step(m, xs[t], ref);
        const StepResult& got = r.steps[t];
        CHECK(max_gap(got.state.z, ref.z) < 1e-12);
        CHECK(max_gap(got.state.c, ref.c) < 1e-12);
        CHECK(max_gap(got.p_next, want.p_next) < 1e-12);
        CHECK(std::abs(got.recognition - static_cast<double>(want.y)) < 1e-12);
        CHECK(max_gap(got.stack.cells, ref.stack) < 1e-12);
        CHECK(got.state.noop_ct == ref.ct);
        carried += got.carried;
      }
      if (uses_stack(f) && f != Family::StackRNN && variant == 3) CHECK(carried > 0);
      if (variant == 1 || f == Family::StackRNN) CHECK(carried == 0);
    }
  }
}

TEST_CASE("carry-forward freezes the state from the third NoOP") {
  for (Family f : {Family::DiffStkRNN, Family::DiffStkLSTM, Family::DiffStkMRNN, Family::DiffStkMLSTM,
                   Family::DiffStkMIRNN}) {
    CAPTURE(family_name(f));
    Model m = oracle::random_model(f, kVocab, 4, 9);
    m.params.get(Role::A).set_zero();
    m.params.get(Role::P).set_zero();
    m.params.get(Role::Ba).data = {0, 0, 10};
    Run r = run(m, {0, 1, 2, 3, 0, 1});
    CHECK(!r.steps[0].carried);
    CHECK(r.steps[0].state.noop_ct == 1);
    CHECK(!r.steps[1].carried);
    CHECK(r.steps[1].state.z != r.steps[0].state.z);
    for (std::size_t t = 2; t < r.steps.size(); ++t) {
      CHECK(r.steps[t].carried);
      CHECK(r.steps[t].state == CellState{r.steps[1].state.z, r.steps[1].state.c, t + 1});
    }
    m.options.carry_forward = false;
    Run off = run(m, {0, 1, 2, 3, 0, 1});
    for (const auto& s : off.steps) CHECK(!s.carried);
    CHECK(off.steps[3].state.z != off.steps[2].state.z);
  }
  CHECK(carry_gate(true, 1) == 1);
  CHECK(carry_gate(true, 2) == 0);
  CHECK(carry_gate(false, 5) == 1);
}

TEST_CASE("injection with zero read and zero noise leaves the state alone") {
  Model m = oracle::random_model(Family::DiffStkRNN, kVocab, 5, 3);
  m.params.get(Role::P).set_zero();
  Model plain{ModelParams::zeros(Family::RNN, m.dims()), {}};
  for (Role r : {Role::U, Role::R, Role::Bz, Role::V, Role::Bv, Role::Wy, Role::By}) plain.params.get(r) = m.params.get(r);
  m.options.carry_forward = false;
  Run a = run(m, {0, 1, 2, 3});
  Run b = run(plain, {0, 1, 2, 3});
  for (std::size_t t = 0; t < 4; ++t) CHECK(a.steps[t].state.z == b.steps[t].state.z);
}

TEST_CASE("a frozen-off stack reduces to the plain network") {
  Model m = oracle::random_model(Family::DiffStkRNN, kVocab, 5, 12);
  for (Role r : {Role::P, Role::A, Role::Ba, Role::D, Role::Bd}) m.params.get(r).set_zero();
  Model plain{ModelParams::zeros(Family::RNN, m.dims()), {}};
  for (Role r : {Role::U, Role::R, Role::Bz, Role::V, Role::Bv, Role::Wy, Role::By}) plain.params.get(r) = m.params.get(r);
  Rng tok(1);
  const TokenSeq xs = oracle::random_tokens(tok, 30, kVocab);
  Run a = run(m, xs), b = run(plain, xs);
  for (std::size_t t = 0; t < xs.size(); ++t) {
    CHECK(a.steps[t].state.z == b.steps[t].state.z);
    CHECK(a.steps[t].p_next == b.steps[t].p_next);
    CHECK(a.steps[t].state.noop_ct == 0);
  }
}

TEST_CASE("noise switches") {
  Rng tok(2);
  const TokenSeq xs = oracle::random_tokens(tok, 12, kVocab);
  for (Family f : kAllFamilies) {
    CAPTURE(family_name(f));
    Model m = oracle::random_model(f, kVocab, 5, 77);
    m.options.noise = {false, 0, real(0.1)};
    Rng n1(5);
    Run train_off = run(m, xs, StepMode::Train, &n1);
    Run eval = run(m, xs);
    for (std::size_t t = 0; t < xs.size(); ++t) CHECK(train_off.steps[t].state == eval.steps[t].state);

    m.options.noise = {true, 0, 0};
    Run zero_var = run(m, xs, StepMode::Train, nullptr);
    for (std::size_t t = 0; t < xs.size(); ++t) CHECK(zero_var.steps[t].state == eval.steps[t].state);

    m.options.noise = {true, 0, real(0.1)};
    Rng a(5), b(5);
    Run na = run(m, xs, StepMode::Train, &a), nb = run(m, xs, StepMode::Train, &b);
    for (std::size_t t = 0; t < xs.size(); ++t) CHECK(na.steps[t].state == nb.steps[t].state);
    if (f == Family::StackRNN) {
      CHECK(na.steps.back().state == eval.steps.back().state);
    } else {
      CHECK(na.steps.back().state.z != eval.steps.back().state.z);
      CHECK_THROWS_AS(run(m, xs, StepMode::Train, nullptr), std::invalid_argument);
    }
  }
}

TEST_CASE("gate saturation and factor shortcuts") {
  SUBCASE("lstm with forget open and input closed keeps its cell") {
    Model m = oracle::random_model(Family::LSTM, kVocab, 4, 5);
    m.params.get(Role::Bf).data.assign(4, 60);
    m.params.get(Role::Bi).data.assign(4, -60);
    CellState s = initial_cell_state(m);
    s.c = {0.3, -0.2, 0.9, 0.0};
    StepResult r = step(m, 1, s, initial_stack(m));
    for (std::size_t i = 0; i < 4; ++i) CHECK(r.state.c[i] == doctest::Approx(s.c[i]).epsilon(1e-12));
  }
  SUBCASE("mrnn with W_mz = 0") {
    Model m = oracle::random_model(Family::DiffStkMRNN, kVocab, 4, 6);
    m.params.get(Role::Wmz).set_zero();
    m.params.get(Role::Bmz).set_zero();
    StepResult r = step(m, 2, initial_cell_state(m), initial_stack(m));
    for (std::size_t i = 0; i < 4; ++i) {
      const double want = scaled_tanh(m.params.get(Role::Wzx)(i, 2) + m.params.get(Role::Bz).data[i]);
      CHECK(r.state.z[i] == doctest::Approx(want).epsilon(1e-14));
    }
  }
  SUBCASE("mlstm with R_m = 0 has input-only gates") {
    Model m = oracle::random_model(Family::DiffStkMLSTM, kVocab, 4, 7);
    m.params.get(Role::Rm).set_zero();
    m.params.get(Role::Brm).set_zero();
    CellState s = initial_cell_state(m);
    s.z = {0.5, -0.5, 1, 0.2};
    StepResult a = step(m, 3, s, initial_stack(m));
    s.z = {-1, 0.7, 0.1, 0.9};
    StepResult b = step(m, 3, s, initial_stack(m));
    CHECK(a.state.c == b.state.c);
    CHECK(a.state.z == b.state.z);
  }
  SUBCASE("mirnn with R z_hat + b_h = 1 reduces to the input path") {
    Model m = oracle::random_model(Family::DiffStkMIRNN, kVocab, 4, 8);
    m.params.get(Role::R).set_zero();
    m.params.get(Role::Bh).data.assign(4, 1);
    StepResult r = step(m, 0, initial_cell_state(m), initial_stack(m));
    for (std::size_t i = 0; i < 4; ++i) {
      const double want = scaled_tanh(m.params.get(Role::U)(i, 0) + m.params.get(Role::Bx).data[i]);
      CHECK(r.state.z[i] == doctest::Approx(want).epsilon(1e-14));
    }
    m.params.get(Role::Bh).set_zero();
    StepResult zero = step(m, 0, initial_cell_state(m), initial_stack(m));
    for (real v : zero.state.z) CHECK(v == 0);
  }
}

TEST_CASE("cell gradients against finite differences") {
  Rng tok(13);
  for (Family f : kAllFamilies) {
    CAPTURE(family_name(f));
    for (std::size_t len : {1u, 6u}) {
      Model m = oracle::random_model(f, kVocab, 4, 500 + len, 0.6);
      m.options.noise = {true, 0, real(0.01)};
      Example ex;
      ex.inputs = oracle::random_tokens(tok, len, kVocab - 1);
      ex.targets = ex.inputs;
      std::rotate(ex.targets.begin(), ex.targets.begin() + 1, ex.targets.end());
      ex.targets.back() = kVocab - 1;
      ex.label = real(len % 2);
      CHECK(oracle::gradient_check(m, ex, 50, 99) < 1e-4);
    }
  }
}

TEST_CASE("parameter layout") {
  Rng rng(1);
  for (Family f : kAllFamilies) {
    ModelParams p = ModelParams::init(f, {kVocab, 8, 3}, rng);
    CHECK(p.has(Role::V));
    CHECK(p.has(Role::Wy));
    CHECK(p.has(Role::P) == uses_stack(f));
    CHECK(p.get(Role::V).rows == kVocab);
    CHECK(p.zeros_like().parameter_count() == p.parameter_count());
    for (const auto& t : p.tensors()) CHECK(p.find(t.name) != nullptr);
  }
  CHECK_THROWS_AS(ModelParams::zeros(Family::RNN, {0, 8, 3}), ShapeError);
}

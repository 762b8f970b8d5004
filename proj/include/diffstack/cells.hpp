#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "diffstack/grammar.hpp"
#include "diffstack/matrix.hpp"
#include "diffstack/rng.hpp"
#include "diffstack/stack.hpp"
#include "diffstack/tape.hpp"

namespace diffstack {

enum class Family {
  RNN,
  LSTM,
  GRU,
  StackRNN,
  DiffStkRNN,
  DiffStkLSTM,
  DiffStkMRNN,
  DiffStkMLSTM,
  DiffStkMIRNN,
};

inline constexpr std::array<Family, 9> kAllFamilies = {
    Family::RNN,         Family::LSTM,        Family::GRU,          Family::StackRNN,     Family::DiffStkRNN,
    Family::DiffStkLSTM, Family::DiffStkMRNN, Family::DiffStkMLSTM, Family::DiffStkMIRNN,
};

std::string_view family_name(Family f);
std::optional<Family> parse_family(std::string_view name);
bool uses_stack(Family f);
bool has_cell_memory(Family f);  // LSTM-style c vector

// Every weight tensor any family may own. Each family owns a subset.
enum class Role : std::uint8_t {
  U, R, Bz,                  // input embedding, recurrence, candidate bias
  Ui, Ri, Bi,                // LSTM input gate
  Uo, Ro, Bo,                // LSTM output gate
  Uf, Rf, Bf,                // LSTM forget gate
  Ur, Rr, Br,                // GRU reset gate
  Ug, Rg, Bg,                // GRU update gate
  Wmx, Bmx, Wmz, Bmz, Wzm, Wzx,  // multiplicative RNN factors
  Um, Bum, Rm, Brm, Rz, Rim, Rom, Rfom,  // multiplicative LSTM
  Bx, Bh,                    // multiplicative-integration biases
  V, Bv,                     // next-token head
  Wy, By,                    // recognition head
  P, A, Ba, D, Bd,           // stack read, action, push
  Count,
};

inline constexpr std::size_t kRoleCount = static_cast<std::size_t>(Role::Count);
std::string_view role_name(Role r);

struct Dims {
  std::size_t vocab = 0;   // d
  std::size_t hidden = 0;  // m
  std::size_t read = 3;    // k
  bool operator==(const Dims&) const = default;
};

struct NamedMatrix {
  std::string name;
  Matrix value;
  bool operator==(const NamedMatrix&) const = default;
};

class ModelParams {
 public:
  ModelParams() = default;

  // Weight matrices uniform in +-1/sqrt(fan_in); biases zero, except forget
  // gates (1) and the multiplicative-integration recurrent bias (1).
  static ModelParams init(Family f, Dims dims, Rng& rng);
  static ModelParams zeros(Family f, Dims dims);

  Family family() const { return family_; }
  const Dims& dims() const { return dims_; }

  bool has(Role r) const { return index_[static_cast<std::size_t>(r)] >= 0; }
  const Matrix& get(Role r) const;
  Matrix& get(Role r);
  const Matrix* find(std::string_view name) const;
  Matrix* find(std::string_view name);

  std::vector<NamedMatrix>& tensors() { return tensors_; }
  const std::vector<NamedMatrix>& tensors() const { return tensors_; }
  std::size_t parameter_count() const;

  // Same family, dims and shapes, all zero. Used for gradient buffers.
  ModelParams zeros_like() const;

  bool operator==(const ModelParams& o) const { return family_ == o.family_ && dims_ == o.dims_ && tensors_ == o.tensors_; }

 private:
  static ModelParams layout(Family f, Dims dims);
  void add(Role r, std::size_t rows, std::size_t cols);

  Family family_ = Family::RNN;
  Dims dims_;
  std::vector<NamedMatrix> tensors_;
  std::array<int, kRoleCount> index_{};
};

struct NoiseConfig {
  bool enabled = true;
  real mu = 0;
  real sigma2 = real(1e-3);
  bool operator==(const NoiseConfig&) const = default;
};

// Behaviour toggles shared by every family. StackRNN ignores noise and
// carry-forward regardless of these flags.
struct CellOptions {
  NoiseConfig noise;
  bool carry_forward = true;
  // Literal depth rule: no-op term on the top cell only.
  bool literal_noop = false;
  // LSTM/MLSTM: inject the stack read into the candidate path only.
  bool inject_candidate_only = false;

  bool operator==(const CellOptions&) const = default;
};

struct Model {
  ModelParams params;
  CellOptions options;

  Family family() const { return params.family(); }
  const Dims& dims() const { return params.dims(); }
  bool noise_active(bool training) const;
  bool carry_forward_active() const;
};

struct CellState {
  Vector z;
  Vector c;  // empty for families without cell memory
  std::size_t noop_ct = 0;
  bool operator==(const CellState&) const = default;
};

CellState initial_cell_state(const Model& model);
StackState initial_stack(const Model& model);

enum class StepMode { Eval, Train };

// --- tape-level recording -----------------------------------------------------

struct ParamRefs {
  std::array<Ref, kRoleCount> refs{};
  const Ref& operator[](Role r) const { return refs[static_cast<std::size_t>(r)]; }
};

// Puts every tensor of params on the tape, gradients flowing into grads.
ParamRefs register_params(Tape& tape, const ModelParams& params, ModelParams& grads);
// Same, for a forward-only pass (no gradient buffers).
ParamRefs register_params_frozen(Tape& tape, const ModelParams& params);

struct StateRefs {
  Ref z;
  Ref c;
  Ref stack;
  std::size_t noop_ct = 0;
};

StateRefs state_on_tape(Tape& tape, const CellState& state, const StackState& stack);
CellState cell_state_from_tape(const Tape& tape, const StateRefs& s);
StackState stack_from_tape(const Tape& tape, const StateRefs& s, std::size_t read_width);

struct StepRefs {
  StateRefs next;
  Ref logits;      // next-token logits, size d
  Ref recognition; // scalar in (0, 1)
  ActionDist action{};  // zero for stack-free families
  real push = 0;
  bool carried = false;  // carry-forward froze the state this step
};

// Records one recurrent step. noise_rng is required when the model's noise is
// active in the given mode.
StepRefs record_step(Tape& tape, const Model& model, const ParamRefs& p, Token x, const StateRefs& state,
                     StepMode mode, Rng* noise_rng);

// --- value-level interface --------------------------------------------------

struct StepResult {
  CellState state;
  StackState stack;
  Vector p_next;
  real recognition = 0;
  ActionDist action{};
  bool carried = false;
};

StepResult step(const Model& model, Token x, const CellState& state, const StackState& stack, StepMode mode = StepMode::Eval,
                Rng* noise_rng = nullptr);

// Carry-forward gate: u = 0 iff the feature is on and more than one no-op has
// been seen in a row.
inline real carry_gate(bool enabled, std::size_t noop_ct) { return (enabled && noop_ct > 1) ? real(0) : real(1); }

}  // namespace diffstack

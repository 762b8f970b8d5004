#include "diffstack/cells.hpp"

#include <algorithm>

#include "diffstack/activations.hpp"

namespace diffstack {

std::string_view family_name(Family f) {
  switch (f) {
    case Family::RNN: return "rnn";
    case Family::LSTM: return "lstm";
    case Family::GRU: return "gru";
    case Family::StackRNN: return "stackrnn";
    case Family::DiffStkRNN: return "diffstk-rnn";
    case Family::DiffStkLSTM: return "diffstk-lstm";
    case Family::DiffStkMRNN: return "diffstk-mrnn";
    case Family::DiffStkMLSTM: return "diffstk-mlstm";
    case Family::DiffStkMIRNN: return "diffstk-mirnn";
  }
  return "?";
}

std::optional<Family> parse_family(std::string_view name) {
  for (Family f : kAllFamilies) {
    if (family_name(f) == name) return f;
  }
  return std::nullopt;
}

bool uses_stack(Family f) {
  return f != Family::RNN && f != Family::LSTM && f != Family::GRU;
}

bool has_cell_memory(Family f) {
  return f == Family::LSTM || f == Family::DiffStkLSTM || f == Family::DiffStkMLSTM;
}

std::string_view role_name(Role r) {
  static constexpr std::array<std::string_view, kRoleCount> kNames = {
      "U",    "R",    "b_z",  "U_i",  "R_i",  "b_i",  "U_o",  "R_o",   "b_o",  "U_f",  "R_f",   "b_f",
      "U_r",  "R_r",  "b_r",  "U_g",  "R_g",  "b_g",  "W_mx", "b_mx",  "W_mz", "b_mz", "W_zm",  "W_zx",
      "U_m",  "b_um", "R_m",  "b_rm", "R_z",  "R_im", "R_om", "R_fom", "b_x",  "b_h",  "V",     "b_v",
      "w_y",  "b_y",  "P",    "A",    "b_a",  "D",    "b_d",
  };
  return kNames[static_cast<std::size_t>(r)];
}

// --- parameters ----------------------------------------------------------------

void ModelParams::add(Role r, std::size_t rows, std::size_t cols) {
  index_[static_cast<std::size_t>(r)] = static_cast<int>(tensors_.size());
  tensors_.push_back({std::string(role_name(r)), Matrix(rows, cols)});
}

ModelParams ModelParams::layout(Family f, Dims dims) {
  if (dims.vocab == 0 || dims.hidden == 0 || dims.read == 0) throw ShapeError("model dimensions must be positive");
  ModelParams p;
  p.family_ = f;
  p.dims_ = dims;
  p.index_.fill(-1);
  const std::size_t d = dims.vocab;
  const std::size_t m = dims.hidden;
  auto gate = [&](Role u, Role r, Role b) {
    p.add(u, m, d);
    p.add(r, m, m);
    p.add(b, m, 1);
  };
  switch (f) {
    case Family::RNN:
    case Family::StackRNN:
    case Family::DiffStkRNN:
      gate(Role::U, Role::R, Role::Bz);
      break;
    case Family::LSTM:
    case Family::DiffStkLSTM:
      gate(Role::U, Role::R, Role::Bz);
      gate(Role::Ui, Role::Ri, Role::Bi);
      gate(Role::Uo, Role::Ro, Role::Bo);
      gate(Role::Uf, Role::Rf, Role::Bf);
      break;
    case Family::GRU:
      gate(Role::U, Role::R, Role::Bz);
      gate(Role::Ur, Role::Rr, Role::Br);
      gate(Role::Ug, Role::Rg, Role::Bg);
      break;
    case Family::DiffStkMRNN:
      p.add(Role::Wmx, m, d);
      p.add(Role::Bmx, m, 1);
      p.add(Role::Wmz, m, m);
      p.add(Role::Bmz, m, 1);
      p.add(Role::Wzm, m, m);
      p.add(Role::Wzx, m, d);
      p.add(Role::Bz, m, 1);
      break;
    case Family::DiffStkMLSTM:
      p.add(Role::Um, m, d);
      p.add(Role::Bum, m, 1);
      p.add(Role::Rm, m, m);
      p.add(Role::Brm, m, 1);
      p.add(Role::U, m, d);
      p.add(Role::Rz, m, m);
      p.add(Role::Bz, m, 1);
      gate(Role::Ui, Role::Rim, Role::Bi);
      gate(Role::Uo, Role::Rom, Role::Bo);
      gate(Role::Uf, Role::Rfom, Role::Bf);
      break;
    case Family::DiffStkMIRNN:
      p.add(Role::U, m, d);
      p.add(Role::Bx, m, 1);
      p.add(Role::R, m, m);
      p.add(Role::Bh, m, 1);
      break;
  }
  p.add(Role::V, d, m);
  p.add(Role::Bv, d, 1);
  p.add(Role::Wy, 1, m);
  p.add(Role::By, 1, 1);
  if (uses_stack(f)) {
    p.add(Role::P, m, dims.read);
    p.add(Role::A, 3, m);
    p.add(Role::Ba, 3, 1);
    p.add(Role::D, 1, m);
    p.add(Role::Bd, 1, 1);
  }
  return p;
}

ModelParams ModelParams::zeros(Family f, Dims dims) { return layout(f, dims); }

ModelParams ModelParams::init(Family f, Dims dims, Rng& rng) {
  ModelParams p = layout(f, dims);
  for (auto& t : p.tensors_) {
    if (t.value.cols == 1) continue;  // biases start at zero
    init_uniform_fan_in(t.value, t.value.cols, rng);
  }
  if (p.has(Role::Bf)) std::fill(p.get(Role::Bf).data.begin(), p.get(Role::Bf).data.end(), real(1));
  if (p.has(Role::Bh)) std::fill(p.get(Role::Bh).data.begin(), p.get(Role::Bh).data.end(), real(1));
  return p;
}

const Matrix& ModelParams::get(Role r) const {
  const int i = index_[static_cast<std::size_t>(r)];
  if (i < 0) throw std::out_of_range("model has no tensor '" + std::string(role_name(r)) + "'");
  return tensors_[static_cast<std::size_t>(i)].value;
}

Matrix& ModelParams::get(Role r) { return const_cast<Matrix&>(std::as_const(*this).get(r)); }

const Matrix* ModelParams::find(std::string_view name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return &t.value;
  }
  return nullptr;
}

Matrix* ModelParams::find(std::string_view name) { return const_cast<Matrix*>(std::as_const(*this).find(name)); }

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.value.size();
  return n;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams p = *this;
  for (auto& t : p.tensors_) t.value.set_zero();
  return p;
}

// --- model ---------------------------------------------------------------------

bool Model::noise_active(bool training) const {
  return training && options.noise.enabled && family() != Family::StackRNN &&
         (options.noise.sigma2 > 0 || options.noise.mu != 0);
}

bool Model::carry_forward_active() const {
  return options.carry_forward && uses_stack(family()) && family() != Family::StackRNN;
}

CellState initial_cell_state(const Model& model) {
  CellState s;
  s.z.assign(model.dims().hidden, real(0));
  if (has_cell_memory(model.family())) s.c.assign(model.dims().hidden, real(0));
  return s;
}

StackState initial_stack(const Model& model) {
  StackState s;
  s.read_width = model.dims().read;
  return s;
}

// --- tape recording ----------------------------------------------------------------

ParamRefs register_params(Tape& tape, const ModelParams& params, ModelParams& grads) {
  ParamRefs refs;
  for (std::size_t r = 0; r < kRoleCount; ++r) {
    const Role role = static_cast<Role>(r);
    if (!params.has(role)) continue;
    refs.refs[r] = tape.parameter(params.get(role), grads.get(role), role_name(role));
  }
  return refs;
}

ParamRefs register_params_frozen(Tape& tape, const ModelParams& params) {
  ParamRefs refs;
  for (std::size_t r = 0; r < kRoleCount; ++r) {
    const Role role = static_cast<Role>(r);
    if (!params.has(role)) continue;
    const Matrix& m = params.get(role);
    refs.refs[r] = tape.constant(m.flat(), static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols));
  }
  return refs;
}

StateRefs state_on_tape(Tape& tape, const CellState& state, const StackState& stack) {
  StateRefs s;
  s.z = tape.constant(state.z);
  if (!state.c.empty()) s.c = tape.constant(state.c);
  s.stack = tape.constant(stack.cells);
  s.noop_ct = state.noop_ct;
  return s;
}

CellState cell_state_from_tape(const Tape& tape, const StateRefs& s) {
  CellState out;
  auto z = tape.value(s.z);
  out.z.assign(z.begin(), z.end());
  if (s.c.rows > 0) {
    auto c = tape.value(s.c);
    out.c.assign(c.begin(), c.end());
  }
  out.noop_ct = s.noop_ct;
  return out;
}

StackState stack_from_tape(const Tape& tape, const StateRefs& s, std::size_t read_width) {
  StackState out;
  auto cells = tape.value(s.stack);
  out.cells.assign(cells.begin(), cells.end());
  out.read_width = read_width;
  return out;
}

namespace {

void check_finite(const Tape& tape, Ref r, const char* name) {
  if (!all_finite(tape.value(r))) throw NonFiniteError(name, "forward");
}

}  // namespace

StepRefs record_step(Tape& tape, const Model& model, const ParamRefs& p, Token x, const StateRefs& state,
                     StepMode mode, Rng* noise_rng) {
  const Family fam = model.family();
  const Dims& dims = model.dims();
  if (x >= dims.vocab) throw ShapeError("record_step: token id outside vocabulary");
  const bool stacked = uses_stack(fam);

  // z_hat = z_{t-1} + P read(S_{t-1}) + noise
  Ref z_prev = state.z;
  Ref z_hat = z_prev;
  if (stacked) {
    Ref read = tape.read_top(state.stack, static_cast<std::uint32_t>(dims.read));
    z_hat = tape.add(z_hat, tape.matvec(p[Role::P], read));
  }
  if (model.noise_active(mode == StepMode::Train)) {
    if (!noise_rng) throw std::invalid_argument("record_step: noise is active but no RNG was supplied");
    const Vector eps = gaussian(*noise_rng, model.options.noise.mu, model.options.noise.sigma2, dims.hidden);
    z_hat = tape.add(z_hat, tape.constant(eps));
  }

  auto affine_x = [&](Role u, Role b) { return tape.add(tape.column(p[u], x), p[b]); };
  auto gate = [&](Role u, Role r, Role b, Ref h) {
    return tape.logistic(tape.add(affine_x(u, b), tape.matvec(p[r], h)));
  };

  Ref z_new;
  Ref c_new = state.c;
  switch (fam) {
    case Family::RNN:
    case Family::StackRNN:
    case Family::DiffStkRNN:
      z_new = tape.scaled_tanh(tape.add(affine_x(Role::U, Role::Bz), tape.matvec(p[Role::R], z_hat)));
      break;
    case Family::DiffStkMIRNN: {
      Ref ux = affine_x(Role::U, Role::Bx);
      Ref rz = tape.add(tape.matvec(p[Role::R], z_hat), p[Role::Bh]);
      z_new = tape.scaled_tanh(tape.mul(ux, rz));
      break;
    }
    case Family::DiffStkMRNN: {
      Ref mx = affine_x(Role::Wmx, Role::Bmx);
      Ref mz = tape.add(tape.matvec(p[Role::Wmz], z_hat), p[Role::Bmz]);
      Ref m = tape.mul(mx, mz);
      z_new = tape.scaled_tanh(tape.add(tape.matvec(p[Role::Wzm], m), affine_x(Role::Wzx, Role::Bz)));
      break;
    }
    case Family::GRU: {
      Ref reset = gate(Role::Ur, Role::Rr, Role::Br, z_hat);
      Ref update = gate(Role::Ug, Role::Rg, Role::Bg, z_hat);
      Ref cand = tape.scaled_tanh(
          tape.add(affine_x(Role::U, Role::Bz), tape.matvec(p[Role::R], tape.mul(reset, z_hat))));
      z_new = tape.add(tape.mul(tape.one_minus(update), z_hat), tape.mul(update, cand));
      break;
    }
    case Family::LSTM:
    case Family::DiffStkLSTM: {
      Ref h_gate = model.options.inject_candidate_only ? z_prev : z_hat;
      Ref in = gate(Role::Ui, Role::Ri, Role::Bi, h_gate);
      Ref out = gate(Role::Uo, Role::Ro, Role::Bo, h_gate);
      Ref forget = gate(Role::Uf, Role::Rf, Role::Bf, h_gate);
      Ref cand = tape.add(affine_x(Role::U, Role::Bz), tape.matvec(p[Role::R], z_hat));
      c_new = tape.add(tape.mul(forget, state.c), tape.mul(in, tape.scaled_tanh(cand)));
      z_new = tape.mul(tape.scaled_tanh(c_new), out);
      break;
    }
    case Family::DiffStkMLSTM: {
      Ref mx = affine_x(Role::Um, Role::Bum);
      Ref mz = tape.add(tape.matvec(p[Role::Rm], z_hat), p[Role::Brm]);
      Ref m = tape.mul(mx, mz);
      Ref m_gate = m;
      if (model.options.inject_candidate_only) {
        Ref mz_plain = tape.add(tape.matvec(p[Role::Rm], z_prev), p[Role::Brm]);
        m_gate = tape.mul(mx, mz_plain);
      }
      Ref in = gate(Role::Ui, Role::Rim, Role::Bi, m_gate);
      Ref out = gate(Role::Uo, Role::Rom, Role::Bo, m_gate);
      Ref forget = gate(Role::Uf, Role::Rfom, Role::Bf, m_gate);
      Ref cand = tape.add(affine_x(Role::U, Role::Bz), tape.matvec(p[Role::Rz], m));
      c_new = tape.add(tape.mul(forget, state.c), tape.mul(in, tape.scaled_tanh(cand)));
      z_new = tape.mul(tape.scaled_tanh(c_new), out);
      break;
    }
  }

  StepRefs res;
  res.next.noop_ct = state.noop_ct;
  // Carry-forward reads the counter left by the previous step's action.
  if (model.carry_forward_active() && carry_gate(true, state.noop_ct) == real(0)) {
    z_new = z_hat;
    c_new = state.c;
    res.carried = true;
  }
  check_finite(tape, z_new, "z");
  res.next.z = z_new;
  res.next.c = c_new;
  res.next.stack = state.stack;

  if (stacked) {
    Ref a = tape.softmax(tape.add(tape.matvec(p[Role::A], z_new), p[Role::Ba]));
    Ref v = tape.logistic(tape.add(tape.dot(p[Role::D], z_new), p[Role::Bd]));
    res.next.stack = tape.stack_step(state.stack, a, v, model.options.literal_noop);
    auto av = tape.value(a);
    res.action = {av[0], av[1], av[2]};
    res.push = tape.scalar_value(v);
    res.next.noop_ct = noop_counter_update(state.noop_ct, res.action);
  }

  res.logits = tape.add(tape.matvec(p[Role::V], z_new), p[Role::Bv]);
  res.recognition = tape.logistic(tape.add(tape.dot(p[Role::Wy], z_new), p[Role::By]));
  check_finite(tape, res.logits, "logits");
  return res;
}

StepResult step(const Model& model, Token x, const CellState& state, const StackState& stack, StepMode mode,
                Rng* noise_rng) {
  Tape tape;
  ParamRefs p = register_params_frozen(tape, model.params);
  StateRefs s = state_on_tape(tape, state, stack);
  StepRefs r = record_step(tape, model, p, x, s, mode, noise_rng);
  StepResult out;
  out.state = cell_state_from_tape(tape, r.next);
  out.stack = stack_from_tape(tape, r.next, model.dims().read);
  out.p_next = softmax(tape.value(r.logits));
  out.recognition = tape.scalar_value(r.recognition);
  out.action = r.action;
  out.carried = r.carried;
  return out;
}

}  // namespace diffstack

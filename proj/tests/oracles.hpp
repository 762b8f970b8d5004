#pragma once

// Independent reference implementations used as test oracles. None of this
// goes through the tape or the library's step code.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "diffstack/cells.hpp"
#include "diffstack/grammar.hpp"
#include "diffstack/training.hpp"

namespace oracle {

using diffstack::Family;
using diffstack::Matrix;
using diffstack::ModelParams;
using diffstack::Role;
using diffstack::Token;
using diffstack::TokenSeq;

using LVec = std::vector<long double>;

inline long double ltanh_scaled(long double x) { return 1.7519L * std::tanh(x * 2.0L / 3.0L); }
inline long double lsigmoid(long double x) { return 1.0L / (1.0L + std::exp(-x)); }

inline LVec lsoftmax(const LVec& x) {
  long double mx = x[0];
  for (auto v : x) mx = std::max(mx, v);
  long double s = 0;
  LVec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) s += (out[i] = std::exp(x[i] - mx));
  for (auto& v : out) v /= s;
  return out;
}

// W x (+ b) with a dense vector x.
inline LVec affine(const Matrix& w, const LVec& x, const Matrix* b = nullptr) {
  LVec y(w.rows, 0);
  for (std::size_t r = 0; r < w.rows; ++r) {
    long double s = b ? static_cast<long double>(b->data[r]) : 0;
    for (std::size_t c = 0; c < w.cols; ++c) s += static_cast<long double>(w(r, c)) * x[c];
    y[r] = s;
  }
  return y;
}

// W e_j + b for a one-hot input.
inline LVec embed(const Matrix& w, Token j, const Matrix& b) {
  LVec y(w.rows);
  for (std::size_t r = 0; r < w.rows; ++r) y[r] = static_cast<long double>(w(r, j)) + b.data[r];
  return y;
}

inline LVec add(LVec a, const LVec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}
inline LVec mul(LVec a, const LVec& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a[i] *= b[i];
  return a;
}
template <typename F>
LVec map(LVec a, F f) {
  for (auto& v : a) v = f(v);
  return a;
}

struct RefState {
  LVec z, c;
  LVec stack;
  std::size_t ct = 0;
};

struct RefStep {
  LVec p_next;
  long double y = 0;
  std::array<long double, 3> action{};
};

// Hand-written forward step for every family, eval mode (no noise).
inline RefStep reference_step(const diffstack::Model& model, Token x, RefState& s) {
  const ModelParams& p = model.params;
  const Family f = model.family();
  const bool stacked = diffstack::uses_stack(f);
  const std::size_t m = model.dims().hidden;
  auto W = [&](Role r) -> const Matrix& { return p.get(r); };

  LVec zhat = s.z;
  if (stacked) {
    LVec top(model.dims().read, 0);
    for (std::size_t i = 0; i < top.size() && i < s.stack.size(); ++i) top[i] = s.stack[i];
    zhat = add(zhat, affine(W(Role::P), top));
  }
  auto gate = [&](Role u, Role r, Role b, const LVec& h) {
    return map(add(embed(W(u), x, W(b)), affine(W(r), h)), lsigmoid);
  };

  LVec z(m), c = s.c;
  switch (f) {
    case Family::RNN:
    case Family::StackRNN:
    case Family::DiffStkRNN:
      z = map(add(embed(W(Role::U), x, W(Role::Bz)), affine(W(Role::R), zhat)), ltanh_scaled);
      break;
    case Family::DiffStkMIRNN:
      z = map(mul(embed(W(Role::U), x, W(Role::Bx)), affine(W(Role::R), zhat, &W(Role::Bh))), ltanh_scaled);
      break;
    case Family::DiffStkMRNN: {
      LVec mm = mul(embed(W(Role::Wmx), x, W(Role::Bmx)), affine(W(Role::Wmz), zhat, &W(Role::Bmz)));
      z = map(add(affine(W(Role::Wzm), mm), embed(W(Role::Wzx), x, W(Role::Bz))), ltanh_scaled);
      break;
    }
    case Family::GRU: {
      LVec r = gate(Role::Ur, Role::Rr, Role::Br, zhat);
      LVec u = gate(Role::Ug, Role::Rg, Role::Bg, zhat);
      LVec cand = map(add(embed(W(Role::U), x, W(Role::Bz)), affine(W(Role::R), mul(r, zhat))), ltanh_scaled);
      for (std::size_t i = 0; i < m; ++i) z[i] = (1 - u[i]) * zhat[i] + u[i] * cand[i];
      break;
    }
    case Family::LSTM:
    case Family::DiffStkLSTM: {
      LVec in = gate(Role::Ui, Role::Ri, Role::Bi, zhat);
      LVec out = gate(Role::Uo, Role::Ro, Role::Bo, zhat);
      LVec fg = gate(Role::Uf, Role::Rf, Role::Bf, zhat);
      LVec cand = add(embed(W(Role::U), x, W(Role::Bz)), affine(W(Role::R), zhat));
      for (std::size_t i = 0; i < m; ++i) c[i] = fg[i] * s.c[i] + in[i] * ltanh_scaled(cand[i]);
      for (std::size_t i = 0; i < m; ++i) z[i] = ltanh_scaled(c[i]) * out[i];
      break;
    }
    case Family::DiffStkMLSTM: {
      LVec mm = mul(embed(W(Role::Um), x, W(Role::Bum)), affine(W(Role::Rm), zhat, &W(Role::Brm)));
      LVec in = gate(Role::Ui, Role::Rim, Role::Bi, mm);
      LVec out = gate(Role::Uo, Role::Rom, Role::Bo, mm);
      LVec fg = gate(Role::Uf, Role::Rfom, Role::Bf, mm);
      LVec cand = add(embed(W(Role::U), x, W(Role::Bz)), affine(W(Role::Rz), mm));
      for (std::size_t i = 0; i < m; ++i) c[i] = fg[i] * s.c[i] + in[i] * ltanh_scaled(cand[i]);
      for (std::size_t i = 0; i < m; ++i) z[i] = ltanh_scaled(c[i]) * out[i];
      break;
    }
  }

  const bool cf = model.options.carry_forward && stacked && f != Family::StackRNN;
  if (cf && s.ct > 1) {
    z = zhat;
    c = s.c;
  }

  RefStep out;
  if (stacked) {
    LVec a = lsoftmax(affine(W(Role::A), z, &W(Role::Ba)));
    const long double v = lsigmoid(affine(W(Role::D), z, &W(Role::Bd))[0]);
    const LVec& S = s.stack;
    auto at = [&](std::size_t i) { return i < S.size() ? S[i] : 0.0L; };
    LVec next(S.size() + 1);
    next[0] = a[0] * v + a[1] * at(1) + a[2] * at(0);
    for (std::size_t i = 1; i < next.size(); ++i) {
      next[i] = a[0] * at(i - 1) + a[1] * at(i + 1) + (model.options.literal_noop ? 0.0L : a[2] * at(i));
    }
    s.stack = next;
    out.action = {a[0], a[1], a[2]};
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i) {
      if (a[i] > a[best]) best = i;
    }
    s.ct = best == 2 ? s.ct + 1 : 0;
  }
  s.z = z;
  s.c = c;
  out.p_next = lsoftmax(affine(W(Role::V), z, &W(Role::Bv)));
  out.y = lsigmoid(affine(W(Role::Wy), z, &W(Role::By))[0]);
  return out;
}

inline RefState reference_initial(const diffstack::Model& model) {
  RefState s;
  s.z.assign(model.dims().hidden, 0);
  if (diffstack::has_cell_memory(model.family())) s.c.assign(model.dims().hidden, 0);
  return s;
}

// Discrete stack with empty cells reading as 0.
struct DiscreteStack {
  std::vector<double> items;  // back() is the top
  void apply(int action, double v) {
    if (action == 0) items.push_back(v);
    else if (action == 1 && !items.empty()) items.pop_back();
  }
  double at(std::size_t i) const { return i < items.size() ? items[items.size() - 1 - i] : 0.0; }
};

// CYK over S -> a_i S b_i | S S | eps, in Chomsky normal form for non-empty
// strings:  S -> A_i B_i | A_i T_i | S S,  T_i -> S B_i.
class DyckCyk {
 public:
  explicit DyckCyk(const diffstack::Alphabet& a) : pairs_(a.pairs()) {}

  bool accepts(const TokenSeq& w) const {
    const std::size_t n = w.size();
    if (n == 0) return true;
    const std::size_t k = pairs_.size();
    // Nonterminals: 0 = S, 1..k = A_i, k+1..2k = B_i, 2k+1..3k = T_i.
    const std::size_t nt = 3 * k + 1;
    std::vector<char> tab(n * n * nt, 0);
    auto cell = [&](std::size_t i, std::size_t len, std::size_t x) -> char& {
      return tab[(i * n + (len - 1)) * nt + x];
    };
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        if (w[i] == pairs_[p].first) cell(i, 1, 1 + p) = 1;
        if (w[i] == pairs_[p].second) cell(i, 1, 1 + k + p) = 1;
      }
    }
    for (std::size_t len = 2; len <= n; ++len) {
      for (std::size_t i = 0; i + len <= n; ++i) {
        for (std::size_t split = 1; split < len; ++split) {
          const std::size_t j = i + split;
          const std::size_t rlen = len - split;
          if (cell(i, split, 0) && cell(j, rlen, 0)) cell(i, len, 0) = 1;
          for (std::size_t p = 0; p < k; ++p) {
            if (cell(i, split, 1 + p) && (cell(j, rlen, 1 + k + p) || cell(j, rlen, 1 + 2 * k + p))) {
              cell(i, len, 0) = 1;
            }
            if (cell(i, split, 0) && cell(j, rlen, 1 + k + p)) cell(i, len, 1 + 2 * k + p) = 1;
          }
        }
      }
    }
    return cell(0, n, 0) != 0;
  }

 private:
  std::vector<std::pair<Token, Token>> pairs_;
};

// Recursive PCFG sampler on std:: distributions. Returns false when the
// derivation grows past max_len.
inline bool simulate_pcfg(std::mt19937_64& gen, double p, double p1, std::size_t pairs, std::size_t max_len,
                          std::size_t& length, int depth = 0) {
  if (length > max_len || depth > 4000) return false;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(gen);
  if (r < p) {
    std::uniform_int_distribution<std::size_t> pick(0, pairs - 1);
    (void)pick(gen);
    length += 2;
    return simulate_pcfg(gen, p, p1, pairs, max_len, length, depth + 1);
  }
  if (r < p + p1) {
    return simulate_pcfg(gen, p, p1, pairs, max_len, length, depth + 1) &&
           simulate_pcfg(gen, p, p1, pairs, max_len, length, depth + 1);
  }
  return length <= max_len;
}

// Central-difference check of d(loss)/d(params) for one example. Returns the
// norm-wise relative error ||g - g_fd|| / max(||g||, ||g_fd||).
inline double gradient_check(const diffstack::Model& model, const diffstack::Example& ex, std::size_t window,
                             std::uint64_t noise_seed, double h = 1e-5) {
  using namespace diffstack;
  Tape tape;
  auto loss_at = [&](const Model& m) {
    ModelParams g = m.params.zeros_like();
    Rng noise(noise_seed);
    return static_cast<double>(accumulate_gradients(m, ex, window, g, &noise, tape));
  };
  ModelParams grads = model.params.zeros_like();
  {
    Rng noise(noise_seed);
    accumulate_gradients(model, ex, window, grads, &noise, tape);
  }
  Model probe = model;
  double diff2 = 0, ad2 = 0, fd2 = 0;
  for (std::size_t t = 0; t < probe.params.tensors().size(); ++t) {
    auto& w = probe.params.tensors()[t].value.data;
    const auto& g = grads.tensors()[t].value.data;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const real orig = w[i];
      w[i] = orig + h;
      const double up = loss_at(probe);
      w[i] = orig - h;
      const double down = loss_at(probe);
      w[i] = orig;
      const double fd = (up - down) / (2 * h);
      diff2 += (fd - g[i]) * (fd - g[i]);
      ad2 += g[i] * g[i];
      fd2 += fd * fd;
    }
  }
  const double denom = std::max(std::sqrt(std::max(ad2, fd2)), 1e-12);
  return std::sqrt(diff2) / denom;
}

// Random parameters with entries uniform in (-scale, scale).
inline diffstack::Model random_model(Family f, std::size_t vocab, std::size_t hidden, std::uint64_t seed,
                                     double scale = 0.8) {
  diffstack::Rng rng(seed);
  diffstack::Model m{diffstack::ModelParams::zeros(f, {vocab, hidden, 3}), {}};
  for (auto& t : m.params.tensors()) {
    for (auto& v : t.value.data) v = static_cast<diffstack::real>(rng.uniform(-scale, scale));
  }
  return m;
}

inline TokenSeq random_tokens(diffstack::Rng& rng, std::size_t n, std::size_t symbols) {
  TokenSeq s(n);
  for (auto& t : s) t = static_cast<Token>(rng.below(symbols));
  return s;
}

}  // namespace oracle

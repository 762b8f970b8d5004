#include "diffstack/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <type_traits>

namespace diffstack {

std::string_view mode_name(TrainMode m) { return m == TrainMode::Sequential ? "sequential" : "incremental"; }

std::optional<TrainMode> parse_mode(std::string_view s) {
  if (s == "sequential") return TrainMode::Sequential;
  if (s == "incremental") return TrainMode::Incremental;
  return std::nullopt;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (!(lr > 0)) fail("lr must be positive");
  if (!(clip > 0)) fail("clip must be positive");
  if (bptt_window < 1) fail("bptt window must be at least 1");
  if (epochs < 1) fail("epochs must be at least 1");
  if (trials < 1) fail("trials must be at least 1");
  if (hidden < 1) fail("hidden size must be at least 1");
  if (patience < 1) fail("patience must be at least 1");
  if (!(lr_floor > 0)) fail("lr floor must be positive");
  if (!(hard_fraction_lo >= 0 && hard_fraction_lo <= hard_fraction_hi && hard_fraction_hi <= 1)) {
    fail("hard-negative fractions must satisfy 0 <= lo <= hi <= 1");
  }
  if (cell.noise.sigma2 < 0) fail("noise variance must be non-negative");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0)) {
    fail("adam coefficients out of range");
  }
}

namespace {

std::string on_off(bool b) { return b ? "on" : "off"; }

bool parse_switch(std::string_view key, std::string_view v) {
  if (v == "on" || v == "1" || v == "true") return true;
  if (v == "off" || v == "0" || v == "false") return false;
  throw std::invalid_argument(std::string(key) + ": expected on|off, got '" + std::string(v) + "'");
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  const std::string text(v);
  std::size_t used = 0;
  try {
    T out;
    if constexpr (std::is_same_v<T, double> || std::is_same_v<T, float>) {
      out = static_cast<T>(std::stod(text, &used));
    } else {
      if (!text.empty() && text[0] == '-') throw std::invalid_argument("negative");
      out = static_cast<T>(std::stoull(text, &used));
    }
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument(std::string(key) + ": bad number '" + text + "'");
  }
}

}  // namespace

std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& c) {
  return {
      {"epochs", std::to_string(c.epochs)},
      {"lr", format_real(c.lr)},
      {"clip", format_real(c.clip)},
      {"bptt_window", std::to_string(c.bptt_window)},
      {"patience", std::to_string(c.patience)},
      {"lr_floor", format_real(c.lr_floor)},
      {"beta1", format_real(c.adam.beta1)},
      {"beta2", format_real(c.adam.beta2)},
      {"adam_eps", format_real(c.adam.eps)},
      {"mode", std::string(mode_name(c.mode))},
      {"objective", c.objective == Objective::Recognition ? "recognition" : "lm"},
      {"noise", on_off(c.cell.noise.enabled)},
      {"noise_mu", format_real(c.cell.noise.mu)},
      {"noise_sigma2", format_real(c.cell.noise.sigma2)},
      {"carry_forward", on_off(c.cell.carry_forward)},
      {"literal_noop", on_off(c.cell.literal_noop)},
      {"inject_candidate_only", on_off(c.cell.inject_candidate_only)},
      {"hard_fraction_lo", format_real(static_cast<real>(c.hard_fraction_lo))},
      {"hard_fraction_hi", format_real(static_cast<real>(c.hard_fraction_hi))},
      {"seed", std::to_string(c.seed)},
      {"trials", std::to_string(c.trials)},
      {"hidden", std::to_string(c.hidden)},
      {"decision", c.rule == DecisionRule::FinalStep ? "final" : "mean"},
  };
}

bool is_config_key(std::string_view key) {
  for (const auto& [k, v] : config_entries(TrainConfig{})) {
    if (k == key) return true;
  }
  return false;
}

void apply_setting(TrainConfig& c, std::string_view key, std::string_view v) {
  if (key == "epochs") c.epochs = parse_number<std::size_t>(key, v);
  else if (key == "lr") c.lr = parse_number<real>(key, v);
  else if (key == "clip") c.clip = parse_number<real>(key, v);
  else if (key == "bptt_window") c.bptt_window = parse_number<std::size_t>(key, v);
  else if (key == "patience") c.patience = parse_number<std::size_t>(key, v);
  else if (key == "lr_floor") c.lr_floor = parse_number<real>(key, v);
  else if (key == "beta1") c.adam.beta1 = parse_number<real>(key, v);
  else if (key == "beta2") c.adam.beta2 = parse_number<real>(key, v);
  else if (key == "adam_eps") c.adam.eps = parse_number<real>(key, v);
  else if (key == "mode") {
    auto m = parse_mode(v);
    if (!m) throw std::invalid_argument("mode: expected sequential|incremental, got '" + std::string(v) + "'");
    c.mode = *m;
  } else if (key == "objective") {
    if (v == "recognition") c.objective = Objective::Recognition;
    else if (v == "lm") c.objective = Objective::LanguageModel;
    else throw std::invalid_argument("objective: expected recognition|lm, got '" + std::string(v) + "'");
  } else if (key == "noise") c.cell.noise.enabled = parse_switch(key, v);
  else if (key == "noise_mu") c.cell.noise.mu = parse_number<real>(key, v);
  else if (key == "noise_sigma2") c.cell.noise.sigma2 = parse_number<real>(key, v);
  else if (key == "carry_forward") c.cell.carry_forward = parse_switch(key, v);
  else if (key == "literal_noop") c.cell.literal_noop = parse_switch(key, v);
  else if (key == "inject_candidate_only") c.cell.inject_candidate_only = parse_switch(key, v);
  else if (key == "hard_fraction_lo") c.hard_fraction_lo = parse_number<double>(key, v);
  else if (key == "hard_fraction_hi") c.hard_fraction_hi = parse_number<double>(key, v);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "trials") c.trials = parse_number<std::size_t>(key, v);
  else if (key == "hidden") c.hidden = parse_number<std::size_t>(key, v);
  else if (key == "decision") {
    if (v == "final") c.rule = DecisionRule::FinalStep;
    else if (v == "mean") c.rule = DecisionRule::MeanVote;
    else throw std::invalid_argument("decision: expected final|mean, got '" + std::string(v) + "'");
  } else {
    throw std::invalid_argument("unknown setting '" + std::string(key) + "'");
  }
}

// --- examples and loss ----------------------------------------------------------

Example recognition_example(const Sample& s, Token eos) {
  Example ex;
  ex.inputs = s.tokens;
  ex.targets.assign(s.tokens.begin() + (s.tokens.empty() ? 0 : 1), s.tokens.end());
  ex.targets.push_back(eos);
  if (ex.inputs.empty()) ex.targets.clear();
  ex.label = static_cast<real>(s.label);
  return ex;
}

std::vector<Example> recognition_examples(const DatasetSplit& split, Token eos) {
  std::vector<Example> out;
  out.reserve(split.size());
  for (const auto& s : split.samples) out.push_back(recognition_example(s, eos));
  return out;
}

std::vector<Example> lm_examples(std::span<const TokenSeq> sentences, Token eos) {
  std::vector<Example> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) {
    LmSequence seq = lm_sequence(s, eos);
    out.push_back({std::move(seq.inputs), std::move(seq.targets), std::nullopt});
  }
  return out;
}

real sequence_loss(std::span<const Vector> p_next, std::span<const real> recognition, std::span<const Token> targets,
                   std::optional<real> label) {
  if (p_next.size() != targets.size()) throw std::invalid_argument("sequence_loss: one distribution per target");
  if (label && recognition.size() != targets.size()) {
    throw std::invalid_argument("sequence_loss: one recognition score per target");
  }
  real loss = 0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] >= p_next[t].size()) throw std::invalid_argument("sequence_loss: target outside vocabulary");
    loss -= std::log(p_next[t][targets[t]]);
    if (label) {
      const real e = recognition[t] - *label;
      loss += real(0.5) * e * e;
    }
  }
  return loss;
}

real accumulate_gradients(const Model& model, const Example& ex, std::size_t window, ModelParams& grads, Rng* noise_rng,
                          Tape& tape) {
  if (ex.inputs.size() != ex.targets.size()) throw std::invalid_argument("accumulate_gradients: inputs/targets differ");
  if (window == 0) throw std::invalid_argument("accumulate_gradients: window must be positive");
  CellState state = initial_cell_state(model);
  StackState stack = initial_stack(model);
  std::vector<Ref> seeds;
  seeds.reserve(2 * window);
  real total = 0;
  for (std::size_t start = 0; start < ex.inputs.size(); start += window) {
    tape.clear();
    ParamRefs p = register_params(tape, model.params, grads);
    StateRefs s = state_on_tape(tape, state, stack);
    seeds.clear();
    const std::size_t end = std::min(ex.inputs.size(), start + window);
    for (std::size_t t = start; t < end; ++t) {
      StepRefs r = record_step(tape, model, p, ex.inputs[t], s, StepMode::Train, noise_rng);
      seeds.push_back(tape.softmax_xent(r.logits, ex.targets[t]));
      if (ex.label) seeds.push_back(tape.half_sq_err(r.recognition, *ex.label));
      s = r.next;
    }
    for (Ref r : seeds) total += tape.scalar_value(r);
    if (!std::isfinite(total)) throw NonFiniteError("loss", "forward");
    tape.backward(seeds);
    state = cell_state_from_tape(tape, s);
    stack = stack_from_tape(tape, s, model.dims().read);
  }
  return total;
}

void clip_gradients(ModelParams& grads, real limit) {
  for (auto& t : grads.tensors()) {
    for (real& g : t.value.data) g = std::clamp(g, -limit, limit);
  }
}

// --- Adam --------------------------------------------------------------------------

Adam::Adam(const ModelParams& like, AdamConfig config)
    : config_(config), m_(like.zeros_like()), v_(like.zeros_like()) {}

void Adam::step(ModelParams& params, const ModelParams& grads, real lr) {
  ++t_;
  const real c1 = real(1) - std::pow(config_.beta1, static_cast<real>(t_));
  const real c2 = real(1) - std::pow(config_.beta2, static_cast<real>(t_));
  auto& pt = params.tensors();
  const auto& gt = grads.tensors();
  auto& mt = m_.tensors();
  auto& vt = v_.tensors();
  for (std::size_t i = 0; i < pt.size(); ++i) {
    real* w = pt[i].value.data.data();
    const real* g = gt[i].value.data.data();
    real* m = mt[i].value.data.data();
    real* v = vt[i].value.data.data();
    const std::size_t n = pt[i].value.size();
    for (std::size_t j = 0; j < n; ++j) {
      m[j] = config_.beta1 * m[j] + (1 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1 - config_.beta2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
    }
  }
}

std::vector<NamedMatrix> Adam::export_state() const {
  std::vector<NamedMatrix> out;
  for (const auto& t : m_.tensors()) out.push_back({"adam_m/" + t.name, t.value});
  for (const auto& t : v_.tensors()) out.push_back({"adam_v/" + t.name, t.value});
  return out;
}

void Adam::import_state(std::span<const NamedMatrix> blocks, std::uint64_t t) {
  auto load = [&](ModelParams& into, const std::string& prefix) {
    for (auto& t : into.tensors()) {
      auto it = std::find_if(blocks.begin(), blocks.end(),
                             [&](const NamedMatrix& b) { return b.name == prefix + t.name; });
      if (it == blocks.end()) throw CheckpointError("optimizer state lacks '" + prefix + t.name + "'");
      if (!it->value.same_shape(t.value)) throw CheckpointError("optimizer state '" + it->name + "' has the wrong shape");
      t.value = it->value;
    }
  };
  load(m_, "adam_m/");
  load(v_, "adam_v/");
  t_ = t;
}

// --- patience -------------------------------------------------------------------

bool PatienceScheduler::observe(double metric) {
  const bool improved = !best_ || (higher_ ? metric > *best_ : metric < *best_);
  if (improved) {
    best_ = metric;
    since_ = 0;
    return true;
  }
  if (++since_ >= patience_) {
    lr_ = std::max(floor_, lr_ / 2);
    since_ = 0;
  }
  return false;
}

// --- reports ------------------------------------------------------------------------

namespace {

template <typename T>
void put_opt(std::ostream& out, const char* key, const std::optional<T>& v) {
  out << key << '=';
  if (v) out << *v;
  else out << "n/a";
  out << '\n';
}

}  // namespace

void write_report(std::ostream& out, const TrainReport& r) {
  out << "seed=" << r.seed << '\n';
  out << "epochs=" << r.epochs.size() << '\n';
  out << "best_epoch=" << r.best_epoch << '\n';
  put_opt(out, "best_valid", r.best_valid);
  put_opt(out, "train_accuracy", r.train_accuracy);
  put_opt(out, "test_accuracy", r.test_accuracy);
  put_opt(out, "test_perplexity", r.test_perplexity);
  for (const auto& p : r.long_probes) {
    out << "long_n" << p.n << "_count=" << p.count << '\n';
    out << "long_n" << p.n << "_accuracy=";
    if (p.accuracy) out << *p.accuracy;
    else out << "n/a";
    out << '\n';
  }
  out << "final_lr=" << (r.epochs.empty() ? 0 : r.epochs.back().lr) << '\n';
  out << "wall_seconds=" << r.wall_seconds << '\n';
  out << "diverged=" << (r.diverged ? 1 : 0) << '\n';
  if (!r.error.empty()) out << "error=" << r.error << '\n';
}

void write_epoch_trace_csv(std::ostream& out, const TrainReport& r) {
  out << "epoch,train_loss,valid_metric,lr,pool\n";
  for (const auto& e : r.epochs) {
    out << e.epoch << ',' << format_real(static_cast<real>(e.train_loss)) << ','
        << format_real(static_cast<real>(e.valid_metric)) << ',' << format_real(e.lr) << ',' << e.pool << '\n';
  }
}

// --- curriculum ---------------------------------------------------------------------

std::array<std::size_t, 4> stage_epochs(std::size_t total) {
  std::array<std::size_t, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) out[i] = total / 4 + (i < total % 4 ? 1 : 0);
  return out;
}

std::array<std::vector<std::size_t>, 4> stage_pools(std::span<const Example> train) {
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return train[a].inputs.size() < train[b].inputs.size(); });
  std::array<std::vector<std::size_t>, 4> pools;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t n = ((s + 1) * train.size() + 3) / 4;
    pools[s].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
    std::sort(pools[s].begin(), pools[s].end());
  }
  return pools;
}

// --- trainer -------------------------------------------------------------------------

Trainer::Trainer(Model model, std::vector<Example> train, Validator validate, bool higher_is_better, TrainConfig cfg)
    : model_(std::move(model)),
      best_(model_),
      train_(std::move(train)),
      validate_(std::move(validate)),
      cfg_(std::move(cfg)),
      adam_(model_.params, cfg_.adam),
      sched_(cfg_.lr, cfg_.patience, cfg_.lr_floor, higher_is_better),
      grads_(model_.params.zeros_like()) {
  cfg_.validate();
  if (train_.empty()) throw std::invalid_argument("Trainer: empty training set");
  report_.seed = cfg_.seed;
  all_.resize(train_.size());
  std::iota(all_.begin(), all_.end(), std::size_t{0});
  stages_ = stage_pools(train_);
  stage_epochs_ = stage_epochs(cfg_.epochs);
}

Trainer Trainer::for_recognition(Model model, const DatasetSplit& train, const DatasetSplit& valid, Token eos,
                                 const TrainConfig& cfg) {
  const DecisionRule rule = cfg.rule;
  Validator v = [&valid, rule](const Model& m) { return evaluate_split(m, valid, rule).accuracy(); };
  return Trainer(std::move(model), recognition_examples(train, eos), std::move(v), true, cfg);
}

Trainer Trainer::for_language_model(Model model, const Corpus& corpus, const TrainConfig& cfg) {
  const Token eos = corpus.vocab.eos();
  Validator v = [&corpus, eos](const Model& m) { return perplexity(m, corpus.valid, eos); };
  return Trainer(std::move(model), lm_examples(corpus.train, eos), std::move(v), false, cfg);
}

std::span<const std::size_t> Trainer::pool_for_epoch(std::size_t epoch) const {
  if (cfg_.mode == TrainMode::Sequential) return all_;
  std::size_t acc = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    acc += stage_epochs_[s];
    if (epoch < acc) return stages_[s];
  }
  return stages_[3];
}

EpochRecord Trainer::run_epoch() {
  const auto src = pool_for_epoch(epoch_);
  std::vector<std::size_t> pool(src.begin(), src.end());
  Rng shuffle(Rng::derive_seed(cfg_.seed, "shuffle", epoch_));
  for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[shuffle.below(i)]);
  Rng noise(Rng::derive_seed(cfg_.seed, "noise", epoch_));

  const real lr = sched_.lr();
  double total = 0;
  for (std::size_t idx : pool) {
    for (auto& t : grads_.tensors()) t.value.set_zero();
    const real loss = accumulate_gradients(model_, train_[idx], cfg_.bptt_window, grads_, &noise, tape_);
    clip_gradients(grads_, cfg_.clip);
    adam_.step(model_.params, grads_, lr);
    total += loss;
  }
  for (const auto& t : model_.params.tensors()) {
    if (!all_finite(t.value)) throw NonFiniteError(t.name, "update");
  }

  EpochRecord rec;
  rec.epoch = epoch_ + 1;
  rec.train_loss = total / static_cast<double>(pool.size());
  rec.valid_metric = validate_(model_);
  rec.lr = lr;
  rec.pool = pool.size();
  if (sched_.observe(rec.valid_metric)) {
    best_ = model_;
    report_.best_epoch = rec.epoch;
    report_.best_valid = rec.valid_metric;
  }
  report_.epochs.push_back(rec);
  ++epoch_;
  return rec;
}

void Trainer::run(std::size_t epochs) {
  for (std::size_t i = 0; i < epochs && !finished(); ++i) run_epoch();
}

Checkpoint Trainer::snapshot() const {
  Checkpoint ck;
  ck.model = model_;
  ck.seed = cfg_.seed;
  ck.steps = adam_.steps();
  ck.info["epoch"] = std::to_string(epoch_);
  ck.info["lr"] = format_real(sched_.lr());
  ck.info["mode"] = std::string(mode_name(cfg_.mode));
  ck.info["sched_best"] = sched_.best() ? format_real(static_cast<real>(*sched_.best())) : "none";
  ck.info["sched_since"] = std::to_string(sched_.since_improvement());
  ck.info["best_epoch"] = std::to_string(report_.best_epoch);
  std::ostringstream trace;
  for (const auto& e : report_.epochs) {
    trace << e.epoch << ':' << format_real(static_cast<real>(e.train_loss)) << ':'
          << format_real(static_cast<real>(e.valid_metric)) << ':' << format_real(e.lr) << ':' << e.pool << ';';
  }
  ck.info["trace"] = trace.str();
  for (const auto& [k, v] : config_entries(cfg_)) ck.info["cfg." + k] = v;
  ck.state = adam_.export_state();
  for (const auto& t : best_.params.tensors()) ck.state.push_back({"best/" + t.name, t.value});
  return ck;
}

void Trainer::resume(const Checkpoint& ck) {
  if (ck.model.family() != model_.family() || !(ck.model.dims() == model_.dims())) {
    throw CheckpointError("resume: checkpoint family or dimensions differ from the trainer's model");
  }
  auto info = [&](const std::string& k) {
    auto it = ck.info.find(k);
    if (it == ck.info.end()) throw CheckpointError("resume: checkpoint lacks '" + k + "'");
    return it->second;
  };
  model_ = ck.model;
  adam_.import_state(ck.state, ck.steps);
  best_ = model_;
  for (auto& t : best_.params.tensors()) {
    auto it = std::find_if(ck.state.begin(), ck.state.end(),
                           [&](const NamedMatrix& b) { return b.name == "best/" + t.name; });
    if (it == ck.state.end()) throw CheckpointError("resume: checkpoint lacks 'best/" + t.name + "'");
    t.value = it->value;
  }
  const std::string sb = info("sched_best");
  std::optional<double> best;
  if (sb != "none") best = parse_real(sb);
  sched_.restore(parse_real(info("lr")), best, std::stoul(info("sched_since")));
  epoch_ = std::stoul(info("epoch"));
  report_.best_epoch = std::stoul(info("best_epoch"));
  report_.best_valid = best;
  report_.epochs.clear();
  std::istringstream trace(info("trace"));
  std::string rec;
  while (std::getline(trace, rec, ';')) {
    if (rec.empty()) continue;
    std::istringstream rs(rec);
    std::string f[5];
    for (auto& x : f) std::getline(rs, x, ':');
    report_.epochs.push_back({std::stoul(f[0]), parse_real(f[1]), parse_real(f[2]), parse_real(f[3]), std::stoul(f[4])});
  }
}

// --- trials ---------------------------------------------------------------------------

std::uint64_t trial_seed(std::uint64_t base, std::size_t i) { return Rng::derive_seed(base, "trial", i); }

TrialOutcome train_one(Family family, const TrialData& data, const TrainConfig& cfg, std::uint64_t seed) {
  if (!data.train || !data.valid || !data.test) throw std::invalid_argument("train_one: train/valid/test required");
  const auto start = std::chrono::steady_clock::now();
  TrainConfig c = cfg;
  c.seed = seed;
  Rng init(Rng::derive_seed(seed, "init", 0));
  Model model{ModelParams::init(family, Dims{data.vocab, c.hidden, 3}, init), c.cell};

  Trainer trainer = Trainer::for_recognition(std::move(model), *data.train, *data.valid, data.eos, c);
  TrialOutcome out;
  try {
    trainer.run(c.epochs);
  } catch (const NonFiniteError& e) {
    trainer.report().diverged = true;
    trainer.report().error = e.what();
  }
  out.report = trainer.report();
  out.best = trainer.best_model();
  out.last = trainer.snapshot();
  if (out.report.ok()) {
    out.report.train_accuracy = evaluate_split(out.best, *data.train, c.rule).accuracy();
    out.report.test_accuracy = evaluate_split(out.best, *data.test, c.rule).accuracy();
    if (data.long_test) out.report.long_probes = evaluate_long(out.best, *data.long_test);
  }
  out.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

TrialOutcome train_incremental(Family family, const TrialData& data, const TrainConfig& cfg, std::uint64_t seed) {
  TrainConfig c = cfg;
  c.mode = TrainMode::Incremental;
  return train_one(family, data, c, seed);
}

Aggregate aggregate(std::span<const double> values) {
  Aggregate a;
  a.completed = values.size();
  if (values.empty()) return a;
  a.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  a.best = *std::max_element(values.begin(), values.end());
  return a;
}

namespace {

TrialOutcome guarded_trial(Family family, const TrialData& data, const TrainConfig& cfg, std::size_t i) {
  const std::uint64_t seed = trial_seed(cfg.seed, i);
  try {
    return train_one(family, data, cfg, seed);
  } catch (const std::exception& e) {
    TrialOutcome failed;
    failed.report.seed = seed;
    failed.report.error = e.what();
    return failed;
  }
}

TrialsResult fold(std::vector<TrialOutcome> trials) {
  TrialsResult r;
  std::vector<double> acc;
  for (const auto& t : trials) {
    if (t.report.ok() && t.report.test_accuracy) acc.push_back(*t.report.test_accuracy);
    else ++r.failures;
  }
  r.test = aggregate(acc);
  r.trials = std::move(trials);
  return r;
}

}  // namespace

TrialsResult run_trials(Family family, const TrialData& data, const TrainConfig& cfg) {
  cfg.validate();
  std::vector<TrialOutcome> trials(cfg.trials);
  const auto n = static_cast<std::int64_t>(cfg.trials);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t i = 0; i < n; ++i) {
    trials[static_cast<std::size_t>(i)] = guarded_trial(family, data, cfg, static_cast<std::size_t>(i));
  }
  return fold(std::move(trials));
}

TrialsResult run_trials_serial(Family family, const TrialData& data, const TrainConfig& cfg) {
  cfg.validate();
  std::vector<TrialOutcome> trials;
  for (std::size_t i = 0; i < cfg.trials; ++i) trials.push_back(guarded_trial(family, data, cfg, i));
  return fold(std::move(trials));
}

}  // namespace diffstack

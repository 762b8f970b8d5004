#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "diffstack/cells.hpp"
#include "diffstack/checkpoint.hpp"
#include "diffstack/dataset.hpp"
#include "diffstack/eval.hpp"

namespace diffstack {

enum class TrainMode { Sequential, Incremental };
enum class Objective { Recognition, LanguageModel };

std::string_view mode_name(TrainMode m);
std::optional<TrainMode> parse_mode(std::string_view s);

struct AdamConfig {
  real beta1 = real(0.9);
  real beta2 = real(0.999);
  real eps = real(1e-8);
};

struct TrainConfig {
  std::size_t epochs = 30;
  real lr = real(2e-3);
  real clip = 15;
  std::size_t bptt_window = 50;
  AdamConfig adam;
  std::size_t patience = 3;   // non-improving checks before the lr is halved
  real lr_floor = real(1e-5);
  TrainMode mode = TrainMode::Sequential;
  Objective objective = Objective::Recognition;
  CellOptions cell;           // noise and carry-forward switches
  double hard_fraction_lo = 0.15;
  double hard_fraction_hi = 0.30;
  std::uint64_t seed = 0;
  std::size_t trials = 10;
  std::size_t hidden = 8;
  DecisionRule rule = DecisionRule::FinalStep;

  // Throws std::invalid_argument on a broken invariant.
  void validate() const;
};

// Flat key = value view of a TrainConfig, used by config files, manifests and
// checkpoints. Switches take on/off.
std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& cfg);
// Throws std::invalid_argument for an unknown key or a malformed value.
void apply_setting(TrainConfig& cfg, std::string_view key, std::string_view value);
bool is_config_key(std::string_view key);

// One training string: inputs, next-token targets and, for recognition, the
// whole-string label broadcast to every step.
struct Example {
  TokenSeq inputs;
  TokenSeq targets;
  std::optional<real> label;
};

// Targets are tokens[1:] followed by EOS.
Example recognition_example(const Sample& s, Token eos);
std::vector<Example> recognition_examples(const DatasetSplit& split, Token eos);
std::vector<Example> lm_examples(std::span<const TokenSeq> sentences, Token eos);

// Sum over steps of -log p_next[t][target_t] plus, when a label is given,
// 0.5 (recognition[t] - label)^2. Throws std::invalid_argument when the
// lengths disagree.
real sequence_loss(std::span<const Vector> p_next, std::span<const real> recognition, std::span<const Token> targets,
                   std::optional<real> label);

// Truncated BPTT over one string. The tape is cut every window steps; hidden
// and stack state carry over, gradients from all windows accumulate into
// grads. Returns the total loss.
real accumulate_gradients(const Model& model, const Example& ex, std::size_t window, ModelParams& grads, Rng* noise_rng,
                          Tape& tape);

// Entrywise clamp to [-limit, limit].
void clip_gradients(ModelParams& grads, real limit);

class Adam {
 public:
  Adam() = default;
  Adam(const ModelParams& like, AdamConfig config);

  void step(ModelParams& params, const ModelParams& grads, real lr);
  std::uint64_t steps() const { return t_; }

  // Moments as "adam_m/<tensor>" and "adam_v/<tensor>" blocks.
  std::vector<NamedMatrix> export_state() const;
  void import_state(std::span<const NamedMatrix> blocks, std::uint64_t t);

 private:
  AdamConfig config_;
  ModelParams m_;
  ModelParams v_;
  std::uint64_t t_ = 0;
};

// Halves the learning rate once `patience` consecutive checks fail to improve
// on the best metric seen so far, then starts counting again.
class PatienceScheduler {
 public:
  PatienceScheduler() = default;
  PatienceScheduler(real lr, std::size_t patience, real floor, bool higher_is_better)
      : lr_(lr), patience_(patience), floor_(floor), higher_(higher_is_better) {}

  // Returns true when the metric improved on the best so far.
  bool observe(double metric);

  real lr() const { return lr_; }
  std::optional<double> best() const { return best_; }
  std::size_t since_improvement() const { return since_; }
  void restore(real lr, std::optional<double> best, std::size_t since) {
    lr_ = lr;
    best_ = best;
    since_ = since;
  }

 private:
  real lr_ = 0;
  std::size_t patience_ = 3;
  real floor_ = 0;
  bool higher_ = true;
  std::optional<double> best_;
  std::size_t since_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;      // 1-based
  double train_loss = 0;      // mean per-string loss
  double valid_metric = 0;    // accuracy % or perplexity
  real lr = 0;                // rate used during the epoch
  std::size_t pool = 0;       // strings visited
};

struct TrainReport {
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::optional<double> best_valid;
  std::optional<double> train_accuracy;
  std::optional<double> test_accuracy;
  std::optional<double> test_perplexity;
  std::vector<ProbeResult> long_probes;
  double wall_seconds = 0;
  bool diverged = false;
  std::string error;

  bool ok() const { return !diverged && error.empty(); }
};

void write_report(std::ostream& out, const TrainReport& r);
void write_epoch_trace_csv(std::ostream& out, const TrainReport& r);

// Epochs per curriculum stage: the budget split as evenly as possible over
// four stages, earlier stages taking the remainder (30 -> 8, 8, 7, 7).
std::array<std::size_t, 4> stage_epochs(std::size_t total);
// Indices of the training pool for each stage: stage s holds the shortest
// (s + 1) / 4 of the strings by length rank.
std::array<std::vector<std::size_t>, 4> stage_pools(std::span<const Example> train);

// Training state for one trial. Everything an epoch depends on is either
// here or derived from (seed, epoch), so a run resumed from snapshot()
// continues exactly as the uninterrupted one.
class Trainer {
 public:
  using Validator = std::function<double(const Model&)>;

  Trainer(Model model, std::vector<Example> train, Validator validate, bool higher_is_better, TrainConfig cfg);

  static Trainer for_recognition(Model model, const DatasetSplit& train, const DatasetSplit& valid, Token eos,
                                 const TrainConfig& cfg);
  static Trainer for_language_model(Model model, const Corpus& corpus, const TrainConfig& cfg);

  // Runs one epoch and its validation check. Returns the epoch record.
  // Throws NonFiniteError when the loss or a gradient diverges.
  EpochRecord run_epoch();
  void run(std::size_t epochs);
  bool finished() const { return epoch_ >= cfg_.epochs; }

  std::size_t epoch() const { return epoch_; }
  const Model& model() const { return model_; }
  const Model& best_model() const { return best_; }
  const TrainReport& report() const { return report_; }
  TrainReport& report() { return report_; }
  real lr() const { return sched_.lr(); }
  const TrainConfig& config() const { return cfg_; }

  // Pool for the given 0-based epoch.
  std::span<const std::size_t> pool_for_epoch(std::size_t epoch) const;

  Checkpoint snapshot() const;
  void resume(const Checkpoint& ck);

 private:
  Model model_;
  Model best_;
  std::vector<Example> train_;
  Validator validate_;
  TrainConfig cfg_;
  Adam adam_;
  PatienceScheduler sched_;
  ModelParams grads_;
  Tape tape_;
  std::size_t epoch_ = 0;
  TrainReport report_;
  std::vector<std::size_t> all_;
  std::array<std::vector<std::size_t>, 4> stages_;
  std::array<std::size_t, 4> stage_epochs_{};
};

struct TrialData {
  const DatasetSplit* train = nullptr;
  const DatasetSplit* valid = nullptr;
  const DatasetSplit* test = nullptr;
  const DatasetSplit* long_test = nullptr;  // optional
  std::size_t vocab = 0;
  Token eos = 0;
};

struct TrialOutcome {
  TrainReport report;
  Model best;
  Checkpoint last;  // trainer snapshot after the final epoch, for resuming
};

// Seed of trial i under a base seed.
std::uint64_t trial_seed(std::uint64_t base, std::size_t i);

// Initialises a fresh model from the trial seed, trains it (sequential or
// incremental per cfg.mode) and scores the best-validation model.
TrialOutcome train_one(Family family, const TrialData& data, const TrainConfig& cfg, std::uint64_t seed);
TrialOutcome train_incremental(Family family, const TrialData& data, const TrainConfig& cfg, std::uint64_t seed);

struct Aggregate {
  double mean = 0;
  double best = 0;
  std::size_t completed = 0;
};

// Mean and max; an empty input gives completed == 0.
Aggregate aggregate(std::span<const double> values);

struct TrialsResult {
  std::vector<TrialOutcome> trials;
  Aggregate test;
  std::size_t failures = 0;
};

// Trials run in parallel (OpenMP), each one independent of the others.
TrialsResult run_trials(Family family, const TrialData& data, const TrainConfig& cfg);
// Single-threaded reference.
TrialsResult run_trials_serial(Family family, const TrialData& data, const TrainConfig& cfg);

}  // namespace diffstack

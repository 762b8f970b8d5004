#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "diffstack/cells.hpp"
#include "diffstack/dataset.hpp"

namespace diffstack {

// Per-step outputs of an eval-mode forward pass.
struct SequenceTrace {
  std::vector<Vector> p_next;
  std::vector<real> recognition;
  std::vector<StackTraceRow> stack;
};

SequenceTrace run_sequence(const Model& model, std::span<const Token> inputs, bool keep_stack_trace = false);

// Recognition score after the last input symbol (the step whose next-token
// target is EOS). Throws std::invalid_argument on an empty sequence.
real final_recognition(const Model& model, std::span<const Token> tokens);

enum class DecisionRule {
  FinalStep,  // accept iff the final score > 0.5
  MeanVote,   // accept iff the mean per-step score > 0.5
};

bool classify_string(const Model& model, std::span<const Token> tokens, DecisionRule rule = DecisionRule::FinalStep);

struct BucketStats {
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy() const { return total ? 100.0 * static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
  bool operator==(const BucketStats&) const = default;
};

struct EvalResult {
  std::string split;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::map<std::size_t, BucketStats> buckets;  // key: lower edge of a width-10 length bucket
  std::optional<double> perplexity;

  std::size_t total() const { return tp + fp + tn + fn; }
  std::size_t correct() const { return tp + tn; }
  // Percentage of strings classified correctly.
  double accuracy() const {
    return total() ? 100.0 * static_cast<double>(correct()) / static_cast<double>(total()) : 0.0;
  }
  bool operator==(const EvalResult&) const = default;
};

inline constexpr std::size_t kBucketWidth = 10;

// Decisions are computed in parallel (OpenMP) and folded in sample order, so
// the result is identical for any thread count.
EvalResult evaluate_split(const Model& model, const DatasetSplit& split, DecisionRule rule = DecisionRule::FinalStep);
// Single-threaded reference implementation.
EvalResult evaluate_split_serial(const Model& model, const DatasetSplit& split,
                                 DecisionRule rule = DecisionRule::FinalStep);
// Folds precomputed accept decisions; exposed for predictors other than a model.
EvalResult tally(const DatasetSplit& split, std::span<const char> accepted);

struct ProbeResult {
  std::size_t n = 0;
  LengthWindow bucket;           // closed range [lo, hi] stored as (lo - 1, hi]
  std::size_t count = 0;
  std::optional<double> accuracy;  // nullopt when the bucket is empty
};

// Probe buckets [115,125] for n=120 and [155,160] for n=160.
std::vector<ProbeResult> evaluate_long(const Model& model, const DatasetSplit& long_test,
                                       std::span<const std::size_t> probe_lengths = {});
LengthWindow probe_bucket(std::size_t n);

// Language-model inputs: EOS acts as the start symbol, so a sentence w1..wn
// is fed as (EOS, w1..wn) with targets (w1..wn, EOS).
struct LmSequence {
  TokenSeq inputs;
  TokenSeq targets;
};
LmSequence lm_sequence(std::span<const Token> sentence, Token eos);

// Total next-token cross-entropy (nats) and target count over sentences.
struct CrossEntropy {
  double total = 0;
  std::size_t tokens = 0;
  double perplexity() const;
};
CrossEntropy corpus_cross_entropy(const Model& model, std::span<const TokenSeq> sentences, Token eos);
double perplexity(const Model& model, std::span<const TokenSeq> sentences, Token eos);

// Per-split summary: split,total,correct,accuracy,tp,fp,tn,fn,perplexity
// followed by one bucket_<lo> line per length bucket.
void write_eval_csv(std::ostream& out, std::span<const EvalResult> results);
std::vector<EvalResult> read_eval_csv(std::istream& in);

class IncompatibleModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Throws IncompatibleModelError unless the model's input/output size is vocab.
void check_vocab(const Model& model, std::size_t vocab);

// --- result tables ------------------------------------------------------------

struct ResultRow {
  std::string family;
  std::string grammar;
  std::string regime;
  std::string split;
  double mean = 0;
  double best = 0;
  std::size_t n_trials = 0;
  bool operator==(const ResultRow&) const = default;
};

void write_results_csv(std::ostream& out, std::span<const ResultRow> rows);
std::vector<ResultRow> read_results_csv(std::istream& in);

// Rows = families in declared order; columns = (regime, split) pairs in the
// order given, each with mean and best.
struct AblationTable {
  std::string title;
  std::vector<std::string> families;
  std::vector<std::pair<std::string, std::string>> columns;  // (regime, split)
  std::map<std::pair<std::string, std::pair<std::string, std::string>>, std::pair<double, double>> cells;

  std::string to_markdown() const;
  std::string to_csv() const;
};

AblationTable ablation_table(std::string title, std::span<const ResultRow> rows,
                             std::vector<std::pair<std::string, std::string>> columns = {});

std::string format_percent(double x);

}  // namespace diffstack

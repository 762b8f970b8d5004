#include "diffstack/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include <omp.h>

#include "diffstack/activations.hpp"
#include "diffstack/checkpoint.hpp"

namespace diffstack {

namespace {

// Forward-only passes clear the tape this often, carrying state by value.
constexpr std::size_t kEvalChunk = 64;

template <typename OnStep>
void forward_eval(const Model& model, std::span<const Token> inputs, OnStep&& on_step) {
  thread_local Tape tape;
  CellState state = initial_cell_state(model);
  StackState stack = initial_stack(model);
  for (std::size_t start = 0; start < inputs.size(); start += kEvalChunk) {
    tape.clear();
    ParamRefs p = register_params_frozen(tape, model.params);
    StateRefs s = state_on_tape(tape, state, stack);
    const std::size_t end = std::min(inputs.size(), start + kEvalChunk);
    for (std::size_t t = start; t < end; ++t) {
      StepRefs r = record_step(tape, model, p, inputs[t], s, StepMode::Eval, nullptr);
      on_step(t, tape, r);
      s = r.next;
    }
    state = cell_state_from_tape(tape, s);
    stack = stack_from_tape(tape, s, model.dims().read);
  }
}

}  // namespace

SequenceTrace run_sequence(const Model& model, std::span<const Token> inputs, bool keep_stack_trace) {
  SequenceTrace trace;
  forward_eval(model, inputs, [&](std::size_t t, const Tape& tape, const StepRefs& r) {
    trace.p_next.push_back(softmax(tape.value(r.logits)));
    trace.recognition.push_back(tape.scalar_value(r.recognition));
    if (keep_stack_trace) {
      StackTraceRow row;
      row.t = t + 1;
      row.action = r.action;
      row.push = r.push;
      auto cells = tape.value(r.next.stack);
      row.top.assign(model.dims().read, real(0));
      for (std::size_t i = 0; i < row.top.size() && i < cells.size(); ++i) row.top[i] = cells[i];
      trace.stack.push_back(std::move(row));
    }
  });
  return trace;
}

real final_recognition(const Model& model, std::span<const Token> tokens) {
  if (tokens.empty()) throw std::invalid_argument("final_recognition: empty sequence");
  real last = 0;
  forward_eval(model, tokens, [&](std::size_t, const Tape& tape, const StepRefs& r) {
    last = tape.scalar_value(r.recognition);
  });
  return last;
}

bool classify_string(const Model& model, std::span<const Token> tokens, DecisionRule rule) {
  if (rule == DecisionRule::FinalStep) return final_recognition(model, tokens) > real(0.5);
  if (tokens.empty()) throw std::invalid_argument("classify_string: empty sequence");
  real sum = 0;
  forward_eval(model, tokens, [&](std::size_t, const Tape& tape, const StepRefs& r) {
    sum += tape.scalar_value(r.recognition);
  });
  return sum / static_cast<real>(tokens.size()) > real(0.5);
}

EvalResult tally(const DatasetSplit& split, std::span<const char> accepted) {
  if (accepted.size() != split.samples.size()) throw std::invalid_argument("tally: one decision per sample required");
  EvalResult r;
  r.split = split.name;
  for (std::size_t i = 0; i < accepted.size(); ++i) {
    const Sample& s = split.samples[i];
    const bool acc = accepted[i] != 0;
    const bool pos = s.label == 1;
    if (acc && pos) ++r.tp;
    else if (acc && !pos) ++r.fp;
    else if (!acc && !pos) ++r.tn;
    else ++r.fn;
    auto& b = r.buckets[(s.length() / kBucketWidth) * kBucketWidth];
    ++b.total;
    if (acc == pos) ++b.correct;
  }
  return r;
}

EvalResult evaluate_split_serial(const Model& model, const DatasetSplit& split, DecisionRule rule) {
  std::vector<char> accepted(split.samples.size());
  for (std::size_t i = 0; i < split.samples.size(); ++i) {
    accepted[i] = classify_string(model, split.samples[i].tokens, rule) ? 1 : 0;
  }
  return tally(split, accepted);
}

EvalResult evaluate_split(const Model& model, const DatasetSplit& split, DecisionRule rule) {
  const auto n = static_cast<std::int64_t>(split.samples.size());
  std::vector<char> accepted(split.samples.size());
  bool failed = false;
  std::string message;
#pragma omp parallel for schedule(dynamic, 16)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      accepted[static_cast<std::size_t>(i)] =
          classify_string(model, split.samples[static_cast<std::size_t>(i)].tokens, rule) ? 1 : 0;
    } catch (const std::exception& e) {
#pragma omp critical(diffstack_eval_error)
      {
        failed = true;
        message = e.what();
      }
    }
  }
  if (failed) throw std::runtime_error("evaluate_split: " + message);
  return tally(split, accepted);
}

LengthWindow probe_bucket(std::size_t n) {
  if (n == 160) return {154, 160};
  return {n - 6, n + 5};
}

std::vector<ProbeResult> evaluate_long(const Model& model, const DatasetSplit& long_test,
                                       std::span<const std::size_t> probe_lengths) {
  static constexpr std::size_t kDefaultProbes[] = {120, 160};
  if (probe_lengths.empty()) probe_lengths = kDefaultProbes;
  std::vector<ProbeResult> out;
  for (std::size_t n : probe_lengths) {
    ProbeResult pr;
    pr.n = n;
    pr.bucket = probe_bucket(n);
    DatasetSplit sub;
    sub.name = long_test.name;
    sub.window = long_test.window;
    for (const auto& s : long_test.samples) {
      if (pr.bucket.contains(s.length())) sub.samples.push_back(s);
    }
    pr.count = sub.size();
    if (pr.count) pr.accuracy = evaluate_split(model, sub).accuracy();
    out.push_back(pr);
  }
  return out;
}

LmSequence lm_sequence(std::span<const Token> sentence, Token eos) {
  LmSequence s;
  s.inputs.reserve(sentence.size() + 1);
  s.inputs.push_back(eos);
  s.inputs.insert(s.inputs.end(), sentence.begin(), sentence.end());
  s.targets.assign(sentence.begin(), sentence.end());
  s.targets.push_back(eos);
  return s;
}

double CrossEntropy::perplexity() const {
  if (tokens == 0) throw std::invalid_argument("perplexity: no tokens");
  return std::exp(total / static_cast<double>(tokens));
}

CrossEntropy corpus_cross_entropy(const Model& model, std::span<const TokenSeq> sentences, Token eos) {
  const auto n = static_cast<std::int64_t>(sentences.size());
  std::vector<double> per_sentence(sentences.size(), 0.0);
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t i = 0; i < n; ++i) {
    const LmSequence seq = lm_sequence(sentences[static_cast<std::size_t>(i)], eos);
    double ce = 0;
    forward_eval(model, seq.inputs, [&](std::size_t t, const Tape& tape, const StepRefs& r) {
      auto logits = tape.value(r.logits);
      ce += static_cast<double>(log_sum_exp(logits) - logits[seq.targets[t]]);
    });
    per_sentence[static_cast<std::size_t>(i)] = ce;
  }
  CrossEntropy out;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    out.total += per_sentence[i];
    out.tokens += sentences[i].size() + 1;
  }
  return out;
}

double perplexity(const Model& model, std::span<const TokenSeq> sentences, Token eos) {
  return corpus_cross_entropy(model, sentences, eos).perplexity();
}

void write_eval_csv(std::ostream& out, std::span<const EvalResult> results) {
  out << "split,total,correct,accuracy,tp,fp,tn,fn,perplexity\n";
  for (const auto& r : results) {
    out << r.split << ',' << r.total() << ',' << r.correct() << ',' << format_real(static_cast<real>(r.accuracy())) << ','
        << r.tp << ',' << r.fp << ',' << r.tn << ',' << r.fn << ','
        << (r.perplexity ? format_real(static_cast<real>(*r.perplexity)) : "") << '\n';
    for (const auto& [lo, b] : r.buckets) {
      out << "bucket_" << lo << ',' << b.total << ',' << b.correct << ',' << format_real(static_cast<real>(b.accuracy()))
          << ",,,,,\n";
    }
  }
}

std::vector<EvalResult> read_eval_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "split,total,correct,accuracy,tp,fp,tn,fn,perplexity") {
    throw std::runtime_error("eval CSV: unexpected header");
  }
  std::vector<EvalResult> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    f.resize(9);
    if (f[0].rfind("bucket_", 0) == 0) {
      if (out.empty()) throw std::runtime_error("eval CSV: bucket line before any split");
      out.back().buckets[std::stoul(f[0].substr(7))] = {std::stoul(f[1]), std::stoul(f[2])};
      continue;
    }
    EvalResult r;
    r.split = f[0];
    r.tp = std::stoul(f[4]);
    r.fp = std::stoul(f[5]);
    r.tn = std::stoul(f[6]);
    r.fn = std::stoul(f[7]);
    if (!f[8].empty()) r.perplexity = parse_real(f[8]);
    if (r.total() != std::stoul(f[1]) || r.correct() != std::stoul(f[2])) {
      throw std::runtime_error("eval CSV: counts for '" + r.split + "' are inconsistent");
    }
    out.push_back(std::move(r));
  }
  return out;
}

void check_vocab(const Model& model, std::size_t vocab) {
  if (model.dims().vocab != vocab) {
    throw IncompatibleModelError("model expects " + std::to_string(model.dims().vocab) + " symbols but the data has " +
                                 std::to_string(vocab));
  }
}

// --- result tables -------------------------------------------------------------

std::string format_percent(double x) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << x;
  return s.str();
}

void write_results_csv(std::ostream& out, std::span<const ResultRow> rows) {
  out << "family,grammar,regime,split,mean,best,n_trials\n";
  for (const auto& r : rows) {
    out << r.family << ',' << r.grammar << ',' << r.regime << ',' << r.split << ',' << format_percent(r.mean) << ','
        << format_percent(r.best) << ',' << r.n_trials << '\n';
  }
}

std::vector<ResultRow> read_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "family,grammar,regime,split,mean,best,n_trials") {
    throw std::runtime_error("results CSV: unexpected header");
  }
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw std::runtime_error("results CSV: expected 7 fields in '" + line + "'");
    rows.push_back({f[0], f[1], f[2], f[3], std::stod(f[4]), std::stod(f[5]), std::stoul(f[6])});
  }
  return rows;
}

namespace {

std::size_t family_rank(const std::string& name) {
  for (std::size_t i = 0; i < kAllFamilies.size(); ++i) {
    if (family_name(kAllFamilies[i]) == name) return i;
  }
  return kAllFamilies.size();
}

}  // namespace

AblationTable ablation_table(std::string title, std::span<const ResultRow> rows,
                             std::vector<std::pair<std::string, std::string>> columns) {
  AblationTable t;
  t.title = std::move(title);
  std::set<std::pair<std::string, std::string>> seen_cols;
  std::set<std::string> fams;
  for (const auto& r : rows) {
    fams.insert(r.family);
    seen_cols.insert({r.regime, r.split});
    t.cells[{r.family, {r.regime, r.split}}] = {r.mean, r.best};
  }
  t.families.assign(fams.begin(), fams.end());
  std::stable_sort(t.families.begin(), t.families.end(),
                   [](const std::string& a, const std::string& b) { return family_rank(a) < family_rank(b); });
  t.columns = columns.empty() ? std::vector<std::pair<std::string, std::string>>(seen_cols.begin(), seen_cols.end())
                              : std::move(columns);
  return t;
}

std::string AblationTable::to_markdown() const {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> head{"Model"};
  for (const auto& [regime, split] : columns) {
    const std::string label = regime.empty() ? split : regime + " " + split;
    head.push_back(label + " mean");
    head.push_back(label + " best");
  }
  grid.push_back(head);
  for (const auto& f : families) {
    std::vector<std::string> row{f};
    for (const auto& col : columns) {
      auto it = cells.find({f, col});
      row.push_back(it == cells.end() ? "n/a" : format_percent(it->second.first));
      row.push_back(it == cells.end() ? "n/a" : format_percent(it->second.second));
    }
    grid.push_back(row);
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& r : grid) {
    for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  }
  std::ostringstream out;
  if (!title.empty()) out << "### " << title << "\n\n";
  auto emit = [&](const std::vector<std::string>& r) {
    out << '|';
    for (std::size_t i = 0; i < r.size(); ++i) {
      out << ' ' << r[i] << std::string(width[i] - r[i].size(), ' ') << " |";
    }
    out << '\n';
  };
  emit(grid[0]);
  out << '|';
  for (std::size_t i = 0; i < width.size(); ++i) out << std::string(width[i] + 1, '-') << (i ? ":|" : "-|");
  out << '\n';
  for (std::size_t r = 1; r < grid.size(); ++r) emit(grid[r]);
  return out.str();
}

std::string AblationTable::to_csv() const {
  std::ostringstream out;
  out << "family";
  for (const auto& [regime, split] : columns) {
    const std::string label = regime.empty() ? split : regime + "_" + split;
    out << ',' << label << "_mean," << label << "_best";
  }
  out << '\n';
  for (const auto& f : families) {
    out << f;
    for (const auto& col : columns) {
      auto it = cells.find({f, col});
      if (it == cells.end()) out << ",,";
      else out << ',' << format_percent(it->second.first) << ',' << format_percent(it->second.second);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace diffstack

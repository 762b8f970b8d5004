// diffstack command line: dataset generation, training sweeps, evaluation,
// table reproduction and checkpoint inspection.
//
// Exit codes: 0 ok, 1 usage or input error, 2 internal error.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "diffstack/checkpoint.hpp"
#include "diffstack/dataset.hpp"
#include "diffstack/eval.hpp"
#include "diffstack/experiments.hpp"
#include "diffstack/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace diffstack;

namespace {

constexpr const char* kVersion = "diffstack 0.1.0";
constexpr const char* kOutEnv = "DIFFSTACK_OUT";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

fs::path output_root() {
  const char* env = std::getenv(kOutEnv);
  return (env && *env) ? fs::path(env) : fs::path("runs");
}

std::string trim(std::string s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Flat "key = value" lines, '#' starts a comment.
std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(path.string() + ":" + std::to_string(n) + ": expected key = value");
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

std::string fnv1a_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 14];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream s;
  s << "fnv1a64:" << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

json checksums(const fs::path& dir) {
  json out = json::object();
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out[f.filename().string()] = fnv1a_file(f);
  return out;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << s;
}

GrammarId grammar_or_throw(const std::string& name) {
  auto g = parse_grammar(name);
  if (!g) throw UsageError("unknown grammar '" + name + "' (expected d2, d3, d6 or palindrome)");
  return *g;
}

Family family_or_throw(const std::string& name) {
  auto f = parse_family(name);
  if (!f) {
    std::string all;
    for (Family x : kAllFamilies) all += (all.empty() ? "" : ", ") + std::string(family_name(x));
    throw UsageError("unknown family '" + name + "' (expected one of " + all + ")");
  }
  return *f;
}

// Options shared by train and repro: a config file, repeated --set key=value
// and the named switches. Later sources win: defaults < file < --set < flags.
struct ConfigFlags {
  std::string config_file;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  std::size_t trials = 0, epochs = 0, hidden = 0;
  double lr = 0;
  std::string noise, carry_forward, mode, decision;

  CLI::Option* seed_opt = nullptr;
  CLI::Option* trials_opt = nullptr;
  CLI::Option* epochs_opt = nullptr;
  CLI::Option* hidden_opt = nullptr;
  CLI::Option* lr_opt = nullptr;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override one setting, key=value (repeatable)");
    seed_opt = app->add_option("--seed", seed, "base seed");
    trials_opt = app->add_option("--trials", trials, "independent trials");
    epochs_opt = app->add_option("--epochs", epochs, "training epochs");
    hidden_opt = app->add_option("--hidden", hidden, "hidden units");
    lr_opt = app->add_option("--lr", lr, "initial learning rate");
    app->add_option("--noise", noise, "state noise during training")->check(CLI::IsMember({"on", "off"}));
    app->add_option("--carry-forward", carry_forward, "carry-forward state gate")->check(CLI::IsMember({"on", "off"}));
    app->add_option("--mode", mode, "training regime")->check(CLI::IsMember({"sequential", "incremental"}));
    app->add_option("--decision", decision, "accept rule")->check(CLI::IsMember({"final", "mean"}));
  }

  // Applies everything to cfg; keys the config file holds that are not
  // training settings are returned for the command to interpret.
  std::map<std::string, std::string> apply(TrainConfig& cfg) const {
    std::map<std::string, std::string> extra;
    auto set = [&](const std::string& k, const std::string& v) {
      if (is_config_key(k)) apply_setting(cfg, k, v);
      else extra[k] = v;
    };
    if (!config_file.empty()) {
      for (const auto& [k, v] : read_config_file(config_file)) set(k, v);
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
      set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    if (*seed_opt) cfg.seed = seed;
    if (*trials_opt) cfg.trials = trials;
    if (*epochs_opt) cfg.epochs = epochs;
    if (*hidden_opt) cfg.hidden = hidden;
    if (*lr_opt) cfg.lr = static_cast<real>(lr);
    if (!noise.empty()) apply_setting(cfg, "noise", noise);
    if (!carry_forward.empty()) apply_setting(cfg, "carry_forward", carry_forward);
    if (!mode.empty()) apply_setting(cfg, "mode", mode);
    if (!decision.empty()) apply_setting(cfg, "decision", decision);
    return extra;
  }
};

json config_json(const TrainConfig& cfg) {
  json j = json::object();
  for (const auto& [k, v] : config_entries(cfg)) j[k] = v;
  return j;
}

std::string config_text(const TrainConfig& cfg) {
  std::string s;
  for (const auto& [k, v] : config_entries(cfg)) s += k + " = " + v + "\n";
  return s;
}

json base_manifest(const std::string& command, const std::vector<std::string>& argv) {
  json m;
  m["tool"] = kVersion;
  m["command"] = command;
  m["argv"] = argv;
  m["started_at"] = utc_now();
  return m;
}

// --- gen ----------------------------------------------------------------------------

struct GenArgs {
  std::string grammar;
  std::uint64_t seed = 7;
  std::string out;
  double scale = 1.0;
  std::string negatives = "hard";
  std::string corpus;
  std::size_t vocab_cap = 10000;
};

int cmd_gen(const GenArgs& a, const std::vector<std::string>& argv) {
  if (a.corpus.empty() && a.grammar.empty()) throw UsageError("gen needs --grammar or --corpus");
  json manifest = base_manifest("gen", argv);
  if (!a.corpus.empty()) {
    const Corpus c = load_corpus(a.corpus, a.vocab_cap);
    const fs::path out = a.out.empty() ? output_root() / "data" / "corpus" : fs::path(a.out);
    fs::create_directories(out);
    std::ofstream vocab(out / "vocab.txt", std::ios::binary);
    for (Token t = 0; t < c.vocab.size(); ++t) vocab << c.vocab.symbol(t) << '\n';
    vocab.close();
    manifest["corpus"] = a.corpus;
    manifest["vocab_cap"] = a.vocab_cap;
    manifest["vocab_size"] = c.vocab.size();
    manifest["sentences"] = {{"train", c.train.size()}, {"valid", c.valid.size()}, {"test", c.test.size()}};
    manifest["checksums"] = checksums(out);
    write_json(out / "manifest.json", manifest);
    std::cout << "wrote vocabulary of " << c.vocab.size() << " words to " << out.string() << '\n';
    return 0;
  }
  const GrammarId g = grammar_or_throw(a.grammar);
  BenchmarkSpec spec = BenchmarkSpec::standard(g, a.seed);
  if (a.scale != 1.0) spec = spec.scaled(a.scale);
  spec.hard_negatives = a.negatives == "hard";
  spec.validate();
  const fs::path out = a.out.empty()
                           ? output_root() / "data" / (a.grammar + "-seed" + std::to_string(a.seed))
                           : fs::path(a.out);
  const Benchmark b = build_benchmark(spec);
  verify_benchmark(b);
  write_benchmark(out, b);
  manifest["grammar"] = a.grammar;
  manifest["seed"] = a.seed;
  manifest["scale"] = a.scale;
  manifest["negatives"] = a.negatives;
  manifest["checksums"] = checksums(out);
  write_json(out / "manifest.json", manifest);
  for (const auto& s : b.splits) {
    std::cout << s.name << ": " << s.size() << " strings, " << s.positives() << " positive\n";
  }
  std::cout << "wrote " << out.string() << '\n';
  return 0;
}

// --- data selection shared by train and eval ------------------------------------

struct DataArgs {
  std::string grammar;
  std::string data_dir;
  std::string corpus;
  std::uint64_t data_seed = 7;
  double scale = 1.0;
  std::size_t vocab_cap = 10000;
  CLI::Option* data_seed_opt = nullptr;

  void attach(CLI::App* app) {
    app->add_option("--grammar", grammar, "generate data for d2|d3|d6|palindrome");
    app->add_option("--data", data_dir, "directory written by 'gen'")->check(CLI::ExistingDirectory);
    app->add_option("--corpus", corpus, "language-model corpus directory")->check(CLI::ExistingDirectory);
    data_seed_opt = app->add_option("--data-seed", data_seed, "dataset seed (default 7)");
    app->add_option("--scale", scale, "split size multiplier")->check(CLI::PositiveNumber);
    app->add_option("--vocab-cap", vocab_cap, "corpus vocabulary size");
  }

  void check() const {
    const int n = !grammar.empty() + !data_dir.empty() + !corpus.empty();
    if (n != 1) throw UsageError("give exactly one of --grammar, --data, --corpus");
  }
};

Benchmark load_benchmark(const DataArgs& d, bool hard, double lo, double hi) {
  if (!d.data_dir.empty()) return read_benchmark(d.data_dir);
  BenchmarkSpec spec = BenchmarkSpec::standard(grammar_or_throw(d.grammar), d.data_seed);
  if (d.scale != 1.0) spec = spec.scaled(d.scale);
  spec.hard_negatives = hard;
  spec.hard_fraction_lo = lo;
  spec.hard_fraction_hi = hi;
  spec.validate();
  return build_benchmark(spec);
}

// --- train -------------------------------------------------------------------------

struct TrainArgs {
  std::string family;
  std::string run;
  std::string out;
  std::string negatives;
  std::string resume;
  bool long_eval = false;
  DataArgs data;
  ConfigFlags flags;
};

void save_trial(const fs::path& dir, const TrialOutcome& t, const std::map<std::string, std::string>& info) {
  fs::create_directories(dir);
  Checkpoint best;
  best.model = t.best;
  best.seed = t.report.seed;
  best.steps = t.last.steps;
  best.info = info;
  best.info["best_epoch"] = std::to_string(t.report.best_epoch);
  save_checkpoint(dir / "best.ckpt", best);
  Checkpoint last = t.last;
  for (const auto& [k, v] : info) last.info[k] = v;
  save_checkpoint(dir / "last.ckpt", last);
  std::ofstream rep(dir / "report.txt", std::ios::binary);
  write_report(rep, t.report);
  std::ofstream trace(dir / "trace.csv", std::ios::binary);
  write_epoch_trace_csv(trace, t.report);
}

int train_language_model(TrainArgs& a, TrainConfig cfg, bool epochs_given, bool hidden_given,
                         const std::vector<std::string>& argv) {
  const Family family = family_or_throw(a.family);
  cfg.objective = Objective::LanguageModel;
  if (!epochs_given) cfg.epochs = 50;
  if (!hidden_given) cfg.hidden = 100;
  cfg.validate();
  const Corpus corpus = load_corpus(a.data.corpus, a.data.vocab_cap);
  const fs::path dir = a.out.empty() ? output_root() / (a.run.empty() ? "lm-" + a.family + "-seed" + std::to_string(cfg.seed) : a.run)
                                     : fs::path(a.out);
  fs::create_directories(dir);
  json manifest = base_manifest("train", argv);
  manifest["family"] = a.family;
  manifest["corpus"] = a.data.corpus;
  manifest["vocab_size"] = corpus.vocab.size();
  manifest["config"] = config_json(cfg);
  manifest["output"] = dir.string();
  write_text(dir / "config.txt", config_text(cfg));
  write_json(dir / "manifest.json", manifest);

  const Token eos = corpus.vocab.eos();
  std::vector<ResultRow> rows;
  std::vector<double> ppl;
  for (std::size_t i = 0; i < cfg.trials; ++i) {
    TrainConfig c = cfg;
    c.seed = trial_seed(cfg.seed, i);
    Rng init(Rng::derive_seed(c.seed, "init", 0));
    Model model{ModelParams::init(family, Dims{corpus.vocab.size(), c.hidden, 3}, init), c.cell};
    Trainer trainer = Trainer::for_language_model(std::move(model), corpus, c);
    TrialOutcome t;
    const auto start = std::chrono::steady_clock::now();
    try {
      for (std::size_t e = 0; e < c.epochs; ++e) {
        const EpochRecord r = trainer.run_epoch();
        std::cout << "trial " << i << " epoch " << r.epoch << " loss " << r.train_loss << " valid ppl "
                  << r.valid_metric << " lr " << r.lr << '\n';
      }
    } catch (const NonFiniteError& e) {
      trainer.report().diverged = true;
      trainer.report().error = e.what();
    }
    t.report = trainer.report();
    t.best = trainer.best_model();
    t.last = trainer.snapshot();
    if (t.report.ok()) {
      t.report.test_perplexity = perplexity(t.best, corpus.test, eos);
      ppl.push_back(*t.report.test_perplexity);
    }
    t.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    save_trial(dir / ("trial-" + std::to_string(i)), t, {{"objective", "lm"}, {"corpus", a.data.corpus}});
    std::cout << "trial " << i << ": " << (t.report.ok() ? "test perplexity " + std::to_string(*t.report.test_perplexity)
                                                         : "failed: " + t.report.error)
              << '\n';
  }
  if (ppl.empty()) {
    std::cerr << "error: every trial failed\n";
    return 2;
  }
  const double best = *std::min_element(ppl.begin(), ppl.end());
  double mean = 0;
  for (double p : ppl) mean += p;
  mean /= static_cast<double>(ppl.size());
  rows.push_back({a.family, "corpus", "", "test_ppl", mean, best, ppl.size()});
  std::ofstream csv(dir / "results.csv", std::ios::binary);
  write_results_csv(csv, rows);
  std::cout << "test perplexity mean " << mean << " best " << best << " (" << ppl.size() << "/" << cfg.trials
            << " trials)\n";
  return 0;
}

int cmd_train(TrainArgs& a, const std::vector<std::string>& argv) {
  a.data.check();
  TrainConfig cfg;
  auto extra = a.flags.apply(cfg);
  if (a.family.empty() && extra.count("family")) a.family = extra["family"];
  if (a.family.empty()) throw UsageError("train needs --family");
  for (const auto& [k, v] : extra) {
    if (k != "family") throw UsageError("unknown setting '" + k + "'");
  }
  const Family family = family_or_throw(a.family);
  if (!a.data.corpus.empty()) {
    return train_language_model(a, cfg, static_cast<bool>(*a.flags.epochs_opt), static_cast<bool>(*a.flags.hidden_opt),
                                argv);
  }
  cfg.validate();
  if (!a.negatives.empty() && !a.data.data_dir.empty()) {
    throw UsageError("--negatives applies to generated data, not --data");
  }
  // The StackRNN baseline is trained without hard negatives unless asked.
  const std::string negatives = a.negatives.empty() ? (family == Family::StackRNN ? "easy" : "hard") : a.negatives;

  const Benchmark eval_data = load_benchmark(a.data, true, cfg.hard_fraction_lo, cfg.hard_fraction_hi);
  std::optional<Benchmark> easy;
  if (negatives == "easy" && a.data.data_dir.empty()) {
    easy = load_benchmark(a.data, false, cfg.hard_fraction_lo, cfg.hard_fraction_hi);
  }
  const Benchmark& train_data = easy ? *easy : eval_data;
  const std::string gname(grammar_name(eval_data.grammar));

  const fs::path dir = a.out.empty() ? output_root() / (a.run.empty() ? gname + "-" + a.family + "-seed" +
                                                                              std::to_string(cfg.seed)
                                                                        : a.run)
                                     : fs::path(a.out);
  fs::create_directories(dir / "data");
  write_benchmark(dir / "data", eval_data);
  if (easy) {
    fs::create_directories(dir / "data-easy");
    write_benchmark(dir / "data-easy", *easy);
  }

  TrialData td;
  td.train = &train_data.split("train");
  td.valid = &train_data.split("valid");
  td.test = &eval_data.split("test");
  td.long_test = a.long_eval && eval_data.has_split("long_test") ? &eval_data.split("long_test") : nullptr;
  td.vocab = eval_data.alphabet.size();
  td.eos = eval_data.alphabet.eos();

  json manifest = base_manifest("train", argv);
  manifest["family"] = a.family;
  manifest["grammar"] = gname;
  manifest["data_seed"] = eval_data.seed;
  manifest["negatives"] = negatives;
  manifest["config"] = config_json(cfg);
  json seeds = json::array();
  for (std::size_t i = 0; i < cfg.trials; ++i) seeds.push_back(trial_seed(cfg.seed, i));
  manifest["trial_seeds"] = seeds;
  manifest["data_checksums"] = checksums(dir / "data");
  if (easy) manifest["data_easy_checksums"] = checksums(dir / "data-easy");
  manifest["output"] = dir.string();
  write_text(dir / "config.txt", config_text(cfg));
  write_json(dir / "manifest.json", manifest);

  const std::map<std::string, std::string> info{{"grammar", gname}, {"negatives", negatives}};

  if (!a.resume.empty()) {
    Checkpoint ck = load_checkpoint(a.resume);
    check_vocab(ck.model, td.vocab);
    if (ck.model.family() != family) throw IncompatibleModelError("checkpoint family differs from --family");
    TrainConfig rc = cfg;
    for (const auto& [k, v] : ck.info) {
      if (k.rfind("cfg.", 0) == 0 && k != "cfg.epochs" && k != "cfg.trials") apply_setting(rc, k.substr(4), v);
    }
    rc.seed = ck.seed;
    Trainer trainer = Trainer::for_recognition(ck.model, *td.train, *td.valid, td.eos, rc);
    trainer.resume(ck);
    std::cout << "resuming at epoch " << trainer.epoch() << " of " << rc.epochs << '\n';
    TrialOutcome t;
    try {
      while (!trainer.finished()) {
        const EpochRecord r = trainer.run_epoch();
        std::cout << "epoch " << r.epoch << " loss " << r.train_loss << " valid " << r.valid_metric << " lr " << r.lr
                  << '\n';
      }
    } catch (const NonFiniteError& e) {
      trainer.report().diverged = true;
      trainer.report().error = e.what();
    }
    t.report = trainer.report();
    t.best = trainer.best_model();
    t.last = trainer.snapshot();
    if (t.report.ok()) {
      t.report.test_accuracy = evaluate_split(t.best, *td.test, rc.rule).accuracy();
      if (td.long_test) t.report.long_probes = evaluate_long(t.best, *td.long_test);
      std::cout << "test accuracy " << format_percent(*t.report.test_accuracy) << '\n';
    }
    save_trial(dir / "resumed", t, info);
    return t.report.ok() ? 0 : 2;
  }

  std::cout << "training " << a.family << " on " << gname << ": " << cfg.trials << " trials x " << cfg.epochs
            << " epochs\n";
  const TrialsResult res = run_trials(family, td, cfg);
  std::vector<double> train_acc;
  for (std::size_t i = 0; i < res.trials.size(); ++i) {
    const auto& t = res.trials[i];
    save_trial(dir / ("trial-" + std::to_string(i)), t, info);
    if (t.report.ok()) {
      train_acc.push_back(*t.report.train_accuracy);
      std::cout << "trial " << i << ": train " << format_percent(*t.report.train_accuracy) << " test "
                << format_percent(*t.report.test_accuracy) << " (best epoch " << t.report.best_epoch << ")";
      for (const auto& p : t.report.long_probes) {
        std::cout << " n=" << p.n << ' ' << (p.accuracy ? format_percent(*p.accuracy) : "n/a");
      }
      std::cout << '\n';
    } else {
      std::cout << "trial " << i << ": failed: " << t.report.error << '\n';
    }
  }
  if (res.failures) std::cerr << "warning: " << res.failures << " of " << cfg.trials << " trials failed\n";
  if (res.test.completed == 0) {
    std::cerr << "error: every trial failed\n";
    return 2;
  }
  const Aggregate tr = aggregate(train_acc);
  std::vector<ResultRow> rows{{a.family, gname, std::string(mode_name(cfg.mode)), "train", tr.mean, tr.best, tr.completed},
                              {a.family, gname, std::string(mode_name(cfg.mode)), "test", res.test.mean, res.test.best,
                               res.test.completed}};
  std::ofstream csv(dir / "results.csv", std::ios::binary);
  write_results_csv(csv, rows);
  std::cout << "test accuracy mean " << format_percent(res.test.mean) << " best " << format_percent(res.test.best)
            << '\n';
  std::cout << "wrote " << dir.string() << '\n';
  return 0;
}

// --- eval ----------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::vector<std::string> splits{"test"};
  bool long_eval = false;
  std::string decision = "final";
  std::string out;
  long trace = -1;
  DataArgs data;
};

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& argv) {
  a.data.check();
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const fs::path dir = a.out.empty() ? fs::path(a.checkpoint).parent_path() / "eval" : fs::path(a.out);
  fs::create_directories(dir);
  std::vector<EvalResult> results;

  if (!a.data.corpus.empty()) {
    const Corpus corpus = load_corpus(a.data.corpus, a.data.vocab_cap);
    check_vocab(ck.model, corpus.vocab.size());
    for (const auto& name : a.splits) {
      const std::vector<TokenSeq>* s = name == "train" ? &corpus.train
                                       : name == "valid" ? &corpus.valid
                                       : name == "test"  ? &corpus.test
                                                         : nullptr;
      if (!s) throw UsageError("unknown corpus split '" + name + "'");
      EvalResult r;
      r.split = name;
      r.perplexity = perplexity(ck.model, *s, corpus.vocab.eos());
      std::cout << name << " perplexity " << *r.perplexity << '\n';
      results.push_back(r);
    }
  } else {
    const Benchmark b = load_benchmark(a.data, true, 0.15, 0.30);
    check_vocab(ck.model, b.alphabet.size());
    const DecisionRule rule = a.decision == "mean" ? DecisionRule::MeanVote : DecisionRule::FinalStep;
    for (const auto& name : a.splits) {
      if (!b.has_split(name)) throw UsageError("dataset has no split '" + name + "'");
      const DatasetSplit& split = b.split(name);
      EvalResult r = evaluate_split(ck.model, split, rule);
      std::cout << name << ": " << format_percent(r.accuracy()) << "% (" << r.correct() << "/" << r.total() << ")\n";
      results.push_back(std::move(r));
      if (a.trace >= 0) {
        if (static_cast<std::size_t>(a.trace) >= split.size()) throw UsageError("--trace index out of range");
        const SequenceTrace tr = run_sequence(ck.model, split.samples[static_cast<std::size_t>(a.trace)].tokens, true);
        std::ofstream csv(dir / ("stack_trace_" + name + "_" + std::to_string(a.trace) + ".csv"), std::ios::binary);
        write_stack_trace_csv(csv, tr.stack);
      }
    }
    if (a.long_eval) {
      if (!b.has_split("long_test")) throw UsageError("dataset has no long_test split");
      std::ofstream csv(dir / "long.csv", std::ios::binary);
      csv << "n,lo,hi,count,accuracy\n";
      for (const auto& p : evaluate_long(ck.model, b.split("long_test"))) {
        const std::string acc = p.accuracy ? format_percent(*p.accuracy) : "n/a";
        csv << p.n << ',' << p.bucket.min_exclusive + 1 << ',' << p.bucket.max_inclusive << ',' << p.count << ',' << acc
            << '\n';
        std::cout << "n=" << p.n << ": " << acc << " (" << p.count << " strings)\n";
      }
    }
  }

  std::ofstream csv(dir / "eval.csv", std::ios::binary);
  write_eval_csv(csv, results);
  std::ostringstream md;
  md << "| split | accuracy | correct | total | perplexity |\n|---|--:|--:|--:|--:|\n";
  for (const auto& r : results) {
    md << "| " << r.split << " | " << (r.total() ? format_percent(r.accuracy()) : "n/a") << " | " << r.correct()
       << " | " << r.total() << " | " << (r.perplexity ? std::to_string(*r.perplexity) : "n/a") << " |\n";
  }
  write_text(dir / "eval.md", md.str());
  json manifest = base_manifest("eval", argv);
  manifest["checkpoint"] = a.checkpoint;
  manifest["checkpoint_checksum"] = fnv1a_file(a.checkpoint);
  manifest["output"] = dir.string();
  write_json(dir / "manifest.json", manifest);
  return 0;
}

// --- repro ---------------------------------------------------------------------------

struct ReproArgs {
  std::string table;
  std::string out;
  double scale = 1.0;
  std::vector<std::string> families;
  ConfigFlags flags;
};

int cmd_repro(ReproArgs& a, const std::vector<std::string>& argv) {
  if (!is_repro_table(a.table)) {
    std::string ids;
    for (const auto& id : repro_table_ids()) ids += (ids.empty() ? "" : ", ") + id;
    throw UsageError("unknown table '" + a.table + "' (expected one of " + ids + ")");
  }
  TrainConfig cfg;
  cfg.seed = 7;
  const auto extra = a.flags.apply(cfg);
  if (!extra.empty()) throw UsageError("unknown setting '" + extra.begin()->first + "'");
  cfg.validate();
  ReproOptions opt;
  opt.seed = cfg.seed;
  opt.trials = cfg.trials;
  opt.epochs = cfg.epochs;
  opt.data_scale = a.scale;
  opt.base = cfg;
  for (const auto& f : a.families) opt.families.push_back(family_or_throw(f));
  opt.out_dir = a.out.empty() ? output_root() / "repro" / (a.table + "-seed" + std::to_string(cfg.seed)) : fs::path(a.out);
  fs::create_directories(opt.out_dir);

  json manifest = base_manifest("repro", argv);
  manifest["table"] = a.table;
  manifest["scale"] = a.scale;
  manifest["families"] = a.families;
  manifest["config"] = config_json(cfg);
  manifest["output"] = opt.out_dir.string();
  write_text(opt.out_dir / "config.txt", config_text(cfg));
  write_json(opt.out_dir / "manifest.json", manifest);

  const ReproResult r = run_repro(a.table, opt, &std::cout);
  for (const auto& t : r.tables) std::cout << '\n' << t.to_markdown();
  bool any_failed = false;
  for (const auto& c : r.cells) {
    if (c.failures) {
      any_failed = true;
      std::cerr << "warning: " << c.grammar << ' ' << c.family << ' ' << c.regime << ": " << c.failures
                << " trial(s) failed\n";
    }
  }
  if (r.rows.empty()) {
    std::cerr << "error: no cell produced a result\n";
    return 2;
  }
  std::cout << "\nwrote " << opt.out_dir.string() << (any_failed ? " (with failures, see status.txt)" : "") << '\n';
  return 0;
}

// --- inspect ---------------------------------------------------------------------------

int cmd_inspect(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  const Model& m = ck.model;
  std::cout << "family     " << family_name(m.family()) << '\n';
  std::cout << "vocab      " << m.dims().vocab << '\n';
  std::cout << "hidden     " << m.dims().hidden << '\n';
  std::cout << "read width " << m.dims().read << '\n';
  std::cout << "seed       " << ck.seed << '\n';
  std::cout << "steps      " << ck.steps << '\n';
  std::cout << "parameters " << m.params.parameter_count() << '\n';
  std::cout << "noise      " << (m.options.noise.enabled ? "on" : "off") << " (mu " << m.options.noise.mu << ", sigma2 "
            << m.options.noise.sigma2 << ")\n";
  std::cout << "carry-fwd  " << (m.options.carry_forward ? "on" : "off") << '\n';
  for (const auto& [k, v] : ck.info) {
    if (k == "trace") continue;
    std::cout << k << " = " << v << '\n';
  }
  std::cout << "\ntensor      shape        max|w|       rms\n";
  for (const auto& t : m.params.tensors()) {
    double mx = 0, ss = 0;
    for (real x : t.value.data) {
      mx = std::max(mx, std::abs(static_cast<double>(x)));
      ss += static_cast<double>(x) * static_cast<double>(x);
    }
    const double rms = t.value.size() ? std::sqrt(ss / static_cast<double>(t.value.size())) : 0.0;
    std::ostringstream shape;
    shape << t.value.rows << "x" << t.value.cols;
    std::cout << std::left << std::setw(12) << t.name << std::setw(13) << shape.str() << std::setw(13) << mx << rms
              << '\n';
  }
  if (!ck.state.empty()) std::cout << "\n" << ck.state.size() << " training-state blocks\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Differentiable-stack recurrent recognizers for Dyck and palindrome languages"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.footer(std::string("Outputs go under $") + kOutEnv + " (default ./runs) unless --out is given.");

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a benchmark or index a corpus");
  g->add_option("--grammar", gen.grammar, "d2|d3|d6|palindrome");
  g->add_option("--seed", gen.seed, "dataset seed");
  g->add_option("--out", gen.out, "output directory");
  g->add_option("--scale", gen.scale, "split size multiplier")->check(CLI::PositiveNumber);
  g->add_option("--negatives", gen.negatives, "negative sampling")->check(CLI::IsMember({"easy", "hard"}));
  g->add_option("--corpus", gen.corpus, "corpus directory instead of a grammar")->check(CLI::ExistingDirectory);
  g->add_option("--vocab-cap", gen.vocab_cap, "corpus vocabulary size");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train one family over several trials");
  t->add_option("--family", train.family, "model family");
  t->add_option("--run", train.run, "run name under the output root");
  t->add_option("--out", train.out, "run directory (overrides --run)");
  t->add_option("--negatives", train.negatives, "negative sampling")->check(CLI::IsMember({"easy", "hard"}));
  t->add_option("--resume", train.resume, "continue from a last.ckpt")->check(CLI::ExistingFile);
  t->add_flag("--long", train.long_eval, "also score n=120 and n=160 on the long split");
  train.data.attach(t);
  train.flags.attach(t);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  e->add_option("--split", ev.splits, "splits to score (repeatable)");
  e->add_flag("--long", ev.long_eval, "add n=120 and n=160 columns");
  e->add_option("--decision", ev.decision, "accept rule")->check(CLI::IsMember({"final", "mean"}));
  e->add_option("--out", ev.out, "output directory");
  e->add_option("--trace", ev.trace, "write the stack trace of sample N of each split");
  ev.data.attach(e);

  ReproArgs repro;
  auto* r = app.add_subcommand("repro", "run the sweep behind one results table");
  r->add_option("table", repro.table, "table1 .. table7")->required();
  r->add_option("--out", repro.out, "output directory");
  r->add_option("--scale", repro.scale, "split size multiplier")->check(CLI::PositiveNumber);
  r->add_option("--families", repro.families, "restrict the row set")->delimiter(',');
  repro.flags.attach(r);

  std::string inspect_path;
  auto* i = app.add_subcommand("inspect", "summarise a checkpoint");
  i->add_option("checkpoint", inspect_path, "checkpoint file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*g) return cmd_gen(gen, args);
    if (*t) return cmd_train(train, args);
    if (*e) return cmd_eval(ev, args);
    if (*r) return cmd_repro(repro, args);
    if (*i) return cmd_inspect(inspect_path);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  } catch (const DatasetFormatError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  } catch (const CheckpointError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  } catch (const IncompatibleModelError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  } catch (const std::exception& err) {
    std::cerr << "internal error: " << err.what() << '\n';
    return 2;
  }
  return 1;
}

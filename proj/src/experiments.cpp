#include "diffstack/experiments.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <stdexcept>

namespace diffstack {

namespace fs = std::filesystem;

std::size_t ReproResult::failures() const {
  std::size_t n = 0;
  for (const auto& c : cells) n += c.failures;
  return n;
}

const std::vector<std::string>& repro_table_ids() {
  static const std::vector<std::string> ids{"table1", "table2", "table3", "table4", "table5", "table6", "table7"};
  return ids;
}

bool is_repro_table(std::string_view id) {
  const auto& ids = repro_table_ids();
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

std::vector<Family> default_families(std::string_view table) {
  if (table == "table1" || table == "table2" || table == "table3") {
    return {Family::RNN, Family::LSTM, Family::StackRNN, Family::DiffStkRNN, Family::DiffStkMRNN, Family::DiffStkMIRNN};
  }
  return {kAllFamilies.begin(), kAllFamilies.end()};
}

namespace {

struct Regime {
  std::string name;
  std::function<void(TrainConfig&)> apply;
};

struct Plan {
  std::vector<GrammarId> grammars;
  std::vector<Regime> regimes;
  bool long_probes = false;
};

Plan plan_for(std::string_view table) {
  auto keep = [](TrainConfig&) {};
  if (table == "table1") {
    return {{GrammarId::D2},
            {{"noise", [](TrainConfig& c) { c.cell.noise.enabled = true; }},
             {"no-noise", [](TrainConfig& c) { c.cell.noise.enabled = false; }}},
            false};
  }
  if (table == "table2") {
    return {{GrammarId::D2},
            {{"changes",
              [](TrainConfig& c) {
                c.cell.noise.enabled = true;
                c.cell.carry_forward = true;
              }},
             {"no-changes",
              [](TrainConfig& c) {
                c.cell.noise.enabled = false;
                c.cell.carry_forward = false;
              }}},
            false};
  }
  if (table == "table3") {
    return {{GrammarId::D2},
            {{"sequential", [](TrainConfig& c) { c.mode = TrainMode::Sequential; }},
             {"incremental", [](TrainConfig& c) { c.mode = TrainMode::Incremental; }}},
            false};
  }
  if (table == "table4") return {{GrammarId::D2}, {{"", keep}}, false};
  if (table == "table5") return {{GrammarId::D3, GrammarId::D6, GrammarId::Palindrome}, {{"", keep}}, false};
  if (table == "table6") return {{GrammarId::D2, GrammarId::D3}, {{"", keep}}, true};
  if (table == "table7") return {{GrammarId::D6, GrammarId::Palindrome}, {{"", keep}}, true};
  throw std::invalid_argument("unknown table '" + std::string(table) + "'");
}

struct GrammarData {
  Benchmark hard;
  std::optional<Benchmark> easy;  // StackRNN trains without hard negatives
};

std::string file_stem(const std::string& grammar, const std::string& family, const std::string& regime, std::size_t i) {
  return grammar + "-" + family + "-" + (regime.empty() ? "default" : regime) + "-" + std::to_string(i);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

}  // namespace

ReproResult run_repro(std::string_view table, const ReproOptions& options, std::ostream* log) {
  const Plan plan = plan_for(table);
  const std::vector<Family> families = options.families.empty() ? default_families(table) : options.families;
  const bool need_easy = std::find(families.begin(), families.end(), Family::StackRNN) != families.end();

  ReproResult result;
  result.table = std::string(table);
  if (!options.out_dir.empty()) fs::create_directories(options.out_dir / "trials");

  std::map<GrammarId, GrammarData> data;
  for (GrammarId g : plan.grammars) {
    BenchmarkSpec spec = BenchmarkSpec::standard(g, options.seed);
    if (options.data_scale != 1.0) spec = spec.scaled(options.data_scale);
    spec.hard_fraction_lo = options.base.hard_fraction_lo;
    spec.hard_fraction_hi = options.base.hard_fraction_hi;
    if (log) *log << "[" << table << "] building " << grammar_name(g) << " data\n";
    GrammarData gd{build_benchmark(spec), std::nullopt};
    if (need_easy) {
      spec.hard_negatives = false;
      gd.easy = build_benchmark(spec);
    }
    data.emplace(g, std::move(gd));
  }

  for (GrammarId g : plan.grammars) {
    const GrammarData& gd = data.at(g);
    const std::string gname(grammar_name(g));
    for (Family f : families) {
      const std::string fname(family_name(f));
      for (const Regime& regime : plan.regimes) {
        TrainConfig cfg = options.base;
        cfg.seed = options.seed;
        cfg.trials = options.trials;
        cfg.epochs = options.epochs;
        regime.apply(cfg);

        const Benchmark& train_src = (f == Family::StackRNN && gd.easy) ? *gd.easy : gd.hard;
        TrialData td;
        td.train = &train_src.split("train");
        td.valid = &train_src.split("valid");
        td.test = &gd.hard.split("test");
        td.long_test = plan.long_probes && gd.hard.has_split("long_test") ? &gd.hard.split("long_test") : nullptr;
        td.vocab = gd.hard.alphabet.size();
        td.eos = gd.hard.alphabet.eos();

        if (log) {
          *log << "[" << table << "] " << gname << " " << fname << (regime.name.empty() ? "" : " " + regime.name)
               << ": " << cfg.trials << " trials x " << cfg.epochs << " epochs\n";
        }
        TrialsResult tr = run_trials(f, td, cfg);

        CellStatus status{fname, gname, regime.name, tr.test.completed, tr.failures, {}};
        for (const auto& t : tr.trials) {
          if (!t.report.ok()) status.errors.push_back(t.report.error);
        }
        result.cells.push_back(status);

        if (!options.out_dir.empty()) {
          for (std::size_t i = 0; i < tr.trials.size(); ++i) {
            const fs::path stem = options.out_dir / "trials" / file_stem(gname, fname, regime.name, i);
            std::ofstream rep(stem.string() + ".report", std::ios::binary);
            write_report(rep, tr.trials[i].report);
            std::ofstream csv(stem.string() + ".trace.csv", std::ios::binary);
            write_epoch_trace_csv(csv, tr.trials[i].report);
          }
        }

        auto add_row = [&](const std::string& split, std::vector<double> values) {
          if (values.empty()) return;
          const Aggregate a = aggregate(values);
          result.rows.push_back({fname, gname, regime.name, split, a.mean, a.best, a.completed});
        };
        if (plan.long_probes) {
          std::map<std::size_t, std::vector<double>> probes;
          for (const auto& t : tr.trials) {
            if (!t.report.ok()) continue;
            for (const auto& p : t.report.long_probes) {
              if (p.accuracy) probes[p.n].push_back(*p.accuracy);
            }
          }
          for (auto& [n, v] : probes) add_row("n=" + std::to_string(n), std::move(v));
        } else {
          std::vector<double> train_acc;
          for (const auto& t : tr.trials) {
            if (t.report.ok() && t.report.train_accuracy) train_acc.push_back(*t.report.train_accuracy);
          }
          if (table == "table4" || table == "table5") add_row("train", std::move(train_acc));
          std::vector<double> test_acc;
          for (const auto& t : tr.trials) {
            if (t.report.ok() && t.report.test_accuracy) test_acc.push_back(*t.report.test_accuracy);
          }
          add_row("test", std::move(test_acc));
        }
        if (log && tr.failures) *log << "  warning: " << tr.failures << " trial(s) failed\n";
      }
    }
  }

  // One formatted table per grammar, or one per table when grammars share it.
  if (plan.long_probes) {
    std::vector<ResultRow> shaped;
    std::vector<std::pair<std::string, std::string>> cols;
    for (GrammarId g : plan.grammars) {
      const std::string gname(grammar_name(g));
      cols.push_back({gname, "n=120"});
      cols.push_back({gname, "n=160"});
    }
    for (ResultRow r : result.rows) {
      r.regime = r.grammar;
      shaped.push_back(r);
    }
    result.tables.push_back(ablation_table(std::string(table), shaped, cols));
  } else if (table == "table4" || table == "table5") {
    for (GrammarId g : plan.grammars) {
      std::vector<ResultRow> rows;
      for (const auto& r : result.rows) {
        if (r.grammar == grammar_name(g)) rows.push_back(r);
      }
      result.tables.push_back(ablation_table(std::string(table) + " " + std::string(grammar_name(g)), rows,
                                             {{"", "train"}, {"", "test"}}));
    }
  } else {
    std::vector<std::pair<std::string, std::string>> cols;
    for (const auto& rg : plan.regimes) cols.push_back({rg.name, "test"});
    result.tables.push_back(ablation_table(std::string(table), result.rows, cols));
  }

  if (!options.out_dir.empty()) {
    std::ofstream csv(options.out_dir / "results.csv", std::ios::binary);
    write_results_csv(csv, result.rows);
    std::string md;
    for (std::size_t i = 0; i < result.tables.size(); ++i) {
      md += result.tables[i].to_markdown() + "\n";
      const std::string suffix = result.tables.size() > 1 ? "_" + std::string(grammar_name(plan.grammars[i])) : "";
      write_text(options.out_dir / ("table" + suffix + ".csv"), result.tables[i].to_csv());
    }
    write_text(options.out_dir / "tables.md", md);
    std::ofstream st(options.out_dir / "status.txt", std::ios::binary);
    for (const auto& c : result.cells) {
      st << c.grammar << ' ' << c.family << ' ' << (c.regime.empty() ? "default" : c.regime) << " completed=" << c.completed
         << " failed=" << c.failures << '\n';
      for (const auto& e : c.errors) st << "  " << e << '\n';
    }
  }
  return result;
}

}  // namespace diffstack

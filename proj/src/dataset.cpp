#include "diffstack/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace diffstack {

namespace fs = std::filesystem;

std::size_t DatasetSplit::positives() const {
  return static_cast<std::size_t>(
      std::count_if(samples.begin(), samples.end(), [](const Sample& s) { return s.label == 1; }));
}

double DatasetSplit::positive_fraction() const {
  return samples.empty() ? 0.0 : static_cast<double>(positives()) / static_cast<double>(samples.size());
}

std::map<std::size_t, std::size_t> DatasetSplit::length_histogram() const {
  std::map<std::size_t, std::size_t> h;
  for (const auto& s : samples) ++h[s.length()];
  return h;
}

BenchmarkSpec BenchmarkSpec::standard(GrammarId g, std::uint64_t seed) {
  BenchmarkSpec spec;
  spec.grammar = g;
  spec.seed = seed;
  const bool large = g == GrammarId::D6;
  spec.splits = {
      {"train", large ? 15000u : 6230u, {0, 55}},
      {"valid", large ? 2000u : 1000u, {20, 70}},
      {"test", large ? 4000u : 3000u, {55, 102}},
      {"long_test", 1500, {105, 160}},
  };
  spec.profile = large ? LengthProfile::Stratified : LengthProfile::Natural;
  return spec;
}

BenchmarkSpec BenchmarkSpec::scaled(double factor) const {
  BenchmarkSpec out = *this;
  for (auto& s : out.splits) {
    s.size = std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(static_cast<double>(s.size) * factor)));
  }
  return out;
}

void BenchmarkSpec::validate() const {
  pcfg.validate();
  if (!(hard_fraction_lo >= 0 && hard_fraction_lo <= hard_fraction_hi && hard_fraction_hi <= 1)) {
    throw std::invalid_argument("hard negative fraction range must satisfy 0 <= lo <= hi <= 1");
  }
  if (splits.empty()) throw std::invalid_argument("benchmark needs at least one split");
  for (const auto& s : splits) {
    if (s.window.max_inclusive <= s.window.min_exclusive) {
      throw std::invalid_argument("split '" + s.name + "' has an empty length window");
    }
    if (s.window.max_inclusive < 2) throw std::invalid_argument("split '" + s.name + "' window maximum below 2");
    bool has_even = false;
    for (std::size_t n = std::max<std::size_t>(2, s.window.min_exclusive + 1); n <= s.window.max_inclusive; ++n) {
      if (n % 2 == 0) has_even = true;
    }
    if (!has_even) throw std::invalid_argument("split '" + s.name + "' window admits no even length");
  }
}

const DatasetSplit& Benchmark::split(std::string_view name) const {
  for (const auto& s : splits) {
    if (s.name == name) return s;
  }
  throw std::out_of_range("benchmark has no split named '" + std::string(name) + "'");
}

bool Benchmark::has_split(std::string_view name) const {
  return std::any_of(splits.begin(), splits.end(), [&](const DatasetSplit& s) { return s.name == name; });
}

TokenSeq mutate(const TokenSeq& tokens, std::size_t swaps, const Alphabet& alphabet, Rng& rng) {
  TokenSeq out = tokens;
  const std::size_t n = out.size();
  swaps = std::min(swaps, n);
  // partial Fisher-Yates over positions
  std::vector<std::size_t> pos(n);
  for (std::size_t i = 0; i < n; ++i) pos[i] = i;
  for (std::size_t i = 0; i < swaps; ++i) {
    const std::size_t j = i + rng.below(n - i);
    std::swap(pos[i], pos[j]);
    out[pos[i]] = static_cast<Token>(rng.below(alphabet.string_symbols()));
  }
  return out;
}

NegativeBatch make_negatives(const std::vector<Sample>& positives, const Oracle& oracle, const Alphabet& alphabet,
                             std::size_t original_negatives, const NegativeOptions& options, Rng& rng) {
  NegativeBatch batch;
  if (!(options.fraction_lo >= 0 && options.fraction_lo <= options.fraction_hi && options.fraction_hi <= 1)) {
    throw std::invalid_argument("make_negatives: invalid fraction range");
  }
  batch.fraction = options.fraction_lo == options.fraction_hi ? options.fraction_lo
                                                              : rng.uniform(options.fraction_lo, options.fraction_hi);
  batch.target = static_cast<std::size_t>(std::llround(batch.fraction * static_cast<double>(original_negatives)));
  if (batch.target == 0 || positives.empty()) return batch;

  // Every positive gets a full retry budget; give up once a generous number of
  // source strings has failed so degenerate inputs cannot loop forever.
  const std::size_t max_sources = 10 * batch.target + 100;
  std::size_t sources = 0;
  while (batch.samples.size() < batch.target && sources < max_sources) {
    const Sample& src = positives[rng.below(positives.size())];
    ++sources;
    bool found = false;
    for (std::size_t attempt = 0; attempt < options.retry_budget && !found; ++attempt) {
      const std::size_t swaps = options.swap_counts[rng.below(options.swap_counts.size())];
      TokenSeq cand = mutate(src.tokens, swaps, alphabet, rng);
      if (!oracle(cand)) {
        batch.samples.push_back({std::move(cand), 0});
        found = true;
      }
    }
    if (!found) ++batch.skipped;
  }
  return batch;
}

namespace {

struct SplitBuilder {
  const BenchmarkSpec& spec;
  const Alphabet& alphabet;
  LanguageOracle oracle;
  const std::set<TokenSeq>* exclude;  // train sequences, for non-train splits

  bool excluded(const TokenSeq& s) const { return exclude && exclude->count(s) > 0; }

  Sample positive(LengthWindow w, Rng& rng) const {
    for (std::size_t attempt = 0; attempt < spec.retry_budget; ++attempt) {
      Sample s = spec.grammar == GrammarId::Palindrome
                     ? sample_palindrome(alphabet, w, rng)
                     : sample_dyck(spec.pcfg, alphabet, w, rng, spec.retry_budget);
      if (!excluded(s.tokens)) return s;
    }
    throw GenerationError("could not draw a positive outside the training set");
  }

  std::vector<Sample> positives(const SplitPlan& plan, std::size_t count, Rng& rng) const {
    std::vector<Sample> out;
    out.reserve(count);
    if (spec.profile == LengthProfile::Natural) {
      for (std::size_t i = 0; i < count; ++i) out.push_back(positive(plan.window, rng));
      return out;
    }
    // Stratified: ten equal-width buckets, filled round-robin.
    constexpr std::size_t kBuckets = 10;
    const std::size_t lo = plan.window.min_exclusive;
    const std::size_t hi = plan.window.max_inclusive;
    std::vector<LengthWindow> buckets;
    for (std::size_t b = 0; b < kBuckets; ++b) {
      LengthWindow w{lo + ((hi - lo) * b) / kBuckets, lo + ((hi - lo) * (b + 1)) / kBuckets};
      bool has_even = false;
      for (std::size_t n = w.min_exclusive + 1; n <= w.max_inclusive; ++n) has_even |= (n % 2 == 0 && n >= 2);
      if (has_even) buckets.push_back(w);
    }
    for (std::size_t i = 0; i < count; ++i) out.push_back(positive(buckets[i % buckets.size()], rng));
    return out;
  }

  std::vector<Sample> easy_negatives(const std::vector<Sample>& pos, std::size_t count, Rng& rng) const {
    std::vector<Sample> out;
    out.reserve(count);
    const std::size_t letters = alphabet.string_symbols();
    while (out.size() < count) {
      const std::size_t n = pos.empty() ? 2 : pos[rng.below(pos.size())].length();
      for (std::size_t attempt = 0;; ++attempt) {
        if (attempt >= spec.retry_budget) throw GenerationError("could not draw a rejected random string");
        TokenSeq t(n);
        for (auto& x : t) x = static_cast<Token>(rng.below(letters));
        if (!oracle(t) && !excluded(t)) {
          out.push_back({std::move(t), 0});
          break;
        }
      }
    }
    return out;
  }

  DatasetSplit build(const SplitPlan& plan, const Rng& root) const {
    DatasetSplit split;
    split.name = plan.name;
    split.window = plan.window;
    const std::size_t n_pos = plan.size / 2;
    const std::size_t n_neg = plan.size - n_pos;

    Rng pos_rng = root.substream(plan.name + "/positive");
    Rng easy_rng = root.substream(plan.name + "/easy");
    Rng hard_rng = root.substream(plan.name + "/hard");
    std::vector<Sample> pos = positives(plan, n_pos, pos_rng);
    std::vector<Sample> neg = easy_negatives(pos, n_neg, easy_rng);

    if (spec.hard_negatives) {
      NegativeOptions opts;
      opts.fraction_lo = spec.hard_fraction_lo;
      opts.fraction_hi = spec.hard_fraction_hi;
      Oracle accept = [&](std::span<const Token> t) { return oracle(t); };
      NegativeBatch hard = make_negatives(pos, accept, alphabet, neg.size(), opts, hard_rng);
      std::erase_if(hard.samples, [&](const Sample& s) { return excluded(s.tokens); });
      // replace randomly chosen easy negatives
      std::vector<std::size_t> slots(neg.size());
      for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
      for (std::size_t i = 0; i < hard.samples.size() && i < slots.size(); ++i) {
        const std::size_t j = i + hard_rng.below(slots.size() - i);
        std::swap(slots[i], slots[j]);
        neg[slots[i]] = std::move(hard.samples[i]);
      }
    }

    split.samples = std::move(pos);
    split.samples.insert(split.samples.end(), std::make_move_iterator(neg.begin()), std::make_move_iterator(neg.end()));
    Rng shuffle_rng = root.substream(plan.name + "/shuffle");
    for (std::size_t i = split.samples.size(); i > 1; --i) {
      std::swap(split.samples[i - 1], split.samples[shuffle_rng.below(i)]);
    }
    return split;
  }
};

}  // namespace

Benchmark build_benchmark(const BenchmarkSpec& spec) {
  spec.validate();
  Benchmark b;
  b.grammar = spec.grammar;
  b.seed = spec.seed;
  b.pcfg = spec.pcfg;
  b.alphabet = Alphabet::for_grammar(spec.grammar);
  const Rng root(spec.seed);

  // Train first so the other splits can be kept disjoint from it.
  std::set<TokenSeq> train_set;
  std::vector<const SplitPlan*> order;
  for (const auto& p : spec.splits) {
    if (p.name == "train") order.insert(order.begin(), &p);
    else order.push_back(&p);
  }
  std::vector<DatasetSplit> built(spec.splits.size());
  for (const SplitPlan* plan : order) {
    const bool is_train = plan->name == "train";
    SplitBuilder builder{spec, b.alphabet, LanguageOracle(spec.grammar, b.alphabet),
                         is_train || train_set.empty() ? nullptr : &train_set};
    DatasetSplit split = builder.build(*plan, root);
    if (is_train) {
      for (const auto& s : split.samples) train_set.insert(s.tokens);
    }
    built[static_cast<std::size_t>(plan - spec.splits.data())] = std::move(split);
  }
  b.splits = std::move(built);
  return b;
}

void verify_benchmark(const Benchmark& b) {
  LanguageOracle oracle(b.grammar, b.alphabet);
  std::set<TokenSeq> train;
  if (b.has_split("train")) {
    for (const auto& s : b.split("train").samples) train.insert(s.tokens);
  }
  for (const auto& split : b.splits) {
    for (const auto& s : split.samples) {
      if (!split.window.contains(s.length())) {
        throw std::logic_error("split '" + split.name + "': sample length " + std::to_string(s.length()) +
                               " outside window");
      }
      if (oracle(s.tokens) != (s.label == 1)) {
        throw std::logic_error("split '" + split.name + "': label disagrees with oracle for '" +
                               b.alphabet.render(s.tokens) + "'");
      }
      if (split.name == "test" && train.count(s.tokens)) {
        throw std::logic_error("test sample also present in train: '" + b.alphabet.render(s.tokens) + "'");
      }
    }
  }
}

// --- files -------------------------------------------------------------------

void write_split(const fs::path& path, const DatasetSplit& split, const Benchmark& b) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "#grammar=" << grammar_name(b.grammar) << " seed=" << b.seed << " window=" << split.window.min_exclusive
      << "," << split.window.max_inclusive << "\n";
  for (const auto& s : split.samples) out << s.label << '\t' << b.alphabet.render(s.tokens) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void write_split_meta(const fs::path& path, const DatasetSplit& split, const Benchmark& b) {
  nlohmann::ordered_json j;
  j["grammar"] = grammar_name(b.grammar);
  j["seed"] = b.seed;
  j["split"] = split.name;
  j["size"] = split.size();
  j["positives"] = split.positives();
  j["positive_fraction"] = split.positive_fraction();
  j["window"] = {split.window.min_exclusive, split.window.max_inclusive};
  j["pcfg"] = {{"p", b.pcfg.p}, {"p1", b.pcfg.p1}, {"epsilon", b.pcfg.epsilon()}};
  nlohmann::ordered_json hist = nlohmann::ordered_json::object();
  for (auto [len, count] : split.length_histogram()) hist[std::to_string(len)] = count;
  j["length_histogram"] = hist;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_benchmark(const fs::path& dir, const Benchmark& b) {
  fs::create_directories(dir);
  for (const auto& split : b.splits) {
    write_split(dir / (split.name + ".txt"), split, b);
    write_split_meta(dir / (split.name + ".meta"), split, b);
  }
}

SplitFile read_split(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetFormatError("cannot open dataset file " + path.string());
  std::string header;
  if (!std::getline(in, header) || header.rfind("#grammar=", 0) != 0) {
    throw DatasetFormatError(path.string() + ": missing '#grammar=' header");
  }
  SplitFile f;
  f.split.name = path.stem().string();
  std::istringstream hs(header.substr(1));
  std::string field;
  bool have_grammar = false;
  bool have_window = false;
  while (hs >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw DatasetFormatError(path.string() + ": bad header field '" + field + "'");
    const std::string key = field.substr(0, eq);
    const std::string val = field.substr(eq + 1);
    if (key == "grammar") {
      auto g = parse_grammar(val);
      if (!g) throw DatasetFormatError(path.string() + ": unknown grammar '" + val + "'");
      f.grammar = *g;
      have_grammar = true;
    } else if (key == "seed") {
      f.seed = std::stoull(val);
    } else if (key == "window") {
      const auto comma = val.find(',');
      if (comma == std::string::npos) throw DatasetFormatError(path.string() + ": bad window '" + val + "'");
      f.split.window = {std::stoul(val.substr(0, comma)), std::stoul(val.substr(comma + 1))};
      have_window = true;
    }
  }
  if (!have_grammar || !have_window) throw DatasetFormatError(path.string() + ": header lacks grammar or window");
  const Alphabet alphabet = Alphabet::for_grammar(f.grammar);
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab != 1 || (line[0] != '0' && line[0] != '1')) {
      throw DatasetFormatError(path.string() + ":" + std::to_string(lineno) + ": expected '<label>\\t<symbols>'");
    }
    try {
      f.split.samples.push_back({alphabet.parse(std::string_view(line).substr(tab + 1)), line[0] - '0'});
    } catch (const SymbolError& e) {
      throw DatasetFormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return f;
}

Benchmark read_benchmark(const fs::path& dir) {
  Benchmark b;
  bool first = true;
  for (const char* name : {"train", "valid", "test", "long_test"}) {
    const fs::path p = dir / (std::string(name) + ".txt");
    if (!fs::exists(p)) continue;
    SplitFile f = read_split(p);
    if (first) {
      b.grammar = f.grammar;
      b.seed = f.seed;
      b.alphabet = Alphabet::for_grammar(f.grammar);
      first = false;
    } else if (f.grammar != b.grammar) {
      throw DatasetFormatError(p.string() + ": grammar differs from the other splits");
    }
    b.splits.push_back(std::move(f.split));
  }
  if (first) throw DatasetFormatError("no dataset splits found in " + dir.string());
  return b;
}

// --- corpora -------------------------------------------------------------------

namespace {

std::vector<std::vector<std::string>> read_lines(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read corpus file " + path.string());
  std::vector<std::vector<std::string>> lines;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<std::string> words;
    std::string w;
    while (ls >> w) words.push_back(std::move(w));
    if (!words.empty()) lines.push_back(std::move(words));
  }
  if (lines.empty()) throw std::runtime_error("corpus file " + path.string() + " is empty");
  return lines;
}

}  // namespace

Corpus load_corpus(const fs::path& train, const fs::path& valid, const fs::path& test, std::size_t vocab_cap) {
  const auto train_lines = read_lines(train);
  const auto valid_lines = read_lines(valid);
  const auto test_lines = read_lines(test);

  std::map<std::string, std::size_t> counts;
  for (const auto& l : train_lines) {
    for (const auto& w : l) {
      if (w != Corpus::kUnk && w != Alphabet::kEos) ++counts[w];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > vocab_cap) ranked.resize(vocab_cap);
  std::vector<std::string> words;
  for (auto& [w, c] : ranked) words.push_back(w);
  words.emplace_back(Corpus::kUnk);

  Corpus c;
  c.vocab = Alphabet::words(std::move(words));
  c.unk = static_cast<Token>(c.vocab.size() - 2);
  std::map<std::string, Token> index;
  for (Token t = 0; t < c.unk; ++t) index[c.vocab.symbol(t)] = t;
  auto encode = [&](const std::vector<std::vector<std::string>>& lines) {
    std::vector<TokenSeq> out;
    out.reserve(lines.size());
    for (const auto& l : lines) {
      TokenSeq s;
      s.reserve(l.size());
      for (const auto& w : l) {
        auto it = index.find(w);
        s.push_back(it == index.end() ? c.unk : it->second);
      }
      out.push_back(std::move(s));
    }
    return out;
  };
  c.train = encode(train_lines);
  c.valid = encode(valid_lines);
  c.test = encode(test_lines);
  return c;
}

Corpus load_corpus(const fs::path& dir, std::size_t vocab_cap) {
  auto pick = [&](const std::string& name) {
    for (const fs::path& p : {dir / (name + ".txt"), dir / ("ptb." + name + ".txt")}) {
      if (fs::exists(p)) return p;
    }
    throw std::runtime_error("corpus directory " + dir.string() + " has no " + name + " file");
  };
  return load_corpus(pick("train"), pick("valid"), pick("test"), vocab_cap);
}

}  // namespace diffstack

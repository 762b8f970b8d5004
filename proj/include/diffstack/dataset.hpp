#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "diffstack/grammar.hpp"

namespace diffstack {

struct DatasetSplit {
  std::string name;
  LengthWindow window;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  std::size_t positives() const;
  double positive_fraction() const;
  std::map<std::size_t, std::size_t> length_histogram() const;
};

// How positive lengths are distributed inside a split's window.
enum class LengthProfile {
  Natural,     // whatever rejection sampling into the window produces
  Stratified,  // ten equal-width length buckets with equal quotas
};

struct SplitPlan {
  std::string name;
  std::size_t size = 0;
  LengthWindow window;
};

struct BenchmarkSpec {
  GrammarId grammar = GrammarId::D2;
  std::uint64_t seed = 0;
  PcfgParams pcfg;
  std::vector<SplitPlan> splits;
  LengthProfile profile = LengthProfile::Natural;
  bool hard_negatives = true;
  double hard_fraction_lo = 0.15;
  double hard_fraction_hi = 0.30;
  std::size_t retry_budget = 10000;

  // Split sizes and windows used for the recognition tables.
  static BenchmarkSpec standard(GrammarId g, std::uint64_t seed);
  // Standard windows with every split size multiplied by factor (at least 2
  // samples per split). Used for quick runs and tests.
  BenchmarkSpec scaled(double factor) const;
  void validate() const;
};

struct Benchmark {
  GrammarId grammar = GrammarId::D2;
  std::uint64_t seed = 0;
  PcfgParams pcfg;
  Alphabet alphabet;
  std::vector<DatasetSplit> splits;

  const DatasetSplit& split(std::string_view name) const;
  bool has_split(std::string_view name) const;
};

struct NegativeOptions {
  double fraction_lo = 0.15;
  double fraction_hi = 0.30;
  std::array<std::size_t, 2> swap_counts{1, 3};
  std::size_t retry_budget = 100;
};

struct NegativeBatch {
  std::vector<Sample> samples;
  double fraction = 0;       // the fraction actually drawn
  std::size_t target = 0;    // round(fraction * original negatives)
  std::size_t skipped = 0;   // positives whose mutations all stayed accepted
};

using Oracle = std::function<bool(std::span<const Token>)>;

// Hard negatives: mutated copies of positives that the oracle rejects.
NegativeBatch make_negatives(const std::vector<Sample>& positives, const Oracle& oracle, const Alphabet& alphabet,
                             std::size_t original_negatives, const NegativeOptions& options, Rng& rng);

// Overwrites swaps distinct, uniformly chosen positions with uniformly chosen
// string symbols.
TokenSeq mutate(const TokenSeq& tokens, std::size_t swaps, const Alphabet& alphabet, Rng& rng);

// Builds every split. With spec.hard_negatives == false the same positives and
// easy negatives are produced as in the hard variant.
Benchmark build_benchmark(const BenchmarkSpec& spec);

// Throws std::logic_error if any sample breaks its split's contract (window,
// label/oracle agreement, train/test overlap).
void verify_benchmark(const Benchmark& b);

// --- files ---------------------------------------------------------------

void write_split(const std::filesystem::path& path, const DatasetSplit& split, const Benchmark& b);
void write_split_meta(const std::filesystem::path& path, const DatasetSplit& split, const Benchmark& b);
// Writes <name>.txt and <name>.meta for every split.
void write_benchmark(const std::filesystem::path& dir, const Benchmark& b);

struct SplitFile {
  GrammarId grammar = GrammarId::D2;
  std::uint64_t seed = 0;
  DatasetSplit split;
};

class DatasetFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

SplitFile read_split(const std::filesystem::path& path);
// Reads every split present in dir (train, valid, test, long_test).
Benchmark read_benchmark(const std::filesystem::path& dir);

// --- corpora ---------------------------------------------------------------

struct Corpus {
  Alphabet vocab;  // words by descending train frequency, then <unk>, then <eos>
  Token unk = 0;
  std::vector<TokenSeq> train;  // one sentence per line, EOS not included
  std::vector<TokenSeq> valid;
  std::vector<TokenSeq> test;

  static constexpr std::string_view kUnk = "<unk>";
};

// Whitespace tokenisation, vocabulary from train capped at vocab_cap word
// types, everything else mapped to <unk>. dir must contain train/valid/test
// files named either {train,valid,test}.txt or ptb.{train,valid,test}.txt.
Corpus load_corpus(const std::filesystem::path& dir, std::size_t vocab_cap);
Corpus load_corpus(const std::filesystem::path& train, const std::filesystem::path& valid,
                   const std::filesystem::path& test, std::size_t vocab_cap);

}  // namespace diffstack

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "diffstack/rng.hpp"

namespace diffstack {

using Token = std::uint32_t;
using TokenSeq = std::vector<Token>;

enum class GrammarId { D2, D3, D6, Palindrome };

std::string_view grammar_name(GrammarId g);
std::optional<GrammarId> parse_grammar(std::string_view name);

// Ordered symbol inventory. The end-of-string marker is always the last entry
// and is never produced inside a generated string.
class Alphabet {
 public:
  static Alphabet dyck(std::size_t n_pairs);
  static Alphabet palindrome();
  static Alphabet for_grammar(GrammarId g);
  // Word vocabulary for corpora; symbols must be unique and exclude the EOS text.
  static Alphabet words(std::vector<std::string> symbols);

  static constexpr std::string_view kEos = "<eos>";

  std::size_t size() const { return symbols_.size(); }  // includes EOS
  std::size_t string_symbols() const { return symbols_.size() - 1; }
  Token eos() const { return static_cast<Token>(symbols_.size() - 1); }
  const std::string& symbol(Token t) const { return symbols_.at(t); }
  const std::vector<std::string>& symbols() const { return symbols_; }
  std::optional<Token> find(std::string_view s) const;

  // Bracket pairs as (open, close) token ids; empty for non-Dyck alphabets.
  const std::vector<std::pair<Token, Token>>& pairs() const { return pairs_; }

  std::string render(std::span<const Token> seq) const;
  TokenSeq parse(std::string_view text) const;

  bool operator==(const Alphabet&) const = default;

 private:
  std::vector<std::string> symbols_;
  std::vector<std::pair<Token, Token>> pairs_;
};

struct Sample {
  TokenSeq tokens;  // without EOS
  int label = 0;    // 1 accept, 0 reject

  std::size_t length() const { return tokens.size(); }
  bool operator==(const Sample&) const = default;
};

// Exclusive lower bound, inclusive upper bound.
struct LengthWindow {
  std::size_t min_exclusive = 0;
  std::size_t max_inclusive = 0;

  bool contains(std::size_t n) const { return n > min_exclusive && n <= max_inclusive; }
  bool operator==(const LengthWindow&) const = default;
};

struct PcfgParams {
  double p = 0.5;    // S -> open S close, split evenly over bracket types
  double p1 = 0.25;  // S -> S S
  double epsilon() const { return 1.0 - (p + p1); }
  void validate() const;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SymbolError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Single left-to-right pass with an explicit bracket stack.
bool dyck_oracle(std::span<const Token> tokens, const Alphabet& alphabet);
bool palindrome_oracle(std::span<const Token> tokens, const Alphabet& alphabet);

// Oracle for whichever language the grammar id names.
class LanguageOracle {
 public:
  LanguageOracle(GrammarId g, const Alphabet& a) : grammar_(g), alphabet_(&a) {}
  bool operator()(std::span<const Token> tokens) const;
  const Alphabet& alphabet() const { return *alphabet_; }

 private:
  GrammarId grammar_;
  const Alphabet* alphabet_;
};

// One PCFG derivation, abandoned as soon as it must exceed max_len. Returns
// nullopt for an abandoned derivation.
std::optional<TokenSeq> pcfg_derive(const PcfgParams& params, const Alphabet& alphabet, std::size_t max_len, Rng& rng);

// Rejection-samples derivations until one lands in the window.
Sample sample_dyck(const PcfgParams& params, const Alphabet& alphabet, LengthWindow window, Rng& rng,
                   std::size_t retry_budget = 10000);

// w . reverse(w) over {a, b} with an even length drawn uniformly from the window.
Sample sample_palindrome(const Alphabet& alphabet, LengthWindow window, Rng& rng);

}  // namespace diffstack

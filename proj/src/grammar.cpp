#include "diffstack/grammar.hpp"

#include <algorithm>
#include <sstream>

namespace diffstack {

std::string_view grammar_name(GrammarId g) {
  switch (g) {
    case GrammarId::D2: return "d2";
    case GrammarId::D3: return "d3";
    case GrammarId::D6: return "d6";
    case GrammarId::Palindrome: return "palindrome";
  }
  return "?";
}

std::optional<GrammarId> parse_grammar(std::string_view name) {
  for (GrammarId g : {GrammarId::D2, GrammarId::D3, GrammarId::D6, GrammarId::Palindrome}) {
    if (grammar_name(g) == name) return g;
  }
  return std::nullopt;
}

Alphabet Alphabet::dyck(std::size_t n_pairs) {
  if (n_pairs == 0) throw std::invalid_argument("Dyck alphabet needs at least one bracket pair");
  static const char* kNamed[][2] = {{"(", ")"}, {"[", "]"}, {"{", "}"}, {"<", ">"}};
  Alphabet a;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const auto open = static_cast<Token>(a.symbols_.size());
    if (i < 4) {
      a.symbols_.emplace_back(kNamed[i][0]);
      a.symbols_.emplace_back(kNamed[i][1]);
    } else {
      a.symbols_.push_back("(" + std::to_string(i + 1));
      a.symbols_.push_back(")" + std::to_string(i + 1));
    }
    a.pairs_.emplace_back(open, open + 1);
  }
  a.symbols_.emplace_back(kEos);
  return a;
}

Alphabet Alphabet::palindrome() {
  Alphabet a;
  a.symbols_ = {"a", "b", std::string(kEos)};
  return a;
}

Alphabet Alphabet::for_grammar(GrammarId g) {
  switch (g) {
    case GrammarId::D2: return dyck(2);
    case GrammarId::D3: return dyck(3);
    case GrammarId::D6: return dyck(6);
    case GrammarId::Palindrome: return palindrome();
  }
  throw std::invalid_argument("unknown grammar");
}

Alphabet Alphabet::words(std::vector<std::string> symbols) {
  Alphabet a;
  a.symbols_ = std::move(symbols);
  a.symbols_.emplace_back(kEos);
  std::vector<std::string> sorted = a.symbols_;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw std::invalid_argument("alphabet symbols must be unique (and must not include <eos>)");
  }
  return a;
}

std::optional<Token> Alphabet::find(std::string_view s) const {
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    if (symbols_[i] == s) return static_cast<Token>(i);
  }
  return std::nullopt;
}

std::string Alphabet::render(std::span<const Token> seq) const {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out.push_back(' ');
    out += symbol(seq[i]);
  }
  return out;
}

TokenSeq Alphabet::parse(std::string_view text) const {
  TokenSeq out;
  std::istringstream in{std::string(text)};
  std::string tok;
  while (in >> tok) {
    auto t = find(tok);
    if (!t) throw SymbolError("unknown symbol '" + tok + "'");
    out.push_back(*t);
  }
  return out;
}

void PcfgParams::validate() const {
  if (!(p >= 0) || !(p1 >= 0) || !(p + p1 < 1)) {
    throw std::invalid_argument("PCFG parameters need p, p1 >= 0 and p + p1 < 1");
  }
}

bool dyck_oracle(std::span<const Token> tokens, const Alphabet& alphabet) {
  const auto& pairs = alphabet.pairs();
  if (pairs.empty()) throw SymbolError("dyck_oracle: alphabet has no bracket pairs");
  // pair index for every string symbol, plus whether it opens
  std::vector<int> pair_of(alphabet.size(), -1);
  std::vector<bool> opens(alphabet.size(), false);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    pair_of[pairs[i].first] = static_cast<int>(i);
    pair_of[pairs[i].second] = static_cast<int>(i);
    opens[pairs[i].first] = true;
  }
  std::vector<int> stack;
  for (Token t : tokens) {
    if (t >= alphabet.size() || pair_of[t] < 0) {
      throw SymbolError("dyck_oracle: symbol id " + std::to_string(t) + " is not a bracket");
    }
    if (opens[t]) {
      stack.push_back(pair_of[t]);
    } else {
      if (stack.empty() || stack.back() != pair_of[t]) return false;
      stack.pop_back();
    }
  }
  return stack.empty();
}

bool palindrome_oracle(std::span<const Token> tokens, const Alphabet& alphabet) {
  for (Token t : tokens) {
    if (t >= alphabet.string_symbols()) {
      throw SymbolError("palindrome_oracle: symbol id " + std::to_string(t) + " is not a letter");
    }
  }
  if (tokens.size() % 2 != 0) return false;
  std::size_t i = 0;
  std::size_t j = tokens.size();
  while (i < j) {
    if (tokens[i] != tokens[j - 1]) return false;
    ++i;
    --j;
  }
  return true;
}

bool LanguageOracle::operator()(std::span<const Token> tokens) const {
  return grammar_ == GrammarId::Palindrome ? palindrome_oracle(tokens, *alphabet_) : dyck_oracle(tokens, *alphabet_);
}

std::optional<TokenSeq> pcfg_derive(const PcfgParams& params, const Alphabet& alphabet, std::size_t max_len, Rng& rng) {
  const auto& pairs = alphabet.pairs();
  // Work items: kNonterminal expands S; anything else is a pending terminal.
  constexpr Token kNonterminal = ~Token(0);
  std::vector<Token> work{kNonterminal};
  TokenSeq out;
  std::size_t pending_closes = 0;
  while (!work.empty()) {
    const Token item = work.back();
    work.pop_back();
    if (item != kNonterminal) {
      out.push_back(item);
      --pending_closes;
      continue;
    }
    const double r = rng.uniform01();
    if (r < params.p) {
      const auto& pr = pairs[rng.below(pairs.size())];
      out.push_back(pr.first);
      work.push_back(pr.second);
      work.push_back(kNonterminal);
      ++pending_closes;
      if (out.size() + pending_closes > max_len) return std::nullopt;
    } else if (r < params.p + params.p1) {
      work.push_back(kNonterminal);
      work.push_back(kNonterminal);
      // A runaway S S chain is treated like an over-long derivation.
      if (work.size() > 64 + 8 * max_len) return std::nullopt;
    }
  }
  return out;
}

Sample sample_dyck(const PcfgParams& params, const Alphabet& alphabet, LengthWindow window, Rng& rng,
                   std::size_t retry_budget) {
  params.validate();
  if (window.max_inclusive < 2) throw std::invalid_argument("sample_dyck: window maximum must be at least 2");
  for (std::size_t attempt = 0; attempt < retry_budget; ++attempt) {
    auto s = pcfg_derive(params, alphabet, window.max_inclusive, rng);
    if (s && window.contains(s->size())) return Sample{std::move(*s), 1};
  }
  throw GenerationError("sample_dyck: no derivation in window (" + std::to_string(window.min_exclusive) + "," +
                        std::to_string(window.max_inclusive) + "] after " + std::to_string(retry_budget) +
                        " attempts");
}

Sample sample_palindrome(const Alphabet& alphabet, LengthWindow window, Rng& rng) {
  std::vector<std::size_t> even;
  for (std::size_t n = std::max<std::size_t>(2, window.min_exclusive + 1); n <= window.max_inclusive; ++n) {
    if (n % 2 == 0) even.push_back(n);
  }
  if (even.empty()) throw std::invalid_argument("sample_palindrome: window admits no even length");
  const std::size_t n = even[rng.below(even.size())];
  const auto letters = alphabet.string_symbols();
  TokenSeq seq(n);
  for (std::size_t i = 0; i < n / 2; ++i) {
    seq[i] = static_cast<Token>(rng.below(letters));
    seq[n - 1 - i] = seq[i];
  }
  return Sample{std::move(seq), 1};
}

}  // namespace diffstack

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The cslab Authors
#pragma once

/**
 * @file corpus.hpp
 * @brief Text corpus tooling: vocabulary, lexicon language ID, code-mixing
 *        index, utterance filters, and the synthetic bilingual generator.
 *
 * Language A plays the Malay-like role (prompt <|ms|>), language B the
 * English-like role (prompt <|en|>).
 */

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "config.hpp"
#include "error.hpp"
#include "model.hpp"
#include "random.hpp"

namespace cslab {

enum class Lang : char { A = 'A', B = 'B', Unknown = 'U' };

inline char lang_char(Lang l) { return static_cast<char>(l); }

inline Lang parse_lang(char c) {
  switch (c) {
  case 'A': return Lang::A;
  case 'B': return Lang::B;
  case 'U': return Lang::Unknown;
  }
  throw DataError(std::string("unknown language tag '") + c + "'");
}

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w)
    out.push_back(w);
  return out;
}

inline std::string join_words(const std::vector<std::string> &words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i)
      out += ' ';
    out += words[i];
  }
  return out;
}

struct Utterance {
  std::string id;
  std::string text;
  std::vector<std::string> words;
  std::vector<Lang> tags; // one per word

  static Utterance from_text(std::string id, std::string text) {
    Utterance u;
    u.id = std::move(id);
    u.words = split_words(text);
    u.text = join_words(u.words);
    u.tags.assign(u.words.size(), Lang::Unknown);
    return u;
  }

  std::string tag_string() const {
    std::string s;
    for (std::size_t i = 0; i < tags.size(); ++i) {
      if (i)
        s += ' ';
      s += lang_char(tags[i]);
    }
    return s;
  }

  bool operator==(const Utterance &) const = default;
};

// --------------------------------------------------------------------------
// Lexicon language ID

/// Two disjoint word lists standing in for an external LID model.
class Lexicon {
public:
  Lexicon() = default;
  Lexicon(const std::vector<std::string> &lang_a, const std::vector<std::string> &lang_b)
      : a_(lang_a.begin(), lang_a.end()), b_(lang_b.begin(), lang_b.end()) {
    for (const auto &w : a_)
      if (b_.count(w))
        throw ConfigError("lexicon lists are not disjoint: '" + w + "' appears in both");
  }

  Lang lookup(const std::string &word) const {
    if (a_.count(word))
      return Lang::A;
    if (b_.count(word))
      return Lang::B;
    return Lang::Unknown;
  }

  std::vector<std::string> words(Lang l) const {
    const auto &set = l == Lang::A ? a_ : b_;
    std::vector<std::string> out(set.begin(), set.end());
    std::sort(out.begin(), out.end());
    return out;
  }

  static Lexicon load(const std::string &path_a, const std::string &path_b) {
    auto read = [](const std::string &path) {
      std::ifstream in(path);
      if (!in)
        throw IoError("cannot open lexicon " + path);
      std::vector<std::string> out;
      std::string w;
      while (in >> w)
        out.push_back(w);
      return out;
    };
    return Lexicon(read(path_a), read(path_b));
  }

private:
  std::unordered_set<std::string> a_, b_;
};

inline Lang lexicon_lid(const std::string &word, const Lexicon &lexicon) { return lexicon.lookup(word); }

inline void tag_utterance(Utterance &u, const Lexicon &lexicon) {
  u.tags.resize(u.words.size());
  for (std::size_t i = 0; i < u.words.size(); ++i)
    u.tags[i] = lexicon.lookup(u.words[i]);
}

/// Language with the larger tagged word count; ties and all-unknown go to B.
inline Lang dominant_language(const Utterance &u) {
  if (u.words.empty())
    throw DataError("utterance '" + u.id + "' is empty");
  const auto a = std::count(u.tags.begin(), u.tags.end(), Lang::A);
  const auto b = std::count(u.tags.begin(), u.tags.end(), Lang::B);
  return a > b ? Lang::A : Lang::B;
}

// --------------------------------------------------------------------------
// Code-mixing index

/// 100 * (1 - max_lang / (N - U)); 0 when every word is unknown.
inline double cmi(const Utterance &u) {
  if (u.tags.empty())
    throw DataError("cmi of an empty utterance is undefined");
  std::map<Lang, std::size_t> counts;
  std::size_t unknown = 0;
  for (Lang t : u.tags) {
    if (t == Lang::Unknown)
      ++unknown;
    else
      ++counts[t];
  }
  const std::size_t n = u.tags.size();
  if (n == unknown)
    return 0.0;
  std::size_t mx = 0;
  for (const auto &[lang, c] : counts)
    mx = std::max(mx, c);
  return 100.0 * (1.0 - static_cast<double>(mx) / static_cast<double>(n - unknown));
}

struct CmiSummary {
  std::string type;
  std::string name;
  std::size_t utterances = 0;
  double mean_cmi = 0.0;
};

/// Unweighted mean of per-utterance CMI.
inline CmiSummary corpus_cmi(std::span<const Utterance> corpus, std::string name = "corpus",
                             std::string type = "Text") {
  if (corpus.empty())
    throw DataError("cmi of an empty corpus is undefined");
  double total = 0.0;
  for (const auto &u : corpus)
    total += cmi(u);
  return {std::move(type), std::move(name), corpus.size(), total / static_cast<double>(corpus.size())};
}

inline std::string format_cmi_table(const std::vector<CmiSummary> &rows) {
  std::ostringstream os;
  os << std::left << std::setw(14) << "Type" << std::setw(24) << "Name" << std::right << std::setw(10) << "#Utt"
     << std::setw(10) << "CMI" << '\n';
  for (const auto &r : rows)
    os << std::left << std::setw(14) << r.type << std::setw(24) << r.name << std::right << std::setw(10)
       << r.utterances << std::setw(10) << std::fixed << std::setprecision(2) << r.mean_cmi << '\n';
  return os.str();
}

// --------------------------------------------------------------------------
// Filters

/// Overlapping count of the most frequent n-gram for each n in `orders`;
/// rejects when any count exceeds `max_occurrences`.
inline bool filter_repeated_ngrams(const Utterance &u, const std::vector<std::size_t> &orders = {2, 3},
                                   std::size_t max_occurrences = 4) {
  for (std::size_t n : orders) {
    if (n == 0 || u.words.size() < n)
      continue;
    std::map<std::vector<std::string>, std::size_t> counts;
    for (std::size_t i = 0; i + n <= u.words.size(); ++i) {
      std::vector<std::string> gram(u.words.begin() + static_cast<std::ptrdiff_t>(i),
                                    u.words.begin() + static_cast<std::ptrdiff_t>(i + n));
      if (++counts[gram] > max_occurrences)
        return false;
    }
  }
  return true;
}

inline bool filter_min_tokens(const Utterance &u, std::size_t min_tokens = 32) { return u.words.size() >= min_tokens; }

struct NgramRepeatRule {
  std::vector<std::size_t> orders{2, 3};
  std::size_t max_occurrences = 4;
};

struct MinTokensRule {
  std::size_t min_tokens = 32;
};

using FilterRule = std::variant<NgramRepeatRule, MinTokensRule>;

/// "ngram:2,3:4" or "mintok:32".
inline FilterRule parse_filter_rule(const std::string &text) {
  const auto parts = split(text, ':');
  if (parts[0] == "ngram" && parts.size() == 3) {
    NgramRepeatRule r;
    r.orders.clear();
    for (const auto &o : split(parts[1], ','))
      r.orders.push_back(static_cast<std::size_t>(parse_int(o, "ngram order")));
    r.max_occurrences = static_cast<std::size_t>(parse_int(parts[2], "ngram max occurrences"));
    return r;
  }
  if (parts[0] == "mintok" && parts.size() == 2)
    return MinTokensRule{static_cast<std::size_t>(parse_int(parts[1], "mintok"))};
  throw ConfigError("unrecognised filter rule '" + text + "' (expected ngram:N[,N...]:MAX or mintok:N)");
}

inline std::string rule_name(const FilterRule &rule) {
  if (const auto *n = std::get_if<NgramRepeatRule>(&rule)) {
    std::string s = "ngram:";
    for (std::size_t i = 0; i < n->orders.size(); ++i)
      s += (i ? "," : "") + std::to_string(n->orders[i]);
    return s + ":" + std::to_string(n->max_occurrences);
  }
  return "mintok:" + std::to_string(std::get<MinTokensRule>(rule).min_tokens);
}

inline bool passes(const FilterRule &rule, const Utterance &u) {
  if (const auto *n = std::get_if<NgramRepeatRule>(&rule))
    return filter_repeated_ngrams(u, n->orders, n->max_occurrences);
  return filter_min_tokens(u, std::get<MinTokensRule>(rule).min_tokens);
}

struct FilterReport {
  std::size_t input = 0;
  std::size_t kept = 0;
  /// Rejections attributed to the first failing rule, in rule order.
  std::vector<std::pair<std::string, std::size_t>> rejected;

  std::size_t rejected_total() const {
    std::size_t n = 0;
    for (const auto &[name, c] : rejected)
      n += c;
    return n;
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "input\t" << input << "\nkept\t" << kept << '\n';
    for (const auto &[name, c] : rejected)
      os << "rejected[" << name << "]\t" << c << '\n';
    return os.str();
  }
};

struct FilterResult {
  std::vector<Utterance> kept;
  FilterReport report;
};

/// Keeps input order. The accepted set does not depend on rule order.
inline FilterResult run_filters(std::span<const Utterance> corpus, const std::vector<FilterRule> &rules) {
  FilterResult out;
  out.report.input = corpus.size();
  for (const auto &r : rules)
    out.report.rejected.emplace_back(rule_name(r), 0);
  for (const auto &u : corpus) {
    bool keep = true;
    for (std::size_t i = 0; i < rules.size() && keep; ++i)
      if (!passes(rules[i], u)) {
        ++out.report.rejected[i].second;
        keep = false;
      }
    if (keep)
      out.kept.push_back(u);
  }
  out.report.kept = out.kept.size();
  return out;
}

// --------------------------------------------------------------------------
// Vocabulary and tokenization

namespace special {
inline constexpr int pad = 0;
inline constexpr int bos = 1;
inline constexpr int eos = 2;
inline constexpr int unk = 3;
inline constexpr int lang_ms = 4;
inline constexpr int lang_en = 5;
inline constexpr int count = 6;
inline const std::vector<std::string> &tokens() {
  static const std::vector<std::string> t = {"<pad>", "<bos>", "<eos>", "<unk>", "<|ms|>", "<|en|>"};
  return t;
}
} // namespace special

inline bool is_prompt_token(std::string_view tok) {
  return tok.size() >= 4 && tok.substr(0, 2) == "<|" && tok.substr(tok.size() - 2) == "|>";
}

/// Word-level vocabulary. Ids 0..5 are the fixed special tokens
/// <pad> <bos> <eos> <unk> <|ms|> <|en|>; words follow in insertion order.
class Vocab {
public:
  Vocab() : tokens_(special::tokens()) { reindex(); }

  explicit Vocab(const std::vector<std::string> &words) : Vocab() {
    for (const auto &w : words)
      add(w);
  }

  /// Rebuilds from a full token list (as stored in checkpoints).
  static Vocab from_tokens(const std::vector<std::string> &tokens) {
    const auto &sp = special::tokens();
    if (tokens.size() < sp.size() || !std::equal(sp.begin(), sp.end(), tokens.begin()))
      throw DataError("token list does not start with the special tokens");
    return Vocab(std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(sp.size()), tokens.end()));
  }

  int add(const std::string &word) {
    if (auto it = ids_.find(word); it != ids_.end())
      return it->second;
    tokens_.push_back(word);
    ids_.emplace(word, static_cast<int>(tokens_.size() - 1));
    return static_cast<int>(tokens_.size() - 1);
  }

  int id(const std::string &word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? special::unk : it->second;
  }
  bool contains(const std::string &word) const { return ids_.count(word) != 0; }
  const std::string &token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw IndexError("token id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string> &tokens() const { return tokens_; }
  static bool is_special(int id) { return id >= 0 && id < special::count; }

private:
  void reindex() {
    ids_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i)
      ids_.emplace(tokens_[i], static_cast<int>(i));
  }
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

inline TokenSequence tokenize(std::string_view text, const Vocab &vocab) {
  TokenSequence out;
  for (const auto &w : split_words(text))
    out.push_back(vocab.id(w));
  return out;
}

/// Inverse of tokenize for in-vocabulary text. With `words_only`, special and
/// prompt tokens are dropped.
inline std::string detokenize(std::span<const int> ids, const Vocab &vocab, bool words_only = false) {
  std::vector<std::string> words;
  for (int id : ids) {
    if (words_only && Vocab::is_special(id))
      continue;
    words.push_back(vocab.token(id));
  }
  return join_words(words);
}

inline int prompt_id(Lang l) { return l == Lang::A ? special::lang_ms : special::lang_en; }

// --------------------------------------------------------------------------
// Synthetic bilingual corpus

/// Generator settings. Key names in the spec file match the field names.
struct GenSpec {
  std::size_t words_per_language = 30;
  std::size_t successors = 3;       // within-language bigram fan-out
  std::size_t cross_successors = 2; // switch-point fan-out into the other language
  double successor_decay = 0.5;     // successor k has weight decay^k
  std::size_t min_words = 4;
  std::size_t max_words = 8;
  double switch_prob = 0.35; // per-word chance of ending a code-switched segment

  // Text-only corpus (stage 1).
  std::size_t text_a = 1500;
  std::size_t text_b = 500;
  std::size_t text_cs = 1500;
  // Paired splits.
  std::size_t pretrain_a = 600;
  std::size_t pretrain_b = 1800;
  std::size_t pretrain_cs = 200;
  std::size_t train_a = 70;
  std::size_t train_b = 60;
  std::size_t train_cs = 70;
  std::size_t dev_per_group = 30;
  std::size_t test_per_group = 60;

  // Acoustic stand-in.
  std::size_t input_dim = 16;
  std::size_t frames_per_token = 2;
  std::size_t words_per_code = 1; // words sharing one acoustic code
  double jitter = 0.35;

  void validate() const {
    if (words_per_language < 2)
      throw ConfigError("words_per_language must be >= 2");
    if (successors < 1 || successors > words_per_language)
      throw ConfigError("successors must be in [1, words_per_language]");
    if (cross_successors < 1 || cross_successors > words_per_language)
      throw ConfigError("cross_successors must be in [1, words_per_language]");
    if (min_words < 2 || max_words < min_words)
      throw ConfigError("need 2 <= min_words <= max_words");
    if (!(switch_prob > 0.0 && switch_prob < 1.0))
      throw ConfigError("switch_prob must be in (0, 1)");
    if (!(successor_decay > 0.0 && successor_decay <= 1.0))
      throw ConfigError("successor_decay must be in (0, 1]");
    if (input_dim < 1 || frames_per_token < 1 || words_per_code < 1)
      throw ConfigError("input_dim, frames_per_token and words_per_code must be >= 1");
    if (jitter < 0.0)
      throw ConfigError("jitter must be >= 0");
    if (text_a + text_b + text_cs == 0)
      throw ConfigError("text corpus would be empty");
  }

  std::size_t paired_train_size() const { return train_a + train_b + train_cs; }
  std::size_t text_size() const { return text_a + text_b + text_cs; }

  static GenSpec from_config(const KeyValueConfig &cfg) {
    cfg.validate_keys({"words_per_language", "successors", "cross_successors", "successor_decay", "min_words",
                       "max_words", "switch_prob", "text_a", "text_b", "text_cs", "pretrain_a", "pretrain_b",
                       "pretrain_cs", "train_a", "train_b", "train_cs", "dev_per_group", "test_per_group", "input_dim",
                       "frames_per_token", "words_per_code", "jitter"});
    GenSpec s;
    s.words_per_language = cfg.get_size("words_per_language", s.words_per_language);
    s.successors = cfg.get_size("successors", s.successors);
    s.cross_successors = cfg.get_size("cross_successors", s.cross_successors);
    s.successor_decay = cfg.get_double("successor_decay", s.successor_decay);
    s.min_words = cfg.get_size("min_words", s.min_words);
    s.max_words = cfg.get_size("max_words", s.max_words);
    s.switch_prob = cfg.get_double("switch_prob", s.switch_prob);
    s.text_a = cfg.get_size("text_a", s.text_a);
    s.text_b = cfg.get_size("text_b", s.text_b);
    s.text_cs = cfg.get_size("text_cs", s.text_cs);
    s.pretrain_a = cfg.get_size("pretrain_a", s.pretrain_a);
    s.pretrain_b = cfg.get_size("pretrain_b", s.pretrain_b);
    s.pretrain_cs = cfg.get_size("pretrain_cs", s.pretrain_cs);
    s.train_a = cfg.get_size("train_a", s.train_a);
    s.train_b = cfg.get_size("train_b", s.train_b);
    s.train_cs = cfg.get_size("train_cs", s.train_cs);
    s.dev_per_group = cfg.get_size("dev_per_group", s.dev_per_group);
    s.test_per_group = cfg.get_size("test_per_group", s.test_per_group);
    s.input_dim = cfg.get_size("input_dim", s.input_dim);
    s.frames_per_token = cfg.get_size("frames_per_token", s.frames_per_token);
    s.words_per_code = cfg.get_size("words_per_code", s.words_per_code);
    s.jitter = cfg.get_double("jitter", s.jitter);
    s.validate();
    return s;
  }
};

struct PairedExample {
  Utterance utt;
  EncoderFeatures features;
  int prompt = special::lang_en; // dominant-language prompt id

  bool operator==(const PairedExample &) const = default;
};

/// Test-set group a paired split belongs to.
enum class EvalGroup { A, B, CS, Mixed };

inline std::string_view eval_group_name(EvalGroup g) {
  switch (g) {
  case EvalGroup::A: return "A";
  case EvalGroup::B: return "B";
  case EvalGroup::CS: return "CS";
  case EvalGroup::Mixed: return "mixed";
  }
  return "?";
}

inline EvalGroup parse_eval_group(const std::string &s) {
  for (auto g : {EvalGroup::A, EvalGroup::B, EvalGroup::CS, EvalGroup::Mixed})
    if (eval_group_name(g) == s)
      return g;
  throw DataError("unknown evaluation group '" + s + "'");
}

struct PairedSplit {
  std::string name;
  EvalGroup group = EvalGroup::Mixed;
  std::vector<PairedExample> examples;
};

/// Everything the generator produces.
struct SyntheticCorpus {
  GenSpec spec;
  std::uint64_t seed = 0;
  Vocab vocab;
  Lexicon lexicon;
  std::vector<std::string> words_a, words_b;
  std::vector<Utterance> text;       // text-only corpus
  std::vector<PairedSplit> splits;   // pretrain, train, dev_*, test_*
  std::vector<std::vector<double>> codebook; // code -> frames_per_token x input_dim
  std::vector<std::size_t> word_code;        // vocab id -> code (words only)

  const PairedSplit &split(const std::string &name) const {
    for (const auto &s : splits)
      if (s.name == name)
        return s;
    throw DataError("no split named '" + name + "'");
  }

  std::vector<Utterance> text_by_tag(bool code_switched) const {
    std::vector<Utterance> out;
    for (const auto &u : text)
      if ((cmi(u) > 0.0) == code_switched)
        out.push_back(u);
    return out;
  }
};

namespace detail {

inline std::vector<std::string> make_words_a(std::size_t n) {
  // CV.CV shapes over {a, i, u}; never contain 'e' or 'o'.
  static const char *cons[] = {"b", "d", "k", "l", "m", "n", "p", "s", "t", "j", "r", "g"};
  static const char *vow[] = {"a", "i", "u"};
  std::vector<std::string> syl;
  for (const char *c : cons)
    for (const char *v : vow)
      syl.push_back(std::string(c) + v);
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (std::size_t k = 0; out.size() < n; ++k) {
    std::string w = syl[(k * 7) % syl.size()] + syl[(k * 13 + 5) % syl.size()];
    if (k >= syl.size() * syl.size())
      w += syl[k % syl.size()];
    if (seen.insert(w).second)
      out.push_back(w);
  }
  return out;
}

inline std::vector<std::string> make_words_b(std::size_t n) {
  // Onset + {e, o}-vowel + coda; never contain 'a', 'i' or 'u' as the vowel.
  static const char *onset[] = {"th", "st", "br", "fl", "gr", "sh", "wh", "cl", "pr", "sw", "sn", "dr"};
  static const char *nucleus[] = {"e", "o", "ee", "oo", "eo"};
  static const char *coda[] = {"ng", "ck", "rt", "nd", "ll", "t", "sk"};
  std::vector<std::string> out;
  std::set<std::string> seen;
  const std::size_t total = 12 * 5 * 7;
  for (std::size_t k = 0; out.size() < n; ++k) {
    const std::size_t idx = (k * 37) % total;
    std::string w = std::string(onset[idx % 12]) + nucleus[(idx / 12) % 5] + coda[idx / 60];
    if (k >= total)
      w += std::to_string(k / total);
    if (seen.insert(w).second)
      out.push_back(w);
  }
  return out;
}

struct WeightedNext {
  std::vector<int> ids;
  std::vector<double> cumulative;

  int sample(Rng &rng) const {
    const double r = uniform01(rng) * cumulative.back();
    return ids[static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin())];
  }
};

inline WeightedNext make_successors(Rng &rng, const std::vector<int> &pool, std::size_t k, double decay) {
  std::vector<int> shuffled = pool;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  WeightedNext out;
  double acc = 0.0, w = 1.0;
  for (std::size_t i = 0; i < k; ++i) {
    out.ids.push_back(shuffled[i]);
    acc += w;
    out.cumulative.push_back(acc);
    w *= decay;
  }
  return out;
}

struct Grammar {
  std::vector<int> words_a, words_b; // vocab ids
  std::unordered_map<int, WeightedNext> within, cross;

  bool is_a(int id) const { return std::binary_search(words_a.begin(), words_a.end(), id); }

  int start(Rng &rng, Lang l) const {
    const auto &pool = l == Lang::A ? words_a : words_b;
    return pool[uniform_index(rng, pool.size())];
  }
};

} // namespace detail

/// Deterministic corpus per (spec, seed). Every utterance text is unique across
/// the text corpus and all paired splits.
inline SyntheticCorpus gen_synthetic_corpus(const GenSpec &spec, std::uint64_t seed) {
  spec.validate();
  SyntheticCorpus c;
  c.spec = spec;
  c.seed = seed;
  c.words_a = detail::make_words_a(spec.words_per_language);
  c.words_b = detail::make_words_b(spec.words_per_language);
  c.lexicon = Lexicon(c.words_a, c.words_b);
  for (const auto &w : c.words_a)
    c.vocab.add(w);
  for (const auto &w : c.words_b)
    c.vocab.add(w);

  Rng grammar_rng(derive_seed(seed, "grammar"));
  detail::Grammar gr;
  for (const auto &w : c.words_a)
    gr.words_a.push_back(c.vocab.id(w));
  for (const auto &w : c.words_b)
    gr.words_b.push_back(c.vocab.id(w));
  for (int id : gr.words_a) {
    gr.within[id] = detail::make_successors(grammar_rng, gr.words_a, spec.successors, spec.successor_decay);
    gr.cross[id] = detail::make_successors(grammar_rng, gr.words_b, spec.cross_successors, spec.successor_decay);
  }
  for (int id : gr.words_b) {
    gr.within[id] = detail::make_successors(grammar_rng, gr.words_b, spec.successors, spec.successor_decay);
    gr.cross[id] = detail::make_successors(grammar_rng, gr.words_a, spec.cross_successors, spec.successor_decay);
  }

  // Codes over an interleaved A/B word order. With words_per_code = 2, A word i
  // and B word (i + W/2) mod W share a code and differ only in language.
  Rng code_rng(derive_seed(seed, "codebook"));
  const std::size_t n_words = 2 * spec.words_per_language;
  const std::size_t n_codes = (n_words + spec.words_per_code - 1) / spec.words_per_code;
  std::vector<std::size_t> order(n_words);
  for (std::size_t i = 0; i < spec.words_per_language; ++i) {
    order[2 * i] = static_cast<std::size_t>(gr.words_a[i]);
    order[2 * i + 1] = static_cast<std::size_t>(gr.words_b[(i + spec.words_per_language / 2) % spec.words_per_language]);
  }
  c.word_code.assign(c.vocab.size(), 0);
  for (std::size_t i = 0; i < n_words; ++i)
    c.word_code[order[i]] = i / spec.words_per_code;
  c.codebook.assign(n_codes, std::vector<double>(spec.frames_per_token * spec.input_dim));
  for (auto &vec : c.codebook)
    for (auto &v : vec)
      v = normal(code_rng);

  std::set<std::string> seen;
  Rng text_rng(derive_seed(seed, "text"));

  auto sample_utt = [&](Rng &rng, Lang lang, bool code_switched) {
    while (true) {
      const std::size_t len = spec.min_words + uniform_index(rng, spec.max_words - spec.min_words + 1);
      std::vector<int> ids;
      Lang cur = lang;
      ids.push_back(gr.start(rng, cur));
      bool switched = false;
      while (ids.size() < len) {
        const int prev = ids.back();
        if (code_switched && uniform01(rng) < spec.switch_prob) {
          ids.push_back(gr.cross.at(prev).sample(rng));
          cur = cur == Lang::A ? Lang::B : Lang::A;
          switched = true;
        } else {
          ids.push_back(gr.within.at(prev).sample(rng));
        }
      }
      if (code_switched && !switched)
        continue;
      Utterance u;
      for (int id : ids) {
        u.words.push_back(c.vocab.token(id));
        u.tags.push_back(gr.is_a(id) ? Lang::A : Lang::B);
      }
      u.text = join_words(u.words);
      if (!seen.insert(u.text).second)
        continue;
      return u;
    }
  };

  auto make_text = [&](Rng &rng, std::size_t n, Lang lang, bool cs, const std::string &prefix,
                       std::vector<Utterance> &out) {
    for (std::size_t i = 0; i < n; ++i) {
      Lang start = cs ? (uniform01(rng) < 0.5 ? Lang::A : Lang::B) : lang;
      Utterance u = sample_utt(rng, start, cs);
      u.id = prefix + std::to_string(i);
      out.push_back(std::move(u));
    }
  };

  make_text(text_rng, spec.text_a, Lang::A, false, "text-a-", c.text);
  make_text(text_rng, spec.text_b, Lang::B, false, "text-b-", c.text);
  make_text(text_rng, spec.text_cs, Lang::A, true, "text-cs-", c.text);

  Rng feat_rng(derive_seed(seed, "features"));
  auto to_paired = [&](Utterance u) {
    PairedExample ex;
    ex.features.dim = spec.input_dim;
    ex.features.frames = u.words.size() * spec.frames_per_token;
    ex.features.values.reserve(ex.features.frames * spec.input_dim);
    for (const auto &w : u.words) {
      const auto &code = c.codebook[c.word_code[static_cast<std::size_t>(c.vocab.id(w))]];
      for (double v : code)
        ex.features.values.push_back(v + spec.jitter * normal(feat_rng));
    }
    ex.prompt = prompt_id(dominant_language(u));
    ex.utt = std::move(u);
    return ex;
  };

  Rng pair_rng(derive_seed(seed, "paired"));
  auto make_split = [&](const std::string &name, EvalGroup group, std::size_t n_a, std::size_t n_b,
                        std::size_t n_cs) {
    PairedSplit split{name, group, {}};
    std::vector<Utterance> utts;
    make_text(pair_rng, n_a, Lang::A, false, name + "-a-", utts);
    make_text(pair_rng, n_b, Lang::B, false, name + "-b-", utts);
    make_text(pair_rng, n_cs, Lang::A, true, name + "-cs-", utts);
    for (auto &u : utts)
      split.examples.push_back(to_paired(std::move(u)));
    c.splits.push_back(std::move(split));
  };

  const std::size_t dev = spec.dev_per_group, test = spec.test_per_group;
  make_split("pretrain", EvalGroup::Mixed, spec.pretrain_a, spec.pretrain_b, spec.pretrain_cs);
  make_split("train", EvalGroup::Mixed, spec.train_a, spec.train_b, spec.train_cs);
  make_split("dev", EvalGroup::Mixed, dev, dev, dev);
  make_split("test_b", EvalGroup::B, 0, test, 0);
  make_split("test_a", EvalGroup::A, test, 0, 0);
  make_split("test_cs", EvalGroup::CS, 0, 0, test);
  return c;
}

// --------------------------------------------------------------------------
// Files

namespace detail {
inline void ensure_parent(const std::filesystem::path &p) {
  if (p.has_parent_path())
    std::filesystem::create_directories(p.parent_path());
}

inline std::ofstream open_out(const std::filesystem::path &p) {
  ensure_parent(p);
  std::ofstream out(p, std::ios::binary);
  if (!out)
    throw IoError("cannot write " + p.string());
  return out;
}
} // namespace detail

/// Tagged corpus: one `id <TAB> text <TAB> tags` record per line.
inline void write_tagged_corpus(const std::filesystem::path &path, std::span<const Utterance> corpus) {
  auto out = detail::open_out(path);
  for (const auto &u : corpus)
    out << u.id << '\t' << u.text << '\t' << u.tag_string() << '\n';
}

/// Plain corpus: one utterance per line.
inline void write_plain_corpus(const std::filesystem::path &path, std::span<const Utterance> corpus) {
  auto out = detail::open_out(path);
  for (const auto &u : corpus)
    out << u.text << '\n';
}

/// Reads tagged records or plain lines (ids become the line number, tags
/// come from `lexicon` when given, else Unknown).
inline std::vector<Utterance> read_corpus(const std::filesystem::path &path, const Lexicon *lexicon = nullptr) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open corpus " + path.string());
  std::vector<Utterance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    const auto fields = split(line, '\t');
    if (fields.size() >= 3) {
      Utterance u = Utterance::from_text(fields[0], fields[1]);
      const auto tags = split_words(fields[2]);
      if (tags.size() != u.words.size())
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": tag count does not match word count");
      for (std::size_t i = 0; i < tags.size(); ++i)
        u.tags[i] = parse_lang(tags[i].at(0));
      out.push_back(std::move(u));
    } else {
      Utterance u = Utterance::from_text("line-" + std::to_string(lineno), line);
      if (lexicon)
        tag_utterance(u, *lexicon);
      out.push_back(std::move(u));
    }
  }
  return out;
}

inline nlohmann::json example_to_json(const PairedExample &ex, const Vocab &vocab) {
  return {{"id", ex.utt.id},
          {"text", ex.utt.text},
          {"tags", ex.utt.tag_string()},
          {"prompt", vocab.token(ex.prompt)},
          {"frames", ex.features.frames},
          {"dim", ex.features.dim},
          {"features", ex.features.values}};
}

inline PairedExample example_from_json(const nlohmann::json &j, const Vocab &vocab) {
  PairedExample ex;
  ex.utt = Utterance::from_text(j.at("id").get<std::string>(), j.at("text").get<std::string>());
  const auto tags = split_words(j.value("tags", std::string{}));
  if (!tags.empty()) {
    if (tags.size() != ex.utt.words.size())
      throw DataError("record " + ex.utt.id + ": tag count does not match word count");
    for (std::size_t i = 0; i < tags.size(); ++i)
      ex.utt.tags[i] = parse_lang(tags[i].at(0));
  }
  ex.prompt = vocab.id(j.value("prompt", std::string("<|en|>")));
  ex.features.frames = j.at("frames").get<std::size_t>();
  ex.features.dim = j.at("dim").get<std::size_t>();
  ex.features.values = j.at("features").get<std::vector<double>>();
  ex.features.validate();
  return ex;
}

/// Paired dataset directory: manifest.json, vocab.txt and one <split>.jsonl per split.
inline void write_paired_dataset(const std::filesystem::path &dir, const Vocab &vocab,
                                 std::span<const PairedSplit> splits) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {{"format_version", 1}, {"vocab", "vocab.txt"}, {"splits", nlohmann::json::array()}};
  {
    auto out = detail::open_out(dir / "vocab.txt");
    for (const auto &t : vocab.tokens())
      out << t << '\n';
  }
  for (const auto &s : splits) {
    const std::string file = s.name + ".jsonl";
    auto out = detail::open_out(dir / file);
    for (const auto &ex : s.examples)
      out << example_to_json(ex, vocab).dump() << '\n';
    manifest["splits"].push_back(
        {{"name", s.name}, {"file", file}, {"group", eval_group_name(s.group)}, {"count", s.examples.size()}});
  }
  detail::open_out(dir / "manifest.json") << manifest.dump(2) << '\n';
}

inline Vocab read_vocab_file(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string t;
  while (std::getline(in, t))
    if (!t.empty())
      tokens.push_back(t);
  return Vocab::from_tokens(tokens);
}

struct PairedDataset {
  Vocab vocab;
  std::vector<PairedSplit> splits;

  const PairedSplit &split(const std::string &name) const {
    for (const auto &s : splits)
      if (s.name == name)
        return s;
    throw DataError("dataset has no split '" + name + "'");
  }
  bool has_split(const std::string &name) const {
    return std::any_of(splits.begin(), splits.end(), [&](const auto &s) { return s.name == name; });
  }
};

inline PairedDataset read_paired_dataset(const std::filesystem::path &dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf)
    throw IoError("no manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception &e) {
    throw DataError("bad dataset manifest: " + std::string(e.what()));
  }
  PairedDataset ds;
  ds.vocab = read_vocab_file(dir / manifest.value("vocab", std::string("vocab.txt")));
  for (const auto &s : manifest.at("splits")) {
    PairedSplit split{s.at("name").get<std::string>(), parse_eval_group(s.value("group", std::string("mixed"))), {}};
    std::ifstream in(dir / s.at("file").get<std::string>());
    if (!in)
      throw IoError("missing split file for " + split.name);
    std::string line;
    while (std::getline(in, line))
      if (!trim(line).empty())
        split.examples.push_back(example_from_json(nlohmann::json::parse(line), ds.vocab));
    ds.splits.push_back(std::move(split));
  }
  return ds;
}

/// Writes the full generator output: text corpus, lexicons, paired dataset.
inline void write_synthetic_corpus(const std::filesystem::path &dir, const SyntheticCorpus &c) {
  std::filesystem::create_directories(dir);
  write_tagged_corpus(dir / "text.tsv", c.text);
  {
    auto out = detail::open_out(dir / "lexicon_a.txt");
    for (const auto &w : c.words_a)
      out << w << '\n';
  }
  {
    auto out = detail::open_out(dir / "lexicon_b.txt");
    for (const auto &w : c.words_b)
      out << w << '\n';
  }
  write_paired_dataset(dir / "paired", c.vocab, c.splits);
}

} // namespace cslab

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The cslab Authors
#pragma once

/**
 * @file ngram.hpp
 * @brief Count-based n-gram language model over a word vocabulary.
 *
 * Predicted symbols are the vocabulary words plus <eos> and <unk>. Each
 * sentence is padded with order-1 <bos> symbols; counts are taken only at
 * real positions (each word and the final <eos>).
 *
 * Unigrams are add-one smoothed: p1(w) = (c(w) + 1) / (T + V), so an unseen
 * word, <unk> included, gets at least 1 / (T + V).
 *
 * Stupid backoff (default) scores
 *     S(w | h) = c(h w) / c(h)        if c(h w) > 0
 *              = a * S(w | h')        if c(h) > 0, a = 0.4
 *              = S(w | h')            if the context was never seen
 * and reports p(w | h) = S(w | h) / sum_v S(v | h), a proper distribution.
 *
 * Interpolated absolute discounting (option) uses
 *     p(w | h) = max(c(h w) - D, 0) / c(h) + D * N1+(h .) / c(h) * p(w | h').
 */

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "corpus.hpp"
#include "error.hpp"

namespace cslab {

enum class Smoothing { StupidBackoff, AbsoluteDiscount };

inline std::string smoothing_name(Smoothing s) {
  return s == Smoothing::StupidBackoff ? "stupid_backoff" : "absolute_discount";
}

inline Smoothing parse_smoothing(const std::string &s) {
  if (s == "stupid_backoff")
    return Smoothing::StupidBackoff;
  if (s == "absolute_discount")
    return Smoothing::AbsoluteDiscount;
  throw ConfigError("unknown smoothing '" + s + "'");
}

struct NGramOptions {
  std::size_t order = 5;
  Smoothing smoothing = Smoothing::StupidBackoff;
  double backoff = 0.4;  // stupid backoff factor
  double discount = 0.75; // absolute discount D

  void validate() const {
    if (order < 1)
      throw ConfigError("n-gram order must be >= 1");
    if (!(backoff > 0.0 && backoff <= 1.0))
      throw ConfigError("backoff factor must be in (0, 1]");
    if (!(discount > 0.0 && discount < 1.0))
      throw ConfigError("discount must be in (0, 1)");
  }
};

namespace detail {
struct SeqHash {
  std::size_t operator()(const std::vector<int> &v) const {
    std::size_t h = 1469598103934665603ULL;
    for (int x : v)
      h = (h ^ static_cast<std::size_t>(x + 1)) * 1099511628211ULL;
    return h;
  }
};
} // namespace detail

class NGramLM {
public:
  using Counts = std::unordered_map<std::vector<int>, std::uint64_t, detail::SeqHash>;

  NGramLM() = default;

  /// Sentences are word-id sequences in `vocab` ids, without bos/eos.
  static NGramLM train(const std::vector<TokenSequence> &sentences, const Vocab &vocab, NGramOptions opts = {}) {
    opts.validate();
    if (sentences.empty())
      throw DataError("cannot train a language model on an empty corpus");
    NGramLM lm;
    lm.opts_ = opts;
    lm.vocab_ = vocab;
    lm.build_predictable();
    lm.counts_.assign(opts.order, {});
    lm.context_totals_.assign(opts.order, {});
    lm.context_types_.assign(opts.order, {});
    for (const auto &s : sentences) {
      std::vector<int> padded(opts.order - 1, special::bos);
      for (int id : s)
        padded.push_back(lm.map_token(id));
      padded.push_back(special::eos);
      for (std::size_t pos = opts.order - 1; pos < padded.size(); ++pos)
        for (std::size_t k = 1; k <= opts.order; ++k) {
          std::vector<int> gram(padded.begin() + static_cast<std::ptrdiff_t>(pos + 1 - k),
                                padded.begin() + static_cast<std::ptrdiff_t>(pos + 1));
          lm.add_count(k, std::move(gram), 1);
        }
    }
    return lm;
  }

  std::size_t order() const { return opts_.order; }
  const NGramOptions &options() const { return opts_; }
  const Vocab &vocab() const { return vocab_; }
  /// Symbols the model predicts: words, <eos>, <unk>.
  const std::vector<int> &predictable() const { return predictable_; }
  std::uint64_t total_tokens() const { return unigram_total_; }

  /// Raw count of an n-gram (context followed by word).
  std::uint64_t count(const std::vector<int> &gram) const {
    if (gram.empty() || gram.size() > opts_.order)
      return 0;
    const auto &table = counts_[gram.size() - 1];
    auto it = table.find(gram);
    return it == table.end() ? 0 : it->second;
  }

  /// Unsmoothed c(h w) / c(h); 0 for an unseen context.
  double raw_mle(int token, std::vector<int> context) const {
    context = trim_context(std::move(context));
    if (context.empty())
      return unigram_total_ ? static_cast<double>(count({map_token(token)})) / static_cast<double>(unigram_total_) : 0.0;
    const auto ctot = context_total(context);
    if (ctot == 0)
      return 0.0;
    context.push_back(map_token(token));
    return static_cast<double>(count(context)) / static_cast<double>(ctot);
  }

  /// Probabilities over predictable() for the next symbol after `history`
  /// (words already emitted in the sentence; start padding is implied).
  std::vector<double> distribution(std::span<const int> history) const {
    const std::vector<int> ctx = context_for(history);
    std::vector<double> scores(predictable_.size());
    double z = 0.0;
    for (std::size_t i = 0; i < predictable_.size(); ++i) {
      scores[i] = score(predictable_[i], ctx);
      z += scores[i];
    }
    if (opts_.smoothing == Smoothing::StupidBackoff)
      for (auto &s : scores)
        s /= z;
    return scores;
  }

  /// Normalized log-probability of `token` after `history`. Tokens outside
  /// the predictable set score as <unk>.
  double logprob(int token, std::span<const int> history) const {
    const std::vector<int> ctx = context_for(history);
    const int t = map_token(token);
    if (opts_.smoothing == Smoothing::AbsoluteDiscount)
      return std::log(score(t, ctx));
    double z = 0.0;
    for (int v : predictable_)
      z += score(v, ctx);
    return std::log(score(t, ctx) / z);
  }

  /// Log-probabilities indexed by vocabulary id (size vocab().size()). Ids
  /// that are not predictable receive the <unk> value.
  std::vector<double> logprobs_by_id(std::span<const int> history) const {
    const auto dist = distribution(history);
    std::vector<double> out(vocab_.size(), 0.0);
    double unk = 0.0;
    for (std::size_t i = 0; i < predictable_.size(); ++i)
      if (predictable_[i] == special::unk)
        unk = std::log(dist[i]);
    std::fill(out.begin(), out.end(), unk);
    for (std::size_t i = 0; i < predictable_.size(); ++i)
      out[static_cast<std::size_t>(predictable_[i])] = std::log(dist[i]);
    return out;
  }

  /// exp of the mean negative log-probability per predicted symbol (<eos> included).
  double perplexity(const std::vector<TokenSequence> &sentences) const {
    double nll = 0.0;
    std::size_t n = 0;
    for (const auto &s : sentences) {
      std::vector<int> hist;
      for (int id : s) {
        nll -= logprob(id, hist);
        hist.push_back(map_token(id));
        ++n;
      }
      nll -= logprob(special::eos, hist);
      ++n;
    }
    if (n == 0)
      throw DataError("perplexity of an empty corpus is undefined");
    return std::exp(nll / static_cast<double>(n));
  }

  /// The same model with the highest order removed; equal to training an
  /// order-(N-1) model on the same corpus.
  NGramLM truncated(std::size_t new_order) const {
    if (new_order < 1 || new_order > opts_.order)
      throw ArgumentError("truncated order must be in [1, " + std::to_string(opts_.order) + "]");
    NGramLM out = *this;
    out.opts_.order = new_order;
    out.counts_.resize(new_order);
    out.context_totals_.resize(new_order);
    out.context_types_.resize(new_order);
    return out;
  }

  /// Plain text: header, vocabulary, then every n-gram with its count, sorted.
  std::string serialize() const {
    std::ostringstream os;
    os << "cslab-ngram 1\n";
    os << "order " << opts_.order << '\n';
    os << "smoothing " << smoothing_name(opts_.smoothing) << ' ' << std::setprecision(17)
       << (opts_.smoothing == Smoothing::StupidBackoff ? opts_.backoff : opts_.discount) << '\n';
    os << "vocab " << vocab_.size() << '\n';
    for (const auto &t : vocab_.tokens())
      os << t << '\n';
    for (std::size_t k = 1; k <= opts_.order; ++k) {
      std::vector<std::pair<std::vector<int>, std::uint64_t>> rows(counts_[k - 1].begin(), counts_[k - 1].end());
      std::sort(rows.begin(), rows.end());
      os << "ngrams " << k << ' ' << rows.size() << '\n';
      for (const auto &[gram, c] : rows) {
        for (std::size_t i = 0; i < gram.size(); ++i)
          os << (i ? " " : "") << vocab_.token(gram[i]);
        os << '\t' << c << '\n';
      }
    }
    return os.str();
  }

  static NGramLM deserialize(std::istream &in) {
    auto fail = [](const std::string &m) { return DataError("bad language model file: " + m); };
    std::string line, word;
    if (!std::getline(in, line) || line != "cslab-ngram 1")
      throw fail("missing header");
    NGramOptions opts;
    std::size_t vocab_n = 0;
    {
      std::getline(in, line);
      std::istringstream ls(line);
      ls >> word >> opts.order;
      if (word != "order")
        throw fail("expected order");
    }
    {
      std::getline(in, line);
      std::istringstream ls(line);
      std::string name;
      double param = 0.0;
      ls >> word >> name >> param;
      if (word != "smoothing")
        throw fail("expected smoothing");
      opts.smoothing = parse_smoothing(name);
      (opts.smoothing == Smoothing::StupidBackoff ? opts.backoff : opts.discount) = param;
    }
    {
      std::getline(in, line);
      std::istringstream ls(line);
      ls >> word >> vocab_n;
      if (word != "vocab")
        throw fail("expected vocab");
    }
    std::vector<std::string> tokens;
    for (std::size_t i = 0; i < vocab_n && std::getline(in, line); ++i)
      tokens.push_back(line);
    opts.validate();
    NGramLM lm;
    lm.opts_ = opts;
    lm.vocab_ = Vocab::from_tokens(tokens);
    lm.build_predictable();
    lm.counts_.assign(opts.order, {});
    lm.context_totals_.assign(opts.order, {});
    lm.context_types_.assign(opts.order, {});
    for (std::size_t k = 1; k <= opts.order; ++k) {
      std::size_t rows = 0;
      std::getline(in, line);
      std::istringstream ls(line);
      std::size_t kk = 0;
      ls >> word >> kk >> rows;
      if (word != "ngrams" || kk != k)
        throw fail("expected ngrams " + std::to_string(k));
      for (std::size_t r = 0; r < rows; ++r) {
        if (!std::getline(in, line))
          throw fail("truncated n-gram table");
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
          throw fail("n-gram record without count");
        std::vector<int> gram;
        for (const auto &w : split_words(line.substr(0, tab))) {
          if (!lm.vocab_.contains(w))
            throw fail("unknown token '" + w + "'");
          gram.push_back(lm.vocab_.id(w));
        }
        if (gram.size() != k)
          throw fail("n-gram of wrong order");
        lm.add_count(k, std::move(gram), static_cast<std::uint64_t>(parse_int(line.substr(tab + 1), "count")));
      }
    }
    return lm;
  }

  void save(const std::filesystem::path &path) const {
    if (path.has_parent_path())
      std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out)
      throw IoError("cannot write " + path.string());
    out << serialize();
  }

  static NGramLM load(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
      throw IoError("cannot open language model " + path.string());
    return deserialize(in);
  }

private:
  void build_predictable() {
    predictable_ = {special::eos, special::unk};
    for (std::size_t i = special::count; i < vocab_.size(); ++i)
      predictable_.push_back(static_cast<int>(i));
    is_predictable_.assign(vocab_.size(), false);
    for (int p : predictable_)
      is_predictable_[static_cast<std::size_t>(p)] = true;
  }

  int map_token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size() || !is_predictable_[static_cast<std::size_t>(id)])
      return special::unk;
    return id;
  }

  void add_count(std::size_t k, std::vector<int> gram, std::uint64_t c) {
    if (k == 1) {
      unigram_total_ += c;
    } else {
      std::vector<int> ctx(gram.begin(), gram.end() - 1);
      context_totals_[k - 1][ctx] += c;
      if (counts_[k - 1].find(gram) == counts_[k - 1].end())
        ++context_types_[k - 1][ctx];
    }
    counts_[k - 1][std::move(gram)] += c;
  }

  std::uint64_t context_total(const std::vector<int> &ctx) const {
    const auto &t = context_totals_[ctx.size()];
    auto it = t.find(ctx);
    return it == t.end() ? 0 : it->second;
  }

  std::uint64_t context_type_count(const std::vector<int> &ctx) const {
    const auto &t = context_types_[ctx.size()];
    auto it = t.find(ctx);
    return it == t.end() ? 0 : it->second;
  }

  std::vector<int> trim_context(std::vector<int> ctx) const {
    const std::size_t keep = opts_.order - 1;
    if (ctx.size() > keep)
      ctx.erase(ctx.begin(), ctx.end() - static_cast<std::ptrdiff_t>(keep));
    return ctx;
  }

  /// Last order-1 symbols of the padded history.
  std::vector<int> context_for(std::span<const int> history) const {
    std::vector<int> padded(opts_.order - 1, special::bos);
    for (int id : history)
      padded.push_back(map_token(id));
    return trim_context(std::move(padded));
  }

  double unigram(int w) const {
    const double v = static_cast<double>(predictable_.size());
    return (static_cast<double>(count({w})) + 1.0) / (static_cast<double>(unigram_total_) + v);
  }

  /// Unnormalized score for stupid backoff, probability for discounting.
  double score(int w, const std::vector<int> &ctx) const {
    if (ctx.empty())
      return unigram(w);
    const std::vector<int> shorter(ctx.begin() + 1, ctx.end());
    const auto ctot = context_total(ctx);
    if (ctot == 0)
      return score(w, shorter);
    std::vector<int> gram = ctx;
    gram.push_back(w);
    const auto c = count(gram);
    if (opts_.smoothing == Smoothing::StupidBackoff)
      return c > 0 ? static_cast<double>(c) / static_cast<double>(ctot) : opts_.backoff * score(w, shorter);
    const double d = opts_.discount, total = static_cast<double>(ctot);
    return std::max(static_cast<double>(c) - d, 0.0) / total +
           d * static_cast<double>(context_type_count(ctx)) / total * score(w, shorter);
  }

  NGramOptions opts_;
  Vocab vocab_;
  std::vector<int> predictable_;
  std::vector<bool> is_predictable_;
  std::vector<Counts> counts_;         // index k-1 holds k-grams
  std::vector<Counts> context_totals_; // index k-1 holds sum of c(h .) for |h| = k-1
  std::vector<Counts> context_types_;  // index k-1 holds N1+(h .) for |h| = k-1
  std::uint64_t unigram_total_ = 0;
};

inline NGramLM train_lm(const std::vector<TokenSequence> &sentences, const Vocab &vocab, NGramOptions opts = {}) {
  return NGramLM::train(sentences, vocab, opts);
}

inline NGramLM train_lm(std::span<const Utterance> corpus, const Vocab &vocab, NGramOptions opts = {}) {
  std::vector<TokenSequence> sentences;
  sentences.reserve(corpus.size());
  for (const auto &u : corpus)
    sentences.push_back(tokenize(u.text, vocab));
  return NGramLM::train(sentences, vocab, opts);
}

} // namespace cslab

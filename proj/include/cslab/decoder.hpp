// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The cslab Authors
#pragma once

/**
 * @file decoder.hpp
 * @brief Greedy and beam-search decoding with language prompts and n-gram
 *        shallow fusion, plus the fusion-weight grid tuner.
 *
 * Hypothesis score: asr + alpha * lm + beta * words, where asr and lm are
 * summed log-probabilities of every generated token (<eos> included) and
 * words counts generated tokens other than <eos>. Candidates are ranked by
 * score, then lower token id, then earlier parent hypothesis.
 */

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "error.hpp"
#include "model.hpp"
#include "ngram.hpp"
#include "wer.hpp"

namespace cslab {

struct DecodeConfig {
  std::size_t beam = 2;
  std::size_t max_len = 24; // generated tokens, <eos> included
  std::vector<int> prompt;  // force-fed after <bos>
  bool fusion = false;
  double alpha = 0.0;
  double beta = 0.0;

  void validate() const {
    if (beam < 1)
      throw ConfigError("beam size must be >= 1");
    if (max_len < 1)
      throw ConfigError("max_len must be >= 1");
    if (!std::isfinite(alpha) || !std::isfinite(beta))
      throw ConfigError("alpha and beta must be finite");
  }
};

struct Hypothesis {
  TokenSequence tokens; // generated tokens only
  double asr = 0.0;
  double lm = 0.0;
  double score = 0.0;
  std::size_t words = 0;
  bool finished = false;
};

struct DecodeResult {
  Hypothesis best;
  bool truncated = false; // no hypothesis reached <eos> within max_len
};

/// Log-softmax of one logits row.
inline std::vector<double> log_softmax_row(std::span<const double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (double v : row)
    z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i)
    out[i] = row[i] - lz;
  return out;
}

/// Next-token scorer for the acoustic model: recomputes the decoder over
/// [<bos>, prompt..., generated...] with a fixed encoder memory.
class AsrScorer {
public:
  AsrScorer(const ModelParams &p, Tensor memory, std::vector<int> prefix)
      : p_(p), memory_(std::move(memory)), prefix_(std::move(prefix)) {}

  AsrScorer(const ModelParams &p, const EncoderFeatures &x, std::span<const int> prompt, int bos = special::bos)
      : p_(p), prefix_{bos} {
    ComputeGraph g(false);
    memory_ = encode(g, p, x);
    prefix_.insert(prefix_.end(), prompt.begin(), prompt.end());
  }

  std::vector<double> next(std::span<const int> generated) const {
    std::vector<int> input = prefix_;
    input.insert(input.end(), generated.begin(), generated.end());
    ComputeGraph g(false);
    const Tensor logits = decoder_logits(g, p_, input, memory_);
    const std::size_t v = logits.cols();
    return log_softmax_row(logits.data().subspan((logits.rows() - 1) * v, v));
  }

  std::size_t vocab_size() const { return p_.hp.vocab_size; }
  std::size_t max_generated() const {
    return p_.hp.max_tokens > prefix_.size() ? p_.hp.max_tokens - prefix_.size() + 1 : 0;
  }

private:
  const ModelParams &p_;
  Tensor memory_;
  std::vector<int> prefix_;
};

/// Next-token scorer backed by an n-gram model over the same vocabulary ids.
class LmScorer {
public:
  explicit LmScorer(const NGramLM &lm) : lm_(lm) {}
  std::vector<double> next(std::span<const int> generated) const { return lm_.logprobs_by_id(generated); }

private:
  const NGramLM &lm_;
};

/// Scorer that contributes nothing; used when fusion is off.
struct NullScorer {
  std::vector<double> next(std::span<const int>) const { return {}; }
};

/// Beam search over any pair of scorers exposing next(generated) -> log-probs.
/// With beam = 1 and fusion off this is greedy argmax decoding.
template <class Asr, class Lm>
DecodeResult beam_search(const Asr &asr, const Lm *lm, const DecodeConfig &cfg, std::size_t vocab_size,
                         int eos = special::eos) {
  cfg.validate();
  const bool fuse = cfg.fusion && lm != nullptr;
  if (cfg.fusion && lm == nullptr)
    throw ConfigError("fusion enabled but no language model supplied");
  std::vector<Hypothesis> alive(1), finished;

  struct Candidate {
    double score;
    int token;
    std::size_t parent;
  };

  for (std::size_t step = 0; step < cfg.max_len && !alive.empty(); ++step) {
    std::vector<Candidate> cands;
    std::vector<std::vector<double>> asr_lp(alive.size()), lm_lp(alive.size());
    for (std::size_t h = 0; h < alive.size(); ++h) {
      asr_lp[h] = asr.next(alive[h].tokens);
      if (asr_lp[h].size() != vocab_size)
        throw ShapeError("acoustic scorer returned the wrong vocabulary size");
      if (fuse) {
        lm_lp[h] = lm->next(alive[h].tokens);
        if (lm_lp[h].size() != vocab_size)
          throw ShapeError("language model scorer returned the wrong vocabulary size");
      }
      for (std::size_t v = 0; v < vocab_size; ++v) {
        const int tok = static_cast<int>(v);
        const double a = alive[h].asr + asr_lp[h][v];
        const double l = fuse ? alive[h].lm + lm_lp[h][v] : 0.0;
        const std::size_t words = alive[h].words + (tok == eos ? 0 : 1);
        const double s = fuse ? a + cfg.alpha * l + cfg.beta * static_cast<double>(words) : a;
        cands.push_back({s, tok, h});
      }
    }
    const std::size_t keep = std::min(cfg.beam, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate &x, const Candidate &y) {
                        if (x.score != y.score)
                          return x.score > y.score;
                        if (x.token != y.token)
                          return x.token < y.token;
                        return x.parent < y.parent;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const auto &c = cands[i];
      const auto &parent = alive[c.parent];
      Hypothesis h;
      h.tokens = parent.tokens;
      h.tokens.push_back(c.token);
      h.asr = parent.asr + asr_lp[c.parent][static_cast<std::size_t>(c.token)];
      h.lm = fuse ? parent.lm + lm_lp[c.parent][static_cast<std::size_t>(c.token)] : 0.0;
      h.words = parent.words + (c.token == eos ? 0 : 1);
      h.score = c.score;
      h.finished = c.token == eos;
      (h.finished ? finished : next).push_back(std::move(h));
    }
    alive = std::move(next);
  }

  DecodeResult r;
  const auto &pool = finished.empty() ? alive : finished;
  r.truncated = finished.empty();
  if (pool.empty())
    throw Error("beam search produced no hypothesis");
  std::size_t best = 0;
  for (std::size_t i = 1; i < pool.size(); ++i)
    if (pool[i].score > pool[best].score)
      best = i;
  r.best = pool[best];
  return r;
}

/// Generated word tokens with <eos> and special tokens removed.
inline std::vector<int> hypothesis_words(const Hypothesis &h) {
  std::vector<int> out;
  for (int t : h.tokens)
    if (!Vocab::is_special(t))
      out.push_back(t);
  return out;
}

/// Decodes one utterance with the acoustic model and optional fusion LM.
inline DecodeResult decode(const ModelParams &p, const EncoderFeatures &x, const DecodeConfig &cfg,
                           const NGramLM *lm = nullptr) {
  for (int t : cfg.prompt)
    if (t < 0 || static_cast<std::size_t>(t) >= p.hp.vocab_size)
      throw ConfigError("prompt token " + std::to_string(t) + " is outside the vocabulary");
  AsrScorer asr(p, x, cfg.prompt);
  DecodeConfig c = cfg;
  c.max_len = std::min(cfg.max_len, asr.max_generated());
  if (c.max_len == 0)
    throw LengthError("prompt leaves no room for generated tokens");
  if (cfg.fusion) {
    if (lm == nullptr)
      throw ConfigError("fusion enabled but no language model supplied");
    if (lm->vocab().size() != p.hp.vocab_size)
      throw IncompatibleError("language model vocabulary does not match the acoustic model");
    LmScorer ls(*lm);
    return beam_search(asr, &ls, c, p.hp.vocab_size);
  }
  return beam_search<AsrScorer, NullScorer>(asr, nullptr, c, p.hp.vocab_size);
}

enum class PromptMode { Train, Eval };

/// Training mode: the dominant language's token by lexicon word count (a tie
/// goes to <|en|>). Evaluation mode: the combined <|ms|><|en|> prompt.
inline std::vector<int> tag_prompt(const Utterance &u, const Lexicon &lexicon, PromptMode mode = PromptMode::Train) {
  if (u.words.empty())
    throw DataError("cannot choose a prompt for an empty utterance");
  if (mode == PromptMode::Eval)
    return {special::lang_ms, special::lang_en};
  std::size_t a = 0, b = 0;
  for (const auto &w : u.words) {
    const Lang l = lexicon.lookup(w);
    a += l == Lang::A;
    b += l == Lang::B;
  }
  return {a > b ? special::lang_ms : special::lang_en};
}

/// "ms,en" -> {<|ms|>, <|en|>}; "none" or "" -> no prompt.
inline std::vector<int> parse_prompt(const std::string &spec) {
  std::vector<int> out;
  if (spec.empty() || spec == "none")
    return out;
  for (const auto &part : split(spec, ',')) {
    if (part == "ms")
      out.push_back(special::lang_ms);
    else if (part == "en")
      out.push_back(special::lang_en);
    else
      throw ConfigError("unknown prompt language '" + part + "' (expected ms or en)");
  }
  return out;
}

inline const std::vector<double> &default_alpha_grid() {
  static const std::vector<double> g = {0.0, 0.033, 0.066, 0.1};
  return g;
}

inline const std::vector<double> &default_beta_grid() {
  static const std::vector<double> g = {-0.2, -0.066, 0.066, 0.2};
  return g;
}

struct FusionPoint {
  double alpha = 0.0;
  double beta = 0.0;
  double wer = 0.0;
  std::size_t errors = 0;
  std::size_t ref_words = 0;
  std::size_t failures = 0;
};

struct FusionTuning {
  double alpha = 0.0;
  double beta = 0.0;
  double wer = 0.0;
  std::vector<FusionPoint> table;

  std::string to_text() const {
    std::ostringstream os;
    os << std::right << std::setw(8) << "alpha" << std::setw(8) << "beta" << std::setw(10) << "WER" << std::setw(10)
       << "failed" << '\n';
    for (const auto &p : table)
      os << std::fixed << std::setprecision(3) << std::setw(8) << p.alpha << std::setw(8) << p.beta
         << std::setprecision(2) << std::setw(10) << p.wer << std::setw(10) << p.failures << '\n';
    os << std::fixed << std::setprecision(3) << "best alpha=" << alpha << " beta=" << beta << std::setprecision(2)
       << " WER=" << wer << '\n';
    return os.str();
  }
};

/// Decoded text for a hypothesis: word tokens joined by spaces.
inline std::string hypothesis_text(const Hypothesis &h, const Vocab &vocab) {
  const auto ids = hypothesis_words(h);
  return detokenize(ids, vocab, true);
}

/// Corpus WER of one decoding configuration over pre-encoded utterances.
/// Failing utterances are counted and skipped.
inline FusionPoint score_fusion_point(const ModelParams &p, const std::vector<AsrScorer> &scorers,
                                      std::span<const PairedExample> set, const Vocab &vocab,
                                      const DecodeConfig &cfg, const NGramLM *lm) {
  FusionPoint pt{cfg.alpha, cfg.beta, 0.0, 0, 0, 0};
  WerBreakdown total;
  for (std::size_t i = 0; i < set.size(); ++i) {
    try {
      DecodeConfig c = cfg;
      c.max_len = std::min(cfg.max_len, scorers[i].max_generated());
      DecodeResult r;
      if (cfg.fusion) {
        LmScorer ls(*lm);
        r = beam_search(scorers[i], &ls, c, p.hp.vocab_size);
      } else {
        r = beam_search<AsrScorer, NullScorer>(scorers[i], nullptr, c, p.hp.vocab_size);
      }
      total += wer_text(set[i].utt.text, hypothesis_text(r.best, vocab));
    } catch (const std::exception &) {
      ++pt.failures;
    }
  }
  pt.errors = total.errors();
  pt.ref_words = total.ref_words;
  pt.wer = total.ref_words ? total.wer() : std::numeric_limits<double>::infinity();
  return pt;
}

/// Grid search over (alpha, beta) on a dev set. The (0, 0) point is always
/// evaluated, so the result never scores worse than decoding without the LM.
/// Ties go to the smaller alpha, then the smaller beta.
inline FusionTuning tune_fusion(const ModelParams &p, const NGramLM &lm, std::span<const PairedExample> dev,
                                const Vocab &vocab, std::vector<double> alpha_grid = default_alpha_grid(),
                                std::vector<double> beta_grid = default_beta_grid(), DecodeConfig base = {}) {
  if (dev.empty())
    throw DataError("fusion tuning needs a non-empty dev set");
  if (alpha_grid.empty() || beta_grid.empty())
    throw ConfigError("fusion grids must be non-empty");
  if (lm.vocab().size() != p.hp.vocab_size)
    throw IncompatibleError("language model vocabulary does not match the acoustic model");
  std::vector<AsrScorer> scorers;
  scorers.reserve(dev.size());
  for (const auto &ex : dev)
    scorers.emplace_back(p, ex.features, base.prompt);

  std::vector<std::pair<double, double>> points;
  for (double a : alpha_grid)
    for (double b : beta_grid)
      points.emplace_back(a, b);
  if (std::find(points.begin(), points.end(), std::make_pair(0.0, 0.0)) == points.end())
    points.emplace_back(0.0, 0.0);
  std::sort(points.begin(), points.end());

  FusionTuning out;
  std::optional<std::size_t> best;
  for (const auto &[a, b] : points) {
    DecodeConfig c = base;
    c.fusion = true;
    c.alpha = a;
    c.beta = b;
    out.table.push_back(score_fusion_point(p, scorers, dev, vocab, c, &lm));
    if (!best || out.table.back().wer < out.table[*best].wer)
      best = out.table.size() - 1;
  }
  out.alpha = out.table[*best].alpha;
  out.beta = out.table[*best].beta;
  out.wer = out.table[*best].wer;
  return out;
}

} // namespace cslab

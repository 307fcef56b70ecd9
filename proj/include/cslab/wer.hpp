// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The cslab Authors
#pragma once

/**
 * @file wer.hpp
 * @brief Word error rate, text normalization and report arithmetic.
 */

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "error.hpp"

namespace cslab {

struct WerBreakdown {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t ref_words = 0;

  std::size_t errors() const { return substitutions + deletions + insertions; }
  double wer() const {
    if (ref_words == 0)
      throw DataError("WER is undefined for an empty reference");
    return 100.0 * static_cast<double>(errors()) / static_cast<double>(ref_words);
  }

  WerBreakdown &operator+=(const WerBreakdown &o) {
    substitutions += o.substitutions;
    deletions += o.deletions;
    insertions += o.insertions;
    ref_words += o.ref_words;
    return *this;
  }
};

/// Minimal edit alignment with unit costs. Among equal-cost alignments the
/// backtrace prefers substitution (or match), then deletion, then insertion.
template <class T>
WerBreakdown edit_alignment(const std::vector<T> &ref, const std::vector<T> &hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t & { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i)
    at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j)
    at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      at(i, j) = std::min({at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1), at(i - 1, j) + 1, at(i, j - 1) + 1});
  WerBreakdown b;
  b.ref_words = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      b.substitutions += ref[i - 1] == hyp[j - 1] ? 0 : 1;
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++b.deletions;
      --i;
    } else {
      ++b.insertions;
      --j;
    }
  }
  return b;
}

inline WerBreakdown wer(const std::vector<std::string> &ref, const std::vector<std::string> &hyp) {
  if (ref.empty())
    throw DataError("WER is undefined for an empty reference");
  return edit_alignment(ref, hyp);
}

/// Lowercase, drop <|...|> prompt tokens, strip ASCII punctuation, collapse
/// whitespace.
inline std::string normalize_text(std::string_view text) {
  std::vector<std::string> kept;
  for (auto w : split_words(text)) {
    if (is_prompt_token(w))
      continue;
    std::string clean;
    for (char c : w) {
      const auto uc = static_cast<unsigned char>(c);
      if (std::ispunct(uc))
        continue;
      clean.push_back(static_cast<char>(std::tolower(uc)));
    }
    if (!clean.empty())
      kept.push_back(clean);
  }
  return join_words(kept);
}

inline WerBreakdown wer_text(std::string_view ref, std::string_view hyp) {
  return wer(split_words(normalize_text(ref)), split_words(normalize_text(hyp)));
}

/// Half-up rounding to `decimals` places. A relative nudge of 1e-9 absorbs
/// binary representation error so that e.g. 20.565 rounds to 20.57.
inline double round_half_up(double x, int decimals = 2) {
  const double scale = std::pow(10.0, decimals);
  const double v = x * scale;
  return std::floor(v + 0.5 + 1e-9 * std::max(1.0, std::abs(v))) / scale;
}

/// 100 * (baseline - updated) / baseline, unrounded.
inline double rel_reduction(double baseline, double updated) {
  if (!(baseline > 0.0))
    throw ArgumentError("relative reduction needs a positive baseline");
  return 100.0 * (baseline - updated) / baseline;
}

inline double mean(std::span<const double> v) {
  if (v.empty())
    throw DataError("mean of an empty list");
  double s = 0.0;
  for (double x : v)
    s += x;
  return s / static_cast<double>(v.size());
}

} // namespace cslab

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The cslab Authors
#pragma once

/**
 * @file eval.hpp
 * @brief Multi-model evaluation reports: per-set WER, per-group averages and
 *        an overall average, as aligned text and CSV.
 *
 * A group average is the mean of its sets' WERs; the overall average is the
 * unweighted mean of the unrounded group averages. Cells are rounded half-up
 * to two decimals only when printed.
 */

#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "decoder.hpp"
#include "model.hpp"
#include "ngram.hpp"
#include "wer.hpp"

namespace cslab {

struct ReportColumn {
  std::string group; // e.g. "EN", "BM", "CS"
  std::string set;   // test set name
};

struct ReportRow {
  std::string model;
  std::vector<std::optional<double>> cells; // parallel to EvalReport::columns
  std::vector<std::string> failures;
};

struct EvalReport {
  std::vector<ReportColumn> columns;
  std::vector<ReportRow> rows;

  std::vector<std::string> groups() const {
    std::vector<std::string> out;
    for (const auto &c : columns)
      if (std::find(out.begin(), out.end(), c.group) == out.end())
        out.push_back(c.group);
    return out;
  }

  /// Mean of the group's cells; empty when any cell of the group is missing.
  std::optional<double> group_average(const ReportRow &row, const std::string &group) const {
    std::vector<double> vals;
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i].group == group) {
        if (!row.cells[i])
          return std::nullopt;
        vals.push_back(*row.cells[i]);
      }
    if (vals.empty())
      return std::nullopt;
    return mean(vals);
  }

  std::optional<double> overall_average(const ReportRow &row) const {
    std::vector<double> vals;
    for (const auto &g : groups()) {
      auto v = group_average(row, g);
      if (!v)
        return std::nullopt;
      vals.push_back(*v);
    }
    if (vals.empty())
      return std::nullopt;
    return mean(vals);
  }

  const ReportRow &row(const std::string &model) const {
    for (const auto &r : rows)
      if (r.model == model)
        return r;
    throw DataError("report has no row for " + model);
  }

  std::string to_text() const {
    auto cell = [](const std::optional<double> &v) {
      if (!v)
        return std::string("-");
      std::ostringstream os;
      os << std::fixed << std::setprecision(2) << round_half_up(*v, 2);
      return os.str();
    };
    std::size_t name_w = 5;
    for (const auto &r : rows)
      name_w = std::max(name_w, r.model.size() + 2);
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(name_w)) << "Model";
    const auto gs = groups();
    for (const auto &g : gs) {
      for (const auto &c : columns)
        if (c.group == g)
          os << std::right << std::setw(12) << c.set;
      os << std::right << std::setw(12) << ("Avg. " + g);
    }
    os << std::right << std::setw(10) << "Avg." << '\n';
    for (const auto &r : rows) {
      os << std::left << std::setw(static_cast<int>(name_w)) << r.model;
      for (const auto &g : gs) {
        for (std::size_t i = 0; i < columns.size(); ++i)
          if (columns[i].group == g)
            os << std::right << std::setw(12) << cell(r.cells[i]);
        os << std::right << std::setw(12) << cell(group_average(r, g));
      }
      os << std::right << std::setw(10) << cell(overall_average(r)) << '\n';
    }
    for (const auto &r : rows)
      for (const auto &f : r.failures)
        os << "# " << r.model << ": " << f << '\n';
    return os.str();
  }

  std::string to_csv() const {
    auto cell = [](const std::optional<double> &v) {
      if (!v)
        return std::string();
      std::ostringstream os;
      os << std::fixed << std::setprecision(2) << round_half_up(*v, 2);
      return os.str();
    };
    std::ostringstream os;
    os << "model";
    const auto gs = groups();
    for (const auto &g : gs) {
      for (const auto &c : columns)
        if (c.group == g)
          os << ',' << c.set;
      os << ",avg_" << g;
    }
    os << ",avg\n";
    for (const auto &r : rows) {
      os << r.model;
      for (const auto &g : gs) {
        for (std::size_t i = 0; i < columns.size(); ++i)
          if (columns[i].group == g)
            os << ',' << cell(r.cells[i]);
        os << ',' << cell(group_average(r, g));
      }
      os << ',' << cell(overall_average(r)) << '\n';
    }
    return os.str();
  }
};

struct TestSet {
  std::string group;
  std::string name;
  std::vector<PairedExample> examples;
};

struct ModelUnderTest {
  std::string name;
  const ModelParams *params;
};

/// Corpus WER of a model on one set: total edits over total reference words.
inline double corpus_wer(const ModelParams &p, std::span<const PairedExample> set, const Vocab &vocab,
                         const DecodeConfig &cfg, const NGramLM *lm = nullptr) {
  if (set.empty())
    throw DataError("empty test set");
  WerBreakdown total;
  for (const auto &ex : set)
    total += wer_text(ex.utt.text, hypothesis_text(decode(p, ex.features, cfg, lm).best, vocab));
  return total.wer();
}

/// One row per model, one column per test set. A cell whose evaluation
/// throws is left missing and the error is recorded on the row.
inline EvalReport eval_report(const std::vector<ModelUnderTest> &models, const std::vector<TestSet> &sets,
                              const Vocab &vocab, const DecodeConfig &cfg, const NGramLM *lm = nullptr) {
  EvalReport rep;
  for (const auto &s : sets)
    rep.columns.push_back({s.group, s.name});
  for (const auto &m : models) {
    ReportRow row{m.name, {}, {}};
    for (const auto &s : sets) {
      try {
        row.cells.push_back(corpus_wer(*m.params, s.examples, vocab, cfg, lm));
      } catch (const std::exception &e) {
        row.cells.push_back(std::nullopt);
        row.failures.push_back(s.name + ": " + e.what());
      }
    }
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

} // namespace cslab

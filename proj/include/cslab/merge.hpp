// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The cslab Authors
#pragma once

/**
 * @file merge.hpp
 * @brief Linear checkpoint interpolation and merge-ratio sweeps.
 *
 * merge(base, tuned, r) = (1 - r) * base + r * tuned, uniformly over every
 * parameter. With r = 0.4 the base contributes 0.6.
 */

#include <cmath>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "model.hpp"

namespace cslab {

inline constexpr double default_merge_ratio = 0.4;

inline const std::vector<double> &default_sweep_ratios() {
  static const std::vector<double> r = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
  return r;
}

inline void check_mergeable(const ModelParams &base, const ModelParams &tuned) {
  if (!(base.hp == tuned.hp))
    throw IncompatibleError("cannot merge models with different hyperparameters");
  if (base.vocab != tuned.vocab)
    throw IncompatibleError("cannot merge models with different vocabularies");
  const auto a = base.entries(), b = tuned.entries();
  if (a.size() != b.size())
    throw IncompatibleError("cannot merge: parameter sets differ in size");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].group != b[i].group)
      throw IncompatibleError("cannot merge: parameter " + a[i].name + " vs " + b[i].name);
    if (a[i].value.shape() != b[i].value.shape())
      throw IncompatibleError("cannot merge: shape mismatch for " + a[i].name);
  }
}

/// Elementwise (1 - ratio) * base + ratio * tuned. The endpoints copy the
/// corresponding parent exactly. Lineage continues the tuned parent's and
/// records both parents' full lineages.
inline ModelParams merge(const ModelParams &base, const ModelParams &tuned, double ratio,
                         const std::string &base_id = "base", const std::string &tuned_id = "tuned") {
  if (!(ratio >= 0.0 && ratio <= 1.0))
    throw ArgumentError("merge ratio must be in [0, 1]");
  check_mergeable(base, tuned);
  ModelParams out = tuned;
  const auto b = base.entries();
  auto o = out.entries();
  for (std::size_t i = 0; i < o.size(); ++i) {
    auto dst = o[i].value.mutable_data();
    const auto bv = b[i].value.data();
    const auto tv = tuned.entries()[i].value.data();
    for (std::size_t k = 0; k < dst.size(); ++k) {
      if (ratio == 0.0)
        dst[k] = bv[k];
      else if (ratio == 1.0)
        dst[k] = tv[k];
      else
        dst[k] = (1.0 - ratio) * bv[k] + ratio * tv[k];
    }
  }
  out.lineage.push_back({{"merge",
                          {{"ratio", ratio},
                           {"base_id", base_id},
                           {"tuned_id", tuned_id},
                           {"base", base.lineage},
                           {"tuned", tuned.lineage}}}});
  return out;
}

/// Named metric values produced by an evaluation callback, in column order.
using Metrics = std::vector<std::pair<std::string, double>>;

struct SweepRow {
  double ratio = 0.0;
  std::vector<std::optional<double>> values; // parallel to SweepTable::metrics
  std::string error;                         // non-empty when evaluation failed
};

struct SweepTable {
  std::vector<std::string> metrics;
  std::vector<SweepRow> rows;

  std::string to_text() const {
    std::ostringstream os;
    os << std::left << std::setw(14) << "Merging Ratio";
    for (const auto &m : metrics)
      os << std::right << std::setw(10) << m;
    os << '\n';
    for (const auto &r : rows) {
      std::ostringstream ratio;
      ratio << std::fixed << std::setprecision(1) << r.ratio;
      os << std::left << std::setw(14) << ratio.str();
      for (std::size_t i = 0; i < metrics.size(); ++i) {
        os << std::right << std::setw(10);
        if (i < r.values.size() && r.values[i]) {
          std::ostringstream v;
          v << std::fixed << std::setprecision(2) << *r.values[i];
          os << v.str();
        } else {
          os << "-";
        }
      }
      if (!r.error.empty())
        os << "  (" << r.error << ")";
      os << '\n';
    }
    return os.str();
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "ratio";
    for (const auto &m : metrics)
      os << ',' << m;
    os << ",error\n";
    for (const auto &r : rows) {
      os << r.ratio;
      for (std::size_t i = 0; i < metrics.size(); ++i) {
        os << ',';
        if (i < r.values.size() && r.values[i])
          os << std::fixed << std::setprecision(4) << *r.values[i] << std::defaultfloat;
      }
      std::string err = r.error;
      std::replace(err.begin(), err.end(), ',', ';');
      os << ',' << err << '\n';
    }
    return os.str();
  }
};

/// Evaluates eval_fn on merge(base, tuned, r) for every r. A failing row is
/// recorded with its error and the sweep continues.
inline SweepTable ratio_sweep(const ModelParams &base, const ModelParams &tuned, const std::vector<double> &ratios,
                              const std::function<Metrics(const ModelParams &)> &eval_fn) {
  for (double r : ratios)
    if (!(r >= 0.0 && r <= 1.0))
      throw ArgumentError("sweep ratios must lie in [0, 1]");
  check_mergeable(base, tuned);
  SweepTable table;
  for (double r : ratios) {
    SweepRow row{r, {}, {}};
    try {
      const Metrics m = eval_fn(merge(base, tuned, r));
      if (table.metrics.empty())
        for (const auto &[name, v] : m)
          table.metrics.push_back(name);
      row.values.assign(table.metrics.size(), std::nullopt);
      for (const auto &[name, v] : m) {
        auto it = std::find(table.metrics.begin(), table.metrics.end(), name);
        if (it != table.metrics.end())
          row.values[static_cast<std::size_t>(it - table.metrics.begin())] = v;
      }
    } catch (const std::exception &e) {
      row.error = e.what();
    }
    table.rows.push_back(std::move(row));
  }
  for (auto &row : table.rows)
    row.values.resize(table.metrics.size());
  return table;
}

} // namespace cslab

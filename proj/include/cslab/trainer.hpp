// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The cslab Authors
#pragma once

/**
 * @file trainer.hpp
 * @brief Staged training: freeze masks, AdamW, warmup + cosine schedule and
 *        the per-stage training loop.
 *
 * Stages:
 *   0  pretraining of the "original" model on paired data, all groups
 *   1  text-only internal-LM adaptation, zeroed encoder; SA, FFN, output train
 *   2  cross-attention alignment on paired data; CA trains
 *   3  full fine-tuning on paired data; everything trains
 */

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "augment.hpp"
#include "config.hpp"
#include "error.hpp"
#include "model.hpp"
#include "random.hpp"

namespace cslab {

struct FreezeMask {
  std::set<ParamGroup> trainable;

  static FreezeMask for_stage(int stage) {
    using G = ParamGroup;
    switch (stage) {
    case 0:
    case 3: return {{all_param_groups.begin(), all_param_groups.end()}};
    case 1: return {{G::DecoderSelfAttn, G::DecoderFFN, G::OutputProj}};
    case 2: return {{G::DecoderCrossAttn}};
    }
    throw ArgumentError("no freeze mask for stage " + std::to_string(stage));
  }

  bool contains(ParamGroup g) const { return trainable.count(g) != 0; }
  bool empty() const { return trainable.empty(); }
};

inline std::string stage_label(int stage) { return stage == 0 ? "pretrain" : "stage" + std::to_string(stage); }

/// Lineage label a stage expects its input model to end with; empty means any.
inline std::string expected_predecessor(int stage) {
  switch (stage) {
  case 2: return "stage1";
  case 3: return "stage2";
  default: return {};
  }
}

struct StageConfig {
  int stage = 1;
  double peak_lr = 2e-5;
  double warmup_fraction = 0.1;
  /// 0 derives the count from epochs, batch size and dataset size.
  std::size_t total_updates = 0;
  std::size_t batch_size = 16;
  double epochs = 3.0;
  bool augment = false;
  AugmentPolicy augment_policy;
  std::uint64_t seed = 0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  double clip_norm = 1.0; // 0 disables clipping
  /// Stage-1 language-balanced sampling: group weight proportional to size^(1/T).
  double sampling_temperature = 1.0;
  bool allow_lineage_mismatch = false;

  /// Defaults keep the published fractions: 10% warmup for stage 1, 20% for
  /// stages 2 and 3; 3, 1 and 2 epochs.
  static StageConfig defaults_for_stage(int stage) {
    StageConfig c;
    c.stage = stage;
    switch (stage) {
    case 0: c.warmup_fraction = 0.1; c.epochs = 4.0; break;
    case 1: c.warmup_fraction = 0.1; c.epochs = 3.0; break;
    case 2: c.warmup_fraction = 0.2; c.epochs = 1.0; break;
    case 3: c.warmup_fraction = 0.2; c.epochs = 2.0; break;
    default: throw ArgumentError("stage must be 0..3, got " + std::to_string(stage));
    }
    return c;
  }

  void validate() const {
    if (stage < 0 || stage > 3)
      throw ConfigError("stage must be 0..3");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0))
      throw ConfigError("warmup_fraction must be in [0, 1)");
    if (!(peak_lr > 0.0) || !std::isfinite(peak_lr))
      throw ConfigError("peak_lr must be positive");
    if (batch_size < 1)
      throw ConfigError("batch_size must be >= 1");
    if (total_updates == 0 && !(epochs > 0.0))
      throw ConfigError("either total_updates or epochs must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_eps > 0.0))
      throw ConfigError("invalid optimizer betas or epsilon");
    if (weight_decay < 0.0 || clip_norm < 0.0)
      throw ConfigError("weight_decay and clip_norm must be >= 0");
    if (!(sampling_temperature > 0.0))
      throw ConfigError("sampling_temperature must be positive");
    augment_policy.validate();
  }

  static const std::set<std::string> &known_keys() {
    static const std::set<std::string> k = {
        "stage",        "peak_lr",      "warmup_fraction", "total_updates", "batch_size",
        "epochs",       "augment",      "time_masks",      "time_width",    "feature_masks",
        "feature_width", "snr_db",      "seed",            "weight_decay",  "beta1",
        "beta2",        "adam_eps",     "clip_norm",       "sampling_temperature", "allow_lineage_mismatch"};
    return k;
  }

  /// Keys override the stage defaults; unknown keys are rejected.
  static StageConfig from_config(const KeyValueConfig &cfg, int stage) {
    return from_config(cfg, stage, defaults_for_stage(stage));
  }

  /// Keys override `c`.
  static StageConfig from_config(const KeyValueConfig &cfg, int stage, StageConfig c) {
    cfg.validate_keys(known_keys());
    if (cfg.has("stage") && cfg.get_int("stage", stage) != stage)
      throw ConfigError("config is for stage " + cfg.get_string("stage", "") + ", not stage " + std::to_string(stage));
    c.peak_lr = cfg.get_double("peak_lr", c.peak_lr);
    c.warmup_fraction = cfg.get_double("warmup_fraction", c.warmup_fraction);
    c.total_updates = cfg.get_size("total_updates", c.total_updates);
    c.batch_size = cfg.get_size("batch_size", c.batch_size);
    c.epochs = cfg.get_double("epochs", c.epochs);
    c.augment = cfg.get_bool("augment", c.augment);
    c.augment_policy.time_masks = cfg.get_size("time_masks", c.augment_policy.time_masks);
    c.augment_policy.time_width = cfg.get_size("time_width", c.augment_policy.time_width);
    c.augment_policy.feature_masks = cfg.get_size("feature_masks", c.augment_policy.feature_masks);
    c.augment_policy.feature_width = cfg.get_size("feature_width", c.augment_policy.feature_width);
    c.augment_policy.snr_db = cfg.get_double_list("snr_db", c.augment_policy.snr_db);
    c.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<long long>(c.seed)));
    c.weight_decay = cfg.get_double("weight_decay", c.weight_decay);
    c.beta1 = cfg.get_double("beta1", c.beta1);
    c.beta2 = cfg.get_double("beta2", c.beta2);
    c.adam_eps = cfg.get_double("adam_eps", c.adam_eps);
    c.clip_norm = cfg.get_double("clip_norm", c.clip_norm);
    c.sampling_temperature = cfg.get_double("sampling_temperature", c.sampling_temperature);
    c.allow_lineage_mismatch = cfg.get_bool("allow_lineage_mismatch", c.allow_lineage_mismatch);
    c.validate();
    return c;
  }

  std::size_t resolved_updates(std::size_t dataset_size) const {
    if (total_updates > 0)
      return total_updates;
    if (dataset_size == 0)
      throw DataError("cannot derive update count from an empty dataset");
    const double n = std::ceil(epochs * static_cast<double>(dataset_size) / static_cast<double>(batch_size));
    return std::max<std::size_t>(1, static_cast<std::size_t>(n));
  }

  std::size_t warmup_steps() const {
    return static_cast<std::size_t>(std::floor(warmup_fraction * static_cast<double>(total_updates)));
  }
};

/// Linear warmup from 0 to peak over W = floor(warmup_fraction * total)
/// steps, then half-cosine decay to 0 at step = total.
inline double lr_at(const StageConfig &cfg, std::size_t step) {
  const std::size_t total = cfg.total_updates;
  if (total < 1)
    throw ArgumentError("lr_at needs total_updates >= 1");
  if (step > total)
    throw ArgumentError("step " + std::to_string(step) + " beyond total " + std::to_string(total));
  const std::size_t w = cfg.warmup_steps();
  if (step < w)
    return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(w);
  if (step == total)
    return 0.0;
  const double progress = static_cast<double>(step - w) / static_cast<double>(total - w);
  return std::max(0.0, cfg.peak_lr * 0.5 * (1.0 + std::cos(M_PI * progress)));
}

/// Marks the masked groups trainable and everything else read-only for the
/// lifetime of the view; the previous flags are restored on destruction.
class FreezeView {
public:
  FreezeView(ModelParams &params, const FreezeMask &mask) : params_(params) {
    if (mask.empty())
      throw ConfigError("freeze mask selects no parameter group");
    for (auto &e : params_.entries()) {
      saved_.push_back(e.value.requires_grad());
      const bool train = mask.contains(e.group);
      e.value.set_requires_grad(train);
      e.value.clear_grad();
      if (train)
        trainable_.push_back(&e);
    }
  }
  FreezeView(const FreezeView &) = delete;
  FreezeView &operator=(const FreezeView &) = delete;
  ~FreezeView() {
    auto entries = params_.entries();
    for (std::size_t i = 0; i < entries.size() && i < saved_.size(); ++i) {
      entries[i].value.set_requires_grad(saved_[i]);
      entries[i].value.clear_grad();
    }
  }

  const std::vector<ParamEntry *> &trainable() const { return trainable_; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto *e : trainable_)
      out.push_back(e->name);
    return out;
  }

private:
  ModelParams &params_;
  std::vector<bool> saved_;
  std::vector<ParamEntry *> trainable_;
};

inline FreezeView apply_freeze(ModelParams &params, const FreezeMask &mask) { return FreezeView(params, mask); }

/// Adam with decoupled weight decay. Moments are allocated lazily and only
/// for parameters that are handed to step().
class AdamW {
public:
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}
  explicit AdamW(const StageConfig &c) : AdamW(c.beta1, c.beta2, c.adam_eps, c.weight_decay) {}

  void step(const std::vector<ParamEntry *> &params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto *e : params) {
      if (!e->value.has_grad())
        continue;
      auto &[m, v] = moments_[e->name];
      if (m.empty()) {
        m.assign(e->value.size(), 0.0);
        v.assign(e->value.size(), 0.0);
      }
      auto g = e->value.grad();
      auto w = e->value.mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        const double mhat = m[i] / bc1, vhat = v[i] / bc2;
        w[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w[i]);
      }
    }
  }

  std::size_t steps() const { return t_; }
  bool has_state(const std::string &name) const { return moments_.count(name) != 0; }
  std::size_t state_count() const { return moments_.size(); }

private:
  double beta1_, beta2_, eps_, wd_;
  std::size_t t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

/// Scales gradients so their global L2 norm is at most max_norm; returns the
/// pre-clip norm.
inline double clip_grad_norm(const std::vector<ParamEntry *> &params, double max_norm) {
  double sq = 0.0;
  for (const auto *e : params)
    for (double g : e->value.grad())
      sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double k = max_norm / norm;
    for (auto *e : params)
      for (double &g : e->value.mutable_grad())
        g *= k;
  }
  return norm;
}

struct LogRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct TrainingLog {
  int stage = 0;
  std::size_t total_updates = 0;
  std::size_t ignored_audio = 0;
  std::map<std::string, std::size_t> sampled_per_group;
  std::vector<LogRecord> records;

  /// Mean loss over `window` records at the start or end of the run.
  double smoothed(bool at_end, std::size_t window = 50) const {
    if (records.empty())
      return 0.0;
    const std::size_t n = std::min(window, records.size());
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      s += records[at_end ? records.size() - 1 - i : i].loss;
    return s / static_cast<double>(n);
  }

  /// One JSON record per line: step, loss, lr, wall.
  std::string to_jsonl(bool with_wall = true) const {
    std::ostringstream os;
    for (const auto &r : records) {
      nlohmann::json j = {{"step", r.step}, {"loss", r.loss}, {"lr", r.lr}};
      if (with_wall)
        j["wall"] = r.wall_seconds;
      os << j.dump() << '\n';
    }
    return os.str();
  }
};

/// Training examples tagged with a sampling group (used by stage 1).
struct TrainingData {
  std::vector<Sample> samples;
  std::vector<std::string> groups; // parallel to samples; empty means one group

  bool has_audio() const {
    return std::all_of(samples.begin(), samples.end(), [](const Sample &s) { return s.features.has_value(); });
  }
};

/// Raised when a loss or update turns non-finite. Carries the parameters as
/// they were after the last finite update.
class StageDivergence : public DivergenceError {
public:
  StageDivergence(const std::string &what, ModelParams last_good, std::size_t step)
      : DivergenceError(what), last_good(std::move(last_good)), step(step) {}
  ModelParams last_good;
  std::size_t step;
};

struct StageResult {
  ModelParams params;
  TrainingLog log;
};

namespace detail {

/// Yields sample indices batch by batch. Without groups: reshuffled epochs.
/// With groups: each slot draws a group with weight size^(1/T), then the next
/// index from that group's own reshuffled cycle.
class BatchSampler {
public:
  BatchSampler(const TrainingData &data, double temperature, std::uint64_t seed)
      : rng_(derive_seed(seed, "batches")) {
    std::map<std::string, std::vector<std::size_t>> by_group;
    for (std::size_t i = 0; i < data.samples.size(); ++i)
      by_group[data.groups.empty() ? std::string("all") : data.groups.at(i)].push_back(i);
    double acc = 0.0;
    for (auto &[name, idx] : by_group) {
      names_.push_back(name);
      pools_.push_back(std::move(idx));
      cursor_.push_back(0);
      acc += std::pow(static_cast<double>(pools_.back().size()), 1.0 / temperature);
      cumulative_.push_back(acc);
    }
    for (auto &pool : pools_)
      std::shuffle(pool.begin(), pool.end(), rng_);
  }

  std::vector<std::size_t> next(std::size_t batch, std::map<std::string, std::size_t> &tally) {
    std::vector<std::size_t> out;
    for (std::size_t b = 0; b < batch; ++b) {
      std::size_t g = 0;
      if (pools_.size() > 1) {
        const double r = uniform01(rng_) * cumulative_.back();
        g = static_cast<std::size_t>(std::upper_bound(cumulative_.begin(), cumulative_.end(), r) -
                                     cumulative_.begin());
        g = std::min(g, pools_.size() - 1);
      }
      if (cursor_[g] == pools_[g].size()) {
        std::shuffle(pools_[g].begin(), pools_[g].end(), rng_);
        cursor_[g] = 0;
      }
      out.push_back(pools_[g][cursor_[g]++]);
      ++tally[names_[g]];
    }
    return out;
  }

private:
  Rng rng_;
  std::vector<std::string> names_;
  std::vector<std::vector<std::size_t>> pools_;
  std::vector<std::size_t> cursor_;
  std::vector<double> cumulative_;
};

inline bool grads_finite(const std::vector<ParamEntry *> &params) {
  for (const auto *e : params)
    for (double g : e->value.grad())
      if (!std::isfinite(g))
        return false;
  return true;
}

} // namespace detail

/// Runs one stage. Parameters outside the stage's freeze mask are never
/// written. Deterministic in (params, cfg, data).
inline StageResult train_stage(ModelParams params, StageConfig cfg, const TrainingData &data,
                               const std::function<void(const LogRecord &)> &on_step = {}) {
  cfg.validate();
  if (data.samples.empty())
    throw DataError("no training data");
  if (!data.groups.empty() && data.groups.size() != data.samples.size())
    throw DataError("group labels do not match sample count");
  if (cfg.stage != 1 && !data.has_audio())
    throw DataError(stage_label(cfg.stage) + " needs a paired dataset, got text-only samples");
  const std::string want = expected_predecessor(cfg.stage);
  if (!want.empty() && params.last_stage() != want && !cfg.allow_lineage_mismatch)
    throw IncompatibleError(stage_label(cfg.stage) + " expects a model whose last stage is " + want + ", got '" +
                            params.last_stage() + "' (set allow_lineage_mismatch to override)");

  cfg.total_updates = cfg.resolved_updates(data.samples.size());
  const int loss_kind = cfg.stage == 0 ? 3 : cfg.stage;
  StageResult result;
  result.log.stage = cfg.stage;
  result.log.total_updates = cfg.total_updates;

  {
    FreezeView view(params, FreezeMask::for_stage(cfg.stage));
    AdamW opt(cfg);
    detail::BatchSampler sampler(data, cfg.sampling_temperature, cfg.seed);
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Sample> batch;
    for (std::size_t step = 0; step < cfg.total_updates; ++step) {
      const auto idx = sampler.next(cfg.batch_size, result.log.sampled_per_group);
      batch.clear();
      for (std::size_t k = 0; k < idx.size(); ++k) {
        batch.push_back(data.samples[idx[k]]);
        if (cfg.augment && cfg.stage != 1 && batch.back().features)
          batch.back().features = augment(*batch.back().features, cfg.augment_policy, derive_seed(cfg.seed, step, k));
      }
      for (auto *e : view.trainable())
        e->value.clear_grad();
      ComputeGraph g;
      StageLoss sl = loss_stage(g, params, batch, loss_kind);
      result.log.ignored_audio += sl.ignored_audio;
      const double loss = sl.loss.item();
      if (!std::isfinite(loss))
        throw StageDivergence(stage_label(cfg.stage) + ": loss became non-finite at step " + std::to_string(step),
                              params, step);
      g.backward(sl.loss);
      if (!detail::grads_finite(view.trainable()))
        throw StageDivergence(stage_label(cfg.stage) + ": gradient became non-finite at step " + std::to_string(step),
                              params, step);
      std::vector<std::vector<double>> snapshot;
      snapshot.reserve(view.trainable().size());
      for (const auto *e : view.trainable())
        snapshot.emplace_back(e->value.data().begin(), e->value.data().end());
      clip_grad_norm(view.trainable(), cfg.clip_norm);
      const double lr = lr_at(cfg, step);
      opt.step(view.trainable(), lr);
      bool finite = true;
      for (const auto *e : view.trainable())
        finite = finite && e->value.all_finite();
      if (!finite) {
        for (std::size_t i = 0; i < snapshot.size(); ++i)
          std::copy(snapshot[i].begin(), snapshot[i].end(), view.trainable()[i]->value.mutable_data().begin());
        throw StageDivergence(stage_label(cfg.stage) + ": update produced non-finite parameters at step " +
                                  std::to_string(step),
                              params, step);
      }
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.log.records.push_back({step, loss, lr, wall});
      if (on_step)
        on_step(result.log.records.back());
    }
  }
  params.zero_grad();
  params.append_lineage(stage_label(cfg.stage));
  result.params = std::move(params);
  return result;
}

} // namespace cslab

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The cslab Authors
#pragma once

/**
 * @file pipeline.hpp
 * @brief End-to-end run: corpus generation, the original model, the three
 *        adaptation stages, a paired-only baseline, merging, LM fusion tuning
 *        and the final evaluation report.
 *
 * Everything is a function of the run config and its seed. Artifacts land in
 * one output directory; with `resume` set, models whose checkpoints already
 * exist are loaded instead of retrained.
 */

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "checkpoint.hpp"
#include "config.hpp"
#include "corpus.hpp"
#include "decoder.hpp"
#include "eval.hpp"
#include "merge.hpp"
#include "model.hpp"
#include "ngram.hpp"
#include "trainer.hpp"

namespace cslab {

inline Hyperparams hyperparams_from_config(const KeyValueConfig &cfg, Hyperparams hp = {}) {
  cfg.validate_keys({"d_model", "encoder_layers", "decoder_layers", "heads", "ffn_dim", "max_frames", "max_tokens",
                     "zero_frames", "trainable_positions"});
  hp.d_model = cfg.get_size("d_model", hp.d_model);
  hp.encoder_layers = cfg.get_size("encoder_layers", hp.encoder_layers);
  hp.decoder_layers = cfg.get_size("decoder_layers", hp.decoder_layers);
  hp.heads = cfg.get_size("heads", hp.heads);
  hp.ffn_dim = cfg.get_size("ffn_dim", hp.ffn_dim);
  hp.max_frames = cfg.get_size("max_frames", hp.max_frames);
  hp.max_tokens = cfg.get_size("max_tokens", hp.max_tokens);
  hp.zero_frames = cfg.get_size("zero_frames", hp.zero_frames);
  hp.trainable_positions = cfg.get_bool("trainable_positions", hp.trainable_positions);
  return hp;
}

// --------------------------------------------------------------------------
// Training data

inline Sample paired_sample(const PairedExample &ex, const Vocab &vocab) {
  const std::vector<int> prompt{ex.prompt};
  return make_sample(tokenize(ex.utt.text, vocab), prompt, special::bos, special::eos, ex.features);
}

inline TrainingData paired_training_data(std::span<const PairedExample> examples, const Vocab &vocab) {
  TrainingData d;
  for (const auto &ex : examples)
    d.samples.push_back(paired_sample(ex, vocab));
  return d;
}

/// Text-only samples grouped by language ("A", "B") or "CS" for the
/// language-balanced sampler.
inline TrainingData text_training_data(std::span<const Utterance> corpus, const Vocab &vocab,
                                       const Lexicon &lexicon) {
  TrainingData d;
  for (const auto &u : corpus) {
    const auto prompt = tag_prompt(u, lexicon, PromptMode::Train);
    d.samples.push_back(make_sample(tokenize(u.text, vocab), prompt, special::bos, special::eos));
    d.groups.push_back(cmi(u) > 0.0 ? "CS" : std::string(1, lang_char(dominant_language(u))));
  }
  return d;
}

// --------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  std::uint64_t seed = 1;
  GenSpec gen;
  Hyperparams hp;
  StageConfig pretrain = StageConfig::defaults_for_stage(0);
  StageConfig stage1 = StageConfig::defaults_for_stage(1);
  StageConfig stage2 = StageConfig::defaults_for_stage(2);
  StageConfig stage3 = StageConfig::defaults_for_stage(3);
  StageConfig baseline = StageConfig::defaults_for_stage(3);
  bool skip_stage1 = false;
  double merge_ratio = default_merge_ratio;
  std::vector<double> sweep_ratios = default_sweep_ratios();
  std::vector<std::string> filters = {"ngram:2,3:4", "mintok:4"};
  NGramOptions lm;
  DecodeConfig decode;
  bool fusion = true;
  std::vector<double> alpha_grid = default_alpha_grid();
  std::vector<double> beta_grid = default_beta_grid();
  bool resume = false;
  std::string source = "defaults"; // config text the run was built from

  // Learning rates and epoch counts are scaled for the toy model; the
  // warmup fractions keep the stage defaults.
  RunConfig() {
    decode.prompt = {special::lang_ms, special::lang_en};
    pretrain.peak_lr = 3e-3;
    pretrain.epochs = 10;
    stage1.peak_lr = 1e-3;
    stage1.epochs = 6;
    stage2.peak_lr = 1e-3;
    stage2.epochs = 4;
    stage3.peak_lr = 2e-4;
    stage3.epochs = 10;
    baseline.peak_lr = 1e-3;
    baseline.epochs = 14; // stage 2 + stage 3 passes over the paired set
    baseline.allow_lineage_mismatch = true;
  }

  /// Top-level keys plus sections gen.*, model.*, pretrain.*, stage1.*,
  /// stage2.*, stage3.*, baseline.*, lm.*, decode.*, fusion.*.
  static RunConfig from_config(const KeyValueConfig &cfg) {
    static const std::vector<std::string> sections = {"gen.",    "model.",    "pretrain.", "stage1.", "stage2.",
                                                      "stage3.", "baseline.", "lm.",       "decode.", "fusion."};
    static const std::set<std::string> top = {"seed", "skip_stage1", "merge_ratio", "sweep_ratios", "filters"};
    for (const auto &[k, v] : cfg.values()) {
      bool ok = top.count(k) != 0;
      for (const auto &s : sections)
        ok = ok || k.rfind(s, 0) == 0;
      if (!ok)
        throw ConfigError("unknown config key '" + k + "'");
    }
    RunConfig r;
    r.seed = static_cast<std::uint64_t>(cfg.get_int("seed", static_cast<long long>(r.seed)));
    r.skip_stage1 = cfg.get_bool("skip_stage1", r.skip_stage1);
    r.merge_ratio = cfg.get_double("merge_ratio", r.merge_ratio);
    r.sweep_ratios = cfg.get_double_list("sweep_ratios", r.sweep_ratios);
    if (cfg.has("filters")) {
      r.filters.clear();
      std::istringstream in(cfg.get_string("filters", ""));
      for (std::string rule; in >> rule;)
        r.filters.push_back(rule);
    }
    r.gen = GenSpec::from_config(cfg.section("gen."));
    r.hp = hyperparams_from_config(cfg.section("model."));
    auto stage = [&](const std::string &name, int s, StageConfig &out) {
      const auto sec = cfg.section(name + ".");
      out = StageConfig::from_config(sec, s, out);
    };
    stage("pretrain", 0, r.pretrain);
    stage("stage1", 1, r.stage1);
    stage("stage2", 2, r.stage2);
    stage("stage3", 3, r.stage3);
    stage("baseline", 3, r.baseline);

    const auto lm = cfg.section("lm.");
    lm.validate_keys({"order", "smoothing", "backoff", "discount"});
    r.lm.order = lm.get_size("order", r.lm.order);
    r.lm.smoothing = parse_smoothing(lm.get_string("smoothing", smoothing_name(r.lm.smoothing)));
    r.lm.backoff = lm.get_double("backoff", r.lm.backoff);
    r.lm.discount = lm.get_double("discount", r.lm.discount);

    const auto dec = cfg.section("decode.");
    dec.validate_keys({"beam", "max_len", "prompt"});
    r.decode.beam = dec.get_size("beam", r.decode.beam);
    r.decode.max_len = dec.get_size("max_len", r.decode.max_len);
    if (dec.has("prompt"))
      r.decode.prompt = parse_prompt(dec.get_string("prompt", ""));

    const auto fu = cfg.section("fusion.");
    fu.validate_keys({"enabled", "alpha_grid", "beta_grid"});
    r.fusion = fu.get_bool("enabled", r.fusion);
    r.alpha_grid = fu.get_double_list("alpha_grid", r.alpha_grid);
    r.beta_grid = fu.get_double_list("beta_grid", r.beta_grid);

    std::ostringstream src;
    for (const auto &[k, v] : cfg.values())
      src << k << " = " << v << '\n';
    r.source = src.str();
    r.validate();
    return r;
  }

  static RunConfig load(const std::string &path) { return from_config(KeyValueConfig::load(path)); }

  void validate() const {
    gen.validate();
    hp.validate();
    for (const auto *s : {&pretrain, &stage1, &stage2, &stage3, &baseline})
      s->validate();
    if (!(merge_ratio >= 0.0 && merge_ratio <= 1.0))
      throw ConfigError("merge_ratio must be in [0, 1]");
    for (double r : sweep_ratios)
      if (!(r >= 0.0 && r <= 1.0))
        throw ConfigError("sweep ratios must be in [0, 1]");
    for (const auto &f : filters)
      parse_filter_rule(f);
    lm.validate();
    decode.validate();
    if (alpha_grid.empty() || beta_grid.empty())
      throw ConfigError("fusion grids must be non-empty");
  }

  /// Per-stage seed: derived from the run seed unless the stage config set one.
  StageConfig seeded(StageConfig c, const std::string &label) const {
    if (c.seed == 0)
      c.seed = derive_seed(seed, label);
    return c;
  }
};

// --------------------------------------------------------------------------
// Run

struct PipelineResult {
  std::filesystem::path out_dir;
  EvalReport report;
  SweepTable sweep;
  std::optional<FusionTuning> fusion;
  FilterReport filter;
  std::string report_text; // contents of report.txt
};

namespace detail {

inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

inline void write_text(const std::filesystem::path &path, const std::string &text) {
  auto out = open_out(path);
  out << text;
  if (!out)
    throw IoError("failed writing " + path.string());
}

inline std::string fmt2(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << round_half_up(v, 2);
  return os.str();
}

} // namespace detail

using ProgressFn = std::function<void(const std::string &)>;

/// Runs the whole workflow into `out_dir`. A failing stage throws; models
/// already written stay on disk and a rerun with `resume` picks them up.
inline PipelineResult run_pipeline(const RunConfig &rc, const std::filesystem::path &out_dir,
                                   const ProgressFn &progress = {}) {
  namespace fs = std::filesystem;
  rc.validate();
  auto say = [&](const std::string &m) {
    if (progress)
      progress(m);
  };
  fs::create_directories(out_dir / "models");
  fs::create_directories(out_dir / "logs");
  PipelineResult res;
  res.out_dir = out_dir;
  nlohmann::json artifacts = nlohmann::json::array();
  auto record = [&](const std::string &kind, const fs::path &p) {
    artifacts.push_back({{"kind", kind},
                         {"path", fs::relative(p, out_dir).generic_string()},
                         {"fnv1a64", detail::fnv1a_hex(read_file_bytes(p))}});
  };

  // Data.
  say("generating corpus (seed " + std::to_string(rc.seed) + ")");
  const SyntheticCorpus corpus = gen_synthetic_corpus(rc.gen, rc.seed);
  write_synthetic_corpus(out_dir / "data", corpus);
  std::vector<FilterRule> rules;
  for (const auto &f : rc.filters)
    rules.push_back(parse_filter_rule(f));
  FilterResult filtered = run_filters(corpus.text, rules);
  res.filter = filtered.report;
  write_tagged_corpus(out_dir / "data" / "text.filtered.tsv", filtered.kept);
  if (filtered.kept.empty())
    throw DataError("every text utterance was filtered out");

  std::vector<CmiSummary> cmi_rows;
  {
    std::vector<Utterance> mono, cs;
    for (const auto &u : filtered.kept)
      (cmi(u) > 0.0 ? cs : mono).push_back(u);
    if (!mono.empty())
      cmi_rows.push_back(corpus_cmi(mono, "monolingual", "Text"));
    if (!cs.empty())
      cmi_rows.push_back(corpus_cmi(cs, "code-switched", "Text"));
    for (const auto &s : corpus.splits) {
      std::vector<Utterance> utts;
      for (const auto &ex : s.examples)
        utts.push_back(ex.utt);
      if (!utts.empty())
        cmi_rows.push_back(corpus_cmi(utts, s.name, "Paired"));
    }
  }

  Hyperparams hp = rc.hp;
  hp.vocab_size = corpus.vocab.size();
  hp.input_dim = rc.gen.input_dim;
  hp.validate();

  auto model_path = [&](const std::string &name) { return out_dir / "models" / (name + ".ckpt"); };
  auto train_or_load = [&](const std::string &name, const std::function<StageResult()> &train) {
    const fs::path path = model_path(name);
    if (rc.resume && fs::exists(path)) {
      say("reusing " + path.string());
      ModelParams p = load_checkpoint(path);
      record("model", path);
      return p;
    }
    say("training " + name);
    StageResult r = train();
    save_checkpoint(path, r.params);
    detail::write_text(out_dir / "logs" / (name + ".jsonl"), r.log.to_jsonl(false));
    record("model", path);
    return std::move(r.params);
  };

  const TrainingData pre_data = paired_training_data(corpus.split("pretrain").examples, corpus.vocab);
  const TrainingData train_data = paired_training_data(corpus.split("train").examples, corpus.vocab);
  const TrainingData text_data = text_training_data(filtered.kept, corpus.vocab, corpus.lexicon);

  const ModelParams original = train_or_load("original", [&] {
    ModelParams init = init_model(hp, derive_seed(rc.seed, "init"));
    init.vocab = corpus.vocab.tokens();
    return train_stage(std::move(init), rc.seeded(rc.pretrain, "pretrain"), pre_data);
  });

  std::optional<ModelParams> phase1;
  if (!rc.skip_stage1)
    phase1 = train_or_load("stage1", [&] { return train_stage(original, rc.seeded(rc.stage1, "stage1"), text_data); });
  const ModelParams phase2 = train_or_load("stage2", [&] {
    StageConfig c = rc.seeded(rc.stage2, "stage2");
    c.allow_lineage_mismatch = c.allow_lineage_mismatch || rc.skip_stage1;
    return train_stage(phase1 ? *phase1 : original, c, train_data);
  });
  const ModelParams phase3 =
      train_or_load("stage3", [&] { return train_stage(phase2, rc.seeded(rc.stage3, "stage3"), train_data); });
  const ModelParams baseline =
      train_or_load("baseline", [&] { return train_stage(original, rc.seeded(rc.baseline, "baseline"), train_data); });

  auto merged = [&](const ModelParams &tuned, const std::string &name) {
    ModelParams m = merge(original, tuned, rc.merge_ratio, "original", name);
    save_checkpoint(model_path(name + "_merged"), m);
    record("model", model_path(name + "_merged"));
    return m;
  };
  say("merging at ratio " + detail::fmt2(rc.merge_ratio));
  std::optional<ModelParams> phase1_m;
  if (phase1)
    phase1_m = merged(*phase1, "stage1");
  const ModelParams phase2_m = merged(phase2, "stage2");
  const ModelParams phase3_m = merged(phase3, "stage3");
  const ModelParams baseline_m = merged(baseline, "baseline");

  // Language model and fusion.
  say("training " + std::to_string(rc.lm.order) + "-gram LM");
  const NGramLM lm = train_lm(std::span<const Utterance>(filtered.kept), corpus.vocab, rc.lm);
  lm.save(out_dir / "lm.txt");
  record("lm", out_dir / "lm.txt");
  std::vector<PairedExample> dev;
  for (const auto &s : corpus.splits)
    if (s.name.rfind("dev", 0) == 0)
      dev.insert(dev.end(), s.examples.begin(), s.examples.end());
  DecodeConfig fused = rc.decode;
  if (rc.fusion) {
    say("tuning fusion weights on " + std::to_string(dev.size()) + " dev utterances");
    res.fusion = tune_fusion(baseline, lm, dev, corpus.vocab, rc.alpha_grid, rc.beta_grid, rc.decode);
    detail::write_text(out_dir / "fusion.txt", res.fusion->to_text());
    fused.fusion = true;
    fused.alpha = res.fusion->alpha;
    fused.beta = res.fusion->beta;
  }

  // Evaluation.
  say("evaluating");
  std::vector<TestSet> sets;
  for (const auto &s : corpus.splits)
    if (s.name.rfind("test", 0) == 0)
      sets.push_back({std::string(eval_group_name(s.group)), s.name, s.examples});
  const std::string tag = " - " + detail::fmt2(rc.merge_ratio).substr(0, 3);
  std::vector<ModelUnderTest> plain = {{"Original", &original}, {"Baseline", &baseline}};
  std::vector<ModelUnderTest> merged_models = {{"Baseline" + tag, &baseline_m}};
  if (phase1_m)
    merged_models.push_back({"Phase1" + tag, &*phase1_m});
  merged_models.push_back({"Phase2" + tag, &phase2_m});
  merged_models.push_back({"Phase3" + tag, &phase3_m});
  merged_models.push_back({"Phase3 (unmerged)", &phase3});

  res.report = eval_report(plain, sets, corpus.vocab, rc.decode);
  if (rc.fusion) {
    EvalReport with_lm = eval_report({{"Baseline + LM", &baseline}}, sets, corpus.vocab, fused, &lm);
    res.report.rows.push_back(std::move(with_lm.rows.front()));
  }
  {
    EvalReport rest = eval_report(merged_models, sets, corpus.vocab, rc.decode);
    for (auto &r : rest.rows)
      res.report.rows.push_back(std::move(r));
  }

  say("sweeping merge ratios");
  res.sweep = ratio_sweep(original, phase3, rc.sweep_ratios, [&](const ModelParams &m) {
    EvalReport one = eval_report({{"m", &m}}, sets, corpus.vocab, rc.decode);
    const auto &row = one.rows.front();
    if (!row.failures.empty())
      throw DataError(row.failures.front());
    Metrics out;
    for (const auto &g : one.groups())
      out.emplace_back(g, *one.group_average(row, g));
    out.emplace_back("Avg.", *one.overall_average(row));
    return out;
  });

  // Report: deterministic content only.
  std::ostringstream rep;
  rep << "# cslab run report (seed " << rc.seed << ")\n\n";
  rep << "## Text filtering\n" << res.filter.to_text() << '\n';
  rep << "## Code-mixing index\n" << format_cmi_table(cmi_rows) << '\n';
  rep << "## WER (%)\n" << res.report.to_text() << '\n';
  rep << "## Merge ratio sweep (original + stage 3)\n" << res.sweep.to_text() << '\n';
  if (res.fusion)
    rep << "## Fusion tuning (baseline, dev)\n" << res.fusion->to_text();
  res.report_text = rep.str();
  detail::write_text(out_dir / "report.txt", res.report_text);
  detail::write_text(out_dir / "report.csv", res.report.to_csv());
  detail::write_text(out_dir / "sweep.csv", res.sweep.to_csv());
  detail::write_text(out_dir / "run.conf", rc.source);
  for (const char *f : {"report.txt", "report.csv", "sweep.csv", "run.conf"})
    record("report", out_dir / f);

  nlohmann::json manifest = {{"seed", rc.seed},
                             {"hyperparams", hp},
                             {"merge_ratio", rc.merge_ratio},
                             {"skip_stage1", rc.skip_stage1},
                             {"artifacts", artifacts}};
  detail::write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  say("done: " + (out_dir / "report.txt").string());
  return res;
}

} // namespace cslab

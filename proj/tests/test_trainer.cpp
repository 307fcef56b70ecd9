// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The cslab Authors

#include <cmath>
#include <cstring>

#include <gtest/gtest.h>

#include <cslab/checkpoint.hpp>
#include <cslab/pipeline.hpp>

using namespace cslab;

namespace {

Hyperparams tiny_hp(std::size_t vocab, std::size_t input_dim) {
  Hyperparams hp;
  hp.d_model = 16;
  hp.heads = 2;
  hp.ffn_dim = 24;
  hp.encoder_layers = 1;
  hp.decoder_layers = 1;
  hp.vocab_size = vocab;
  hp.input_dim = input_dim;
  return hp;
}

GenSpec tiny_spec() {
  GenSpec s;
  s.words_per_language = 12;
  s.text_a = 800;
  s.text_b = 400;
  s.text_cs = 800;
  s.pretrain_a = 60;
  s.pretrain_b = 60;
  s.pretrain_cs = 20;
  s.train_a = 70;
  s.train_b = 60;
  s.train_cs = 70;
  s.dev_per_group = 5;
  s.test_per_group = 20;
  s.input_dim = 8;
  return s;
}

const SyntheticCorpus &tiny_corpus() {
  static const SyntheticCorpus c = gen_synthetic_corpus(tiny_spec(), 11);
  return c;
}

ModelParams tiny_model(std::uint64_t seed) {
  const auto &c = tiny_corpus();
  auto p = init_model(tiny_hp(c.vocab.size(), c.spec.input_dim), seed);
  p.vocab = c.vocab.tokens();
  return p;
}

TrainingData paired(const std::string &split) {
  return paired_training_data(tiny_corpus().split(split).examples, tiny_corpus().vocab);
}

TrainingData text() { return text_training_data(tiny_corpus().text, tiny_corpus().vocab, tiny_corpus().lexicon); }

StageConfig quick(int stage, std::size_t updates, double lr = 3e-3) {
  StageConfig c = StageConfig::defaults_for_stage(stage);
  c.peak_lr = lr;
  c.total_updates = updates;
  c.batch_size = 8;
  c.seed = 5;
  c.allow_lineage_mismatch = true;
  return c;
}

std::vector<std::vector<double>> snapshot(const ModelParams &p) {
  std::vector<std::vector<double>> out;
  for (const auto &e : p.entries())
    out.emplace_back(e.value.data().begin(), e.value.data().end());
  return out;
}

bool bitwise_same(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

/// Mean per-token text perplexity against the zeroed encoder.
double text_perplexity(const ModelParams &p, const std::vector<Sample> &samples) {
  ComputeGraph g(false);
  const auto sl = loss_stage(g, p, samples, 1);
  return std::exp(sl.loss.item());
}

} // namespace

// ---------------------------------------------------------------------------
// Schedule

TEST(Schedule, PublishedPeakAtEndOfWarmup) {
  StageConfig c = StageConfig::defaults_for_stage(1);
  c.total_updates = 1000;
  ASSERT_EQ(c.warmup_steps(), 100u);
  EXPECT_DOUBLE_EQ(lr_at(c, 100), 2e-5);
  EXPECT_DOUBLE_EQ(lr_at(c, 0), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(c, 1000), 0.0);
  EXPECT_NEAR(lr_at(c, 550), 1e-5, 1e-18);
}

TEST(Schedule, MatchesIndependentFormulaEverywhere) {
  for (double frac : {0.0, 0.1, 0.2, 0.37}) {
    for (std::size_t total : {1u, 7u, 50u, 333u}) {
      StageConfig c;
      c.peak_lr = 1.5e-3;
      c.warmup_fraction = frac;
      c.total_updates = total;
      const double w = std::floor(frac * static_cast<double>(total));
      for (std::size_t s = 0; s <= total; ++s) {
        const double t = static_cast<double>(s);
        double expect;
        if (t < w)
          expect = c.peak_lr * t / w;
        else if (s == total)
          expect = 0.0;
        else
          expect = c.peak_lr * 0.5 * (1.0 + std::cos(M_PI * (t - w) / (static_cast<double>(total) - w)));
        EXPECT_NEAR(lr_at(c, s), expect, 1e-15) << "frac " << frac << " total " << total << " step " << s;
        EXPECT_GE(lr_at(c, s), 0.0);
        EXPECT_LE(lr_at(c, s), c.peak_lr);
      }
    }
  }
}

TEST(Schedule, OutOfRangeStepsAreErrors) {
  StageConfig c;
  c.total_updates = 10;
  EXPECT_THROW(lr_at(c, 11), ArgumentError);
  c.total_updates = 0;
  EXPECT_THROW(lr_at(c, 0), ArgumentError);
}

TEST(StageConfigTest, DefaultsKeepPublishedFractions) {
  EXPECT_DOUBLE_EQ(StageConfig::defaults_for_stage(1).warmup_fraction, 0.1);
  EXPECT_DOUBLE_EQ(StageConfig::defaults_for_stage(2).warmup_fraction, 0.2);
  EXPECT_DOUBLE_EQ(StageConfig::defaults_for_stage(3).warmup_fraction, 0.2);
  EXPECT_DOUBLE_EQ(StageConfig::defaults_for_stage(1).epochs, 3.0);
  EXPECT_DOUBLE_EQ(StageConfig::defaults_for_stage(2).epochs, 1.0);
  EXPECT_DOUBLE_EQ(StageConfig::defaults_for_stage(3).epochs, 2.0);
  EXPECT_DOUBLE_EQ(StageConfig::defaults_for_stage(1).peak_lr, 2e-5);
  EXPECT_THROW(StageConfig::defaults_for_stage(4), ArgumentError);
}

TEST(StageConfigTest, ResolvedUpdatesFromEpochs) {
  StageConfig c = StageConfig::defaults_for_stage(2);
  c.batch_size = 16;
  c.epochs = 1.0;
  EXPECT_EQ(c.resolved_updates(200), 13u);
  c.epochs = 2.5;
  EXPECT_EQ(c.resolved_updates(32), 5u);
  c.total_updates = 4;
  EXPECT_EQ(c.resolved_updates(1000), 4u);
}

TEST(StageConfigTest, ParsingAndValidation) {
  auto c = StageConfig::from_config(KeyValueConfig::from_string("peak_lr = 1e-3\nepochs = 2\nsnr_db = 10,40\n"), 3);
  EXPECT_DOUBLE_EQ(c.peak_lr, 1e-3);
  EXPECT_DOUBLE_EQ(c.warmup_fraction, 0.2);
  EXPECT_EQ(c.augment_policy.snr_db, (std::vector<double>{10.0, 40.0}));
  EXPECT_THROW(StageConfig::from_config(KeyValueConfig::from_string("learning_rate = 1\n"), 1), ConfigError);
  EXPECT_THROW(StageConfig::from_config(KeyValueConfig::from_string("stage = 2\n"), 1), ConfigError);
  EXPECT_THROW(StageConfig::from_config(KeyValueConfig::from_string("warmup_fraction = 1\n"), 1), ConfigError);
  EXPECT_THROW(StageConfig::from_config(KeyValueConfig::from_string("peak_lr = 0\n"), 1), ConfigError);
}

// ---------------------------------------------------------------------------
// Freezing

TEST(Freeze, MasksPerStage) {
  using G = ParamGroup;
  EXPECT_EQ(FreezeMask::for_stage(1).trainable, (std::set<G>{G::DecoderSelfAttn, G::DecoderFFN, G::OutputProj}));
  EXPECT_EQ(FreezeMask::for_stage(2).trainable, (std::set<G>{G::DecoderCrossAttn}));
  EXPECT_EQ(FreezeMask::for_stage(3).trainable.size(), 5u);
}

TEST(Freeze, StageTwoViewExposesExactlyCrossAttention) {
  auto p = tiny_model(1);
  std::vector<std::string> expected;
  for (const auto *e : p.group(ParamGroup::DecoderCrossAttn))
    expected.push_back(e->name);
  ASSERT_FALSE(expected.empty());
  FreezeView view(p, FreezeMask::for_stage(2));
  EXPECT_EQ(view.names(), expected);
  for (const auto &e : p.entries())
    EXPECT_EQ(e.value.requires_grad(), e.group == ParamGroup::DecoderCrossAttn) << e.name;
}

TEST(Freeze, StageOneViewExcludesEncoderAndCrossAttention) {
  auto p = tiny_model(1);
  FreezeView view(p, FreezeMask::for_stage(1));
  for (const auto *e : view.trainable()) {
    EXPECT_NE(e->group, ParamGroup::Encoder) << e->name;
    EXPECT_NE(e->group, ParamGroup::DecoderCrossAttn) << e->name;
  }
}

TEST(Freeze, EmptyMaskIsAConfigError) {
  auto p = tiny_model(1);
  EXPECT_THROW(FreezeView(p, FreezeMask{}), ConfigError);
}

TEST(Freeze, ViewRestoresFlags) {
  auto p = tiny_model(1);
  p.entries()[0].value.set_requires_grad(true);
  std::vector<bool> before;
  for (const auto &e : p.entries())
    before.push_back(e.value.requires_grad());
  {
    FreezeView view(p, FreezeMask::for_stage(2));
  }
  for (std::size_t i = 0; i < before.size(); ++i)
    EXPECT_EQ(p.entries()[i].value.requires_grad(), before[i]) << p.entries()[i].name;
}

TEST(Freeze, OneStageTwoStepLeavesEverythingElseBitwiseUnchanged) {
  const auto p = tiny_model(2);
  const auto before = snapshot(p);
  const auto r = train_stage(p, quick(2, 1, 1e-2), paired("train"));
  bool any_ca_changed = false;
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto &e = r.params.entries()[i];
    const bool same = bitwise_same(before[i], e.value.data());
    if (e.group == ParamGroup::DecoderCrossAttn)
      any_ca_changed = any_ca_changed || !same;
    else
      EXPECT_TRUE(same) << e.name;
  }
  EXPECT_TRUE(any_ca_changed);
}

TEST(Freeze, StageOneLeavesEncoderAndCrossAttentionIdentical) {
  const auto p = tiny_model(3);
  const auto before = snapshot(p);
  const auto r = train_stage(p, quick(1, 20), text());
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto &e = r.params.entries()[i];
    if (!FreezeMask::for_stage(1).contains(e.group))
      EXPECT_TRUE(bitwise_same(before[i], e.value.data())) << e.name;
  }
}

TEST(Freeze, StageOneNeverComputesEncoderGradients) {
  auto p = tiny_model(4);
  const auto data = text();
  FreezeView view(p, FreezeMask::for_stage(1));
  ComputeGraph g;
  const std::vector<Sample> batch(data.samples.begin(), data.samples.begin() + 4);
  const auto sl = loss_stage(g, p, batch, 1);
  g.backward(sl.loss);
  for (const auto &e : p.entries()) {
    if (e.group == ParamGroup::Encoder || e.group == ParamGroup::DecoderCrossAttn)
      EXPECT_FALSE(e.value.has_grad()) << e.name;
  }
}

// ---------------------------------------------------------------------------
// Optimizer

TEST(Optimizer, MomentsOnlyForTrainableParameters) {
  auto p = tiny_model(5);
  FreezeView view(p, FreezeMask::for_stage(2));
  ComputeGraph g;
  const auto data = paired("train");
  const std::vector<Sample> batch(data.samples.begin(), data.samples.begin() + 2);
  g.backward(loss_stage(g, p, batch, 2).loss);
  AdamW opt(0.9, 0.98, 1e-8, 0.01);
  opt.step(view.trainable(), 1e-3);
  EXPECT_EQ(opt.state_count(), view.trainable().size());
  for (const auto &e : p.entries())
    EXPECT_EQ(opt.has_state(e.name), e.group == ParamGroup::DecoderCrossAttn) << e.name;
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Optimizer, SingleStepMatchesClosedForm) {
  // With zero moments, the first bias-corrected Adam step moves each weight
  // by lr * (sign(g) * |g| / (|g| + eps) + wd * w).
  ModelParams p;
  p.add(ParamGroup::OutputProj, -1, "w", Tensor({3}, {1.0, -2.0, 0.5}, true));
  const Tensor &w = p.get("dec.w");
  w.mutable_grad();
  const std::vector<double> grad = {0.5, -0.25, 0.0};
  std::copy(grad.begin(), grad.end(), w.mutable_grad().begin());
  std::vector<ParamEntry *> params = {&p.entries()[0]};
  const double lr = 0.1, eps = 1e-8, wd = 0.01;
  AdamW opt(0.9, 0.98, eps, wd);
  opt.step(params, lr);
  const std::vector<double> w0 = {1.0, -2.0, 0.5};
  for (std::size_t i = 0; i < 3; ++i) {
    const double g = grad[i];
    const double expect = w0[i] - lr * (g / (std::abs(g) + eps) + wd * w0[i]);
    EXPECT_NEAR(w.data()[i], expect, 1e-12);
  }
}

TEST(Optimizer, ClippingBoundsTheGlobalNorm) {
  ModelParams p;
  p.add(ParamGroup::OutputProj, -1, "w", Tensor({2}, {0.0, 0.0}, true));
  const Tensor &w = p.get("dec.w");
  w.mutable_grad()[0] = 3.0;
  w.mutable_grad()[1] = 4.0;
  std::vector<ParamEntry *> params = {&p.entries()[0]};
  EXPECT_DOUBLE_EQ(clip_grad_norm(params, 1.0), 5.0);
  EXPECT_NEAR(w.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(w.grad()[1], 0.8, 1e-15);
  EXPECT_NEAR(clip_grad_norm(params, 10.0), 1.0, 1e-15);
}

// ---------------------------------------------------------------------------
// Training loop

TEST(TrainStage, StageOneLowersHeldOutTextPerplexity) {
  const auto &c = tiny_corpus();
  const auto p = tiny_model(6);
  std::vector<Sample> heldout;
  for (const auto &ex : c.split("test_cs").examples)
    heldout.push_back(make_sample(tokenize(ex.utt.text, c.vocab), tag_prompt(ex.utt, c.lexicon, PromptMode::Train),
                                  special::bos, special::eos));
  StageConfig cfg = quick(1, 0);
  cfg.epochs = 1.0;
  cfg.batch_size = 16;
  const auto r = train_stage(p, cfg, text());
  EXPECT_EQ(r.log.total_updates, 125u);
  EXPECT_LT(text_perplexity(r.params, heldout), text_perplexity(p, heldout));
}

TEST(TrainStage, DeterministicGivenSeeds) {
  const auto p = tiny_model(7);
  const auto a = train_stage(p, quick(3, 6), paired("train"));
  const auto b = train_stage(p, quick(3, 6), paired("train"));
  EXPECT_EQ(checkpoint_bytes(a.params), checkpoint_bytes(b.params));
  EXPECT_EQ(a.log.to_jsonl(false), b.log.to_jsonl(false));
  auto other = quick(3, 6);
  other.seed = 6;
  EXPECT_NE(checkpoint_bytes(train_stage(p, other, paired("train")).params), checkpoint_bytes(a.params));
}

TEST(TrainStage, LineageIsAppendedAndChecked) {
  auto p = tiny_model(8);
  auto strict2 = quick(2, 1);
  strict2.allow_lineage_mismatch = false;
  auto strict3 = quick(3, 1);
  strict3.allow_lineage_mismatch = false;
  EXPECT_THROW(train_stage(p, strict2, paired("train")), IncompatibleError);

  auto s1 = train_stage(p, quick(1, 1), text()).params;
  EXPECT_EQ(s1.last_stage(), "stage1");
  EXPECT_THROW(train_stage(s1, strict3, paired("train")), IncompatibleError);
  auto s2 = train_stage(s1, strict2, paired("train")).params;
  EXPECT_EQ(s2.last_stage(), "stage2");
  auto s3 = train_stage(s2, strict3, paired("train")).params;
  EXPECT_EQ(s3.lineage_labels(), (std::vector<std::string>{"init", "stage1", "stage2", "stage3"}));
}

TEST(TrainStage, WrongDatasetKindIsADataError) {
  const auto p = tiny_model(9);
  EXPECT_THROW(train_stage(p, quick(2, 1), text()), DataError);
  EXPECT_THROW(train_stage(p, quick(3, 1), TrainingData{}), DataError);
}

TEST(TrainStage, StageOneIgnoresAudioAndCountsIt) {
  const auto p = tiny_model(9);
  const auto r = train_stage(p, quick(1, 2), paired("train"));
  EXPECT_EQ(r.log.ignored_audio, 16u);
}

TEST(TrainStage, NonFiniteLossRaisesWithLastGoodParameters) {
  auto p = tiny_model(10);
  p.entries()[0].value.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train_stage(p, quick(3, 3), paired("train"));
    FAIL() << "expected divergence";
  } catch (const StageDivergence &e) {
    EXPECT_EQ(e.step, 0u);
    EXPECT_EQ(checkpoint_bytes(e.last_good), checkpoint_bytes(p));
  }
}

TEST(TrainStage, BlowUpKeepsTheLastFiniteParameters) {
  const auto p = tiny_model(10);
  try {
    train_stage(p, quick(3, 10, 1e300), paired("train"));
    FAIL() << "expected divergence";
  } catch (const StageDivergence &e) {
    EXPECT_GT(e.step, 0u);
    for (const auto &entry : e.last_good.entries())
      EXPECT_TRUE(entry.value.all_finite()) << entry.name;
  }
}

TEST(TrainStage, LanguageBalancedSamplingFollowsTemperature) {
  const auto p = tiny_model(11);
  auto data = text();
  // Group sizes are 800 (A), 400 (B) and 800 (CS).
  auto cfg = quick(1, 100, 1e-4);
  cfg.batch_size = 32;
  const auto t1 = train_stage(p, cfg, data).log.sampled_per_group;
  const double n = 3200.0;
  EXPECT_NEAR(t1.at("B") / n, 0.2, 0.03);
  cfg.sampling_temperature = 1e6;
  const auto flat = train_stage(p, cfg, data).log.sampled_per_group;
  EXPECT_NEAR(flat.at("B") / n, 1.0 / 3.0, 0.03);
}

TEST(TrainStage, SmoothedLossFallsInEveryStage) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto p = tiny_model(100 + seed);
    int stage_no = 0;
    for (int stage : {0, 1, 2, 3}) {
      auto cfg = quick(stage, 100, stage == 2 ? 3e-3 : 2e-3);
      cfg.seed = seed;
      auto r = train_stage(p, cfg, stage == 1 ? text() : paired(stage == 0 ? "pretrain" : "train"));
      EXPECT_LT(r.log.smoothed(true), r.log.smoothed(false)) << "seed " << seed << " stage " << stage;
      p = std::move(r.params);
      ++stage_no;
    }
    EXPECT_EQ(stage_no, 4);
  }
}

// ---------------------------------------------------------------------------
// Augmentation

namespace {

EncoderFeatures random_features(std::uint64_t seed, std::size_t frames, std::size_t dim) {
  Rng rng(seed);
  EncoderFeatures f{frames, dim, std::vector<double>(frames * dim)};
  for (auto &v : f.values)
    v = normal(rng);
  return f;
}

} // namespace

TEST(Augment, EmptyPolicyIsIdentity) {
  const auto x = random_features(1, 10, 4);
  EXPECT_EQ(augment(x, AugmentPolicy{}, 3), x);
  AugmentPolicy zero_width;
  zero_width.time_masks = 3;
  EXPECT_EQ(augment(x, zero_width, 3), x);
}

TEST(Augment, NoiseHitsTheRequestedSnr) {
  AugmentPolicy pol;
  pol.snr_db = {10.0};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = random_features(seed, 30, 8);
    const auto y = augment(x, pol, seed);
    double ps = 0.0, pn = 0.0;
    for (std::size_t i = 0; i < x.values.size(); ++i) {
      ps += x.values[i] * x.values[i];
      pn += (y.values[i] - x.values[i]) * (y.values[i] - x.values[i]);
    }
    const double snr = 10.0 * std::log10(ps / pn);
    EXPECT_GE(snr, 9.5);
    EXPECT_LE(snr, 10.5);
  }
}

TEST(Augment, SnrIsDrawnFromTheList) {
  AugmentPolicy pol;
  pol.snr_db = {10.0, 40.0};
  std::set<long> seen;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto x = random_features(seed, 20, 4);
    const auto y = augment(x, pol, seed);
    double ps = 0.0, pn = 0.0;
    for (std::size_t i = 0; i < x.values.size(); ++i) {
      ps += x.values[i] * x.values[i];
      pn += (y.values[i] - x.values[i]) * (y.values[i] - x.values[i]);
    }
    seen.insert(std::lround(10.0 * std::log10(ps / pn)));
  }
  EXPECT_EQ(seen, (std::set<long>{10, 40}));
}

TEST(Augment, DeterministicPerSeed) {
  AugmentPolicy pol;
  pol.time_masks = 2;
  pol.time_width = 3;
  pol.feature_masks = 1;
  pol.feature_width = 2;
  pol.snr_db = {10.0, 40.0};
  const auto x = random_features(4, 12, 6);
  EXPECT_EQ(augment(x, pol, 9), augment(x, pol, 9));
  EXPECT_NE(augment(x, pol, 9), augment(x, pol, 10));
}

TEST(Augment, MasksZeroContiguousSpansAndClip) {
  AugmentPolicy pol;
  pol.time_masks = 1;
  pol.time_width = 100; // wider than the input
  const auto x = random_features(5, 6, 3);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto y = augment(x, pol, seed);
    std::vector<bool> zero(x.frames);
    for (std::size_t t = 0; t < x.frames; ++t) {
      bool all = true;
      for (std::size_t d = 0; d < x.dim; ++d)
        all = all && y.values[t * x.dim + d] == 0.0;
      zero[t] = all;
      if (!all)
        for (std::size_t d = 0; d < x.dim; ++d)
          EXPECT_EQ(y.values[t * x.dim + d], x.values[t * x.dim + d]);
    }
    // Zeroed frames form one run.
    int runs = 0;
    for (std::size_t t = 0; t < x.frames; ++t)
      runs += zero[t] && (t == 0 || !zero[t - 1]);
    EXPECT_LE(runs, 1);
  }

  AugmentPolicy feat;
  feat.feature_masks = 1;
  feat.feature_width = 50;
  const auto y = augment(x, feat, 1);
  for (std::size_t d = 0; d < x.dim; ++d) {
    bool all = true;
    for (std::size_t t = 0; t < x.frames; ++t)
      all = all && y.values[t * x.dim + d] == 0.0;
    if (!all)
      for (std::size_t t = 0; t < x.frames; ++t)
        EXPECT_EQ(y.values[t * x.dim + d], x.values[t * x.dim + d]);
  }
}

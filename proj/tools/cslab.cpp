// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The cslab Authors

// Command-line front end: one subcommand per module plus `pipeline`.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif

#include <cslab/checkpoint.hpp>
#include <cslab/corpus.hpp>
#include <cslab/decoder.hpp>
#include <cslab/eval.hpp>
#include <cslab/merge.hpp>
#include <cslab/ngram.hpp>
#include <cslab/pipeline.hpp>
#include <cslab/trainer.hpp>

namespace fs = std::filesystem;
using namespace cslab;

namespace {

void write_file(const fs::path &path, const std::string &text) {
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text))
    throw IoError("cannot write " + path.string());
}

std::vector<double> parse_list(const std::string &s, const std::string &what) {
  return KeyValueConfig::from_string(what + " = " + s).get_double_list(what, {});
}

/// Lexicon built from the per-word tags of a tagged corpus.
Lexicon lexicon_from_tags(std::span<const Utterance> corpus) {
  std::set<std::string> a, b;
  for (const auto &u : corpus)
    for (std::size_t i = 0; i < u.words.size(); ++i) {
      if (u.tags[i] == Lang::A)
        a.insert(u.words[i]);
      else if (u.tags[i] == Lang::B)
        b.insert(u.words[i]);
    }
  return Lexicon({a.begin(), a.end()}, {b.begin(), b.end()});
}

Vocab model_vocab(const ModelParams &p) {
  if (p.vocab.empty())
    throw DataError("checkpoint carries no vocabulary");
  return Vocab::from_tokens(p.vocab);
}

/// Examples from a paired dataset directory (selected splits) or a JSONL file.
std::vector<PairedExample> load_examples(const fs::path &input, const std::vector<std::string> &splits,
                                         const Vocab &vocab) {
  std::vector<PairedExample> out;
  if (fs::is_directory(input)) {
    const auto ds = read_paired_dataset(input);
    for (const auto &name : splits) {
      const auto &s = ds.split(name);
      out.insert(out.end(), s.examples.begin(), s.examples.end());
    }
    return out;
  }
  std::ifstream in(input);
  if (!in)
    throw IoError("cannot open " + input.string());
  std::string line;
  while (std::getline(in, line))
    if (!trim(line).empty())
      out.push_back(example_from_json(nlohmann::json::parse(line), vocab));
  return out;
}

/// Test sets: every split whose name starts with "test" unless names are given.
std::vector<TestSet> load_test_sets(const fs::path &dir, const std::vector<std::string> &names) {
  const auto ds = read_paired_dataset(dir);
  std::vector<TestSet> sets;
  for (const auto &s : ds.splits) {
    const bool wanted =
        names.empty() ? s.name.rfind("test", 0) == 0 : std::find(names.begin(), names.end(), s.name) != names.end();
    if (wanted)
      sets.push_back({std::string(eval_group_name(s.group)), s.name, s.examples});
  }
  if (sets.empty())
    throw DataError("no test splits selected in " + dir.string());
  return sets;
}

struct DecodeOptions {
  std::size_t beam = 2;
  std::size_t max_len = 32;
  std::string prompt = "ms,en";
  std::string lm;
  double alpha = 0.0;
  double beta = 0.0;

  void add_to(CLI::App *app, bool fusion) {
    app->add_option("--beam", beam, "Beam size")->capture_default_str();
    app->add_option("--max-len", max_len, "Maximum generated tokens")->capture_default_str();
    app->add_option("--prompt", prompt, "Prompt languages: ms, en, ms,en or none")->capture_default_str();
    if (fusion) {
      app->add_option("--lm", lm, "N-gram LM file; enables shallow fusion");
      app->add_option("--alpha", alpha, "LM weight (tuned range [0, 0.1])")->capture_default_str();
      app->add_option("--beta", beta, "Length bonus per emitted token (tuned range [-0.2, 0.2])")
          ->capture_default_str();
    }
  }

  DecodeConfig config() const {
    DecodeConfig c;
    c.beam = beam;
    c.max_len = max_len;
    c.prompt = parse_prompt(prompt);
    c.fusion = !lm.empty();
    c.alpha = alpha;
    c.beta = beta;
    c.validate();
    return c;
  }

  std::optional<NGramLM> load_lm() const {
    if (lm.empty())
      return std::nullopt;
    return NGramLM::load(lm);
  }
};

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"cslab: staged code-switching ASR adaptation on a synthetic bilingual task"};
  app.require_subcommand(1);
  app.footer("Defaults: merge ratio 0.4, beam 2, alpha grid {0, 0.033, 0.066, 0.1} (range [0, 0.1]),\n"
             "beta grid {-0.2, -0.066, 0.066, 0.2} (range [-0.2, 0.2]), warmup 10% (stage 1) and 20% (stages 2, 3),\n"
             "epochs 3 / 1 / 2, peak lr 2e-5 for stand-alone `train`. Exit codes: 0 ok, 1 usage, 2 config,\n"
             "3 data, 4 divergence, 5 I/O, 6 internal.");

  // gen / corpus gen ---------------------------------------------------------
  std::string gen_spec;
  std::uint64_t gen_seed = 1;
  std::string gen_out;
  auto add_gen = [&](CLI::App *c) {
    c->add_option("--spec", gen_spec, "Generator key-value file (GenSpec keys); defaults when omitted");
    c->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
    c->add_option("--out", gen_out, "Output directory")->required();
  };
  auto *gen = app.add_subcommand("gen", "Generate the synthetic corpus (text corpus, lexicons, paired splits)");
  add_gen(gen);

  auto *corpus = app.add_subcommand("corpus", "Corpus tools: gen, filter, cmi");
  corpus->require_subcommand(1);
  auto *corpus_gen = corpus->add_subcommand("gen", "Same as the top-level gen");
  add_gen(corpus_gen);

  std::vector<std::string> filter_rules = {"ngram:2,3:4", "mintok:32"};
  std::string filter_in, filter_out, filter_report;
  auto *corpus_filter = corpus->add_subcommand("filter", "Filter a text corpus");
  corpus_filter->add_option("--rules", filter_rules, "Rules applied in order: ngram:<orders>:<max> and mintok:<n>")
      ->capture_default_str();
  corpus_filter->add_option("--in", filter_in, "Input corpus (tagged TSV or plain text)")->required();
  corpus_filter->add_option("--out", filter_out, "Kept utterances")->required();
  corpus_filter->add_option("--report", filter_report, "Per-rule rejection report");

  std::string cmi_in, cmi_lex_a, cmi_lex_b, cmi_name = "corpus";
  auto *corpus_cmi_cmd = corpus->add_subcommand("cmi", "Code-mixing index statistics");
  corpus_cmi_cmd->add_option("--in", cmi_in, "Input corpus")->required();
  corpus_cmi_cmd->add_option("--lexicon-a", cmi_lex_a, "Language-A word list (for untagged input)");
  corpus_cmi_cmd->add_option("--lexicon-b", cmi_lex_b, "Language-B word list (for untagged input)");
  corpus_cmi_cmd->add_option("--name", cmi_name, "Row label")->capture_default_str();

  // train ---------------------------------------------------------------------
  int train_stage_id = 1;
  std::string train_config, train_init, train_data, train_out, train_log, train_model, train_split = "train";
  std::uint64_t train_seed = 1;
  bool train_allow = false;
  auto *train = app.add_subcommand("train", "Run one training stage");
  train->add_option("--stage", train_stage_id, "0 pretrain, 1 text-only LM, 2 cross-attention, 3 full")
      ->required()
      ->check(CLI::Range(0, 3));
  train->add_option("--config", train_config, "Stage key-value file (peak_lr, epochs, batch_size, ...)");
  train->add_option("--init", train_init, "Input checkpoint (required for stages 1-3)");
  train->add_option("--data", train_data, "Text corpus (stage 1) or paired dataset directory")->required();
  train->add_option("--split", train_split, "Paired split to train on")->capture_default_str();
  train->add_option("--out", train_out, "Output checkpoint")->required();
  train->add_option("--log", train_log, "Training log (JSONL: step, loss, lr, wall); default <out>.log.jsonl");
  train->add_option("--model", train_model, "Model key-value file for a fresh stage-0 model (d_model, heads, ...)");
  train->add_option("--seed", train_seed, "Seed for a fresh model and for the stage unless the config sets one")
      ->capture_default_str();
  train->add_flag("--allow-lineage-mismatch", train_allow, "Skip the predecessor-stage check");

  // merge / sweep ---------------------------------------------------------------
  std::string merge_base, merge_tuned, merge_out;
  double merge_ratio = default_merge_ratio;
  auto *merge_cmd = app.add_subcommand("merge", "Interpolate two checkpoints: (1 - ratio) * base + ratio * tuned");
  merge_cmd->add_option("--base", merge_base, "Base checkpoint")->required();
  merge_cmd->add_option("--tuned", merge_tuned, "Fine-tuned checkpoint")->required();
  merge_cmd->add_option("--ratio", merge_ratio, "Weight of the tuned model")->capture_default_str();
  merge_cmd->add_option("--out", merge_out, "Output checkpoint")->required();

  std::string sweep_base, sweep_tuned, sweep_testset, sweep_out, sweep_csv;
  std::string sweep_ratios = "0,0.2,0.4,0.6,0.8,1";
  std::vector<std::string> sweep_splits;
  DecodeOptions sweep_dec;
  auto *sweep = app.add_subcommand("sweep", "Evaluate merged models over a list of ratios");
  sweep->add_option("--base", sweep_base, "Base checkpoint")->required();
  sweep->add_option("--tuned", sweep_tuned, "Fine-tuned checkpoint")->required();
  sweep->add_option("--ratios", sweep_ratios, "Comma-separated ratios")->capture_default_str();
  sweep->add_option("--testset", sweep_testset, "Paired dataset directory")->required();
  sweep->add_option("--splits", sweep_splits, "Splits to evaluate (default: test*)");
  sweep->add_option("--out", sweep_out, "Text table (stdout when omitted)");
  sweep->add_option("--csv", sweep_csv, "CSV table");
  sweep_dec.add_to(sweep, false);

  // lm / tune-fusion --------------------------------------------------------------
  std::string lm_in, lm_vocab, lm_out, lm_smoothing = "stupid_backoff";
  std::size_t lm_order = 5;
  double lm_backoff = 0.4, lm_discount = 0.75;
  auto *lm_cmd = app.add_subcommand("lm", "Train an n-gram LM on a text corpus");
  lm_cmd->add_option("--in", lm_in, "Text corpus")->required();
  lm_cmd->add_option("--vocab", lm_vocab, "vocab.txt of the paired dataset, or a checkpoint")->required();
  lm_cmd->add_option("--order", lm_order, "N-gram order")->capture_default_str();
  lm_cmd->add_option("--smoothing", lm_smoothing, "stupid_backoff or absolute_discount")->capture_default_str();
  lm_cmd->add_option("--backoff", lm_backoff, "Stupid-backoff factor")->capture_default_str();
  lm_cmd->add_option("--discount", lm_discount, "Absolute discount")->capture_default_str();
  lm_cmd->add_option("--out", lm_out, "LM file")->required();

  std::string tune_ckpt, tune_lm, tune_dev, tune_out;
  std::vector<std::string> tune_splits = {"dev"};
  std::string tune_alpha = "0,0.033,0.066,0.1", tune_beta = "-0.2,-0.066,0.066,0.2";
  DecodeOptions tune_dec;
  auto *tune = app.add_subcommand("tune-fusion", "Grid-search fusion weights on a dev set");
  tune->add_option("--ckpt", tune_ckpt, "Acoustic model")->required();
  tune->add_option("--lm", tune_lm, "N-gram LM")->required();
  tune->add_option("--dev", tune_dev, "Paired dataset directory")->required();
  tune->add_option("--splits", tune_splits, "Dev splits")->capture_default_str();
  tune->add_option("--alpha-grid", tune_alpha, "Alpha values")->capture_default_str();
  tune->add_option("--beta-grid", tune_beta, "Beta values")->capture_default_str();
  tune->add_option("--out", tune_out, "Table file (stdout when omitted)");
  tune_dec.add_to(tune, false);

  // decode / eval --------------------------------------------------------------------
  std::string dec_ckpt, dec_input;
  std::vector<std::string> dec_splits = {"test_b", "test_a", "test_cs"};
  DecodeOptions dec_opts;
  auto *dec = app.add_subcommand("decode", "Decode utterances; prints id, hypothesis and scores per line");
  dec->add_option("--ckpt", dec_ckpt, "Acoustic model")->required();
  dec->add_option("--input", dec_input, "Paired dataset directory or JSONL file of examples")->required();
  dec->add_option("--splits", dec_splits, "Splits when the input is a directory")->capture_default_str();
  dec_opts.add_to(dec, true);

  std::vector<std::string> eval_ckpts, eval_splits;
  std::string eval_testset, eval_report_path, eval_csv;
  DecodeOptions eval_dec;
  auto *eval = app.add_subcommand("eval", "WER report for one or more checkpoints");
  eval->add_option("--ckpt", eval_ckpts, "Checkpoint, optionally NAME=PATH; repeatable")->required();
  eval->add_option("--testset", eval_testset, "Paired dataset directory")->required();
  eval->add_option("--splits", eval_splits, "Splits to evaluate (default: test*)");
  eval->add_option("--report", eval_report_path, "Aligned text report (stdout when omitted)");
  eval->add_option("--csv", eval_csv, "CSV report");
  eval_dec.add_to(eval, true);

  // pipeline ------------------------------------------------------------------------------
  std::string pipe_config, pipe_out;
  std::optional<std::uint64_t> pipe_seed;
  bool pipe_skip1 = false, pipe_resume = false, pipe_quiet = false;
  auto *pipe = app.add_subcommand("pipeline", "Full run: generate, filter, stages 0-3, baseline, merge, fuse, eval");
  pipe->add_option("--config", pipe_config, "Run key-value file (see configs/default.conf)");
  pipe->add_option("--out", pipe_out, "Output directory")->required();
  pipe->add_option("--seed", pipe_seed, "Overrides the config seed");
  pipe->add_flag("--skip-stage1", pipe_skip1, "Drop stage 1 (ablation)");
  pipe->add_flag("--resume", pipe_resume, "Reuse checkpoints already in the output directory");
  pipe->add_flag("--quiet", pipe_quiet, "No progress messages");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return static_cast<int>(ExitCode::usage);
  }

  try {
    if (gen->parsed() || corpus_gen->parsed()) {
      const GenSpec spec = gen_spec.empty() ? GenSpec{} : GenSpec::from_config(KeyValueConfig::load(gen_spec));
      const auto c = gen_synthetic_corpus(spec, gen_seed);
      write_synthetic_corpus(gen_out, c);
      std::cerr << "wrote " << c.text.size() << " text utterances and " << c.splits.size() << " paired splits to "
                << gen_out << '\n';
    } else if (corpus_filter->parsed()) {
      std::vector<FilterRule> rules;
      for (const auto &r : filter_rules)
        rules.push_back(parse_filter_rule(r));
      const auto in = read_corpus(filter_in);
      const auto res = run_filters(in, rules);
      write_tagged_corpus(filter_out, res.kept);
      if (!filter_report.empty())
        write_file(filter_report, res.report.to_text());
      else
        std::cout << res.report.to_text();
    } else if (corpus_cmi_cmd->parsed()) {
      std::optional<Lexicon> lex;
      if (!cmi_lex_a.empty() || !cmi_lex_b.empty()) {
        if (cmi_lex_a.empty() || cmi_lex_b.empty())
          throw ConfigError("--lexicon-a and --lexicon-b go together");
        lex = Lexicon::load(cmi_lex_a, cmi_lex_b);
      }
      const auto in = read_corpus(cmi_in, lex ? &*lex : nullptr);
      std::cout << format_cmi_table({corpus_cmi(in, cmi_name)});
    } else if (train->parsed()) {
      StageConfig cfg = train_config.empty()
                            ? StageConfig::defaults_for_stage(train_stage_id)
                            : StageConfig::from_config(KeyValueConfig::load(train_config), train_stage_id);
      if (cfg.seed == 0)
        cfg.seed = derive_seed(train_seed, stage_label(train_stage_id));
      cfg.allow_lineage_mismatch = cfg.allow_lineage_mismatch || train_allow;
      ModelParams init;
      TrainingData data;
      if (train_stage_id == 1) {
        if (train_init.empty())
          throw ConfigError("stage 1 needs --init");
        init = load_checkpoint(train_init);
        const auto text = read_corpus(train_data);
        data = text_training_data(text, model_vocab(init), lexicon_from_tags(text));
      } else {
        const auto ds = read_paired_dataset(train_data);
        if (!train_init.empty()) {
          init = load_checkpoint(train_init);
        } else if (train_stage_id == 0) {
          Hyperparams hp =
              train_model.empty() ? Hyperparams{} : hyperparams_from_config(KeyValueConfig::load(train_model));
          hp.vocab_size = ds.vocab.size();
          const auto &first = ds.split(train_split).examples;
          if (first.empty())
            throw DataError("split " + train_split + " is empty");
          hp.input_dim = first.front().features.dim;
          init = init_model(hp, derive_seed(train_seed, "init"));
          init.vocab = ds.vocab.tokens();
        } else {
          throw ConfigError("stages 2 and 3 need --init");
        }
        if (init.vocab != ds.vocab.tokens())
          throw IncompatibleError("dataset vocabulary does not match the checkpoint");
        data = paired_training_data(ds.split(train_split).examples, ds.vocab);
      }
      const auto r = train_stage(std::move(init), cfg, data, [](const LogRecord &rec) {
        if (rec.step % 50 == 0)
          std::cerr << "step " << rec.step << " loss " << rec.loss << " lr " << rec.lr << '\n';
      });
      save_checkpoint(train_out, r.params);
      write_file(train_log.empty() ? train_out + ".log.jsonl" : train_log, r.log.to_jsonl(true));
      std::cerr << stage_label(train_stage_id) << ": " << r.log.total_updates << " updates, smoothed loss "
                << r.log.smoothed(false) << " -> " << r.log.smoothed(true) << '\n';
    } else if (merge_cmd->parsed()) {
      const auto m = merge(load_checkpoint(merge_base), load_checkpoint(merge_tuned), merge_ratio, merge_base,
                           merge_tuned);
      save_checkpoint(merge_out, m);
    } else if (sweep->parsed()) {
      const auto base = load_checkpoint(sweep_base), tuned = load_checkpoint(sweep_tuned);
      const auto sets = load_test_sets(sweep_testset, sweep_splits);
      const auto vocab = model_vocab(base);
      const auto cfg = sweep_dec.config();
      const auto table = ratio_sweep(base, tuned, parse_list(sweep_ratios, "ratios"), [&](const ModelParams &m) {
        const auto rep = eval_report({{"m", &m}}, sets, vocab, cfg);
        const auto &row = rep.rows.front();
        if (!row.failures.empty())
          throw DataError(row.failures.front());
        Metrics out;
        for (const auto &g : rep.groups())
          out.emplace_back(g, *rep.group_average(row, g));
        out.emplace_back("Avg.", *rep.overall_average(row));
        return out;
      });
      if (sweep_out.empty())
        std::cout << table.to_text();
      else
        write_file(sweep_out, table.to_text());
      if (!sweep_csv.empty())
        write_file(sweep_csv, table.to_csv());
    } else if (lm_cmd->parsed()) {
      const Vocab vocab = fs::path(lm_vocab).extension() == ".ckpt" ? model_vocab(load_checkpoint(lm_vocab))
                                                                    : read_vocab_file(lm_vocab);
      NGramOptions opts;
      opts.order = lm_order;
      opts.smoothing = parse_smoothing(lm_smoothing);
      opts.backoff = lm_backoff;
      opts.discount = lm_discount;
      const auto text = read_corpus(lm_in);
      const auto lm = train_lm(std::span<const Utterance>(text), vocab, opts);
      lm.save(lm_out);
      std::cerr << "trained " << lm_order << "-gram LM on " << text.size() << " utterances\n";
    } else if (tune->parsed()) {
      const auto p = load_checkpoint(tune_ckpt);
      const auto vocab = model_vocab(p);
      const auto lm = NGramLM::load(tune_lm);
      const auto dev = load_examples(tune_dev, tune_splits, vocab);
      const auto t = tune_fusion(p, lm, dev, vocab, parse_list(tune_alpha, "alpha"), parse_list(tune_beta, "beta"),
                                 tune_dec.config());
      if (tune_out.empty())
        std::cout << t.to_text();
      else
        write_file(tune_out, t.to_text());
    } else if (dec->parsed()) {
      const auto p = load_checkpoint(dec_ckpt);
      const auto vocab = model_vocab(p);
      const auto cfg = dec_opts.config();
      const auto lm = dec_opts.load_lm();
      for (const auto &ex : load_examples(dec_input, dec_splits, vocab)) {
        const auto r = decode(p, ex.features, cfg, lm ? &*lm : nullptr);
        std::cout << ex.utt.id << '\t' << hypothesis_text(r.best, vocab) << '\t' << std::setprecision(6)
                  << r.best.score << '\t' << r.best.asr << '\t' << r.best.lm << (r.truncated ? "\ttruncated" : "")
                  << '\n';
      }
    } else if (eval->parsed()) {
      std::vector<std::pair<std::string, ModelParams>> models;
      for (const auto &spec : eval_ckpts) {
        const auto eq = spec.find('=');
        const std::string name = eq == std::string::npos ? fs::path(spec).stem().string() : spec.substr(0, eq);
        models.emplace_back(name, load_checkpoint(eq == std::string::npos ? spec : spec.substr(eq + 1)));
      }
      const auto vocab = model_vocab(models.front().second);
      std::vector<ModelUnderTest> under_test;
      for (const auto &[name, p] : models) {
        if (p.vocab != models.front().second.vocab)
          throw IncompatibleError("checkpoints disagree on the vocabulary");
        under_test.push_back({name, &p});
      }
      const auto lm = eval_dec.load_lm();
      const auto rep =
          eval_report(under_test, load_test_sets(eval_testset, eval_splits), vocab, eval_dec.config(), lm ? &*lm : nullptr);
      if (eval_report_path.empty())
        std::cout << rep.to_text();
      else
        write_file(eval_report_path, rep.to_text());
      if (!eval_csv.empty())
        write_file(eval_csv, rep.to_csv());
    } else if (pipe->parsed()) {
      RunConfig rc = pipe_config.empty() ? RunConfig{} : RunConfig::load(pipe_config);
      if (pipe_seed)
        rc.seed = *pipe_seed;
      rc.skip_stage1 = rc.skip_stage1 || pipe_skip1;
      rc.resume = pipe_resume;
      const auto res = run_pipeline(rc, pipe_out, [&](const std::string &m) {
        if (!pipe_quiet)
          std::cerr << "[pipeline] " << m << '\n';
      });
      std::cout << res.report.to_text();
    }
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(exit_code(e));
  }
  return 0;
}

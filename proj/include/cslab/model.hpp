// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The cslab Authors
#pragma once

/**
 * @file model.hpp
 * @brief Small pre-LN encoder-decoder transformer with a five-way parameter
 *        partition: Encoder, DecoderSelfAttn, DecoderCrossAttn, DecoderFFN and
 *        OutputProj.
 *
 * Group assignment for parameters outside the four decoder blocks:
 *   - token embedding (tied with the output projection) -> OutputProj
 *   - final decoder layer norm                           -> OutputProj
 *   - per-block layer norms                              -> group of their block
 *   - trainable decoder positions (optional)             -> DecoderSelfAttn
 *   - encoder input projection, positions, norms         -> Encoder
 */

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace cslab {

enum class ParamGroup : int { Encoder = 0, DecoderSelfAttn, DecoderCrossAttn, DecoderFFN, OutputProj };

inline constexpr std::array<ParamGroup, 5> all_param_groups = {
    ParamGroup::Encoder, ParamGroup::DecoderSelfAttn, ParamGroup::DecoderCrossAttn, ParamGroup::DecoderFFN,
    ParamGroup::OutputProj};

inline std::string_view group_name(ParamGroup g) {
  switch (g) {
  case ParamGroup::Encoder: return "encoder";
  case ParamGroup::DecoderSelfAttn: return "self_attn";
  case ParamGroup::DecoderCrossAttn: return "cross_attn";
  case ParamGroup::DecoderFFN: return "ffn";
  case ParamGroup::OutputProj: return "output";
  }
  return "?";
}

inline ParamGroup parse_group(std::string_view s) {
  for (auto g : all_param_groups)
    if (group_name(g) == s)
      return g;
  throw ConfigError("unknown parameter group '" + std::string(s) + "'");
}

struct Hyperparams {
  std::size_t d_model = 32;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_dim = 64;
  std::size_t vocab_size = 64;
  std::size_t input_dim = 16;
  std::size_t max_frames = 64;
  std::size_t max_tokens = 32;
  /// Frames of the all-zero memory fed to cross-attention in zeroed mode.
  std::size_t zero_frames = 1;
  bool trainable_positions = false;

  void validate() const {
    const std::pair<const char *, std::size_t> fields[] = {
        {"d_model", d_model},       {"encoder_layers", encoder_layers}, {"decoder_layers", decoder_layers},
        {"heads", heads},           {"ffn_dim", ffn_dim},               {"vocab_size", vocab_size},
        {"input_dim", input_dim},   {"max_frames", max_frames},         {"max_tokens", max_tokens},
        {"zero_frames", zero_frames}};
    for (const auto &[name, v] : fields)
      if (v < 1)
        throw ConfigError(std::string("hyperparameter ") + name + " must be >= 1");
    if (d_model % heads != 0)
      throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by heads " +
                        std::to_string(heads));
  }

  bool operator==(const Hyperparams &) const = default;
};

inline void to_json(nlohmann::json &j, const Hyperparams &h) {
  j = {{"d_model", h.d_model},         {"encoder_layers", h.encoder_layers}, {"decoder_layers", h.decoder_layers},
       {"heads", h.heads},             {"ffn_dim", h.ffn_dim},               {"vocab_size", h.vocab_size},
       {"input_dim", h.input_dim},     {"max_frames", h.max_frames},         {"max_tokens", h.max_tokens},
       {"zero_frames", h.zero_frames}, {"trainable_positions", h.trainable_positions}};
}

inline void from_json(const nlohmann::json &j, Hyperparams &h) {
  j.at("d_model").get_to(h.d_model);
  j.at("encoder_layers").get_to(h.encoder_layers);
  j.at("decoder_layers").get_to(h.decoder_layers);
  j.at("heads").get_to(h.heads);
  j.at("ffn_dim").get_to(h.ffn_dim);
  j.at("vocab_size").get_to(h.vocab_size);
  j.at("input_dim").get_to(h.input_dim);
  j.at("max_frames").get_to(h.max_frames);
  j.at("max_tokens").get_to(h.max_tokens);
  j.at("zero_frames").get_to(h.zero_frames);
  j.at("trainable_positions").get_to(h.trainable_positions);
}

/// Closed-form number of scalar parameters.
inline std::size_t expected_parameter_count(const Hyperparams &h) {
  const std::size_t d = h.d_model, f = h.ffn_dim;
  const std::size_t ln = 2 * d, attn = 4 * (d * d + d), ffn = d * f + f + f * d + d;
  std::size_t enc = h.input_dim * d + d + h.encoder_layers * (ln + attn + ln + ffn) + ln;
  std::size_t dec = h.vocab_size * d + h.decoder_layers * (3 * ln + 2 * attn + ffn) + ln;
  if (h.trainable_positions) {
    enc += h.max_frames * d;
    dec += h.max_tokens * d;
  }
  return enc + dec;
}

struct ParamEntry {
  std::string name;
  ParamGroup group;
  int layer; // -1 for parameters outside a layer
  std::string role;
  Tensor value;
};

/// Named parameter set with stage lineage. Copies are deep; moves are cheap.
class ModelParams {
public:
  Hyperparams hp;
  std::uint64_t seed = 0;
  /// Array of stage labels; a merge is an object {"merge": {ratio, base, tuned}}.
  nlohmann::json lineage = nlohmann::json::array();
  /// Token strings indexed by id; may be empty for vocabulary-free models.
  std::vector<std::string> vocab;

  ModelParams() = default;
  ModelParams(ModelParams &&) noexcept = default;
  ModelParams &operator=(ModelParams &&) noexcept = default;
  ModelParams(const ModelParams &other)
      : hp(other.hp), seed(other.seed), lineage(other.lineage), vocab(other.vocab), index_(other.index_) {
    entries_.reserve(other.entries_.size());
    for (const auto &e : other.entries_)
      entries_.push_back({e.name, e.group, e.layer, e.role, e.value.deep_copy()});
  }
  ModelParams &operator=(const ModelParams &other) {
    if (this != &other)
      *this = ModelParams(other);
    return *this;
  }

  void add(ParamGroup group, int layer, std::string role, Tensor value) {
    std::string name = make_name(group, layer, role);
    if (index_.count(name))
      throw ConfigError("duplicate parameter " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), group, layer, std::move(role), std::move(value)});
  }

  static std::string make_name(ParamGroup group, int layer, std::string_view role) {
    std::string prefix = group == ParamGroup::Encoder ? "enc" : "dec";
    if (layer >= 0)
      prefix += "." + std::to_string(layer);
    return prefix + "." + std::string(role);
  }

  bool contains(std::string_view name) const { return index_.count(std::string(name)) != 0; }

  const Tensor &get(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end())
      throw IndexError("no parameter named " + std::string(name));
    return entries_[it->second].value;
  }
  const Tensor &get(ParamGroup group, int layer, std::string_view role) const {
    return get(make_name(group, layer, role));
  }

  const ParamEntry &entry(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end())
      throw IndexError("no parameter named " + std::string(name));
    return entries_[it->second];
  }

  std::span<const ParamEntry> entries() const { return entries_; }
  std::span<ParamEntry> entries() { return entries_; }

  std::vector<const ParamEntry *> group(ParamGroup g) const {
    std::vector<const ParamEntry *> out;
    for (const auto &e : entries_)
      if (e.group == g)
        out.push_back(&e);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto &e : entries_)
      n += e.value.size();
    return n;
  }

  /// The output projection is the token embedding itself.
  const Tensor &token_embedding() const { return get("dec.embed"); }
  const Tensor &output_projection() const { return get("dec.embed"); }

  void zero_grad() {
    for (auto &e : entries_)
      e.value.clear_grad();
  }

  void append_lineage(const std::string &label) { lineage.push_back(label); }

  /// Flattened labels, e.g. ["init", "pretrain", "stage1", "merge 0.4"].
  std::vector<std::string> lineage_labels() const {
    std::vector<std::string> out;
    for (const auto &item : lineage) {
      if (item.is_string()) {
        out.push_back(item.get<std::string>());
      } else if (item.contains("merge")) {
        const auto &m = item.at("merge");
        std::ostringstream os;
        os << "merge " << m.at("ratio").get<double>();
        out.push_back(os.str());
      }
    }
    return out;
  }

  std::string last_stage() const {
    auto labels = lineage_labels();
    return labels.empty() ? std::string{} : labels.back();
  }

private:
  std::vector<ParamEntry> entries_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

inline Tensor uniform_tensor(Rng &rng, Shape shape, double bound) {
  std::vector<double> v(shape_numel(shape));
  for (auto &x : v)
    x = uniform(rng, -bound, bound);
  return Tensor(std::move(shape), std::move(v));
}

inline double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

inline std::vector<double> sinusoid_table(std::size_t rows, std::size_t d) {
  std::vector<double> pe(rows * d);
  for (std::size_t p = 0; p < rows; ++p)
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      pe[p * d + i] = (i % 2 == 0) ? std::sin(static_cast<double>(p) * freq) : std::cos(static_cast<double>(p) * freq);
    }
  return pe;
}

inline void add_layer_norm(ModelParams &p, ParamGroup g, int layer, const std::string &role, std::size_t d) {
  p.add(g, layer, role + ".g", Tensor({d}, std::vector<double>(d, 1.0)));
  p.add(g, layer, role + ".b", Tensor::zeros({d}));
}

inline void add_attention(ModelParams &p, Rng &rng, ParamGroup g, int layer, const std::string &role, std::size_t d) {
  for (const char *proj : {"q", "k", "v", "o"}) {
    p.add(g, layer, role + ".w" + proj, uniform_tensor(rng, {d, d}, xavier_bound(d, d)));
    p.add(g, layer, role + ".b" + proj, Tensor::zeros({d}));
  }
}

inline void add_ffn(ModelParams &p, Rng &rng, ParamGroup g, int layer, std::size_t d, std::size_t f) {
  p.add(g, layer, "ffn.w1", uniform_tensor(rng, {d, f}, xavier_bound(d, f)));
  p.add(g, layer, "ffn.b1", Tensor::zeros({f}));
  p.add(g, layer, "ffn.w2", uniform_tensor(rng, {f, d}, xavier_bound(f, d)));
  p.add(g, layer, "ffn.b2", Tensor::zeros({d}));
}

} // namespace detail

/// Seeded initialization: Xavier-uniform matrices, zero biases, unit norm gains.
inline ModelParams init_model(const Hyperparams &hp, std::uint64_t seed) {
  hp.validate();
  Rng rng(derive_seed(seed, "init_model"));
  ModelParams p;
  p.hp = hp;
  p.seed = seed;
  const std::size_t d = hp.d_model, f = hp.ffn_dim;
  using G = ParamGroup;

  p.add(G::Encoder, -1, "in_proj.w", detail::uniform_tensor(rng, {hp.input_dim, d}, detail::xavier_bound(hp.input_dim, d)));
  p.add(G::Encoder, -1, "in_proj.b", Tensor::zeros({d}));
  if (hp.trainable_positions)
    p.add(G::Encoder, -1, "pos", Tensor({hp.max_frames, d}, detail::sinusoid_table(hp.max_frames, d)));
  for (std::size_t l = 0; l < hp.encoder_layers; ++l) {
    const int li = static_cast<int>(l);
    detail::add_layer_norm(p, G::Encoder, li, "attn_ln", d);
    detail::add_attention(p, rng, G::Encoder, li, "attn", d);
    detail::add_layer_norm(p, G::Encoder, li, "ffn_ln", d);
    detail::add_ffn(p, rng, G::Encoder, li, d, f);
  }
  detail::add_layer_norm(p, G::Encoder, -1, "final_ln", d);

  p.add(G::OutputProj, -1, "embed", detail::uniform_tensor(rng, {hp.vocab_size, d}, 1.0 / std::sqrt(static_cast<double>(d))));
  if (hp.trainable_positions)
    p.add(G::DecoderSelfAttn, -1, "pos", Tensor({hp.max_tokens, d}, detail::sinusoid_table(hp.max_tokens, d)));
  for (std::size_t l = 0; l < hp.decoder_layers; ++l) {
    const int li = static_cast<int>(l);
    detail::add_layer_norm(p, G::DecoderSelfAttn, li, "self_ln", d);
    detail::add_attention(p, rng, G::DecoderSelfAttn, li, "self_attn", d);
    detail::add_layer_norm(p, G::DecoderCrossAttn, li, "cross_ln", d);
    detail::add_attention(p, rng, G::DecoderCrossAttn, li, "cross_attn", d);
    detail::add_layer_norm(p, G::DecoderFFN, li, "ffn_ln", d);
    detail::add_ffn(p, rng, G::DecoderFFN, li, d, f);
  }
  detail::add_layer_norm(p, G::OutputProj, -1, "final_ln", d);
  p.append_lineage("init");
  return p;
}

/// Frames x input_dim acoustic features, row-major.
struct EncoderFeatures {
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  void validate() const {
    if (frames < 1)
      throw DataError("encoder features need at least one frame");
    if (values.size() != frames * dim)
      throw DataError("encoder feature buffer does not match frames x dim");
    for (double v : values)
      if (!std::isfinite(v))
        throw NumericError("encoder features contain a non-finite value");
  }

  Tensor tensor() const { return Tensor({frames, dim}, values); }
  bool operator==(const EncoderFeatures &) const = default;
};

using TokenSequence = std::vector<int>;

/// Tag selecting the all-zero encoder memory (decoder as a pure LM).
struct ZeroedEncoder {};
inline constexpr ZeroedEncoder zeroed_encoder{};

namespace detail {

inline Tensor linear(ComputeGraph &g, const Tensor &x, const Tensor &w, const Tensor &b) {
  return add_bias(g, matmul(g, x, w), b);
}

inline Tensor norm(ComputeGraph &g, const ModelParams &p, const std::string &prefix, const Tensor &x) {
  return layer_norm(g, x, p.get(prefix + ".g"), p.get(prefix + ".b"));
}

inline Tensor attention(ComputeGraph &g, const ModelParams &p, const std::string &prefix, const Tensor &query_in,
                        const Tensor &memory, bool causal) {
  const std::size_t d = p.hp.d_model, h = p.hp.heads, dh = d / h;
  Tensor q = linear(g, query_in, p.get(prefix + ".wq"), p.get(prefix + ".bq"));
  Tensor k = linear(g, memory, p.get(prefix + ".wk"), p.get(prefix + ".bk"));
  Tensor v = linear(g, memory, p.get(prefix + ".wv"), p.get(prefix + ".bv"));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(h);
  for (std::size_t i = 0; i < h; ++i) {
    Tensor qh = h == 1 ? q : slice_cols(g, q, i * dh, dh);
    Tensor kh = h == 1 ? k : slice_cols(g, k, i * dh, dh);
    Tensor vh = h == 1 ? v : slice_cols(g, v, i * dh, dh);
    Tensor scores = scale(g, matmul_nt(g, qh, kh), inv_sqrt);
    Tensor weights = softmax(g, scores, 1, causal);
    heads.push_back(matmul(g, weights, vh));
  }
  Tensor merged = h == 1 ? heads.front() : concat_cols(g, heads);
  return linear(g, merged, p.get(prefix + ".wo"), p.get(prefix + ".bo"));
}

inline Tensor feed_forward(ComputeGraph &g, const ModelParams &p, const std::string &prefix, const Tensor &x) {
  Tensor hidden = gelu(g, linear(g, x, p.get(prefix + ".w1"), p.get(prefix + ".b1")));
  return linear(g, hidden, p.get(prefix + ".w2"), p.get(prefix + ".b2"));
}

inline Tensor leading_rows(ComputeGraph &g, const Tensor &table, std::size_t rows) {
  std::vector<int> ids(rows);
  for (std::size_t i = 0; i < rows; ++i)
    ids[i] = static_cast<int>(i);
  return gather_rows(g, table, ids);
}

/// First `rows` positional rows: the trainable table when enabled, else sinusoids.
inline Tensor positions(ComputeGraph &g, const ModelParams &p, ParamGroup group, std::size_t rows) {
  if (p.hp.trainable_positions)
    return leading_rows(g, p.get(group, -1, "pos"), rows);
  return Tensor({rows, p.hp.d_model}, sinusoid_table(rows, p.hp.d_model));
}

inline Tensor decode_stack(ComputeGraph &g, const ModelParams &p, std::span<const int> prefix, const Tensor &memory) {
  const auto &hp = p.hp;
  if (prefix.empty())
    throw LengthError("decoder prefix is empty");
  if (prefix.size() > hp.max_tokens)
    throw LengthError("decoder prefix of " + std::to_string(prefix.size()) + " tokens exceeds max_tokens " +
                      std::to_string(hp.max_tokens));
  const Tensor &embed = p.token_embedding();
  Tensor x = scale(g, gather_rows(g, embed, prefix), std::sqrt(static_cast<double>(hp.d_model)));
  x = add(g, x, positions(g, p, ParamGroup::DecoderSelfAttn, prefix.size()));
  for (std::size_t l = 0; l < hp.decoder_layers; ++l) {
    const std::string pre = "dec." + std::to_string(l) + ".";
    Tensor h = norm(g, p, pre + "self_ln", x);
    x = add(g, x, attention(g, p, pre + "self_attn", h, h, true));
    h = norm(g, p, pre + "cross_ln", x);
    x = add(g, x, attention(g, p, pre + "cross_attn", h, memory, false));
    h = norm(g, p, pre + "ffn_ln", x);
    x = add(g, x, feed_forward(g, p, pre + "ffn", h));
  }
  x = norm(g, p, "dec.final_ln", x);
  return matmul_nt(g, x, p.output_projection());
}

} // namespace detail

/// Encoder stack: input projection, positions, pre-LN layers, final norm.
/// Reads Encoder-group parameters only.
inline Tensor encode(ComputeGraph &g, const ModelParams &p, const EncoderFeatures &features) {
  const auto &hp = p.hp;
  features.validate();
  if (features.dim != hp.input_dim)
    throw ShapeError("encoder features have dim " + std::to_string(features.dim) + ", model expects " +
                     std::to_string(hp.input_dim));
  if (features.frames > hp.max_frames)
    throw LengthError(std::to_string(features.frames) + " frames exceed max_frames " + std::to_string(hp.max_frames));
  Tensor x = detail::linear(g, features.tensor(), p.get("enc.in_proj.w"), p.get("enc.in_proj.b"));
  x = add(g, x, detail::positions(g, p, ParamGroup::Encoder, features.frames));
  for (std::size_t l = 0; l < hp.encoder_layers; ++l) {
    const std::string pre = "enc." + std::to_string(l) + ".";
    Tensor h = detail::norm(g, p, pre + "attn_ln", x);
    x = add(g, x, detail::attention(g, p, pre + "attn", h, h, false));
    h = detail::norm(g, p, pre + "ffn_ln", x);
    x = add(g, x, detail::feed_forward(g, p, pre + "ffn", h));
  }
  return detail::norm(g, p, "enc.final_ln", x);
}

/// Causal decoder over `prefix` attending to real encoder output.
inline Tensor decoder_logits(ComputeGraph &g, const ModelParams &p, std::span<const int> prefix, const Tensor &encoded) {
  if (encoded.rank() != 2 || encoded.cols() != p.hp.d_model)
    throw ShapeError("encoder output must be L x d_model, got " + shape_str(encoded.shape()));
  return detail::decode_stack(g, p, prefix, encoded);
}

/// Causal decoder whose cross-attention reads a zero_frames x d zero matrix,
/// so no audio can influence the result.
inline Tensor decoder_logits(ComputeGraph &g, const ModelParams &p, std::span<const int> prefix, ZeroedEncoder) {
  return detail::decode_stack(g, p, prefix, Tensor::zeros({p.hp.zero_frames, p.hp.d_model}));
}

/// One teacher-forced example: tokens = [<bos>, prompt..., words..., <eos>].
/// Targets covering the prompt are ignored, so the model is conditioned on
/// the prompt but never trained to predict it.
struct Sample {
  TokenSequence tokens;
  std::size_t prompt_len = 0;
  std::optional<EncoderFeatures> features;

  std::size_t target_count() const { return tokens.size() - 1 - prompt_len; }
};

inline constexpr int ignore_index = -100;

/// Builds a sample from word ids and prompt ids using the given bos/eos ids.
inline Sample make_sample(std::span<const int> words, std::span<const int> prompt, int bos, int eos,
                          std::optional<EncoderFeatures> features = std::nullopt) {
  Sample s;
  s.tokens.push_back(bos);
  s.tokens.insert(s.tokens.end(), prompt.begin(), prompt.end());
  s.tokens.insert(s.tokens.end(), words.begin(), words.end());
  s.tokens.push_back(eos);
  s.prompt_len = prompt.size();
  s.features = std::move(features);
  return s;
}

/// Decoder input (all but the last token) and shifted targets with the prompt masked.
inline std::pair<TokenSequence, std::vector<int>> teacher_forcing(const Sample &s) {
  if (s.tokens.size() < 2 + s.prompt_len)
    throw DataError("sample has no target tokens");
  TokenSequence input(s.tokens.begin(), s.tokens.end() - 1);
  std::vector<int> targets(s.tokens.begin() + 1, s.tokens.end());
  for (std::size_t i = 0; i < s.prompt_len; ++i)
    targets[i] = ignore_index;
  return {std::move(input), std::move(targets)};
}

/// Teacher-forced logits for one sample as the given stage sees it: stage 1
/// drops the audio and reads the zeroed encoder.
inline Tensor stage_logits(ComputeGraph &g, const ModelParams &p, const Sample &s, int stage) {
  if (stage < 1 || stage > 3)
    throw ArgumentError("stage must be 1, 2 or 3, got " + std::to_string(stage));
  const TokenSequence input = teacher_forcing(s).first;
  if (stage == 1)
    return decoder_logits(g, p, input, zeroed_encoder);
  if (!s.features)
    throw DataError("stage " + std::to_string(stage) + " needs paired audio, sample has none");
  return decoder_logits(g, p, input, encode(g, p, *s.features));
}

struct StageLoss {
  Tensor loss;                  // scalar, mean over every target token in the batch
  std::size_t tokens = 0;       // number of target tokens averaged over
  std::size_t ignored_audio = 0; // stage-1 samples whose features were dropped
};

/// Teacher-forced next-token cross-entropy. Stage 1 decodes against the zeroed
/// encoder; stages 2 and 3 encode the paired features. The formula is the same
/// for every stage; what trains is decided by the freeze mask.
inline StageLoss loss_stage(ComputeGraph &g, const ModelParams &p, std::span<const Sample> batch, int stage) {
  if (stage < 1 || stage > 3)
    throw ArgumentError("stage must be 1, 2 or 3, got " + std::to_string(stage));
  if (batch.empty())
    throw DataError("empty batch");
  StageLoss out;
  for (const auto &s : batch)
    out.tokens += s.target_count();
  if (out.tokens == 0)
    throw DataError("batch has no target tokens");
  Tensor total;
  for (const auto &s : batch) {
    if (stage == 1 && s.features)
      ++out.ignored_audio;
    const Tensor logits = stage_logits(g, p, s, stage);
    const std::vector<int> targets = teacher_forcing(s).second;
    Tensor part = scale(g, cross_entropy(g, logits, targets, ignore_index),
                        static_cast<double>(s.target_count()) / static_cast<double>(out.tokens));
    total = total.defined() ? add(g, total, part) : part;
  }
  out.loss = total;
  return out;
}

} // namespace cslab

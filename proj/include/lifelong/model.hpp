#pragma once

// Byte-level transformer language model (pre-LN blocks, learned absolute
// positions, LM head tied to the token embedding). Every weight lives in a
// flat name -> Tensor map so growth operators can address it by path.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lifelong/ops.hpp"
#include "lifelong/random.hpp"

namespace lifelong {

inline constexpr std::int32_t kPadToken = 256;
inline constexpr std::int32_t kMaskToken = 257;
inline constexpr std::size_t kByteVocabSize = 258;
inline constexpr double kInitStddev = 0.02;
inline constexpr double kMaskRate = 0.15;

enum class Objective : std::uint8_t { masked_lm, causal_lm };

inline std::string_view to_string(Objective objective) {
  return objective == Objective::masked_lm ? "masked-lm" : "causal-lm";
}

inline Objective parse_objective(std::string_view text) {
  if (text == "masked-lm" || text == "bert-style") return Objective::masked_lm;
  if (text == "causal-lm" || text == "gpt-style") return Objective::causal_lm;
  throw ConfigError("objective: unknown value '" + std::string(text) + "'");
}

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t d_head = 8;
  std::size_t d_ffn = 128;
  std::size_t vocab_size = kByteVocabSize;
  std::size_t max_seq_len = 64;
  Objective objective = Objective::causal_lm;
  double dropout = 0.1;

  bool operator==(const ModelConfig&) const = default;

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v < 1) throw ConfigError(std::string("model.") + name + " must be >= 1");
    };
    positive(n_layers, "n_layers");
    positive(d_model, "d_model");
    positive(n_heads, "n_heads");
    positive(d_head, "d_head");
    positive(d_ffn, "d_ffn");
    positive(vocab_size, "vocab_size");
    positive(max_seq_len, "max_seq_len");
    if (d_model != n_heads * d_head) {
      throw ConfigError("model.d_model must equal n_heads * d_head (" + std::to_string(d_model) +
                        " != " + std::to_string(n_heads) + " * " + std::to_string(d_head) + ")");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must be in [0, 1)");
  }

  /// Closed-form element count of all model parameters.
  std::size_t parameter_count() const {
    const std::size_t d = d_model, f = d_ffn;
    const std::size_t per_layer = 2 * d            // ln1
                                  + 4 * (d * d + d)  // q, k, v, o with biases
                                  + 2 * d          // ln2
                                  + d * f + f      // w1, b1
                                  + f * d + d;     // w2, b2
    return vocab_size * d + max_seq_len * d + n_layers * per_layer + 2 * d;
  }
};

/// How often each layer (or the layer it was copied from) has been replicated.
struct LayerCopyLedger {
  std::vector<std::uint32_t> counts;

  bool operator==(const LayerCopyLedger&) const = default;
};

/// Fixed-length token sequences with one domain label per sequence.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::int32_t> tokens;
  std::vector<std::string> domains;
  std::vector<std::uint64_t> origins;
};

struct SequenceView {
  std::string_view domain;
  std::uint64_t origin = 0;
  std::span<const std::uint8_t> bytes;
};

inline TokenBatch make_token_batch(std::span<const SequenceView> sequences) {
  TokenBatch out;
  if (sequences.empty()) return out;
  out.batch = sequences.size();
  out.seq = sequences.front().bytes.size();
  out.tokens.reserve(out.batch * out.seq);
  for (const auto& s : sequences) {
    if (s.bytes.size() != out.seq) throw InvalidArgument("make_token_batch: ragged sequences");
    out.tokens.insert(out.tokens.end(), s.bytes.begin(), s.bytes.end());
    out.domains.emplace_back(s.domain);
    out.origins.push_back(s.origin);
  }
  return out;
}

using ParameterMap = std::map<std::string, Tensor, std::less<>>;

inline std::string layer_key(std::size_t layer, std::string_view name) {
  return "layers." + std::to_string(layer) + "." + std::string(name);
}

/// Per-layer parameter names with their shapes under a config.
inline std::vector<std::pair<std::string, Shape>> layer_parameter_shapes(const ModelConfig& c) {
  const std::size_t d = c.d_model, inner = c.n_heads * c.d_head, f = c.d_ffn;
  return {
      {"ln1.gain", {d}},       {"ln1.bias", {d}},       {"attn.wq", {d, inner}}, {"attn.bq", {inner}},
      {"attn.wk", {d, inner}}, {"attn.bk", {inner}},    {"attn.wv", {d, inner}}, {"attn.bv", {inner}},
      {"attn.wo", {inner, d}}, {"attn.bo", {d}},        {"ln2.gain", {d}},       {"ln2.bias", {d}},
      {"ffn.w1", {d, f}},      {"ffn.b1", {f}},         {"ffn.w2", {f, d}},      {"ffn.b2", {d}},
  };
}

inline std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& c) {
  std::vector<std::pair<std::string, Shape>> out{
      {"tok_emb", {c.vocab_size, c.d_model}},
      {"pos_emb", {c.max_seq_len, c.d_model}},
      {"ln_f.gain", {c.d_model}},
      {"ln_f.bias", {c.d_model}},
  };
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    for (auto& [name, shape] : layer_parameter_shapes(c)) out.emplace_back(layer_key(l, name), shape);
  }
  return out;
}

class TransformerLM {
 public:
  TransformerLM() = default;

  TransformerLM(ModelConfig config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    std::normal_distribution<float> init(0.0f, static_cast<float>(kInitStddev));
    for (auto& [name, shape] : parameter_shapes(config_)) {
      Tensor t(shape, true);
      const bool is_gain = name.ends_with(".gain");
      const bool is_vector = shape.size() == 1;
      for (auto& v : t.values()) v = is_gain ? 1.0f : is_vector ? 0.0f : init(rng);
      params_.emplace(name, std::move(t));
    }
    ledger_.counts.assign(config_.n_layers, 0);
  }

  TransformerLM(ModelConfig config, ParameterMap params, LayerCopyLedger ledger)
      : config_(config), params_(std::move(params)), ledger_(std::move(ledger)) {
    config_.validate();
    validate();
  }

  const ModelConfig& config() const { return config_; }
  ParameterMap& parameters() { return params_; }
  const ParameterMap& parameters() const { return params_; }
  LayerCopyLedger& ledger() { return ledger_; }
  const LayerCopyLedger& ledger() const { return ledger_; }

  const Tensor& param(std::string_view name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw InvalidArgument("model: no parameter '" + std::string(name) + "'");
    return it->second;
  }
  Tensor& param(std::string_view name) {
    return const_cast<Tensor&>(std::as_const(*this).param(name));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
  }

  /// Deep copy; the result shares no storage with this model.
  TransformerLM clone() const {
    ParameterMap copy;
    for (const auto& [name, t] : params_) copy.emplace(name, t.clone());
    return TransformerLM(config_, std::move(copy), ledger_);
  }

  void validate() const {
    auto expected = parameter_shapes(config_);
    if (expected.size() != params_.size()) {
      throw InvalidArgument("model: expected " + std::to_string(expected.size()) + " parameters, found " +
                            std::to_string(params_.size()));
    }
    for (const auto& [name, shape] : expected) {
      const Tensor& t = param(name);
      if (t.shape() != shape) {
        throw ShapeError("model: parameter " + name + " has shape " + to_string(t.shape()) + ", expected " +
                         to_string(shape));
      }
    }
    if (ledger_.counts.size() != config_.n_layers) {
      throw InvalidArgument("model: ledger covers " + std::to_string(ledger_.counts.size()) + " layers, model has " +
                            std::to_string(config_.n_layers));
    }
  }

 private:
  ModelConfig config_;
  ParameterMap params_;
  LayerCopyLedger ledger_;
};

struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;                      // dropout source, required when training with dropout > 0
  std::vector<Tensor>* attention = nullptr;  // receives per-layer [batch*heads, T, T] attention weights
};

/// Number of leading positions occupied by a prompt.
inline std::size_t prompt_offset(std::span<const Tensor> prompts) { return prompts.empty() ? 0 : 1; }

/// Logits [batch, T, vocab] with T = seq (+1 when prompts are given; one
/// prompt row per sequence, occupying position 0).
inline Tensor forward(const TransformerLM& model, const TokenBatch& batch, std::span<const Tensor> prompts = {},
                      const ForwardOptions& options = {}) {
  const ModelConfig& c = model.config();
  if (batch.batch == 0 || batch.seq == 0) throw InvalidArgument("forward: empty batch");
  const std::size_t offset = prompt_offset(prompts);
  const std::size_t steps = batch.seq + offset;
  if (steps > c.max_seq_len) {
    throw InvalidArgument("forward: sequence of " + std::to_string(steps) + " positions exceeds max_seq_len " +
                          std::to_string(c.max_seq_len));
  }
  for (auto id : batch.tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size) {
      throw InvalidArgument("forward: token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(c.vocab_size));
    }
  }
  const bool use_dropout = options.training && c.dropout > 0.0;
  if (use_dropout && options.rng == nullptr) throw InvalidArgument("forward: training with dropout needs an rng");
  auto drop = [&](const Tensor& t) { return use_dropout ? dropout(t, c.dropout, *options.rng) : t; };

  const std::size_t B = batch.batch, D = c.d_model, H = c.n_heads, Dh = c.d_head;
  Tensor x = embedding(model.param("tok_emb"), batch.tokens, Shape{B, batch.seq});
  if (offset) x = prepend_rows(x, prompts);
  std::vector<std::int32_t> positions(B * steps);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < steps; ++t) positions[b * steps + t] = static_cast<std::int32_t>(t);
  }
  x = drop(add(x, embedding(model.param("pos_emb"), positions, Shape{B, steps})));

  const AttentionMask mask = c.objective == Objective::causal_lm ? AttentionMask::causal : AttentionMask::none;
  const float attn_scale = 1.0f / std::sqrt(static_cast<float>(Dh));
  auto split_heads = [&](const Tensor& t) {
    return reshape(transpose(reshape(t, Shape{B, steps, H, Dh}), 1, 2), Shape{B * H, steps, Dh});
  };

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    auto p = [&](std::string_view name) -> const Tensor& { return model.param(layer_key(l, name)); };
    Tensor h = layer_norm(x, p("ln1.gain"), p("ln1.bias"));
    Tensor q = split_heads(add_bias(matmul(h, p("attn.wq")), p("attn.bq")));
    Tensor k = split_heads(add_bias(matmul(h, p("attn.wk")), p("attn.bk")));
    Tensor v = split_heads(add_bias(matmul(h, p("attn.wv")), p("attn.bv")));
    Tensor weights = softmax(scale(bmm(q, k, true), attn_scale), mask);
    if (options.attention) options.attention->push_back(weights);
    Tensor mixed = reshape(transpose(reshape(bmm(weights, v), Shape{B, H, steps, Dh}), 1, 2), Shape{B, steps, D});
    x = add(x, drop(add_bias(matmul(mixed, p("attn.wo")), p("attn.bo"))));

    h = layer_norm(x, p("ln2.gain"), p("ln2.bias"));
    Tensor inner = gelu(add_bias(matmul(h, p("ffn.w1")), p("ffn.b1")));
    x = add(x, drop(add_bias(matmul(inner, p("ffn.w2")), p("ffn.b2"))));
  }
  x = layer_norm(x, model.param("ln_f.gain"), model.param("ln_f.bias"));
  return matmul(x, model.param("tok_emb"), /*transpose_b=*/true);
}

/// Model inputs and per-position targets for one batch under the model's
/// objective. targets has batch * (seq + offset) entries aligned with logits.
struct LmExample {
  TokenBatch inputs;
  std::vector<std::int32_t> targets;
  std::size_t offset = 0;
};

/// Masked positions for one sequence: round(15%) of positions (at least one),
/// chosen by a generator keyed on (mask_seed, origin) so a given chunk is
/// masked identically in every evaluation.
inline std::vector<std::size_t> masked_positions(std::size_t seq, std::uint64_t mask_seed, std::uint64_t origin) {
  const std::size_t count = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(kMaskRate * seq)));
  std::vector<std::size_t> order(seq);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(mask_seed, origin));
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, seq - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  order.resize(count);
  std::sort(order.begin(), order.end());
  return order;
}

inline LmExample make_lm_example(const ModelConfig& config, const TokenBatch& batch, bool prompted,
                                 std::uint64_t mask_seed) {
  LmExample ex;
  ex.inputs = batch;
  ex.offset = prompted ? 1 : 0;
  const std::size_t steps = batch.seq + ex.offset;
  ex.targets.assign(batch.batch * steps, kIgnoreTarget);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    const std::int32_t* seq = batch.tokens.data() + b * batch.seq;
    std::int32_t* tgt = ex.targets.data() + b * steps + ex.offset;
    if (config.objective == Objective::causal_lm) {
      for (std::size_t t = 0; t + 1 < batch.seq; ++t) tgt[t] = seq[t + 1];
    } else {
      const std::uint64_t origin = b < batch.origins.size() ? batch.origins[b] : b;
      for (std::size_t pos : masked_positions(batch.seq, mask_seed, origin)) {
        tgt[pos] = seq[pos];
        ex.inputs.tokens[b * batch.seq + pos] = kMaskToken;
      }
    }
  }
  return ex;
}

inline std::size_t prediction_count(const LmExample& ex) {
  return static_cast<std::size_t>(
      std::count_if(ex.targets.begin(), ex.targets.end(), [](std::int32_t t) { return t != kIgnoreTarget; }));
}

/// Mean cross-entropy over predicted positions; prompt positions never carry a target.
inline Tensor lm_loss(const TransformerLM& model, const TokenBatch& batch, std::span<const Tensor> prompts = {},
                      const ForwardOptions& options = {}, std::uint64_t mask_seed = 0) {
  LmExample ex = make_lm_example(model.config(), batch, !prompts.empty(), mask_seed);
  Tensor logits = forward(model, ex.inputs, prompts, options);
  return cross_entropy(logits, ex.targets);
}

/// exp(mean token cross-entropy) over a slice of same-domain sequences.
/// When `prompt` is given it is prepended to every sequence.
inline double perplexity(const TransformerLM& model, std::span<const SequenceView> slice,
                         const Tensor* prompt = nullptr, std::size_t batch_size = 32, std::uint64_t mask_seed = 0) {
  if (slice.empty()) throw InvalidArgument("perplexity: empty slice");
  NoGradGuard guard;
  double weighted = 0.0;
  std::size_t total = 0;
  for (std::size_t start = 0; start < slice.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, slice.size() - start);
    TokenBatch batch = make_token_batch(slice.subspan(start, n));
    std::vector<Tensor> rows;
    if (prompt) rows.assign(n, *prompt);
    LmExample ex = make_lm_example(model.config(), batch, prompt != nullptr, mask_seed);
    const std::size_t count = prediction_count(ex);
    const float mean_nll = cross_entropy(forward(model, ex.inputs, rows), ex.targets).item();
    weighted += static_cast<double>(mean_nll) * static_cast<double>(count);
    total += count;
  }
  return std::exp(weighted / static_cast<double>(total));
}

}  // namespace lifelong

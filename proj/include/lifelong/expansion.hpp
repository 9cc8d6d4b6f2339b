#pragma once

// Model growth: function-preserving width expansion by neuron duplication
// and depth expansion by layer copy-and-insert.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lifelong/model.hpp"
#include "lifelong/random.hpp"

namespace lifelong {

inline constexpr double kDefaultNoiseScale = 1e-3;

/// Neuron mapping for one dimension family. mapping[i] is the (0-based)
/// source neuron of new neuron i; counts[i] is how many new neurons share
/// that source.
struct WidthMap {
  std::size_t old_size = 0;
  std::vector<std::size_t> mapping;
  std::vector<std::uint32_t> counts;

  std::size_t new_size() const { return mapping.size(); }
  std::size_t delta() const { return mapping.size() - old_size; }
  bool is_identity() const { return mapping.size() == old_size; }

  bool operator==(const WidthMap&) const = default;
};

inline void recount(WidthMap& map) {
  std::vector<std::uint32_t> per_source(map.old_size, 0);
  for (std::size_t s : map.mapping) ++per_source[s];
  map.counts.resize(map.mapping.size());
  for (std::size_t i = 0; i < map.mapping.size(); ++i) map.counts[i] = per_source[map.mapping[i]];
}

inline WidthMap identity_width_map(std::size_t size) {
  WidthMap map;
  map.old_size = size;
  map.mapping.resize(size);
  std::iota(map.mapping.begin(), map.mapping.end(), 0);
  map.counts.assign(size, 1);
  return map;
}

/// First h1 neurons map to themselves; each of the delta new neurons copies
/// a source drawn uniformly from the old ones.
inline WidthMap sample_width_map(std::size_t h1, std::size_t delta, std::uint64_t seed) {
  if (h1 == 0 && delta > 0) throw InvalidArgument("sample_width_map: cannot grow an empty axis");
  WidthMap map = identity_width_map(h1);
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, h1 == 0 ? 0 : h1 - 1);
  for (std::size_t i = 0; i < delta; ++i) map.mapping.push_back(pick(rng));
  recount(map);
  return map;
}

/// Expands a map on groups (attention heads) to the neurons inside them.
inline WidthMap block_width_map(const WidthMap& groups, std::size_t block) {
  WidthMap map;
  map.old_size = groups.old_size * block;
  for (std::size_t g : groups.mapping) {
    for (std::size_t j = 0; j < block; ++j) map.mapping.push_back(g * block + j);
  }
  recount(map);
  return map;
}

namespace detail {

inline void check_axis(const Shape& shape, std::size_t axis, const WidthMap& map, std::string_view op) {
  if (axis >= shape.size() || shape[axis] != map.old_size) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " of " + to_string(shape) +
                     " does not match map of old size " + std::to_string(map.old_size));
  }
}

}  // namespace detail

/// Grows axis 0: row i = W[m(i)] / C_i, plus N(0, noise_scale) on rows whose
/// source was duplicated. Rows with C_i == 1 are copied bit for bit.
template <typename T>
BasicTensor<T> expand_in_axis(const BasicTensor<T>& w, const WidthMap& map, double noise_scale, Rng& rng) {
  detail::check_axis(w.shape(), 0, map, "expand_in_axis");
  if (noise_scale < 0.0) throw InvalidArgument("expand_in_axis: negative noise scale");
  Shape shape = w.shape();
  shape[0] = map.new_size();
  const std::size_t row = w.numel() / std::max<std::size_t>(map.old_size, 1);
  BasicTensor<T> out(shape, w.requires_grad());
  auto src = w.values();
  auto dst = out.values();
  std::normal_distribution<double> noise(0.0, noise_scale);
  for (std::size_t i = 0; i < map.new_size(); ++i) {
    const T* from = src.data() + map.mapping[i] * row;
    T* to = dst.data() + i * row;
    if (map.counts[i] == 1) {
      std::copy_n(from, row, to);
      continue;
    }
    const T c = static_cast<T>(map.counts[i]);
    for (std::size_t j = 0; j < row; ++j) {
      to[j] = from[j] / c;
      if (noise_scale > 0.0) to[j] += static_cast<T>(noise(rng));
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> expand_in_axis(const BasicTensor<T>& w, const WidthMap& map) {
  Rng unused(0);
  return expand_in_axis(w, map, 0.0, unused);
}

/// Grows the last axis by plain column replication.
template <typename T>
BasicTensor<T> expand_out_axis(const BasicTensor<T>& w, const WidthMap& map) {
  const std::size_t axis = w.rank() == 0 ? 0 : w.rank() - 1;
  detail::check_axis(w.shape(), axis, map, "expand_out_axis");
  Shape shape = w.shape();
  shape[axis] = map.new_size();
  const std::size_t rows = w.numel() / std::max<std::size_t>(map.old_size, 1);
  BasicTensor<T> out(shape, w.requires_grad());
  auto src = w.values();
  auto dst = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < map.new_size(); ++j) {
      dst[r * map.new_size() + j] = src[r * map.old_size + map.mapping[j]];
    }
  }
  return out;
}

enum class Placement : std::uint8_t { after, before };

inline std::string_view to_string(Placement p) {
  switch (p) {
    case Placement::after: return "after";
    case Placement::before: return "before";
  }
  return "after";
}

inline Placement parse_placement(std::string_view text) {
  if (text == "after") return Placement::after;
  if (text == "before") return Placement::before;
  throw ConfigError("placement: unknown value '" + std::string(text) + "'");
}

struct DepthPlan {
  std::size_t copies = 0;
  std::vector<std::size_t> layers;  // explicit selection; empty = pick from least-copied layers
  Placement placement = Placement::after;
  bool allow_recopy = false;        // accept layers that are not among the least copied

  bool operator==(const DepthPlan&) const = default;
};

struct ExpansionPlan {
  std::size_t d_model_delta = 0;
  std::size_t n_heads_delta = 0;
  std::size_t d_ffn_delta = 0;
  std::optional<DepthPlan> depth;
  double noise_scale = kDefaultNoiseScale;
  std::uint64_t seed = 0;

  bool grows_width() const { return d_model_delta + n_heads_delta + d_ffn_delta > 0; }
  bool grows_depth() const { return depth && depth->copies > 0; }

  bool operator==(const ExpansionPlan&) const = default;
};

/// Checks the plan against a model config and returns the grown config.
inline ModelConfig expanded_config(const ModelConfig& c, const ExpansionPlan& plan) {
  if (!(plan.noise_scale >= 0.0)) throw ConfigError("plan.noise_scale must be non-negative");
  if (plan.d_model_delta != plan.n_heads_delta * c.d_head) {
    throw ConfigError("plan: d_model_delta (" + std::to_string(plan.d_model_delta) + ") must equal n_heads_delta (" +
                      std::to_string(plan.n_heads_delta) + ") * d_head (" + std::to_string(c.d_head) + ")");
  }
  ModelConfig out = c;
  out.d_model += plan.d_model_delta;
  out.n_heads += plan.n_heads_delta;
  out.d_ffn += plan.d_ffn_delta;
  if (plan.depth) {
    const DepthPlan& d = *plan.depth;
    if (d.copies < 1 || d.copies > c.n_layers) {
      throw ConfigError("plan.depth.copies must be in [1, " + std::to_string(c.n_layers) + "], got " +
                        std::to_string(d.copies));
    }
    if (!d.layers.empty() && d.layers.size() != d.copies) {
      throw ConfigError("plan.depth.layers lists " + std::to_string(d.layers.size()) + " layers for " +
                        std::to_string(d.copies) + " copies");
    }
    out.n_layers += d.copies;
  }
  out.validate();
  return out;
}

/// Width maps shared by every tensor of a grown model.
struct WidthMaps {
  WidthMap d_model;
  WidthMap heads;        // head granular
  WidthMap head_neurons;  // heads expanded to d_head blocks
  WidthMap d_ffn;
};

inline WidthMaps sample_width_maps(const ModelConfig& c, const ExpansionPlan& plan) {
  WidthMaps maps;
  maps.d_model = sample_width_map(c.d_model, plan.d_model_delta, derive_seed(plan.seed, "d_model"));
  maps.heads = sample_width_map(c.n_heads, plan.n_heads_delta, derive_seed(plan.seed, "heads"));
  maps.head_neurons = block_width_map(maps.heads, c.d_head);
  maps.d_ffn = sample_width_map(c.d_ffn, plan.d_ffn_delta, derive_seed(plan.seed, "d_ffn"));
  return maps;
}

/// Which width maps act on a parameter's rows (in axis, 1/C + noise) and
/// columns or entries (out axis, replication). Vectors use only one of them.
struct AxisRole {
  const WidthMap* in = nullptr;
  const WidthMap* out = nullptr;
};

inline AxisRole axis_role(std::string_view name, const WidthMaps& maps) {
  auto suffix = [&](std::string_view s) { return name.ends_with(s); };
  if (name == "tok_emb" || name == "pos_emb") return {nullptr, &maps.d_model};
  // the tied head reads the final norm output along d_model, so its entries split mass
  if (name == "ln_f.gain" || name == "ln_f.bias") return {&maps.d_model, nullptr};
  if (suffix("ln1.gain") || suffix("ln1.bias") || suffix("ln2.gain") || suffix("ln2.bias")) {
    return {nullptr, &maps.d_model};
  }
  if (suffix("attn.wq") || suffix("attn.wk") || suffix("attn.wv")) return {&maps.d_model, &maps.head_neurons};
  if (suffix("attn.bq") || suffix("attn.bk") || suffix("attn.bv")) return {nullptr, &maps.head_neurons};
  if (suffix("attn.wo")) return {&maps.head_neurons, &maps.d_model};
  if (suffix("attn.bo") || suffix("ffn.b2")) return {nullptr, &maps.d_model};
  if (suffix("ffn.w1")) return {&maps.d_model, &maps.d_ffn};
  if (suffix("ffn.b1")) return {nullptr, &maps.d_ffn};
  if (suffix("ffn.w2")) return {&maps.d_ffn, &maps.d_model};
  throw InvalidArgument("expand_width: no axis role for parameter '" + std::string(name) + "'");
}

inline Tensor expand_tensor(const Tensor& t, const AxisRole& role, double noise_scale, Rng& rng) {
  Tensor out = t;
  if (role.out) out = expand_out_axis(out, *role.out);
  if (role.in) out = expand_in_axis(out, *role.in, noise_scale, rng);
  if (!role.in && !role.out) out = t.clone();
  out.set_requires_grad(t.requires_grad());
  return out;
}

/// Grows a prompt vector with the d_model map (replicated like an embedding row).
inline Tensor expand_prompt(const Tensor& prompt, const WidthMap& d_model) {
  Tensor out = expand_out_axis(prompt, d_model);
  out.set_requires_grad(prompt.requires_grad());
  return out;
}

inline TransformerLM expand_width(const TransformerLM& model, const ExpansionPlan& plan, const WidthMaps& maps) {
  const ModelConfig& c = model.config();
  ExpansionPlan width_only = plan;
  width_only.depth.reset();
  ModelConfig grown = expanded_config(c, width_only);
  if (!plan.grows_width()) return model.clone();
  if (maps.d_model.old_size != c.d_model || maps.d_model.new_size() != grown.d_model ||
      maps.head_neurons.old_size != c.n_heads * c.d_head || maps.head_neurons.new_size() != grown.n_heads * c.d_head ||
      maps.d_ffn.old_size != c.d_ffn || maps.d_ffn.new_size() != grown.d_ffn) {
    throw InvalidArgument("expand_width: width maps do not match the plan");
  }
  Rng noise_rng(derive_seed(plan.seed, "noise"));
  ParameterMap params;
  for (const auto& [name, t] : model.parameters()) {
    params.emplace(name, expand_tensor(t, axis_role(name, maps), plan.noise_scale, noise_rng));
  }
  return TransformerLM(grown, std::move(params), model.ledger());
}

inline TransformerLM expand_width(const TransformerLM& model, const ExpansionPlan& plan) {
  return expand_width(model, plan, sample_width_maps(model.config(), plan));
}

/// Picks `copies` distinct layers, least-copied first, ties broken by the seed.
inline std::vector<std::size_t> choose_layers_to_copy(const LayerCopyLedger& ledger, std::size_t copies,
                                                      std::uint64_t seed) {
  if (copies < 1 || copies > ledger.counts.size()) {
    throw ConfigError("depth: copies must be in [1, " + std::to_string(ledger.counts.size()) + "]");
  }
  std::vector<std::size_t> order(ledger.counts.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ledger.counts[a] < ledger.counts[b]; });
  order.resize(copies);
  std::sort(order.begin(), order.end());
  return order;
}

/// True when no unselected layer has been copied fewer times than a selected one.
inline bool selection_is_least_copied(const LayerCopyLedger& ledger, std::span<const std::size_t> layers) {
  std::vector<bool> chosen(ledger.counts.size(), false);
  for (std::size_t l : layers) chosen[l] = true;
  std::uint32_t worst_chosen = 0, best_other = UINT32_MAX;
  for (std::size_t l = 0; l < chosen.size(); ++l) {
    if (chosen[l]) worst_chosen = std::max(worst_chosen, ledger.counts[l]);
    else best_other = std::min(best_other, ledger.counts[l]);
  }
  return worst_chosen <= best_other;
}

/// Copies the selected layers and inserts each copy next to its source.
/// Both the source and the copy record one more replication in the ledger.
inline TransformerLM expand_depth(const TransformerLM& model, const ExpansionPlan& plan) {
  if (!plan.depth) return model.clone();
  const ModelConfig& c = model.config();
  const DepthPlan& depth = *plan.depth;
  ExpansionPlan depth_only;
  depth_only.depth = depth;
  ModelConfig grown = expanded_config(c, depth_only);

  std::vector<std::size_t> layers = depth.layers;
  if (layers.empty()) {
    layers = choose_layers_to_copy(model.ledger(), depth.copies, derive_seed(plan.seed, "depth"));
  } else {
    std::vector<std::size_t> sorted = layers;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ConfigError("plan.depth.layers must be distinct");
    }
    if (sorted.back() >= c.n_layers) {
      throw ConfigError("plan.depth.layers: layer " + std::to_string(sorted.back()) + " out of range");
    }
    if (!depth.allow_recopy && !selection_is_least_copied(model.ledger(), sorted)) {
      throw ConfigError("plan.depth.layers: selection skips less-copied layers (set allow_recopy to override)");
    }
    layers = std::move(sorted);
  }

  std::vector<bool> copy(c.n_layers, false);
  for (std::size_t l : layers) copy[l] = true;

  ParameterMap params;
  for (const auto& [name, t] : model.parameters()) {
    if (!name.starts_with("layers.")) params.emplace(name, t.clone());
  }
  LayerCopyLedger ledger;
  std::size_t next = 0;
  auto emit = [&](std::size_t source, std::uint32_t count) {
    for (const auto& [name, _] : layer_parameter_shapes(c)) {
      params.emplace(layer_key(next, name), model.param(layer_key(source, name)).clone());
    }
    ledger.counts.push_back(count);
    ++next;
  };
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::uint32_t count = model.ledger().counts[l];
    if (!copy[l]) {
      emit(l, count);
      continue;
    }
    // a fresh copy equals its source, so "before" and "after" give the same stack
    emit(l, count + 1);
    emit(l, count + 1);
  }
  return TransformerLM(grown, std::move(params), std::move(ledger));
}

/// Width first, then depth.
inline TransformerLM expand(const TransformerLM& model, const ExpansionPlan& plan) {
  return expand_depth(expand_width(model, plan), plan);
}

struct PreservationReport {
  double max_abs_logit_diff = 0.0;
  double mean_token_kl = 0.0;
  std::size_t positions = 0;
};

/// Compares two models on the same batch: largest absolute logit gap and the
/// mean per-position KL(p_old || p_new) in nats.
inline PreservationReport verify_preservation(const TransformerLM& old_model, const TransformerLM& new_model,
                                              const TokenBatch& batch, std::span<const Tensor> old_prompts = {},
                                              std::span<const Tensor> new_prompts = {}) {
  if (old_model.config().vocab_size != new_model.config().vocab_size) {
    throw InvalidArgument("verify_preservation: vocabulary sizes differ (" +
                          std::to_string(old_model.config().vocab_size) + " vs " +
                          std::to_string(new_model.config().vocab_size) + ")");
  }
  NoGradGuard guard;
  Tensor a = forward(old_model, batch, old_prompts);
  Tensor b = forward(new_model, batch, new_prompts);
  if (a.shape() != b.shape()) throw ShapeError("verify_preservation: logit shapes differ");
  const std::size_t V = old_model.config().vocab_size;
  const std::size_t rows = a.numel() / V;
  PreservationReport report;
  report.positions = rows;
  auto av = a.values();
  auto bv = b.values();
  double kl_total = 0.0;
  std::vector<double> lp(V), lq(V);
  auto log_softmax = [V](const float* x, std::vector<double>& out) {
    double mx = x[0];
    for (std::size_t v = 1; v < V; ++v) mx = std::max<double>(mx, x[v]);
    double s = 0.0;
    for (std::size_t v = 0; v < V; ++v) s += std::exp(x[v] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t v = 0; v < V; ++v) out[v] = x[v] - lse;
  };
  for (std::size_t r = 0; r < rows; ++r) {
    const float* x = av.data() + r * V;
    const float* y = bv.data() + r * V;
    for (std::size_t v = 0; v < V; ++v) {
      report.max_abs_logit_diff = std::max(report.max_abs_logit_diff, std::abs(static_cast<double>(x[v]) - y[v]));
    }
    log_softmax(x, lp);
    log_softmax(y, lq);
    double kl = 0.0;
    for (std::size_t v = 0; v < V; ++v) kl += std::exp(lp[v]) * (lp[v] - lq[v]);
    kl_total += std::max(kl, 0.0);
  }
  report.mean_token_kl = kl_total / static_cast<double>(rows);
  return report;
}

}  // namespace lifelong

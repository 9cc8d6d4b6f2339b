#pragma once

// Stream metrics: average perplexity (geometric mean), average increased
// perplexity against each domain's final value, representational similarity
// between model generations, and attention export.

#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lifelong/model.hpp"

namespace lifelong {

inline constexpr double kProbabilityFloor = 1e-12;

/// Geometric mean, exp(mean log ppl).
inline double ap(std::span<const double> ppls) {
  if (ppls.empty()) throw InvalidArgument("ap: empty perplexity list");
  double s = 0.0;
  for (double p : ppls) {
    if (!(p > 0.0)) throw InvalidArgument("ap: perplexities must be positive, got " + std::to_string(p));
    s += std::log(p);
  }
  return std::exp(s / static_cast<double>(ppls.size()));
}

/// PPL of each domain measured when training on it finished. Write-once.
class FinalPPLTable {
 public:
  void record(const std::string& domain, double ppl) {
    if (!values_.emplace(domain, ppl).second) {
      throw InvalidArgument("final ppl for domain " + domain + " is already recorded");
    }
  }
  bool contains(std::string_view domain) const { return values_.find(domain) != values_.end(); }
  double at(std::string_view domain) const {
    auto it = values_.find(domain);
    if (it == values_.end()) throw InvalidArgument("no final ppl recorded for domain " + std::string(domain));
    return it->second;
  }
  const std::map<std::string, double, std::less<>>& values() const { return values_; }

  bool operator==(const FinalPPLTable&) const = default;

 private:
  std::map<std::string, double, std::less<>> values_;
};

/// Per-domain perplexities in stream order.
using DomainPPLs = std::vector<std::pair<std::string, double>>;

/// Mean rise of the first j-1 domains' perplexities above their final values.
inline double ap_plus(const DomainPPLs& current, const FinalPPLTable& finals, std::size_t j) {
  if (j < 2) throw InvalidArgument("ap_plus: needs at least two seen domains");
  if (current.size() < j - 1) throw InvalidArgument("ap_plus: fewer current perplexities than earlier domains");
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < j; ++i) s += current[i].second - finals.at(current[i].first);
  return s / static_cast<double>(j - 1);
}

/// KL(p || q) in nats with probabilities floored at 1e-12.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InvalidArgument("kl: distributions over different supports");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = std::max(p[i], kProbabilityFloor), b = std::max(q[i], kProbabilityFloor);
    kl += a * (std::log(a) - std::log(b));
  }
  return kl;
}

using Distributions = std::vector<std::vector<double>>;

/// -mean over ancestors and positions of KL(ancestor || descendant).
inline double ars(std::span<const Distributions> ancestors, const Distributions& descendant) {
  if (ancestors.empty()) throw InvalidArgument("ars: needs at least one ancestor");
  if (descendant.empty()) throw InvalidArgument("ars: no probe positions");
  double total = 0.0;
  for (const auto& a : ancestors) {
    if (a.size() != descendant.size()) throw InvalidArgument("ars: ancestor probed at a different number of positions");
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (a[k].size() != descendant[k].size()) throw InvalidArgument("ars: vocabulary sizes differ");
      total += kl_divergence(a[k], descendant[k]);
    }
  }
  return -total / static_cast<double>(ancestors.size() * descendant.size());
}

/// Inputs and flat logit rows at which models are compared. Masked-LM probes
/// masked positions; causal-LM probes next-token positions.
struct ArsProbe {
  TokenBatch inputs;
  std::vector<std::size_t> rows;
};

inline ArsProbe make_ars_probe(Objective objective, std::span<const SequenceView> sequences, std::size_t n,
                               std::uint64_t seed) {
  if (sequences.empty() || n == 0) throw InvalidArgument("ars probe: needs sequences and n >= 1");
  ModelConfig c;
  c.objective = objective;
  LmExample ex = make_lm_example(c, make_token_batch(sequences), false, seed);
  ArsProbe probe;
  probe.inputs = std::move(ex.inputs);
  for (std::size_t i = 0; i < ex.targets.size(); ++i) {
    if (ex.targets[i] != kIgnoreTarget) probe.rows.push_back(i);
  }
  Rng rng(derive_seed(seed, "ars"));
  std::shuffle(probe.rows.begin(), probe.rows.end(), rng);
  if (probe.rows.size() > n) probe.rows.resize(n);
  std::sort(probe.rows.begin(), probe.rows.end());
  return probe;
}

inline Distributions probe_distributions(const TransformerLM& model, const ArsProbe& probe) {
  NoGradGuard guard;
  const Tensor logits = forward(model, probe.inputs);
  const std::size_t V = model.config().vocab_size;
  Distributions out;
  out.reserve(probe.rows.size());
  for (std::size_t r : probe.rows) {
    const float* x = logits.values().data() + r * V;
    double mx = x[0];
    for (std::size_t v = 1; v < V; ++v) mx = std::max<double>(mx, x[v]);
    std::vector<double> p(V);
    double s = 0.0;
    for (std::size_t v = 0; v < V; ++v) s += p[v] = std::exp(x[v] - mx);
    for (auto& v : p) v /= s;
    out.push_back(std::move(p));
  }
  return out;
}

inline double ars(std::span<const TransformerLM* const> ancestors, const TransformerLM& descendant,
                  const ArsProbe& probe) {
  std::vector<Distributions> a;
  for (const TransformerLM* m : ancestors) {
    if (m->config().vocab_size != descendant.config().vocab_size) throw InvalidArgument("ars: vocabulary sizes differ");
    a.push_back(probe_distributions(*m, probe));
  }
  return ars(a, probe_distributions(descendant, probe));
}

struct MetricsRecord {
  std::size_t stage = 0;  // 1-based
  std::string domain;
  DomainPPLs ppl;
  double ap = 0.0;
  std::optional<double> ap_plus;
  std::optional<double> ars;
  double compute_units = 0.0;  // cumulative steps x parameters
  std::size_t step = 0;         // cumulative optimizer steps
  std::size_t parameters = 0;
  double wall_ms = 0.0;

  bool operator==(const MetricsRecord&) const = default;
};

/// Record for stage j from the current per-domain perplexities.
inline MetricsRecord make_record(std::size_t stage, std::string domain, DomainPPLs ppl, const FinalPPLTable& finals) {
  MetricsRecord r;
  r.stage = stage;
  r.domain = std::move(domain);
  r.ppl = std::move(ppl);
  std::vector<double> values;
  for (const auto& [_, p] : r.ppl) values.push_back(p);
  r.ap = ap(values);
  if (stage >= 2) r.ap_plus = ap_plus(r.ppl, finals, stage);
  return r;
}

inline void to_json(nlohmann::json& j, const MetricsRecord& r) {
  nlohmann::json ppl = nlohmann::json::array();
  for (const auto& [d, p] : r.ppl) ppl.push_back({{"domain", d}, {"ppl", p}});
  j = {{"stage", r.stage},     {"domain", r.domain},
       {"ppl", ppl},           {"ap", r.ap},
       {"ap_plus", nullptr},   {"ars", nullptr},
       {"compute_units", r.compute_units}, {"step", r.step},
       {"parameters", r.parameters},       {"wall_ms", r.wall_ms}};
  if (r.ap_plus) j["ap_plus"] = *r.ap_plus;
  if (r.ars) j["ars"] = *r.ars;
}

inline void from_json(const nlohmann::json& j, MetricsRecord& r) {
  r.stage = j.at("stage").get<std::size_t>();
  r.domain = j.at("domain").get<std::string>();
  r.ppl.clear();
  for (const auto& e : j.at("ppl")) r.ppl.emplace_back(e.at("domain").get<std::string>(), e.at("ppl").get<double>());
  r.ap = j.at("ap").get<double>();
  r.ap_plus = j.at("ap_plus").is_null() ? std::nullopt : std::optional<double>(j.at("ap_plus").get<double>());
  r.ars = j.at("ars").is_null() ? std::nullopt : std::optional<double>(j.at("ars").get<double>());
  r.compute_units = j.at("compute_units").get<double>();
  r.step = j.at("step").get<std::size_t>();
  r.parameters = j.at("parameters").get<std::size_t>();
  r.wall_ms = j.at("wall_ms").get<double>();
}

/// Same record ignoring wall-clock time.
inline bool same_outcome(const MetricsRecord& a, const MetricsRecord& b) {
  MetricsRecord x = a, y = b;
  x.wall_ms = y.wall_ms = 0.0;
  return x == y;
}

/// Attention weights [T, T] of one head for the first sequence of a batch.
inline std::vector<std::vector<double>> export_attention(const TransformerLM& model, const TokenBatch& batch,
                                                         std::size_t layer, std::size_t head,
                                                         std::span<const Tensor> prompts = {}) {
  const ModelConfig& c = model.config();
  if (layer >= c.n_layers) {
    throw InvalidArgument("export_attention: layer " + std::to_string(layer) + " out of range (model has " +
                          std::to_string(c.n_layers) + ")");
  }
  if (head >= c.n_heads) {
    throw InvalidArgument("export_attention: head " + std::to_string(head) + " out of range (model has " +
                          std::to_string(c.n_heads) + ")");
  }
  std::vector<Tensor> maps;
  ForwardOptions options;
  options.attention = &maps;
  {
    NoGradGuard guard;
    forward(model, batch, prompts, options);
  }
  const std::size_t T = maps[layer].size(1);
  const float* w = maps[layer].values().data() + head * T * T;
  std::vector<std::vector<double>> out(T, std::vector<double>(T));
  for (std::size_t i = 0; i < T; ++i) {
    for (std::size_t k = 0; k < T; ++k) out[i][k] = w[i * T + k];
  }
  return out;
}

inline void write_matrix_csv(std::ostream& out, const std::vector<std::vector<double>>& m) {
  out.precision(9);
  for (const auto& row : m) {
    for (std::size_t k = 0; k < row.size(); ++k) out << (k ? "," : "") << row[k];
    out << '\n';
  }
}

}  // namespace lifelong

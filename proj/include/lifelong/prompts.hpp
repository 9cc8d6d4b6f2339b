#pragma once

// Per-domain soft prompt vectors: creation, growth with the model, per-sequence
// attachment and the right/wrong/none prompt probe.

#include <deque>
#include <ostream>
#include <string>
#include <vector>

#include "lifelong/expansion.hpp"
#include "lifelong/optim.hpp"

namespace lifelong {

struct DomainPrompt {
  std::string domain;
  Tensor vector;  // [d_model]
  std::size_t created_at_stage = 0;
};

/// Append-only inventory of domain prompts in creation order.
class PromptStore {
 public:
  std::size_t size() const { return prompts_.size(); }
  bool empty() const { return prompts_.empty(); }
  const std::deque<DomainPrompt>& entries() const { return prompts_; }

  const DomainPrompt* find(std::string_view domain) const {
    for (const auto& p : prompts_) {
      if (p.domain == domain) return &p;
    }
    return nullptr;
  }
  DomainPrompt* find(std::string_view domain) {
    return const_cast<DomainPrompt*>(std::as_const(*this).find(domain));
  }

  /// Existing prompt unchanged, or a new N(0, 0.02) vector keyed on (seed, domain).
  DomainPrompt& get_or_create(std::string_view domain, std::size_t d_model, std::uint64_t seed,
                              std::size_t stage = 0) {
    if (DomainPrompt* p = find(domain)) {
      if (p->vector.numel() != d_model) {
        throw ShapeError("prompt " + std::string(domain) + " has length " + std::to_string(p->vector.numel()) +
                         ", model width is " + std::to_string(d_model));
      }
      return *p;
    }
    Tensor v({d_model}, true);
    Rng rng(derive_seed(seed, domain));
    std::normal_distribution<float> init(0.0f, static_cast<float>(kInitStddev));
    for (auto& x : v.values()) x = init(rng);
    prompts_.push_back({std::string(domain), std::move(v), stage});
    return prompts_.back();
  }

  /// Restores a prompt read from a checkpoint; refuses duplicates.
  void insert(DomainPrompt prompt) {
    if (find(prompt.domain)) throw InvalidArgument("prompt store: duplicate domain " + prompt.domain);
    prompt.vector.set_requires_grad(true);
    prompts_.push_back(std::move(prompt));
  }

  /// Deep copy; prompt vectors share no storage with this store.
  PromptStore clone() const {
    PromptStore out;
    for (const auto& p : prompts_) out.prompts_.push_back({p.domain, p.vector.clone(), p.created_at_stage});
    return out;
  }

  /// Grows every prompt with the model's d_model map.
  void expand(const WidthMap& d_model) {
    for (auto& p : prompts_) p.vector = expand_prompt(p.vector, d_model);
  }

  /// One prompt row per sequence, picked by the sequence's domain.
  std::vector<Tensor> rows_for(std::span<const std::string> domains) const {
    std::vector<Tensor> rows;
    rows.reserve(domains.size());
    for (const auto& d : domains) {
      const DomainPrompt* p = find(d);
      if (!p) throw InvalidArgument("prompt store: no prompt for domain " + d);
      rows.push_back(p->vector);
    }
    return rows;
  }

  /// Prompts of the listed domains as optimizer parameters ("prompt.<domain>").
  std::vector<NamedParam> parameters(std::span<const std::string> domains, double weight_decay) const {
    std::vector<NamedParam> out;
    for (const auto& p : prompts_) {
      if (std::find(domains.begin(), domains.end(), p.domain) != domains.end()) {
        out.push_back({"prompt." + p.domain, p.vector, weight_decay});
      }
    }
    return out;
  }

  std::vector<std::string> domains() const {
    std::vector<std::string> out;
    for (const auto& p : prompts_) out.push_back(p.domain);
    return out;
  }

 private:
  std::deque<DomainPrompt> prompts_;  // stable references across appends
};

/// Rows for a batch, or none when prompts are disabled.
inline std::vector<Tensor> attach(const PromptStore* store, const TokenBatch& batch) {
  if (store == nullptr) return {};
  return store->rows_for(batch.domains);
}

struct ProbeRow {
  std::string domain;
  std::string wrong_domain;
  double ppl_right = 0.0;
  double ppl_wrong = 0.0;
  double ppl_none = 0.0;
  std::uint64_t seed = 0;
};

struct ProbeSlice {
  std::string domain;
  std::vector<SequenceView> sequences;
};

/// Perplexity of each slice under its own prompt, a prompt drawn uniformly
/// from the other domains, and no prompt.
inline std::vector<ProbeRow> probe(const TransformerLM& model, const PromptStore& prompts,
                                   std::span<const ProbeSlice> slices, std::uint64_t seed,
                                   std::uint64_t mask_seed = 0) {
  if (prompts.size() < 2) {
    throw InvalidArgument("probe: the wrong-prompt condition needs at least 2 domains with prompts, have " +
                          std::to_string(prompts.size()));
  }
  std::vector<ProbeRow> rows;
  for (const auto& slice : slices) {
    const DomainPrompt* right = prompts.find(slice.domain);
    if (!right) throw InvalidArgument("probe: no prompt for domain " + slice.domain);
    std::vector<const DomainPrompt*> others;
    for (const auto& p : prompts.entries()) {
      if (p.domain != slice.domain) others.push_back(&p);
    }
    Rng rng(derive_seed(seed, slice.domain));
    const DomainPrompt* wrong = others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)];
    ProbeRow r;
    r.domain = slice.domain;
    r.wrong_domain = wrong->domain;
    r.seed = seed;
    r.ppl_right = perplexity(model, slice.sequences, &right->vector, 32, mask_seed);
    r.ppl_wrong = perplexity(model, slice.sequences, &wrong->vector, 32, mask_seed);
    r.ppl_none = perplexity(model, slice.sequences, nullptr, 32, mask_seed);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline void write_probe_csv(std::ostream& out, std::span<const ProbeRow> rows) {
  out << "domain,ppl_right,ppl_wrong,ppl_none,seed\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.domain << ',' << r.ppl_right << ',' << r.ppl_wrong << ',' << r.ppl_none << ',' << r.seed << '\n';
  }
}

}  // namespace lifelong

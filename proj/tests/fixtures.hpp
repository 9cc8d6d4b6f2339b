#pragma once

// Small trained models and corpora shared by the heavier tests.

#include <string>
#include <vector>

#include "lifelong/data.hpp"
#include "lifelong/optim.hpp"
#include "lifelong/synth.hpp"
#include "lifelong/trainer.hpp"

namespace lifelong::testing {

inline ModelConfig desk_config(std::size_t layers = 2) {
  ModelConfig c;
  c.n_layers = layers;
  c.d_model = 32;
  c.n_heads = 4;
  c.d_head = 8;
  c.d_ffn = 128;
  c.max_seq_len = 64;
  c.objective = Objective::causal_lm;
  c.dropout = 0.0;
  return c;
}

inline DomainCorpus synthetic_corpus(std::string_view domain, std::size_t bytes, std::uint64_t seed,
                                     std::size_t validation_chunks = 32) {
  const std::string text = synth::generate(domain, bytes, seed);
  CorpusOptions options;
  options.validation_chunks = validation_chunks;
  options.seed = seed;
  return make_corpus(std::string(domain), std::vector<std::uint8_t>(text.begin(), text.end()), options);
}

/// Plain AdamW on one corpus, no prompts.
inline void fit(TransformerLM& model, const DomainCorpus& corpus, std::size_t steps, std::size_t batch_size,
                double lr, std::uint64_t seed) {
  AdamW opt;
  ChunkStream stream(corpus, seed);
  for (std::size_t s = 0; s < steps; ++s) {
    std::vector<SequenceView> views;
    for (std::size_t i = 0; i < batch_size; ++i) views.push_back(stream.next());
    for (auto& [_, t] : model.parameters()) t.zero_grad();
    backward(lm_loss(model, make_token_batch(views)));
    std::vector<NamedParam> params;
    for (auto& [name, t] : model.parameters()) params.push_back({name, t});
    clip_grad_norm(params, 1.0);
    opt.step(params, lr);
  }
}

/// A 2-layer d32 model trained briefly on synthetic prose; built once per process.
inline const TransformerLM& trained_desk_model() {
  static const TransformerLM model = [] {
    TransformerLM m(desk_config(), 1);
    fit(m, synthetic_corpus("prose", 120000, 1), 300, 8, 2e-3, 1);
    return m;
  }();
  return model;
}

inline const TokenBatch& prose_validation_batch() {
  static const DomainCorpus corpus = synthetic_corpus("prose", 120000, 1);
  static const TokenBatch batch = [] {
    auto views = corpus.validation_views(32);
    return make_token_batch(views);
  }();
  return batch;
}

/// A three-domain stream small enough to run in well under a second per stage.
inline PresetOptions tiny_stream_options(std::uint64_t seed = 1) {
  PresetOptions o;
  o.domains = {"prose", "code", "tables"};
  o.model.n_layers = 1;
  o.model.d_model = 16;
  o.model.n_heads = 2;
  o.model.d_head = 8;
  o.model.d_ffn = 32;
  o.model.max_seq_len = 16;
  o.model.dropout = 0.1;
  o.base_steps = 20;
  o.batch_size = 10;
  o.ffn_per_stage = 16;
  o.memory_tokens = 300;
  o.validation_chunks = 8;
  o.seed = seed;
  return o;
}

inline std::vector<DomainCorpus> tiny_corpora(const ExperimentConfig& c) {
  std::vector<DomainCorpus> out;
  for (const auto& s : c.stages) {
    const std::string text = synth::generate(s.domain, 6000, 11);
    out.push_back(make_corpus(s.domain, {text.begin(), text.end()}, corpus_options(c, 0)));
  }
  return out;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("lifelong_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace lifelong::testing

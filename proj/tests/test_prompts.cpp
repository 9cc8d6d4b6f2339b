#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "json.hpp"
#include "lifelong/prompts.hpp"

using namespace lifelong;
using namespace lifelong::testing;

namespace {

std::vector<std::string> labels(std::initializer_list<const char*> names) { return {names.begin(), names.end()}; }

TokenBatch labelled_batch(const DomainCorpus& corpus, const std::vector<std::string>& domains) {
  std::vector<SequenceView> views;
  for (std::size_t i = 0; i < domains.size(); ++i) views.push_back(corpus.view(corpus.train[i]));
  TokenBatch b = make_token_batch(views);
  b.domains = domains;
  return b;
}

}  // namespace

TEST(Prompts, GetOrCreateIsIdempotent) {
  PromptStore store;
  DomainPrompt& a = store.get_or_create("prose", 32, 7, 1);
  const std::vector<float> first(a.vector.values().begin(), a.vector.values().end());
  EXPECT_TRUE(a.vector.requires_grad());
  EXPECT_EQ(a.created_at_stage, 1u);
  DomainPrompt& again = store.get_or_create("prose", 32, 99, 5);
  EXPECT_EQ(&again, &a);
  EXPECT_EQ(std::vector<float>(again.vector.values().begin(), again.vector.values().end()), first);
  EXPECT_EQ(again.created_at_stage, 1u);
  EXPECT_EQ(store.size(), 1u);
  EXPECT_THROW(store.get_or_create("prose", 48, 7), ShapeError);
}

TEST(Prompts, InitDependsOnSeedAndDomain) {
  PromptStore a, b;
  const Tensor& x = a.get_or_create("code", 64, 3).vector;
  const Tensor& y = b.get_or_create("code", 64, 3).vector;
  const Tensor& z = a.get_or_create("tables", 64, 3).vector;
  double var = 0.0;
  for (std::size_t i = 0; i < 64; ++i) {
    EXPECT_EQ(x.values()[i], y.values()[i]);
    var += static_cast<double>(x.values()[i]) * x.values()[i] / 64.0;
  }
  EXPECT_NE(x.values()[0], z.values()[0]);
  EXPECT_NEAR(std::sqrt(var), 0.02, 0.01);
}

TEST(Prompts, InventoryIsAppendOnly) {
  PromptStore store;
  for (const char* d : {"c", "a", "b"}) store.get_or_create(d, 8, 1);
  EXPECT_EQ(store.domains(), labels({"c", "a", "b"}));
  store.get_or_create("a", 8, 1);
  EXPECT_EQ(store.domains(), labels({"c", "a", "b"}));
  EXPECT_THROW(store.insert({"a", Tensor({8}), 0}), InvalidArgument);
  store.expand(sample_width_map(8, 8, 3));
  EXPECT_EQ(store.domains(), labels({"c", "a", "b"}));
  for (const auto& p : store.entries()) EXPECT_EQ(p.vector.numel(), 16u);
}

TEST(Prompts, AttachAddsOnePositionPerSequence) {
  const DomainCorpus corpus = synthetic_corpus("prose", 20000, 2, 4);
  PromptStore store;
  store.get_or_create("a", 32, 1);
  store.get_or_create("b", 32, 1);
  const TokenBatch batch = labelled_batch(corpus, labels({"a", "b", "a"}));
  EXPECT_TRUE(attach(nullptr, batch).empty());
  const auto rows = attach(&store, batch);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].storage(), store.find("a")->vector.storage());
  EXPECT_EQ(rows[1].storage(), store.find("b")->vector.storage());
  TransformerLM model(desk_config(1), 1);
  EXPECT_EQ(forward(model, batch, rows).size(1), batch.seq + 1);
  const TokenBatch unknown = labelled_batch(corpus, labels({"c"}));
  EXPECT_THROW(attach(&store, unknown), InvalidArgument);
}

TEST(Prompts, OneStepMovesOnlyTheBatchDomainsPrompt) {
  const DomainCorpus corpus = synthetic_corpus("prose", 20000, 2, 4);
  PromptStore store;
  store.get_or_create("a", 32, 1);
  store.get_or_create("b", 32, 1);
  const std::vector<float> a0(store.find("a")->vector.values().begin(), store.find("a")->vector.values().end());
  const std::vector<float> b0(store.find("b")->vector.values().begin(), store.find("b")->vector.values().end());
  TransformerLM model(desk_config(1), 1);
  const TokenBatch batch = labelled_batch(corpus, labels({"a", "a"}));
  backward(lm_loss(model, batch, attach(&store, batch)));
  std::vector<NamedParam> params = store.parameters(batch.domains, 0.01);
  ASSERT_EQ(params.size(), 1u);
  for (auto& [name, t] : model.parameters()) params.push_back({name, t});
  AdamW opt;
  opt.step(params, 1e-3);
  const auto a1 = store.find("a")->vector.values();
  const auto b1 = store.find("b")->vector.values();
  EXPECT_FALSE(std::equal(a0.begin(), a0.end(), a1.begin()));
  EXPECT_TRUE(std::equal(b0.begin(), b0.end(), b1.begin()));
  EXPECT_FALSE(store.find("b")->vector.has_grad() && store.find("b")->vector.grad()[0] != 0.0f);
}

TEST(Prompts, GrowsConsistentlyWithTheModel) {
  std::ifstream in(std::string(LIFELONG_TEST_DATA_DIR) + "/expansion_golden.json");
  const auto g = nlohmann::json::parse(in)["prompted_width"];
  const TransformerLM& model = trained_desk_model();
  PromptStore store;
  store.get_or_create("prose", 32, 4);
  ExpansionPlan p;
  p.n_heads_delta = 2;
  p.d_model_delta = 16;
  p.noise_scale = 0.0;
  p.seed = 5;
  const WidthMaps maps = sample_width_maps(model.config(), p);
  const TransformerLM big = expand_width(model, p, maps);
  TokenBatch batch = prose_validation_batch();
  batch.domains.assign(batch.batch, "prose");
  const auto old_rows = attach(&store, batch);
  const auto old_report = verify_preservation(model, big, batch);
  PromptStore grown;
  grown.insert({"prose", expand_prompt(store.find("prose")->vector, maps.d_model), 0});
  EXPECT_EQ(grown.find("prose")->vector.numel(), 48u);
  const auto report = verify_preservation(model, big, batch, old_rows, attach(&grown, batch));
  EXPECT_LE(report.max_abs_logit_diff, g["max_abs_logit_diff"].get<double>());
  EXPECT_LE(report.mean_token_kl, g["mean_token_kl"].get<double>());
  EXPECT_GT(old_report.max_abs_logit_diff, 0.0);
}

TEST(Probe, NeedsTwoDomains) {
  TransformerLM model(desk_config(1), 1);
  PromptStore store;
  store.get_or_create("prose", 32, 1);
  const DomainCorpus corpus = synthetic_corpus("prose", 20000, 2, 4);
  std::vector<ProbeSlice> slices{{"prose", corpus.validation_views()}};
  EXPECT_THROW(probe(model, store, slices, 1), InvalidArgument);
}

TEST(Probe, UntrainedModelCannotTellPromptsApart) {
  TransformerLM model(desk_config(), 2);
  PromptStore store;
  std::vector<DomainCorpus> corpora;
  for (auto d : synth::kDomains) {
    corpora.push_back(synthetic_corpus(d, 20000, 3, 8));
    store.get_or_create(d, 32, 3);
  }
  std::vector<ProbeSlice> slices;
  for (const auto& c : corpora) slices.push_back({c.domain, c.validation_views()});
  const auto rows = probe(model, store, slices, 5);
  ASSERT_EQ(rows.size(), 5u);
  for (const auto& r : rows) {
    EXPECT_NE(r.wrong_domain, r.domain);
    EXPECT_NEAR(r.ppl_right / r.ppl_none, 1.0, 0.02) << r.domain;
    EXPECT_NEAR(r.ppl_wrong / r.ppl_none, 1.0, 0.02) << r.domain;
  }
  const auto again = probe(model, store, slices, 5);
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].wrong_domain, again[i].wrong_domain);
}

TEST(Probe, WrongPromptIsUniformOverOtherDomains) {
  TransformerLM model(desk_config(1), 2);
  PromptStore store;
  for (auto d : synth::kDomains) store.get_or_create(d, 32, 3);
  const DomainCorpus corpus = synthetic_corpus("prose", 20000, 2, 4);
  std::vector<ProbeSlice> slices{{"prose", {corpus.view(corpus.validation[0])}}};
  std::map<std::string, double> hits;
  const int trials = 400;
  for (int seed = 0; seed < trials; ++seed) ++hits[probe(model, store, slices, seed)[0].wrong_domain];
  ASSERT_EQ(hits.size(), 4u);
  EXPECT_EQ(hits.count("prose"), 0u);
  const double sigma = std::sqrt(trials * 0.25 * 0.75);
  for (const auto& [d, n] : hits) EXPECT_NEAR(n, trials / 4.0, 3.5 * sigma) << d;
}

TEST(Probe, IdenticalPromptGivesIdenticalPerplexity) {
  TransformerLM model(desk_config(1), 2);
  PromptStore store;
  store.get_or_create("prose", 32, 3);
  store.insert({"twin", store.find("prose")->vector.clone(), 0});
  const DomainCorpus corpus = synthetic_corpus("prose", 20000, 2, 4);
  std::vector<ProbeSlice> slices{{"prose", corpus.validation_views()}};
  const auto rows = probe(model, store, slices, 1);
  EXPECT_EQ(rows[0].wrong_domain, "twin");
  EXPECT_EQ(rows[0].ppl_right, rows[0].ppl_wrong);
  std::ostringstream csv;
  write_probe_csv(csv, rows);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "domain,ppl_right,ppl_wrong,ppl_none,seed");
  EXPECT_TRUE(csv.str().find("\nprose,") != std::string::npos);
}

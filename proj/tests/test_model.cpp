#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "lifelong/model.hpp"
#include "lifelong/optim.hpp"

using namespace lifelong;

namespace {

ModelConfig tiny_config(Objective objective = Objective::causal_lm, std::size_t layers = 1) {
  ModelConfig c;
  c.n_layers = layers;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_head = 8;
  c.d_ffn = 32;
  c.max_seq_len = 16;
  c.objective = objective;
  c.dropout = 0.0;
  return c;
}

TokenBatch batch_of(const std::vector<std::string>& texts) {
  TokenBatch b;
  b.batch = texts.size();
  b.seq = texts.front().size();
  for (std::size_t i = 0; i < texts.size(); ++i) {
    for (unsigned char ch : texts[i]) b.tokens.push_back(ch);
    b.domains.emplace_back("d");
    b.origins.push_back(i * 1000);
  }
  return b;
}

std::vector<NamedParam> trainable(TransformerLM& model) {
  std::vector<NamedParam> out;
  for (auto& [name, t] : model.parameters()) out.push_back({name, t, 0.0});
  return out;
}

void train(TransformerLM& model, const TokenBatch& batch, int steps, double lr) {
  AdamW opt;
  for (int s = 0; s < steps; ++s) {
    for (auto& [_, t] : model.parameters()) t.zero_grad();
    backward(lm_loss(model, batch));
    auto params = trainable(model);
    clip_grad_norm(params, 1.0);
    opt.step(params, lr);
  }
}

std::vector<SequenceView> views_of(const std::vector<std::string>& texts) {
  std::vector<SequenceView> out;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    out.push_back({"d", i * 1000,
                   std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(texts[i].data()),
                                                 texts[i].size())});
  }
  return out;
}

}  // namespace

TEST(Model, SingleTokenLogitShape) {
  TransformerLM model(tiny_config(), 1);
  TokenBatch b = batch_of({"x"});
  auto logits = forward(model, b);
  EXPECT_EQ(logits.shape(), (Shape{1, 1, kByteVocabSize}));
}

TEST(Model, ParameterCountFormulaMatchesAllocation) {
  for (std::size_t layers : {1u, 2u, 5u}) {
    ModelConfig c = tiny_config(Objective::masked_lm, layers);
    c.d_ffn = 48;
    TransformerLM model(c, 3);
    EXPECT_EQ(model.parameter_count(), c.parameter_count());
  }
}

TEST(Model, ConfigRejectsHeadMismatch) {
  ModelConfig c = tiny_config();
  c.d_model = 20;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.n_layers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Model, RejectsOutOfRangeTokensAndOverLength) {
  TransformerLM model(tiny_config(), 1);
  TokenBatch b = batch_of({"abc"});
  b.tokens[1] = static_cast<std::int32_t>(kByteVocabSize);
  EXPECT_THROW(forward(model, b), InvalidArgument);
  TokenBatch longer = batch_of({std::string(16, 'a')});
  EXPECT_NO_THROW(forward(model, longer));
  std::vector<Tensor> prompt{Tensor({16}, true)};
  EXPECT_THROW(forward(model, longer, prompt), InvalidArgument);
}

TEST(Model, PromptChangesLogits) {
  TransformerLM model(tiny_config(), 4);
  TokenBatch b = batch_of({"hello"});
  Rng rng(9);
  std::normal_distribution<float> n(0.0f, 0.5f);
  Tensor p({16});
  for (auto& v : p.values()) v = n(rng);
  std::vector<Tensor> rows{p};
  auto plain = forward(model, b);
  auto prompted = forward(model, b, rows);
  EXPECT_EQ(prompted.shape(), (Shape{1, 6, kByteVocabSize}));
  double diff = 0.0;
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t v = 0; v < kByteVocabSize; ++v) {
      diff += std::abs(plain.values()[t * kByteVocabSize + v] - prompted.values()[(t + 1) * kByteVocabSize + v]);
    }
  }
  EXPECT_GT(diff, 0.0);
}

TEST(Model, PromptIsAPseudoTokenStructurally) {
  // A prompt equal to the embedding row of byte 'z' reproduces the
  // unprompted forward of "z" + text bit for bit.
  TransformerLM model(tiny_config(Objective::masked_lm, 2), 5);
  const auto emb = model.param("tok_emb").values();
  Tensor p({16}, std::vector<float>(emb.begin() + 'z' * 16, emb.begin() + ('z' + 1) * 16));
  std::vector<Tensor> rows{p};
  auto prompted = forward(model, batch_of({"lmnop"}), rows);
  auto explicit_token = forward(model, batch_of({"zlmnop"}));
  ASSERT_EQ(prompted.shape(), explicit_token.shape());
  for (std::size_t i = 0; i < prompted.numel(); ++i) ASSERT_EQ(prompted.values()[i], explicit_token.values()[i]);
}

TEST(Model, CausalLogitsIgnoreFutureTokens) {
  TransformerLM model(tiny_config(Objective::causal_lm, 2), 6);
  const std::string base = "the quick brown";
  auto reference = forward(model, batch_of({base}));
  for (std::size_t t = 0; t < base.size(); ++t) {
    std::string changed = base;
    changed[t] = changed[t] == 'q' ? 'Q' : 'q';
    auto logits = forward(model, batch_of({changed}));
    for (std::size_t pos = 0; pos < base.size(); ++pos) {
      double diff = 0.0;
      for (std::size_t v = 0; v < kByteVocabSize; ++v) {
        diff = std::max<double>(diff, std::abs(logits.values()[pos * kByteVocabSize + v] -
                                               reference.values()[pos * kByteVocabSize + v]));
      }
      if (pos < t) EXPECT_EQ(diff, 0.0) << "pos " << pos << " t " << t;
      if (pos == t) EXPECT_GT(diff, 0.0);
    }
  }
}

TEST(Model, MaskedModelAttendsBothWays) {
  TransformerLM model(tiny_config(Objective::masked_lm, 1), 6);
  auto a = forward(model, batch_of({"abcdef"}));
  auto b = forward(model, batch_of({"abcdeX"}));
  double diff = 0.0;
  for (std::size_t v = 0; v < kByteVocabSize; ++v) diff += std::abs(a.values()[v] - b.values()[v]);
  EXPECT_GT(diff, 0.0);
}

TEST(Model, MaskedContentDoesNotLeakIntoLogits) {
  ModelConfig c = tiny_config(Objective::masked_lm, 1);
  TransformerLM model(c, 2);
  TokenBatch b = batch_of({"abcdefghijklmn"});
  LmExample ex = make_lm_example(c, b, false, 17);
  ASSERT_EQ(prediction_count(ex), 2u);  // round(0.15 * 14)
  std::size_t masked = 0;
  for (std::size_t i = 0; i < ex.targets.size(); ++i) {
    if (ex.targets[i] == kIgnoreTarget) continue;
    masked = i;
    EXPECT_EQ(ex.inputs.tokens[i], kMaskToken);
  }
  TokenBatch altered = b;
  altered.tokens[masked] = '#';
  LmExample ex2 = make_lm_example(c, altered, false, 17);
  auto l1 = forward(model, ex.inputs);
  auto l2 = forward(model, ex2.inputs);
  for (std::size_t i = 0; i < l1.numel(); ++i) ASSERT_EQ(l1.values()[i], l2.values()[i]);
  EXPECT_NE(ex.targets[masked], ex2.targets[masked]);
}

TEST(Model, CausalTargetsShiftByOneAndSkipPrompt) {
  ModelConfig c = tiny_config();
  TokenBatch b = batch_of({"abcd"});
  LmExample plain = make_lm_example(c, b, false, 0);
  EXPECT_EQ(plain.targets, (std::vector<std::int32_t>{'b', 'c', 'd', kIgnoreTarget}));
  LmExample prompted = make_lm_example(c, b, true, 0);
  EXPECT_EQ(prompted.targets, (std::vector<std::int32_t>{kIgnoreTarget, 'b', 'c', 'd', kIgnoreTarget}));
}

TEST(Model, UniformLogitsGiveLogVocabLoss) {
  Tensor logits({1, 256});
  std::vector<std::int32_t> target{17};
  EXPECT_NEAR(cross_entropy(logits, target).item(), std::log(256.0), 1e-6);

  // A model whose final layer norm outputs zeros has uniform logits.
  TransformerLM model(tiny_config(), 8);
  for (auto& v : model.param("ln_f.gain").values()) v = 0.0f;
  const std::string text = "uniform logits!";
  auto views = views_of({text});
  const double loss = lm_loss(model, batch_of({text})).item();
  EXPECT_NEAR(loss, std::log(static_cast<double>(kByteVocabSize)), 1e-5);
  EXPECT_NEAR(perplexity(model, views), static_cast<double>(kByteVocabSize), 1e-3);
}

TEST(Model, LossVanishesAsLogitGapGrows) {
  double previous = 1e9;
  for (float gap : {1.0f, 5.0f, 10.0f, 20.0f, 40.0f}) {
    Tensor logits({1, 4}, {gap, 0, 0, 0});
    std::vector<std::int32_t> target{0};
    const double loss = cross_entropy(logits, target).item();
    EXPECT_LT(loss, previous);
    previous = loss;
  }
  EXPECT_LT(previous, 1e-6);
}

TEST(Model, PerplexityIsExpOfLossOnOneBatch) {
  TransformerLM model(tiny_config(), 10);
  std::vector<std::string> texts{"some bytes here", "and other bytes"};
  auto views = views_of(texts);
  const float loss = lm_loss(model, batch_of(texts)).item();
  EXPECT_EQ(perplexity(model, views), std::exp(static_cast<double>(loss)));
}

TEST(Model, TwoTokenCorpusConvergesToPerplexityOne) {
  TransformerLM model(tiny_config(), 12);
  std::vector<std::string> texts{"abababababababa", "bababababababab", "abababababababa", "bababababababab"};
  train(model, batch_of(texts), 400, 1e-3);
  const double ppl = perplexity(model, views_of(texts));
  EXPECT_NEAR(ppl, 1.0, 0.05);
}

TEST(Model, MoreTrainingDoesNotRaisePerplexity) {
  std::vector<std::string> texts{"the cat sat on ", "a mat; the dog ", "sat on a log. t", "he cat sat on a"};
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    TransformerLM model(tiny_config(), seed);
    auto batch = batch_of(texts);
    train(model, batch, 200, 5e-3);
    const double first = perplexity(model, views_of(texts));
    train(model, batch, 100, 5e-3);
    const double second = perplexity(model, views_of(texts));
    EXPECT_LE(second, first * 1.01) << "seed " << seed;
  }
}

TEST(Model, SameSeedSameWeights) {
  TransformerLM a(tiny_config(), 77), b(tiny_config(), 77), c(tiny_config(), 78);
  bool differs = false;
  for (const auto& [name, t] : a.parameters()) {
    const auto& u = b.param(name);
    for (std::size_t i = 0; i < t.numel(); ++i) ASSERT_EQ(t.values()[i], u.values()[i]);
    const auto& w = c.param(name);
    for (std::size_t i = 0; i < t.numel(); ++i) differs = differs || t.values()[i] != w.values()[i];
  }
  EXPECT_TRUE(differs);
}

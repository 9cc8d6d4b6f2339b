#include <gtest/gtest.h>

#include <fstream>

#include "fixtures.hpp"
#include "lifelong/trainer.hpp"

using namespace lifelong;
using namespace lifelong::testing;

namespace {

std::vector<float> flat(const TransformerLM& m) {
  std::vector<float> out;
  for (const auto& [_, t] : m.parameters()) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

TokenBatch prose_batch(std::size_t n, const std::string& label = "prose") {
  static const DomainCorpus corpus = synthetic_corpus("prose", 30000, 3, 4);
  std::vector<SequenceView> views;
  for (std::size_t i = 0; i < n; ++i) views.push_back(corpus.view(corpus.train[i]));
  TokenBatch b = make_token_batch(views);
  b.domains.assign(n, label);
  return b;
}

bool same_params(const TransformerLM& a, const TransformerLM& b) { return flat(a) == flat(b); }

}  // namespace

TEST(TrainStep, FirstLossIsNearLogVocabulary) {
  TransformerLM model(desk_config(), 1);
  AdamW opt;
  Rng rng(1);
  const double loss = train_step(model, prose_batch(8), nullptr, opt, 1e-3, {}, rng);
  EXPECT_NEAR(loss, std::log(258.0), 0.5);
}

TEST(TrainStep, ZeroLearningRateChangesNothing) {
  ModelConfig c = desk_config();
  c.dropout = 0.1;
  TransformerLM model(c, 1);
  PromptStore prompts;
  prompts.get_or_create("prose", 32, 1);
  const auto before = flat(model);
  const std::vector<float> prompt(prompts.find("prose")->vector.values().begin(),
                                  prompts.find("prose")->vector.values().end());
  AdamW opt;
  Rng rng(2);
  for (int i = 0; i < 3; ++i) train_step(model, prose_batch(4), &prompts, opt, 0.0, {}, rng);
  EXPECT_EQ(flat(model), before);
  EXPECT_TRUE(std::equal(prompt.begin(), prompt.end(), prompts.find("prose")->vector.values().begin()));
}

TEST(TrainStep, RepeatedBatchLossKeepsFalling) {
  TransformerLM model(desk_config(1), 3);
  AdamW opt;
  Rng rng(3);
  const TokenBatch batch = prose_batch(8);
  std::vector<double> losses;
  for (int i = 0; i < 200; ++i) losses.push_back(train_step(model, batch, nullptr, opt, 1e-3, {}, rng));
  int falling = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) falling += losses[i] < losses[i - 1];
  EXPECT_GE(falling, static_cast<int>(0.95 * 199)) << "first " << losses.front() << " last " << losses.back();
}

TEST(TrainStep, OnlyPromptsOfDomainsInTheBatchMove) {
  TransformerLM model(desk_config(1), 4);
  PromptStore prompts;
  prompts.get_or_create("prose", 32, 1);
  prompts.get_or_create("code", 32, 1);
  const std::vector<float> code(prompts.find("code")->vector.values().begin(),
                                prompts.find("code")->vector.values().end());
  const std::vector<float> prose(prompts.find("prose")->vector.values().begin(),
                                 prompts.find("prose")->vector.values().end());
  AdamW opt;
  Rng rng(4);
  TrainSettings s;
  s.weight_decay = 0.5;
  for (int i = 0; i < 3; ++i) train_step(model, prose_batch(4), &prompts, opt, 1e-2, s, rng);
  EXPECT_TRUE(std::equal(code.begin(), code.end(), prompts.find("code")->vector.values().begin()));
  EXPECT_FALSE(std::equal(prose.begin(), prose.end(), prompts.find("prose")->vector.values().begin()));
  EXPECT_EQ(opt.slots().count("prompt.code"), 0u);
  EXPECT_EQ(opt.slots().at("prompt.prose").steps, 3u);
}

TEST(TrainStep, PromptWeightDecayCanBeExempted) {
  TransformerLM model(desk_config(1), 4);
  PromptStore prompts;
  prompts.get_or_create("prose", 32, 1);
  const std::vector<std::string> domains{"prose"};
  TrainSettings s;
  for (const auto& p : trainable_parameters(model, &prompts, domains, s)) EXPECT_EQ(p.weight_decay, 0.01) << p.name;
  s.prompt_weight_decay = false;
  const auto params = trainable_parameters(model, &prompts, domains, s);
  EXPECT_EQ(params.back().name, "prompt.prose");
  EXPECT_EQ(params.back().weight_decay, 0.0);
  EXPECT_EQ(params.front().weight_decay, 0.01);
}

TEST(TrainStep, NonFiniteLossAborts) {
  TransformerLM model(desk_config(1), 5);
  model.param("ln_f.gain").values()[0] = std::numeric_limits<float>::quiet_NaN();
  AdamW opt;
  Rng rng(5);
  EXPECT_THROW(train_step(model, prose_batch(2), nullptr, opt, 1e-3, {}, rng), NumericError);
}

TEST(Frw, ZeroStepsIsANoOp) {
  TransformerLM model(desk_config(1), 6);
  const auto before = flat(model);
  MemoryStore empty;
  TrainContext ctx;
  AdamW opt;
  frw(model, empty, "prose", nullptr, PhaseSpec{0}, ctx, opt);
  EXPECT_EQ(flat(model), before);
  EXPECT_EQ(ctx.step, 0u);
}

TEST(Frw, NeedsMemoryOutsideTheNewDomain) {
  TransformerLM model(desk_config(1), 6);
  MemoryStore memory;
  memory.put(fill_memory(synthetic_corpus("prose", 20000, 2, 4), 630, 1));
  TrainContext ctx;
  AdamW opt;
  PhaseSpec spec;
  spec.steps = 2;
  spec.batch_size = 4;
  EXPECT_THROW(frw(model, memory, "prose", nullptr, spec, ctx, opt), InvalidArgument);
  EXPECT_NO_THROW(frw(model, memory, "code", nullptr, spec, ctx, opt));
  EXPECT_EQ(ctx.step, 2u);
}

TEST(Frw, StartsFromAFreshOptimizer) {
  TransformerLM model(desk_config(1), 7);
  MemoryStore memory;
  memory.put(fill_memory(synthetic_corpus("prose", 20000, 2, 4), 630, 1));
  AdamW opt;
  Rng rng(7);
  for (int i = 0; i < 5; ++i) train_step(model, prose_batch(2), nullptr, opt, 1e-3, {}, rng);
  TrainContext ctx;
  std::vector<LogEntry> log;
  ctx.log = [&](const LogEntry& e) { log.push_back(e); };
  PhaseSpec spec;
  spec.steps = 3;
  spec.batch_size = 4;
  frw(model, memory, "code", nullptr, spec, ctx, opt);
  for (const auto& [name, slot] : opt.slots()) EXPECT_EQ(slot.steps, 3u) << name;
  ASSERT_EQ(log.size(), 3u);
  EXPECT_EQ(log[0].phase, "frw");
  EXPECT_EQ(log[2].step, 3u);
  EXPECT_GT(log[0].lr, 0.0);
}

TEST(RunStage, ExpandsWarmsUpTrainsAndRecords) {
  const ExperimentConfig c = make_preset("elle", tiny_stream_options());
  const auto corpora = tiny_corpora(c);
  Checkpoint state = initial_state(c);
  TrainContext ctx;
  std::vector<LogEntry> log;
  ctx.log = [&](const LogEntry& e) { log.push_back(e); };
  std::vector<TransformerLM> ancestors;
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector<const TransformerLM*> anc;
    for (const auto& m : ancestors) anc.push_back(&m);
    const StageReport r = run_stage(state, {c, i, std::span(corpora).first(i + 1), anc, true}, ctx);
    ancestors.push_back(state.model.clone());
    EXPECT_EQ(r.record.stage, i + 1);
  }
  const auto models = stage_models(c);
  EXPECT_EQ(state.model.config(), models[1]);
  EXPECT_EQ(state.prompts.domains(), (std::vector<std::string>{"prose", "code"}));
  for (const auto& p : state.prompts.entries()) EXPECT_EQ(p.vector.numel(), models[1].d_model);
  EXPECT_EQ(state.memory.entries.size(), 2u);
  EXPECT_TRUE(state.finals.contains("code"));
  const MetricsRecord& r = state.history.back();
  ASSERT_TRUE(r.ap_plus);
  ASSERT_TRUE(r.ars);
  EXPECT_LT(*r.ars, 0.0);
  EXPECT_EQ(r.ppl.size(), 2u);
  EXPECT_EQ(r.step, c.stages[0].train_steps + c.stages[1].frw_steps + c.stages[1].train_steps);
  const auto units = stage_compute(c);
  EXPECT_DOUBLE_EQ(r.compute_units, units[0] + units[1]);
  EXPECT_EQ(r.parameters, models[1].parameter_count());
  // log order: stage 1 training, then stage 2 FRW, then stage 2 training
  ASSERT_EQ(log.size(), r.step);
  EXPECT_EQ(log[c.stages[0].train_steps].phase, "frw");
  EXPECT_EQ(log.back().phase, "train");
  EXPECT_EQ(log.back().stage, 2u);
  EXPECT_THROW(run_stage(state, {c, 1, std::span(corpora).first(2), {}}, ctx), InvalidArgument);
}

TEST(RunStage, NaiveAndReplayAreDegenerateStages) {
  for (const char* name : {"naive", "er"}) {
    const ExperimentConfig c = make_preset(name, tiny_stream_options());
    const auto corpora = tiny_corpora(c);
    Checkpoint state = initial_state(c);
    TrainContext ctx;
    for (std::size_t i = 0; i < 2; ++i) run_stage(state, {c, i, std::span(corpora).first(i + 1), {}}, ctx);
    EXPECT_EQ(state.model.config(), c.model) << name;
    EXPECT_TRUE(state.prompts.empty()) << name;
    EXPECT_EQ(ctx.step, 40u) << name;
  }
}

TEST(RunStage, FrwRecoversMemoryAfterExpansion) {
  PresetOptions o = tiny_stream_options();
  o.base_steps = 150;
  o.frw_fraction = 0.5;
  const ExperimentConfig c = make_preset("we-de-frw", o);
  const auto corpora = tiny_corpora(c);
  Checkpoint state = initial_state(c);
  TrainContext ctx;
  run_stage(state, {c, 0, std::span(corpora).first(1), {}}, ctx);
  const StageReport r = run_stage(state, {c, 1, std::span(corpora).first(2), {}, true}, ctx);
  ASSERT_TRUE(r.memory_ppl_before && r.memory_ppl_expanded && r.memory_ppl_after_frw);
  EXPECT_NE(*r.memory_ppl_expanded, *r.memory_ppl_before);
  EXPECT_LE(*r.memory_ppl_after_frw, *r.memory_ppl_expanded);
}

TEST(Stream, SameSeedSameOutcomeOtherSeedDiffers) {
  const ExperimentConfig c = make_preset("elle", tiny_stream_options(2));
  const auto corpora = tiny_corpora(c);
  const Checkpoint a = run_stream(c, corpora, scratch_dir("stream_a"));
  const Checkpoint b = run_stream(c, corpora, scratch_dir("stream_b"));
  ASSERT_EQ(a.history.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(same_outcome(a.history[i], b.history[i])) << i;
  EXPECT_TRUE(same_params(a.model, b.model));
  ExperimentConfig other = c;
  other.seed = 3;
  const Checkpoint d = run_stream(other, corpora, scratch_dir("stream_d"));
  EXPECT_NE(a.history.back().ap, d.history.back().ap);
}

TEST(Stream, ResumeMatchesUninterruptedRun) {
  const ExperimentConfig c = make_preset("elle", tiny_stream_options(4));
  const auto corpora = tiny_corpora(c);
  const Checkpoint full = run_stream(c, corpora, scratch_dir("resume_full"));
  const auto dir = scratch_dir("resume_cut");
  StreamOptions stop;
  stop.stop_after = 2;
  const Checkpoint partial = run_stream(c, corpora, dir, stop);
  EXPECT_EQ(partial.completed_stages, 2u);
  EXPECT_EQ(read_metrics(dir / "metrics.jsonl").size(), 2u);
  // a torn write after the checkpoint must not leak into the resumed run
  std::ofstream(dir / "metrics.jsonl", std::ios::app) << "{\"stage\": 3, \"garbage\"\n";
  std::ofstream(dir / "train_log.jsonl", std::ios::app) << "{\"stage\":3,\"phase\":\"train\",\"step\":999}\n";
  const Checkpoint resumed = run_stream(c, corpora, dir);
  ASSERT_EQ(resumed.history.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(same_outcome(full.history[i], resumed.history[i])) << i;
  EXPECT_TRUE(same_params(full.model, resumed.model));
  const auto records = read_metrics(dir / "metrics.jsonl");
  ASSERT_EQ(records.size(), 3u);
  EXPECT_TRUE(same_outcome(records.back(), full.history.back()));
  std::ifstream log(dir / "train_log.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(log, line);) ++lines;
  EXPECT_EQ(lines, full.step);
  // resuming a finished run changes nothing
  const Checkpoint again = run_stream(c, corpora, dir);
  EXPECT_EQ(again.history, resumed.history);
}

TEST(Stream, OutputDirectoryIsLockedAndBoundToItsConfig) {
  const ExperimentConfig c = make_preset("er", tiny_stream_options());
  const auto corpora = tiny_corpora(c);
  const auto dir = scratch_dir("stream_lock");
  {
    DirectoryLock held(dir);
    EXPECT_THROW(run_stream(c, corpora, dir), IoError);
  }
  StreamOptions stop;
  stop.stop_after = 1;
  run_stream(c, corpora, dir, stop);
  ExperimentConfig other = c;
  other.seed = 9;
  EXPECT_THROW(run_stream(other, corpora, dir), ConfigError);
}

TEST(Stream, NumericAbortLeavesADump) {
  PresetOptions o = tiny_stream_options();
  o.lr = std::numeric_limits<double>::infinity();
  o.warmup_ratio = 0.0;
  const ExperimentConfig c = make_preset("naive", o);
  const auto corpora = tiny_corpora(c);
  const auto dir = scratch_dir("stream_nan");
  EXPECT_THROW(run_stream(c, corpora, dir), NumericError);
  EXPECT_TRUE(std::filesystem::exists(dir / "numeric_abort.json"));
}

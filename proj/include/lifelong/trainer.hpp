#pragma once

// Lifelong schedule: per stage expand -> function recovering warmup on memory
// -> mixed new/replay training -> memory refill -> evaluation -> checkpoint.
// Naive and replay baselines are stages without expansion or FRW.

#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <fcntl.h>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lifelong/checkpoint.hpp"

namespace lifelong {

struct TrainSettings {
  double weight_decay = 0.01;
  bool prompt_weight_decay = true;
  double clip_norm = 1.0;
};

inline TrainSettings train_settings(const ExperimentConfig& c) {
  return {c.weight_decay, c.prompt_weight_decay, c.clip_norm};
}

struct LogEntry {
  std::size_t stage = 0;
  std::string phase;  // "frw" or "train"
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

inline void to_json(json& j, const LogEntry& e) {
  j = {{"stage", e.stage}, {"phase", e.phase}, {"step", e.step}, {"loss", e.loss}, {"lr", e.lr}, {"wall_ms", e.wall_ms}};
}

using LogSink = std::function<void(const LogEntry&)>;

/// Model parameters plus the prompts of the listed domains.
inline std::vector<NamedParam> trainable_parameters(TransformerLM& model, const PromptStore* prompts,
                                                    std::span<const std::string> domains, const TrainSettings& s) {
  std::vector<NamedParam> params;
  for (auto& [name, t] : model.parameters()) params.push_back({name, t, s.weight_decay});
  if (prompts) {
    auto extra = prompts->parameters(domains, s.prompt_weight_decay ? s.weight_decay : 0.0);
    params.insert(params.end(), extra.begin(), extra.end());
  }
  return params;
}

/// One optimizer update on a labelled batch. Only prompts of domains present
/// in the batch are updated. Returns the loss before the update.
inline double train_step(TransformerLM& model, const TokenBatch& batch, PromptStore* prompts, AdamW& opt, double lr,
                         const TrainSettings& s, Rng& rng) {
  std::vector<std::string> present;
  if (prompts) {
    std::set<std::string> unique(batch.domains.begin(), batch.domains.end());
    present.assign(unique.begin(), unique.end());
  }
  std::vector<NamedParam> params = trainable_parameters(model, prompts, present, s);
  for (auto& p : params) p.tensor.zero_grad();
  ForwardOptions options;
  options.training = true;
  options.rng = &rng;
  const std::uint64_t mask_seed = rng();
  Tensor loss = lm_loss(model, batch, attach(prompts, batch), options, mask_seed);
  const double value = loss.item();
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << "non-finite loss " << value << " at lr " << lr << " on a batch of " << batch.batch << " sequences from";
    for (const auto& d : std::set<std::string>(batch.domains.begin(), batch.domains.end())) msg << ' ' << d;
    throw NumericError(msg.str());
  }
  backward(loss);
  const double norm = clip_grad_norm(params, s.clip_norm);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm at loss " + std::to_string(value));
  opt.step(params, lr);
  return value;
}

/// Optimization hyper-parameters of one phase.
struct PhaseSpec {
  std::size_t steps = 0;
  double lr = 2e-3;
  LrSchedule schedule = LrSchedule::inverse_sqrt;
  double warmup_ratio = 0.16;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
};

/// Running counters shared by the phases of a stream.
struct TrainContext {
  TrainSettings settings;
  LogSink log;
  std::size_t stage = 0;  // 1-based, for logs
  std::size_t step = 0;
  double compute_units = 0.0;
};

namespace detail {

template <typename NextBatch>
void run_phase(const char* phase, TransformerLM& model, PromptStore* prompts, AdamW& opt, const PhaseSpec& spec,
               TrainContext& ctx, NextBatch next) {
  opt.reset();
  if (!opt.fresh()) throw std::logic_error("optimizer state survived a reset");
  Rng rng(derive_seed(spec.seed, phase));
  const auto start = std::chrono::steady_clock::now();
  const double size = static_cast<double>(model.parameter_count());
  for (std::size_t i = 0; i < spec.steps; ++i) {
    const TokenBatch batch = make_token_batch(next(rng));
    const double lr = lr_at(spec.schedule, i + 1, spec.steps, spec.warmup_ratio, spec.lr);
    const double loss = train_step(model, batch, prompts, opt, lr, ctx.settings, rng);
    ++ctx.step;
    ctx.compute_units += size;
    if (ctx.log) {
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      ctx.log({ctx.stage, phase, ctx.step, loss, lr, ms});
    }
  }
}

}  // namespace detail

/// Function recovering warmup: memory-only batches that never contain
/// `exclude`, with a fresh optimizer.
inline void frw(TransformerLM& model, const MemoryStore& memory, std::string_view exclude, PromptStore* prompts,
                const PhaseSpec& spec, TrainContext& ctx, AdamW& opt) {
  if (spec.steps == 0) return;
  if (memory.drawable(exclude).empty()) throw InvalidArgument("frw: memory is empty");
  detail::run_phase("frw", model, prompts, opt, spec, ctx,
                    [&](Rng& rng) { return memory_batch(memory, exclude, spec.batch_size, rng); });
}

/// Mixed training on the new domain plus replay, with a fresh optimizer.
inline void train_on_domain(TransformerLM& model, const DomainCorpus& corpus, const MemoryStore& memory,
                            ReplayRatio ratio, PromptStore* prompts, const PhaseSpec& spec, TrainContext& ctx,
                            AdamW& opt) {
  ChunkStream stream(corpus, derive_seed(spec.seed, "stream"));
  detail::run_phase("train", model, prompts, opt, spec, ctx, [&](Rng& rng) {
    return mixed_batch(stream, memory, corpus.domain, ratio, spec.batch_size, rng);
  });
}

/// Perplexity of each corpus' validation chunks, prompted with the domain's
/// own prompt when one exists.
inline DomainPPLs evaluate(const TransformerLM& model, const PromptStore* prompts, std::span<const DomainCorpus> corpora,
                           std::size_t limit, std::uint64_t mask_seed) {
  DomainPPLs out;
  for (const auto& c : corpora) {
    const auto views = c.validation_views(limit);
    const DomainPrompt* p = prompts ? prompts->find(c.domain) : nullptr;
    out.emplace_back(c.domain, perplexity(model, views, p ? &p->vector : nullptr, 32, mask_seed));
  }
  return out;
}

/// Geometric-mean perplexity over the memory of every domain except `exclude`.
inline double memory_ppl(const TransformerLM& model, const PromptStore* prompts, const MemoryStore& memory,
                         std::string_view exclude, std::size_t limit, std::uint64_t mask_seed) {
  std::vector<double> ppls;
  for (const MemoryEntry* e : memory.drawable(exclude)) {
    std::vector<SequenceView> views;
    for (std::size_t i = 0; i < e->size() && i < limit; ++i) views.push_back(e->view(i));
    const DomainPrompt* p = prompts ? prompts->find(e->domain) : nullptr;
    ppls.push_back(perplexity(model, views, p ? &p->vector : nullptr, 32, mask_seed));
  }
  if (ppls.empty()) throw InvalidArgument("memory_ppl: memory is empty");
  return ap(ppls);
}

struct StageReport {
  MetricsRecord record;
  std::optional<double> memory_ppl_before;  // before expansion
  std::optional<double> memory_ppl_expanded;
  std::optional<double> memory_ppl_after_frw;
  double wall_ms = 0.0;
};

struct StageInputs {
  const ExperimentConfig& config;
  std::size_t index = 0;                       // 0-based stage
  std::span<const DomainCorpus> seen;          // corpora of stages 0..index in stream order
  std::span<const TransformerLM* const> ancestors;  // end-of-stage models of earlier stages
  bool probe_memory = false;                   // record memory PPL around expansion and FRW
  std::size_t memory_probe_chunks = 64;
};

/// Seed for everything random in one stage; mixes the run seed so --seed
/// changes every stage.
inline std::uint64_t stage_seed(const ExperimentConfig& c, std::size_t index) {
  return derive_seed(c.seed, derive_seed(c.stages.at(index).seed, index));
}

inline std::uint64_t eval_mask_seed(const ExperimentConfig& c) { return derive_seed(c.seed, "eval-mask"); }

/// Runs stage `in.index` on `state` (which must have completed the previous
/// stages) and appends its metrics record.
inline StageReport run_stage(Checkpoint& state, const StageInputs& in, TrainContext& ctx) {
  const ExperimentConfig& c = in.config;
  const StageConfig& stage = c.stages.at(in.index);
  if (state.completed_stages != in.index) {
    throw InvalidArgument("run_stage: state has completed " + std::to_string(state.completed_stages) +
                          " stages, asked to run stage " + std::to_string(in.index + 1));
  }
  if (in.seen.size() != in.index + 1 || in.seen.back().domain != stage.domain) {
    throw InvalidArgument("run_stage: corpora do not match the stage list at stage " + std::to_string(in.index + 1));
  }
  const DomainCorpus& corpus = in.seen.back();
  const std::uint64_t seed = stage_seed(c, in.index);
  const std::uint64_t mask_seed = eval_mask_seed(c);
  PromptStore* prompts = c.features.prompts ? &state.prompts : nullptr;
  ctx.stage = in.index + 1;
  ctx.step = state.step;
  ctx.compute_units = state.compute_units;
  StageReport report;
  const auto start = std::chrono::steady_clock::now();
  const bool has_memory = !state.memory.drawable(stage.domain).empty();

  if (stage.expansion) {
    if (in.probe_memory && has_memory) {
      report.memory_ppl_before =
          memory_ppl(state.model, prompts, state.memory, stage.domain, in.memory_probe_chunks, mask_seed);
    }
    ExpansionPlan plan = *stage.expansion;
    plan.seed = derive_seed(seed, plan.seed);
    const WidthMaps maps = sample_width_maps(state.model.config(), plan);
    TransformerLM grown = expand_width(state.model, plan, maps);
    if (plan.grows_width()) state.prompts.expand(maps.d_model);
    state.model = expand_depth(grown, plan);
    if (in.probe_memory && has_memory) {
      report.memory_ppl_expanded =
          memory_ppl(state.model, prompts, state.memory, stage.domain, in.memory_probe_chunks, mask_seed);
    }
  }
  if (prompts) prompts->get_or_create(stage.domain, state.model.config().d_model, derive_seed(c.seed, "prompt"), in.index + 1);

  AdamW opt;
  PhaseSpec spec{stage.frw_steps, stage.lr, stage.schedule, stage.warmup_ratio, stage.batch_size, seed};
  frw(state.model, state.memory, stage.domain, prompts, spec, ctx, opt);
  if (in.probe_memory && has_memory && stage.frw_steps > 0) {
    report.memory_ppl_after_frw =
        memory_ppl(state.model, prompts, state.memory, stage.domain, in.memory_probe_chunks, mask_seed);
  }
  spec.steps = stage.train_steps;
  train_on_domain(state.model, corpus, state.memory, stage.replay_ratio, prompts, spec, ctx, opt);
  opt.reset();
  report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

  const std::size_t capacity = std::min(c.memory_tokens, corpus.train_tokens());
  state.memory.put(fill_memory(corpus, capacity, derive_seed(seed, "memory")));

  DomainPPLs ppl = evaluate(state.model, prompts, in.seen, c.validation_chunks, mask_seed);
  state.finals.record(stage.domain, ppl.back().second);
  MetricsRecord record = make_record(in.index + 1, stage.domain, std::move(ppl), state.finals);
  if (!in.ancestors.empty()) {
    const ArsProbe probe =
        make_ars_probe(c.model.objective, corpus.validation_views(), c.ars_positions, derive_seed(seed, "ars"));
    record.ars = ars(in.ancestors, state.model, probe);
  }
  record.compute_units = ctx.compute_units;
  record.step = ctx.step;
  record.parameters = state.model.parameter_count();
  record.wall_ms = report.wall_ms;
  state.history.push_back(record);
  state.step = ctx.step;
  state.compute_units = ctx.compute_units;
  state.completed_stages = in.index + 1;
  report.record = std::move(record);
  return report;
}

/// Fresh state for a stream: the initial model and empty stores.
inline Checkpoint initial_state(const ExperimentConfig& c) {
  Checkpoint s;
  s.config = c;
  s.model = TransformerLM(c.model, derive_seed(c.seed, "init"));
  return s;
}

// ---- corpora ----------------------------------------------------------------

inline CorpusOptions corpus_options(const ExperimentConfig& c, std::size_t token_budget) {
  CorpusOptions o;
  o.chunk_len = c.model.max_seq_len - 1;
  o.validation_chunks = c.validation_chunks;
  o.token_budget = token_budget ? token_budget : c.token_budget;
  o.seed = c.seed;
  return o;
}

/// Corpora for every stage, in stage order, read through the manifest.
inline std::vector<DomainCorpus> load_corpora(const ExperimentConfig& c, const std::filesystem::path& base_dir = {}) {
  if (c.corpus_manifest.empty()) throw ConfigError("config.corpus_manifest: not set");
  std::filesystem::path manifest = c.corpus_manifest;
  if (manifest.is_relative() && !base_dir.empty()) manifest = base_dir / manifest;
  const auto entries = load_manifest(manifest);
  std::vector<DomainCorpus> out;
  for (const auto& s : c.stages) {
    auto it = std::find_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.domain == s.domain; });
    if (it == entries.end()) throw ConfigError("corpus manifest has no domain '" + s.domain + "'");
    out.push_back(ingest(it->paths, s.domain, corpus_options(c, it->token_budget)));
  }
  return out;
}

// ---- stream runner ----------------------------------------------------------

/// Exclusive advisory lock on an output directory, held for the object's life.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto path = dir / ".lock";
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw IoError("cannot open lock file '" + path.string() + "'");
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw IoError("output directory '" + dir.string() + "' is in use by another run");
    }
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;
  ~DirectoryLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }

 private:
  int fd_ = -1;
};

inline std::filesystem::path stage_checkpoint_path(const std::filesystem::path& out, std::size_t stage) {
  return out / "checkpoints" / ("stage-" + std::to_string(stage) + ".ckpt");
}

struct StreamOptions {
  std::size_t stop_after = SIZE_MAX;  // return once this many stages are complete
  bool probe_memory = false;
  std::function<void(const StageReport&)> on_stage;
};

namespace detail {

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out.flush()) throw IoError("error while writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' into place: " + ec.message());
}

/// Keeps the training log lines of completed stages only.
inline void truncate_log(const std::filesystem::path& path, std::size_t completed) {
  if (!std::filesystem::exists(path)) return;
  std::ifstream in(path);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      if (json::parse(line).at("stage").get<std::size_t>() <= completed) kept += line + "\n";
    } catch (const json::exception&) {
      // a torn final line from an interrupted write
    }
  }
  write_text_atomic(path, kept);
}

}  // namespace detail

/// Runs (or resumes) a whole stream in `out`. Completed stages are read back
/// from their checkpoints, so a resumed run ends in the same state as an
/// uninterrupted one.
inline Checkpoint run_stream(const ExperimentConfig& c, std::span<const DomainCorpus> corpora,
                             const std::filesystem::path& out, const StreamOptions& options = {}) {
  validate(c);
  if (corpora.size() != c.stages.size()) throw InvalidArgument("run_stream: one corpus per stage is required");
  DirectoryLock lock(out);

  const auto config_path = out / "config.json";
  if (std::filesystem::exists(config_path)) {
    if (load_config(config_path) != c) {
      throw ConfigError("output directory '" + out.string() + "' holds a different experiment");
    }
  } else {
    detail::write_text_atomic(config_path, dump_config(c));
  }

  Checkpoint state = initial_state(c);
  std::vector<TransformerLM> ancestors;
  for (std::size_t k = c.stages.size(); k >= 1; --k) {
    if (!std::filesystem::exists(stage_checkpoint_path(out, k))) continue;
    state = load_checkpoint(stage_checkpoint_path(out, k));
    if (!state.config || *state.config != c || state.completed_stages != k) {
      throw ConfigError("checkpoint '" + stage_checkpoint_path(out, k).string() + "' belongs to a different run");
    }
    for (std::size_t a = 1; a < k; ++a) ancestors.push_back(load_checkpoint(stage_checkpoint_path(out, a)).model);
    ancestors.push_back(state.model.clone());
    break;
  }

  std::string metrics;
  for (const auto& r : state.history) metrics += json(r).dump() + "\n";
  detail::write_text_atomic(out / "metrics.jsonl", metrics);
  detail::truncate_log(out / "train_log.jsonl", state.completed_stages);

  std::ofstream log(out / "train_log.jsonl", std::ios::app);
  if (!log) throw IoError("cannot append to '" + (out / "train_log.jsonl").string() + "'");
  TrainContext ctx;
  ctx.settings = train_settings(c);
  ctx.log = [&](const LogEntry& e) { log << json(e).dump() << '\n'; };

  for (std::size_t i = state.completed_stages; i < c.stages.size() && state.completed_stages < options.stop_after; ++i) {
    std::vector<const TransformerLM*> anc;
    for (const auto& m : ancestors) anc.push_back(&m);
    StageInputs in{c, i, corpora.first(i + 1), anc, options.probe_memory};
    StageReport report;
    try {
      report = run_stage(state, in, ctx);
    } catch (const NumericError& e) {
      log.flush();
      json dump = {{"stage", i + 1}, {"step", ctx.step}, {"error", e.what()}};
      detail::write_text_atomic(out / "numeric_abort.json", dump.dump(2) + "\n");
      throw;
    }
    log.flush();
    save_checkpoint(stage_checkpoint_path(out, i + 1), state);
    std::ofstream(out / "metrics.jsonl", std::ios::app) << json(report.record).dump() << '\n';
    ancestors.push_back(state.model.clone());
    if (options.on_stage) options.on_stage(report);
  }
  return state;
}

inline std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line).get<MetricsRecord>());
    } catch (const json::exception& e) {
      throw IoError("'" + path.string() + "' has a malformed record: " + e.what());
    }
  }
  return out;
}

}  // namespace lifelong

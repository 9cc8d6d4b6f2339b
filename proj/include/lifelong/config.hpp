#pragma once

// Experiment configuration: strict JSON (unknown keys rejected), named
// presets for baselines and ablations, and the equal-compute budget check.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lifelong/data.hpp"
#include "lifelong/expansion.hpp"
#include "lifelong/optim.hpp"

namespace lifelong {

using nlohmann::json;

namespace detail {

/// Reads one JSON object field by field and rejects keys nobody asked for.
class StrictObject {
 public:
  StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void required(const char* key, T& out) {
    if (!j_.contains(key)) throw ConfigError(field(key) + ": missing");
    read(key, out);
  }

  template <typename T>
  void optional(const char* key, T& out) {
    if (j_.contains(key)) read(key, out);
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string field(std::string_view key) const { return path_ + "." + std::string(key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()) + ": unknown key");
    }
  }

 private:
  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("expected a boolean");
      } else if constexpr (std::is_unsigned_v<T>) {
        if (!v.is_number_unsigned()) throw ConfigError("expected a non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("expected a string");
      }
      out = v.get<T>();
    } catch (const ConfigError& e) {
      throw ConfigError(field(key) + ": " + e.what());
    } catch (const json::exception& e) {
      throw ConfigError(field(key) + ": " + e.what());
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

// ---- model and expansion plan ----------------------------------------------

inline json model_to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},       {"d_model", c.d_model},     {"n_heads", c.n_heads},
          {"d_head", c.d_head},           {"d_ffn", c.d_ffn},         {"vocab_size", c.vocab_size},
          {"max_seq_len", c.max_seq_len}, {"objective", to_string(c.objective)}, {"dropout", c.dropout}};
}

inline ModelConfig model_from_json(const json& j, const std::string& path = "model") {
  detail::StrictObject o(j, path);
  ModelConfig c;
  o.required("n_layers", c.n_layers);
  o.required("d_model", c.d_model);
  o.required("n_heads", c.n_heads);
  o.required("d_head", c.d_head);
  o.required("d_ffn", c.d_ffn);
  o.optional("vocab_size", c.vocab_size);
  o.required("max_seq_len", c.max_seq_len);
  std::string objective(to_string(c.objective));
  o.optional("objective", objective);
  c.objective = parse_objective(objective);
  o.optional("dropout", c.dropout);
  o.finish();
  c.validate();
  return c;
}

inline json plan_to_json(const ExpansionPlan& p) {
  json j = {{"d_model_delta", p.d_model_delta}, {"n_heads_delta", p.n_heads_delta},
            {"d_ffn_delta", p.d_ffn_delta},     {"depth", nullptr},
            {"noise_scale", p.noise_scale},     {"seed", p.seed}};
  if (p.depth) {
    j["depth"] = {{"copies", p.depth->copies},
                  {"layers", p.depth->layers},
                  {"placement", to_string(p.depth->placement)},
                  {"allow_recopy", p.depth->allow_recopy}};
  }
  return j;
}

inline ExpansionPlan plan_from_json(const json& j, const std::string& path = "plan") {
  detail::StrictObject o(j, path);
  ExpansionPlan p;
  o.optional("d_model_delta", p.d_model_delta);
  o.optional("n_heads_delta", p.n_heads_delta);
  o.optional("d_ffn_delta", p.d_ffn_delta);
  o.optional("noise_scale", p.noise_scale);
  o.optional("seed", p.seed);
  if (const json* d = o.child("depth"); d && !d->is_null()) {
    detail::StrictObject od(*d, path + ".depth");
    DepthPlan depth;
    od.required("copies", depth.copies);
    od.optional("layers", depth.layers);
    std::string placement(to_string(depth.placement));
    od.optional("placement", placement);
    depth.placement = parse_placement(placement);
    od.optional("allow_recopy", depth.allow_recopy);
    od.finish();
    p.depth = depth;
  }
  o.finish();
  if (!(p.noise_scale >= 0.0)) throw ConfigError(path + ".noise_scale: must be non-negative");
  return p;
}

// ---- experiment -------------------------------------------------------------

struct StageConfig {
  std::string domain;
  std::optional<ExpansionPlan> expansion;
  std::size_t frw_steps = 0;
  std::size_t train_steps = 0;
  ReplayRatio replay_ratio;
  double lr = 2e-3;
  LrSchedule schedule = LrSchedule::inverse_sqrt;
  double warmup_ratio = 0.16;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;

  bool operator==(const StageConfig&) const = default;
};

struct Features {
  bool width_expansion = false;
  bool depth_expansion = false;
  bool frw = false;
  bool noise = false;
  bool prompts = false;
  bool replay = false;

  bool operator==(const Features&) const = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::string preset;  // informational label
  std::uint64_t seed = 0;
  std::string output_dir = "runs/experiment";
  std::string corpus_manifest;
  ModelConfig model;
  Features features;
  std::size_t memory_tokens = 20000;     // replay capacity B per domain, ~1% of a desk corpus
  std::size_t validation_chunks = 64;    // held-out chunks per domain
  std::size_t token_budget = 0;          // bytes read per domain, 0 = all
  double weight_decay = 0.01;
  bool prompt_weight_decay = true;       // false exempts prompts from decay
  double clip_norm = 1.0;
  std::size_t ars_positions = 512;
  std::vector<StageConfig> stages;

  bool operator==(const ExperimentConfig&) const = default;
};

inline json stage_to_json(const StageConfig& s) {
  return {{"domain", s.domain},
          {"expansion", s.expansion ? plan_to_json(*s.expansion) : json(nullptr)},
          {"frw_steps", s.frw_steps},
          {"train_steps", s.train_steps},
          {"replay_ratio", {s.replay_ratio.fresh, s.replay_ratio.replay}},
          {"lr", s.lr},
          {"schedule", to_string(s.schedule)},
          {"warmup_ratio", s.warmup_ratio},
          {"batch_size", s.batch_size},
          {"seed", s.seed}};
}

inline StageConfig stage_from_json(const json& j, const std::string& path) {
  detail::StrictObject o(j, path);
  StageConfig s;
  o.required("domain", s.domain);
  if (const json* e = o.child("expansion"); e && !e->is_null()) s.expansion = plan_from_json(*e, path + ".expansion");
  o.required("frw_steps", s.frw_steps);
  o.required("train_steps", s.train_steps);
  std::vector<std::size_t> ratio{1, 0};
  o.optional("replay_ratio", ratio);
  if (ratio.size() != 2) throw ConfigError(path + ".replay_ratio: expected [new, old]");
  s.replay_ratio = {ratio[0], ratio[1]};
  o.optional("lr", s.lr);
  std::string schedule(to_string(s.schedule));
  o.optional("schedule", schedule);
  try {
    s.schedule = parse_schedule(schedule);
  } catch (const ConfigError& e) {
    throw ConfigError(path + ".schedule: " + e.what());
  }
  o.optional("warmup_ratio", s.warmup_ratio);
  o.optional("batch_size", s.batch_size);
  o.optional("seed", s.seed);
  o.finish();
  return s;
}

inline json to_json(const ExperimentConfig& c) {
  json stages = json::array();
  for (const auto& s : c.stages) stages.push_back(stage_to_json(s));
  return {{"name", c.name},
          {"preset", c.preset},
          {"seed", c.seed},
          {"output_dir", c.output_dir},
          {"corpus_manifest", c.corpus_manifest},
          {"mode", c.model.objective == Objective::masked_lm ? "bert-style" : "gpt-style"},
          {"model", model_to_json(c.model)},
          {"features",
           {{"width_expansion", c.features.width_expansion},
            {"depth_expansion", c.features.depth_expansion},
            {"frw", c.features.frw},
            {"noise", c.features.noise},
            {"prompts", c.features.prompts},
            {"replay", c.features.replay}}},
          {"data",
           {{"memory_tokens", c.memory_tokens},
            {"validation_chunks", c.validation_chunks},
            {"token_budget", c.token_budget}}},
          {"optim",
           {{"weight_decay", c.weight_decay}, {"prompt_weight_decay", c.prompt_weight_decay}, {"clip_norm", c.clip_norm}}},
          {"eval", {{"ars_positions", c.ars_positions}}},
          {"stages", stages}};
}

/// Rejects configurations whose toggles, stages and growth disagree.
inline void validate(const ExperimentConfig& c) {
  c.model.validate();
  if (c.model.max_seq_len < 2) throw ConfigError("model.max_seq_len: must be at least 2");
  if (c.stages.empty()) throw ConfigError("stages: at least one stage is required");
  if (!(c.weight_decay >= 0.0)) throw ConfigError("optim.weight_decay: must be non-negative");
  if (!(c.clip_norm >= 0.0)) throw ConfigError("optim.clip_norm: must be non-negative");
  if (c.ars_positions == 0) throw ConfigError("eval.ars_positions: must be positive");
  std::set<std::string> seen;
  ModelConfig current = c.model;
  for (std::size_t i = 0; i < c.stages.size(); ++i) {
    const StageConfig& s = c.stages[i];
    const std::string at = "stages[" + std::to_string(i) + "]";
    if (s.domain.empty()) throw ConfigError(at + ".domain: empty");
    if (!seen.insert(s.domain).second) throw ConfigError(at + ".domain: '" + s.domain + "' appears twice");
    if (s.batch_size == 0) throw ConfigError(at + ".batch_size: must be positive");
    if (s.replay_ratio.fresh == 0) throw ConfigError(at + ".replay_ratio: new share must be positive");
    try {
      replay_share(s.batch_size, s.replay_ratio);
    } catch (const ConfigError& e) {
      throw ConfigError(at + ".batch_size: " + e.what());
    }
    if (!(s.lr >= 0.0)) throw ConfigError(at + ".lr: must be non-negative");
    if (!(s.warmup_ratio >= 0.0 && s.warmup_ratio <= 1.0)) throw ConfigError(at + ".warmup_ratio: must be in [0, 1]");
    if (s.train_steps == 0) throw ConfigError(at + ".train_steps: must be positive");
    if (i == 0) {
      if (s.expansion) throw ConfigError(at + ".expansion: the first stage cannot expand");
      if (s.frw_steps) throw ConfigError(at + ".frw_steps: the first stage has no memory to warm up on");
      if (s.replay_ratio.replay) throw ConfigError(at + ".replay_ratio: the first stage has no memory to replay");
    }
    if (s.frw_steps > 0 && !c.features.frw) throw ConfigError(at + ".frw_steps: features.frw is off");
    if (i > 0 && (s.replay_ratio.replay > 0) != c.features.replay) {
      throw ConfigError(at + ".replay_ratio: does not match features.replay");
    }
    if (s.expansion) {
      const ExpansionPlan& p = *s.expansion;
      if (p.grows_width() && !c.features.width_expansion) {
        throw ConfigError(at + ".expansion: width deltas while features.width_expansion is off");
      }
      if (p.depth && !c.features.depth_expansion) {
        throw ConfigError(at + ".expansion.depth: set while features.depth_expansion is off");
      }
      if ((p.noise_scale > 0.0) != c.features.noise && p.grows_width()) {
        throw ConfigError(at + ".expansion.noise_scale: does not match features.noise");
      }
      try {
        current = expanded_config(current, p);
      } catch (const ConfigError& e) {
        throw ConfigError(at + ".expansion: " + e.what());
      }
    }
  }
}

inline ExperimentConfig config_from_json(const json& j) {
  detail::StrictObject o(j, "config");
  ExperimentConfig c;
  o.optional("name", c.name);
  o.optional("preset", c.preset);
  o.required("seed", c.seed);
  o.optional("output_dir", c.output_dir);
  o.optional("corpus_manifest", c.corpus_manifest);
  std::string mode = "gpt-style";
  o.optional("mode", mode);
  const json* model = o.child("model");
  if (!model) throw ConfigError("config.model: missing");
  c.model = model_from_json(*model, "model");
  try {
    c.model.objective = parse_objective(mode);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config.mode: ") + e.what());
  }
  if (const json* f = o.child("features")) {
    detail::StrictObject of(*f, "features");
    of.optional("width_expansion", c.features.width_expansion);
    of.optional("depth_expansion", c.features.depth_expansion);
    of.optional("frw", c.features.frw);
    of.optional("noise", c.features.noise);
    of.optional("prompts", c.features.prompts);
    of.optional("replay", c.features.replay);
    of.finish();
  }
  if (const json* d = o.child("data")) {
    detail::StrictObject od(*d, "data");
    od.optional("memory_tokens", c.memory_tokens);
    od.optional("validation_chunks", c.validation_chunks);
    od.optional("token_budget", c.token_budget);
    od.finish();
  }
  if (const json* p = o.child("optim")) {
    detail::StrictObject op(*p, "optim");
    op.optional("weight_decay", c.weight_decay);
    op.optional("prompt_weight_decay", c.prompt_weight_decay);
    op.optional("clip_norm", c.clip_norm);
    op.finish();
  }
  if (const json* e = o.child("eval")) {
    detail::StrictObject oe(*e, "eval");
    oe.optional("ars_positions", c.ars_positions);
    oe.finish();
  }
  const json* stages = o.child("stages");
  if (!stages || !stages->is_array()) throw ConfigError("config.stages: expected an array");
  for (std::size_t i = 0; i < stages->size(); ++i) {
    c.stages.push_back(stage_from_json((*stages)[i], "stages[" + std::to_string(i) + "]"));
  }
  o.finish();
  validate(c);
  return c;
}

inline ExperimentConfig parse_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

inline std::string dump_config(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

// ---- corpus manifest --------------------------------------------------------

struct ManifestEntry {
  std::string domain;
  std::vector<std::string> paths;
  std::size_t token_budget = 0;

  bool operator==(const ManifestEntry&) const = default;
};

/// Reads {"domains": [{"domain", "paths", "token_budget"}]}; relative paths
/// resolve against the manifest's directory.
inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read corpus manifest '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("manifest: not valid JSON: " + std::string(e.what()));
  }
  detail::StrictObject o(j, "manifest");
  const json* domains = o.child("domains");
  o.finish();
  if (!domains || !domains->is_array()) throw ConfigError("manifest.domains: expected an array");
  std::vector<ManifestEntry> out;
  for (std::size_t i = 0; i < domains->size(); ++i) {
    detail::StrictObject od((*domains)[i], "manifest.domains[" + std::to_string(i) + "]");
    ManifestEntry e;
    od.required("domain", e.domain);
    od.required("paths", e.paths);
    od.optional("token_budget", e.token_budget);
    od.finish();
    for (auto& p : e.paths) {
      if (std::filesystem::path(p).is_relative()) p = (path.parent_path() / p).lexically_normal().string();
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  json domains = json::array();
  for (const auto& e : entries) domains.push_back({{"domain", e.domain}, {"paths", e.paths}, {"token_budget", e.token_budget}});
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  out << json{{"domains", domains}}.dump(2) << "\n";
  if (!out) throw IoError("error while writing manifest '" + path.string() + "'");
}

// ---- compute budget ---------------------------------------------------------

/// Model config in effect during each stage (after that stage's expansion).
inline std::vector<ModelConfig> stage_models(const ExperimentConfig& c) {
  std::vector<ModelConfig> out;
  ModelConfig current = c.model;
  for (const auto& s : c.stages) {
    if (s.expansion) current = expanded_config(current, *s.expansion);
    out.push_back(current);
  }
  return out;
}

/// Steps x parameters spent in each stage, FRW included.
inline std::vector<double> stage_compute(const ExperimentConfig& c) {
  const auto models = stage_models(c);
  std::vector<double> out;
  for (std::size_t i = 0; i < c.stages.size(); ++i) {
    out.push_back(static_cast<double>(c.stages[i].frw_steps + c.stages[i].train_steps) *
                  static_cast<double>(models[i].parameter_count()));
  }
  return out;
}

/// Throws unless every config spends the same compute in every stage, up to
/// one optimizer step of the largest model in that stage.
inline void check_equal_budget(std::span<const ExperimentConfig> configs) {
  if (configs.size() < 2) return;
  const auto reference = stage_compute(configs[0]);
  const auto ref_models = stage_models(configs[0]);
  for (std::size_t k = 1; k < configs.size(); ++k) {
    const auto units = stage_compute(configs[k]);
    const auto models = stage_models(configs[k]);
    if (units.size() != reference.size()) {
      throw ConfigError("budget: " + configs[k].name + " has " + std::to_string(units.size()) + " stages, " +
                        configs[0].name + " has " + std::to_string(reference.size()));
    }
    for (std::size_t i = 0; i < units.size(); ++i) {
      const double slack = static_cast<double>(
          std::max(models[i].parameter_count(), ref_models[i].parameter_count()));
      if (std::abs(units[i] - reference[i]) > slack) {
        std::ostringstream msg;
        msg << "budget: stage " << i + 1 << " of " << configs[k].name << " spends " << units[i]
            << " step-parameters, " << configs[0].name << " spends " << reference[i];
        throw ConfigError(msg.str());
      }
    }
  }
}

// ---- presets ----------------------------------------------------------------

struct PresetOptions {
  std::vector<std::string> domains;
  ModelConfig model;                   // initial model
  std::size_t base_steps = 600;        // steps of the initial model per stage
  std::size_t batch_size = 16;
  double lr = 2e-3;
  std::optional<double> warmup_ratio;  // default 0.16 causal, 0.08 masked
  double frw_fraction = 0.2;           // share of a grown stage's steps spent on FRW
  std::size_t heads_per_stage = 1;
  std::size_t ffn_per_stage = 32;
  std::vector<std::size_t> depth_copies;  // per stage (index 0 unused); empty = copy one layer every other stage
  std::size_t max_layers = 4;
  std::size_t max_heads = 8;
  double noise_scale = kDefaultNoiseScale;
  ReplayRatio replay_ratio{9, 1};
  std::size_t memory_tokens = 20000;
  std::size_t validation_chunks = 64;
  std::uint64_t seed = 0;
  std::string output_dir;
  std::string corpus_manifest;
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"naive",     "er",    "we-frw",          "de-frw", "we-de-frw",
                                              "we-de",     "we-de-frw-noise", "elle"};
  return names;
}

inline Features preset_features(std::string_view name) {
  Features f;
  if (name == "naive") return f;
  f.replay = true;
  if (name == "er") return f;
  if (name == "we-frw") {
    f.width_expansion = f.frw = true;
  } else if (name == "de-frw") {
    f.depth_expansion = f.frw = true;
  } else if (name == "we-de-frw") {
    f.width_expansion = f.depth_expansion = f.frw = true;
  } else if (name == "we-de") {
    f.width_expansion = f.depth_expansion = true;
  } else if (name == "we-de-frw-noise") {
    f.width_expansion = f.depth_expansion = f.frw = f.noise = true;
  } else if (name == "elle") {
    f.width_expansion = f.depth_expansion = f.frw = f.noise = f.prompts = true;
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("preset: unknown name '" + std::string(name) + "' (known: " + known + ")");
  }
  return f;
}

namespace detail {

inline std::size_t copies_at(const PresetOptions& o, std::size_t stage, std::size_t layers) {
  std::size_t copies = 0;
  if (!o.depth_copies.empty()) copies = stage < o.depth_copies.size() ? o.depth_copies[stage] : 0;
  else copies = stage % 2 == 1 ? 1 : 0;
  return std::min(copies, o.max_layers > layers ? o.max_layers - layers : 0);
}

/// Compound (width + depth) growth plan for one stage.
inline std::optional<ExpansionPlan> compound_plan(const PresetOptions& o, const ModelConfig& c, std::size_t stage,
                                                  bool noise, std::uint64_t seed) {
  ExpansionPlan p;
  p.n_heads_delta = c.n_heads < o.max_heads ? std::min(o.heads_per_stage, o.max_heads - c.n_heads) : 0;
  p.d_model_delta = p.n_heads_delta * c.d_head;
  p.d_ffn_delta = p.n_heads_delta > 0 ? o.ffn_per_stage : 0;
  if (const std::size_t copies = copies_at(o, stage, c.n_layers)) p.depth = DepthPlan{copies, {}, Placement::after, false};
  p.noise_scale = noise ? o.noise_scale : 0.0;
  p.seed = seed;
  if (!p.grows_width() && !p.grows_depth()) return std::nullopt;
  return p;
}

/// Single-kind plan (width only or depth only) whose grown model's size is
/// closest to `target` parameters.
inline std::optional<ExpansionPlan> matched_plan(const ModelConfig& c, std::size_t target, bool width, bool noise,
                                                 double noise_scale, std::size_t ffn_per_head, std::uint64_t seed) {
  std::optional<ExpansionPlan> best;
  std::size_t best_gap = SIZE_MAX;
  const std::size_t limit = width ? 16 : c.n_layers;
  for (std::size_t k = 0; k <= limit; ++k) {
    ExpansionPlan p;
    if (width) {
      p.n_heads_delta = k;
      p.d_model_delta = k * c.d_head;
      p.d_ffn_delta = k * ffn_per_head;
    } else if (k > 0) {
      p.depth = DepthPlan{k, {}, Placement::after, false};
    }
    p.noise_scale = noise ? noise_scale : 0.0;
    p.seed = seed;
    const std::size_t size = expanded_config(c, p).parameter_count();
    const std::size_t gap = size > target ? size - target : target - size;
    if (gap < best_gap) {
      best_gap = gap;
      best = p;
    }
  }
  if (best && !best->grows_width() && !best->grows_depth()) return std::nullopt;
  return best;
}

}  // namespace detail

/// Builds a full experiment for a named preset. Every stage gets the compute of
/// `base_steps` steps of the initial model; grown models take proportionally
/// fewer steps, FRW included.
inline ExperimentConfig make_preset(std::string_view name, const PresetOptions& o) {
  if (o.domains.empty()) throw ConfigError("preset: no domains");
  ExperimentConfig c;
  c.name = std::string(name);
  c.preset = std::string(name);
  c.seed = o.seed;
  c.model = o.model;
  c.features = preset_features(name);
  c.memory_tokens = o.memory_tokens;
  c.validation_chunks = o.validation_chunks;
  c.output_dir = o.output_dir.empty() ? "runs/" + c.name : o.output_dir;
  c.corpus_manifest = o.corpus_manifest;
  const bool grows = c.features.width_expansion || c.features.depth_expansion;
  const double budget = static_cast<double>(o.base_steps) * static_cast<double>(o.model.parameter_count());
  const LrSchedule schedule =
      o.model.objective == Objective::masked_lm ? LrSchedule::linear_decay : LrSchedule::inverse_sqrt;

  ModelConfig current = o.model, compound = o.model;
  for (std::size_t i = 0; i < o.domains.size(); ++i) {
    StageConfig s;
    s.domain = o.domains[i];
    s.lr = o.lr;
    s.schedule = schedule;
    s.warmup_ratio = o.warmup_ratio.value_or(o.model.objective == Objective::masked_lm ? 0.08 : 0.16);
    s.batch_size = o.batch_size;
    s.seed = derive_seed(o.seed, i);
    s.replay_ratio = (i > 0 && c.features.replay) ? o.replay_ratio : ReplayRatio{1, 0};
    if (i > 0 && grows) {
      const std::uint64_t plan_seed = derive_seed(s.seed, "expansion");
      auto reference = detail::compound_plan(o, compound, i, c.features.noise, plan_seed);
      if (reference) compound = expanded_config(compound, *reference);
      if (c.features.width_expansion && c.features.depth_expansion) {
        s.expansion = reference;
      } else {
        s.expansion = detail::matched_plan(current, compound.parameter_count(), c.features.width_expansion,
                                           c.features.noise, o.noise_scale, o.ffn_per_stage / std::max<std::size_t>(o.heads_per_stage, 1),
                                           plan_seed);
      }
      if (s.expansion) current = expanded_config(current, *s.expansion);
    }
    const auto steps = static_cast<std::size_t>(std::floor(budget / static_cast<double>(current.parameter_count())));
    if (i > 0 && c.features.frw) {
      s.frw_steps = static_cast<std::size_t>(std::lround(o.frw_fraction * static_cast<double>(steps)));
    }
    s.train_steps = steps - s.frw_steps;
    c.stages.push_back(std::move(s));
  }
  validate(c);
  return c;
}

}  // namespace lifelong

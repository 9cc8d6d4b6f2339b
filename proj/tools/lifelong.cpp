// Command-line front end: stream training, expansion, warmup, evaluation,
// prompt probing, attention export, reporting and synthetic corpora.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lifelong/synth.hpp"
#include "lifelong/trainer.hpp"

namespace fs = std::filesystem;
using namespace lifelong;

namespace {

enum Exit : int { kOk = 0, kInternal = 1, kConfig = 2, kNumeric = 3, kIo = 4 };

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::numeric: return kNumeric;
    case ErrorKind::io: return kIo;
    default: return kConfig;
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out || !(out << text) || !out.flush()) throw IoError("cannot write '" + path.string() + "'");
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// Corpus settings shared by the commands that read a manifest.
struct CorpusArgs {
  std::string manifest;
  std::string domains;
  std::size_t validation_chunks = 64;
  std::size_t eval_chunks = 64;
};

void add_corpus_options(CLI::App* cmd, CorpusArgs& a, bool required = true) {
  auto* m = cmd->add_option("--manifest", a.manifest, "Corpus manifest (JSON)");
  if (required) m->required();
  cmd->add_option("--domains", a.domains, "Comma-separated domains (default: all in the manifest)");
  cmd->add_option("--validation-chunks", a.validation_chunks, "Held-out chunks per domain")->capture_default_str();
  cmd->add_option("--eval-chunks", a.eval_chunks, "Validation chunks evaluated per domain")->capture_default_str();
}

std::vector<DomainCorpus> load_for_model(const CorpusArgs& a, const ModelConfig& model, std::uint64_t seed) {
  const auto entries = load_manifest(a.manifest);
  const auto wanted = split_csv(a.domains);
  std::vector<DomainCorpus> out;
  for (const auto& e : entries) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), e.domain) == wanted.end()) continue;
    CorpusOptions o;
    o.chunk_len = model.max_seq_len - 1;
    o.validation_chunks = a.validation_chunks;
    o.token_budget = e.token_budget;
    o.seed = seed;
    out.push_back(ingest(e.paths, e.domain, o));
  }
  for (const auto& w : wanted) {
    if (std::none_of(out.begin(), out.end(), [&](const DomainCorpus& c) { return c.domain == w; })) {
      throw ConfigError("--domains: '" + w + "' is not in the manifest");
    }
  }
  if (out.empty()) throw ConfigError("--manifest: no domains selected");
  return out;
}

/// Corpus split seed: the run seed stored in the checkpoint unless overridden.
std::uint64_t data_seed(const Checkpoint& k, const std::optional<std::uint64_t>& seed) {
  if (seed) return *seed;
  return k.config ? k.config->seed : 0;
}

// ---- train-stream ----------------------------------------------------------

int cmd_train_stream(const std::string& config_path, const std::optional<std::uint64_t>& seed,
                     const std::string& out_override, std::size_t stop_after, bool quiet) {
  ExperimentConfig c = load_config(config_path);
  if (seed) c.seed = *seed;
  if (!out_override.empty()) c.output_dir = out_override;
  validate(c);
  const fs::path base = fs::path(config_path).parent_path();
  fs::path out = c.output_dir;
  if (out.is_relative()) out = base / out;
  const auto corpora = load_corpora(c, base);
  StreamOptions options;
  options.stop_after = stop_after;
  options.on_stage = [&](const StageReport& r) {
    if (quiet) return;
    std::cout << "stage " << r.record.stage << " " << r.record.domain << "  AP " << std::setprecision(5) << r.record.ap;
    if (r.record.ap_plus) std::cout << "  AP+ " << *r.record.ap_plus;
    if (r.record.ars) std::cout << "  ARS " << *r.record.ars;
    std::cout << "  params " << r.record.parameters << "  steps " << r.record.step << "\n";
  };
  const Checkpoint final_state = run_stream(c, corpora, out, options);
  if (!quiet) std::cout << "completed " << final_state.completed_stages << "/" << c.stages.size() << " stages in " << out.string() << "\n";
  return kOk;
}

// ---- expand ----------------------------------------------------------------

/// Probe batches for the preservation report: chunks of a file, or random bytes.
std::vector<TokenBatch> probe_batches(const std::string& probe, std::size_t sequences, std::size_t seq,
                                      std::uint64_t seed) {
  std::vector<std::vector<std::uint8_t>> chunks;
  if (!probe.empty()) {
    const auto bytes = read_file_bytes(probe);
    for (std::size_t o = 0; o + seq <= bytes.size() && chunks.size() < sequences; o += seq) {
      chunks.emplace_back(bytes.begin() + static_cast<std::ptrdiff_t>(o),
                          bytes.begin() + static_cast<std::ptrdiff_t>(o + seq));
    }
    if (chunks.empty()) throw InvalidArgument("--probe: file is shorter than one sequence");
  } else {
    Rng rng(derive_seed(seed, "probe"));
    std::uniform_int_distribution<int> byte(0, 255);
    chunks.assign(sequences, std::vector<std::uint8_t>(seq));
    for (auto& c : chunks) {
      for (auto& b : c) b = static_cast<std::uint8_t>(byte(rng));
    }
  }
  std::vector<TokenBatch> out;
  for (std::size_t start = 0; start < chunks.size(); start += 32) {
    std::vector<SequenceView> views;
    for (std::size_t i = start; i < std::min(chunks.size(), start + 32); ++i) {
      views.push_back({"probe", i, std::span<const std::uint8_t>(chunks[i])});
    }
    out.push_back(make_token_batch(views));
  }
  return out;
}

int cmd_expand(const std::string& in, const std::string& plan_path, const std::string& out,
               const std::string& report_path, const std::string& probe, std::size_t sequences,
               const std::optional<std::uint64_t>& seed) {
  Checkpoint k = load_checkpoint(in);
  ExpansionPlan plan = plan_from_json(json::parse(read_text(plan_path), nullptr, false), "plan");
  if (seed) plan.seed = *seed;
  const TransformerLM old_model = k.model.clone();
  const PromptStore old_prompts = k.prompts.clone();
  const WidthMaps maps = sample_width_maps(k.model.config(), plan);
  k.model = expand_depth(expand_width(k.model, plan, maps), plan);
  if (plan.grows_width()) k.prompts.expand(maps.d_model);
  save_checkpoint(out, k);

  std::string report;
  const auto batches = probe_batches(probe, sequences, old_model.config().max_seq_len - 1, plan.seed);
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const PreservationReport r = verify_preservation(old_model, k.model, batches[i]);
    json line = {{"batch", i}, {"sequences", batches[i].batch}, {"prompt", nullptr},
                 {"max_abs_logit_diff", r.max_abs_logit_diff}, {"mean_token_kl", r.mean_token_kl}};
    report += line.dump() + "\n";
    for (const auto& p : old_prompts.entries()) {
      std::vector<Tensor> before(batches[i].batch, p.vector), after(batches[i].batch, k.prompts.find(p.domain)->vector);
      const PreservationReport rp = verify_preservation(old_model, k.model, batches[i], before, after);
      line["prompt"] = p.domain;
      line["max_abs_logit_diff"] = rp.max_abs_logit_diff;
      line["mean_token_kl"] = rp.mean_token_kl;
      report += line.dump() + "\n";
    }
  }
  write_text(report_path.empty() ? out + ".verify.jsonl" : report_path, report);
  std::cout << "expanded " << old_model.parameter_count() << " -> " << k.model.parameter_count() << " parameters\n";
  return kOk;
}

// ---- frw -------------------------------------------------------------------

int cmd_frw(const std::string& in, const std::string& out, const std::string& exclude, const PhaseSpec& spec_in,
            const std::optional<std::uint64_t>& seed) {
  Checkpoint k = load_checkpoint(in);
  PhaseSpec spec = spec_in;
  spec.seed = seed.value_or(k.config ? k.config->seed : 0);
  PromptStore* prompts = k.prompts.empty() ? nullptr : &k.prompts;
  const std::uint64_t mask_seed = k.config ? eval_mask_seed(*k.config) : 0;
  const double before = memory_ppl(k.model, prompts, k.memory, exclude, 64, mask_seed);
  TrainContext ctx;
  if (k.config) ctx.settings = train_settings(*k.config);
  ctx.step = k.step;
  AdamW opt;
  frw(k.model, k.memory, exclude, prompts, spec, ctx, opt);
  k.step = ctx.step;
  k.compute_units += static_cast<double>(spec.steps) * static_cast<double>(k.model.parameter_count());
  const double after = memory_ppl(k.model, prompts, k.memory, exclude, 64, mask_seed);
  save_checkpoint(out, k);
  std::cout << json{{"memory_ppl_before", before}, {"memory_ppl_after", after}, {"steps", spec.steps}}.dump() << "\n";
  return kOk;
}

// ---- eval / probe / attention ----------------------------------------------

int cmd_eval(const std::string& in, const CorpusArgs& corpus, bool no_prompts, const std::string& out,
             const std::optional<std::uint64_t>& seed) {
  const Checkpoint k = load_checkpoint(in);
  const std::uint64_t s = data_seed(k, seed);
  const auto corpora = load_for_model(corpus, k.model.config(), s);
  const PromptStore* prompts = no_prompts || k.prompts.empty() ? nullptr : &k.prompts;
  const std::uint64_t mask_seed = seed ? derive_seed(*seed, "eval-mask") : k.config ? eval_mask_seed(*k.config) : 0;
  DomainPPLs ppl = evaluate(k.model, prompts, corpora, corpus.eval_chunks, mask_seed);
  const std::size_t j = ppl.size();
  bool finals_known = j >= 2;
  for (std::size_t i = 0; i + 1 < j; ++i) finals_known = finals_known && k.finals.contains(ppl[i].first);
  MetricsRecord r;
  r.stage = j;
  r.domain = ppl.back().first;
  r.ppl = ppl;
  std::vector<double> values;
  for (const auto& [_, p] : ppl) values.push_back(p);
  r.ap = ap(values);
  if (finals_known) r.ap_plus = ap_plus(ppl, k.finals, j);
  r.compute_units = k.compute_units;
  r.step = k.step;
  r.parameters = k.model.parameter_count();
  const std::string line = json(r).dump();
  if (out.empty()) {
    std::cout << line << "\n";
  } else {
    std::ofstream f(out, std::ios::app);
    if (!f || !(f << line << '\n')) throw IoError("cannot append to '" + out + "'");
  }
  return kOk;
}

int cmd_probe(const std::string& in, const CorpusArgs& corpus, const std::string& out,
              const std::optional<std::uint64_t>& seed) {
  const Checkpoint k = load_checkpoint(in);
  const std::uint64_t s = data_seed(k, seed);
  const auto corpora = load_for_model(corpus, k.model.config(), s);
  std::vector<ProbeSlice> slices;
  for (const auto& c : corpora) slices.push_back({c.domain, c.validation_views(corpus.eval_chunks)});
  const std::uint64_t mask_seed = k.config ? eval_mask_seed(*k.config) : 0;
  const auto rows = probe(k.model, k.prompts, slices, s, mask_seed);
  std::ostringstream csv;
  write_probe_csv(csv, rows);
  if (out.empty()) std::cout << csv.str();
  else write_text(out, csv.str());
  return kOk;
}

int cmd_export_attention(const std::string& in, const std::string& text, const CorpusArgs& corpus, std::size_t layer,
                         std::size_t head, const std::string& prompt_domain, const std::string& out,
                         const std::optional<std::uint64_t>& seed) {
  const Checkpoint k = load_checkpoint(in);
  const std::size_t seq = k.model.config().max_seq_len - 1;
  std::vector<std::uint8_t> bytes;
  if (!text.empty()) {
    bytes = read_file_bytes(text);
    if (bytes.empty()) throw InvalidArgument("--text: empty file");
    if (bytes.size() > seq) bytes.resize(seq);
  } else {
    if (corpus.manifest.empty()) throw ConfigError("export-attention: give --text or --manifest with --domains");
    const auto corpora = load_for_model(corpus, k.model.config(), data_seed(k, seed));
    const auto chunk = corpora.front().chunk(corpora.front().validation.front());
    bytes.assign(chunk.begin(), chunk.end());
  }
  const SequenceView view{"text", 0, bytes};
  const TokenBatch batch = make_token_batch(std::span(&view, 1));
  std::vector<Tensor> prompts;
  if (!prompt_domain.empty()) {
    const DomainPrompt* p = k.prompts.find(prompt_domain);
    if (!p) throw InvalidArgument("--prompt: checkpoint has no prompt for '" + prompt_domain + "'");
    prompts.push_back(p->vector);
  }
  std::ostringstream csv;
  write_matrix_csv(csv, export_attention(k.model, batch, layer, head, prompts));
  if (out.empty()) std::cout << csv.str();
  else write_text(out, csv.str());
  return kOk;
}

// ---- report ----------------------------------------------------------------

int cmd_report(const std::vector<std::string>& runs, const std::string& out) {
  std::ostringstream csv;
  csv << "run,preset,seed,stage,domain,compute_units,step,parameters,ap,ap_plus,ars\n";
  csv.precision(10);
  std::cout << std::left << std::setw(28) << "run" << std::setw(7) << "stage" << std::setw(14) << "budget"
            << std::setw(12) << "AP" << std::setw(12) << "AP+" << "ARS\n";
  for (const auto& dir : runs) {
    const fs::path d = dir;
    const ExperimentConfig c = load_config(d / "config.json");
    for (const auto& r : read_metrics(d / "metrics.jsonl")) {
      csv << c.name << ',' << c.preset << ',' << c.seed << ',' << r.stage << ',' << r.domain << ',' << r.compute_units
          << ',' << r.step << ',' << r.parameters << ',' << r.ap << ','
          << (r.ap_plus ? std::to_string(*r.ap_plus) : "") << ',' << (r.ars ? std::to_string(*r.ars) : "") << '\n';
      std::cout << std::setw(28) << (c.name + "/" + std::to_string(c.seed)) << std::setw(7) << r.stage << std::setw(14)
                << std::setprecision(4) << r.compute_units << std::setw(12) << r.ap << std::setw(12)
                << (r.ap_plus ? std::to_string(*r.ap_plus) : "-") << (r.ars ? std::to_string(*r.ars) : "-") << "\n";
    }
  }
  if (!out.empty()) write_text(out, csv.str());
  return kOk;
}

// ---- helpers ---------------------------------------------------------------

int cmd_gen_corpus(const std::string& out, std::size_t bytes, const std::string& domains_arg, std::uint64_t seed) {
  const fs::path dir = out;
  fs::create_directories(dir);
  std::vector<std::string> domains = split_csv(domains_arg);
  if (domains.empty()) domains.assign(synth::kDomains.begin(), synth::kDomains.end());
  std::vector<ManifestEntry> entries;
  for (const auto& d : domains) {
    write_text(dir / (d + ".txt"), synth::generate(d, bytes, derive_seed(seed, d)));
    entries.push_back({d, {d + ".txt"}, 0});
  }
  write_manifest(dir / "manifest.json", entries);
  std::cout << "wrote " << domains.size() << " domains of " << bytes << " bytes to " << dir.string() << "\n";
  return kOk;
}

struct InitArgs {
  std::string preset = "elle";
  std::string manifest;
  std::string out;
  std::string output_dir;
  std::string mode = "gpt-style";
  std::string domains;
  std::size_t base_steps = 600;
  std::size_t batch_size = 20;
  double lr = 2e-3;
  std::size_t memory_tokens = 20000;
};

int cmd_init_config(const InitArgs& a, const std::optional<std::uint64_t>& seed) {
  PresetOptions o;
  o.domains = split_csv(a.domains);
  if (o.domains.empty()) {
    for (const auto& e : load_manifest(a.manifest)) o.domains.push_back(e.domain);
  }
  o.model.objective = parse_objective(a.mode);
  o.base_steps = a.base_steps;
  o.batch_size = a.batch_size;
  o.lr = a.lr;
  o.memory_tokens = a.memory_tokens;
  o.seed = seed.value_or(0);
  o.output_dir = a.output_dir;
  // stored relative to the config file, which is how train-stream resolves it
  const fs::path config_dir = a.out.empty() ? fs::current_path() : fs::absolute(a.out).parent_path();
  o.corpus_manifest = fs::relative(fs::absolute(a.manifest), config_dir).string();
  const ExperimentConfig c = make_preset(a.preset, o);
  if (a.out.empty()) std::cout << dump_config(c);
  else write_text(a.out, dump_config(c));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lifelong pre-training of growing byte-level language models"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  auto add_seed = [&](CLI::App* cmd) { cmd->add_option("--seed", seed, "Seed for every random choice of the command"); };

  std::string config_path, out_dir;
  std::size_t stop_after = SIZE_MAX;
  bool quiet = false;
  auto* train = app.add_subcommand("train-stream", "Run (or resume) a lifelong stream from a config");
  train->add_option("config", config_path, "Experiment config (JSON)")->required();
  train->add_option("--out", out_dir, "Override the output directory");
  train->add_option("--stop-after", stop_after, "Stop once this many stages are complete");
  train->add_flag("--quiet", quiet);
  add_seed(train);

  std::string ckpt, out, plan_path, report_path, probe_path;
  std::size_t probe_sequences = 64;
  auto* expand_cmd = app.add_subcommand("expand", "Grow a checkpoint's model and report function preservation");
  expand_cmd->add_option("checkpoint", ckpt)->required();
  expand_cmd->add_option("--plan", plan_path, "Expansion plan (JSON)")->required();
  expand_cmd->add_option("--out", out, "Output checkpoint")->required();
  expand_cmd->add_option("--report", report_path, "Verifier JSON-lines (default: <out>.verify.jsonl)");
  expand_cmd->add_option("--probe", probe_path, "File whose chunks feed the verifier (default: random bytes)");
  expand_cmd->add_option("--probe-sequences", probe_sequences)->capture_default_str();
  add_seed(expand_cmd);

  std::string exclude;
  PhaseSpec frw_spec;
  frw_spec.steps = 300;
  std::string schedule = "inverse-sqrt";
  auto* frw_cmd = app.add_subcommand("frw", "Warm up a checkpoint's model on its replay memory");
  frw_cmd->add_option("checkpoint", ckpt)->required();
  frw_cmd->add_option("--out", out)->required();
  frw_cmd->add_option("--steps", frw_spec.steps)->capture_default_str();
  frw_cmd->add_option("--lr", frw_spec.lr)->capture_default_str();
  frw_cmd->add_option("--batch-size", frw_spec.batch_size)->capture_default_str();
  frw_cmd->add_option("--warmup-ratio", frw_spec.warmup_ratio)->capture_default_str();
  frw_cmd->add_option("--schedule", schedule)->capture_default_str();
  frw_cmd->add_option("--exclude", exclude, "Domain kept out of the warmup batches");
  add_seed(frw_cmd);

  CorpusArgs corpus;
  bool no_prompts = false;
  auto* eval_cmd = app.add_subcommand("eval", "Perplexity of a checkpoint on validation data");
  eval_cmd->add_option("checkpoint", ckpt)->required();
  add_corpus_options(eval_cmd, corpus);
  eval_cmd->add_flag("--no-prompts", no_prompts, "Evaluate without domain prompts");
  eval_cmd->add_option("--out", out, "Append the record to this JSON-lines file");
  add_seed(eval_cmd);

  auto* probe_cmd = app.add_subcommand("probe-prompts", "Perplexity under right, wrong and no prompt");
  probe_cmd->add_option("checkpoint", ckpt)->required();
  add_corpus_options(probe_cmd, corpus);
  probe_cmd->add_option("--out", out, "CSV output (default: stdout)");
  add_seed(probe_cmd);

  std::string text_path, prompt_domain;
  std::size_t layer = 0, head = 0;
  auto* attn_cmd = app.add_subcommand("export-attention", "Attention weights of one head as CSV");
  attn_cmd->add_option("checkpoint", ckpt)->required();
  attn_cmd->add_option("--text", text_path, "Input text file (first max_seq_len-1 bytes)");
  add_corpus_options(attn_cmd, corpus, false);
  attn_cmd->add_option("--layer", layer)->capture_default_str();
  attn_cmd->add_option("--head", head)->capture_default_str();
  attn_cmd->add_option("--prompt", prompt_domain, "Prepend this domain's prompt");
  attn_cmd->add_option("--out", out, "CSV output (default: stdout)");
  add_seed(attn_cmd);

  std::vector<std::string> runs;
  auto* report_cmd = app.add_subcommand("report", "Tabulate AP and AP+ against compute for run directories");
  report_cmd->add_option("runs", runs, "Run output directories")->required();
  report_cmd->add_option("--out", out, "CSV output");

  std::size_t bytes = 2'000'000;
  std::string domains;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "Write synthetic domain corpora and a manifest");
  gen_cmd->add_option("--out", out)->required();
  gen_cmd->add_option("--bytes", bytes, "Bytes per domain")->capture_default_str();
  gen_cmd->add_option("--domains", domains, "Comma-separated subset of prose,code,tables,dialogue,markup");
  add_seed(gen_cmd);

  InitArgs init;
  auto* init_cmd = app.add_subcommand("init-config", "Write an experiment config for a named preset");
  init_cmd->add_option("--preset", init.preset, "naive, er, we-frw, de-frw, we-de-frw, we-de, we-de-frw-noise, elle")
      ->capture_default_str();
  init_cmd->add_option("--manifest", init.manifest)->required();
  init_cmd->add_option("--out", init.out, "Config path (default: stdout)");
  init_cmd->add_option("--output-dir", init.output_dir, "Run directory recorded in the config");
  init_cmd->add_option("--mode", init.mode, "gpt-style or bert-style")->capture_default_str();
  init_cmd->add_option("--domains", init.domains, "Stream order (default: manifest order)");
  init_cmd->add_option("--base-steps", init.base_steps, "Steps of the initial model per stage")->capture_default_str();
  init_cmd->add_option("--batch-size", init.batch_size)->capture_default_str();
  init_cmd->add_option("--lr", init.lr)->capture_default_str();
  init_cmd->add_option("--memory-tokens", init.memory_tokens)->capture_default_str();
  add_seed(init_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*train) return cmd_train_stream(config_path, seed, out_dir, stop_after, quiet);
    if (*expand_cmd) return cmd_expand(ckpt, plan_path, out, report_path, probe_path, probe_sequences, seed);
    if (*frw_cmd) {
      frw_spec.schedule = parse_schedule(schedule);
      return cmd_frw(ckpt, out, exclude, frw_spec, seed);
    }
    if (*eval_cmd) return cmd_eval(ckpt, corpus, no_prompts, out, seed);
    if (*probe_cmd) return cmd_probe(ckpt, corpus, out, seed);
    if (*attn_cmd) return cmd_export_attention(ckpt, text_path, corpus, layer, head, prompt_domain, out, seed);
    if (*report_cmd) return cmd_report(runs, out);
    if (*gen_cmd) return cmd_gen_corpus(out, bytes, domains, seed.value_or(0));
    if (*init_cmd) return cmd_init_config(init, seed);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kInternal;
}

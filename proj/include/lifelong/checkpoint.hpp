#pragma once

// Single-file checkpoints: magic, version, a JSON header describing the run
// state and every blob, then the raw little-endian blobs. Writes are atomic
// (temporary file + rename).

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lifelong/config.hpp"
#include "lifelong/metrics.hpp"
#include "lifelong/prompts.hpp"

namespace lifelong {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are stored little-endian");

inline constexpr char kCheckpointMagic[8] = {'E', 'L', 'L', 'E', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to continue a stream after `completed_stages` stages.
struct Checkpoint {
  std::optional<ExperimentConfig> config;
  std::size_t completed_stages = 0;
  TransformerLM model;
  PromptStore prompts;
  MemoryStore memory;
  FinalPPLTable finals;
  std::vector<MetricsRecord> history;
  std::size_t step = 0;
  double compute_units = 0.0;
};

namespace detail {

struct BlobWriter {
  json index = json::object();
  std::vector<std::uint8_t> data;

  void add(const std::string& name, const char* dtype, const Shape& shape, const void* bytes, std::size_t length) {
    if (index.contains(name)) throw InvalidArgument("checkpoint: duplicate blob " + name);
    index[name] = {{"dtype", dtype}, {"shape", shape}, {"offset", data.size()}, {"length", length}};
    const auto* p = static_cast<const std::uint8_t*>(bytes);
    data.insert(data.end(), p, p + length);
  }

  void add(const std::string& name, const Tensor& t) {
    add(name, "f32", t.shape(), t.values().data(), t.numel() * sizeof(float));
  }
};

struct BlobReader {
  const json& index;
  const std::vector<std::uint8_t>& data;
  std::string path;

  std::span<const std::uint8_t> raw(const std::string& name, std::string_view dtype) const {
    auto it = index.find(name);
    if (it == index.end()) throw IoError(path + ": missing blob " + name);
    if ((*it)["dtype"] != dtype) throw IoError(path + ": blob " + name + " has dtype " + (*it)["dtype"].dump());
    const auto offset = (*it)["offset"].get<std::size_t>(), length = (*it)["length"].get<std::size_t>();
    if (offset > data.size() || length > data.size() - offset) throw IoError(path + ": blob " + name + " is truncated");
    return {data.data() + offset, length};
  }

  Tensor tensor(const std::string& name) const {
    const auto bytes = raw(name, "f32");
    const Shape shape = index.at(name).at("shape").get<Shape>();
    std::vector<float> values(bytes.size() / sizeof(float));
    if (values.size() != element_count(shape) || bytes.size() % sizeof(float)) {
      throw IoError(path + ": blob " + name + " does not match its shape");
    }
    std::memcpy(values.data(), bytes.data(), bytes.size());
    return Tensor(shape, std::move(values), true);
  }
};

inline json finals_to_json(const FinalPPLTable& t) {
  json j = json::object();
  for (const auto& [d, p] : t.values()) j[d] = p;
  return j;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  detail::BlobWriter blobs;
  for (const auto& [name, t] : ckpt.model.parameters()) blobs.add("param." + name, t);
  json prompts = json::array();
  for (const auto& p : ckpt.prompts.entries()) {
    prompts.push_back({{"domain", p.domain}, {"created_at_stage", p.created_at_stage}});
    blobs.add("prompt." + p.domain, p.vector);
  }
  json memory = json::array();
  for (const auto& e : ckpt.memory.entries) {
    memory.push_back({{"domain", e.domain}, {"chunk_len", e.chunk_len}, {"origins", e.origins}});
    blobs.add("memory." + e.domain, "u8", {e.bytes.size()}, e.bytes.data(), e.bytes.size());
  }
  json history = json::array();
  for (const auto& r : ckpt.history) history.push_back(r);
  json header = {{"config", ckpt.config ? to_json(*ckpt.config) : json(nullptr)},
                 {"completed_stages", ckpt.completed_stages},
                 {"model", model_to_json(ckpt.model.config())},
                 {"ledger", ckpt.model.ledger().counts},
                 {"prompts", prompts},
                 {"memory", memory},
                 {"finals", detail::finals_to_json(ckpt.finals)},
                 {"history", history},
                 {"step", ckpt.step},
                 {"compute_units", ckpt.compute_units},
                 {"blobs", blobs.index}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + tmp.string() + "'");
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t length = text.size();
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&length), sizeof length);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(blobs.data.data()), static_cast<std::streamsize>(blobs.data.size()));
    out.flush();
    if (!out) throw IoError("error while writing checkpoint '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint '" + path.string() + "'");
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t length = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&length), sizeof length);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw IoError("'" + path.string() + "' is not a checkpoint");
  }
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint '" + path.string() + "' has version " + std::to_string(version) + ", expected " +
                  std::to_string(kCheckpointVersion));
  }
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw IoError("checkpoint '" + path.string() + "' header is truncated");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Checkpoint ckpt;
  try {
    const json header = json::parse(text);
    const detail::BlobReader blobs{header.at("blobs"), data, path.string()};
    if (!header.at("config").is_null()) ckpt.config = config_from_json(header.at("config"));
    ckpt.completed_stages = header.at("completed_stages").get<std::size_t>();
    const ModelConfig mc = model_from_json(header.at("model"));
    ParameterMap params;
    for (const auto& [name, _] : parameter_shapes(mc)) params.emplace(name, blobs.tensor("param." + name));
    ckpt.model = TransformerLM(mc, std::move(params), LayerCopyLedger{header.at("ledger").get<std::vector<std::uint32_t>>()});
    for (const auto& p : header.at("prompts")) {
      const auto domain = p.at("domain").get<std::string>();
      ckpt.prompts.insert({domain, blobs.tensor("prompt." + domain), p.at("created_at_stage").get<std::size_t>()});
    }
    for (const auto& m : header.at("memory")) {
      MemoryEntry e;
      e.domain = m.at("domain").get<std::string>();
      e.chunk_len = m.at("chunk_len").get<std::size_t>();
      e.origins = m.at("origins").get<std::vector<std::uint64_t>>();
      const auto bytes = blobs.raw("memory." + e.domain, "u8");
      e.bytes.assign(bytes.begin(), bytes.end());
      if (e.bytes.size() != e.origins.size() * e.chunk_len) throw IoError("memory " + e.domain + " size mismatch");
      ckpt.memory.entries.push_back(std::move(e));
    }
    for (const auto& [d, p] : header.at("finals").items()) ckpt.finals.record(d, p.get<double>());
    for (const auto& r : header.at("history")) ckpt.history.push_back(r.get<MetricsRecord>());
    ckpt.step = header.at("step").get<std::size_t>();
    ckpt.compute_units = header.at("compute_units").get<double>();
  } catch (const json::exception& e) {
    throw IoError("checkpoint '" + path.string() + "' has a malformed header: " + e.what());
  } catch (const IoError&) {
    throw;
  } catch (const Error& e) {
    throw IoError("checkpoint '" + path.string() + "' is inconsistent: " + e.what());
  }
  return ckpt;
}

/// Checkpoint holding only a model (and optionally prompts).
inline Checkpoint model_checkpoint(TransformerLM model, PromptStore prompts = {}) {
  Checkpoint c;
  c.model = std::move(model);
  c.prompts = std::move(prompts);
  return c;
}

}  // namespace lifelong

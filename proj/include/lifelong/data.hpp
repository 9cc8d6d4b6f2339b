#pragma once

// Per-domain byte corpora cut into fixed-length chunks, the bounded replay
// memory, and ratio-exact mixed batches.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "lifelong/model.hpp"
#include "lifelong/random.hpp"

namespace lifelong {

struct CorpusOptions {
  std::size_t chunk_len = 63;            // max_seq_len - 1, leaving room for a prompt
  std::size_t validation_chunks = 64;
  std::size_t token_budget = 0;          // bytes read from the sources; 0 = all
  std::uint64_t seed = 0;
};

/// One domain's bytes cut into non-overlapping chunks. Chunks are addressed
/// by their byte offset (origin) and split into disjoint train/validation sets.
struct DomainCorpus {
  std::string domain;
  std::vector<std::string> sources;
  std::vector<std::uint8_t> bytes;
  std::size_t chunk_len = 0;
  std::vector<std::uint64_t> train;       // shuffled chunk origins
  std::vector<std::uint64_t> validation;

  std::size_t token_count() const { return bytes.size(); }
  std::size_t train_tokens() const { return train.size() * chunk_len; }

  std::span<const std::uint8_t> chunk(std::uint64_t origin) const {
    if (origin + chunk_len > bytes.size()) throw InvalidArgument("corpus " + domain + ": chunk outside corpus");
    return {bytes.data() + origin, chunk_len};
  }

  SequenceView view(std::uint64_t origin) const { return {domain, origin, chunk(origin)}; }

  std::vector<SequenceView> validation_views(std::size_t limit = SIZE_MAX) const {
    std::vector<SequenceView> out;
    for (std::size_t i = 0; i < validation.size() && i < limit; ++i) out.push_back(view(validation[i]));
    return out;
  }
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  std::vector<std::uint8_t> out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error while reading '" + path.string() + "'");
  return out;
}

/// Builds a corpus from raw bytes already in memory.
inline DomainCorpus make_corpus(std::string domain, std::vector<std::uint8_t> bytes, const CorpusOptions& options) {
  if (options.chunk_len == 0) throw InvalidArgument("corpus: chunk length must be positive");
  if (options.token_budget > 0 && bytes.size() > options.token_budget) bytes.resize(options.token_budget);
  if (bytes.empty()) throw InvalidArgument("corpus " + domain + ": empty corpus");
  const std::size_t chunks = bytes.size() / options.chunk_len;
  if (chunks <= options.validation_chunks) {
    throw InvalidArgument("corpus " + domain + ": " + std::to_string(chunks) + " chunks cannot cover " +
                          std::to_string(options.validation_chunks) + " validation chunks plus training");
  }
  DomainCorpus c;
  c.domain = std::move(domain);
  c.bytes = std::move(bytes);
  c.chunk_len = options.chunk_len;
  std::vector<std::uint64_t> origins(chunks);
  for (std::size_t i = 0; i < chunks; ++i) origins[i] = i * options.chunk_len;
  Rng rng(derive_seed(options.seed, c.domain));
  std::shuffle(origins.begin(), origins.end(), rng);
  c.validation.assign(origins.begin(), origins.begin() + static_cast<std::ptrdiff_t>(options.validation_chunks));
  c.train.assign(origins.begin() + static_cast<std::ptrdiff_t>(options.validation_chunks), origins.end());
  return c;
}

inline DomainCorpus ingest(std::span<const std::string> paths, std::string domain, const CorpusOptions& options) {
  std::vector<std::uint8_t> bytes;
  for (const auto& p : paths) {
    auto part = read_file_bytes(p);
    bytes.insert(bytes.end(), part.begin(), part.end());
    if (options.token_budget > 0 && bytes.size() >= options.token_budget) break;
  }
  DomainCorpus c = make_corpus(std::move(domain), std::move(bytes), options);
  c.sources.assign(paths.begin(), paths.end());
  return c;
}

/// Replay memory for one domain: copies of sampled training chunks.
struct MemoryEntry {
  std::string domain;
  std::size_t chunk_len = 0;
  std::vector<std::uint64_t> origins;
  std::vector<std::uint8_t> bytes;  // origins.size() * chunk_len

  std::size_t size() const { return origins.size(); }
  std::size_t tokens() const { return bytes.size(); }
  bool empty() const { return origins.empty(); }

  SequenceView view(std::size_t i) const {
    return {domain, origins[i], std::span<const std::uint8_t>(bytes.data() + i * chunk_len, chunk_len)};
  }

  bool operator==(const MemoryEntry&) const = default;
};

/// Samples floor(capacity / chunk_len) training chunks uniformly without replacement.
inline MemoryEntry fill_memory(const DomainCorpus& corpus, std::size_t capacity_tokens, std::uint64_t seed) {
  if (capacity_tokens > corpus.train_tokens()) {
    throw InvalidArgument("fill_memory: capacity " + std::to_string(capacity_tokens) + " exceeds the " +
                          std::to_string(corpus.train_tokens()) + " training tokens of " + corpus.domain);
  }
  const std::size_t k = capacity_tokens / corpus.chunk_len;
  std::vector<std::size_t> index(corpus.train.size());
  std::iota(index.begin(), index.end(), 0);
  Rng rng(derive_seed(seed, corpus.domain));
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, index.size() - 1);
    std::swap(index[i], index[pick(rng)]);
  }
  index.resize(k);
  std::sort(index.begin(), index.end());
  MemoryEntry m;
  m.domain = corpus.domain;
  m.chunk_len = corpus.chunk_len;
  for (std::size_t i : index) {
    const std::uint64_t origin = corpus.train[i];
    m.origins.push_back(origin);
    auto c = corpus.chunk(origin);
    m.bytes.insert(m.bytes.end(), c.begin(), c.end());
  }
  return m;
}

/// Memory of all previously trained domains, in stream order.
struct MemoryStore {
  std::vector<MemoryEntry> entries;

  bool empty() const {
    return std::all_of(entries.begin(), entries.end(), [](const MemoryEntry& e) { return e.empty(); });
  }

  const MemoryEntry* find(std::string_view domain) const {
    for (const auto& e : entries) {
      if (e.domain == domain) return &e;
    }
    return nullptr;
  }

  void put(MemoryEntry entry) {
    for (auto& e : entries) {
      if (e.domain == entry.domain) {
        e = std::move(entry);
        return;
      }
    }
    entries.push_back(std::move(entry));
  }

  /// Entries that can be drawn from, excluding one domain.
  std::vector<const MemoryEntry*> drawable(std::string_view exclude = {}) const {
    std::vector<const MemoryEntry*> out;
    for (const auto& e : entries) {
      if (!e.empty() && e.domain != exclude) out.push_back(&e);
    }
    return out;
  }

  bool operator==(const MemoryStore&) const = default;
};

/// Endless pass over a corpus' training chunks, reshuffled every epoch.
class ChunkStream {
 public:
  ChunkStream(const DomainCorpus& corpus, std::uint64_t seed) : corpus_(&corpus), seed_(seed) { reshuffle(); }

  SequenceView next() {
    if (pos_ == order_.size()) {
      ++epoch_;
      reshuffle();
    }
    return corpus_->view(order_[pos_++]);
  }

 private:
  void reshuffle() {
    order_ = corpus_->train;
    Rng rng(derive_seed(seed_, epoch_));
    std::shuffle(order_.begin(), order_.end(), rng);
    pos_ = 0;
  }

  const DomainCorpus* corpus_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::uint64_t> order_;
  std::size_t pos_ = 0;
};

struct ReplayRatio {
  std::size_t fresh = 1;
  std::size_t replay = 0;

  bool operator==(const ReplayRatio&) const = default;
};

/// Number of replayed sequences in a batch; requires batch_size to split
/// exactly along the ratio.
inline std::size_t replay_share(std::size_t batch_size, ReplayRatio ratio) {
  const std::size_t parts = ratio.fresh + ratio.replay;
  if (parts == 0) throw ConfigError("replay_ratio: both parts are zero");
  if (batch_size % parts != 0) {
    throw ConfigError("batch_size " + std::to_string(batch_size) + " is not divisible by replay ratio parts " +
                      std::to_string(ratio.fresh) + ":" + std::to_string(ratio.replay));
  }
  return batch_size / parts * ratio.replay;
}

/// One sequence drawn uniformly from memory: domain first, then chunk.
inline SequenceView draw_memory(std::span<const MemoryEntry* const> pool, Rng& rng) {
  const MemoryEntry* e = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  return e->view(std::uniform_int_distribution<std::size_t>(0, e->size() - 1)(rng));
}

/// batch_size sequences: exactly the ratio's share from the current domain,
/// the rest from the memory of earlier domains.
inline std::vector<SequenceView> mixed_batch(ChunkStream& current, const MemoryStore& memory, std::string_view domain,
                                             ReplayRatio ratio, std::size_t batch_size, Rng& rng) {
  const std::size_t old = replay_share(batch_size, ratio);
  std::vector<SequenceView> out;
  out.reserve(batch_size);
  for (std::size_t i = old; i < batch_size; ++i) out.push_back(current.next());
  if (old > 0) {
    auto pool = memory.drawable(domain);
    if (pool.empty()) throw InvalidArgument("mixed_batch: replay share requested but memory is empty");
    for (std::size_t i = 0; i < old; ++i) out.push_back(draw_memory(pool, rng));
  }
  return out;
}

/// Memory-only batch over all domains except `exclude`.
inline std::vector<SequenceView> memory_batch(const MemoryStore& memory, std::string_view exclude,
                                              std::size_t batch_size, Rng& rng) {
  auto pool = memory.drawable(exclude);
  if (pool.empty()) throw InvalidArgument("memory_batch: memory is empty");
  std::vector<SequenceView> out;
  out.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) out.push_back(draw_memory(pool, rng));
  return out;
}

/// Hash set of validation chunks; flags any batch that touches one.
class ValidationAudit {
 public:
  void add(const DomainCorpus& corpus) {
    for (std::uint64_t o : corpus.validation) keys_.insert(key(corpus.domain, o));
  }

  bool contains(std::string_view domain, std::uint64_t origin) const { return keys_.count(key(domain, origin)) > 0; }

  void check(std::span<const SequenceView> batch) const {
    for (const auto& s : batch) {
      if (contains(s.domain, s.origin)) {
        throw InvalidArgument("validation chunk " + std::string(s.domain) + "@" + std::to_string(s.origin) +
                              " reached a training batch");
      }
    }
  }

  std::size_t size() const { return keys_.size(); }

 private:
  static std::uint64_t key(std::string_view domain, std::uint64_t origin) {
    return derive_seed(hash_string(domain), origin);
  }
  std::unordered_set<std::uint64_t> keys_;
};

}  // namespace lifelong

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rtvis/tensor.hpp"

namespace rtvis {

using Embedding = Vector;
/// Read-only view of a stored embedding.
using EmbeddingView = Eigen::Map<const Vector>;

/// Source of text embeddings for category names.
class TextEncoderProvider {
 public:
  virtual ~TextEncoderProvider() = default;
  virtual std::size_t dim() const = 0;
  virtual Embedding encode(std::string_view name) const = 0;
};

/// Deterministic stand-in for a frozen text encoder. The lowercased name is
/// split into character trigrams; a seeded hash of each trigram drives a
/// counter-based stream of d uniform values as its token embedding. Tokens go
/// through one residual mixing layer x + tanh(x·W) with a seeded d×d W, are
/// mean-pooled and normalized to unit length.
class HashTextEncoder final : public TextEncoderProvider {
 public:
  explicit HashTextEncoder(std::size_t dim, std::uint64_t seed = 0);
  std::size_t dim() const override { return dim_; }
  Embedding encode(std::string_view name) const override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  Matrix mixing_;
};

/// Character trigrams of the ASCII-lowercased name in order of appearance.
/// Names shorter than three characters form a single token.
std::vector<std::string> name_tokens(std::string_view name);

std::uint64_t hash_name(std::string_view name, std::uint64_t seed);

/// Similarity between a new category name and a stored key; larger is closer.
using Similarity = std::function<double(std::string_view, std::string_view)>;

/// Cosine similarity of character-trigram count vectors (ASCII-lowercased).
/// Names shorter than three characters count as a single gram.
double trigram_cosine(std::string_view a, std::string_view b);

struct SynthesisResult {
  Embedding embedding;
  std::vector<std::string> neighbors;  // empty when the name was already stored
  bool synthesized = false;
};

/// Grow-only map from category name to embedding.
///
/// Lookups are lock-free. Entries (key and vector side by side) live directly
/// in the slots of an open-addressing table and are published with release
/// semantics. Growing copies them into a new table and publishes it, keeping
/// every older table alive and unchanged, so a concurrent reader sees either
/// the state before an insertion or after it, and views returned by find/get
/// stay valid for the memory's lifetime. Nothing is overwritten or evicted.
/// Writers are serialized by a mutex.
class EmbeddingMemory {
 public:
  static constexpr std::size_t kDefaultKnn = 3;

  explicit EmbeddingMemory(std::size_t dim, std::size_t knn_k = kDefaultKnn);
  EmbeddingMemory(const EmbeddingMemory& other);
  EmbeddingMemory(EmbeddingMemory&& other) noexcept;
  EmbeddingMemory& operator=(EmbeddingMemory other) noexcept;
  ~EmbeddingMemory();

  /// Encodes every distinct name exactly once, in first-seen order.
  static EmbeddingMemory build(std::span<const std::string> names, const TextEncoderProvider& provider,
                               std::size_t knn_k = kDefaultKnn);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t knn_k() const noexcept { return knn_k_; }
  std::size_t size() const noexcept;
  bool empty() const { return size() == 0; }

  /// Returns false if the key already maps to the identical bytes; throws if
  /// it maps to different bytes.
  bool insert(const std::string& name, Embedding value);

  std::optional<EmbeddingView> find(const std::string& name) const;
  /// Throws NotFoundError for unseen names.
  EmbeddingView get(const std::string& name) const;

  /// Stored vector if present; otherwise the mean of the knn_k most similar
  /// stored entries (ties by key order), which is then stored under `name`.
  SynthesisResult get_or_synthesize(const std::string& name, const Similarity& similarity = trigram_cosine);

  /// Keys in lexicographic order.
  std::vector<std::string> keys() const;

  /// Stacks the embeddings of `names` into a names.size() × d matrix.
  Matrix gather(std::span<const std::string> names) const;

  void save(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static EmbeddingMemory load(std::istream& in);
  static EmbeddingMemory load(const std::filesystem::path& path);

  /// Bit-exact comparison of dim, knn_k, keys and values.
  friend bool operator==(const EmbeddingMemory& a, const EmbeddingMemory& b);

 private:
  struct Entry;
  struct Table;
  struct State;

  const Entry* find_entry(std::string_view name, std::uint64_t hash) const noexcept;
  // Requires the writer lock.
  bool insert_locked(const std::string& name, const Embedding& value);
  std::vector<const Entry*> sorted_entries_locked() const;

  std::size_t dim_;
  std::size_t knn_k_;
  std::unique_ptr<State> state_;
};

bool bit_equal(Eigen::Ref<const Vector> a, Eigen::Ref<const Vector> b) noexcept;

}  // namespace rtvis

#include "rtvis/embedding_memory.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <memory>
#include <new>
#include <functional>
#include <map>
#include <mutex>
#include <ostream>
#include <unordered_set>

#include "json.hpp"

#if defined(__linux__)
#include <sys/mman.h>
#endif

namespace rtvis {
namespace {

constexpr const char* kFormatTag = "fem1";

std::map<std::string, int> trigram_counts(std::string_view name) {
  std::map<std::string, int> counts;
  if (name.empty()) return counts;
  for (auto& g : name_tokens(name)) ++counts[g];
  return counts;
}

}  // namespace

double trigram_cosine(std::string_view a, std::string_view b) {
  const auto ca = trigram_counts(a);
  const auto cb = trigram_counts(b);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [g, n] : ca) {
    na += double(n) * n;
    if (auto it = cb.find(g); it != cb.end()) dot += double(n) * it->second;
  }
  for (const auto& [g, n] : cb) nb += double(n) * n;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

bool bit_equal(Eigen::Ref<const Vector> a, Eigen::Ref<const Vector> b) noexcept {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(float)) == 0;
}

namespace {

// Fixed-size array of default-constructed T on cache-line boundaries.
// Buffers of 2 MiB and more are aligned to huge pages and advised as such.
template <typename T>
class PageBuffer {
 public:
  explicit PageBuffer(std::size_t n) : n_(n) {
    constexpr std::size_t kHuge = std::size_t{2} << 20;
    const std::size_t bytes = n * sizeof(T);
    const std::size_t align = bytes >= kHuge ? kHuge : std::max<std::size_t>(alignof(T), 64);
    void* raw = ::operator new(bytes, std::align_val_t(align));
#ifdef MADV_HUGEPAGE
    if (bytes >= kHuge) ::madvise(raw, bytes, MADV_HUGEPAGE);
#endif
    data_ = static_cast<T*>(raw);
    align_ = align;
    std::uninitialized_default_construct_n(data_, n_);
  }
  PageBuffer(PageBuffer&& o) noexcept : data_(std::exchange(o.data_, nullptr)), n_(o.n_), align_(o.align_) {}
  PageBuffer(const PageBuffer&) = delete;
  PageBuffer& operator=(const PageBuffer&) = delete;
  PageBuffer& operator=(PageBuffer&&) = delete;
  ~PageBuffer() {
    if (!data_) return;
    std::destroy_n(data_, n_);
    ::operator delete(data_, std::align_val_t(align_));
  }

  T* data() const noexcept { return data_; }
  T& operator[](std::size_t i) const noexcept { return data_[i]; }

 private:
  T* data_;
  std::size_t n_;
  std::size_t align_;
};

}  // namespace

// The d floats of the vector follow the header directly. `tag` is 0 while
// the slot is empty and the key hash with its top bit set once filled; key
// and vector are written before the tag and never change afterwards.
struct EmbeddingMemory::Entry {
  static constexpr std::uint64_t kFull = std::uint64_t{1} << 63;

  std::atomic<std::uint64_t> tag{0};
  std::string key;

  const float* data() const noexcept { return reinterpret_cast<const float*>(this + 1); }
  float* data() noexcept { return reinterpret_cast<float*>(this + 1); }
  EmbeddingView value(std::size_t dim) const noexcept { return {data(), static_cast<Eigen::Index>(dim)}; }
};

// Open-addressing table whose slots are the entries themselves, padded to
// whole cache lines. Tables are never modified after they are superseded.
struct EmbeddingMemory::Table {
  static constexpr std::size_t kLine = 64;

  Table(std::size_t capacity, std::size_t dim)
      : mask(capacity - 1),
        stride((sizeof(Entry) + dim * sizeof(float) + kLine - 1) / kLine * kLine),
        bytes(capacity * stride) {
    for (std::size_t i = 0; i < capacity; ++i) new (bytes.data() + i * stride) Entry;
  }
  Table(const Table&) = delete;
  Table& operator=(const Table&) = delete;
  ~Table() {
    for (std::size_t i = 0; i < capacity(); ++i) slot(i).~Entry();
  }

  std::size_t capacity() const noexcept { return mask + 1; }
  Entry& slot(std::size_t i) const noexcept { return *reinterpret_cast<Entry*>(bytes.data() + i * stride); }

  // First empty slot on the probe sequence of `hash`.
  Entry& vacant(std::uint64_t hash) const noexcept {
    std::size_t i = hash & mask;
    while (slot(i).tag.load(std::memory_order_relaxed)) i = (i + 1) & mask;
    return slot(i);
  }

  std::size_t mask;
  std::size_t stride;
  PageBuffer<std::byte> bytes;
};

struct EmbeddingMemory::State {
  std::mutex writer;
  std::atomic<const Table*> table{nullptr};
  std::atomic<std::size_t> size{0};
  // Touched only under `writer`.
  std::vector<std::unique_ptr<Table>> tables;  // current one last; retired ones stay alive for readers
  std::size_t count = 0;

  Table& current() const noexcept { return *tables.back(); }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    const Table& t = current();
    for (std::size_t i = 0; i < t.capacity(); ++i) {
      if (t.slot(i).tag.load(std::memory_order_relaxed)) fn(static_cast<const Entry&>(t.slot(i)));
    }
  }
};

namespace {

constexpr std::size_t kInitialCapacity = 16;

std::uint64_t key_hash(std::string_view key) noexcept {
  return std::hash<std::string_view>{}(key) | (std::uint64_t{1} << 63);
}

}  // namespace

EmbeddingMemory::EmbeddingMemory(std::size_t dim, std::size_t knn_k)
    : dim_(dim), knn_k_(knn_k), state_(std::make_unique<State>()) {
  if (dim == 0) throw ShapeError("EmbeddingMemory: dim must be positive");
  if (knn_k == 0) throw std::invalid_argument("EmbeddingMemory: knn_k must be positive");
  state_->tables.push_back(std::make_unique<Table>(kInitialCapacity, dim));
  state_->table.store(state_->tables.back().get(), std::memory_order_release);
}

EmbeddingMemory::EmbeddingMemory(const EmbeddingMemory& other) : EmbeddingMemory(other.dim_, other.knn_k_) {
  std::lock_guard lock(other.state_->writer);
  other.state_->for_each([&](const Entry& e) { insert_locked(e.key, e.value(other.dim_)); });
}

EmbeddingMemory::EmbeddingMemory(EmbeddingMemory&&) noexcept = default;

EmbeddingMemory& EmbeddingMemory::operator=(EmbeddingMemory other) noexcept {
  std::swap(dim_, other.dim_);
  std::swap(knn_k_, other.knn_k_);
  std::swap(state_, other.state_);
  return *this;
}

EmbeddingMemory::~EmbeddingMemory() = default;

EmbeddingMemory EmbeddingMemory::build(std::span<const std::string> names, const TextEncoderProvider& provider,
                                       std::size_t knn_k) {
  std::vector<std::string> unique;
  std::unordered_set<std::string> seen;
  for (const auto& n : names) {
    if (seen.insert(n).second) unique.push_back(n);
  }
  if (unique.empty()) throw std::invalid_argument("EmbeddingMemory::build: no category names");

  EmbeddingMemory memory(provider.dim(), knn_k);
  for (const auto& n : unique) memory.insert(n, provider.encode(n));
  return memory;
}

std::size_t EmbeddingMemory::size() const noexcept { return state_->size.load(std::memory_order_acquire); }

const EmbeddingMemory::Entry* EmbeddingMemory::find_entry(std::string_view name, std::uint64_t hash) const noexcept {
  const Table* table = state_->table.load(std::memory_order_acquire);
  for (std::size_t i = hash & table->mask;; i = (i + 1) & table->mask) {
    const Entry& e = table->slot(i);
    const std::uint64_t tag = e.tag.load(std::memory_order_acquire);
    if (!tag) return nullptr;
    if (tag == hash && e.key == name) return &e;
  }
}

bool EmbeddingMemory::insert_locked(const std::string& name, const Embedding& value) {
  if (static_cast<std::size_t>(value.size()) != dim_) {
    throw ShapeError("EmbeddingMemory: '" + name + "' has dim " + std::to_string(value.size()) + ", expected " +
                     std::to_string(dim_));
  }
  const std::uint64_t hash = key_hash(name);
  if (const Entry* e = find_entry(name, hash)) {
    if (!bit_equal(e->value(dim_), value)) {
      throw std::invalid_argument("EmbeddingMemory: key '" + name + "' already stored with a different vector");
    }
    return false;
  }

  State& st = *state_;
  if (st.count >= (std::size_t{1} << 62)) throw std::length_error("EmbeddingMemory: too many entries");
  auto fill = [this](const Table& t, std::uint64_t h, const std::string& key, const float* data,
                     std::memory_order order) {
    Entry& e = t.vacant(h);
    e.key = key;
    std::copy_n(data, dim_, e.data());
    e.tag.store(h, order);
  };

  // keep the load factor at or below one half
  if (2 * (st.count + 1) > st.current().capacity()) {
    auto grown = std::make_unique<Table>(2 * st.current().capacity(), dim_);
    st.for_each([&](const Entry& e) {
      fill(*grown, e.tag.load(std::memory_order_relaxed), e.key, e.data(), std::memory_order_relaxed);
    });
    fill(*grown, hash, name, value.data(), std::memory_order_relaxed);
    st.tables.push_back(std::move(grown));
    st.table.store(st.tables.back().get(), std::memory_order_release);
  } else {
    fill(st.current(), hash, name, value.data(), std::memory_order_release);
  }
  ++st.count;
  st.size.store(st.count, std::memory_order_release);
  return true;
}

bool EmbeddingMemory::insert(const std::string& name, Embedding value) {
  std::lock_guard lock(state_->writer);
  return insert_locked(name, value);
}

std::optional<EmbeddingView> EmbeddingMemory::find(const std::string& name) const {
  if (const Entry* e = find_entry(name, key_hash(name))) return e->value(dim_);
  return std::nullopt;
}

EmbeddingView EmbeddingMemory::get(const std::string& name) const {
  if (auto e = find(name)) return *e;
  throw NotFoundError("EmbeddingMemory: '" + name + "' not found");
}

std::vector<const EmbeddingMemory::Entry*> EmbeddingMemory::sorted_entries_locked() const {
  std::vector<const Entry*> out;
  out.reserve(state_->count);
  state_->for_each([&](const Entry& e) { out.push_back(&e); });
  std::sort(out.begin(), out.end(), [](const Entry* a, const Entry* b) { return a->key < b->key; });
  return out;
}

SynthesisResult EmbeddingMemory::get_or_synthesize(const std::string& name, const Similarity& similarity) {
  if (auto e = find(name)) return {*e, {}, false};

  std::lock_guard lock(state_->writer);
  if (auto e = find(name)) return {*e, {}, false};
  if (state_->count == 0) throw std::invalid_argument("EmbeddingMemory: cannot synthesize from an empty memory");

  struct Scored {
    double score;
    const Entry* entry;
  };
  std::vector<Scored> ranked;
  ranked.reserve(state_->count);
  state_->for_each([&](const Entry& e) { ranked.push_back({similarity(name, e.key), &e}); });
  const std::size_t k = std::min(knn_k_, ranked.size());
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k), ranked.end(),
                    [](const Scored& a, const Scored& b) {
                      if (a.score != b.score) return a.score > b.score;
                      return a.entry->key < b.entry->key;
                    });

  Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
  SynthesisResult result;
  for (std::size_t i = 0; i < k; ++i) {
    sum += ranked[i].entry->value(dim_).cast<double>();
    result.neighbors.push_back(ranked[i].entry->key);
  }
  result.embedding = (sum / static_cast<double>(k)).cast<float>();
  result.synthesized = true;
  insert_locked(name, result.embedding);
  return result;
}

std::vector<std::string> EmbeddingMemory::keys() const {
  std::lock_guard lock(state_->writer);
  std::vector<std::string> out;
  for (const Entry* e : sorted_entries_locked()) out.push_back(e->key);
  return out;
}

Matrix EmbeddingMemory::gather(std::span<const std::string> names) const {
  Matrix out(static_cast<Eigen::Index>(names.size()), static_cast<Eigen::Index>(dim_));
  for (std::size_t i = 0; i < names.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = get(names[i]).transpose();
  return out;
}

void EmbeddingMemory::save(std::ostream& out) const {
  std::lock_guard lock(state_->writer);
  out << nlohmann::json{{"format", kFormatTag}, {"dim", dim_}, {"knn_k", knn_k_}}.dump() << '\n';
  for (const Entry* e : sorted_entries_locked()) {
    // float -> double is exact and the writer emits shortest round-trip decimals
    std::vector<double> values(e->data(), e->data() + dim_);
    out << nlohmann::json{{"key", e->key}, {"dim", dim_}, {"values", values}}.dump() << '\n';
  }
  if (!out) throw std::runtime_error("EmbeddingMemory: write failed");
}

void EmbeddingMemory::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  save(out);
}

EmbeddingMemory EmbeddingMemory::load(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto parse = [&](const std::string& text) {
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("fem1: malformed JSON at line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
  };

  if (!std::getline(in, line)) throw FormatError("fem1: missing header line", 1);
  ++line_no;
  const auto header = parse(line);
  if (!header.is_object() || header.value("format", "") != kFormatTag || !header.contains("dim") ||
      !header["dim"].is_number_unsigned() || !header.contains("knn_k") || !header["knn_k"].is_number_unsigned()) {
    throw FormatError("fem1: bad header at line 1", 1);
  }
  EmbeddingMemory memory(header["dim"].get<std::size_t>(), header["knn_k"].get<std::size_t>());

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto rec = parse(line);
    const std::string where = " at line " + std::to_string(line_no);
    if (!rec.is_object() || !rec.contains("key") || !rec["key"].is_string() || !rec.contains("dim") ||
        !rec["dim"].is_number_unsigned() || !rec.contains("values") || !rec["values"].is_array()) {
      throw FormatError("fem1: malformed record" + where, line_no);
    }
    const auto key = rec["key"].get<std::string>();
    const auto dim = rec["dim"].get<std::size_t>();
    const auto& values = rec["values"];
    if (dim != memory.dim_ || values.size() != memory.dim_) {
      throw FormatError("fem1: inconsistent dim " + std::to_string(dim) + " (" + std::to_string(values.size()) +
                            " values), expected " + std::to_string(memory.dim_) + where,
                        line_no);
    }
    Embedding v(static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < dim; ++i) {
      if (!values[i].is_number()) throw FormatError("fem1: non-numeric value" + where, line_no);
      v[static_cast<Eigen::Index>(i)] = static_cast<float>(values[i].get<double>());
    }
    if (memory.find(key)) throw FormatError("fem1: duplicate key at line " + std::to_string(line_no), line_no);
    memory.insert(key, std::move(v));
  }
  return memory;
}

EmbeddingMemory EmbeddingMemory::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return load(in);
}

bool operator==(const EmbeddingMemory& a, const EmbeddingMemory& b) {
  if (&a == &b) return true;
  if (a.dim_ != b.dim_ || a.knn_k_ != b.knn_k_ || a.size() != b.size()) return false;
  std::lock_guard lock(a.state_->writer);
  bool equal = true;
  a.state_->for_each([&](const EmbeddingMemory::Entry& e) {
    const auto other = b.find(e.key);
    if (!other || !bit_equal(e.value(a.dim_), *other)) equal = false;
  });
  return equal;
}

}  // namespace rtvis

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "knnkb/distance.hpp"
#include "knnkb/error.hpp"
#include "knnkb/vocabulary.hpp"

namespace knnkb {

using RecordId = std::uint64_t;
using TaskId = std::uint32_t;

/// Value snapshot of one stored support sample.
struct FeatureRecord {
  RecordId id = 0;
  std::vector<float> vector;  // unit length
  float original_norm = 0.0f;
  std::vector<LabelId> labels;  // sorted, unique, nonempty
  std::string source;
  std::optional<TaskId> task_id;
  std::uint64_t ref_count = 0;
  bool deleted = false;
};

/// Full logical content of a store, used by persistence and tests.
struct StoreState {
  std::size_t dimension = 0;
  RecordId next_id = 0;
  std::vector<std::string> vocabulary;
  std::vector<FeatureRecord> records;  // insertion order
};

struct RefStat {
  RecordId id = 0;
  std::uint64_t ref_count = 0;
  friend bool operator==(const RefStat&, const RefStat&) = default;
};

enum class RefOrder { kMost, kLeast };

/// Dimension-fixed collection of feature records.
///
/// Records live in insertion order in column arrays; vectors are packed
/// row-major so the linear scan walks contiguous memory. Deletion tombstones a
/// row and never reuses its id. Mutations take the store's lock exclusively;
/// `reader()` hands out a shared view used by search and classification.
/// Reference counters are bumped atomically through a shared view.
class KnowledgeStore {
 public:
  class Reader;

  explicit KnowledgeStore(std::size_t dimension) : dim_(dimension) {
    if (dimension == 0) fail(ErrorCode::kInvalidArgument, "dimension must be >= 1");
  }

  KnowledgeStore(const KnowledgeStore& other) {
    std::shared_lock lock(other.mu_);
    copy_from(other);
  }

  KnowledgeStore(KnowledgeStore&& other) noexcept {
    std::unique_lock lock(other.mu_);
    move_from(std::move(other));
  }

  KnowledgeStore& operator=(const KnowledgeStore& other) {
    if (this == &other) return *this;
    KnowledgeStore tmp(other);
    std::unique_lock lock(mu_);
    move_from(std::move(tmp));
    return *this;
  }

  KnowledgeStore& operator=(KnowledgeStore&& other) noexcept {
    if (this == &other) return *this;
    std::scoped_lock lock(mu_, other.mu_);
    move_from(std::move(other));
    return *this;
  }

  ~KnowledgeStore() = default;

  /// Normalizes `raw` and appends it. Returns the new record id.
  RecordId ingest(std::span<const float> raw, const std::vector<std::string>& label_names,
                  std::string source, std::optional<TaskId> task_id = std::nullopt) {
    if (raw.size() != dim_) {
      fail(ErrorCode::kInvalidArgument, "dimension mismatch: store has " +
                                            std::to_string(dim_) + ", vector has " +
                                            std::to_string(raw.size()));
    }
    if (label_names.empty()) fail(ErrorCode::kInvalidArgument, "label set must not be empty");
    auto normalized = normalize(raw);

    std::unique_lock lock(mu_);
    auto labels = intern_labels(label_names);
    const RecordId id = next_id_++;
    ids_.push_back(id);
    vectors_.insert(vectors_.end(), normalized.unit.begin(), normalized.unit.end());
    norms_.push_back(normalized.norm);
    labels_.push_back(std::move(labels));
    sources_.push_back(std::move(source));
    tasks_.push_back(task_id);
    refs_.push_back(0);
    deleted_.push_back(0);
    ++live_;
    return id;
  }

  /// Tombstones the given ids. Unknown or already deleted ids are ignored.
  std::size_t remove(std::span<const RecordId> ids) {
    std::unique_lock lock(mu_);
    std::size_t removed = 0;
    for (RecordId id : ids) {
      if (auto row = row_of(id); row && !deleted_[*row]) {
        deleted_[*row] = 1;
        --live_;
        ++removed;
      }
    }
    return removed;
  }

  /// Tombstones every live record whose label set contains `label_name`.
  std::size_t remove_label(std::string_view label_name) {
    std::unique_lock lock(mu_);
    auto label = vocab_.find(label_name);
    if (!label) return 0;
    std::size_t removed = 0;
    for (std::size_t row = 0; row < ids_.size(); ++row) {
      if (deleted_[row]) continue;
      if (std::binary_search(labels_[row].begin(), labels_[row].end(), *label)) {
        deleted_[row] = 1;
        --live_;
        ++removed;
      }
    }
    return removed;
  }

  /// Replaces a live record's label set; returns the previous label names.
  std::vector<std::string> relabel(RecordId id, const std::vector<std::string>& label_names) {
    if (label_names.empty()) fail(ErrorCode::kInvalidArgument, "label set must not be empty");
    std::unique_lock lock(mu_);
    auto row = row_of(id);
    if (!row || deleted_[*row]) {
      fail(ErrorCode::kNotFound, "no live record with id " + std::to_string(id));
    }
    std::vector<std::string> previous;
    for (LabelId label : labels_[*row]) previous.push_back(vocab_.name(label));
    labels_[*row] = intern_labels(label_names);
    return previous;
  }

  /// Up to `top_m` live records ordered by reference count; ties by smaller id.
  std::vector<RefStat> reference_stats(std::size_t top_m, RefOrder order) const {
    std::shared_lock lock(mu_);
    std::vector<RefStat> stats;
    stats.reserve(live_);
    for (std::size_t row = 0; row < ids_.size(); ++row) {
      if (!deleted_[row]) stats.push_back({ids_[row], load_ref(row)});
    }
    auto cmp = [order](const RefStat& a, const RefStat& b) {
      if (a.ref_count != b.ref_count) {
        return order == RefOrder::kMost ? a.ref_count > b.ref_count : a.ref_count < b.ref_count;
      }
      return a.id < b.id;
    };
    const auto m = std::min(top_m, stats.size());
    std::partial_sort(stats.begin(), stats.begin() + static_cast<std::ptrdiff_t>(m), stats.end(),
                      cmp);
    stats.resize(m);
    return stats;
  }

  /// Tombstones every live record referenced at most `threshold` times.
  std::size_t prune_rarely_referenced(std::uint64_t threshold) {
    std::unique_lock lock(mu_);
    std::size_t removed = 0;
    for (std::size_t row = 0; row < ids_.size(); ++row) {
      if (!deleted_[row] && refs_[row] <= threshold) {
        deleted_[row] = 1;
        --live_;
        ++removed;
      }
    }
    return removed;
  }

  void reset_ref_counts() {
    std::unique_lock lock(mu_);
    std::fill(refs_.begin(), refs_.end(), 0);
  }

  /// Drops tombstoned rows. Surviving records keep their ids. Returns rows dropped.
  std::size_t compact() {
    std::unique_lock lock(mu_);
    std::size_t out = 0;
    const std::size_t before = ids_.size();
    for (std::size_t row = 0; row < before; ++row) {
      if (deleted_[row]) continue;
      if (out != row) {
        ids_[out] = ids_[row];
        std::copy_n(vectors_.begin() + static_cast<std::ptrdiff_t>(row * dim_), dim_,
                    vectors_.begin() + static_cast<std::ptrdiff_t>(out * dim_));
        norms_[out] = norms_[row];
        labels_[out] = std::move(labels_[row]);
        sources_[out] = std::move(sources_[row]);
        tasks_[out] = tasks_[row];
        refs_[out] = refs_[row];
        deleted_[out] = 0;
      }
      ++out;
    }
    ids_.resize(out);
    vectors_.resize(out * dim_);
    norms_.resize(out);
    labels_.resize(out);
    sources_.resize(out);
    tasks_.resize(out);
    refs_.resize(out);
    deleted_.resize(out);
    return before - out;
  }

  /// Looks up a record, tombstoned or not.
  std::optional<FeatureRecord> find(RecordId id) const {
    std::shared_lock lock(mu_);
    auto row = row_of(id);
    if (!row) return std::nullopt;
    return record_at(*row);
  }

  FeatureRecord record(RecordId id) const {
    auto rec = find(id);
    if (!rec) fail(ErrorCode::kNotFound, "no record with id " + std::to_string(id));
    return *std::move(rec);
  }

  std::size_t dimension() const noexcept { return dim_; }

  std::size_t live_count() const {
    std::shared_lock lock(mu_);
    return live_;
  }

  std::size_t total_count() const {
    std::shared_lock lock(mu_);
    return ids_.size();
  }

  RecordId next_id() const {
    std::shared_lock lock(mu_);
    return next_id_;
  }

  LabelVocabulary vocabulary() const {
    std::shared_lock lock(mu_);
    return vocab_;
  }

  std::optional<LabelId> label_id(std::string_view name) const {
    std::shared_lock lock(mu_);
    return vocab_.find(name);
  }

  std::string label_name(LabelId id) const {
    std::shared_lock lock(mu_);
    return vocab_.name(id);
  }

  std::vector<std::string> label_names(std::span<const LabelId> ids) const {
    std::shared_lock lock(mu_);
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (LabelId id : ids) out.push_back(vocab_.name(id));
    return out;
  }

  std::vector<RecordId> live_ids() const {
    std::shared_lock lock(mu_);
    std::vector<RecordId> out;
    out.reserve(live_);
    for (std::size_t row = 0; row < ids_.size(); ++row) {
      if (!deleted_[row]) out.push_back(ids_[row]);
    }
    return out;
  }

  StoreState export_state() const {
    std::shared_lock lock(mu_);
    StoreState state;
    state.dimension = dim_;
    state.next_id = next_id_;
    state.vocabulary = vocab_.names();
    state.records.reserve(ids_.size());
    for (std::size_t row = 0; row < ids_.size(); ++row) state.records.push_back(record_at(row));
    return state;
  }

  /// Rebuilds a store from a state, validating every invariant.
  static KnowledgeStore from_state(StoreState state) {
    KnowledgeStore store(state.dimension);
    store.vocab_ = LabelVocabulary(std::move(state.vocabulary));
    RecordId last = 0;
    bool first = true;
    for (auto& rec : state.records) {
      if (!first && rec.id <= last) {
        fail(ErrorCode::kCorruption, "record ids are not strictly increasing");
      }
      if (rec.id >= state.next_id) fail(ErrorCode::kCorruption, "record id beyond next id");
      if (rec.vector.size() != state.dimension) {
        fail(ErrorCode::kCorruption, "record " + std::to_string(rec.id) + " has wrong dimension");
      }
      if (rec.labels.empty()) {
        fail(ErrorCode::kCorruption, "record " + std::to_string(rec.id) + " has no labels");
      }
      for (LabelId label : rec.labels) {
        if (!store.vocab_.contains(label)) {
          fail(ErrorCode::kCorruption, "record " + std::to_string(rec.id) + " has unknown label");
        }
      }
      if (!std::is_sorted(rec.labels.begin(), rec.labels.end()) ||
          std::adjacent_find(rec.labels.begin(), rec.labels.end()) != rec.labels.end()) {
        fail(ErrorCode::kCorruption, "record " + std::to_string(rec.id) + " has unsorted labels");
      }
      const double norm = euclidean_norm(rec.vector);
      if (std::abs(norm - 1.0) > 1e-5) {
        fail(ErrorCode::kCorruption, "record " + std::to_string(rec.id) + " is not unit length");
      }
      first = false;
      last = rec.id;
      store.ids_.push_back(rec.id);
      store.vectors_.insert(store.vectors_.end(), rec.vector.begin(), rec.vector.end());
      store.norms_.push_back(rec.original_norm);
      store.labels_.push_back(std::move(rec.labels));
      store.sources_.push_back(std::move(rec.source));
      store.tasks_.push_back(rec.task_id);
      store.refs_.push_back(rec.ref_count);
      store.deleted_.push_back(rec.deleted ? 1 : 0);
      if (!rec.deleted) ++store.live_;
    }
    store.next_id_ = state.next_id;
    return store;
  }

  Reader reader() const;

 private:
  std::vector<LabelId> intern_labels(const std::vector<std::string>& names) {
    std::vector<LabelId> ids;
    ids.reserve(names.size());
    for (const auto& name : names) ids.push_back(vocab_.intern(name));
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
  }

  std::optional<std::size_t> row_of(RecordId id) const {
    auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    if (it == ids_.end() || *it != id) return std::nullopt;
    return static_cast<std::size_t>(it - ids_.begin());
  }

  std::uint64_t load_ref(std::size_t row) const {
    return std::atomic_ref<std::uint64_t>(refs_[row]).load(std::memory_order_relaxed);
  }

  FeatureRecord record_at(std::size_t row) const {
    FeatureRecord rec;
    rec.id = ids_[row];
    const auto begin = vectors_.begin() + static_cast<std::ptrdiff_t>(row * dim_);
    rec.vector.assign(begin, begin + static_cast<std::ptrdiff_t>(dim_));
    rec.original_norm = norms_[row];
    rec.labels = labels_[row];
    rec.source = sources_[row];
    rec.task_id = tasks_[row];
    rec.ref_count = load_ref(row);
    rec.deleted = deleted_[row] != 0;
    return rec;
  }

  void copy_from(const KnowledgeStore& o) {
    dim_ = o.dim_;
    ids_ = o.ids_;
    vectors_ = o.vectors_;
    norms_ = o.norms_;
    labels_ = o.labels_;
    sources_ = o.sources_;
    tasks_ = o.tasks_;
    refs_.resize(o.refs_.size());
    for (std::size_t i = 0; i < refs_.size(); ++i) refs_[i] = o.load_ref(i);
    deleted_ = o.deleted_;
    live_ = o.live_;
    next_id_ = o.next_id_;
    vocab_ = o.vocab_;
  }

  void move_from(KnowledgeStore&& o) noexcept {
    dim_ = o.dim_;
    ids_ = std::move(o.ids_);
    vectors_ = std::move(o.vectors_);
    norms_ = std::move(o.norms_);
    labels_ = std::move(o.labels_);
    sources_ = std::move(o.sources_);
    tasks_ = std::move(o.tasks_);
    refs_ = std::move(o.refs_);
    deleted_ = std::move(o.deleted_);
    live_ = o.live_;
    next_id_ = o.next_id_;
    vocab_ = std::move(o.vocab_);
    o.live_ = 0;
    o.ids_.clear();
  }

  std::size_t dim_ = 0;
  std::vector<RecordId> ids_;
  std::vector<float> vectors_;
  std::vector<float> norms_;
  std::vector<std::vector<LabelId>> labels_;
  std::vector<std::string> sources_;
  std::vector<std::optional<TaskId>> tasks_;
  mutable std::vector<std::uint64_t> refs_;
  std::vector<std::uint8_t> deleted_;
  std::size_t live_ = 0;
  RecordId next_id_ = 0;
  LabelVocabulary vocab_;
  mutable std::shared_mutex mu_;
};

/// Shared-locked, row-indexed view of a store. Rows are in insertion order and
/// include tombstones; callers must skip `deleted(row)`.
class KnowledgeStore::Reader {
 public:
  explicit Reader(const KnowledgeStore& store) : store_(&store), lock_(store.mu_) {}

  std::size_t dimension() const noexcept { return store_->dim_; }
  std::size_t rows() const noexcept { return store_->ids_.size(); }
  std::size_t live_count() const noexcept { return store_->live_; }

  std::span<const float> vector(std::size_t row) const noexcept {
    return {store_->vectors_.data() + row * store_->dim_, store_->dim_};
  }
  RecordId id(std::size_t row) const noexcept { return store_->ids_[row]; }
  bool deleted(std::size_t row) const noexcept { return store_->deleted_[row] != 0; }
  const std::vector<LabelId>& labels(std::size_t row) const noexcept {
    return store_->labels_[row];
  }
  std::optional<TaskId> task(std::size_t row) const noexcept { return store_->tasks_[row]; }
  const std::string& source(std::size_t row) const noexcept { return store_->sources_[row]; }
  std::uint64_t ref_count(std::size_t row) const noexcept { return store_->load_ref(row); }
  std::optional<std::size_t> row_of(RecordId id) const { return store_->row_of(id); }
  const LabelVocabulary& vocabulary() const noexcept { return store_->vocab_; }

  void add_reference(std::size_t row) const noexcept {
    std::atomic_ref<std::uint64_t>(store_->refs_[row]).fetch_add(1, std::memory_order_relaxed);
  }

 private:
  const KnowledgeStore* store_;
  std::shared_lock<std::shared_mutex> lock_;
};

inline KnowledgeStore::Reader KnowledgeStore::reader() const { return Reader(*this); }

}  // namespace knnkb

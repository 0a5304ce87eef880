#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "knnkb/distance.hpp"
#include "knnkb/store.hpp"

namespace knnkb {

/// A query feature vector, normalized the same way as ingested records.
struct QueryVector {
  std::vector<float> vector;
  float original_norm = 0.0f;

  static QueryVector from_raw(std::span<const float> raw) {
    auto n = normalize(raw);
    return {std::move(n.unit), n.norm};
  }
};

/// Conjunctive constraints on candidate records. An absent field matches all.
struct SearchFilter {
  std::optional<std::vector<LabelId>> label_ids;  // match if record labels intersect
  std::optional<std::vector<TaskId>> task_ids;
  std::optional<std::vector<RecordId>> exclude_ids;

  bool empty() const noexcept { return !label_ids && !task_ids && !exclude_ids; }

  /// Sorted, deduplicated copy suitable for `matches`.
  SearchFilter canonical() const {
    SearchFilter out = *this;
    auto tidy = [](auto& opt) {
      if (!opt) return;
      std::sort(opt->begin(), opt->end());
      opt->erase(std::unique(opt->begin(), opt->end()), opt->end());
    };
    tidy(out.label_ids);
    tidy(out.task_ids);
    tidy(out.exclude_ids);
    return out;
  }

  // Expects a canonical filter.
  bool matches(RecordId id, std::span<const LabelId> labels,
               std::optional<TaskId> task) const {
    if (exclude_ids && std::binary_search(exclude_ids->begin(), exclude_ids->end(), id)) {
      return false;
    }
    if (task_ids) {
      if (!task || !std::binary_search(task_ids->begin(), task_ids->end(), *task)) return false;
    }
    if (label_ids) {
      bool hit = false;
      for (LabelId label : labels) {
        if (std::binary_search(label_ids->begin(), label_ids->end(), label)) {
          hit = true;
          break;
        }
      }
      if (!hit) return false;
    }
    return true;
  }

  friend bool operator==(const SearchFilter&, const SearchFilter&) = default;
};

struct Neighbor {
  RecordId record_id = 0;
  double distance = 0.0;
  std::size_t rank = 0;  // 1-based
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

struct SearchOptions {
  // 0 picks hardware concurrency. Results never depend on this value.
  unsigned threads = 1;
  // Below this many rows per thread the scan stays single threaded.
  std::size_t min_rows_per_thread = 32768;
};

namespace detail {

struct Candidate {
  double distance;
  std::size_t row;  // row order equals id order
};

inline bool closer(const Candidate& a, const Candidate& b) noexcept {
  return a.distance < b.distance || (a.distance == b.distance && a.row < b.row);
}

// Bounded max-heap keeping the k closest candidates seen so far.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) { heap_.reserve(k); }

  void offer(double distance, std::size_t row) {
    Candidate c{distance, row};
    if (heap_.size() < k_) {
      heap_.push_back(c);
      std::push_heap(heap_.begin(), heap_.end(), closer);
    } else if (closer(c, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), closer);
      heap_.back() = c;
      std::push_heap(heap_.begin(), heap_.end(), closer);
    }
  }

  std::vector<Candidate>& items() noexcept { return heap_; }

 private:
  std::size_t k_;
  std::vector<Candidate> heap_;
};

inline void scan_range(const KnowledgeStore::Reader& reader, std::span<const float> query,
                       const SearchFilter& filter, std::size_t begin, std::size_t end,
                       TopK& top) {
  const bool filtered = !filter.empty();
  for (std::size_t row = begin; row < end; ++row) {
    if (reader.deleted(row)) continue;
    if (filtered && !filter.matches(reader.id(row), reader.labels(row), reader.task(row))) {
      continue;
    }
    top.offer(1.0 - dot(query, reader.vector(row)), row);
  }
}

inline unsigned resolve_threads(unsigned requested) {
  if (requested != 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

}  // namespace detail

/// Exact top-k by linear scan under an existing shared view. Ascending
/// distance, ties by ascending record id. k is clamped to the number of
/// matching live records.
inline std::vector<Neighbor> search_topk(const KnowledgeStore::Reader& reader,
                                         const QueryVector& query, std::size_t k,
                                         const SearchFilter& filter = {},
                                         const SearchOptions& options = {}) {
  if (query.vector.size() != reader.dimension()) {
    fail(ErrorCode::kInvalidArgument,
         "query dimension " + std::to_string(query.vector.size()) + " does not match store " +
             std::to_string(reader.dimension()));
  }
  if (k == 0) fail(ErrorCode::kInvalidArgument, "k must be >= 1");

  const SearchFilter canon = filter.canonical();
  const std::size_t rows = reader.rows();
  const unsigned threads = static_cast<unsigned>(std::max<std::size_t>(
      1, std::min<std::size_t>(detail::resolve_threads(options.threads),
                               rows / std::max<std::size_t>(1, options.min_rows_per_thread))));

  std::vector<detail::Candidate> merged;
  if (threads <= 1) {
    detail::TopK top(k);
    detail::scan_range(reader, query.vector, canon, 0, rows, top);
    merged = std::move(top.items());
  } else {
    std::vector<detail::TopK> partial(threads, detail::TopK(k));
    std::vector<std::jthread> workers;
    workers.reserve(threads);
    const std::size_t chunk = (rows + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = std::min(rows, t * chunk);
      const std::size_t end = std::min(rows, begin + chunk);
      workers.emplace_back([&, t, begin, end] {
        detail::scan_range(reader, query.vector, canon, begin, end, partial[t]);
      });
    }
    workers.clear();
    for (auto& p : partial) merged.insert(merged.end(), p.items().begin(), p.items().end());
  }

  // (distance, row) is a total order, so the merge is partition independent.
  std::sort(merged.begin(), merged.end(), detail::closer);
  if (merged.size() > k) merged.resize(k);

  std::vector<Neighbor> out;
  out.reserve(merged.size());
  for (std::size_t i = 0; i < merged.size(); ++i) {
    out.push_back({reader.id(merged[i].row), merged[i].distance, i + 1});
  }
  return out;
}

inline std::vector<Neighbor> search_topk(const KnowledgeStore& store, const QueryVector& query,
                                         std::size_t k, const SearchFilter& filter = {},
                                         const SearchOptions& options = {}) {
  auto reader = store.reader();
  return search_topk(reader, query, k, filter, options);
}

/// Runs `search_topk` for each query. Queries are spread over worker threads;
/// each individual scan is single threaded.
inline std::vector<std::vector<Neighbor>> batch_search(const KnowledgeStore::Reader& reader,
                                                       std::span<const QueryVector> queries,
                                                       std::size_t k,
                                                       const SearchFilter& filter = {},
                                                       unsigned threads = 0) {
  std::vector<std::vector<Neighbor>> out(queries.size());
  if (queries.empty()) return out;
  for (const auto& q : queries) {
    if (q.vector.size() != reader.dimension()) {
      fail(ErrorCode::kInvalidArgument, "query dimension does not match store");
    }
  }
  if (k == 0) fail(ErrorCode::kInvalidArgument, "k must be >= 1");

  const SearchOptions single{1, 0};
  const unsigned workers_n = static_cast<unsigned>(
      std::min<std::size_t>(detail::resolve_threads(threads), queries.size()));
  if (workers_n <= 1) {
    for (std::size_t i = 0; i < queries.size(); ++i) {
      out[i] = search_topk(reader, queries[i], k, filter, single);
    }
    return out;
  }
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> workers;
    for (unsigned t = 0; t < workers_n; ++t) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < queries.size(); i = next++) {
          out[i] = search_topk(reader, queries[i], k, filter, single);
        }
      });
    }
  }
  return out;
}

inline std::vector<std::vector<Neighbor>> batch_search(const KnowledgeStore& store,
                                                       std::span<const QueryVector> queries,
                                                       std::size_t k,
                                                       const SearchFilter& filter = {},
                                                       unsigned threads = 0) {
  auto reader = store.reader();
  return batch_search(reader, queries, k, filter, threads);
}

}  // namespace knnkb

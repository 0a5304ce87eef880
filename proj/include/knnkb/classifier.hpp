#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "knnkb/audit.hpp"
#include "knnkb/search.hpp"
#include "knnkb/store.hpp"
#include "knnkb/vote.hpp"

namespace knnkb {

struct ClassificationResult {
  std::optional<LabelId> predicted_label_id;  // empty iff abstained
  std::vector<Neighbor> neighbors;
  std::vector<std::vector<LabelId>> neighbor_labels;  // labels at classification time
  VoteTally tally;
  bool abstained = false;
  std::uint64_t audit_entry_id = 0;  // 0 when no log is attached
};

/// Caller-supplied context recorded alongside a classification.
struct QueryContext {
  std::string source;
  std::optional<LabelId> ground_truth_label_id;
};

struct ClassifierOptions {
  VoteMode mode = VoteMode::kCount;
  SearchOptions search;    // single-query scans
  unsigned batch_threads = 0;  // 0 = hardware concurrency
};

struct ExplainedNeighbor {
  AuditNeighbor recorded;
  std::vector<std::string> current_labels;  // empty if the record no longer exists
  bool deleted = false;
  bool resolvable = true;  // false once compaction removed the record
};

struct ExplainedEntry {
  AuditLogEntry entry;
  std::vector<ExplainedNeighbor> neighbors;
};

/// Retrieval plus majority vote over a knowledge store.
///
/// Every classification bumps the reference counter of each returned neighbor
/// and, when a log is attached, appends an audit entry. Search, counter
/// updates and the log append all happen under one shared view of the store,
/// so a concurrent delete is either fully before or fully after the call.
class Classifier {
 public:
  Classifier(KnowledgeStore& store, AuditLog* log, ClassifierOptions options = {})
      : store_(store), log_(log), options_(options) {}

  ClassificationResult classify(const QueryVector& query, std::size_t k,
                                const SearchFilter& filter = {},
                                const QueryContext& context = {}) {
    auto reader = store_.reader();
    auto neighbors = search_topk(reader, query, k, filter, options_.search);
    return finish(reader, std::move(neighbors), k, filter, context);
  }

  /// Element-wise equal to `classify`; audit entries are appended in query order.
  std::vector<ClassificationResult> classify_batch(std::span<const QueryVector> queries,
                                                   std::size_t k,
                                                   const SearchFilter& filter = {},
                                                   std::span<const QueryContext> contexts = {}) {
    if (!contexts.empty() && contexts.size() != queries.size()) {
      fail(ErrorCode::kInvalidArgument, "context count does not match query count");
    }
    auto reader = store_.reader();
    auto all = batch_search(reader, queries, k, filter, options_.batch_threads);
    std::vector<ClassificationResult> out;
    out.reserve(queries.size());
    static const QueryContext kNoContext;
    for (std::size_t i = 0; i < queries.size(); ++i) {
      out.push_back(finish(reader, std::move(all[i]), k, filter,
                           contexts.empty() ? kNoContext : contexts[i]));
    }
    return out;
  }

  ExplainedEntry explain(std::uint64_t entry_id) const {
    if (log_ == nullptr) fail(ErrorCode::kNotFound, "no audit log attached");
    return explain_entry(*log_, store_, entry_id);
  }

  /// Resolves an audit entry's neighbors against the store's current state.
  static ExplainedEntry explain_entry(const AuditLog& log, const KnowledgeStore& store,
                                      std::uint64_t entry_id) {
    auto entry = log.get(entry_id);
    if (!entry) fail(ErrorCode::kNotFound, "no audit entry " + std::to_string(entry_id));
    ExplainedEntry out;
    out.entry = *entry;
    for (const auto& n : entry->neighbors) {
      ExplainedNeighbor en;
      en.recorded = n;
      if (auto rec = store.find(n.record_id)) {
        en.current_labels = store.label_names(rec->labels);
        en.deleted = rec->deleted;
      } else {
        en.deleted = true;
        en.resolvable = false;
      }
      out.neighbors.push_back(std::move(en));
    }
    return out;
  }

  KnowledgeStore& store() noexcept { return store_; }
  AuditLog* log() noexcept { return log_; }
  const ClassifierOptions& options() const noexcept { return options_; }

 private:
  ClassificationResult finish(const KnowledgeStore::Reader& reader,
                              std::vector<Neighbor> neighbors, std::size_t k,
                              const SearchFilter& filter, const QueryContext& context) {
    ClassificationResult result;
    result.neighbor_labels.reserve(neighbors.size());
    std::vector<std::size_t> rows;
    rows.reserve(neighbors.size());
    for (const auto& n : neighbors) {
      const auto row = *reader.row_of(n.record_id);
      rows.push_back(row);
      result.neighbor_labels.push_back(reader.labels(row));
    }
    result.tally = tally_votes(neighbors, result.neighbor_labels, options_.mode);
    result.predicted_label_id = result.tally.winner;
    result.abstained = neighbors.empty();
    for (auto row : rows) reader.add_reference(row);

    if (log_ != nullptr) {
      const auto& vocab = reader.vocabulary();
      AuditLogEntry entry;
      entry.query_source = context.source;
      entry.k = k;
      entry.filter = filter;
      entry.tally = result.tally;
      entry.predicted_label_id = result.predicted_label_id;
      if (result.predicted_label_id) entry.predicted_label = vocab.name(*result.predicted_label_id);
      entry.abstained = result.abstained;
      entry.ground_truth_label_id = context.ground_truth_label_id;
      for (std::size_t i = 0; i < neighbors.size(); ++i) {
        AuditNeighbor an;
        an.record_id = neighbors[i].record_id;
        an.rank = neighbors[i].rank;
        an.distance = neighbors[i].distance;
        an.source = reader.source(rows[i]);
        an.labels = result.neighbor_labels[i];
        for (LabelId l : an.labels) an.label_names.push_back(vocab.name(l));
        entry.neighbors.push_back(std::move(an));
      }
      result.audit_entry_id = log_->append(std::move(entry));
    }
    result.neighbors = std::move(neighbors);
    return result;
  }

  KnowledgeStore& store_;
  AuditLog* log_;
  ClassifierOptions options_;
};

}  // namespace knnkb

#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "knnkb/error.hpp"
#include "knnkb/vote.hpp"

namespace knnkb {

// A neighbor as it looked when the classification happened.
struct AuditNeighbor {
  RecordId record_id = 0;
  std::size_t rank = 0;
  double distance = 0.0;
  std::string source;
  std::vector<LabelId> labels;
  std::vector<std::string> label_names;
  friend bool operator==(const AuditNeighbor&, const AuditNeighbor&) = default;
};

struct AuditLogEntry {
  std::uint64_t entry_id = 0;
  std::int64_t timestamp_ms = 0;
  std::string query_source;
  std::size_t k = 0;
  SearchFilter filter;
  std::vector<AuditNeighbor> neighbors;
  VoteTally tally;
  std::optional<LabelId> predicted_label_id;
  std::string predicted_label;
  bool abstained = false;
  std::optional<LabelId> ground_truth_label_id;
  friend bool operator==(const AuditLogEntry&, const AuditLogEntry&) = default;
};

inline nlohmann::json to_json(const SearchFilter& f) {
  nlohmann::json j = nlohmann::json::object();
  if (f.label_ids) j["label_ids"] = *f.label_ids;
  if (f.task_ids) j["task_ids"] = *f.task_ids;
  if (f.exclude_ids) j["exclude_ids"] = *f.exclude_ids;
  return j;
}

inline SearchFilter filter_from_json(const nlohmann::json& j) {
  SearchFilter f;
  if (j.contains("label_ids")) f.label_ids = j.at("label_ids").get<std::vector<LabelId>>();
  if (j.contains("task_ids")) f.task_ids = j.at("task_ids").get<std::vector<TaskId>>();
  if (j.contains("exclude_ids")) f.exclude_ids = j.at("exclude_ids").get<std::vector<RecordId>>();
  return f;
}

/// One JSON object per entry; the field names here are the exported schema.
inline nlohmann::json to_json(const AuditLogEntry& e) {
  std::map<LabelId, std::string> names;
  nlohmann::json neighbors = nlohmann::json::array();
  for (const auto& n : e.neighbors) {
    for (std::size_t i = 0; i < n.labels.size() && i < n.label_names.size(); ++i) {
      names[n.labels[i]] = n.label_names[i];
    }
    neighbors.push_back({{"rank", n.rank},
                         {"record_id", n.record_id},
                         {"distance", n.distance},
                         {"source", n.source},
                         {"label_ids", n.labels},
                         {"labels", n.label_names}});
  }
  nlohmann::json tally = nlohmann::json::array();
  for (const auto& v : e.tally.counts) {
    tally.push_back({{"label_id", v.label},
                     {"label", names.count(v.label) ? names[v.label] : std::string()},
                     {"votes", v.votes},
                     {"weight", v.weight},
                     {"distance_sum", v.distance_sum},
                     {"best_rank", v.best_rank}});
  }
  nlohmann::json j = {{"entry_id", e.entry_id},
                      {"timestamp_ms", e.timestamp_ms},
                      {"query_source", e.query_source},
                      {"k", e.k},
                      {"filter", to_json(e.filter)},
                      {"neighbors", std::move(neighbors)},
                      {"tally", std::move(tally)},
                      {"tie_broken", e.tally.tie_broken},
                      {"abstained", e.abstained}};
  j["predicted_label_id"] =
      e.predicted_label_id ? nlohmann::json(*e.predicted_label_id) : nlohmann::json(nullptr);
  j["predicted_label"] =
      e.predicted_label_id ? nlohmann::json(e.predicted_label) : nlohmann::json(nullptr);
  j["ground_truth_label_id"] = e.ground_truth_label_id
                                   ? nlohmann::json(*e.ground_truth_label_id)
                                   : nlohmann::json(nullptr);
  return j;
}

inline AuditLogEntry audit_entry_from_json(const nlohmann::json& j) {
  AuditLogEntry e;
  e.entry_id = j.at("entry_id").get<std::uint64_t>();
  e.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
  e.query_source = j.at("query_source").get<std::string>();
  e.k = j.at("k").get<std::size_t>();
  e.filter = filter_from_json(j.at("filter"));
  for (const auto& n : j.at("neighbors")) {
    e.neighbors.push_back({n.at("record_id").get<RecordId>(), n.at("rank").get<std::size_t>(),
                           n.at("distance").get<double>(), n.at("source").get<std::string>(),
                           n.at("label_ids").get<std::vector<LabelId>>(),
                           n.at("labels").get<std::vector<std::string>>()});
  }
  for (const auto& v : j.at("tally")) {
    e.tally.counts.push_back({v.at("label_id").get<LabelId>(), v.at("votes").get<std::size_t>(),
                              v.at("weight").get<double>(), v.at("distance_sum").get<double>(),
                              v.at("best_rank").get<std::size_t>()});
  }
  e.tally.tie_broken = j.at("tie_broken").get<bool>();
  e.abstained = j.at("abstained").get<bool>();
  if (!j.at("predicted_label_id").is_null()) {
    e.predicted_label_id = j.at("predicted_label_id").get<LabelId>();
    e.predicted_label = j.at("predicted_label").get<std::string>();
  }
  e.tally.winner = e.predicted_label_id;
  if (!j.at("ground_truth_label_id").is_null()) {
    e.ground_truth_label_id = j.at("ground_truth_label_id").get<LabelId>();
  }
  return e;
}

/// Append-only log of classifications. Entry ids start at 1 and increase by
/// one per append; their order is the global classification order.
class AuditLog {
 public:
  std::uint64_t append(AuditLogEntry entry) {
    std::lock_guard lock(mu_);
    entry.entry_id = next_id_++;
    if (entry.timestamp_ms == 0) {
      entry.timestamp_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::system_clock::now().time_since_epoch())
                               .count();
    }
    entries_.push_back(std::move(entry));
    return entries_.back().entry_id;
  }

  std::optional<AuditLogEntry> get(std::uint64_t entry_id) const {
    std::lock_guard lock(mu_);
    if (entries_.empty() || entry_id < entries_.front().entry_id) return std::nullopt;
    const auto offset = entry_id - entries_.front().entry_id;
    if (offset >= entries_.size()) return std::nullopt;
    return entries_[offset];
  }

  /// Up to `limit` entries with entry_id >= `from`, in order.
  std::vector<AuditLogEntry> page(std::uint64_t from, std::size_t limit) const {
    std::lock_guard lock(mu_);
    std::vector<AuditLogEntry> out;
    for (const auto& e : entries_) {
      if (out.size() >= limit) break;
      if (e.entry_id >= from) out.push_back(e);
    }
    return out;
  }

  std::vector<AuditLogEntry> entries() const {
    std::lock_guard lock(mu_);
    return {entries_.begin(), entries_.end()};
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

  std::uint64_t next_id() const {
    std::lock_guard lock(mu_);
    return next_id_;
  }

  void write_jsonl(std::ostream& out, std::uint64_t from = 0) const {
    std::lock_guard lock(mu_);
    for (const auto& e : entries_) {
      if (e.entry_id >= from) out << to_json(e).dump() << '\n';
    }
  }

  /// Reloads an exported log. Entry ids must be consecutive.
  static AuditLog read_jsonl(std::istream& in) {
    AuditLog log;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      AuditLogEntry e;
      try {
        e = audit_entry_from_json(nlohmann::json::parse(line));
      } catch (const nlohmann::json::exception& ex) {
        fail(ErrorCode::kParseError, "audit log line " + std::to_string(line_no) + ": " + ex.what());
      }
      if (!log.entries_.empty() && e.entry_id != log.next_id_) {
        fail(ErrorCode::kParseError,
             "audit log line " + std::to_string(line_no) + ": entry ids are not consecutive");
      }
      log.next_id_ = e.entry_id + 1;
      log.entries_.push_back(std::move(e));
    }
    return log;
  }

  AuditLog() = default;
  AuditLog(AuditLog&& other) noexcept {
    std::lock_guard lock(other.mu_);
    entries_ = std::move(other.entries_);
    next_id_ = other.next_id_;
  }
  AuditLog& operator=(AuditLog&& other) noexcept {
    if (this == &other) return *this;
    std::scoped_lock lock(mu_, other.mu_);
    entries_ = std::move(other.entries_);
    next_id_ = other.next_id_;
    return *this;
  }

 private:
  mutable std::mutex mu_;
  std::deque<AuditLogEntry> entries_;
  std::uint64_t next_id_ = 1;
};

}  // namespace knnkb

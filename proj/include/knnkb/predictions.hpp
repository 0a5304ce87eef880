#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "knnkb/classifier.hpp"

namespace knnkb {

/// One line of a prediction CSV. Both the CLI and HTTP clients render through
/// this type so their outputs can be compared byte for byte.
struct PredictionRow {
  std::size_t index = 0;
  std::string source;
  std::string prediction;  // empty when abstained
  bool abstained = false;
  bool tie_broken = false;
  std::vector<std::pair<RecordId, double>> neighbors;
};

inline PredictionRow prediction_row(std::size_t index, const std::string& source,
                                    const ClassificationResult& r,
                                    const KnowledgeStore& store) {
  PredictionRow row;
  row.index = index;
  row.source = source;
  row.abstained = r.abstained;
  row.tie_broken = r.tally.tie_broken;
  if (r.predicted_label_id) row.prediction = store.label_name(*r.predicted_label_id);
  for (const auto& n : r.neighbors) row.neighbors.emplace_back(n.record_id, n.distance);
  return row;
}

/// Header: index,source,prediction,abstained,tie_broken,neighbors
/// `neighbors` is `id:distance` pairs joined by ';' in rank order.
inline std::string predictions_csv(const std::vector<PredictionRow>& rows) {
  std::string out = "index,source,prediction,abstained,tie_broken,neighbors\n";
  char buf[64];
  for (const auto& r : rows) {
    out += std::to_string(r.index) + "," + r.source + "," + r.prediction + "," +
           (r.abstained ? "1" : "0") + "," + (r.tie_broken ? "1" : "0") + ",";
    for (std::size_t i = 0; i < r.neighbors.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%llu:%.9g", i ? ";" : "",
                    static_cast<unsigned long long>(r.neighbors[i].first), r.neighbors[i].second);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

}  // namespace knnkb

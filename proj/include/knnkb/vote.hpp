#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "knnkb/search.hpp"

namespace knnkb {

enum class VoteMode {
  kCount,             // one vote per (neighbor, label) pair
  kDistanceWeighted,  // each vote weighs 1 / (distance + 1e-6)
};

struct LabelVotes {
  LabelId label = 0;
  std::size_t votes = 0;
  double weight = 0.0;
  double distance_sum = 0.0;  // summed in rank order
  std::size_t best_rank = 0;  // rank of the nearest neighbor carrying the label
  friend bool operator==(const LabelVotes&, const LabelVotes&) = default;
};

struct VoteTally {
  std::vector<LabelVotes> counts;  // ascending label id
  std::optional<LabelId> winner;
  bool tie_broken = false;  // more than one label shared the top score
  friend bool operator==(const VoteTally&, const VoteTally&) = default;
};

/// Majority vote over ranked neighbors. `neighbor_labels[i]` is the label set
/// of `neighbors[i]`; a neighbor with m labels casts m votes.
///
/// Ties on the primary score fall through, in order, to the smallest distance
/// sum, the best (smallest) rank, and finally the smallest label id.
inline VoteTally tally_votes(std::span<const Neighbor> neighbors,
                             std::span<const std::vector<LabelId>> neighbor_labels,
                             VoteMode mode = VoteMode::kCount) {
  VoteTally tally;
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    const auto& n = neighbors[i];
    for (LabelId label : neighbor_labels[i]) {
      auto it = std::lower_bound(tally.counts.begin(), tally.counts.end(), label,
                                 [](const LabelVotes& v, LabelId l) { return v.label < l; });
      if (it == tally.counts.end() || it->label != label) {
        it = tally.counts.insert(it, LabelVotes{label, 0, 0.0, 0.0, n.rank});
      }
      it->votes += 1;
      it->weight += 1.0 / (n.distance + 1e-6);
      it->distance_sum += n.distance;
      it->best_rank = std::min(it->best_rank, n.rank);
    }
  }
  if (tally.counts.empty()) return tally;

  auto primary_greater = [mode](const LabelVotes& a, const LabelVotes& b) {
    return mode == VoteMode::kCount ? a.votes > b.votes : a.weight > b.weight;
  };
  auto primary_equal = [mode](const LabelVotes& a, const LabelVotes& b) {
    return mode == VoteMode::kCount ? a.votes == b.votes : a.weight == b.weight;
  };
  auto better = [&](const LabelVotes& a, const LabelVotes& b) {
    if (!primary_equal(a, b)) return primary_greater(a, b);
    if (a.distance_sum != b.distance_sum) return a.distance_sum < b.distance_sum;
    if (a.best_rank != b.best_rank) return a.best_rank < b.best_rank;
    return a.label < b.label;
  };

  const LabelVotes* best = &tally.counts.front();
  for (const auto& v : tally.counts) {
    if (better(v, *best)) best = &v;
  }
  std::size_t at_top = 0;
  for (const auto& v : tally.counts) {
    if (primary_equal(v, *best)) ++at_top;
  }
  tally.winner = best->label;
  tally.tie_broken = at_top > 1;
  return tally;
}

}  // namespace knnkb

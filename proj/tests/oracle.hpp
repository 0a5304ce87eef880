#pragma once

// Reference implementations used only by tests. They read the store through
// its exported state and share no code with the search or vote paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "knnkb/search.hpp"
#include "knnkb/store.hpp"

namespace knnkb::testing {

struct OracleHit {
  RecordId id;
  double distance;
};

// Dot product in the documented summation order: float products widened to
// double, accumulated left to right.
inline double naive_dot(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
  return s;
}

struct OracleFilter {
  std::optional<std::set<LabelId>> labels;
  std::optional<std::set<TaskId>> tasks;
  std::optional<std::set<RecordId>> exclude;
};

// Distance to every matching live record, then a full sort.
inline std::vector<OracleHit> naive_topk(const StoreState& state, const std::vector<float>& unit_query,
                                         std::size_t k, const OracleFilter& filter = {}) {
  std::vector<OracleHit> all;
  for (const auto& rec : state.records) {
    if (rec.deleted) continue;
    if (filter.exclude && filter.exclude->count(rec.id)) continue;
    if (filter.tasks && (!rec.task_id || !filter.tasks->count(*rec.task_id))) continue;
    if (filter.labels) {
      bool any = false;
      for (auto l : rec.labels) any = any || filter.labels->count(l) > 0;
      if (!any) continue;
    }
    all.push_back({rec.id, 1.0 - naive_dot(unit_query, rec.vector)});
  }
  std::sort(all.begin(), all.end(), [](const OracleHit& a, const OracleHit& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.id < b.id;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

struct OracleVote {
  std::optional<LabelId> winner;
  bool tie = false;
  std::map<LabelId, std::size_t> counts;
};

// Brute-force vote: narrow the candidate set one criterion at a time.
inline OracleVote naive_vote(const std::vector<OracleHit>& hits,
                             const std::vector<std::vector<LabelId>>& labels) {
  OracleVote out;
  std::map<LabelId, double> dist_sum;
  std::map<LabelId, std::size_t> best_rank;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    for (auto l : labels[i]) {
      out.counts[l] += 1;
      dist_sum[l] += hits[i].distance;
      if (!best_rank.count(l)) best_rank[l] = i + 1;
    }
  }
  if (out.counts.empty()) return out;

  std::size_t max_votes = 0;
  for (auto& [l, c] : out.counts) max_votes = std::max(max_votes, c);
  std::vector<LabelId> cands;
  for (auto& [l, c] : out.counts) {
    if (c == max_votes) cands.push_back(l);
  }
  out.tie = cands.size() > 1;

  double min_sum = 1e300;
  for (auto l : cands) min_sum = std::min(min_sum, dist_sum[l]);
  std::erase_if(cands, [&](LabelId l) { return dist_sum[l] != min_sum; });

  std::size_t min_rank = SIZE_MAX;
  for (auto l : cands) min_rank = std::min(min_rank, best_rank[l]);
  std::erase_if(cands, [&](LabelId l) { return best_rank[l] != min_rank; });

  out.winner = *std::min_element(cands.begin(), cands.end());
  return out;
}

inline std::vector<float> random_vector(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<float> v(d);
  double n = 0;
  do {
    n = 0;
    for (auto& x : v) {
      x = normal(rng);
      n += double(x) * x;
    }
  } while (n == 0);
  return v;
}

inline std::vector<float> unit(std::vector<float> v) {
  double n = 0;
  for (float x : v) n += double(x) * x;
  n = std::sqrt(n);
  for (auto& x : v) x = float(double(x) / n);
  return v;
}

// s1=[1,0]:A, s2=[0.8,0.6]:A, s3=[0,1]:B, s4=[-0.6,0.8]:B, ids 0..3.
inline KnowledgeStore four_record_fixture() {
  KnowledgeStore s(2);
  s.ingest(std::vector<float>{1.0f, 0.0f}, {"A"}, "s1");
  s.ingest(std::vector<float>{0.8f, 0.6f}, {"A"}, "s2");
  s.ingest(std::vector<float>{0.0f, 1.0f}, {"B"}, "s3");
  s.ingest(std::vector<float>{-0.6f, 0.8f}, {"B"}, "s4");
  return s;
}

inline const std::vector<float> kFixtureQuery{0.6f, 0.8f};

struct SearchCase {
  KnowledgeStore store{1};
  std::vector<std::vector<float>> raws;  // by record id
  std::vector<float> query_raw;
  std::size_t k = 1;
  SearchFilter filter;
  OracleFilter oracle_filter;
};

// Random store with multi-label records, optional tasks, duplicated and
// small-integer vectors (to force exact distance ties) and tombstones.
inline SearchCase random_search_case(std::mt19937_64& rng, std::size_t max_n, std::size_t d,
                                     std::size_t label_pool = 6) {
  SearchCase c;
  c.store = KnowledgeStore(d);
  const std::size_t n = rng() % (max_n + 1);
  const bool integer_grid = rng() % 3 == 0;
  auto draw = [&] {
    if (!integer_grid) return random_vector(rng, d);
    std::vector<float> v(d);
    do {
      for (auto& x : v) x = float(int(rng() % 5) - 2);
    } while (std::all_of(v.begin(), v.end(), [](float x) { return x == 0; }));
    return v;
  };
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> raw = (i > 0 && rng() % 8 == 0) ? c.raws[rng() % i] : draw();
    std::vector<std::string> labels;
    const std::size_t m = 1 + rng() % 3;
    for (std::size_t j = 0; j < m; ++j) labels.push_back("L" + std::to_string(rng() % label_pool));
    std::optional<TaskId> task;
    if (rng() % 4 != 0) task = TaskId(rng() % 4);
    c.store.ingest(raw, labels, "r" + std::to_string(i), task);
    c.raws.push_back(std::move(raw));
  }
  std::vector<RecordId> dead;
  for (std::size_t i = 0; i < n; ++i) {
    if (rng() % 6 == 0) dead.push_back(i);
  }
  c.store.remove(dead);

  c.query_raw = (n > 0 && rng() % 5 == 0) ? c.raws[rng() % n] : draw();
  c.k = 1 + rng() % 25;
  if (rng() % 3 == 0) {
    std::vector<LabelId> ls;
    const auto vocab = c.store.vocabulary().size();
    for (int j = 0; j < 2; ++j) ls.push_back(LabelId(rng() % (vocab + 1)));
    c.filter.label_ids = ls;
    c.oracle_filter.labels = std::set<LabelId>(ls.begin(), ls.end());
  }
  if (rng() % 4 == 0) {
    std::vector<TaskId> ts{TaskId(rng() % 4), TaskId(rng() % 4)};
    c.filter.task_ids = ts;
    c.oracle_filter.tasks = std::set<TaskId>(ts.begin(), ts.end());
  }
  if (rng() % 4 == 0 && n > 0) {
    std::vector<RecordId> ex;
    for (int j = 0; j < 5; ++j) ex.push_back(rng() % n);
    c.filter.exclude_ids = ex;
    c.oracle_filter.exclude = std::set<RecordId>(ex.begin(), ex.end());
  }
  return c;
}

// Compares a search result to the oracle: ids and ranks exactly, distances to `tol`.
inline std::string compare_to_oracle(const std::vector<Neighbor>& got,
                                     const std::vector<OracleHit>& want, double tol) {
  if (got.size() != want.size()) {
    return "size " + std::to_string(got.size()) + " vs " + std::to_string(want.size());
  }
  for (std::size_t i = 0; i < got.size(); ++i) {
    if (got[i].record_id != want[i].id) return "id mismatch at rank " + std::to_string(i + 1);
    if (got[i].rank != i + 1) return "bad rank at " + std::to_string(i + 1);
    if (std::abs(got[i].distance - want[i].distance) > tol) {
      return "distance mismatch at rank " + std::to_string(i + 1);
    }
  }
  return {};
}

}  // namespace knnkb::testing

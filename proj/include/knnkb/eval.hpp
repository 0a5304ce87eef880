#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "knnkb/classifier.hpp"
#include "knnkb/io.hpp"
#include "knnkb/synthetic.hpp"

namespace knnkb {

struct MetricPoint {
  std::size_t step = 0;
  std::string metric;
  double value = 0.0;
  friend bool operator==(const MetricPoint&, const MetricPoint&) = default;
};

struct TimingSample {
  std::string phase;
  double seconds = 0.0;
};

/// Output of every harness run. `series` is what the CSV export contains;
/// `aggregates` must be recomputable from `series`.
struct EvalReport {
  std::string kind;
  std::vector<MetricPoint> series;
  std::map<std::string, double> aggregates;
  std::map<std::string, double> per_class_accuracy;
  std::size_t live_count = 0;
  std::size_t serialized_bytes = 0;
  std::vector<TimingSample> timings;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::optional<LabelId>> predictions;  // evaluate() only, in query order
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

inline double mean(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

inline KnowledgeStore build_store(const LabeledQuerySet& support,
                                  std::span<const std::size_t> rows) {
  KnowledgeStore store(support.dimension);
  for (auto i : rows) {
    const auto& s = support.samples[i];
    store.ingest(s.raw, {s.label}, s.source);
  }
  return store;
}

inline std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

}  // namespace detail

inline KnowledgeStore build_store(const LabeledQuerySet& support) {
  const auto rows = detail::iota_rows(support.samples.size());
  return detail::build_store(support, rows);
}

/// Classifies every query and scores it against its ground-truth label.
/// Unknown ground-truth labels and abstentions count as errors.
inline EvalReport evaluate(KnowledgeStore& store, const LabeledQuerySet& queries, std::size_t k,
                           const SearchFilter& filter = {}, AuditLog* log = nullptr,
                           ClassifierOptions options = {}) {
  if (queries.samples.empty()) fail(ErrorCode::kInvalidArgument, "query set is empty");
  if (queries.dimension != store.dimension()) {
    fail(ErrorCode::kInvalidArgument, "query dimension does not match store");
  }
  EvalReport report;
  report.kind = "accuracy";

  auto t0 = std::chrono::steady_clock::now();
  std::vector<QueryVector> vectors;
  std::vector<QueryContext> contexts;
  vectors.reserve(queries.samples.size());
  for (const auto& q : queries.samples) {
    vectors.push_back(QueryVector::from_raw(q.raw));
    contexts.push_back({q.source, store.label_id(q.label)});
  }
  report.timings.push_back({"normalize", detail::seconds_since(t0)});

  t0 = std::chrono::steady_clock::now();
  Classifier classifier(store, log, options);
  auto results = classifier.classify_batch(vectors, k, filter, contexts);
  report.timings.push_back({"search_and_vote", detail::seconds_since(t0)});

  std::map<std::string, std::pair<std::size_t, std::size_t>> per_class;  // correct, total
  std::size_t correct = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    const auto& truth = contexts[i].ground_truth_label_id;
    const bool hit = !r.abstained && truth && r.predicted_label_id == truth;
    correct += hit ? 1 : 0;
    auto& pc = per_class[queries.samples[i].label];
    pc.first += hit ? 1 : 0;
    pc.second += 1;
    report.predictions.push_back(r.predicted_label_id);
  }
  const double accuracy =
      static_cast<double>(correct) / static_cast<double>(queries.samples.size());
  report.series.push_back({0, "accuracy", accuracy});
  for (const auto& [label, c] : per_class) {
    const double a = static_cast<double>(c.first) / static_cast<double>(c.second);
    report.per_class_accuracy[label] = a;
    report.series.push_back({0, "accuracy/" + label, a});
  }
  report.aggregates["accuracy"] = accuracy;
  report.aggregates["correct"] = static_cast<double>(correct);
  report.aggregates["queries"] = static_cast<double>(queries.samples.size());
  report.live_count = store.live_count();
  report.config = {{"k", k}, {"filter", to_json(filter)}};
  return report;
}

struct CrossValidation {
  std::size_t best_k = 0;
  std::vector<std::pair<std::size_t, double>> accuracy_per_k;
  EvalReport report;
};

/// Seeded shuffle, split `split_ratio` of the rows into a temporary support
/// store and score the remainder (by their assigned labels) for each k.
inline CrossValidation cross_validate_k(const LabeledQuerySet& data,
                                        std::vector<std::size_t> k_candidates,
                                        double split_ratio, std::uint64_t seed) {
  if (k_candidates.empty()) fail(ErrorCode::kInvalidArgument, "no k candidates");
  for (auto k : k_candidates) {
    if (k == 0) fail(ErrorCode::kInvalidArgument, "k candidates must be >= 1");
  }
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "split_ratio must be in (0, 1)");
  }
  const auto n = data.samples.size();
  const auto n_support =
      static_cast<std::size_t>(std::llround(split_ratio * static_cast<double>(n)));
  if (n_support == 0 || n_support >= n) {
    fail(ErrorCode::kInvalidArgument, "split leaves an empty support or query side");
  }

  auto order = detail::iota_rows(n);
  SeededRng rng(seed);
  rng.shuffle(order);
  std::vector<std::size_t> support_rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_support));
  auto store = detail::build_store(data, support_rows);
  LabeledQuerySet held_out{data.dimension, {}};
  for (auto it = order.begin() + static_cast<std::ptrdiff_t>(n_support); it != order.end(); ++it) {
    held_out.samples.push_back(data.samples[*it]);
  }

  CrossValidation cv;
  cv.report.kind = "cv-k";
  double best = -1.0;
  for (auto k : k_candidates) {
    const auto acc = evaluate(store, held_out, k).aggregates.at("accuracy");
    cv.accuracy_per_k.emplace_back(k, acc);
    cv.report.series.push_back({k, "accuracy", acc});
    if (acc > best || (acc == best && k < cv.best_k)) {
      best = acc;
      cv.best_k = k;
    }
  }
  cv.report.aggregates["best_k"] = static_cast<double>(cv.best_k);
  cv.report.aggregates["best_accuracy"] = best;
  cv.report.live_count = store.live_count();
  cv.report.config = {{"k_candidates", k_candidates}, {"split_ratio", split_ratio}, {"seed", seed}};
  return cv;
}

enum class IncrementalMode { kTask, kClass };

struct IncrementalProtocol {
  IncrementalMode mode = IncrementalMode::kTask;
  std::vector<std::vector<std::string>> groups;  // ordered, disjoint class groups
};

/// Splits `classes` into `steps` consecutive groups of (near) equal size.
inline IncrementalProtocol split_protocol(const std::vector<std::string>& classes,
                                          std::size_t steps, IncrementalMode mode) {
  if (steps == 0 || steps > classes.size()) {
    fail(ErrorCode::kInvalidArgument, "steps must be in [1, number of classes]");
  }
  IncrementalProtocol p;
  p.mode = mode;
  p.groups.resize(steps);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    p.groups[i * steps / classes.size()].push_back(classes[i]);
  }
  return p;
}

struct IncrementalRun {
  EvalReport report;
  // Task mode: predictions[t][j] for tasks j <= t. Class mode: predictions[t][0]
  // over every query of the classes seen up to step t.
  std::vector<std::vector<std::vector<std::optional<LabelId>>>> predictions;
};

/// Replays a class-incremental stream. Support rows are ingested at the step
/// of their assigned label's group; queries are evaluated by true label group.
inline IncrementalRun run_incremental(const IncrementalProtocol& protocol,
                                      const LabeledQuerySet& support,
                                      const LabeledQuerySet& queries, std::size_t k) {
  if (protocol.groups.empty()) fail(ErrorCode::kInvalidArgument, "protocol has no groups");
  std::map<std::string, std::size_t> group_of;
  for (std::size_t g = 0; g < protocol.groups.size(); ++g) {
    if (protocol.groups[g].empty()) fail(ErrorCode::kInvalidArgument, "empty class group");
    for (const auto& c : protocol.groups[g]) {
      if (!group_of.emplace(c, g).second) {
        fail(ErrorCode::kInvalidArgument, "class '" + c + "' appears in two groups");
      }
    }
  }
  std::set<std::string> seen_labels;
  for (const auto& s : support.samples) seen_labels.insert(s.label);
  for (const auto& s : queries.samples) seen_labels.insert(s.true_label);
  for (const auto& l : seen_labels) {
    if (!group_of.contains(l)) {
      fail(ErrorCode::kInvalidArgument, "class '" + l + "' is not covered by the protocol");
    }
  }

  const auto steps = protocol.groups.size();
  std::vector<std::vector<std::size_t>> support_by_step(steps);
  for (std::size_t i = 0; i < support.samples.size(); ++i) {
    support_by_step[group_of.at(support.samples[i].label)].push_back(i);
  }
  std::vector<LabeledQuerySet> queries_by_group(steps, LabeledQuerySet{queries.dimension, {}});
  for (const auto& q : queries.samples) {
    auto copy = q;
    copy.label = q.true_label;
    queries_by_group[group_of.at(q.true_label)].samples.push_back(std::move(copy));
  }

  IncrementalRun run;
  auto& report = run.report;
  const bool task_mode = protocol.mode == IncrementalMode::kTask;
  report.kind = task_mode ? "incremental-task" : "incremental-class";
  KnowledgeStore store(support.dimension);
  std::vector<double> step_values;

  for (std::size_t t = 0; t < steps; ++t) {
    const auto t0 = std::chrono::steady_clock::now();
    for (auto i : support_by_step[t]) {
      const auto& s = support.samples[i];
      store.ingest(s.raw, {s.label}, s.source, static_cast<TaskId>(t));
    }
    report.timings.push_back({"ingest/step_" + std::to_string(t + 1), detail::seconds_since(t0)});

    std::vector<std::vector<std::optional<LabelId>>> step_predictions;
    if (task_mode) {
      std::vector<double> task_acc;
      for (std::size_t j = 0; j <= t; ++j) {
        if (queries_by_group[j].samples.empty()) continue;
        SearchFilter filter;
        filter.label_ids.emplace();
        for (const auto& c : protocol.groups[j]) {
          if (auto id = store.label_id(c)) filter.label_ids->push_back(*id);
        }
        auto r = evaluate(store, queries_by_group[j], k, filter);
        const double acc = r.aggregates.at("accuracy");
        task_acc.push_back(acc);
        report.series.push_back({t + 1, "task_accuracy/task_" + std::to_string(j + 1), acc});
        step_predictions.push_back(std::move(r.predictions));
      }
      const double avg = detail::mean(task_acc);
      report.series.push_back({t + 1, "task_average", avg});
      step_values.push_back(avg);
    } else {
      LabeledQuerySet seen{queries.dimension, {}};
      for (std::size_t j = 0; j <= t; ++j) {
        seen.samples.insert(seen.samples.end(), queries_by_group[j].samples.begin(),
                            queries_by_group[j].samples.end());
      }
      double acc = 0.0;
      if (!seen.samples.empty()) {
        auto r = evaluate(store, seen, k);
        acc = r.aggregates.at("accuracy");
        step_predictions.push_back(std::move(r.predictions));
      }
      report.series.push_back({t + 1, "class_accuracy", acc});
      step_values.push_back(acc);
    }
    run.predictions.push_back(std::move(step_predictions));
  }

  if (task_mode) {
    report.aggregates["task_average_final"] = step_values.back();
    report.aggregates["task_average_over_steps"] = detail::mean(step_values);
  } else {
    report.aggregates["class_step_average"] = detail::mean(step_values);
    report.aggregates["final_accuracy"] = step_values.back();
  }
  report.live_count = store.live_count();
  report.serialized_bytes = encode_snapshot(store).size();
  report.config = {{"k", k}, {"steps", steps}, {"mode", task_mode ? "task" : "class"}};
  return run;
}

struct EliminationResult {
  EvalReport before;
  EvalReport after;
  double delta = 0.0;
  std::size_t removed = 0;
};

/// Evaluates, tombstones `noisy_ids`, and evaluates again on the same store.
inline EliminationResult run_elimination_experiment(KnowledgeStore& store,
                                                    std::span<const RecordId> noisy_ids,
                                                    const LabeledQuerySet& queries,
                                                    std::size_t k) {
  EliminationResult out;
  out.before = evaluate(store, queries, k);
  out.removed = store.remove(noisy_ids);
  out.after = evaluate(store, queries, k);
  out.delta = out.after.aggregates.at("accuracy") - out.before.aggregates.at("accuracy");
  return out;
}

/// Builds a store from `support` and removes the rows listed in `noisy_rows`.
inline EliminationResult run_elimination_experiment(const LabeledQuerySet& support,
                                                    std::span<const std::size_t> noisy_rows,
                                                    const LabeledQuerySet& queries,
                                                    std::size_t k) {
  auto store = build_store(support);
  const auto ids = store.live_ids();
  std::vector<RecordId> noisy;
  for (auto row : noisy_rows) {
    if (row >= ids.size()) fail(ErrorCode::kInvalidArgument, "noisy row index out of range");
    noisy.push_back(ids[row]);
  }
  return run_elimination_experiment(store, noisy, queries, k);
}

inline EvalReport elimination_report(const EliminationResult& r) {
  EvalReport report;
  report.kind = "eliminate";
  const double before = r.before.aggregates.at("accuracy");
  const double after = r.after.aggregates.at("accuracy");
  report.series.push_back({0, "accuracy_before", before});
  report.series.push_back({1, "accuracy_after", after});
  report.aggregates["accuracy_before"] = before;
  report.aggregates["accuracy_after"] = after;
  report.aggregates["delta"] = after - before;
  report.aggregates["removed"] = static_cast<double>(r.removed);
  report.live_count = r.after.live_count;
  report.config = r.after.config;
  return report;
}

/// Accuracy against a seeded subsample of the support set per fraction.
inline EvalReport accuracy_vs_store_size(const LabeledQuerySet& support,
                                         const LabeledQuerySet& queries,
                                         const std::vector<double>& fractions, std::size_t k,
                                         std::uint64_t seed) {
  auto order = detail::iota_rows(support.samples.size());
  SeededRng rng(seed);
  rng.shuffle(order);
  EvalReport report;
  report.kind = "accuracy-vs-size";
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double f = fractions[i];
    if (!(f > 0.0 && f <= 1.0)) fail(ErrorCode::kInvalidArgument, "fractions must be in (0, 1]");
    const auto n = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(f * static_cast<double>(order.size()))));
    std::vector<std::size_t> rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
    std::sort(rows.begin(), rows.end());
    auto store = detail::build_store(support, rows);
    const auto acc = evaluate(store, queries, k).aggregates.at("accuracy");
    report.series.push_back({i, "fraction", f});
    report.series.push_back({i, "support_size", static_cast<double>(n)});
    report.series.push_back({i, "serialized_bytes", static_cast<double>(encode_snapshot(store).size())});
    report.series.push_back({i, "accuracy", acc});
  }
  report.config = {{"k", k}, {"fractions", fractions}, {"seed", seed}};
  return report;
}

struct ScanTiming {
  std::size_t n = 0;
  double median_seconds = 0.0;
  std::optional<double> ratio_to_previous;
};

/// Median wall time of one exact top-k scan over stores of random unit
/// vectors. Sizes are processed in ascending order, growing one store.
inline std::vector<ScanTiming> benchmark_distance_scan(std::vector<std::size_t> sizes,
                                                       std::size_t dimension,
                                                       std::size_t repetitions,
                                                       std::uint64_t seed = 1,
                                                       std::size_t k = 10,
                                                       unsigned threads = 1) {
  if (sizes.empty()) fail(ErrorCode::kInvalidArgument, "no sizes given");
  for (auto n : sizes) {
    if (n == 0) fail(ErrorCode::kInvalidArgument, "sizes must be positive");
  }
  if (repetitions == 0) fail(ErrorCode::kInvalidArgument, "repetitions must be >= 1");
  std::sort(sizes.begin(), sizes.end());
  SeededRng rng(seed);
  auto random_vector = [&] {
    std::vector<float> v(dimension);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
  };
  std::vector<QueryVector> queries;
  for (std::size_t r = 0; r < repetitions; ++r) queries.push_back(QueryVector::from_raw(random_vector()));

  KnowledgeStore store(dimension);
  const std::vector<std::string> label{"random"};
  std::vector<ScanTiming> out;
  SearchOptions options;
  options.threads = threads;
  for (auto n : sizes) {
    while (store.total_count() < n) store.ingest(random_vector(), label, {});
    search_topk(store, queries.front(), k, {}, options);  // warm-up
    std::vector<double> samples;
    for (const auto& q : queries) {
      const auto t0 = std::chrono::steady_clock::now();
      auto hits = search_topk(store, q, k, {}, options);
      samples.push_back(detail::seconds_since(t0));
      if (hits.empty()) fail(ErrorCode::kInvalidArgument, "benchmark store is empty");
    }
    std::sort(samples.begin(), samples.end());
    const auto m = samples.size();
    const double median = m % 2 ? samples[m / 2] : 0.5 * (samples[m / 2 - 1] + samples[m / 2]);
    ScanTiming t{n, median, std::nullopt};
    if (!out.empty()) t.ratio_to_previous = median / out.back().median_seconds;
    out.push_back(t);
  }
  return out;
}

inline EvalReport benchmark_report(const std::vector<ScanTiming>& timings, std::size_t dimension,
                                   std::size_t repetitions) {
  EvalReport report;
  report.kind = "bench";
  for (const auto& t : timings) {
    report.series.push_back({t.n, "median_seconds", t.median_seconds});
    if (t.ratio_to_previous) report.series.push_back({t.n, "ratio", *t.ratio_to_previous});
    report.timings.push_back({"scan/n=" + std::to_string(t.n), t.median_seconds});
  }
  report.config = {{"dimension", dimension}, {"repetitions", repetitions}};
  return report;
}

// ---------------------------------------------------------------------------
// Report export

/// Plot-ready CSV with the header `step,metric,value`.
inline std::string report_csv(const EvalReport& report) {
  std::string out = "step,metric,value\n";
  char buf[64];
  for (const auto& p : report.series) {
    std::snprintf(buf, sizeof buf, "%.17g", p.value);
    out += std::to_string(p.step) + "," + p.metric + "," + buf + "\n";
  }
  return out;
}

inline nlohmann::json report_json(const EvalReport& report) {
  nlohmann::json series = nlohmann::json::array();
  for (const auto& p : report.series) {
    series.push_back({{"step", p.step}, {"metric", p.metric}, {"value", p.value}});
  }
  nlohmann::json timings = nlohmann::json::array();
  for (const auto& t : report.timings) timings.push_back({{"phase", t.phase}, {"seconds", t.seconds}});
  return {{"kind", report.kind},
          {"series", std::move(series)},
          {"aggregates", report.aggregates},
          {"per_class_accuracy", report.per_class_accuracy},
          {"live_count", report.live_count},
          {"serialized_bytes", report.serialized_bytes},
          {"timings", std::move(timings)},
          {"config", report.config}};
}

}  // namespace knnkb

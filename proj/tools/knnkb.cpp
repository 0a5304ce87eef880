// knnkb: command line front end for the retrieval classifier.
//
// Every failure prints one line `error: <code>: <message>` to stderr and exits
// nonzero (1 for runtime errors, 2 for usage errors).

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "knnkb/classifier.hpp"
#include "knnkb/eval.hpp"
#include "knnkb/io.hpp"
#include "knnkb/predictions.hpp"
#include "knnkb/service.hpp"

namespace fs = std::filesystem;
using namespace knnkb;

namespace {

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIoError, "cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) fail(ErrorCode::kIoError, "write failed for '" + path.string() + "'");
}

fs::path default_audit_path(const fs::path& store) {
  auto p = store;
  p += ".audit.jsonl";
  return p;
}

AuditLog load_audit(const fs::path& path) {
  if (!fs::exists(path)) return {};
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open '" + path.string() + "'");
  return AuditLog::read_jsonl(in);
}

void append_audit(const AuditLog& log, const fs::path& path, std::uint64_t from) {
  std::ofstream out(path, std::ios::app);
  if (!out) fail(ErrorCode::kIoError, "cannot open '" + path.string() + "' for appending");
  log.write_jsonl(out, from);
  if (!out) fail(ErrorCode::kIoError, "write failed for '" + path.string() + "'");
}

SearchFilter label_filter(const KnowledgeStore& store, const std::string& labels) {
  SearchFilter filter;
  if (labels.empty()) return filter;
  filter.label_ids.emplace();
  for (const auto& name : split_csv(labels)) {
    if (auto id = store.label_id(name)) filter.label_ids->push_back(*id);
  }
  return filter;
}

LabeledQuerySet labeled_queries(const fs::path& path, std::size_t dimension) {
  LabeledQuerySet set{dimension, {}};
  for (auto& r : read_features_any(path)) {
    if (r.labels.empty()) fail(ErrorCode::kInvalidArgument, "query '" + r.source + "' has no label");
    set.samples.push_back({std::move(r.raw), r.labels.front(), r.source, r.labels.front()});
  }
  return set;
}

struct SynthOptions {
  std::size_t classes = 10;
  std::size_t per_class = 200;
  std::size_t dim = 64;
  double spread = 0.35;
  double noise = 0.0;
  std::uint64_t seed = 7;
  double imbalance = 0.0;

  void add_to(CLI::App* app) {
    app->add_option("--classes", classes, "Synthetic: number of classes")->capture_default_str();
    app->add_option("--per-class", per_class, "Synthetic: samples per class")->capture_default_str();
    app->add_option("--dim", dim, "Synthetic: feature dimension")->capture_default_str();
    app->add_option("--spread", spread, "Synthetic: per-coordinate Gaussian scale")->capture_default_str();
    app->add_option("--noise", noise, "Synthetic: support label noise rate")->capture_default_str();
    app->add_option("--seed", seed, "Synthetic: RNG seed")->capture_default_str();
    app->add_option("--imbalance", imbalance, "Synthetic: class size decay in [0,1)")->capture_default_str();
  }

  SyntheticSpec spec() const {
    return {classes, per_class, dim, spread, noise, seed, imbalance};
  }
};

struct ReportOutput {
  std::string csv;
  std::string json;

  void add_to(CLI::App* app) {
    app->add_option("--out", csv, "Write the report as step,metric,value CSV");
    app->add_option("--report", json, "Write the full report as JSON");
  }

  void emit(const EvalReport& report) const {
    for (const auto& [name, value] : report.aggregates) {
      std::cout << name << " " << format_double(value) << "\n";
    }
    if (!csv.empty()) write_text(csv, report_csv(report));
    if (!json.empty()) write_text(json, report_json(report).dump(2) + "\n");
  }
};

httplib::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server != nullptr) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exact kNN retrieval classifier over an external knowledge store"};
  app.require_subcommand(1);
  std::function<void()> action;

  // ---- store -------------------------------------------------------------
  auto* store_cmd = app.add_subcommand("store", "Create, modify and inspect store snapshots");
  store_cmd->require_subcommand(1);

  std::size_t init_dim = 0;
  std::string init_out;
  auto* init = store_cmd->add_subcommand("init", "Create an empty snapshot");
  init->add_option("--dim", init_dim, "Feature dimension")->required();
  init->add_option("--out", init_out, "Snapshot path")->required();
  init->callback([&] {
    action = [&] {
      KnowledgeStore store(init_dim);
      const auto bytes = save_store(store, init_out);
      std::cout << "created " << init_out << " dimension " << init_dim << " bytes " << bytes << "\n";
    };
  });

  std::string store_path, features_path;
  std::optional<TaskId> ingest_task;
  auto* ingest = store_cmd->add_subcommand("ingest", "Ingest a feature file (binary or text)");
  ingest->add_option("--store", store_path, "Snapshot path")->required();
  ingest->add_option("--features", features_path, "Feature file")->required();
  ingest->add_option("--task", ingest_task, "Task id assigned to every ingested record");
  ingest->callback([&] {
    action = [&] {
      auto store = load_store(store_path);
      const auto records = read_features_any(features_path);
      const auto ids = ingest_records(store, records, ingest_task);
      save_store(store, store_path);
      std::cout << "ingested " << ids.size() << " live " << store.live_count() << " total "
                << store.total_count() << "\n";
    };
  });

  std::string delete_ids_file, delete_label;
  auto* del = store_cmd->add_subcommand("delete", "Tombstone records by id list or by label");
  del->add_option("--store", store_path, "Snapshot path")->required();
  auto* ids_opt = del->add_option("--ids", delete_ids_file, "File of whitespace-separated record ids");
  auto* label_opt = del->add_option("--label", delete_label, "Delete every record carrying this label");
  ids_opt->excludes(label_opt);
  del->callback([&] {
    action = [&] {
      if (delete_ids_file.empty() && delete_label.empty()) {
        fail(ErrorCode::kInvalidArgument, "one of --ids or --label is required");
      }
      auto store = load_store(store_path);
      std::size_t removed = 0;
      if (!delete_ids_file.empty()) {
        std::ifstream in(delete_ids_file);
        if (!in) fail(ErrorCode::kIoError, "cannot open '" + delete_ids_file + "'");
        std::vector<RecordId> ids;
        std::string token;
        while (in >> token) {
          try {
            std::size_t used = 0;
            ids.push_back(std::stoull(token, &used));
            if (used != token.size()) throw std::invalid_argument(token);
          } catch (const std::exception&) {
            fail(ErrorCode::kParseError, "bad record id '" + token + "'");
          }
        }
        removed = store.remove(ids);
      } else {
        removed = store.remove_label(delete_label);
      }
      save_store(store, store_path);
      std::cout << "deleted " << removed << " live " << store.live_count() << "\n";
    };
  });

  RecordId relabel_id = 0;
  std::string relabel_labels;
  auto* relabel = store_cmd->add_subcommand("relabel", "Replace one record's labels");
  relabel->add_option("--store", store_path, "Snapshot path")->required();
  relabel->add_option("--id", relabel_id, "Record id")->required();
  relabel->add_option("--labels", relabel_labels, "Comma-separated label names")->required();
  relabel->callback([&] {
    action = [&] {
      auto store = load_store(store_path);
      const auto previous = store.relabel(relabel_id, split_csv(relabel_labels));
      save_store(store, store_path);
      std::cout << "relabeled " << relabel_id << " previous";
      for (const auto& p : previous) std::cout << " " << p;
      std::cout << "\n";
    };
  });

  std::string refs_order;
  std::size_t refs_top = 10;
  auto* stats = store_cmd->add_subcommand("stats", "Print counts, size and reference statistics as JSON");
  stats->add_option("--store", store_path, "Snapshot path")->required();
  stats->add_option("--refs", refs_order, "Include reference stats: most|least")
      ->check(CLI::IsMember({"most", "least"}));
  stats->add_option("--top", refs_top, "Number of reference stats to list")->capture_default_str();
  stats->callback([&] {
    action = [&] {
      const auto store = load_store(store_path);
      nlohmann::json j = {{"dimension", store.dimension()},
                          {"live_count", store.live_count()},
                          {"total_count", store.total_count()},
                          {"labels", store.vocabulary().size()},
                          {"snapshot_bytes", fs::file_size(store_path)}};
      if (!refs_order.empty()) {
        nlohmann::json refs = nlohmann::json::array();
        for (const auto& s : store.reference_stats(
                 refs_top, refs_order == "least" ? RefOrder::kLeast : RefOrder::kMost)) {
          refs.push_back({{"id", s.id}, {"ref_count", s.ref_count}});
        }
        j["refs"] = std::move(refs);
      }
      std::cout << j.dump(2) << "\n";
    };
  });

  std::uint64_t prune_threshold = 0;
  auto* prune = store_cmd->add_subcommand("prune", "Tombstone records referenced at most THRESHOLD times");
  prune->add_option("--store", store_path, "Snapshot path")->required();
  prune->add_option("--threshold", prune_threshold, "Reference count threshold")->required();
  prune->callback([&] {
    action = [&] {
      auto store = load_store(store_path);
      const auto removed = store.prune_rarely_referenced(prune_threshold);
      save_store(store, store_path);
      std::cout << "deleted " << removed << " live " << store.live_count() << "\n";
    };
  });

  auto* compact = store_cmd->add_subcommand("compact", "Rewrite the snapshot without tombstones");
  compact->add_option("--store", store_path, "Snapshot path")->required();
  compact->callback([&] {
    action = [&] {
      auto store = load_store(store_path);
      const auto dropped = store.compact();
      save_store(store, store_path);
      std::cout << "dropped " << dropped << " total " << store.total_count() << "\n";
    };
  });

  // ---- classify ----------------------------------------------------------
  std::string queries_path, filter_labels, classify_out, audit_path;
  std::size_t k = 10;
  bool no_save = false;
  auto* classify = app.add_subcommand("classify", "Classify query vectors and log audit entries");
  classify->add_option("--store", store_path, "Snapshot path")->required();
  classify->add_option("--queries", queries_path, "Query feature file (binary or text)")->required();
  classify->add_option("--k", k, "Number of neighbors")->capture_default_str()->check(CLI::PositiveNumber);
  classify->add_option("--filter-labels", filter_labels, "Restrict search to these labels (comma-separated)");
  classify->add_option("--out", classify_out, "Prediction CSV path (default: stdout)");
  classify->add_option("--audit", audit_path, "Audit log path (default: STORE.audit.jsonl)");
  classify->add_flag("--no-save", no_save, "Do not write updated reference counts back");
  classify->callback([&] {
    action = [&] {
      auto store = load_store(store_path);
      const fs::path audit = audit_path.empty() ? default_audit_path(store_path) : fs::path(audit_path);
      auto log = load_audit(audit);
      const auto first_new = log.next_id();
      const auto records = read_features_any(queries_path, /*allow_unlabeled=*/true);
      std::vector<QueryVector> queries;
      std::vector<QueryContext> contexts;
      for (const auto& r : records) {
        queries.push_back(QueryVector::from_raw(r.raw));
        QueryContext ctx{r.source, std::nullopt};
        if (!r.labels.empty()) ctx.ground_truth_label_id = store.label_id(r.labels.front());
        contexts.push_back(std::move(ctx));
      }
      Classifier classifier(store, &log);
      const auto results = classifier.classify_batch(queries, k, label_filter(store, filter_labels), contexts);
      std::vector<PredictionRow> rows;
      for (std::size_t i = 0; i < results.size(); ++i) {
        rows.push_back(prediction_row(i, records[i].source, results[i], store));
      }
      const auto csv = predictions_csv(rows);
      if (classify_out.empty()) {
        std::cout << csv;
      } else {
        write_text(classify_out, csv);
        std::cout << "classified " << results.size() << "\n";
      }
      append_audit(log, audit, first_new);
      if (!no_save) save_store(store, store_path);
    };
  });

  // ---- audit -------------------------------------------------------------
  std::uint64_t explain_entry = 0;
  auto* audit_cmd = app.add_subcommand("audit", "Inspect the audit log");
  audit_cmd->require_subcommand(1);
  auto* explain = audit_cmd->add_subcommand("explain", "Resolve one entry's neighbors against the store");
  explain->add_option("--store", store_path, "Snapshot path")->required();
  explain->add_option("--audit", audit_path, "Audit log path (default: STORE.audit.jsonl)");
  explain->add_option("--entry", explain_entry, "Entry id")->required();
  explain->callback([&] {
    action = [&] {
      const auto store = load_store(store_path);
      const auto log = load_audit(audit_path.empty() ? default_audit_path(store_path) : fs::path(audit_path));
      const auto e = Classifier::explain_entry(log, store, explain_entry);
      nlohmann::json neighbors = nlohmann::json::array();
      for (const auto& n : e.neighbors) {
        neighbors.push_back({{"record_id", n.recorded.record_id},
                             {"rank", n.recorded.rank},
                             {"distance", n.recorded.distance},
                             {"source", n.recorded.source},
                             {"labels_at_classification", n.recorded.label_names},
                             {"current_labels", n.current_labels},
                             {"deleted", n.deleted}});
      }
      std::cout << nlohmann::json{{"entry", to_json(e.entry)}, {"neighbors", neighbors}}.dump(2) << "\n";
    };
  });

  // ---- eval --------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Run evaluation procedures");
  eval->require_subcommand(1);
  ReportOutput output;

  SynthOptions acc_synth;
  std::string acc_store, acc_queries;
  auto* accuracy = eval->add_subcommand("accuracy", "Accuracy of a store on labeled queries");
  acc_synth.add_to(accuracy);
  output.add_to(accuracy);
  accuracy->add_option("--store", acc_store, "Snapshot path (otherwise synthetic data)");
  accuracy->add_option("--queries", acc_queries, "Labeled query feature file");
  accuracy->add_option("--k", k, "Number of neighbors")->capture_default_str()->check(CLI::PositiveNumber);
  accuracy->add_option("--filter-labels", filter_labels, "Restrict search to these labels");
  accuracy->callback([&] {
    action = [&] {
      if (acc_store.empty() != acc_queries.empty()) {
        fail(ErrorCode::kInvalidArgument, "--store and --queries go together");
      }
      if (!acc_store.empty()) {
        auto store = load_store(acc_store);
        const auto queries = labeled_queries(acc_queries, store.dimension());
        output.emit(evaluate(store, queries, k, label_filter(store, filter_labels)));
      } else {
        const auto data = generate_synthetic(acc_synth.spec());
        auto store = build_store(data.support);
        output.emit(evaluate(store, data.query, k, label_filter(store, filter_labels)));
      }
    };
  });

  SynthOptions cv_synth;
  cv_synth.noise = 0.2;
  std::string cv_features, cv_candidates = "1,3,5,10,20,50";
  double cv_split = 0.9;
  std::optional<std::uint64_t> cv_seed;
  auto* cv = eval->add_subcommand("cv-k", "Select k by a seeded support/query split");
  cv_synth.add_to(cv);
  output.add_to(cv);
  cv->add_option("--features", cv_features, "Labeled feature file (otherwise synthetic support set)");
  cv->add_option("--k-candidates", cv_candidates, "Comma-separated k values")->capture_default_str();
  cv->add_option("--split", cv_split, "Support fraction")->capture_default_str();
  cv->add_option("--cv-seed", cv_seed, "Split seed (default: --seed)");
  cv->callback([&] {
    action = [&] {
      LabeledQuerySet data;
      if (!cv_features.empty()) {
        const auto records = read_features_any(cv_features);
        if (records.empty()) fail(ErrorCode::kInvalidArgument, "feature file is empty");
        data = labeled_queries(cv_features, records.front().raw.size());
      } else {
        data = generate_synthetic(cv_synth.spec()).support;
      }
      std::vector<std::size_t> ks;
      for (const auto& s : split_csv(cv_candidates)) ks.push_back(std::stoull(s));
      output.emit(cross_validate_k(data, ks, cv_split, cv_seed.value_or(cv_synth.seed)).report);
    };
  });

  SynthOptions inc_synth;
  inc_synth.per_class = 50;
  std::string inc_mode = "task";
  std::size_t inc_steps = 20;
  std::size_t inc_classes_per_step = 5;
  auto* incremental = eval->add_subcommand("incremental", "Task- or class-incremental protocol");
  inc_synth.add_to(incremental);
  output.add_to(incremental);
  incremental->add_option("--mode", inc_mode, "task|class")->check(CLI::IsMember({"task", "class"}))->capture_default_str();
  incremental->add_option("--steps", inc_steps, "Number of class groups")->capture_default_str();
  incremental->add_option("--classes-per-step", inc_classes_per_step,
                          "Classes per group when --classes is not given")->capture_default_str();
  incremental->add_option("--k", k, "Number of neighbors")->capture_default_str()->check(CLI::PositiveNumber);
  incremental->callback([&] {
    action = [&] {
      auto spec = inc_synth.spec();
      if (incremental->count("--classes") == 0) spec.num_classes = inc_steps * inc_classes_per_step;
      const auto data = generate_synthetic(spec);
      const auto protocol = split_protocol(
          data.class_names, inc_steps, inc_mode == "task" ? IncrementalMode::kTask : IncrementalMode::kClass);
      output.emit(run_incremental(protocol, data.support, data.query, k).report);
    };
  });

  SynthOptions elim_synth;
  elim_synth.noise = 0.2;
  std::string elim_store, elim_queries, elim_ids;
  auto* eliminate = eval->add_subcommand("eliminate", "Accuracy before and after deleting mislabeled rows");
  elim_synth.add_to(eliminate);
  output.add_to(eliminate);
  eliminate->add_option("--store", elim_store, "Snapshot path (otherwise synthetic data)");
  eliminate->add_option("--queries", elim_queries, "Labeled query feature file");
  eliminate->add_option("--ids", elim_ids, "File of record ids to eliminate");
  eliminate->add_option("--k", k, "Number of neighbors")->capture_default_str()->check(CLI::PositiveNumber);
  eliminate->callback([&] {
    action = [&] {
      if (!elim_store.empty()) {
        if (elim_queries.empty() || elim_ids.empty()) {
          fail(ErrorCode::kInvalidArgument, "--store needs --queries and --ids");
        }
        auto store = load_store(elim_store);
        std::ifstream in(elim_ids);
        if (!in) fail(ErrorCode::kIoError, "cannot open '" + elim_ids + "'");
        std::vector<RecordId> ids;
        for (RecordId id; in >> id;) ids.push_back(id);
        const auto queries = labeled_queries(elim_queries, store.dimension());
        output.emit(elimination_report(run_elimination_experiment(store, ids, queries, k)));
      } else {
        const auto data = generate_synthetic(elim_synth.spec());
        output.emit(elimination_report(
            run_elimination_experiment(data.support, data.noisy_support, data.query, k)));
      }
    };
  });

  SynthOptions size_synth;
  std::string size_fractions = "0.01,0.1,1";
  auto* size_curve = eval->add_subcommand("size", "Accuracy versus number of stored records");
  size_synth.add_to(size_curve);
  output.add_to(size_curve);
  size_curve->add_option("--fractions", size_fractions, "Comma-separated support fractions")->capture_default_str();
  size_curve->add_option("--k", k, "Number of neighbors")->capture_default_str()->check(CLI::PositiveNumber);
  size_curve->callback([&] {
    action = [&] {
      const auto data = generate_synthetic(size_synth.spec());
      std::vector<double> fractions;
      for (const auto& s : split_csv(size_fractions)) fractions.push_back(std::stod(s));
      output.emit(accuracy_vs_store_size(data.support, data.query, fractions, k, size_synth.seed));
    };
  });

  std::string bench_sizes = "10000,100000,1000000";
  std::size_t bench_dim = 64, bench_reps = 30;
  unsigned bench_threads = 1;
  auto* bench = eval->add_subcommand("bench", "Median exact-scan time per store size");
  output.add_to(bench);
  bench->add_option("--sizes", bench_sizes, "Comma-separated store sizes")->capture_default_str();
  bench->add_option("--dim", bench_dim, "Vector dimension")->capture_default_str();
  bench->add_option("--reps", bench_reps, "Repetitions per size")->capture_default_str();
  bench->add_option("--threads", bench_threads, "Scan threads (0 = all cores)")->capture_default_str();
  bench->callback([&] {
    action = [&] {
      std::vector<std::size_t> sizes;
      for (const auto& s : split_csv(bench_sizes)) sizes.push_back(std::stoull(s));
      const auto timings = benchmark_distance_scan(sizes, bench_dim, bench_reps, 1, 10, bench_threads);
      for (const auto& t : timings) {
        std::cout << "n " << t.n << " median_seconds " << format_double(t.median_seconds);
        if (t.ratio_to_previous) std::cout << " ratio " << format_double(*t.ratio_to_previous);
        std::cout << "\n";
      }
      output.emit(benchmark_report(timings, bench_dim, bench_reps));
    };
  });

  // ---- features ----------------------------------------------------------
  std::string convert_in, convert_out;
  auto* features = app.add_subcommand("features", "Feature file utilities");
  features->require_subcommand(1);
  auto* convert = features->add_subcommand("convert", "Convert a text feature file to the binary format");
  convert->add_option("--in", convert_in, "Text or binary feature file")->required();
  convert->add_option("--out", convert_out, "Binary feature file")->required();
  convert->callback([&] {
    action = [&] {
      const auto records = read_features_any(convert_in);
      const auto bytes = write_feature_file(records, convert_out);
      std::cout << "wrote " << records.size() << " records " << bytes << " bytes\n";
    };
  });

  // ---- serve -------------------------------------------------------------
  std::string config_path, listen_override;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--config", config_path, "Config file (key = value)")->required();
  serve->add_option("--listen", listen_override, "HOST:PORT, overrides config and KNNKB_LISTEN");
  serve->callback([&] {
    action = [&] {
      auto config = load_service_config(config_path);
      if (!listen_override.empty()) set_listen_address(config, listen_override);
      auto service = Service::from_config(config);
      httplib::Server server;
      service->register_routes(server);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      int port = config.listen_port;
      if (port == 0) {
        port = server.bind_to_any_port(config.listen_host);
      } else if (!server.bind_to_port(config.listen_host, port)) {
        fail(ErrorCode::kIoError, "cannot listen on " + config.listen_host + ":" + std::to_string(port));
      }
      std::cout << "listening on " << config.listen_host << ":" << port << std::endl;
      server.listen_after_bind();
      g_server = nullptr;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: invalid-argument: " << e.what() << "\n";
    return 2;
  }

  try {
    if (action) action();
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#pragma once

// HTTP front end over a knowledge store. Requires cpp-httplib ("httplib.h").
//
// Endpoints (JSON bodies):
//   POST   /v1/classify          {vector | batch, k?, filter?, source? | sources?}
//   POST   /v1/classify-image    raw image bytes; ?k=, forwarded to the encoder
//   POST   /v1/ingest            {records: [{vector, labels, source?, task?}]} | {features_path, task?}
//   GET    /v1/records/{id}
//   PATCH  /v1/records/{id}/labels  {labels}
//   DELETE /v1/records           {ids} | {label}
//   POST   /v1/prune             {threshold}
//   POST   /v1/save              {path?}
//   GET    /v1/audit?from=&limit=
//   GET    /v1/audit/{entry}
//   GET    /v1/stats
//   GET    /v1/refs?order=most|least&top=
//   POST   /v1/eval/accuracy     {queries | queries_path, k?, filter?}
//   POST   /v1/eval/eliminate    {queries | queries_path, ids, k?}
//   GET    /v1/jobs/{id}
//   GET    /v1/mutations?from=&limit=
// Errors: {"error": code, "message": text} with 400/404/409/502/503.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "httplib.h"
#include "knnkb/classifier.hpp"
#include "knnkb/eval.hpp"
#include "knnkb/io.hpp"

namespace knnkb {

struct ServiceConfig {
  std::filesystem::path store_path;
  std::string listen_host = "127.0.0.1";
  int listen_port = 8080;
  std::size_t k_default = 10;
  std::size_t max_batch = 1000;
  std::string encoder_url;  // empty = no encoder
  bool read_only = false;
  std::size_t dimension = 0;  // used when store_path does not exist yet
};

inline void set_listen_address(ServiceConfig& config, const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos) fail(ErrorCode::kInvalidArgument, "listen must be HOST:PORT");
  config.listen_host = address.substr(0, colon);
  try {
    config.listen_port = std::stoi(address.substr(colon + 1));
  } catch (const std::exception&) {
    fail(ErrorCode::kInvalidArgument, "bad listen port in '" + address + "'");
  }
}

/// Parses `key = value` lines; '#' starts a comment. The KNNKB_LISTEN
/// environment variable, when set, overrides `listen`.
inline ServiceConfig parse_service_config(const std::string& text, bool apply_env = true) {
  ServiceConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::kParseError, "config line " + std::to_string(line_no) + ": expected key = value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    auto as_size = [&](const char* what) -> std::size_t {
      try {
        std::size_t used = 0;
        const auto v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
      } catch (const std::exception&) {
        fail(ErrorCode::kParseError, std::string("config: bad ") + what + " '" + value + "'");
      }
    };
    if (key == "store") {
      config.store_path = value;
    } else if (key == "listen") {
      set_listen_address(config, value);
    } else if (key == "k") {
      config.k_default = as_size("k");
    } else if (key == "max_batch") {
      config.max_batch = as_size("max_batch");
    } else if (key == "encoder") {
      config.encoder_url = value;
    } else if (key == "read_only") {
      if (value != "true" && value != "false") fail(ErrorCode::kParseError, "config: read_only must be true|false");
      config.read_only = value == "true";
    } else if (key == "dimension") {
      config.dimension = as_size("dimension");
    } else {
      fail(ErrorCode::kParseError, "config: unknown key '" + key + "'");
    }
  }
  if (apply_env) {
    if (const char* env = std::getenv("KNNKB_LISTEN"); env != nullptr && *env != '\0') {
      set_listen_address(config, env);
    }
  }
  if (config.k_default == 0) fail(ErrorCode::kInvalidArgument, "config: k must be >= 1");
  if (config.max_batch == 0) fail(ErrorCode::kInvalidArgument, "config: max_batch must be >= 1");
  return config;
}

inline ServiceConfig load_service_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_service_config(buf.str());
}

/// Turns image bytes into a feature vector via an external HTTP encoder.
/// Protocol: POST <url> with the raw bytes; the reply is {"vector": [floats]}.
class EncoderClient {
 public:
  explicit EncoderClient(std::string url) {
    const auto scheme = url.find("://");
    const auto path_at = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    base_ = path_at == std::string::npos ? url : url.substr(0, path_at);
    path_ = path_at == std::string::npos ? "/" : url.substr(path_at);
  }

  std::vector<float> encode(const std::string& bytes, const std::string& content_type) const {
    httplib::Client client(base_);
    client.set_connection_timeout(5);
    client.set_read_timeout(60);
    auto res = client.Post(path_, bytes,
                           content_type.empty() ? "application/octet-stream" : content_type);
    if (!res) fail(ErrorCode::kEncoderFailure, "encoder unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200) {
      fail(ErrorCode::kEncoderFailure, "encoder returned status " + std::to_string(res->status));
    }
    try {
      return nlohmann::json::parse(res->body).at("vector").get<std::vector<float>>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kEncoderFailure, std::string("bad encoder reply: ") + e.what());
    }
  }

 private:
  std::string base_;
  std::string path_;
};

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNotFound:            return 404;
    case ErrorCode::kReadOnly:            return 409;
    case ErrorCode::kEncoderUnconfigured: return 503;
    case ErrorCode::kEncoderFailure:      return 502;
    case ErrorCode::kIoError:             return 500;
    default:                              return 400;
  }
}

class Service {
 public:
  Service(ServiceConfig config, KnowledgeStore store)
      : config_(std::move(config)), store_(std::move(store)) {}

  /// Loads the configured snapshot, or starts empty with `dimension`.
  static std::unique_ptr<Service> from_config(const ServiceConfig& config) {
    if (!config.store_path.empty() && std::filesystem::exists(config.store_path)) {
      return std::make_unique<Service>(config, load_store(config.store_path));
    }
    if (config.dimension == 0) {
      fail(ErrorCode::kInvalidArgument, "store file missing and no dimension configured");
    }
    return std::make_unique<Service>(config, KnowledgeStore(config.dimension));
  }

  ~Service() {
    std::vector<std::jthread> workers;
    {
      std::lock_guard lock(jobs_mu_);
      workers.swap(workers_);
    }
    workers.clear();  // joins
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  KnowledgeStore& store() noexcept { return store_; }
  AuditLog& audit_log() noexcept { return log_; }
  const ServiceConfig& config() const noexcept { return config_; }

  void register_routes(httplib::Server& server) {
    server.Post("/v1/classify", wrap([this](const auto& req, auto& res) { classify(req, res); }));
    server.Post("/v1/classify-image",
                wrap([this](const auto& req, auto& res) { classify_image(req, res); }));
    server.Post("/v1/ingest", wrap([this](const auto& req, auto& res) { ingest(req, res); }));
    server.Get(R"(/v1/records/(\d+))",
               wrap([this](const auto& req, auto& res) { get_record(req, res); }));
    server.Patch(R"(/v1/records/(\d+)/labels)",
                 wrap([this](const auto& req, auto& res) { patch_labels(req, res); }));
    server.Delete("/v1/records",
                  wrap([this](const auto& req, auto& res) { delete_records(req, res); }));
    server.Post("/v1/prune", wrap([this](const auto& req, auto& res) { prune(req, res); }));
    server.Post("/v1/save", wrap([this](const auto& req, auto& res) { save(req, res); }));
    server.Get("/v1/audit", wrap([this](const auto& req, auto& res) { audit_page(req, res); }));
    server.Get(R"(/v1/audit/(\d+))",
               wrap([this](const auto& req, auto& res) { audit_entry(req, res); }));
    server.Get("/v1/stats", wrap([this](const auto& req, auto& res) { stats(req, res); }));
    server.Get("/v1/refs", wrap([this](const auto& req, auto& res) { refs(req, res); }));
    server.Post(R"(/v1/eval/(accuracy|eliminate))",
                wrap([this](const auto& req, auto& res) { start_eval(req, res); }));
    server.Get(R"(/v1/jobs/(\d+))", wrap([this](const auto& req, auto& res) { job(req, res); }));
    server.Get("/v1/mutations",
               wrap([this](const auto& req, auto& res) { mutations(req, res); }));
  }

  /// Every applied mutation, in order. `after_audit_entry` is the last audit
  /// entry appended before the mutation took effect.
  std::vector<nlohmann::json> mutation_log() const {
    std::lock_guard lock(mutations_mu_);
    return mutations_;
  }

  /// JSON for one classification, with neighbor metadata from its audit entry.
  nlohmann::json result_json(const ClassificationResult& r) const {
    nlohmann::json j;
    j["abstained"] = r.abstained;
    j["prediction"] = r.predicted_label_id ? nlohmann::json(store_.label_name(*r.predicted_label_id))
                                           : nlohmann::json(nullptr);
    j["prediction_id"] =
        r.predicted_label_id ? nlohmann::json(*r.predicted_label_id) : nlohmann::json(nullptr);
    j["tie_broken"] = r.tally.tie_broken;
    j["audit_entry"] = r.audit_entry_id;
    nlohmann::json votes = nlohmann::json::array();
    for (const auto& v : r.tally.counts) {
      votes.push_back({{"label", store_.label_name(v.label)},
                       {"label_id", v.label},
                       {"votes", v.votes},
                       {"distance_sum", v.distance_sum},
                       {"best_rank", v.best_rank}});
    }
    j["votes"] = std::move(votes);
    auto entry = log_.get(r.audit_entry_id);
    nlohmann::json neighbors = nlohmann::json::array();
    for (std::size_t i = 0; i < r.neighbors.size(); ++i) {
      const auto& n = r.neighbors[i];
      nlohmann::json nj = {{"rank", n.rank},
                           {"id", n.record_id},
                           {"distance", n.distance},
                           {"labels", store_.label_names(r.neighbor_labels[i])}};
      nj["source"] = entry ? entry->neighbors[i].source : std::string();
      neighbors.push_back(std::move(nj));
    }
    j["neighbors"] = std::move(neighbors);
    return j;
  }

 private:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  template <class Fn>
  Handler wrap(Fn fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const Error& e) {
        reply_error(res, http_status(e.code()), std::string(to_string(e.code())), e.what());
      } catch (const nlohmann::json::exception& e) {
        reply_error(res, 400, "invalid-argument", e.what());
      } catch (const std::exception& e) {
        reply_error(res, 500, "internal", e.what());
      }
    };
  }

  static void reply(httplib::Response& res, const nlohmann::json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void reply_error(httplib::Response& res, int status, const std::string& code,
                          const std::string& message) {
    reply(res, {{"error", code}, {"message", message}}, status);
  }

  static nlohmann::json body_json(const httplib::Request& req) {
    if (req.body.empty()) return nlohmann::json::object();
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) fail(ErrorCode::kInvalidArgument, "request body must be a JSON object");
    return j;
  }

  void record_mutation(const std::string& action, nlohmann::json detail) {
    std::lock_guard lock(mutations_mu_);
    detail["seq"] = mutations_.size() + 1;
    detail["action"] = action;
    detail["after_audit_entry"] = log_.next_id() - 1;
    detail["timestamp_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                                 std::chrono::system_clock::now().time_since_epoch())
                                 .count();
    mutations_.push_back(std::move(detail));
  }

  void require_writable() const {
    if (config_.read_only) fail(ErrorCode::kReadOnly, "service is read-only");
  }

  std::size_t k_from(const nlohmann::json& body) const {
    const auto k = body.contains("k") ? body.at("k").get<std::size_t>() : config_.k_default;
    if (k == 0) fail(ErrorCode::kInvalidArgument, "k must be >= 1");
    return k;
  }

  SearchFilter filter_from(const nlohmann::json& body) const {
    SearchFilter f;
    if (!body.contains("filter")) return f;
    const auto& j = body.at("filter");
    if (j.contains("labels")) {
      f.label_ids.emplace();
      for (const auto& name : j.at("labels").get<std::vector<std::string>>()) {
        if (auto id = store_.label_id(name)) f.label_ids->push_back(*id);
      }
    }
    if (j.contains("tasks")) f.task_ids = j.at("tasks").get<std::vector<TaskId>>();
    if (j.contains("exclude_ids")) f.exclude_ids = j.at("exclude_ids").get<std::vector<RecordId>>();
    return f;
  }

  static std::uint64_t param_u64(const httplib::Request& req, const char* key) {
    const auto value = req.get_param_value(key);
    try {
      std::size_t used = 0;
      const auto v = std::stoull(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
      return v;
    } catch (const std::exception&) {
      fail(ErrorCode::kInvalidArgument, std::string("bad query parameter ") + key + "='" + value + "'");
    }
  }

  static RecordId path_id(const httplib::Request& req) {
    try {
      return std::stoull(req.matches[1].str());
    } catch (const std::exception&) {
      fail(ErrorCode::kInvalidArgument, "bad id in path");
    }
  }

  void classify(const httplib::Request& req, httplib::Response& res) {
    const auto body = body_json(req);
    const auto k = k_from(body);
    const auto filter = filter_from(body);
    Classifier classifier(store_, &log_);
    if (body.contains("batch")) {
      const auto raw = body.at("batch").get<std::vector<std::vector<float>>>();
      if (raw.size() > config_.max_batch) {
        fail(ErrorCode::kInvalidArgument, "batch exceeds max_batch " + std::to_string(config_.max_batch));
      }
      std::vector<std::string> sources;
      if (body.contains("sources")) sources = body.at("sources").get<std::vector<std::string>>();
      if (!sources.empty() && sources.size() != raw.size()) {
        fail(ErrorCode::kInvalidArgument, "sources length does not match batch");
      }
      std::vector<QueryVector> queries;
      std::vector<QueryContext> contexts;
      for (std::size_t i = 0; i < raw.size(); ++i) {
        queries.push_back(QueryVector::from_raw(raw[i]));
        contexts.push_back({sources.empty() ? std::string() : sources[i], std::nullopt});
      }
      auto results = classifier.classify_batch(queries, k, filter, contexts);
      nlohmann::json out = nlohmann::json::array();
      for (const auto& r : results) out.push_back(result_json(r));
      reply(res, {{"results", std::move(out)}});
      return;
    }
    if (!body.contains("vector")) fail(ErrorCode::kInvalidArgument, "body needs 'vector' or 'batch'");
    auto query = QueryVector::from_raw(body.at("vector").get<std::vector<float>>());
    QueryContext ctx;
    if (body.contains("source")) ctx.source = body.at("source").get<std::string>();
    reply(res, result_json(classifier.classify(query, k, filter, ctx)));
  }

  void classify_image(const httplib::Request& req, httplib::Response& res) {
    if (config_.encoder_url.empty()) {
      fail(ErrorCode::kEncoderUnconfigured, "no encoder endpoint configured");
    }
    std::size_t k = config_.k_default;
    if (req.has_param("k")) k = param_u64(req, "k");
    if (k == 0) fail(ErrorCode::kInvalidArgument, "k must be >= 1");
    const auto vector = EncoderClient(config_.encoder_url).encode(req.body, req.get_header_value("Content-Type"));
    Classifier classifier(store_, &log_);
    QueryContext ctx;
    if (req.has_param("source")) ctx.source = req.get_param_value("source");
    reply(res, result_json(classifier.classify(QueryVector::from_raw(vector), k, {}, ctx)));
  }

  void ingest(const httplib::Request& req, httplib::Response& res) {
    require_writable();
    const auto body = body_json(req);
    std::optional<TaskId> task;
    if (body.contains("task")) task = body.at("task").get<TaskId>();
    std::vector<FeatureFileRecord> records;
    if (body.contains("features_path")) {
      records = read_features_any(body.at("features_path").get<std::string>());
    } else if (body.contains("records")) {
      for (const auto& r : body.at("records")) {
        FeatureFileRecord rec;
        rec.raw = r.at("vector").get<std::vector<float>>();
        rec.labels = r.at("labels").get<std::vector<std::string>>();
        if (r.contains("source")) rec.source = r.at("source").get<std::string>();
        if (r.contains("task")) rec.task_id = r.at("task").get<TaskId>();
        records.push_back(std::move(rec));
      }
    } else {
      fail(ErrorCode::kInvalidArgument, "body needs 'records' or 'features_path'");
    }
    const auto ids = ingest_records(store_, records, task);
    record_mutation("ingest", {{"ids", ids}});
    reply(res, {{"ingested", ids.size()}, {"ids", ids}, {"live_count", store_.live_count()}});
  }

  void get_record(const httplib::Request& req, httplib::Response& res) {
    const auto rec = store_.record(path_id(req));
    nlohmann::json j = {{"id", rec.id},
                        {"labels", store_.label_names(rec.labels)},
                        {"label_ids", rec.labels},
                        {"source", rec.source},
                        {"ref_count", rec.ref_count},
                        {"deleted", rec.deleted},
                        {"original_norm", rec.original_norm}};
    j["task_id"] = rec.task_id ? nlohmann::json(*rec.task_id) : nlohmann::json(nullptr);
    if (req.has_param("vector") && req.get_param_value("vector") == "1") j["vector"] = rec.vector;
    reply(res, j);
  }

  void patch_labels(const httplib::Request& req, httplib::Response& res) {
    require_writable();
    const auto body = body_json(req);
    const auto labels = body.at("labels").get<std::vector<std::string>>();
    const auto id = path_id(req);
    const auto previous = store_.relabel(id, labels);
    record_mutation("relabel", {{"id", id}, {"labels", labels}, {"previous", previous}});
    reply(res, {{"previous", previous}});
  }

  void delete_records(const httplib::Request& req, httplib::Response& res) {
    require_writable();
    const auto body = body_json(req);
    std::size_t removed = 0;
    if (body.contains("ids")) {
      const auto ids = body.at("ids").get<std::vector<RecordId>>();
      removed = store_.remove(ids);
      record_mutation("delete", {{"ids", ids}, {"deleted", removed}});
    } else if (body.contains("label")) {
      const auto label = body.at("label").get<std::string>();
      removed = store_.remove_label(label);
      record_mutation("delete", {{"label", label}, {"deleted", removed}});
    } else {
      fail(ErrorCode::kInvalidArgument, "body needs 'ids' or 'label'");
    }
    reply(res, {{"deleted", removed}, {"live_count", store_.live_count()}});
  }

  void prune(const httplib::Request& req, httplib::Response& res) {
    require_writable();
    const auto body = body_json(req);
    const auto threshold = body.at("threshold").get<std::uint64_t>();
    const auto removed = store_.prune_rarely_referenced(threshold);
    record_mutation("prune", {{"threshold", threshold}, {"deleted", removed}});
    reply(res, {{"deleted", removed}, {"live_count", store_.live_count()}});
  }

  void save(const httplib::Request& req, httplib::Response& res) {
    require_writable();
    const auto body = body_json(req);
    std::filesystem::path path = config_.store_path;
    if (body.contains("path")) path = body.at("path").get<std::string>();
    if (path.empty()) fail(ErrorCode::kInvalidArgument, "no snapshot path configured or given");
    const auto bytes = save_store(store_, path);
    reply(res, {{"bytes", bytes}, {"path", path.string()}});
  }

  void audit_page(const httplib::Request& req, httplib::Response& res) {
    std::uint64_t from = 1;
    std::size_t limit = 100;
    if (req.has_param("from")) from = param_u64(req, "from");
    if (req.has_param("limit")) limit = param_u64(req, "limit");
    limit = std::min<std::size_t>(limit, 1000);
    const auto entries = log_.page(from, limit);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& e : entries) out.push_back(to_json(e));
    nlohmann::json j = {{"entries", std::move(out)}};
    const bool more = !entries.empty() && entries.back().entry_id + 1 < log_.next_id();
    j["next"] = more ? nlohmann::json(entries.back().entry_id + 1) : nlohmann::json(nullptr);
    reply(res, j);
  }

  void audit_entry(const httplib::Request& req, httplib::Response& res) {
    const auto explained = Classifier::explain_entry(log_, store_, path_id(req));
    nlohmann::json neighbors = nlohmann::json::array();
    for (const auto& n : explained.neighbors) {
      neighbors.push_back({{"record_id", n.recorded.record_id},
                           {"rank", n.recorded.rank},
                           {"distance", n.recorded.distance},
                           {"source", n.recorded.source},
                           {"labels_at_classification", n.recorded.label_names},
                           {"current_labels", n.current_labels},
                           {"deleted", n.deleted},
                           {"resolvable", n.resolvable}});
    }
    reply(res, {{"entry", to_json(explained.entry)}, {"neighbors", std::move(neighbors)}});
  }

  void stats(const httplib::Request&, httplib::Response& res) {
    reply(res, {{"dimension", store_.dimension()},
                {"live_count", store_.live_count()},
                {"total_count", store_.total_count()},
                {"labels", store_.vocabulary().size()},
                {"snapshot_bytes", encode_snapshot(store_).size()},
                {"audit_entries", log_.size()},
                {"read_only", config_.read_only}});
  }

  void refs(const httplib::Request& req, httplib::Response& res) {
    auto order = RefOrder::kMost;
    if (req.has_param("order")) {
      const auto o = req.get_param_value("order");
      if (o == "least") {
        order = RefOrder::kLeast;
      } else if (o != "most") {
        fail(ErrorCode::kInvalidArgument, "order must be most|least");
      }
    }
    std::size_t top = 10;
    if (req.has_param("top")) top = param_u64(req, "top");
    nlohmann::json out = nlohmann::json::array();
    for (const auto& s : store_.reference_stats(top, order)) {
      out.push_back({{"id", s.id}, {"ref_count", s.ref_count}});
    }
    reply(res, {{"refs", std::move(out)}});
  }

  LabeledQuerySet queries_from(const nlohmann::json& body) const {
    LabeledQuerySet set{store_.dimension(), {}};
    if (body.contains("queries_path")) {
      for (auto& r : read_features_any(body.at("queries_path").get<std::string>())) {
        if (r.labels.empty()) fail(ErrorCode::kInvalidArgument, "evaluation queries need labels");
        set.samples.push_back({std::move(r.raw), r.labels.front(), r.source, r.labels.front()});
      }
    } else if (body.contains("queries")) {
      for (const auto& q : body.at("queries")) {
        const auto label = q.at("label").get<std::string>();
        set.samples.push_back({q.at("vector").get<std::vector<float>>(), label,
                               q.contains("source") ? q.at("source").get<std::string>() : "", label});
      }
    } else {
      fail(ErrorCode::kInvalidArgument, "body needs 'queries' or 'queries_path'");
    }
    if (set.samples.empty()) fail(ErrorCode::kInvalidArgument, "query set is empty");
    for (const auto& s : set.samples) {
      if (s.raw.size() != set.dimension) fail(ErrorCode::kInvalidArgument, "query dimension mismatch");
    }
    return set;
  }

  void start_eval(const httplib::Request& req, httplib::Response& res) {
    const auto kind = req.matches[1].str();
    const auto body = body_json(req);
    const auto k = k_from(body);
    auto queries = queries_from(body);
    const auto filter = filter_from(body);
    std::vector<RecordId> ids;
    if (kind == "eliminate") ids = body.at("ids").get<std::vector<RecordId>>();
    // Jobs run against a copy so their classifications leave counters and the log alone.
    auto snapshot = std::make_shared<KnowledgeStore>(store_);

    std::lock_guard lock(jobs_mu_);
    const auto id = next_job_++;
    jobs_[id] = {"running", nullptr, {}};
    workers_.emplace_back([this, id, kind, k, filter, snapshot, queries = std::move(queries),
                           ids = std::move(ids)] {
      JobState done;
      try {
        if (kind == "accuracy") {
          done.report = report_json(evaluate(*snapshot, queries, k, filter));
        } else {
          done.report = report_json(
              elimination_report(run_elimination_experiment(*snapshot, ids, queries, k)));
        }
        done.status = "done";
      } catch (const std::exception& e) {
        done.status = "failed";
        done.error = e.what();
      }
      std::lock_guard l(jobs_mu_);
      jobs_[id] = std::move(done);
    });
    reply(res, {{"job", id}, {"status", "running"}}, 202);
  }

  void job(const httplib::Request& req, httplib::Response& res) {
    const auto id = path_id(req);
    std::lock_guard lock(jobs_mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) fail(ErrorCode::kNotFound, "no job " + std::to_string(id));
    nlohmann::json j = {{"job", id}, {"status", it->second.status}};
    if (!it->second.report.is_null()) j["report"] = it->second.report;
    if (!it->second.error.empty()) j["error"] = it->second.error;
    reply(res, j);
  }

  void mutations(const httplib::Request& req, httplib::Response& res) {
    std::uint64_t from = 1;
    std::size_t limit = 100;
    if (req.has_param("from")) from = param_u64(req, "from");
    if (req.has_param("limit")) limit = std::min<std::size_t>(param_u64(req, "limit"), 1000);
    nlohmann::json out = nlohmann::json::array();
    std::lock_guard lock(mutations_mu_);
    for (std::size_t i = from == 0 ? 0 : from - 1; i < mutations_.size() && out.size() < limit; ++i) {
      out.push_back(mutations_[i]);
    }
    reply(res, {{"mutations", std::move(out)}});
  }

  struct JobState {
    std::string status;
    nlohmann::json report;
    std::string error;
  };

  ServiceConfig config_;
  KnowledgeStore store_;
  AuditLog log_;
  std::mutex jobs_mu_;
  std::map<std::uint64_t, JobState> jobs_;
  std::uint64_t next_job_ = 1;
  std::vector<std::jthread> workers_;
  mutable std::mutex mutations_mu_;
  std::vector<nlohmann::json> mutations_;
};

}  // namespace knnkb

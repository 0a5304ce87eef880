#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cli_runner.hpp"
#include "knnkb/eval.hpp"
#include "knnkb/io.hpp"
#include "knnkb/synthetic.hpp"

using namespace knnkb;
namespace kt = knnkb::testing;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("knnkb_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()) +
            "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name) << text;
  }

  fs::path dir_;
};

const char* kFixtureText =
    "A s1 1 0\n"
    "A s2 0.8 0.6\n"
    "B s3 0 1\n"
    "B s4 -0.6 0.8\n";

std::string line_value(const std::string& out, const std::string& key) {
  std::istringstream in(out);
  std::string name, value;
  while (in >> name >> value) {
    if (name == key) return value;
  }
  return {};
}

}  // namespace

TEST_F(Cli, InitIngestClassify) {
  write("fixture.txt", kFixtureText);
  write("q.txt", "_ q1 0.6 0.8\n");
  const auto kb = path("kb.knns");

  auto r = kt::run_cli({"store", "init", "--dim", "2", "--out", kb});
  ASSERT_EQ(r.rc, 0) << r.err;
  r = kt::run_cli({"store", "ingest", "--store", kb, "--features", path("fixture.txt")});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_EQ(r.out, "ingested 4 live 4 total 4\n");

  r = kt::run_cli({"classify", "--store", kb, "--queries", path("q.txt"), "--k", "3"});
  ASSERT_EQ(r.rc, 0) << r.err;
  ASSERT_EQ(r.out.rfind("index,source,prediction,abstained,tie_broken,neighbors\n0,q1,A,0,0,1:", 0), 0u) << r.out;
  double d1 = 0, d2 = 0, d0 = 0;
  ASSERT_EQ(std::sscanf(r.out.c_str() + r.out.find("1:"), "1:%lf;2:%lf;0:%lf", &d1, &d2, &d0), 3);
  EXPECT_NEAR(d1, 0.04, 1e-6);
  EXPECT_NEAR(d2, 0.20, 1e-6);
  EXPECT_NEAR(d0, 0.40, 1e-6);

  // Reference counts were persisted and the audit log was appended.
  auto stats = nlohmann::json::parse(
      kt::run_cli({"store", "stats", "--store", kb, "--refs", "most", "--top", "1"}).out);
  EXPECT_EQ(stats.at("live_count"), 4);
  EXPECT_EQ(stats.at("refs")[0].at("id"), 0);  // ids 0..2 tie at one reference
  EXPECT_EQ(stats.at("refs")[0].at("ref_count"), 1);
  std::ifstream audit(kb + ".audit.jsonl");
  std::string line;
  ASSERT_TRUE(std::getline(audit, line));
  EXPECT_EQ(nlohmann::json::parse(line).at("predicted_label"), "A");

  r = kt::run_cli({"classify", "--store", kb, "--queries", path("q.txt"), "--k", "3", "--no-save"});
  EXPECT_EQ(load_store(kb).record(1).ref_count, 1u);

  r = kt::run_cli({"audit", "explain", "--store", kb, "--entry", "2"});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out).at("entry").at("entry_id"), 2);
}

TEST_F(Cli, DeletingALabelFlipsThePrediction) {
  // Near-duplicate neighbors carry the wrong class; deleting that label
  // hands the vote to the correct one.
  std::vector<FeatureFileRecord> records = {
      {{0.62f, 0.78f}, {"ruffed grouse"}, "g1", std::nullopt},
      {{0.58f, 0.81f}, {"ruffed grouse"}, "g2", std::nullopt},
      {{0.61f, 0.80f}, {"ruffed grouse"}, "g3", std::nullopt},
      {{0.50f, 0.86f}, {"partridge"}, "p1", std::nullopt},
      {{0.70f, 0.71f}, {"partridge"}, "p2", std::nullopt},
      {{0.45f, 0.89f}, {"partridge"}, "p3", std::nullopt},
      {{-1.0f, 0.0f}, {"quail"}, "x1", std::nullopt},
  };
  write_feature_file(records, path("birds.knnf"));
  write("q.txt", "_ photo 0.6 0.8\n");
  const auto kb = path("birds.knns");
  ASSERT_EQ(kt::run_cli({"store", "init", "--dim", "2", "--out", kb}).rc, 0);
  ASSERT_EQ(kt::run_cli({"store", "ingest", "--store", kb, "--features", path("birds.knnf")}).rc, 0);

  auto before = kt::run_cli({"classify", "--store", kb, "--queries", path("q.txt"), "--k", "5"});
  ASSERT_EQ(before.rc, 0) << before.err;
  EXPECT_NE(before.out.find(",photo,ruffed grouse,0,0,"), std::string::npos) << before.out;

  auto del = kt::run_cli({"store", "delete", "--store", kb, "--label", "ruffed grouse"});
  ASSERT_EQ(del.rc, 0) << del.err;
  EXPECT_EQ(del.out, "deleted 3 live 4\n");

  auto after = kt::run_cli({"classify", "--store", kb, "--queries", path("q.txt"), "--k", "5"});
  ASSERT_EQ(after.rc, 0) << after.err;
  EXPECT_NE(after.out.find(",photo,partridge,0,0,"), std::string::npos) << after.out;
}

TEST_F(Cli, RelabelPruneCompactDeleteIds) {
  write("fixture.txt", kFixtureText);
  const auto kb = path("kb.knns");
  ASSERT_EQ(kt::run_cli({"store", "init", "--dim", "2", "--out", kb}).rc, 0);
  ASSERT_EQ(kt::run_cli({"store", "ingest", "--store", kb, "--features", path("fixture.txt"), "--task", "3"}).rc, 0);
  EXPECT_EQ(load_store(kb).record(2).task_id, TaskId{3});

  auto r = kt::run_cli({"store", "relabel", "--store", kb, "--id", "0", "--labels", "B,C"});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_EQ(r.out, "relabeled 0 previous A\n");
  EXPECT_EQ(load_store(kb).label_names(load_store(kb).record(0).labels), (std::vector<std::string>{"B", "C"}));

  write("ids.txt", "1\n3\n");
  r = kt::run_cli({"store", "delete", "--store", kb, "--ids", path("ids.txt")});
  EXPECT_EQ(r.out, "deleted 2 live 2\n");
  r = kt::run_cli({"store", "prune", "--store", kb, "--threshold", "0"});
  EXPECT_EQ(r.out, "deleted 2 live 0\n");
  r = kt::run_cli({"store", "compact", "--store", kb});
  EXPECT_EQ(r.out, "dropped 4 total 0\n");
}

TEST_F(Cli, FeaturesConvert) {
  write("fixture.txt", kFixtureText);
  auto r = kt::run_cli({"features", "convert", "--in", path("fixture.txt"), "--out", path("f.knnf")});
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto decoded = read_feature_file(path("f.knnf"));
  std::istringstream text(kFixtureText);
  EXPECT_EQ(decoded, parse_text_features(text));
}

TEST_F(Cli, IncrementalMatchesLibrary) {
  auto r = kt::run_cli({"eval", "incremental", "--mode", "task", "--steps", "20", "--out", path("inc.csv")});
  ASSERT_EQ(r.rc, 0) << r.err;

  SyntheticSpec spec;
  spec.num_classes = 100;
  spec.samples_per_class = 50;
  const auto data = generate_synthetic(spec);
  const auto run = run_incremental(split_protocol(data.class_names, 20, IncrementalMode::kTask),
                                   data.support, data.query, 10);
  char want[64];
  std::snprintf(want, sizeof want, "%.17g", run.report.aggregates.at("task_average_over_steps"));
  EXPECT_EQ(line_value(r.out, "task_average_over_steps"), want);
  EXPECT_EQ(kt::read_text(path("inc.csv")), report_csv(run.report));
}

TEST_F(Cli, EvalCommandsRun) {
  auto r = kt::run_cli({"eval", "accuracy", "--classes", "5", "--per-class", "40", "--dim", "8"});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_FALSE(line_value(r.out, "accuracy").empty());
  r = kt::run_cli({"eval", "cv-k", "--classes", "5", "--per-class", "40", "--dim", "8", "--report", path("cv.json")});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(kt::read_text(path("cv.json"))).at("kind"), "cv-k");
  r = kt::run_cli({"eval", "eliminate", "--classes", "5", "--per-class", "40", "--dim", "8"});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_FALSE(line_value(r.out, "delta").empty());
  r = kt::run_cli({"eval", "size", "--classes", "5", "--per-class", "40", "--dim", "8", "--fractions", "0.5,1"});
  ASSERT_EQ(r.rc, 0) << r.err;
  r = kt::run_cli({"eval", "bench", "--sizes", "100,1000", "--dim", "8", "--reps", "3"});
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_NE(r.out.find("n 1000 median_seconds "), std::string::npos);
}

TEST_F(Cli, ErrorLines) {
  write("fixture.txt", kFixtureText);
  const auto kb = path("kb.knns");
  ASSERT_EQ(kt::run_cli({"store", "init", "--dim", "2", "--out", kb}).rc, 0);

  auto r = kt::run_cli({"store", "stats", "--store", path("missing.knns")});
  EXPECT_NE(r.rc, 0);
  EXPECT_EQ(r.err.rfind("error: io-error: ", 0), 0u) << r.err;

  r = kt::run_cli({"store", "relabel", "--store", kb, "--id", "5", "--labels", "A"});
  EXPECT_NE(r.rc, 0);
  EXPECT_EQ(r.err.rfind("error: not-found: ", 0), 0u) << r.err;

  write("bad.txt", "A s1 1 0\nB s2 1 0 0\n");
  r = kt::run_cli({"store", "ingest", "--store", kb, "--features", path("bad.txt")});
  EXPECT_NE(r.rc, 0);
  EXPECT_EQ(r.err.rfind("error: parse-error: ", 0), 0u) << r.err;

  write("junk.knns", "not a snapshot");
  r = kt::run_cli({"store", "stats", "--store", path("junk.knns")});
  EXPECT_NE(r.rc, 0);
  EXPECT_EQ(r.err.rfind("error: ", 0), 0u) << r.err;

  r = kt::run_cli({"store", "init", "--dim", "2"});
  EXPECT_NE(r.rc, 0);
  EXPECT_EQ(r.err.rfind("error: invalid-argument: ", 0), 0u) << r.err;

  r = kt::run_cli({"store", "delete", "--store", kb});
  EXPECT_NE(r.rc, 0);
  EXPECT_EQ(r.err.rfind("error: invalid-argument: ", 0), 0u) << r.err;
  EXPECT_TRUE(r.out.empty());
}

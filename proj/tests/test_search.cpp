#include <gtest/gtest.h>

#include "knnkb/search.hpp"
#include "oracle.hpp"

using namespace knnkb;
namespace kt = knnkb::testing;

TEST(Distance, Examples) {
  std::vector<float> a{0.6f, 0.8f};
  EXPECT_NEAR(cosine_distance(a, a), 0.0, 1e-7);
  EXPECT_DOUBLE_EQ(cosine_distance(std::vector<float>{1, 0}, std::vector<float>{0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(cosine_distance(std::vector<float>{1, 0}, std::vector<float>{-1, 0}), 2.0);
  EXPECT_THROW(cosine_distance(std::vector<float>{1, 0}, std::vector<float>{1, 0, 0}), Error);
}

TEST(Distance, SymmetricAndBounded) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 500; ++i) {
    auto a = kt::unit(kt::random_vector(rng, 16));
    auto b = kt::unit(kt::random_vector(rng, 16));
    const double d = cosine_distance(a, b);
    EXPECT_EQ(d, cosine_distance(b, a));
    EXPECT_GE(d, -1e-6);
    EXPECT_LE(d, 2 + 1e-6);
  }
}

TEST(Search, FixtureTopThree) {
  auto s = kt::four_record_fixture();
  auto hits = search_topk(s, QueryVector::from_raw(kt::kFixtureQuery), 3);
  ASSERT_EQ(hits.size(), 3u);
  EXPECT_EQ(hits[0].record_id, 1u);
  EXPECT_EQ(hits[1].record_id, 2u);
  EXPECT_EQ(hits[2].record_id, 0u);
  EXPECT_NEAR(hits[0].distance, 0.04, 1e-6);
  EXPECT_NEAR(hits[1].distance, 0.20, 1e-6);
  EXPECT_NEAR(hits[2].distance, 0.40, 1e-6);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(hits[i].rank, i + 1);
}

TEST(Search, FixtureLabelFilter) {
  auto s = kt::four_record_fixture();
  SearchFilter f;
  f.label_ids = std::vector<LabelId>{*s.label_id("B")};
  auto hits = search_topk(s, QueryVector::from_raw(kt::kFixtureQuery), 3, f);
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].record_id, 2u);
  EXPECT_EQ(hits[1].record_id, 3u);
  EXPECT_NEAR(hits[0].distance, 0.20, 1e-6);
  EXPECT_NEAR(hits[1].distance, 0.72, 1e-6);
}

TEST(Search, KIsClamped) {
  auto s = kt::four_record_fixture();
  auto hits = search_topk(s, QueryVector::from_raw(kt::kFixtureQuery), 100);
  ASSERT_EQ(hits.size(), 4u);
  for (std::size_t i = 1; i < hits.size(); ++i) EXPECT_LE(hits[i - 1].distance, hits[i].distance);
}

TEST(Search, EmptyResultsAndErrors) {
  KnowledgeStore empty(2);
  auto q = QueryVector::from_raw(kt::kFixtureQuery);
  EXPECT_TRUE(search_topk(empty, q, 3).empty());
  auto s = kt::four_record_fixture();
  SearchFilter none;
  none.label_ids = std::vector<LabelId>{};
  EXPECT_TRUE(search_topk(s, q, 3, none).empty());
  EXPECT_THROW(search_topk(s, QueryVector::from_raw(std::vector<float>{1, 2, 3}), 3), Error);
  EXPECT_THROW(search_topk(s, q, 0), Error);
  EXPECT_TRUE(batch_search(s, std::vector<QueryVector>{}, 3).empty());
}

TEST(Search, TiesBreakByInsertionOrder) {
  KnowledgeStore s(2);
  for (int i = 0; i < 10; ++i) s.ingest(std::vector<float>{1, 1}, {"A"}, "dup");
  auto hits = search_topk(s, QueryVector::from_raw(std::vector<float>{1, 0}), 4);
  ASSERT_EQ(hits.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(hits[i].record_id, i);
}

TEST(SearchProperty, MatchesNaiveOracle) {
  std::mt19937_64 rng(2024);
  for (std::size_t d : {2u, 16u, 512u}) {
    for (int trial = 0; trial < 60; ++trial) {
      auto c = kt::random_search_case(rng, d == 512 ? 300 : 1500, d);
      auto q = QueryVector::from_raw(c.query_raw);
      auto got = search_topk(c.store, q, c.k, c.filter);
      auto want = kt::naive_topk(c.store.export_state(), q.vector, c.k, c.oracle_filter);
      ASSERT_EQ(kt::compare_to_oracle(got, want, 1e-5), "") << "d=" << d << " trial " << trial;
    }
  }
}

TEST(SearchProperty, FilterSoundAndComplete) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    auto c = kt::random_search_case(rng, 400, 8);
    auto q = QueryVector::from_raw(c.query_raw);
    auto got = search_topk(c.store, q, c.k, c.filter);
    auto canon = c.filter.canonical();
    double worst = got.empty() ? -1 : got.back().distance;
    std::size_t matching = 0;
    for (const auto& r : c.store.export_state().records) {
      const bool ok = !r.deleted && canon.matches(r.id, r.labels, r.task_id);
      if (ok) ++matching;
      const bool returned = std::any_of(got.begin(), got.end(),
                                        [&](const Neighbor& n) { return n.record_id == r.id; });
      if (returned) {
        EXPECT_TRUE(ok);
      }
      if (ok && !returned && !got.empty()) {
        EXPECT_GE(1.0 - kt::naive_dot(q.vector, r.vector), worst - 1e-12);
      }
    }
    EXPECT_EQ(got.size(), std::min(c.k, matching));
  }
}

TEST(SearchProperty, ScaleInvariance) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    auto c = kt::random_search_case(rng, 300, 16);
    auto base = search_topk(c.store, QueryVector::from_raw(c.query_raw), c.k, c.filter);
    for (float scale : {0.5f, 2.0f, 1024.0f}) {
      auto scaled = c.query_raw;
      for (auto& x : scaled) x *= scale;
      auto hits = search_topk(c.store, QueryVector::from_raw(scaled), c.k, c.filter);
      ASSERT_EQ(hits.size(), base.size());
      for (std::size_t i = 0; i < hits.size(); ++i) {
        EXPECT_EQ(hits[i].record_id, base[i].record_id);
        EXPECT_EQ(hits[i].rank, base[i].rank);
      }
    }
  }
}

TEST(SearchProperty, ThreadCountDoesNotChangeResults) {
  std::mt19937_64 rng(31);
  KnowledgeStore s(16);
  for (int i = 0; i < 20000; ++i) {
    s.ingest(kt::random_vector(rng, 16), {"L" + std::to_string(i % 7)}, "x");
  }
  std::vector<RecordId> dead;
  for (RecordId id = 0; id < 20000; id += 5) dead.push_back(id);
  s.remove(dead);
  for (int q = 0; q < 20; ++q) {
    auto query = QueryVector::from_raw(kt::random_vector(rng, 16));
    auto single = search_topk(s, query, 50, {}, {1, 1});
    for (unsigned t : {2u, 3u, 8u, 0u}) {
      EXPECT_EQ(search_topk(s, query, 50, {}, {t, 1000}), single);
    }
    EXPECT_EQ(search_topk(s, query, 50), single);
  }
}

TEST(SearchProperty, BatchEqualsIndividualCalls) {
  std::mt19937_64 rng(41);
  auto c = kt::random_search_case(rng, 2000, 16);
  std::vector<QueryVector> queries;
  for (int i = 0; i < 64; ++i) queries.push_back(QueryVector::from_raw(kt::random_vector(rng, 16)));
  for (unsigned t : {1u, 4u, 0u}) {
    auto batch = batch_search(c.store, queries, 7, c.filter, t);
    ASSERT_EQ(batch.size(), queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
      EXPECT_EQ(batch[i], search_topk(c.store, queries[i], 7, c.filter));
    }
  }
  std::vector<QueryVector> same(1000, queries[0]);
  auto batch = batch_search(c.store, same, 5);
  for (const auto& b : batch) EXPECT_EQ(b, batch[0]);
}

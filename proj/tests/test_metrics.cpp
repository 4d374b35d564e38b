#include <gtest/gtest.h>

#include <sstream>

#include "mmrec/evaluation/metrics.hpp"
#include "support/exact_gtest.hpp"

using mmrec::testing::ExactValue;
MMREC_EXACT_CHECKS("metrics");

namespace mmrec {
namespace {

TEST(Rank, SpanAndVectorOverloadsAgree) {
  const std::vector<float> s{0.3f, 0.3f, 0.1f, 0.7f};
  EXPECT_EQ(rank_of_target(std::span<const float>(s), 1), rank_of_target(s, 1));
  EXPECT_EQ(rank_of_target(s, 1), 3u);
  EXPECT_EQ(rank_of_target(s, 0), 2u);
}

TEST(Rank, SingleCandidateIsRankOne) { EXPECT_EQ(rank_of_target(std::vector<double>{-5.0}, 0), 1u); }

TEST(Rank, TargetOutsideScoresIsAnIndexError) {
  EXPECT_THROW(rank_of_target(std::vector<double>{1.0, 2.0}, 2), IndexError);
  EXPECT_THROW(rank_of_target(std::vector<double>{}, 0), IndexError);
}

TEST(Metrics, RankZeroCountsAsAMiss) {
  EXPECT_EQ(recall_at_k(0, 10), 0.0);
  EXPECT_EQ(ndcg_at_k(0, 10), 0.0);
}

TEST(Metrics, EmptyRankListAggregatesToZeros) {
  const auto r = aggregate_ranks(std::vector<std::size_t>{});
  EXPECT_EQ(r.users, 0u);
  for (std::size_t k : kDefaultKs) {
    EXPECT_EQ(r.recall_at(k), 0.0);
    EXPECT_EQ(r.ndcg_at(k), 0.0);
  }
}

TEST(Metrics, EvaluateScoresErrors) {
  EXPECT_THROW(evaluate_scores(std::vector<std::vector<double>>{}, {}), ConfigError);
  EXPECT_THROW(evaluate_scores(std::vector<std::vector<double>>{{1.0}}, {0, 0}), ShapeError);
  EXPECT_THROW(evaluate_scores(std::vector<std::vector<double>>{{1.0, 2.0}}, {5}), IndexError);
}

TEST(Metrics, MissingCutoffIsNotFound) {
  const auto r = aggregate_ranks(std::vector<std::size_t>{1, 2}, {3});
  EXPECT_NO_THROW(r.ndcg_at(3));
  EXPECT_THROW(r.ndcg_at(10), NotFoundError);
  EXPECT_THROW(r.recall_at(5), NotFoundError);
}

TEST(MetricTsv, HeaderSixDecimalsAndConfigRow) {
  const auto r = aggregate_ranks(std::vector<std::size_t>{1, 4, 30});
  std::ostringstream os;
  write_metric_tsv(os, r, std::string(R"({"seed":7})"));
  const std::string want =
      "metric\tvalue\n"
      "recall@5\t0.666667\n"
      "recall@10\t0.666667\n"
      "recall@20\t0.666667\n"
      "ndcg@5\t0.476892\n"
      "ndcg@10\t0.476892\n"
      "ndcg@20\t0.476892\n"
      "users\t3\n"
      "config\t{\"seed\":7}\n";
  EXPECT_EQ(os.str(), want);
}

TEST(MetricTsv, ConfigRowIsOptional) {
  std::ostringstream os;
  write_metric_tsv(os, aggregate_ranks(std::vector<std::size_t>{1}, {1}));
  EXPECT_EQ(os.str(), "metric\tvalue\nrecall@1\t1.000000\nndcg@1\t1.000000\nusers\t1\n");
}

TEST(EarlyStopping, ZeroPatienceIsRejected) { EXPECT_THROW(EarlyStopping(0), ConfigError); }

TEST(EarlyStopping, StrictImprovementResetsTheCounter) {
  EarlyStopping es(2);
  EXPECT_EQ(es.update(0.1), EarlyStopDecision::proceed);
  EXPECT_EQ(es.update(0.1), EarlyStopDecision::proceed);
  EXPECT_FALSE(es.improved());
  EXPECT_EQ(es.update(0.2), EarlyStopDecision::proceed);
  EXPECT_TRUE(es.improved());
  EXPECT_EQ(es.update(0.15), EarlyStopDecision::proceed);
  EXPECT_EQ(es.update(0.2), EarlyStopDecision::stop);
  EXPECT_EQ(es.best_update(), 3u);
  EXPECT_DOUBLE_EQ(es.best(), 0.2);
  EXPECT_EQ(es.updates(), 5u);
}

}  // namespace
}  // namespace mmrec

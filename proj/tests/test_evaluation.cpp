#include <gtest/gtest.h>

#include <filesystem>

#include "mmrec/evaluation/analysis.hpp"
#include "mmrec/experiment.hpp"
#include "support/exact_gtest.hpp"
#include "support/temp_dir.hpp"
#include "support/toy.hpp"

using mmrec::testing::ExactValue;
MMREC_EXACT_CHECKS("evaluation");

namespace mmrec {
namespace {

using testing::kToySources;
using testing::kToyTarget;

struct ToyTarget {
  Dataset data = synth_generate(testing::toy_synth(5)).dataset;
  FeatureTable<float> table = FeatureTable<float>::build(data);
  TargetData td = build_target_data(data, table, kToyTarget, {"d0", "d1"});
};

TEST(Popularity, ReportAggregatesTheRanks) {
  const ToyTarget t;
  const auto ranks = popularity_ranks(t.td, SplitMode::test);
  ASSERT_EQ(ranks.size(), eval_cases(t.td, SplitMode::test).size());
  EXPECT_EQ(popularity_report(t.td, SplitMode::test), aggregate_ranks(ranks));
  for (std::size_t r : ranks) EXPECT_LE(r, t.td.vocab_ids.size());
}

TEST(Popularity, TargetFrequenciesAlignWithCases) {
  const ToyTarget t;
  const auto freq = target_frequencies(t.td, SplitMode::valid);
  const auto cases = eval_cases(t.td, SplitMode::valid);
  ASSERT_EQ(freq.size(), cases.size());
  for (std::size_t i = 0; i < cases.size(); ++i)
    EXPECT_EQ(freq[i], t.td.train_frequency[t.td.users[cases[i].user].vocab[cases[i].k]]);
}

TEST(PopularityGroups, EmptyGroupsAreLeftOut) {
  const std::vector<std::size_t> ours{1, 2, 3, 4};
  const std::vector<std::size_t> base{2, 2, 5, 9};
  const std::vector<double> freq{0.0, 1.0, 30.0, 31.0};
  const auto rep = popularity_group_report(ours, base, freq, {0.0, 5.0, 20.0, 50.0});
  ASSERT_EQ(rep.groups.size(), 2u);
  EXPECT_EQ(rep.groups[0].index, 1u);
  EXPECT_EQ(rep.groups[0].ours.users, 2u);
  EXPECT_EQ(rep.groups[1].index, 3u);
  EXPECT_EQ(rep.groups[1].lower, 20.0);
  EXPECT_EQ(rep.groups[1].upper, 50.0);
  EXPECT_EQ(rep.groups[1].baseline, aggregate_ranks(std::vector<std::size_t>{5, 9}));
}

TEST(PopularityGroups, LengthMismatchIsAShapeError) {
  const std::vector<std::size_t> a{1, 2};
  const std::vector<std::size_t> b{1};
  const std::vector<double> f{0.0, 1.0};
  EXPECT_THROW(popularity_group_report(a, b, f, {1.0}), ShapeError);
}

TEST(Masking, RatioOutsideTheUnitIntervalIsRejected) {
  const ToyTarget t;
  const auto& stores = t.data.content.at(kToyTarget);
  EXPECT_THROW(modality_mask(stores, Modality::text, -0.1, 1), ConfigError);
  EXPECT_THROW(modality_mask(stores, Modality::text, 1.5, 1), ConfigError);
}

TEST(Masking, OnlyTheTargetDomainLosesEntries) {
  const ToyTarget t;
  const Dataset masked = mask_target(t.data, kToyTarget, Modality::image, 1.0, 3);
  EXPECT_EQ(masked.content.at(kToyTarget)[Modality::image].size(), 0u);
  EXPECT_EQ(masked.content.at(kToyTarget)[Modality::text].size(), t.data.content.at(kToyTarget)[Modality::text].size());
  for (const auto& d : kToySources)
    EXPECT_EQ(masked.content.at(d)[Modality::image].size(), t.data.content.at(d)[Modality::image].size());
  EXPECT_THROW(mask_target(t.data, "nowhere", Modality::text, 0.5, 3), ConfigError);
}

TEST(Ablation, WritesOneReportPerVariantAndASummary) {
  testing::TempDir dir("ablation");
  ExperimentConfig c;
  c.output_dir = dir.str();
  c.source_domains = kToySources;
  c.target_domain = kToyTarget;
  c.synth = testing::toy_synth(5);
  c.training = testing::toy_training(c.synth);
  c.training.pretrain_epochs = 1;
  c.training.max_epochs = 1;
  const Dataset data = synth_generate(c.synth).dataset;
  const std::vector<AblationVariant> variants{AblationVariant::full, AblationVariant::wo_cl};
  const auto out = run_ablation(c, data, variants);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(c.path("ablation_full.tsv")));
  EXPECT_TRUE(std::filesystem::exists(c.path("ablation_w_o_CL.tsv")));
  const std::string summary = testing::read_file(c.path("ablation.tsv"));
  EXPECT_EQ(summary.rfind("variant\trecall@5\trecall@10\trecall@20\tndcg@5\tndcg@10\tndcg@20\n", 0), 0u);
  EXPECT_NE(summary.find("\nw/o CL\t"), std::string::npos);
  EXPECT_EQ(out, run_ablation(c, data, variants, {}, false));
}

}  // namespace
}  // namespace mmrec

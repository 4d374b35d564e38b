#include <gtest/gtest.h>

#include <sstream>

#include "mmrec/corpus.hpp"
#include "mmrec/synth.hpp"
#include "support/exact_gtest.hpp"
#include "support/temp_dir.hpp"
#include "support/toy.hpp"

using mmrec::testing::ExactValue;
MMREC_EXACT_CHECKS("corpus");

namespace mmrec {
namespace {

std::vector<Interaction> parse(const std::string& text) {
  std::istringstream in(text);
  return parse_interactions(in);
}

TEST(Interactions, ErrorsCarryTheLineNumber) {
  try {
    parse("u1\ti1\td\t1\nu1\ti2\td\tlater\n");
    FAIL() << "no error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(parse("u1\ti1\td\t-3\n"), ParseError);
  EXPECT_THROW(parse("u1\t\td\t3\n"), ParseError);
  EXPECT_THROW(parse("u1\ti1\td\t3\textra\n"), ParseError);
}

TEST(Interactions, AcceptsCrlfAndBlankLines) {
  const auto r = parse("u1\ti1\td\t1\r\n\nu2\ti2\td\t2\n");
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[0].timestamp, 1);
  EXPECT_EQ(r[1].item_id, "i2");
}

TEST(Interactions, WriteThenParseIsIdentity) {
  const std::vector<Interaction> recs{{"u1", "a", "d0", 5}, {"u2", "b", "d1", 0}};
  std::ostringstream out;
  write_interactions(out, recs);
  EXPECT_EQ(parse(out.str()), recs);
}

TEST(EmbeddingStore, RejectsBadHeadersAndDuplicates) {
  auto load = [](const std::string& text) {
    std::istringstream in(text);
    return parse_embedding_store(in, Modality::image);
  };
  EXPECT_THROW(load(""), FormatError);
  EXPECT_THROW(load("dims=2\n"), FormatError);
  EXPECT_THROW(load("dim=0\n"), FormatError);
  EXPECT_THROW(load("dim=1\na\t1\na\t2\n"), FormatError);
  EXPECT_THROW(load("dim=1\na\tx\n"), FormatError);
  EXPECT_THROW(load("dim=2\na\t1\n"), FormatError);
  EXPECT_EQ(load("dim=1\n").size(), 0u);
}

TEST(EmbeddingStore, WrittenValuesParseBackToTheSameFloats) {
  ModalityStore s(Modality::cross, 3);
  s.insert("x", {0.1, -2.5e-7, 123456.789});
  std::ostringstream out;
  write_embedding_store(out, s);
  std::istringstream in(out.str());
  const auto back = parse_embedding_store(in, Modality::cross);
  const auto* v = back.find("x");
  ASSERT_NE(v, nullptr);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(static_cast<float>((*v)[i]), static_cast<float>((*s.find("x"))[i]));
}

TEST(MixedFlow, UnknownUserIsAnError) {
  EXPECT_THROW(build_mixed_flow(parse("u1\ti\td\t1\n"), "u2"), NotFoundError);
}

TEST(MixedFlow, RestrictedToDomains) {
  const auto recs = parse("u1\ta\td0\t1\nu1\tb\td1\t2\nu2\tc\td1\t3\n");
  const auto flows = build_all_mixed_flows(recs, {"d0"});
  ASSERT_EQ(flows.size(), 1u);
  EXPECT_EQ(flows.at("u1").items.size(), 1u);
}

TEST(Truncate, ZeroWindowIsRejected) {
  EXPECT_THROW(truncate_left(std::vector<int>{1}, 0), ConfigError);
}

TEST(DatasetFiles, SaveLoadRoundTrip) {
  const auto sd = synth_generate(testing::toy_synth(5));
  testing::TempDir dir("corpus");
  save_dataset(dir.str(), sd.dataset);
  const auto back = load_dataset(dir.str(), sd.dataset.domains());
  EXPECT_EQ(back.interactions, sd.dataset.interactions);
  ASSERT_EQ(back.content.size(), sd.dataset.content.size());
  for (const auto& [domain, stores] : sd.dataset.content) {
    for (Modality m : kModalities) {
      EXPECT_EQ(back.content.at(domain)[m].vectors(), stores[m].vectors()) << domain;
    }
  }
}

TEST(DatasetFiles, MissingFileIsAnIoError) {
  testing::TempDir dir("corpus_missing");
  EXPECT_THROW(load_dataset(dir.str(), {"d0"}), IoError);
}

}  // namespace
}  // namespace mmrec

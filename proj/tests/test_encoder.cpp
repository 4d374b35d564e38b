#include <gtest/gtest.h>

#include "mmrec/encoder.hpp"
#include "support/exact_gtest.hpp"

using mmrec::testing::ExactValue;
MMREC_EXACT_CHECKS("encoder");

namespace mmrec {
namespace {

using M = Matrix<double>;

TransformerStack<double> stack_of(std::size_t n_max) {
  EncoderShape s;
  s.model_dim = 6;
  s.layers = 2;
  s.heads = 3;
  s.ffn_dim = 8;
  s.n_max = n_max;
  TransformerStack<double> stack("enc", s);
  std::mt19937_64 rng(2);
  stack.init(rng, 0.4);
  return stack;
}

TEST(Encoder, StackedBatchMatchesSeparateRuns) {
  auto stack = stack_of(6);
  const M a = M::Random(4, 6), b = M::Random(2, 6);
  M both(6, 6);
  both << a, b;
  SequenceLayout layout;
  layout.append(4);
  layout.append(2);
  Tape<double> t(false);
  const M joint = encode<double>(t.constant(both), stack, layout).value();
  EXPECT_LT((joint.topRows(4) - encode(a, stack)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((joint.bottomRows(2) - encode(b, stack)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encoder, LongSequencesMustBeTruncatedFirst) {
  auto stack = stack_of(3);
  EXPECT_THROW(encode(M(M::Zero(4, 6)), stack), RangeError);
  EXPECT_NO_THROW(encode(M(M::Zero(3, 6)), stack));
}

TEST(Encoder, WidthAndHeadsAreValidated) {
  auto stack = stack_of(4);
  EXPECT_THROW(encode(M(M::Zero(2, 5)), stack), ShapeError);
  EncoderShape bad;
  bad.model_dim = 6;
  bad.heads = 4;
  EXPECT_THROW(TransformerStack<double>("x", bad), ConfigError);
}

TEST(Encoder, PositionOutsideTheTableIsRejected) {
  PositionTable<double> pos("p", 2, 3);
  const std::array<M, 3> proj{M::Zero(1, 1), M::Zero(1, 1), M::Zero(1, 1)};
  EXPECT_THROW(concat_input(proj, 2, pos), RangeError);
}

TEST(Encoder, ContextReprBounds) {
  const M h = M::Random(3, 4);
  EXPECT_THROW(user_context_repr(h, 0), TooShortError);
  EXPECT_THROW(user_context_repr(h, 4), RangeError);
  EXPECT_EQ(user_context_repr(h, 3), h.row(2));
}

TEST(Encoder, RenamedCopyKeepsValues) {
  EncoderShape s;
  s.model_dim = 6;
  s.layers = 1;
  s.heads = 2;
  s.ffn_dim = 4;
  s.n_max = 3;
  Encoder<double> enc("encoder", s);
  std::mt19937_64 rng(1);
  enc.init(rng, 0.1);
  auto copy = enc.renamed("encoder.", "encoder_mixed.");
  std::vector<std::string> names;
  copy.for_each([&](Tensor<double>& t) { names.push_back(t.name); });
  for (const auto& n : names) EXPECT_EQ(n.rfind("encoder_mixed.", 0), 0u) << n;
  EXPECT_EQ(copy.positions.table.data, enc.positions.table.data);
}

TEST(BatchInputs, IdRowsAreAdded) {
  PositionTable<double> pos("p", 4, 2);
  pos.table.data.setZero();
  Tape<double> t(false);
  auto projected = t.constant((M(3, 2) << 1, 1, 2, 2, 3, 3).finished());
  auto ids = t.constant((M(2, 2) << 10, 0, 0, 10).finished());
  BatchInputs<double> in;
  const std::vector<std::size_t> rows{2, 0}, id_rows{1, 0};
  in.add_sequence(rows, id_rows);
  const M x = in.build(projected, pos, ids).value();
  EXPECT_EQ(x, (M(2, 2) << 3, 13, 11, 1).finished());
}

}  // namespace
}  // namespace mmrec

#include <gtest/gtest.h>

#include <cmath>

#include "scribe/collapse.hpp"
#include "scribe/optim.hpp"
#include "test_util.hpp"

namespace scribe {
namespace {

void zero_all(ParameterSet& set) {
  for (auto& p : set.all()) std::fill(p.value->data().begin(), p.value->data().end(), 0.0);
}

TEST(StandardCollapse, SumsRows) {
  auto a = make_tensor({2, 3, 1}, 1.0);
  auto z = standard_collapse(nullptr, a);
  EXPECT_EQ(z->shape(), (Shape{3, 1}));
  for (double v : z->data()) EXPECT_EQ(v, 2.0);
  Rng rng(1);
  auto one = test::random_tensor({1, 4, 2}, rng);
  EXPECT_EQ(standard_collapse(nullptr, one)->values(), one->values());
}

TEST(ColumnSoftmax, Examples) {
  auto w = column_softmax(nullptr, make_tensor({4, 3}, 0.0));
  for (double v : w->data()) EXPECT_DOUBLE_EQ(v, 0.25);
  auto p = column_softmax(nullptr, make_tensor({2, 1}, {0.0, std::log(3.0)}));
  EXPECT_NEAR((*p)[0], 0.25, 1e-15);
  EXPECT_NEAR((*p)[1], 0.75, 1e-15);
}

TEST(WeightedCollapse, UniformGivesColumnMean) {
  Rng rng(2);
  auto a = test::random_tensor({3, 4, 2}, rng);
  auto z = weighted_collapse(nullptr, a, make_tensor({3, 4}, 1.0 / 3.0));
  auto s = standard_collapse(nullptr, a);
  for (std::size_t k = 0; k < z->size(); ++k) EXPECT_NEAR(3.0 * (*z)[k], (*s)[k], 1e-12);
}

TEST(WeightedCollapse, OneHotSelectsRowExactly) {
  Rng rng(3);
  auto a = test::random_tensor({3, 4, 2}, rng);
  auto w = make_tensor({3, 4});
  for (std::size_t i = 0; i < 4; ++i) (*w)[2 * 4 + i] = 1.0;
  auto z = weighted_collapse(nullptr, a, w);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t d = 0; d < 2; ++d) EXPECT_EQ((*z)[i * 2 + d], (*a)[(2 * 4 + i) * 2 + d]);
}

TEST(WeightedCollapse, SingleRowEqualsStandard) {
  Rng rng(4);
  auto a = test::random_tensor({1, 5, 3}, rng);
  auto w = column_softmax(nullptr, test::random_tensor({1, 5}, rng));
  EXPECT_EQ(weighted_collapse(nullptr, a, w)->values(), standard_collapse(nullptr, a)->values());
}

TEST(WeightedCollapse, LinearInFeatures) {
  Rng rng(5);
  auto a1 = test::random_tensor({3, 4, 2}, rng);
  auto a2 = test::random_tensor({3, 4, 2}, rng);
  auto w = column_softmax(nullptr, test::random_tensor({3, 4}, rng));
  auto sum = add_all(nullptr, {a1, a2});
  auto lhs = weighted_collapse(nullptr, sum, w);
  auto r1 = weighted_collapse(nullptr, a1, w);
  auto r2 = weighted_collapse(nullptr, a2, w);
  for (std::size_t k = 0; k < lhs->size(); ++k) EXPECT_NEAR((*lhs)[k], (*r1)[k] + (*r2)[k], 1e-12);
}

TEST(WeightedCollapse, RejectsMismatchedWeights) {
  EXPECT_THROW(weighted_collapse(nullptr, make_tensor({3, 4, 2}), make_tensor({4, 3})),
               DimensionError);
}

TEST(Attention, ZeroParametersGiveZeroScoresAndColumnMean) {
  ParameterSet set;
  Rng rng(6);
  auto p = AttentionParams::create(set, 2, 3, rng);
  zero_all(set);
  auto a = test::random_tensor({4, 5, 2}, rng);
  auto scores = attention_scores(nullptr, a, make_tensor({4, 5}), p);
  for (double v : scores->data()) EXPECT_EQ(v, 0.0);
  auto r = iterate_collapse(nullptr, a, 1, p);
  auto s = standard_collapse(nullptr, a);
  for (std::size_t k = 0; k < s->size(); ++k) EXPECT_NEAR((*r.sequence)[k], (*s)[k] / 4.0, 1e-12);
  EXPECT_THROW(attention_scores(nullptr, a, make_tensor({5, 4}), p), DimensionError);
}

TEST(Attention, OutputLengthIsStepsTimesWidth) {
  ParameterSet set;
  Rng rng(7);
  auto p = AttentionParams::create(set, 3, 4, rng);
  for (std::size_t T : {1u, 2u, 4u}) {
    auto a = test::random_tensor({3, 6, 3}, rng);
    auto r = iterate_collapse(nullptr, a, T, p);
    EXPECT_EQ(r.sequence->shape(), (Shape{T * 6, 3}));
    EXPECT_EQ(r.map.steps, T);
    EXPECT_EQ(r.weights.size(), T);
  }
  EXPECT_THROW(iterate_collapse(nullptr, make_tensor({2, 2, 3}), 0, p), DimensionError);
}

TEST(Attention, ColumnsSumToOneOnRandomModels) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    ParameterSet set;
    Rng rng(100 + seed);
    const std::size_t H = 1 + rng.integer(0, 6), W = 1 + rng.integer(0, 8), D = 1 + rng.integer(0, 4);
    auto p = AttentionParams::create(set, D, 1 + rng.integer(0, 5), rng);
    for (auto& q : set.all()) init_uniform(*q.value, 1, rng);  // large weights
    auto a = test::random_tensor({H, W, D}, rng, 3.0);
    auto r = iterate_collapse(nullptr, a, 3, p);
    EXPECT_LE(r.map.max_column_error(), kColumnSumTolerance) << "seed " << seed;
    for (double v : r.map.weights) {
      EXPECT_GT(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Attention, ReinitializeOnlyTouchesAttention) {
  ParameterSet set;
  Rng rng(8);
  auto other = set.add("encoder.x", {3});
  init_uniform(*other, 1, rng);
  auto p = AttentionParams::create(set, 2, 3, rng);
  const auto before_other = set.checksum("encoder.");
  const auto before_attn = set.checksum("attention.");
  Rng fresh(99);
  p.reinitialize(fresh);
  EXPECT_EQ(set.checksum("encoder."), before_other);
  EXPECT_NE(set.checksum("attention."), before_attn);
}

TEST(Attention, IteratedCollapseGradcheck) {
  ParameterSet set;
  Rng rng(9);
  auto p = AttentionParams::create(set, 2, 3, rng);
  for (auto& d : p.scan) init_uniform(*d.bias, 1, rng);
  auto a = test::random_tensor({6, 6, 2}, rng);
  auto targets = targets_of(set);
  targets.push_back({"a", a});
  GradcheckOptions opt;
  opt.max_entries = 40;
  auto report = gradcheck(targets, [&](Tape* tape) {
    return random_projection(tape, iterate_collapse(tape, a, 2, p).sequence, 5);
  }, opt);
  EXPECT_LT(report.max_error(), 1e-4) << report.str();
}

TEST(AttentionMap, CentroidOfOneHotRows) {
  AttentionMap m;
  m.steps = 2;
  m.height = 3;
  m.width = 2;
  m.weights = {1, 1, 0, 0, 0, 0,   // step 1: row 0
               0, 0, 0, 0, 1, 1};  // step 2: row 2
  EXPECT_DOUBLE_EQ(m.row_centroid(0), 0.0);
  EXPECT_DOUBLE_EQ(m.row_centroid(1), 2.0);
  EXPECT_DOUBLE_EQ(m.max_column_error(), 0.0);
}

}  // namespace
}  // namespace scribe

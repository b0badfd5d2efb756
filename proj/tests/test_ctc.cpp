#include <gtest/gtest.h>

#include <cmath>

#include "scribe/ctc.hpp"
#include "scribe/parameter.hpp"
#include "test_util.hpp"

namespace scribe {
namespace {

Tensor logits_for_argmax(const std::vector<int>& frames, std::size_t classes) {
  Tensor t({frames.size(), classes});
  for (std::size_t f = 0; f < frames.size(); ++f) t[f * classes + static_cast<std::size_t>(frames[f])] = 5.0;
  return t;
}

LabelSeq random_target(Rng& rng, std::size_t max_len, int K) {
  LabelSeq t(static_cast<std::size_t>(rng.integer(0, static_cast<long long>(max_len))));
  for (auto& l : t) l = static_cast<int>(rng.integer(0, K - 1));
  return t;
}

TEST(Ctc, SingleFrameSingleLabel) {
  EXPECT_NEAR(ctc_loss(Tensor({1, 2}), {0}).loss, -std::log(0.5), 1e-12);
  EXPECT_NEAR(ctc_loss(Tensor({1, 2}), {0}).loss, 0.693147, 1e-6);
}

TEST(Ctc, EmptyTargetTwoFrames) {
  EXPECT_NEAR(ctc_loss(Tensor({2, 2}), {}).loss, 1.386294, 1e-6);
}

TEST(Ctc, ThreePathsOverTwoFrames) {
  EXPECT_NEAR(ctc_loss(Tensor({2, 2}), {0}).loss, -std::log(0.75), 1e-12);
  EXPECT_NEAR(ctc_loss(Tensor({2, 2}), {0}).loss, 0.287682, 1e-6);
}

TEST(Ctc, InfeasibleNamesLengths) {
  try {
    ctc_loss(Tensor({2, 3}), {1, 1});
    FAIL() << "expected InfeasibleError";
  } catch (const InfeasibleError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("Tseq = 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("minimum is 3"), std::string::npos) << msg;
  }
  EXPECT_EQ(ctc_min_frames({0, 0, 1, 1, 1}), 8u);
  EXPECT_THROW(ctc_loss(Tensor({3, 3}), {2}), DimensionError);  // blank used as a label
}

TEST(Ctc, DynamicProgramMatchesBruteForce) {
  Rng rng(2024);
  int checked = 0;
  for (int n = 0; n < 150; ++n) {
    const int K = static_cast<int>(rng.integer(1, 3));
    const std::size_t T = static_cast<std::size_t>(rng.integer(1, 6));
    Tensor logits({T, static_cast<std::size_t>(K + 1)});
    for (auto& v : logits.data()) v = rng.uniform(-3.0, 3.0);
    const LabelSeq target = random_target(rng, T, K);
    const double brute = ctc_brute_force(logits, target);
    if (ctc_min_frames(target) > T) {
      EXPECT_TRUE(std::isinf(brute));
      EXPECT_THROW(ctc_loss(logits, target), InfeasibleError);
      continue;
    }
    EXPECT_NEAR(ctc_loss(logits, target).loss, brute, 1e-9) << "instance " << n;
    ++checked;
  }
  EXPECT_GE(checked, 100);
}

TEST(Ctc, GradientMatchesFiniteDifferences) {
  Rng rng(31);
  for (int n = 0; n < 20; ++n) {
    const std::size_t T = static_cast<std::size_t>(rng.integer(2, 8));
    const int K = static_cast<int>(rng.integer(1, 4));
    Tensor logits({T, static_cast<std::size_t>(K + 1)});
    for (auto& v : logits.data()) v = rng.uniform(-2.0, 2.0);
    LabelSeq target = random_target(rng, T / 2, K);
    const auto r = ctc_loss(logits, target);
    for (std::size_t k = 0; k < logits.size(); ++k) {
      const double saved = logits[k];
      logits[k] = saved + 1e-5;
      const double up = ctc_loss(logits, target).loss;
      logits[k] = saved - 1e-5;
      const double down = ctc_loss(logits, target).loss;
      logits[k] = saved;
      const double numeric = (up - down) / 2e-5;
      const double den = std::max({std::abs(numeric), std::abs(r.grad[k]), 1e-6});
      EXPECT_LT(std::abs(numeric - r.grad[k]) / den, 1e-4) << "instance " << n << " entry " << k;
    }
  }
}

TEST(Ctc, LossIsNonNegativeAndZeroForCertainPath) {
  Rng rng(5);
  for (int n = 0; n < 50; ++n) {
    Tensor logits({4, 3});
    for (auto& v : logits.data()) v = rng.uniform(-4.0, 4.0);
    EXPECT_GE(ctc_loss(logits, random_target(rng, 2, 2)).loss, 0.0);
  }
  Tensor sure({3, 3}, -100.0);
  sure[0 * 3 + 0] = 0.0;
  sure[1 * 3 + 2] = 0.0;
  sure[2 * 3 + 1] = 0.0;
  EXPECT_NEAR(ctc_loss(sure, {0, 1}).loss, 0.0, 1e-12);
}

TEST(Ctc, LongSequenceStaysFinite) {
  Rng rng(6);
  Tensor logits({400, 12});
  for (auto& v : logits.data()) v = rng.uniform(-5.0, 5.0);
  LabelSeq target(120);
  for (auto& l : target) l = static_cast<int>(rng.integer(0, 10));
  const auto r = ctc_loss(logits, target);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_GT(r.loss, 0.0);
}

TEST(CtcBruteForce, Examples) {
  EXPECT_TRUE(std::isinf(ctc_brute_force(Tensor({1, 2}), {0, 0})));
  Tensor one({1, 3}, std::vector<double>{0.0, 1.0, 2.0});
  const double pblank = std::exp(2.0) / (1.0 + std::exp(1.0) + std::exp(2.0));
  EXPECT_NEAR(ctc_brute_force(one, {}), -std::log(pblank), 1e-12);
  EXPECT_THROW(ctc_brute_force(Tensor({20, 4}), {0}), DimensionError);
}

TEST(BestPath, MappingRule) {
  // classes: a=0, b=1, blank=2
  EXPECT_EQ(best_path_decode(logits_for_argmax({0, 0, 2, 0}, 3)), (LabelSeq{0, 0}));
  EXPECT_EQ(best_path_decode(logits_for_argmax({2, 2, 2}, 3)), (LabelSeq{}));
  EXPECT_EQ(best_path_decode(logits_for_argmax({0, 2, 1, 1}, 3)), (LabelSeq{0, 1}));
  EXPECT_EQ(best_path_decode(Tensor({2, 3})), (LabelSeq{0}));  // ties go to index 0
}

TEST(BestPath, DecodedPathHasPositiveProbability) {
  Rng rng(7);
  for (int n = 0; n < 50; ++n) {
    Tensor logits({6, 4});
    for (auto& v : logits.data()) v = rng.uniform(-3.0, 3.0);
    const auto path = best_path_decode(logits);
    EXPECT_TRUE(std::isfinite(ctc_loss(logits, path).loss));
    EXPECT_LT(ctc_brute_force(logits, path), std::numeric_limits<double>::infinity());
  }
}

TEST(CtcPerLine, SumsIndependentSegments) {
  Rng rng(8);
  Tensor s1({4, 3}), s2({5, 3});
  for (auto& v : s1.data()) v = rng.uniform(-1, 1);
  for (auto& v : s2.data()) v = rng.uniform(-1, 1);
  const auto one = ctc_per_line({s1}, {{0, 1}});
  EXPECT_DOUBLE_EQ(one.loss, ctc_loss(s1, {0, 1}).loss);
  const auto both = ctc_per_line({s1, s2}, {{0, 1}, {1}});
  EXPECT_DOUBLE_EQ(both.loss, ctc_loss(s1, {0, 1}).loss + ctc_loss(s2, {1}).loss);
  const auto swapped = ctc_per_line({s1, s2}, {{0, 1}, {0, 0}});
  EXPECT_EQ(both.grads[0].values(), swapped.grads[0].values());
  EXPECT_THROW(ctc_per_line({s1, s2}, {{0}}), DimensionError);
}

TEST(CtcNode, ScalesGradientIntoLogits) {
  auto logits = make_tensor({3, 3});
  logits->ensure_grad();
  Tape tape;
  const double loss = ctc_loss_node(&tape, logits, {1}, 0.5);
  tape.backward();
  const auto r = ctc_loss(*logits, {1});
  EXPECT_EQ(loss, r.loss);
  for (std::size_t k = 0; k < r.grad.size(); ++k) EXPECT_DOUBLE_EQ(logits->grad()[k], 0.5 * r.grad[k]);
}

}  // namespace
}  // namespace scribe

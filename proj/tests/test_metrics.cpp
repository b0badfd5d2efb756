#include <gtest/gtest.h>

#include <sstream>

#include "scribe/metrics.hpp"
#include "scribe/parameter.hpp"

namespace scribe {
namespace {

std::vector<int> random_seq(Rng& rng) {
  std::vector<int> s(static_cast<std::size_t>(rng.integer(0, 7)));
  for (auto& v : s) v = static_cast<int>(rng.integer(0, 3));
  return s;
}

TEST(EditDistance, Examples) {
  EXPECT_EQ(char_edits("abc", "abc"), 0u);
  EXPECT_EQ(char_edits("abc", "abd"), 1u);
  EXPECT_EQ(char_edits("", "ab"), 2u);
  EXPECT_EQ(char_edits("kitten", "sitting"), 3u);
  EXPECT_EQ(char_edits("é1", "e1"), 1u);
}

TEST(EditDistance, IsAMetric) {
  Rng rng(4);
  for (int n = 0; n < 300; ++n) {
    const auto a = random_seq(rng), b = random_seq(rng), c = random_seq(rng);
    EXPECT_EQ(edit_distance(a, a), 0u);
    EXPECT_EQ(edit_distance(a, b), edit_distance(b, a));
    EXPECT_EQ(edit_distance(a, b) == 0, a == b);
    EXPECT_LE(edit_distance(a, c), edit_distance(a, b) + edit_distance(b, c));
  }
}

TEST(Words, SplitOnSpaceOnly) {
  EXPECT_EQ(split_words("  12 345  6 "), (std::vector<std::string>{"12", "345", "6"}));
  EXPECT_EQ(word_edits("12 34 56", "12 43 56"), 1u);
  EXPECT_EQ(word_edits("12 34", "1234"), 2u);
}

TEST(ErrorTally, RatesArePooledPercentages) {
  ErrorTally t;
  t.add("1234", "1234");
  EXPECT_EQ(t.cer(), 0.0);
  EXPECT_EQ(t.wer(), 0.0);
  t.add("12 34", "12 35");
  EXPECT_DOUBLE_EQ(t.cer(), 100.0 * 1 / 9);
  EXPECT_DOUBLE_EQ(t.wer(), 100.0 * 1 / 3);
  EXPECT_EQ(ErrorTally{}.cer(), 0.0);
}

}  // namespace
}  // namespace scribe

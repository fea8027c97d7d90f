#include <gtest/gtest.h>

#include <set>

#include "lbi/rng.hpp"

namespace lbi {
namespace {

TEST(Rng, SameSeedSameSequence) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, Mt19937SequenceIsTheStandardOne) {
  // The engine is seeded with splitmix64(seed); its 10000th output is fixed
  // by the standard for any seed, so compare against std directly.
  std::mt19937_64 ref(splitmix64(7));
  Rng r(7);
  for (int i = 0; i < 9999; ++i) r.next_u64(), ref();
  EXPECT_EQ(r.next_u64(), ref());
}

TEST(Rng, SplitStreamsAreDistinctAndDoNotAdvanceParent) {
  Rng root(3);
  Rng copy(3);
  Rng a = root.split("init.V"), b = root.split("init.W");
  EXPECT_NE(a.next_u64(), b.next_u64());
  EXPECT_EQ(root.next_u64(), copy.next_u64());
  EXPECT_EQ(root.split("x").next_u64(), Rng(3).split("x").next_u64());
}

TEST(Rng, UniformStaysInRange) {
  Rng r(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double v = r.uniform(-0.1, 0.1);
    ASSERT_GE(v, -0.1);
    ASSERT_LE(v, 0.1);
  }
}

TEST(Rng, BelowCoversRangeWithoutBias) {
  Rng r(5);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[r.below(7)];
  for (int c : counts) EXPECT_NEAR(c, n / 7, 5 * std::sqrt(n / 7.0));
}

TEST(Rng, NormalMoments) {
  Rng r(9);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

TEST(Rng, ShuffleIsAPermutation) {
  Rng r(11);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  shuffle(v, r);
  EXPECT_EQ(std::set<int>(v.begin(), v.end()).size(), 50u);
  std::vector<int> w(50);
  for (int i = 0; i < 50; ++i) w[i] = i;
  EXPECT_NE(v, w);
}

TEST(Rng, StreamIdIsFnv1a) {
  EXPECT_EQ(stream_id(""), 0xCBF29CE484222325ULL);
  EXPECT_EQ(stream_id("a"), 0xAF63DC4C8601EC8CULL);
}

}  // namespace
}  // namespace lbi

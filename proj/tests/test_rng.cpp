#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <vector>

#include "poigraph/rng.hpp"

using poigraph::Rng;

TEST(Rng, Fnv1aReferenceVectors) {
  EXPECT_EQ(poigraph::fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(poigraph::fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(poigraph::fnv1a64("foobar"), 0x85944171f73967e8ULL);
}

TEST(Rng, Mix64MatchesSplitMix64) {
  // first splitmix64 output from state 0
  EXPECT_EQ(poigraph::mix64(0), 0xe220a8397b1dcdafULL);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs |= x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, SplitIgnoresParentPosition) {
  Rng a(9);
  const Rng early = a.split("negatives");
  for (int i = 0; i < 50; ++i) a.next_u64();
  EXPECT_EQ(a.split("negatives"), early);
  EXPECT_NE(a.split("positives").key(), early.key());
  EXPECT_NE(a.split(std::uint64_t{1}).key(), a.split(std::uint64_t{2}).key());
}

TEST(Rng, UniformInUnitInterval) {
  Rng r(1);
  double sum = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.005);
}

TEST(Rng, BelowStaysInRangeAndCoversIt) {
  Rng r(5);
  for (std::uint64_t n : {1ULL, 2ULL, 3ULL, 7ULL, 1000ULL, (1ULL << 63) + 5}) {
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
      const auto x = r.below(n);
      ASSERT_LT(x, n);
      seen.insert(x);
    }
    if (n <= 7) EXPECT_EQ(seen.size(), n);
  }
}

TEST(Rng, BelowIsRoughlyUniform) {
  Rng r(11);
  std::vector<int> counts(6, 0);
  const int n = 60000;
  for (int i = 0; i < n; ++i) ++counts[r.below(6)];
  // chi-square with 5 dof; 20.5 is the 0.999 quantile
  double chi = 0;
  for (int c : counts) chi += (c - n / 6.0) * (c - n / 6.0) / (n / 6.0);
  EXPECT_LT(chi, 20.5);
}

TEST(Rng, NormalMoments) {
  Rng r(3);
  const int n = 200000;
  double s1 = 0, s2 = 0, s4 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s1 += z;
    s2 += z * z;
    s4 += z * z * z * z;
  }
  EXPECT_NEAR(s1 / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.015);
  EXPECT_NEAR(s4 / n, 3.0, 0.08);
}

TEST(Rng, ShuffleIsPermutationAndDeterministic) {
  std::vector<int> a(50), b(50);
  std::iota(a.begin(), a.end(), 0);
  b = a;
  Rng r1(8), r2(8);
  poigraph::shuffle(std::span<int>(a), r1);
  poigraph::shuffle(std::span<int>(b), r2);
  EXPECT_EQ(a, b);
  std::vector<int> sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_FALSE(std::is_sorted(a.begin(), a.end()));
}

TEST(Rng, ShuffleFirstPositionUniform) {
  std::vector<int> counts(4, 0);
  Rng r(21);
  for (int t = 0; t < 40000; ++t) {
    std::vector<int> v{0, 1, 2, 3};
    poigraph::shuffle(std::span<int>(v), r);
    ++counts[v[0]];
  }
  for (int c : counts) EXPECT_NEAR(c, 10000, 400);
}

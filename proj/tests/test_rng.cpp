// Copyright 2026 The memedial Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "memedial/rng.hpp"

namespace memedial {
namespace {

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    differs |= x != c.next();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, UniformAndBelowStayInRange) {
  Rng r(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(r.below(7), 7u);
    const int b = r.between(3, 5);
    EXPECT_GE(b, 3);
    EXPECT_LE(b, 5);
  }
}

TEST(Rng, NormalMoments) {
  Rng r(2);
  const int n = 200000;
  double sum = 0, sq = 0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal(1.0, 2.0);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  EXPECT_NEAR(mean, 1.0, 0.03);
  EXPECT_NEAR(std::sqrt(sq / n - mean * mean), 2.0, 0.03);
}

TEST(Rng, SampleIndicesDistinct) {
  Rng r(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = r.sample_indices(10, 5);
    EXPECT_EQ(s.size(), 5u);
    EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 5u);
    for (auto i : s) EXPECT_LT(i, 10u);
  }
  EXPECT_EQ(r.sample_indices(3, 10).size(), 3u);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(4);
  std::vector<int> v = {0, 1, 2, 3, 4, 5, 6, 7};
  r.shuffle(v);
  EXPECT_EQ(std::set<int>(v.begin(), v.end()).size(), 8u);
}

}  // namespace
}  // namespace memedial

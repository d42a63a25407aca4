#include "metasaea/pareto.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"

using namespace metasaea;

TEST(Dominance, BasicAndEqualPoints) {
  EXPECT_TRUE(dominates({1, 2}, {2, 2}));
  EXPECT_FALSE(dominates({2, 2}, {1, 2}));
  EXPECT_FALSE(dominates({1, 2}, {1, 2}));  // equal points: mutually non-dominating
  EXPECT_FALSE(dominates({1, 3}, {2, 2}));
}

TEST(Nds, HandInstance) {
  Mat pts = {{1, 2}, {2, 1}, {2, 2}};
  auto fronts = nds(pts);
  ASSERT_EQ(fronts.size(), 2u);
  EXPECT_EQ(fronts[0], (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(fronts[1], (std::vector<std::size_t>{2}));
}

TEST(Nds, SinglePointAndEmpty) {
  EXPECT_EQ(nds({{1, 2, 3}}).size(), 1u);
  EXPECT_TRUE(nds({}).empty());
}

TEST(Nds, DuplicatesShareAFront) {
  Mat pts = {{1, 1}, {1, 1}, {2, 2}};
  auto fronts = nds(pts);
  ASSERT_EQ(fronts.size(), 2u);
  EXPECT_EQ(fronts[0], (std::vector<std::size_t>{0, 1}));
}

TEST(Nds, AgreesWithBruteForceFirstFront) {
  Rng rng(31);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rng.below(64);
    const std::size_t m = 2 + rng.below(2);
    Mat pts(n, Vec(m));
    for (auto& p : pts)
      for (double& v : p) v = std::floor(rng.uniform(0, 6));  // grid -> many ties
    auto fronts = nds(pts);
    auto brute = oracles::brute_front(pts);
    ASSERT_FALSE(fronts.empty());
    auto f1 = fronts[0];
    std::sort(f1.begin(), f1.end());
    EXPECT_EQ(f1, brute);
    // later fronts: every member dominated by someone in an earlier front
    for (std::size_t k = 1; k < fronts.size(); ++k)
      for (std::size_t ix : fronts[k]) {
        bool dominated_earlier = false;
        for (std::size_t ex : fronts[k - 1])
          if (dominates(pts[ex], pts[ix])) dominated_earlier = true;
        EXPECT_TRUE(dominated_earlier);
      }
  }
}

TEST(Hypervolume, HandInstances) {
  EXPECT_DOUBLE_EQ(hypervolume({{1, 2}, {2, 1}}, {3, 3}), 3.0);
  EXPECT_DOUBLE_EQ(hypervolume({{0, 0}}, {1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(hypervolume({{2, 2}}, {1, 1}), 0.0);  // nothing dominates ref
  EXPECT_DOUBLE_EQ(hypervolume({}, {1, 1}), 0.0);
}

TEST(Hypervolume, OrderAndDuplicateInvariance) {
  Mat a = {{1, 2}, {2, 1}, {1.5, 1.5}};
  Mat b = {{1.5, 1.5}, {2, 1}, {1, 2}, {2, 1}};
  EXPECT_DOUBLE_EQ(hypervolume(a, {3, 3}), hypervolume(b, {3, 3}));
}

TEST(Hypervolume, MonotoneUnderInsertion) {
  Rng rng(33);
  for (int rep = 0; rep < 50; ++rep) {
    std::size_t m = 2 + rng.below(2);
    Vec ref(m, 1.0);
    Mat pts;
    double prev = 0.0;
    for (int i = 0; i < 8; ++i) {
      Vec p(m);
      for (double& v : p) v = rng.u01();
      pts.push_back(p);
      double hv = hypervolume(pts, ref);
      ASSERT_GE(hv, prev - 1e-12);
      prev = hv;
    }
  }
}

TEST(Hypervolume, ThreeDimHandInstance) {
  // unit cube corner: single point (0,0,0) vs ref (1,1,1)
  EXPECT_DOUBLE_EQ(hypervolume({{0, 0, 0}}, {1, 1, 1}), 1.0);
  // two disjoint-ish boxes, inclusion-exclusion by hand:
  // [0,.5]x[0,1]x[0,1] has vol .5; [0,1]x[0,.5]x[0,.5] has vol .25
  // intersection [0,.5]x[0,.5]x[0,.5] = .125 -> union .625
  double hv = hypervolume({{0.5, 0, 0}, {0, 0.5, 0.5}}, {1, 1, 1});
  EXPECT_NEAR(hv, 0.625, 1e-12);
}

TEST(Hypervolume, ThreeDimMatchesMonteCarlo) {
  Rng rng(34);
  for (int rep = 0; rep < 5; ++rep) {
    std::size_t n = 3 + rng.below(10);  // n <= 12
    Mat pts(n, Vec(3));
    for (auto& p : pts)
      for (double& v : p) v = rng.u01();
    Vec ref = {1.05, 1.05, 1.05};
    double exact = hypervolume(pts, ref);
    double mc = oracles::mc_hypervolume(pts, ref, 1000000, 777 + rep);
    EXPECT_NEAR(exact, mc, 0.01 * std::max(exact, mc));
  }
}

TEST(NormalizedHypervolume, MatchesManualNormalization) {
  Mat front = {{0.0, 2.0}, {2.0, 0.0}};
  Vec ideal = {0.0, 0.0}, nadir = {2.0, 2.0};
  // normalized: (0,1),(1,0) vs ref (1.1,1.1): 2*0.11 - 0.01 = 0.21
  EXPECT_NEAR(normalized_hypervolume(front, ideal, nadir), 0.21, 1e-12);
}

TEST(DasDennis, HandEnumerations) {
  auto rd = das_dennis(2, 4);
  ASSERT_EQ(rd.size(), 5u);
  Mat expect = {{1, 0}, {0.75, 0.25}, {0.5, 0.5}, {0.25, 0.75}, {0, 1}};
  for (const Vec& e : expect)
    EXPECT_NE(std::find(rd.dirs.begin(), rd.dirs.end(), e), rd.dirs.end());
  EXPECT_EQ(das_dennis(3, 2).size(), 6u);  // C(4,2)
}

TEST(DasDennis, CountFormulaAndRowSums) {
  auto binom = [](int n, int k) {
    double r = 1;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return static_cast<std::size_t>(std::llround(r));
  };
  for (int m : {2, 3})
    for (int H = 1; H <= 12; ++H) {
      auto rd = das_dennis(m, H);
      EXPECT_EQ(rd.size(), binom(H + m - 1, m - 1));
      for (const Vec& row : rd.dirs) {
        double s = 0.0;
        for (double v : row) {
          EXPECT_GE(v, 0.0);
          s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
    }
}

TEST(Pbi, HandInstances) {
  EXPECT_NEAR(pbi({1, 1}, {1, 1}, 3.0, {0, 0}), std::sqrt(2.0), 1e-12);
  EXPECT_DOUBLE_EQ(pbi({0.3, 0.4}, {1, 1}, 2.0, {0.3, 0.4}), 0.0);
  EXPECT_NEAR(pbi({1, 0}, {0, 1}, 5.0, {0, 0}), 5.0, 1e-12);
  EXPECT_THROW(pbi({1, 1}, {0, 0}, 1.0, {0, 0}), ContractError);
}

TEST(Pbi, NonNegativeAboveIdeal) {
  Rng rng(35);
  for (int rep = 0; rep < 100; ++rep) {
    Vec f = {rng.u01(), rng.u01(), rng.u01()};
    Vec w = {rng.u01() + 0.01, rng.u01() + 0.01, rng.u01() + 0.01};
    EXPECT_GE(pbi(f, w, rng.uniform(0, 10), {0, 0, 0}), 0.0);
  }
}

TEST(ManhattanFrontDistance, HandInstances) {
  auto [d1, r1] = manhattan_front_distance({0, 0}, {{1, 2}});
  EXPECT_DOUBLE_EQ(d1, 3.0);
  EXPECT_DOUBLE_EQ(r1, 3.0);
  auto [d2, r2] = manhattan_front_distance({1, 2}, {{3, 3}, {1, 2}});
  EXPECT_DOUBLE_EQ(d2, 0.0);
  EXPECT_DOUBLE_EQ(r2, 3.0);
  // tie between (1,0) and (0,1): lowest index wins
  auto [d3, r3] = manhattan_front_distance({0.4, 0.4}, {{1, 0}, {0, 1}});
  EXPECT_DOUBLE_EQ(d3, 1.0);
  EXPECT_DOUBLE_EQ(r3, 1.0);
  EXPECT_THROW(manhattan_front_distance({0, 0}, {}), ContractError);
}

TEST(Crowding, BoundaryPointsInfinite) {
  Mat pts = {{0, 4}, {1, 2}, {2, 1}, {4, 0}};
  std::vector<std::size_t> front = {0, 1, 2, 3};
  Vec d = crowding_distance(pts, front);
  EXPECT_TRUE(std::isinf(d[0]));
  EXPECT_TRUE(std::isinf(d[3]));
  EXPECT_GT(d[1], 0.0);
  EXPECT_GT(d[2], 0.0);
  EXPECT_TRUE(std::isfinite(d[1]));
}

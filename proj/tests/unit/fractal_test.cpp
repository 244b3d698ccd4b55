#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "fraclt/fractal.hpp"

using namespace fraclt;

namespace {

// 10^4 points, one uniform draw in each cell of a 100 x 100 partition.
PointSet jittered_square(std::uint64_t seed) {
  const RandomStream rs(seed, 0);
  PointSet p{2, {}};
  for (int i = 0; i < 100; ++i)
    for (int j = 0; j < 100; ++j) {
      const std::uint64_t k = 2 * (100 * i + j);
      const double x[] = {(i + rs.uniform(k)) / 100, (j + rs.uniform(k + 1)) / 100};
      p.push(x);
    }
  return p;
}

CloudOptions small_grid(int count) {
  CloudOptions o;
  o.count1 = count;
  o.count2 = count;
  return o;
}

}  // namespace

TEST(BoxDim, Segment) {
  const RandomStream rs(1, 0);
  PointSet p{2, {}};
  for (std::uint64_t k = 0; k < 10000; ++k) {
    const double u = rs.uniform(k);
    const double x[] = {0.6 * u, 0.8 * u};
    p.push(x);
  }
  const BoxCountResult r = box_dim(p, dyadic_scales(0.5, 1.0 / 1024));
  EXPECT_NEAR(r.fitted_dim, 1.0, 0.05);
  EXPECT_GE(r.fit_r2, kWindowR2);
  EXPECT_FALSE(r.low_confidence);
}

TEST(BoxDim, Square) {
  const BoxCountResult r = box_dim(jittered_square(2), dyadic_scales(0.5, 1.0 / 64));
  EXPECT_NEAR(r.fitted_dim, 2.0, 0.05);
}

TEST(BoxDim, MiddleThirdsCantorSet) {
  // Level-6 construction: 64 intervals of length 3^-6, filled with points.
  std::vector<double> left{0.0};
  double len = 1.0;
  for (int level = 0; level < 6; ++level) {
    len /= 3;
    std::vector<double> next;
    for (double a : left) {
      next.push_back(a);
      next.push_back(a + 2 * len);
    }
    left = next;
  }
  PointSet p{1, {}};
  for (double a : left)
    for (int k = 1; k <= 157; ++k) {
      const double x[] = {a + len * k / 158.0};
      p.push(x);
    }
  std::vector<double> scales;
  for (int k = 0; k <= 6; ++k) scales.push_back(std::pow(3.0, -k));
  const BoxCountResult r = box_dim(p, scales);
  EXPECT_NEAR(r.fitted_dim, std::log(2.0) / std::log(3.0), 0.05);
  EXPECT_EQ(r.counts.back(), 64u);
}

TEST(BoxDim, CountsAreMonotoneAndInputIsChecked) {
  const BoxCountResult r = box_dim(jittered_square(3), dyadic_scales(1.0, 1.0 / 256));
  for (std::size_t k = 1; k < r.counts.size(); ++k) EXPECT_GE(r.counts[k], r.counts[k - 1]);
  PointSet few{1, {0.1, 0.2}};
  EXPECT_THROW(box_dim(few, dyadic_scales(1.0, 1e-3)), std::invalid_argument);
  EXPECT_THROW(box_dim(jittered_square(3), {0.5, 0.25, 0.125}), std::invalid_argument);
}

TEST(Threshold, CoupledToTheGridSpacing) {
  const ProblemSpec spec = ProblemSpec::parse("1,1,0.5,0.5,1");
  EXPECT_NEAR(threshold_for_grid(spec, 1.0 / 1024, 1.0 / 1024, 2.0), 0.0625, 1e-15);
  const ProblemSpec aniso = ProblemSpec::parse("1,1,0.4,0.8,2");
  EXPECT_NEAR(threshold_for_grid(aniso, 0.01, 0.01, 1.0), std::pow(0.01, 0.4), 1e-15);
}

TEST(Cloud, HitsVerifyAndShrinkWithTheThreshold) {
  const ProblemSpec spec = ProblemSpec::parse("1,1,0.5,0.5,1");
  const IntersectionCloud c = extract_intersections(spec, small_grid(257), 4);
  ASSERT_FALSE(c.empty());
  EXPECT_TRUE(c.verify());
  EXPECT_EQ(c.m2_points.size(), c.pairs.size());
  EXPECT_EQ(c.d2_points.dim, 1);
  std::set<std::pair<std::size_t, std::size_t>> outer(c.pairs.begin(), c.pairs.end());
  const IntersectionCloud inner = threshold_scan(c.sample, 0.5 * c.delta);
  EXPECT_TRUE(inner.verify());
  EXPECT_LT(inner.pairs.size(), c.pairs.size());
  for (const auto& p : inner.pairs) EXPECT_TRUE(outer.count(p)) << p.first << " " << p.second;
  // Midpoints sit halfway between the two field values.
  const auto [i, j] = c.pairs.front();
  EXPECT_NEAR(c.d2_points[0][0], 0.5 * (c.sample.first.at(i, 0) + c.sample.second.at(j, 0)), 1e-15);
}

TEST(Cloud, PairCapIsEnforced) {
  CloudOptions o = small_grid(4097);
  EXPECT_THROW(extract_intersections(ProblemSpec::parse("1,1,0.5,0.5,1"), o, 1), std::invalid_argument);
  o.pair_cap = std::size_t{1} << 25;
  EXPECT_NO_THROW(extract_intersections(ProblemSpec::parse("1,1,0.5,0.5,1"), o, 1));
}

TEST(Cloud, SubcriticalCloudIsSparse) {
  const CloudOptions o = small_grid(1025);
  const std::size_t super = extract_intersections(ProblemSpec::parse("1,1,0.5,0.5,1"), o, 6).pairs.size();
  const std::size_t sub = extract_intersections(ProblemSpec::parse("1,1,0.5,0.5,5"), o, 6).pairs.size();
  EXPECT_LT(20 * sub, super);
}

TEST(Dimension, OriginShiftDoesNotMoveTheEstimate) {
  const ProblemSpec spec = ProblemSpec::parse("1,1,0.5,0.5,1");
  const double h = 1.0 / 2047;
  const auto scales = dyadic_scales(1.0, h);
  std::vector<double> base, shifted;
  for (std::uint64_t r = 0; r < 8; ++r) {
    const IntersectionCloud c = extract_intersections(spec, small_grid(2048), derive_seed(1, r));
    const double resolve = 2.0 * std::pow(c.delta, 2.0);
    const double shift[] = {0.37 * resolve, 0.63 * resolve};
    base.push_back(box_dim(c.m2_points, scales, {}, resolve).fitted_dim);
    shifted.push_back(box_dim(c.m2_points, scales, shift, resolve).fitted_dim);
  }
  EXPECT_NEAR(median(shifted), median(base), 0.02);
}

TEST(BoxDim, StaggeredCountIsTheSmallestLatticeCount) {
  PointSet p{1, {0.24, 0.26, 0.74, 0.76}};
  const double zero[] = {0.0};
  EXPECT_EQ(occupied_boxes(p, 0.5, zero), 2u);
  const double off[] = {0.25};
  EXPECT_EQ(occupied_boxes(p, 0.5, off), 3u);
  EXPECT_EQ(staggered_boxes(p, 0.5, off, 4), 2u);
  EXPECT_EQ(staggered_boxes(p, 0.5, off, 1), 3u);
}

TEST(Dimension, IntersectionTimesOfTheBrownianPair) {
  const DimEstimate e = estimate_dim_m2(ProblemSpec::parse("1,1,0.5,0.5,1"), small_grid(2048), 1, 3);
  EXPECT_DOUBLE_EQ(e.formula, 1.5);
  EXPECT_NEAR(e.median, 1.5, 0.15);
  EXPECT_LE(e.q25, e.median);
  EXPECT_GE(e.q75, e.median);
  EXPECT_EQ(e.fits.size() + e.skipped, 3u);
}

TEST(Dimension, RefusesOutOfScopeSpecs) {
  EXPECT_THROW(estimate_dim_m2(ProblemSpec::parse("1,1,0.5,0.5,5"), small_grid(64), 1, 1), std::domain_error);
  EXPECT_THROW(estimate_dim_d2(ProblemSpec::parse("2,2,0.5,0.5,4"), small_grid(16), 1, 1), std::domain_error);
}

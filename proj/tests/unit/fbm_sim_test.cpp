#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "fraclt/fbm_sim.hpp"
#include "fraclt/stats.hpp"

using namespace fraclt;

namespace {

/// Values of component c at grid point `point` across replications.
std::vector<double> draws(const FbmSpec& spec, const GridSpec& grid, std::size_t point, int reps, std::uint64_t seed,
                          SamplerChoice choice, int c = 0) {
  std::vector<double> v(reps);
  for (int r = 0; r < reps; ++r) v[r] = sample_field(spec, grid, derive_seed(seed, r), choice).at(point, c);
  return v;
}

}  // namespace

TEST(GridSpec, UniformAndMidpoints) {
  const GridSpec g = GridSpec::uniform({3, 2}, {1.0, 2.0});
  EXPECT_EQ(g.size(), 6u);
  EXPECT_EQ(g.point(5), (Vec{1.0, 2.0}));
  EXPECT_EQ(g.point(1), (Vec{0.0, 2.0}));
  EXPECT_TRUE(GridSpec::uniform({5}, {1.0}).uniform_step_from_origin().has_value());
  EXPECT_FALSE(GridSpec::midpoints({4}, {0.0}, {1.0}).uniform_step_from_origin().has_value());
  EXPECT_DOUBLE_EQ(GridSpec::midpoints({4}, {0.0}, {1.0}).axes[0][0], 0.125);
  EXPECT_THROW(GridSpec::uniform({0}, {1.0}), std::invalid_argument);
}

TEST(Sampling, OriginIsZeroInEveryComponent) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const FieldSample a = sample_fbm(FbmSpec::make(0.3, 2, 3), GridSpec::uniform({6, 6}, {1, 1}), seed);
    const FieldSample b = sample_fast1d(0.8, 33, 1.0 / 32, 2, seed);
    for (int c = 0; c < 3; ++c) EXPECT_EQ(a.at(0, c), 0.0);
    for (int c = 0; c < 2; ++c) EXPECT_EQ(b.at(0, c), 0.0);
  }
}

TEST(Sampling, SeedDeterminism) {
  const FbmSpec spec = FbmSpec::make(0.6, 1, 2);
  const GridSpec g = GridSpec::uniform({65}, {1.0});
  EXPECT_EQ(sample_field(spec, g, 5, SamplerChoice::fast1d).values, sample_field(spec, g, 5, SamplerChoice::fast1d).values);
  EXPECT_EQ(sample_fbm(spec, g, 5).values, sample_fbm(spec, g, 5).values);
  EXPECT_NE(sample_fbm(spec, g, 5).values, sample_fbm(spec, g, 6).values);
}

TEST(Sampling, VarianceMatchesCovarianceAtFiveNodes) {
  const GridSpec g = GridSpec::uniform({9}, {2.0});
  for (double gamma : {0.3, 0.5, 0.8}) {
    const FbmSpec spec = FbmSpec::make(gamma, 1, 1);
    for (std::size_t node : {1u, 2u, 4u, 6u, 8u}) {
      const auto v = draws(spec, g, node, 10000, 17, SamplerChoice::cholesky);
      const double target = std::pow(g.point(node)[0], 2 * gamma);
      double m2 = 0.0;
      for (double x : v) m2 += x * x;
      m2 /= v.size();
      std::vector<double> sq(v.size());
      for (std::size_t i = 0; i < v.size(); ++i) sq[i] = v[i] * v[i];
      EXPECT_LE(std::abs(m2 - target), 3 * std_error(sq)) << gamma << " " << node;
    }
  }
}

TEST(Sampling, BrownianIncrementsAreUncorrelatedAndGaussian) {
  const GridSpec g = GridSpec::uniform({5}, {1.0});
  std::vector<double> a, b, z;
  for (int r = 0; r < 10000; ++r) {
    const FieldSample s = sample_field(FbmSpec::make(0.5, 1, 1), g, derive_seed(23, r), SamplerChoice::fast1d);
    a.push_back(s.at(2, 0) - s.at(1, 0));
    b.push_back(s.at(4, 0) - s.at(3, 0));
    z.push_back(a.back() / 0.5);
  }
  std::vector<double> prod(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) prod[i] = a[i] * b[i];
  EXPECT_LE(std::abs(mean(prod)), 3 * std_error(prod));
  EXPECT_GT(ks_one_sample(z, [](double x) { return normal_cdf(x); }).p_value, 0.01);
}

TEST(Sampling, FastPathAgreesWithCholeskyInLaw) {
  const GridSpec g = GridSpec::uniform({33}, {1.0});
  const FbmSpec spec = FbmSpec::make(0.7, 1, 1);
  const auto fast = draws(spec, g, 32, 10000, 31, SamplerChoice::fast1d);
  const auto exact = draws(spec, g, 32, 10000, 37, SamplerChoice::cholesky);
  EXPECT_LE(ks_two_sample(fast, exact).statistic, 0.02);
}

TEST(Sampling, ComponentsAreIndependentAndSelfSimilar) {
  const GridSpec g = GridSpec::uniform({3}, {2.0});
  const FbmSpec spec = FbmSpec::make(0.35, 1, 2);
  std::vector<double> cross, at1, at2;
  for (int r = 0; r < 10000; ++r) {
    const FieldSample s = sample_fbm(spec, g, derive_seed(41, r));
    cross.push_back(s.at(2, 0) * s.at(2, 1));
    at1.push_back(s.at(1, 0));
    at2.push_back(s.at(2, 1) / std::pow(2.0, 0.35));
  }
  EXPECT_LE(std::abs(mean(cross)), 3 * std_error(cross));
  const double v1 = variance(at1), v2 = variance(at2);
  EXPECT_LE(std::abs(v1 - v2), 3 * std::sqrt(2.0 / 10000) * (v1 + v2) / std::sqrt(2.0));
}

TEST(Sampling, FactorCacheIsReused) {
  FactorCache::global().clear();
  const GridSpec g = GridSpec::uniform({4, 4}, {1, 1});
  sample_fbm(FbmSpec::make(0.45, 2, 1), g, 1);
  sample_fbm(FbmSpec::make(0.45, 2, 1), g, 2);
  EXPECT_EQ(FactorCache::global().size(), 1u);
  sample_fbm(FbmSpec::make(0.55, 2, 1), g, 2);
  EXPECT_EQ(FactorCache::global().size(), 2u);
}

TEST(Sampling, PointCapIsEnforced) {
  EXPECT_THROW(sample_fbm(FbmSpec::make(0.5, 2, 1), GridSpec::uniform({65, 65}, {1, 1}), 1), std::length_error);
  EXPECT_NO_THROW(sample_fbm(FbmSpec::make(0.5, 1, 1), GridSpec::uniform({10}, {1}), 1, 10));
  EXPECT_THROW(sample_field(FbmSpec::make(0.5, 2, 1), GridSpec::uniform({4, 4}, {1, 1}), 1, SamplerChoice::fast1d),
               std::invalid_argument);
}

TEST(DifferenceField, OriginAndVariance) {
  const ProblemSpec spec = ProblemSpec::parse("1,1,0.4,0.8,2");
  const GridSpec g1 = GridSpec::uniform({5}, {1.0}), g2 = GridSpec::uniform({5}, {1.0});
  std::vector<double> x;
  for (int r = 0; r < 10000; ++r) {
    const DifferenceSample s = sample_difference_field(spec, g1, g2, derive_seed(43, r));
    ASSERT_EQ(s.x(0, 0, 0), 0.0);
    ASSERT_EQ(s.x(0, 0, 1), 0.0);
    x.push_back(s.x(2, 3, 1) * s.x(2, 3, 1));
  }
  const double target = std::pow(0.5, 0.8) + std::pow(0.75, 1.6);
  EXPECT_LE(std::abs(mean(x) - target), 3 * std_error(x));
}

TEST(DifferenceField, OperatorScaling) {
  // X(c^{1/a1} s, c^{1/a2} t) has the law of c X(s, t); here c = 2.
  const ProblemSpec spec = ProblemSpec::parse("1,1,0.5,0.5,1");
  const double c = 2.0, s0 = 0.25, t0 = 0.5;
  const GridSpec g1 = GridSpec::uniform({2}, {s0}), g2 = GridSpec::uniform({2}, {t0});
  const GridSpec h1 = GridSpec::uniform({2}, {std::pow(c, 2.0) * s0}), h2 = GridSpec::uniform({2}, {std::pow(c, 2.0) * t0});
  std::vector<double> scaled, dilated;
  for (int r = 0; r < 4000; ++r) {
    scaled.push_back(c * sample_difference_field(spec, g1, g2, derive_seed(47, r)).x(1, 1, 0));
    dilated.push_back(sample_difference_field(spec, h1, h2, derive_seed(53, r)).x(1, 1, 0));
  }
  EXPECT_GT(ks_two_sample(scaled, dilated).p_value, 0.01);
}

TEST(Persistence, RoundTripPreservesProvenance) {
  const FieldSample s = sample_fbm(FbmSpec::make(0.65, 2, 2), GridSpec::uniform({5, 3}, {1.0, 0.5}), 77);
  const auto dir = std::filesystem::temp_directory_path() / "fraclt_persist_test";
  std::filesystem::create_directories(dir);
  const std::string stem = (dir / "sample").string();
  write_field_sample(s, stem);
  const FieldSample r = read_field_sample(stem);
  EXPECT_EQ(r.values, s.values);
  EXPECT_EQ(r.seed, 77u);
  EXPECT_EQ(r.method, SampleMethod::cholesky);
  EXPECT_EQ(r.grid, s.grid);
  EXPECT_EQ(r.spec.q, 2);
  EXPECT_EQ(to_csv(s).size(), 15u);
  std::filesystem::remove_all(dir);
}

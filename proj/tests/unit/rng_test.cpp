#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "fraclt/parallel.hpp"
#include "fraclt/rng.hpp"
#include "fraclt/stats.hpp"

using namespace fraclt;

// Known-answer vectors for Philox4x32-10.
TEST(Philox, KnownAnswers) {
  using C = Philox4x32::Counter;
  EXPECT_EQ(Philox4x32::apply({0, 0, 0, 0}, {0, 0}), (C{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(Philox4x32::apply({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
            (C{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(Philox4x32::apply({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
            (C{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(RandomStream, PureFunctionOfAddress) {
  const RandomStream a(7, 3), b(7, 3), c(7, 4), d(8, 3);
  EXPECT_EQ(a.uniform(12345), b.uniform(12345));
  EXPECT_NE(a.uniform(12345), c.uniform(12345));
  EXPECT_NE(a.uniform(12345), d.uniform(12345));
  EXPECT_EQ(a.split(9).normals(5), b.split(9).normals(5));
  EXPECT_NE(a.split(9).normals(5), a.split(10).normals(5));
}

TEST(RandomStream, DerivedSeedsAreDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 64; ++s)
    for (std::uint64_t i = 0; i < 64; ++i) seen.insert(derive_seed(s, i));
  EXPECT_EQ(seen.size(), 64u * 64u);
}

TEST(RandomStream, UniformsAndNormalsHaveTheRightLaw) {
  const RandomStream rs(99, 0);
  std::vector<double> u, z;
  for (std::uint64_t k = 0; k < 20000; ++k) {
    const double x = rs.uniform(k);
    ASSERT_GT(x, 0.0);
    ASSERT_LT(x, 1.0);
    u.push_back(x);
  }
  z = rs.split(1).normals(20000);
  EXPECT_GT(ks_one_sample(u, [](double x) { return x; }).p_value, 0.01);
  EXPECT_GT(ks_one_sample(z, [](double x) { return normal_cdf(x); }).p_value, 0.01);
  EXPECT_NEAR(mean(z), 0.0, 4.0 / std::sqrt(20000.0));
  EXPECT_NEAR(variance(z), 1.0, 0.05);
}

TEST(Parallel, ResultsDoNotDependOnWorkerCount) {
  auto work = [](std::size_t i) { return RandomStream(5, i).normals(3)[2]; };
  set_thread_count(1);
  const auto one = parallel_map(257, work);
  set_thread_count(8);
  const auto eight = parallel_map(257, work);
  set_thread_count(0);
  EXPECT_EQ(one, eight);
  EXPECT_EQ(pairwise_sum(one), pairwise_sum(eight));
}

TEST(Parallel, PropagatesExceptions) {
  set_thread_count(4);
  EXPECT_THROW(parallel_for(16, [](std::size_t i) { if (i == 7) throw std::runtime_error("boom"); }),
               std::runtime_error);
  set_thread_count(0);
}

TEST(Parallel, EnvironmentFallback) {
  set_thread_count(0);
  ::setenv("FRACLT_THREADS", "3", 1);
  EXPECT_EQ(thread_count(), 3);
  set_thread_count(2);
  EXPECT_EQ(thread_count(), 2);
  set_thread_count(0);
  ::unsetenv("FRACLT_THREADS");
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "bmp/rng.hpp"
#include "bmp/verify.hpp"
#include "support.hpp"

using namespace bmp;
using bmp::test::fixture;
using bmp::test::vec;

namespace {

const double kR = 1.0 / std::sqrt(2.0);

std::vector<double> normal_sample(std::uint64_t seed, std::size_t n, double variance) {
  Philox4x64 g(seed, 0);
  std::normal_distribution<double> z(0.0, std::sqrt(variance));
  std::vector<double> out(n);
  for (auto& x : out) x = z(g);
  return out;
}

struct Case {
  BranchingModel model;
  Eigensystem sys;
  Vector f;
  VarianceConstants consts;
};

Case setup(const char* name, Vector f) {
  Case s{fixture(name), {}, std::move(f), {}};
  s.sys = model_eigensystem(s.model);
  s.consts = variance_constants(s.model, s.sys, split(s.sys, s.f));
  return s;
}

Ensemble run(const Case& s, const std::vector<double>& grid, std::size_t reps, std::uint64_t seed) {
  Counts init(s.model.dim(), 0);
  init[0] = 1;
  return ensemble(s.model, s.sys, init, grid, reps, seed, s.f, large_clusters(s.sys));
}

}  // namespace

TEST(Statistics, NormalCdfAndQuantile) {
  EXPECT_DOUBLE_EQ(normal_cdf(0.0, 2.0), 0.5);
  EXPECT_NEAR(normal_cdf(1.96, 1.0), 0.9750021048517795, 1e-15);
  EXPECT_NEAR(normal_cdf(2.0 * 1.96, 4.0), 0.9750021048517795, 1e-15);
  const std::vector<double> v{1, 2, 3, 4, 5};
  EXPECT_EQ(quantile(v, 0.5), 3.0);
  EXPECT_EQ(quantile(v, 0.125), 1.5);
  EXPECT_DOUBLE_EQ(sample_variance(v), 2.5);
}

TEST(Statistics, KsDistanceExamples) {
  // One point at the median: F jumps from 0 to 1 where Phi = 1/2.
  EXPECT_DOUBLE_EQ(ks_distance_normal({0.0}, 1.0), 0.5);
  EXPECT_THROW(ks_distance_normal({}, 1.0), VerificationError);
  EXPECT_THROW(ks_distance_normal({1.0}, 0.0), VerificationError);
  // Shift by 1 sd is far from N(0, 1).
  auto shifted = normal_sample(1, 5000, 1.0);
  for (auto& x : shifted) x += 1.0;
  EXPECT_GT(ks_distance_normal(shifted, 1.0), 0.3);
}

// Under an exact Gaussian null the decision rule passes nearly always.
TEST(GaussianCheck, NullCalibration) {
  int passes = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto r = gaussian_check(normal_sample(seed, 5000, 1.7), 1.7);
    passes += r.pass;
  }
  EXPECT_GE(passes, 95);
}

TEST(GaussianCheck, RejectsWrongVariance) {
  int passes = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) passes += gaussian_check(normal_sample(seed, 5000, 1.3), 1.0).pass;
  EXPECT_EQ(passes, 0);
}

TEST(Component, Parsing) {
  EXPECT_EQ(parse_component("sm"), Component::small);
  EXPECT_EQ(parse_component("critical"), Component::critical);
  EXPECT_EQ(parse_component("la"), Component::large);
  EXPECT_THROW(parse_component("huge"), ValidationError);
  EXPECT_STREQ(to_string(Component::critical), "cr");
}

TEST(CltCheck, ZeroFunctionIsVacuous) {
  const auto s = setup("two_state_small", Vector::Zero(2));
  const auto e = run(s, {0.0, 1.0}, 10, 1);
  const auto r = clt_check(e, s.sys, s.f, s.consts, 1.0, Component::small);
  EXPECT_TRUE(r.vacuous);
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.n_reps, 10u);
}

TEST(CltCheck, InputErrors) {
  const auto s = setup("two_state_small", vec({kR, -kR}));
  const auto e = run(s, {0.0, 1.0}, 10, 1);
  EXPECT_THROW(clt_check(e, s.sys, s.f, s.consts, 0.7, Component::small), VerificationError);
  EXPECT_THROW(clt_check(e, s.sys, s.f, s.consts, 1.0, Component::small), VerificationError);  // too few
}

TEST(CltCheck, SmallComponentIsGaussian) {
  const auto s = setup("two_state_small", vec({kR, -kR}));
  const auto e = run(s, {0.0, 6.0}, 4000, 42);
  CltOptions opt;
  opt.ks_tol = 0.05;
  opt.v_tol = 0.15;
  const auto r = clt_check(e, s.sys, s.f, s.consts, 6.0, Component::small, opt);
  EXPECT_NEAR(r.target_variance, 5.0 * std::sqrt(2.0) / 6.0, 1e-12);
  EXPECT_EQ(r.n_survivors, 4000u);
  EXPECT_TRUE(r.pass) << "ks=" << r.ks_statistic << " ratio=" << r.variance_ratio;
}

TEST(CltCheck, InvariantUnderReplicatePermutation) {
  const auto s = setup("two_state_small", vec({kR, -kR}));
  auto e = run(s, {0.0, 3.0}, 1200, 5);
  CltOptions opt;
  opt.min_survivors = 100;
  const auto a = clt_check(e, s.sys, s.f, s.consts, 3.0, Component::small, opt);
  std::mt19937_64 rng(1);
  std::shuffle(e.replicates.begin(), e.replicates.end(), rng);
  const auto b = clt_check(e, s.sys, s.f, s.consts, 3.0, Component::small, opt);
  EXPECT_EQ(a.ks_statistic, b.ks_statistic);
  EXPECT_NEAR(a.empirical_variance, b.empirical_variance, 1e-12 * a.empirical_variance);
}

TEST(LilEnvelope, ShortHorizonIsRefused) {
  const auto s = setup("yule", Vector::Ones(1));
  const auto e = run(s, regular_grid(5.0, 0.5), 5, 1);
  EXPECT_THROW(lil_envelope(e, s.sys, s.f, s.consts), VerificationError);
}

TEST(LilEnvelope, DeterministicModelIsDegenerate) {
  Case s;
  s.model.generator = Matrix::Zero(1, 1);
  s.model.branching_rate = Vector::Ones(1);
  s.model.offspring = {{0.0, 1.0}};
  s.sys = model_eigensystem(s.model);
  s.f = Vector::Ones(1);
  s.consts = variance_constants(s.model, s.sys, split(s.sys, s.f));
  const auto e = run(s, regular_grid(8.0, 0.5), 20, 1);
  LilOptions opt;
  opt.min_survivors = 20;
  const auto r = lil_envelope(e, s.sys, s.f, s.consts, opt);
  EXPECT_TRUE(r.degenerate);
  EXPECT_FALSE(r.pass);
  for (double x : r.ratios) EXPECT_EQ(x, 0.0);
}

TEST(LilEnvelope, ScalingInvariance) {
  const auto base = setup("two_state_small", vec({1.0, 0.3}));
  LilOptions opt;
  opt.min_survivors = 50;
  const auto grid = regular_grid(8.0, 0.5);
  const auto e1 = run(base, grid, 60, 9);
  const auto r1 = lil_envelope(e1, base.sys, base.f, base.consts, opt);
  for (double c : {2.0, 0.25, -4.0, 3.0, -0.7}) {
    const auto sc = setup("two_state_small", c * base.f);
    const auto ec = run(sc, grid, 60, 9);
    const auto rc = lil_envelope(ec, sc.sys, sc.f, sc.consts, opt);
    ASSERT_EQ(r1.ratios.size(), rc.ratios.size());
    const bool exact = std::abs(std::log2(std::abs(c)) - std::round(std::log2(std::abs(c)))) == 0.0;
    for (std::size_t i = 0; i < r1.ratios.size(); ++i) {
      if (exact)
        EXPECT_EQ(r1.ratios[i], rc.ratios[i]) << "c=" << c;
      else
        EXPECT_NEAR(r1.ratios[i], rc.ratios[i], 1e-12 * r1.ratios[i]) << "c=" << c;
    }
  }
}

TEST(Martingale, RefusesNonLargeCluster) {
  const auto s = setup("two_state_small", vec({1.0, 0.0}));
  const auto e = run(s, {0.0, 1.0, 2.0}, 10, 1);
  EXPECT_THROW(martingale_check(e, s.sys, 1), VerificationError);
  EXPECT_THROW(martingale_check(e, s.sys, 5), ValidationError);
}

TEST(Martingale, SingleReplicateIsInsufficient) {
  const auto s = setup("yule", Vector::Ones(1));
  const auto e = run(s, {0.0, 1.0, 2.0}, 1, 1);
  try {
    martingale_check(e, s.sys, 0);
    FAIL();
  } catch (const VerificationError& err) {
    EXPECT_NE(std::string(err.what()).find("insufficient data"), std::string::npos);
  }
}

TEST(Martingale, ConstantMeanOnCyclicFixture) {
  const auto s = setup("three_state_cyclic", vec({1, 0, 0}));
  const auto e = run(s, regular_grid(4.0, 1.0), 3000, 12);
  for (int k : large_clusters(s.sys)) {
    const auto r = martingale_check(e, s.sys, k);
    EXPECT_TRUE(r.pass) << "k=" << k << " z=" << r.max_mean_z << " vz=" << r.variance_z;
  }
}

TEST(Heyde, Examples) {
  const auto a = heyde_crosscheck({0.25, 0.0, 0.75});
  EXPECT_NEAR(a.sigma2, 1.0, 1e-15);
  EXPECT_LE(a.discrete_residual, 1e-8);
  EXPECT_LE(a.skeleton_residual, 1e-8);
  EXPECT_TRUE(a.pass);

  const auto b = heyde_crosscheck({0.0, 0.0, 1.0});
  EXPECT_EQ(b.sigma2, 0.0);
  EXPECT_NEAR(b.sigma2_la, 1.0, 1e-12);  // Yule
  EXPECT_NEAR(b.skeleton_sigma2, 1.0, 1e-8);
  EXPECT_TRUE(b.pass);

  EXPECT_THROW(heyde_crosscheck({0.0, 1.0}), ValidationError);
  EXPECT_THROW(heyde_crosscheck({0.5, 0.4}), ValidationError);
  EXPECT_THROW(heyde_sigma2(1.0, 2.0), ValidationError);
}

TEST(Csv, RoundTrip) {
  const auto s = setup("three_state_cyclic", vec({1, -2, 0.5}));
  const auto e = run(s, regular_grid(2.0, 0.5), 25, 4);
  std::ostringstream a;
  write_csv(a, e);
  std::istringstream in(a.str());
  const auto back = read_csv(in);
  EXPECT_EQ(back.grid, e.grid);
  EXPECT_EQ(back.clusters, e.clusters);
  EXPECT_EQ(back.dim, e.dim);
  ASSERT_EQ(back.replicates.size(), e.replicates.size());
  for (std::size_t r = 0; r < e.replicates.size(); ++r) {
    for (std::size_t i = 0; i < e.grid.size(); ++i) {
      EXPECT_EQ(back.replicates[r].trajectory->states[i].counts, e.replicates[r].trajectory->states[i].counts);
      EXPECT_EQ(back.replicates[r].path->value[i], e.replicates[r].path->value[i]);
      EXPECT_EQ(back.replicates[r].path->w[i], e.replicates[r].path->w[i]);
    }
  }
  std::ostringstream b;
  write_csv(b, back);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Csv, MalformedInputIsRejected) {
  std::istringstream empty("");
  EXPECT_THROW(read_csv(empty), ValidationError);
  std::istringstream bad("rep,t,n0,f,W\n0,0,1,1\n");
  EXPECT_THROW(read_csv(bad), ValidationError);
  std::istringstream nan_cell("rep,t,n0,f,W\n0,zero,1,1,1\n");
  EXPECT_THROW(read_csv(nan_cell), ValidationError);
}

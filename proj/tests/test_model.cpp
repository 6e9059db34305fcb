#include <gtest/gtest.h>

#include <random>

#include "bmp/hypotheses.hpp"
#include "bmp/model.hpp"
#include "support.hpp"

using namespace bmp;
using bmp::test::fixture;

namespace {

const char* kYule = R"({"d":1,"Q":[[0]],"beta":[1],"offspring":[[[2,1]]]})";

BranchingModel single_state(double beta, std::vector<double> pmf) {
  BranchingModel m;
  m.generator = Matrix::Zero(1, 1);
  m.branching_rate = Vector::Constant(1, beta);
  m.offspring = {std::move(pmf)};
  return m;
}

}  // namespace

TEST(LoadModel, YuleConfigIsValid) {
  const auto m = load_model_text(kYule);
  EXPECT_EQ(m.dim(), 1);
  EXPECT_EQ(m.offspring[0].size(), 3u);
  EXPECT_DOUBLE_EQ(m.offspring[0][2], 1.0);
}

TEST(LoadModel, TwoStateConfigIsValid) {
  const auto m = load_model_text(
      R"({"d":2,"Q":[[-1,1],[1,-1]],"beta":[1,1],"offspring":[[[2,1]],[[2,1]]]})");
  EXPECT_EQ(m.dim(), 2);
  EXPECT_DOUBLE_EQ(m.generator(0, 1), 1.0);
}

TEST(LoadModel, UnnormalizedPmfIsRejected) {
  try {
    load_model_text(R"({"d":1,"Q":[[0]],"beta":[1],"offspring":[[[0,0.4],[2,0.5]]]})");
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("not normalized"), std::string::npos);
  }
}

TEST(LoadModel, ReportsEveryViolatedInvariant) {
  try {
    load_model_text(R"({"d":2,"Q":[[-1,2],[1,-1]],"beta":[-1,1],"offspring":[[[2,0.5]],[[2,1]]]})");
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_GE(e.issues().size(), 3u);  // rate, row sum, pmf
  }
}

TEST(LoadModel, RejectsUnknownKeys) {
  EXPECT_THROW(load_model_text(R"({"d":1,"Q":[[0]],"beta":[1],"offspring":[[[2,1]]],"gamma":3})"),
               ValidationError);
}

TEST(LoadModel, RejectsMissingKeysAndBadShapes) {
  EXPECT_THROW(load_model_text(R"({"d":1,"Q":[[0]],"beta":[1]})"), ValidationError);
  EXPECT_THROW(load_model_text(R"({"d":2,"Q":[[0]],"beta":[1,1],"offspring":[[[2,1]],[[2,1]]]})"),
               ValidationError);
  EXPECT_THROW(load_model_text(R"({"d":1,"Q":[[0]],"beta":[1],"offspring":[[[2,0.5],[2,0.5]]]})"),
               ValidationError);
  EXPECT_THROW(load_model_text(R"({"d":1,"Q":[[0]],"beta":[1],"offspring":[[[65,1]]]})"),
               ValidationError);
  EXPECT_THROW(load_model_text(R"({"d":0,"Q":[],"beta":[],"offspring":[]})"), ValidationError);
}

TEST(LoadModel, ParseFailureIsValidationError) {
  EXPECT_THROW(load_model_text("{\"d\": 1,"), ValidationError);
}

TEST(LoadModel, RejectsReducibleGenerator) {
  EXPECT_THROW(load_model_text(R"({"d":2,"Q":[[0,0],[0,0]],"beta":[1,1],"offspring":[[[2,1]],[[2,1]]]})"),
               ValidationError);
}

TEST(LoadModel, RoundTripsThroughJson) {
  for (const char* name : test::kFixtures) {
    const auto m = fixture(name);
    const auto back = load_model(to_json(m));
    EXPECT_EQ(back.generator, m.generator) << name;
    EXPECT_EQ(back.branching_rate, m.branching_rate) << name;
    EXPECT_EQ(back.offspring, m.offspring) << name;
    EXPECT_EQ(back.structure.has_value(), m.structure.has_value()) << name;
  }
}

TEST(BranchingMoments, Yule) {
  const auto a = branching_moments(load_model_text(kYule));
  EXPECT_DOUBLE_EQ(a.a1[0], 1.0);
  EXPECT_DOUBLE_EQ(a.a2[0], 2.0);
  EXPECT_DOUBLE_EQ(a.a3[0], 0.0);
  EXPECT_DOUBLE_EQ(a.a4[0], 0.0);
  EXPECT_FALSE(a.deterministic());
}

TEST(BranchingMoments, UnitOffspringIsDeterministic) {
  const auto a = branching_moments(single_state(5.0, {0.0, 1.0}));
  EXPECT_EQ(a.a1[0], 0.0);
  EXPECT_EQ(a.a2[0], 0.0);
  EXPECT_TRUE(a.deterministic());
}

TEST(BranchingMoments, BirthDeath) {
  const auto a = branching_moments(single_state(1.0, {0.25, 0.0, 0.75}));
  EXPECT_DOUBLE_EQ(a.a1[0], 0.5);
  EXPECT_DOUBLE_EQ(a.a2[0], 1.5);
}

TEST(BranchingMoments, HigherOrdersAreFactorialMoments) {
  // p_4 = 1, beta = 2: A^(k) = 2 * 4!/(4-k)!
  const auto a = branching_moments(single_state(2.0, {0, 0, 0, 0, 1}));
  EXPECT_DOUBLE_EQ(a.a1[0], 6.0);
  EXPECT_DOUBLE_EQ(a.a2[0], 24.0);
  EXPECT_DOUBLE_EQ(a.a3[0], 48.0);
  EXPECT_DOUBLE_EQ(a.a4[0], 48.0);
}

TEST(BranchingMoments, NonNegativeOnRandomModels) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 50; ++i) {
    const auto m = test::random_model(rng, 1 + i % 4);
    const auto a = branching_moments(m);
    EXPECT_GE(a.a2.minCoeff(), 0.0);
    EXPECT_GE(a.a3.minCoeff(), 0.0);
    EXPECT_GE(a.a4.minCoeff(), 0.0);
  }
}

TEST(MeanGenerator, Examples) {
  EXPECT_EQ(mean_generator(load_model_text(kYule)), Matrix::Ones(1, 1));
  Matrix want(2, 2);
  want << 0, 1, 1, 0;
  EXPECT_EQ(mean_generator(fixture("two_state_small")), want);

  auto m = fixture("two_state_small");
  m.branching_rate.setZero();
  EXPECT_EQ(mean_generator(m), m.generator);
}

TEST(MeanGenerator, DoublingRateWithUnitOffspringLeavesQ) {
  auto m = fixture("three_state_cyclic");
  for (auto& pmf : m.offspring) pmf = {0.0, 1.0};
  m.branching_rate *= 2.0;
  EXPECT_EQ(mean_generator(m), m.generator);
}

TEST(Hypotheses, YuleIsSupercritical) {
  const auto h = check_hypotheses(load_model_text(kYule));
  ASSERT_TRUE(h.supercritical.has_value());
  EXPECT_TRUE(*h.supercritical);
  EXPECT_DOUBLE_EQ(h.lambda1, -1.0);
  EXPECT_TRUE(h.warnings.empty());
}

TEST(Hypotheses, PureDeathIsNotSupercritical) {
  const auto h = check_hypotheses(single_state(1.0, {1.0}));
  ASSERT_TRUE(h.supercritical.has_value());
  EXPECT_FALSE(*h.supercritical);
  EXPECT_DOUBLE_EQ(h.lambda1, 1.0);
  EXPECT_FALSE(h.warnings.empty());
}

TEST(Hypotheses, ReducibleGeneratorIsAWarningNotAFailure) {
  BranchingModel m;
  m.generator = Matrix::Zero(2, 2);
  m.branching_rate = Vector::Ones(2);
  m.offspring = {{0, 0, 1}, {0, 0, 1}};
  const auto h = check_hypotheses(m);
  EXPECT_FALSE(h.irreducible);
  ASSERT_FALSE(h.warnings.empty());
  EXPECT_NE(h.warnings.front().find("reducible"), std::string::npos);
}

TEST(Hypotheses, MeanOffspringAboveOneImpliesSupercritical) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 30; ++i) {
    auto m = test::random_model(rng, 1 + i % 4);
    for (auto& pmf : m.offspring) pmf = {0.1, 0.2, 0.3, 0.4};  // mean 2
    const auto h = check_hypotheses(m);
    ASSERT_TRUE(h.supercritical.has_value());
    EXPECT_TRUE(*h.supercritical);
    EXPECT_LT(h.lambda1, 0.0);
  }
}

TEST(Hypotheses, ProbeQuantitiesAreFinite) {
  for (const char* name : test::kFixtures) {
    const auto h = check_hypotheses(fixture(name), 2.0);
    EXPECT_TRUE(std::isfinite(h.a_t) && std::isfinite(h.ahat_t)) << name;
    EXPECT_TRUE(std::isfinite(h.b_t) && std::isfinite(h.bhat_t)) << name;
    EXPECT_GT(h.b_t, 0.0) << name;
  }
}

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bmp/spectral.hpp"
#include "support.hpp"

using namespace bmp;
using bmp::test::fixture;
using bmp::test::vec;

namespace {

Matrix mat2(double a, double b, double c, double d) {
  Matrix m(2, 2);
  m << a, b, c, d;
  return m;
}

double rel(const Matrix& got, const Matrix& want) { return (got - want).norm() / std::max(1.0, want.norm()); }

}  // namespace

TEST(ComputeSpectrum, OneByOne) {
  const auto sys = compute_spectrum(Matrix::Ones(1, 1));
  ASSERT_EQ(sys.spectrum.size(), 1);
  EXPECT_DOUBLE_EQ(sys.spectrum.perron_growth(), 1.0);
  EXPECT_DOUBLE_EQ(sys.basis.perron_right[0], 1.0);
  EXPECT_DOUBLE_EQ(sys.basis.perron_left[0], 1.0);
}

TEST(ComputeSpectrum, SymmetricTwoByTwo) {
  const auto sys = compute_spectrum(mat2(0, 1, 1, 0));
  ASSERT_EQ(sys.spectrum.size(), 2);
  EXPECT_NEAR(sys.spectrum[0].growth.real(), 1.0, 1e-14);
  EXPECT_NEAR(sys.spectrum[1].growth.real(), -1.0, 1e-14);
  const double r = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(sys.basis.perron_right[0], r, 1e-14);
  EXPECT_NEAR(sys.basis.perron_right[1], r, 1e-14);
  // Second eigenvector is (1,-1)/sqrt2 up to sign.
  const CVector phi2 = sys.basis.right[1].col(0);
  EXPECT_NEAR(std::abs(phi2[0]), r, 1e-12);
  EXPECT_NEAR(std::abs(phi2[0] + phi2[1]), 0.0, 1e-12);
}

TEST(ComputeSpectrum, OrdersByDecreasingRealPart) {
  for (const char* name : test::kFixtures) {
    const auto sys = model_eigensystem(fixture(name));
    for (int k = 1; k < sys.spectrum.size(); ++k)
      EXPECT_GE(sys.spectrum[k - 1].growth.real(), sys.spectrum[k].growth.real() - 1e-12) << name;
  }
}

TEST(ComputeSpectrum, PerronPairIsPositiveAndNormalized) {
  for (const char* name : test::kFixtures) {
    const auto sys = model_eigensystem(fixture(name));
    EXPECT_GT(sys.basis.perron_right.minCoeff(), 0.0) << name;
    EXPECT_GT(sys.basis.perron_left.minCoeff(), 0.0) << name;
    EXPECT_NEAR(sys.basis.perron_right.norm(), 1.0, 1e-14) << name;
    EXPECT_NEAR(sys.basis.perron_right.dot(sys.basis.perron_left), 1.0, 1e-12) << name;
  }
}

TEST(ComputeSpectrum, CyclicFixtureHasConjugatePair) {
  const auto sys = model_eigensystem(fixture("three_state_cyclic"));
  ASSERT_EQ(sys.spectrum.size(), 3);
  EXPECT_NEAR(sys.spectrum[0].growth.real(), 1.0, 1e-12);
  const Complex a = sys.spectrum[1].growth, b = sys.spectrum[2].growth;
  EXPECT_NEAR(a.real(), 0.625, 1e-12);
  EXPECT_NEAR(std::abs(a.imag()), std::sqrt(3.0) / 8.0, 1e-12);
  EXPECT_NEAR(std::abs(a - std::conj(b)), 0.0, 1e-12);
  // Equal real parts: lambda = -growth is ordered by imaginary part, ascending.
  EXPECT_GT(a.imag(), 0.0);
  EXPECT_EQ(sys.spectrum[1].conjugate, 2);
  EXPECT_EQ(sys.spectrum[2].conjugate, 1);
  EXPECT_EQ(sys.spectrum.regime(1), Regime::large);
}

TEST(ComputeSpectrum, RegimesOfTwoStateFixtures) {
  const auto small = model_eigensystem(fixture("two_state_small"));
  EXPECT_EQ(small.spectrum.regime(0), Regime::large);
  EXPECT_EQ(small.spectrum.regime(1), Regime::small);
  const auto crit = model_eigensystem(fixture("two_state_critical"));
  EXPECT_EQ(crit.spectrum.regime(1), Regime::critical);
}

TEST(ComputeSpectrum, RecoversExactJordanBlockNumerically) {
  auto m = fixture("jordan_designed");
  const auto declared = model_eigensystem(m);
  m.structure.reset();
  const auto numeric = model_eigensystem(m);
  ASSERT_EQ(numeric.spectrum.size(), 2);
  EXPECT_EQ(numeric.spectrum[1].blocks, std::vector<int>{2});
  for (double t : {0.5, 3.0})
    EXPECT_LT(rel(semigroup_matrix(numeric, t), semigroup_matrix(declared, t)), 1e-9);
}

TEST(ComputeSpectrum, RejectsNearlyDefectiveCluster) {
  // A Jordan block perturbed by 1e-13 splits into two eigenvalues 6e-7 apart
  // with almost parallel eigenvectors.
  Matrix l = Matrix::Zero(3, 3);
  l(0, 0) = 3.0;
  l(1, 1) = l(2, 2) = 0.5;
  l(1, 2) = 1.0;
  l(2, 1) = 1e-13;
  SpectralOptions opt;
  opt.require_perron = false;
  try {
    compute_spectrum(l, opt);
    FAIL() << "expected a spectral error";
  } catch (const SpectralError& e) {
    EXPECT_NE(std::string(e.what()).find("declared"), std::string::npos) << e.what();
  }
}

TEST(ComputeSpectrum, RejectsNonSimpleDominantEigenvalue) {
  EXPECT_THROW(compute_spectrum(Matrix::Identity(2, 2)), SpectralError);
}

TEST(DeclaredStructure, DefectiveTwoByTwo) {
  const double a = 0.7;
  SpectralOptions opt;
  opt.require_perron = false;
  const auto sys = declared_structure(mat2(a, 1, 0, a), {{Complex(a, 0), {2}}}, opt);
  ASSERT_EQ(sys.spectrum.size(), 1);
  EXPECT_EQ(sys.spectrum[0].blocks, std::vector<int>{2});
  const CMatrix& phi = sys.basis.right[0];
  // Chain: (L - a) phi_1 = 0, (L - a) phi_2 = phi_1, phi_1 along e_1.
  const CMatrix n = (mat2(a, 1, 0, a) - a * Matrix::Identity(2, 2)).cast<Complex>();
  EXPECT_LT((n * phi.col(0)).norm(), 1e-12);
  EXPECT_LT((n * phi.col(1) - phi.col(0)).norm(), 1e-12);
  EXPECT_NEAR(std::abs(phi(1, 0)), 0.0, 1e-12);
  EXPECT_LT(sys.diagnostics.biorthogonality_residual, 1e-12);
}

TEST(DeclaredStructure, MatchesComputedSpectrumWhenDiagonalizable) {
  for (const char* name : {"two_state_small", "three_state_cyclic"}) {
    const auto m = fixture(name);
    const auto a = compute_spectrum(mean_generator(m));
    SpectralDeclaration decl;
    for (const auto& c : a.spectrum.clusters) decl.push_back({c.growth, c.blocks});
    const auto b = declared_structure(mean_generator(m), decl);
    ASSERT_EQ(a.spectrum.size(), b.spectrum.size()) << name;
    for (int k = 0; k < a.spectrum.size(); ++k) {
      EXPECT_NEAR(std::abs(a.spectrum[k].growth - b.spectrum[k].growth), 0.0, 1e-12) << name;
      EXPECT_EQ(a.spectrum[k].blocks, b.spectrum[k].blocks) << name;
    }
    for (double t : {0.5, 2.0})
      EXPECT_LT(rel(semigroup_matrix(a, t), semigroup_matrix(b, t)), 1e-12) << name;
  }
}

TEST(DeclaredStructure, JordanFixtureHasVerifiedChain) {
  const auto m = fixture("jordan_designed");
  const auto sys = model_eigensystem(m);
  ASSERT_EQ(sys.spectrum.size(), 2);
  EXPECT_EQ(sys.spectrum[1].blocks, std::vector<int>{2});
  EXPECT_EQ(sys.spectrum.regime(1), Regime::critical);
  const CMatrix l = mean_generator(m).cast<Complex>();
  const CMatrix& phi = sys.basis.right[1];
  const Complex mu = sys.spectrum[1].growth;
  EXPECT_LT((l * phi.col(0) - mu * phi.col(0)).norm(), 1e-12);
  EXPECT_LT((l * phi.col(1) - mu * phi.col(1) - phi.col(0)).norm(), 1e-12);
}

TEST(DeclaredStructure, RejectsWrongBlockSizes) {
  auto m = fixture("jordan_designed");
  m.structure = SpectralDeclaration{{Complex(1.5, 0), {1}}, {Complex(0.75, 0), {1, 1}}};
  EXPECT_THROW(model_eigensystem(m), SpectralError);
  m.structure = SpectralDeclaration{{Complex(1.5, 0), {1}}, {Complex(0.75, 0), {1}}};
  EXPECT_THROW(model_eigensystem(m), SpectralError);
  m.structure = SpectralDeclaration{{Complex(1.4, 0), {1}}, {Complex(0.75, 0), {2}}};
  EXPECT_THROW(model_eigensystem(m), SpectralError);
}

TEST(Propagator, Examples) {
  EigenCluster two{Complex(0, 0), {2}};
  EXPECT_EQ(propagator(two, 1.0), mat2(1, 1, 0, 1));
  EigenCluster three{Complex(0, 0), {3}};
  Matrix want(3, 3);
  want << 1, 2, 2, 0, 1, 2, 0, 0, 1;
  EXPECT_EQ(propagator(three, 2.0), want);
  EigenCluster mixed{Complex(0, 0), {3, 2, 1}};
  EXPECT_EQ(propagator(mixed, 0.0), Matrix::Identity(6, 6));
}

TEST(Propagator, GroupLaw) {
  EigenCluster c{Complex(0, 0), {4, 2, 1}};
  for (double t : {-1.5, 0.3, 2.0})
    for (double s : {-0.7, 0.0, 1.25})
      EXPECT_LT((propagator(c, t) * propagator(c, s) - propagator(c, t + s)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((propagator(c, 1.7) * propagator(c, -1.7) - Matrix::Identity(7, 7)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SemigroupApply, Examples) {
  const auto yule = compute_spectrum(Matrix::Ones(1, 1));
  EXPECT_NEAR(semigroup_apply(yule, vec({1}), std::log(2.0))[0], 2.0, 1e-14);

  const auto two = compute_spectrum(mat2(0, 1, 1, 0));
  const Vector f = vec({1, -1}) / std::sqrt(2.0);
  EXPECT_LT((semigroup_apply(two, f, 1.0) - std::exp(-1.0) * f).norm(), 1e-14);

  for (const char* name : test::kFixtures) {
    const auto sys = model_eigensystem(fixture(name));
    const Vector& phi = sys.basis.perron_right;
    const double g = sys.spectrum.perron_growth();
    EXPECT_LT((semigroup_apply(sys, phi, 1.3) - std::exp(g * 1.3) * phi).norm(), 1e-12) << name;
  }
}

TEST(SemigroupApply, MatchesMatrixExponentialOnFixtures) {
  for (const char* name : test::kFixtures) {
    const auto m = fixture(name);
    const auto sys = model_eigensystem(m);
    const Matrix l = mean_generator(m);
    for (double t : {0.0, 0.5, 2.0, 5.0}) {
      const Matrix e = expm(t * l);
      EXPECT_LT(rel(semigroup_matrix(sys, t), e), 1e-9) << name << " t=" << t;
      const Vector f = Vector::LinSpaced(m.dim(), 1.0, -0.5);
      EXPECT_LT((semigroup_apply(sys, f, t) - e * f).norm() / (e * f).norm(), 1e-9) << name;
      EXPECT_LT((dual_semigroup_apply(sys, f, t) - e.transpose() * f).norm() / (e.transpose() * f).norm(),
                1e-9)
          << name;
    }
  }
}

TEST(SpectralInvariants, DiagnosticsOnFixtures) {
  for (const char* name : test::kFixtures) {
    const auto sys = model_eigensystem(fixture(name));
    EXPECT_LT(sys.diagnostics.biorthogonality_residual, 1e-9) << name;
    EXPECT_LT(sys.diagnostics.action_residual, 1e-9) << name;
    EXPECT_LT(sys.diagnostics.condition, 1e12) << name;
  }
}

class RandomModels : public ::testing::TestWithParam<int> {};

TEST_P(RandomModels, SemigroupPropertiesHold) {
  std::mt19937_64 rng(1000 + GetParam());
  const int d = 1 + GetParam() % 4;
  const auto m = test::random_model(rng, d);
  const auto sys = model_eigensystem(m);
  std::normal_distribution<double> z;
  Vector f(d), g(d);
  for (int i = 0; i < d; ++i) f[i] = z(rng), g[i] = z(rng);

  // T_t T_s = T_{t+s}
  for (double t : {0.25, 1.0})
    for (double s : {0.5, 1.5}) {
      const Vector a = semigroup_apply(sys, semigroup_apply(sys, f, s), t);
      const Vector b = semigroup_apply(sys, f, t + s);
      EXPECT_LE((a - b).norm(), 1e-8 * std::max(1.0, b.norm()));
    }
  // Duality <T_t f, g> = <f, T*_t g>
  const double t = 0.8;
  const double lhs = semigroup_apply(sys, f, t).dot(g);
  const double rhs = f.dot(dual_semigroup_apply(sys, g, t));
  EXPECT_NEAR(lhs, rhs, 1e-9 * std::max(1.0, std::abs(lhs)));
  // Positivity
  EXPECT_GE(semigroup_apply(sys, f.cwiseAbs(), 1.2).minCoeff(), 0.0);
  // Dominance at t = 50
  const double big = 50.0;
  const Vector scaled = std::exp(-sys.spectrum.perron_growth() * big) * semigroup_apply(sys, f, big);
  const Vector limit = f.dot(sys.basis.perron_left) * sys.basis.perron_right;
  EXPECT_LE((scaled - limit).norm(), 1e-6 * std::max(1.0, f.norm()));
  // Biorthogonality
  EXPECT_LT(sys.diagnostics.biorthogonality_residual, 1e-9);
}

INSTANTIATE_TEST_SUITE_P(Seeds, RandomModels, ::testing::Range(0, 40));

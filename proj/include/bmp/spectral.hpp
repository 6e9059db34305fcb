#pragma once

// Spectral decomposition of the mean generator L = Q + diag(A^(1)).
//
// Each eigenvalue cluster k carries a right generalized eigenbasis Phi[k]
// (d x n_k, Jordan chains laid out block by block) and a dual basis
// PhiHat[k] with <phi_j^(k), phihat_n^(l)> = delta_{kl} delta_{jn}, where
// <f, g> = sum_x f(x) conj(g(x)). Within a block of size s the chain obeys
//   (L - mu) phi_1 = 0,  (L - mu) phi_q = phi_{q-1},
// so exp(tL) Phi = e^{mu t} Phi D(t) with D(t)_{pq} = t^{q-p}/(q-p)!.
//
// Eigenvalues of L are stored as growth rates mu_k (mu_k = -lambda_k in the
// usual notation); clusters are ordered by real part descending, then by
// imaginary part descending.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "bmp/model.hpp"
#include "bmp/types.hpp"

namespace bmp {

struct SpectralOptions {
  double cluster_tol = 1e-8;
  double rank_tol = 1e-8;
  double max_condition = 1e12;
  // When false, a non-simple or non-positive leading cluster is accepted
  // (used for bare Jordan fixtures that are not branching generators).
  bool require_perron = true;
};

enum class Regime { large, critical, small };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::large: return "large";
    case Regime::critical: return "critical";
    case Regime::small: return "small";
  }
  return "?";
}

struct EigenCluster {
  Complex growth;           // eigenvalue of L
  std::vector<int> blocks;  // Jordan block sizes d_{k,j}
  int conjugate = 0;        // index k' with growth_{k'} = conj(growth_k)

  int multiplicity() const { return std::accumulate(blocks.begin(), blocks.end(), 0); }
  bool is_real() const { return growth.imag() == 0.0; }
};

struct Spectrum {
  std::vector<EigenCluster> clusters;
  double cluster_tol = 1e-8;

  int size() const { return static_cast<int>(clusters.size()); }
  const EigenCluster& operator[](int k) const { return clusters.at(k); }

  // -lambda_1
  double perron_growth() const { return clusters.front().growth.real(); }

  double scale() const {
    double s = 1.0;
    for (const auto& c : clusters) s = std::max(s, std::abs(c.growth));
    return s;
  }

  // Same real part within the clustering tolerance.
  bool same_level(int k, int l) const {
    return std::abs(clusters[k].growth.real() - clusters[l].growth.real()) <= cluster_tol * scale();
  }

  // large: 2 Re(lambda_k) < lambda_1, critical: equality, small: otherwise.
  Regime regime(int k) const {
    const double gap = 2.0 * clusters.at(k).growth.real() - perron_growth();
    if (std::abs(gap) <= cluster_tol * scale()) return Regime::critical;
    return gap > 0.0 ? Regime::large : Regime::small;
  }
};

struct EigenBasis {
  std::vector<CMatrix> right;  // Phi[k]
  std::vector<CMatrix> left;   // PhiHat[k]
  Vector perron_right;         // phi_1, unit 2-norm, strictly positive
  Vector perron_left;          // phihat_1 with <phi_1, phihat_1> = 1
};

struct SpectralDiagnostics {
  double biorthogonality_residual = 0.0;
  double action_residual = 0.0;
  double condition = 1.0;
};

struct Eigensystem {
  Matrix generator;
  Spectrum spectrum;
  EigenBasis basis;
  SpectralDiagnostics diagnostics;

  int dim() const { return static_cast<int>(generator.rows()); }
};

// D_k(t): block diagonal, each block upper triangular with t^{q-p}/(q-p)!.
inline Matrix propagator(const EigenCluster& cluster, double t) {
  const int n = cluster.multiplicity();
  Matrix d = Matrix::Zero(n, n);
  int offset = 0;
  for (int size : cluster.blocks) {
    for (int p = 0; p < size; ++p) {
      double term = 1.0;
      for (int q = p; q < size; ++q) {
        d(offset + p, offset + q) = term;
        term *= t / static_cast<double>(q - p + 1);
      }
    }
    offset += size;
  }
  return d;
}

inline Matrix propagator(const Spectrum& s, int k, double t) { return propagator(s[k], t); }

// Pade scaling-and-squaring exponential, used as an independent check on
// the eigen-expansion.
inline Matrix expm(const Matrix& a) { return a.exp(); }

namespace detail {

template <class Scalar>
using DynMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using DynVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline double magnitude(double x) { return std::abs(x); }
inline double magnitude(const Complex& x) { return std::abs(x); }

// Orthonormal basis for the numerical null space of a.
template <class Scalar>
DynMatrix<Scalar> kernel_basis(const DynMatrix<Scalar>& a, double rank_tol) {
  Eigen::JacobiSVD<DynMatrix<Scalar>> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double cutoff = rank_tol * std::max(1.0, sv.size() ? sv[0] : 0.0);
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > cutoff) ++rank;
  const auto n = a.cols();
  return svd.matrixV().rightCols(n - rank);
}

// Orthonormal basis for the column span of a.
template <class Scalar>
DynMatrix<Scalar> range_basis(const DynMatrix<Scalar>& a, double rank_tol) {
  if (a.cols() == 0) return DynMatrix<Scalar>(a.rows(), 0);
  Eigen::JacobiSVD<DynMatrix<Scalar>> svd(a, Eigen::ComputeThinU);
  const auto& sv = svd.singularValues();
  const double cutoff = rank_tol * std::max(1.0, sv.size() ? sv[0] : 0.0);
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > cutoff) ++rank;
  return svd.matrixU().leftCols(rank);
}

// Scale to unit norm and rotate so the first non-negligible entry is real
// and positive.
template <class Scalar>
DynVector<Scalar> canonical_lead(DynVector<Scalar> v) {
  v /= v.norm();
  double peak = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) peak = std::max(peak, magnitude(v[i]));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (magnitude(v[i]) > 1e-8 * peak) {
      if constexpr (std::is_same_v<Scalar, double>) {
        if (v[i] < 0.0) v = -v;
      } else {
        v *= std::conj(v[i]) / std::abs(v[i]);
      }
      break;
    }
  }
  return v;
}

inline std::vector<int> nullities_to_blocks(const std::vector<int>& nullity) {
  // nullity[m] = dim ker N^m; blocks of size >= m number nullity[m] - nullity[m-1].
  std::vector<int> at_least(nullity.size() + 1, 0);
  for (std::size_t m = 1; m < nullity.size(); ++m) at_least[m] = nullity[m] - nullity[m - 1];
  std::vector<int> blocks;
  for (std::size_t m = nullity.size() - 1; m >= 1; --m) {
    const int exact = at_least[m] - at_least[m + 1];
    for (int i = 0; i < exact; ++i) blocks.push_back(static_cast<int>(m));
  }
  return blocks;  // descending
}

template <class Scalar>
struct Chains {
  std::vector<int> blocks;    // descending
  DynMatrix<Scalar> vectors;  // d x n, block by block, phi_1 .. phi_s
};

// Jordan chains of N = L - mu I on the generalized eigenspace of dimension
// `multiplicity`. Throws when the numerical rank profile does not close.
template <class Scalar>
Chains<Scalar> jordan_chains(const DynMatrix<Scalar>& n_op, int multiplicity, double rank_tol,
                             const std::vector<int>* declared) {
  const auto d = n_op.rows();
  std::vector<DynMatrix<Scalar>> kernels(multiplicity + 2);
  std::vector<int> nullity(multiplicity + 2, 0);
  kernels[0] = DynMatrix<Scalar>(d, 0);
  DynMatrix<Scalar> power = DynMatrix<Scalar>::Identity(d, d);
  for (int m = 1; m <= multiplicity + 1; ++m) {
    power = (power * n_op).eval();
    kernels[m] = kernel_basis<Scalar>(power, rank_tol);
    nullity[m] = static_cast<int>(kernels[m].cols());
  }
  if (nullity[multiplicity] != multiplicity || nullity[multiplicity + 1] != multiplicity) {
    throw SpectralError("rank profile of (L - mu I)^m does not close at multiplicity " +
                        std::to_string(multiplicity) + " (nullity " +
                        std::to_string(nullity[multiplicity]) + ")");
  }
  nullity.resize(multiplicity + 1);
  Chains<Scalar> out;
  out.blocks = nullities_to_blocks(nullity);
  if (declared) {
    auto want = *declared;
    std::sort(want.rbegin(), want.rend());
    if (want != out.blocks) {
      std::string got;
      for (int b : out.blocks) got += (got.empty() ? "" : ",") + std::to_string(b);
      throw SpectralError("declared block sizes inconsistent with rank profile (found " + got +
                          ")");
    }
  }

  struct Lead {
    DynVector<Scalar> v;
    int size;
  };
  std::vector<Lead> leads;
  const int largest = out.blocks.empty() ? 0 : out.blocks.front();
  for (int s = largest; s >= 1; --s) {
    const int need = static_cast<int>(std::count(out.blocks.begin(), out.blocks.end(), s));
    if (need == 0) continue;
    // Exclude ker N^{s-1} and the height-s vectors of longer chains.
    DynMatrix<Scalar> exclude(d, kernels[s - 1].cols() + static_cast<Eigen::Index>(leads.size()));
    exclude.leftCols(kernels[s - 1].cols()) = kernels[s - 1];
    Eigen::Index col = kernels[s - 1].cols();
    for (const auto& lead : leads) {
      DynVector<Scalar> w = lead.v;
      for (int i = 0; i < lead.size - s; ++i) w = n_op * w;
      exclude.col(col++) = w;
    }
    exclude.conservativeResize(d, col);
    const DynMatrix<Scalar> basis = range_basis<Scalar>(exclude, rank_tol);
    DynMatrix<Scalar> complement = kernels[s];
    if (basis.cols() > 0) complement -= basis * (basis.adjoint() * kernels[s]);
    Eigen::JacobiSVD<DynMatrix<Scalar>> svd(complement, Eigen::ComputeThinU);
    const auto& sv = svd.singularValues();
    if (sv.size() < need || sv[need - 1] <= rank_tol) {
      throw SpectralError("cannot extend Jordan chains of length " + std::to_string(s));
    }
    for (int i = 0; i < need; ++i)
      leads.push_back({canonical_lead<Scalar>(svd.matrixU().col(i)), s});
  }

  out.vectors = DynMatrix<Scalar>(d, multiplicity);
  Eigen::Index col = 0;
  for (const auto& lead : leads) {
    // phi_s = v, phi_{s-1} = N v, ..., phi_1 = N^{s-1} v
    DynVector<Scalar> w = lead.v;
    for (int q = lead.size - 1; q >= 0; --q) {
      out.vectors.col(col + q) = w;
      w = n_op * w;
    }
    col += lead.size;
  }
  return out;
}

struct ClusterSeed {
  Complex growth;
  int multiplicity;
  std::optional<std::vector<int>> blocks;
};

inline bool cluster_order(const ClusterSeed& a, const ClusterSeed& b) {
  if (a.growth.real() != b.growth.real()) return a.growth.real() > b.growth.real();
  return a.growth.imag() > b.growth.imag();
}

inline Eigensystem assemble(const Matrix& l, std::vector<ClusterSeed> seeds,
                            const SpectralOptions& opt, bool numerical) {
  const int d = static_cast<int>(l.rows());
  double scale = 1.0;
  for (const auto& s : seeds) scale = std::max(scale, std::abs(s.growth));
  const double tol = opt.cluster_tol * scale;

  std::sort(seeds.begin(), seeds.end(), cluster_order);
  const int count = static_cast<int>(seeds.size());

  Eigensystem sys;
  sys.generator = l;
  sys.spectrum.cluster_tol = opt.cluster_tol;
  sys.spectrum.clusters.resize(count);
  sys.basis.right.resize(count);
  sys.basis.left.resize(count);

  // Pair conjugates; a real matrix has a conjugation-symmetric spectrum.
  std::vector<int> partner(count, -1);
  for (int k = 0; k < count; ++k) {
    if (seeds[k].growth.imag() == 0.0) {
      partner[k] = k;
      continue;
    }
    if (partner[k] >= 0) continue;
    int best = -1;
    for (int j = 0; j < count; ++j) {
      if (j == k || partner[j] >= 0) continue;
      if (std::abs(seeds[j].growth - std::conj(seeds[k].growth)) <= tol &&
          seeds[j].multiplicity == seeds[k].multiplicity) {
        best = j;
        break;
      }
    }
    if (best < 0) throw SpectralError("complex eigenvalue without conjugate partner");
    partner[k] = best;
    partner[best] = k;
    seeds[best].growth = std::conj(seeds[k].growth);
  }
  // Re-sort is stable under exact conjugation, but partner indices must follow.
  for (int k = 0; k < count; ++k) {
    auto& c = sys.spectrum.clusters[k];
    c.growth = seeds[k].growth;
    c.conjugate = partner[k];
  }

  for (int k = 0; k < count; ++k) {
    auto& c = sys.spectrum.clusters[k];
    const auto* declared = seeds[k].blocks ? &*seeds[k].blocks : nullptr;
    if (c.is_real()) {
      Matrix n_op = l - c.growth.real() * Matrix::Identity(d, d);
      auto chains = jordan_chains<double>(n_op, seeds[k].multiplicity, opt.rank_tol, declared);
      c.blocks = chains.blocks;
      sys.basis.right[k] = chains.vectors.cast<Complex>();
    } else if (c.growth.imag() > 0.0) {
      CMatrix n_op = l.cast<Complex>() - c.growth * CMatrix::Identity(d, d);
      auto chains = jordan_chains<Complex>(n_op, seeds[k].multiplicity, opt.rank_tol, declared);
      c.blocks = chains.blocks;
      sys.basis.right[k] = chains.vectors;
    }
  }
  for (int k = 0; k < count; ++k) {
    auto& c = sys.spectrum.clusters[k];
    if (c.growth.imag() < 0.0) {
      c.blocks = sys.spectrum.clusters[c.conjugate].blocks;
      sys.basis.right[k] = sys.basis.right[c.conjugate].conjugate();
    }
  }

  CMatrix v(d, d);
  {
    int col = 0;
    for (int k = 0; k < count; ++k) {
      const auto n = sys.basis.right[k].cols();
      v.middleCols(col, n) = sys.basis.right[k];
      col += static_cast<int>(n);
    }
    if (col != d) throw SpectralError("cluster multiplicities do not sum to the dimension");
  }
  Eigen::JacobiSVD<CMatrix> svd_v(v);
  const auto& sv = svd_v.singularValues();
  sys.diagnostics.condition = sv[d - 1] > 0.0 ? sv[0] / sv[d - 1] : INFINITY;
  if (!(sys.diagnostics.condition <= opt.max_condition)) {
    throw SpectralError(
        "ill-conditioned Jordan chain recovery (condition estimate " +
        std::to_string(sys.diagnostics.condition) + "); supply a declared structure instead");
  }
  const CMatrix w = v.inverse().adjoint();
  {
    int col = 0;
    for (int k = 0; k < count; ++k) {
      const auto n = sys.basis.right[k].cols();
      sys.basis.left[k] = w.middleCols(col, n);
      col += static_cast<int>(n);
    }
  }
  for (int k = 0; k < count; ++k) {
    const auto& c = sys.spectrum.clusters[k];
    if (c.is_real())
      sys.basis.left[k] = sys.basis.left[k].real().cast<Complex>();
    else if (c.growth.imag() < 0.0)
      sys.basis.left[k] = sys.basis.left[c.conjugate].conjugate();
  }

  if (numerical) {
    // Nearly coincident clusters with nearly parallel eigenvectors are an
    // unresolved Jordan block.
    const double near = std::sqrt(opt.cluster_tol) * scale;
    for (int k = 0; k < count; ++k) {
      const double kappa = sys.basis.right[k].norm() * sys.basis.left[k].norm();
      if (kappa <= 1.0 / std::sqrt(opt.cluster_tol)) continue;
      for (int j = 0; j < count; ++j) {
        if (j != k && std::abs(sys.spectrum.clusters[j].growth - sys.spectrum.clusters[k].growth) <= near)
          throw SpectralError(
              "nearly defective eigenvalue cluster (eigenvalue condition " + std::to_string(kappa) +
              "); supply a declared structure instead");
      }
    }
  }

  if (opt.require_perron) {
    const auto& lead = sys.spectrum.clusters.front();
    if (!lead.is_real() || lead.multiplicity() != 1)
      throw SpectralError("dominant eigenvalue is not real and simple");
    if (count > 1 && lead.growth.real() - sys.spectrum.clusters[1].growth.real() <= tol)
      throw SpectralError("dominant eigenvalue is not strictly dominant");
    Vector right = sys.basis.right[0].col(0).real();
    Vector left = sys.basis.left[0].col(0).real();
    if ((right.array() <= 0.0).any() || (left.array() <= 0.0).any())
      throw SpectralError("Perron eigenvectors are not strictly positive");
    sys.basis.perron_right = right;
    sys.basis.perron_left = left;
  } else if (sys.spectrum.clusters.front().is_real() &&
             sys.spectrum.clusters.front().multiplicity() == 1) {
    sys.basis.perron_right = sys.basis.right[0].col(0).real();
    sys.basis.perron_left = sys.basis.left[0].col(0).real();
  }

  // Diagnostics.
  CMatrix what(d, d);
  {
    int col = 0;
    for (int k = 0; k < count; ++k) {
      const auto n = sys.basis.left[k].cols();
      what.middleCols(col, n) = sys.basis.left[k];
      col += static_cast<int>(n);
    }
  }
  sys.diagnostics.biorthogonality_residual =
      (v.transpose() * what.conjugate() - CMatrix::Identity(d, d)).cwiseAbs().maxCoeff();
  double action = 0.0;
  for (int k = 0; k < count; ++k) {
    const auto& c = sys.spectrum.clusters[k];
    const int n = c.multiplicity();
    CMatrix gen = c.growth * CMatrix::Identity(n, n);
    int offset = 0;
    for (int size : c.blocks) {
      for (int q = 1; q < size; ++q) gen(offset + q - 1, offset + q) = 1.0;
      offset += size;
    }
    const CMatrix lhs = l.cast<Complex>() * sys.basis.right[k];
    action = std::max(action, (lhs - sys.basis.right[k] * gen).cwiseAbs().maxCoeff());
  }
  sys.diagnostics.action_residual = action;
  return sys;
}

}  // namespace detail

// Numerical route: real Schur eigenvalues, clustering, rank-profile Jordan
// recovery. Defective eigenvalues that the eigen-solver splits apart are
// rejected in favour of declared_structure.
inline Eigensystem compute_spectrum(const Matrix& l, const SpectralOptions& opt = {}) {
  if (l.rows() != l.cols() || l.rows() == 0) throw SpectralError("generator must be square");
  if (!(opt.cluster_tol > 0.0)) throw SpectralError("cluster tolerance must be positive");
  Eigen::EigenSolver<Matrix> solver(l, false);
  if (solver.info() != Eigen::Success) throw SpectralError("eigenvalue iteration failed");
  const CVector values = solver.eigenvalues();
  const int d = static_cast<int>(values.size());
  double scale = 1.0;
  for (int i = 0; i < d; ++i) scale = std::max(scale, std::abs(values[i]));
  const double tol = opt.cluster_tol * scale;

  // Union-find over pairs within tolerance.
  std::vector<int> parent(d);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j)
      if (std::abs(values[i] - values[j]) <= tol) parent[find(i)] = find(j);

  std::vector<detail::ClusterSeed> seeds;
  std::vector<int> root_index(d, -1);
  std::vector<Complex> sums;
  for (int i = 0; i < d; ++i) {
    const int r = find(i);
    if (root_index[r] < 0) {
      root_index[r] = static_cast<int>(seeds.size());
      seeds.push_back({0.0, 0, std::nullopt});
      sums.push_back(0.0);
    }
    auto& s = seeds[root_index[r]];
    sums[root_index[r]] += values[i];
    ++s.multiplicity;
  }
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    Complex c = sums[k] / static_cast<double>(seeds[k].multiplicity);
    if (std::abs(c.imag()) <= tol) c.imag(0.0);
    seeds[k].growth = c;
  }
  return detail::assemble(l, std::move(seeds), opt, true);
}

// Declared route: the caller lists every eigenvalue with its block sizes;
// the rank profile of (L - mu I)^m is checked against the declaration.
inline Eigensystem declared_structure(const Matrix& l, const SpectralDeclaration& declaration,
                                      const SpectralOptions& opt = {}) {
  if (l.rows() != l.cols() || l.rows() == 0) throw SpectralError("generator must be square");
  std::vector<detail::ClusterSeed> seeds;
  int total = 0;
  for (const auto& dv : declaration) {
    if (dv.blocks.empty()) throw SpectralError("declared eigenvalue without blocks");
    const int n = std::accumulate(dv.blocks.begin(), dv.blocks.end(), 0);
    total += n;
    seeds.push_back({dv.value, n, dv.blocks});
  }
  if (total != l.rows())
    throw SpectralError("declared multiplicities sum to " + std::to_string(total) +
                        ", expected " + std::to_string(l.rows()));
  return detail::assemble(l, std::move(seeds), opt, false);
}

// Eigensystem of a model's mean generator, honouring a declared structure.
inline Eigensystem model_eigensystem(const BranchingModel& m, const SpectralOptions& opt = {}) {
  const Matrix l = mean_generator(m);
  if (m.structure) return declared_structure(l, *m.structure, opt);
  return compute_spectrum(l, opt);
}

// exp(tL) assembled from the eigen-expansion.
inline Matrix semigroup_matrix(const Eigensystem& sys, double t) {
  const int d = sys.dim();
  CMatrix acc = CMatrix::Zero(d, d);
  for (int k = 0; k < sys.spectrum.size(); ++k) {
    const auto& c = sys.spectrum[k];
    if (c.growth.imag() < 0.0) continue;  // folded into its conjugate below
    CMatrix term = std::exp(c.growth * t) *
                   (sys.basis.right[k] * propagator(c, t).cast<Complex>() *
                    sys.basis.left[k].adjoint());
    if (c.is_real())
      acc += term;
    else
      acc += 2.0 * term.real().cast<Complex>();
  }
  return acc.real();
}

// T_t f = sum_k e^{mu_k t} Phi[k] D_k(t) <f, PhiHat[k]>.
inline Vector semigroup_apply(const Eigensystem& sys, const Vector& f, double t) {
  const int d = sys.dim();
  Vector out = Vector::Zero(d);
  const CVector fc = f.cast<Complex>();
  for (int k = 0; k < sys.spectrum.size(); ++k) {
    const auto& c = sys.spectrum[k];
    if (c.growth.imag() < 0.0) continue;
    const CVector coeff = sys.basis.left[k].adjoint() * fc;
    const CVector term =
        std::exp(c.growth * t) * (sys.basis.right[k] * (propagator(c, t).cast<Complex>() * coeff));
    out += c.is_real() ? term.real() : Vector(2.0 * term.real());
  }
  return out;
}

// Dual semigroup exp(t L^T) applied to g.
inline Vector dual_semigroup_apply(const Eigensystem& sys, const Vector& g, double t) {
  const int d = sys.dim();
  Vector out = Vector::Zero(d);
  const CVector gc = g.cast<Complex>();
  for (int k = 0; k < sys.spectrum.size(); ++k) {
    const auto& c = sys.spectrum[k];
    if (c.growth.imag() < 0.0) continue;
    const CVector coeff = sys.basis.right[k].adjoint() * gc;
    const CVector term = std::exp(std::conj(c.growth) * t) *
                         (sys.basis.left[k] *
                          (propagator(c, t).transpose().cast<Complex>() * coeff));
    out += c.is_real() ? term.real() : Vector(2.0 * term.real());
  }
  return out;
}

}  // namespace bmp

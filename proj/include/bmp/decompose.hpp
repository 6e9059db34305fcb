#pragma once

// Projection of a test function onto the generalized eigenbasis and its
// large / critical / small splitting.

#include <cmath>
#include <optional>
#include <vector>

#include "bmp/spectral.hpp"

namespace bmp {

inline constexpr double kZeroTol = 1e-10;

// v_k = <f, PhiHat[k]>, one coefficient vector per cluster.
struct Projection {
  std::vector<CVector> coefficients;

  const CVector& operator[](int k) const { return coefficients.at(k); }
  int size() const { return static_cast<int>(coefficients.size()); }
};

// Leading-level indices. gamma is empty when every coefficient vanishes.
struct LeadingLevel {
  std::optional<int> gamma;
  int zeta = -1;
};

struct Decomposition {
  Vector f_la, f_cr, f_sm;
  Projection projection;
  LeadingLevel level;   // gamma(f), zeta(f)
  int tau = 0;          // tau(f); 0 when gamma is empty
  int tau_cr = 0;       // tau(f_cr)
  std::vector<CVector> critical_coefficients;  // F_{f_cr,k}, zero outside critical k
};

inline Projection project(const Eigensystem& sys, const Vector& f) {
  Projection p;
  const CVector fc = f.cast<Complex>();
  const int n = sys.spectrum.size();
  p.coefficients.resize(n);
  for (int k = 0; k < n; ++k) p.coefficients[k] = sys.basis.left[k].adjoint() * fc;
  for (int k = 0; k < n; ++k) {
    const auto& c = sys.spectrum[k];
    if (c.growth.imag() < 0.0) p.coefficients[k] = p.coefficients[c.conjugate].conjugate();
    if (c.is_real()) p.coefficients[k] = p.coefficients[k].real().cast<Complex>();
  }
  return p;
}

// Sum_k Phi[k] v_k over the clusters selected by `keep`.
template <class Pred>
Vector synthesize(const Eigensystem& sys, const Projection& p, Pred keep) {
  CVector acc = CVector::Zero(sys.dim());
  for (int k = 0; k < sys.spectrum.size(); ++k)
    if (keep(k)) acc += sys.basis.right[k] * p[k];
  return acc.real();
}

inline Vector reconstruct(const Eigensystem& sys, const Projection& p) {
  return synthesize(sys, p, [](int) { return true; });
}

inline LeadingLevel gamma_zeta(const Projection& p, const Spectrum& s, double zero_tol = kZeroTol) {
  LeadingLevel out;
  for (int k = 0; k < p.size(); ++k) {
    if (p[k].norm() > zero_tol) {
      out.gamma = k;
      break;
    }
  }
  if (!out.gamma) return out;
  out.zeta = *out.gamma;
  for (int k = *out.gamma + 1; k < s.size(); ++k)
    if (s.same_level(k, *out.gamma)) out.zeta = k;
  return out;
}

namespace detail {

// Highest chain position with a non-negligible coefficient, per block; the
// polynomial (D(t) v)_p has degree (that position) - p.
inline int block_degree(const EigenCluster& c, const CVector& v, double zero_tol) {
  int degree = -1;
  int offset = 0;
  for (int size : c.blocks) {
    for (int q = size - 1; q >= 0; --q) {
      if (std::abs(v[offset + q]) > zero_tol) {
        degree = std::max(degree, q);
        break;
      }
    }
    offset += size;
  }
  return degree;
}

}  // namespace detail

// tau(f): maximal polynomial degree of D_k(t) v_k over gamma(f) <= k <= zeta(f).
// Identically zero components have degree -inf and are skipped.
inline int tau_degree(const Projection& p, const Spectrum& s, double zero_tol = kZeroTol) {
  const auto level = gamma_zeta(p, s, zero_tol);
  if (!level.gamma) throw Error("tau is undefined for a function with vanishing projection");
  int tau = 0;
  for (int k = *level.gamma; k <= level.zeta; ++k)
    tau = std::max(tau, detail::block_degree(s[k], p[k], zero_tol));
  return tau;
}

// F_{f,k}: coefficient of t^tau in D_k(t) v_k, exact from the block layout.
// Entries outside gamma..zeta are zero vectors.
inline std::vector<CVector> leading_coefficients(const Projection& p, const Spectrum& s,
                                                 double zero_tol = kZeroTol) {
  const auto level = gamma_zeta(p, s, zero_tol);
  if (!level.gamma) throw Error("leading coefficients undefined for a vanishing projection");
  const int tau = tau_degree(p, s, zero_tol);
  double factorial = 1.0;
  for (int i = 2; i <= tau; ++i) factorial *= i;
  std::vector<CVector> out(s.size());
  for (int k = 0; k < s.size(); ++k) {
    const int n = s[k].multiplicity();
    out[k] = CVector::Zero(n);
    if (k < *level.gamma || k > level.zeta) continue;
    int offset = 0;
    for (int size : s[k].blocks) {
      for (int pos = 0; pos + tau < size; ++pos) out[k][offset + pos] = p[k][offset + pos + tau] / factorial;
      offset += size;
    }
  }
  return out;
}

inline Decomposition split(const Eigensystem& sys, const Vector& f, double zero_tol = kZeroTol) {
  const auto& s = sys.spectrum;
  Decomposition out;
  out.projection = project(sys, f);
  out.f_la = synthesize(sys, out.projection, [&](int k) { return s.regime(k) == Regime::large; });
  out.f_cr = synthesize(sys, out.projection, [&](int k) { return s.regime(k) == Regime::critical; });
  out.f_sm = f - out.f_la - out.f_cr;
  out.level = gamma_zeta(out.projection, s, zero_tol);
  if (out.level.gamma) out.tau = tau_degree(out.projection, s, zero_tol);

  // Critical part: its projection is the critical slice of f's projection.
  Projection crit;
  crit.coefficients.resize(s.size());
  for (int k = 0; k < s.size(); ++k)
    crit.coefficients[k] = s.regime(k) == Regime::critical
                               ? out.projection[k]
                               : CVector(CVector::Zero(s[k].multiplicity()));
  const auto crit_level = gamma_zeta(crit, s, zero_tol);
  out.critical_coefficients.resize(s.size());
  if (crit_level.gamma) {
    out.tau_cr = tau_degree(crit, s, zero_tol);
    out.critical_coefficients = leading_coefficients(crit, s, zero_tol);
  } else {
    for (int k = 0; k < s.size(); ++k) out.critical_coefficients[k] = CVector::Zero(s[k].multiplicity());
  }
  return out;
}

// E_t(f_la) = sum_{large k} e^{mu_k t} H_inf^(k) D_k(t) v_k. `h_inf[k]` must
// hold a row of length n_k for every large k; other entries are ignored.
inline double compensator(const Eigensystem& sys, const std::vector<CVector>& h_inf,
                          const Vector& f, double t) {
  const auto& s = sys.spectrum;
  const auto p = project(sys, f);
  Complex acc = 0.0;
  for (int k = 0; k < s.size(); ++k) {
    if (s.regime(k) != Regime::large) continue;
    if (k >= static_cast<int>(h_inf.size()) || h_inf[k].size() != s[k].multiplicity())
      throw Error("missing martingale limit for large cluster " + std::to_string(k));
    const CVector dv = propagator(s[k], t).cast<Complex>() * p[k];
    acc += std::exp(s[k].growth * t) * h_inf[k].cwiseProduct(dv).sum();
  }
  return acc.real();
}

// I_s f_la = sum_{large k} e^{-mu_k s} Phi[k] D_k(s)^{-1} v_k.
inline Vector large_flow(const Eigensystem& sys, const Vector& f_la, double s_time) {
  const auto& s = sys.spectrum;
  const auto p = project(sys, f_la);
  CVector acc = CVector::Zero(sys.dim());
  for (int k = 0; k < s.size(); ++k) {
    if (s.regime(k) != Regime::large) continue;
    acc += std::exp(-s[k].growth * s_time) *
           (sys.basis.right[k] * (propagator(s[k], -s_time).cast<Complex>() * p[k]));
  }
  return acc.real();
}

}  // namespace bmp

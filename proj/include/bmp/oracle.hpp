#pragma once

// Closed-form single-type references. These deliberately share no code with
// the spectral / moment machinery they are used to check.

#include <array>
#include <cmath>

#include "bmp/types.hpp"

namespace bmp::oracle {

// E Z_t^k for a Yule process of rate beta from one particle: Z_t is
// geometric on {1, 2, ...} with success probability q = e^{-beta t}.
inline double yule_moments(double beta, double t, int order) {
  if (!(t >= 0.0)) throw ValidationError("time must be non-negative");
  const double q = std::exp(-beta * t);
  switch (order) {
    case 1: return 1.0 / q;
    case 2: return (2.0 - q) / (q * q);
    case 3: return (6.0 - 6.0 * q + q * q) / (q * q * q);
    case 4: return (24.0 - 36.0 * q + 14.0 * q * q - q * q * q) / (q * q * q * q);
    default: throw ValidationError("Yule moment order must be in 1..4");
  }
}

inline std::array<double, 4> yule_moments(double beta, double t) {
  return {yule_moments(beta, t, 1), yule_moments(beta, t, 2), yule_moments(beta, t, 3),
          yule_moments(beta, t, 4)};
}

// Var(e^{-beta t} Z_t) = 1 - e^{-beta t}.
inline double yule_martingale_variance(double beta, double t) { return -std::expm1(-beta * t); }

// P(Z_t = 0) for the binary birth-death process: each particle dies at rate
// beta p0 and splits in two at rate beta p2. t may be +infinity.
inline double birth_death_extinction(double beta, double p0, double p2, double t) {
  if (!(t >= 0.0)) throw ValidationError("time must be non-negative");
  if (p0 < 0.0 || p2 < 0.0 || std::abs(p0 + p2 - 1.0) > 1e-12)
    throw ValidationError("birth-death law needs p0 + p2 = 1");
  const double birth = beta * p2;
  const double death = beta * p0;
  if (death == 0.0) return 0.0;
  if (birth == death) {
    if (std::isinf(t)) return 1.0;
    return birth * t / (1.0 + birth * t);
  }
  const double r = birth - death;
  if (std::isinf(t)) return r > 0.0 ? death / birth : 1.0;
  if (r > 0.0) {
    const double decay = std::exp(-r * t);
    return death * -std::expm1(-r * t) / (birth - death * decay);
  }
  const double grow = std::exp(r * t);
  return death * std::expm1(r * t) / (birth * grow - death);
}

}  // namespace bmp::oracle

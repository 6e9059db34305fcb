#pragma once

// Adaptive Gauss-Legendre quadrature for vector-valued integrands. Node and
// weight tables come from Boost.Math; the panel bisection is local.

#include <algorithm>
#include <cmath>

#include <boost/math/quadrature/gauss.hpp>

#include "bmp/types.hpp"

namespace bmp {

struct QuadratureOptions {
  double rel_tol = 1e-10;
  double abs_tol = 1e-300;
  int max_depth = 24;
};

namespace detail {

inline constexpr unsigned kGaussPoints = 15;
using GaussRule = boost::math::quadrature::gauss<double, kGaussPoints>;

template <class F>
Vector gauss_panel(F& f, double lo, double hi) {
  const auto& x = GaussRule::abscissa();
  const auto& w = GaussRule::weights();
  const double c = 0.5 * (lo + hi);
  const double h = 0.5 * (hi - lo);
  // Odd rule: abscissa[0] is the midpoint.
  Vector acc = w[0] * f(c);
  for (std::size_t i = 1; i < x.size(); ++i) acc += w[i] * (f(c - h * x[i]) + f(c + h * x[i]));
  return h * acc;
}

template <class F>
Vector refine(F& f, double lo, double hi, const Vector& whole, const QuadratureOptions& opt,
              int depth) {
  const double mid = 0.5 * (lo + hi);
  Vector left = gauss_panel(f, lo, mid);
  Vector right = gauss_panel(f, mid, hi);
  Vector both = left + right;
  const double diff = (both - whole).cwiseAbs().maxCoeff();
  const double size = both.cwiseAbs().maxCoeff();
  if (diff <= std::max(opt.abs_tol, opt.rel_tol * size) || depth >= opt.max_depth) return both;
  return refine(f, lo, mid, left, opt, depth + 1) + refine(f, mid, hi, right, opt, depth + 1);
}

}  // namespace detail

// Integral of f over [a, b]; f maps double -> Vector of fixed length.
template <class F>
Vector integrate(F&& f, double a, double b, const QuadratureOptions& opt = {}) {
  if (a == b) return Vector::Zero(f(a).size());
  if (a > b) return -integrate(f, b, a, opt);
  Vector whole = detail::gauss_panel(f, a, b);
  return detail::refine(f, a, b, whole, opt, 0);
}

template <class F>
double integrate_scalar(F&& f, double a, double b, const QuadratureOptions& opt = {}) {
  auto wrapped = [&](double s) {
    Vector v(1);
    v[0] = f(s);
    return v;
  };
  return integrate(wrapped, a, b, opt)[0];
}

}  // namespace bmp

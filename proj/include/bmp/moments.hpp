#pragma once

// Exact moments of <f, X_t> and the limiting variance constants.
//
// Two independent routes for the moments:
//   * convolution formulas evaluated by nested adaptive quadrature;
//   * the coupled linear moment system dm_k/dt = L m_k + sources, integrated
//     with an adaptive Dormand-Prince stepper.
// Starting from one particle at x, m_k(t, x) = E_x <f, X_t>^k.

#include <cmath>
#include <optional>
#include <vector>

#include <boost/numeric/odeint.hpp>

#include "bmp/decompose.hpp"
#include "bmp/exp_poly.hpp"
#include "bmp/model.hpp"
#include "bmp/quadrature.hpp"
#include "bmp/spectral.hpp"

namespace bmp {

// ---------------------------------------------------------------------------
// Convolution route.

class ConvolutionMoments {
 public:
  ConvolutionMoments(const BranchingModel& model, const Eigensystem& sys, Vector f,
                     QuadratureOptions opt = {})
      : a_(branching_moments(model)), sys_(sys), f_(std::move(f)), opt_(opt) {}

  Vector first(double t) const { return semigroup_apply(sys_, f_, t); }

  // int_0^t T_s[A2 |T_{t-s} f|^2] ds + T_t(f^2)
  Vector second(double t) const {
    check_time(t);
    auto integrand = [&](double s) -> Vector {
      const Vector inner = first(t - s);
      return semigroup_apply(sys_, a_.a2.cwiseProduct(inner.cwiseAbs2()), s);
    };
    return integrate(integrand, 0.0, t, opt_) + semigroup_apply(sys_, f_.array().square().matrix(), t);
  }

  // int_0^t T_{t-s}[A3 (T_s f)^3 + 3 A2 m2(s) T_s f] ds + T_t(f^3)
  Vector third(double t) const {
    check_time(t);
    auto integrand = [&](double s) -> Vector {
      const Vector m1 = first(s);
      const Vector m2 = second(s);
      const Vector src = a_.a3.cwiseProduct(m1.array().cube().matrix()) +
                         3.0 * a_.a2.cwiseProduct(m2).cwiseProduct(m1);
      return semigroup_apply(sys_, src, t - s);
    };
    return integrate(integrand, 0.0, t, opt_) + semigroup_apply(sys_, f_.array().cube().matrix(), t);
  }

  // int_0^t T_{t-s}[A4 (T_s f)^4 + 6 A3 (T_s f)^2 m2(s) + 4 A2 m3(s) T_s f
  //                + 3 A2 m2(s)^2] ds + T_t(f^4)
  Vector fourth(double t) const {
    check_time(t);
    auto integrand = [&](double s) -> Vector {
      const Vector m1 = first(s);
      const Vector m2 = second(s);
      const Vector m3 = third(s);
      const Vector m1sq = m1.cwiseAbs2();
      const Vector src = a_.a4.cwiseProduct(m1sq.cwiseAbs2()) +
                         6.0 * a_.a3.cwiseProduct(m1sq).cwiseProduct(m2) +
                         4.0 * a_.a2.cwiseProduct(m3).cwiseProduct(m1) +
                         3.0 * a_.a2.cwiseProduct(m2.cwiseAbs2());
      return semigroup_apply(sys_, src, t - s);
    };
    return integrate(integrand, 0.0, t, opt_) +
           semigroup_apply(sys_, f_.array().square().square().matrix(), t);
  }

 private:
  static void check_time(double t) {
    if (!(t >= 0.0)) throw MomentError("moment time must be non-negative");
  }

  BranchingMoments a_;
  const Eigensystem& sys_;
  Vector f_;
  QuadratureOptions opt_;
};

inline Vector second_moment(const BranchingModel& m, const Eigensystem& sys, const Vector& f, double t) {
  return ConvolutionMoments(m, sys, f).second(t);
}
inline Vector third_moment(const BranchingModel& m, const Eigensystem& sys, const Vector& f, double t) {
  return ConvolutionMoments(m, sys, f).third(t);
}
inline Vector fourth_moment(const BranchingModel& m, const Eigensystem& sys, const Vector& f, double t) {
  return ConvolutionMoments(m, sys, f).fourth(t);
}

// ---------------------------------------------------------------------------
// Moment ODE route.

struct MomentTable {
  std::vector<double> grid;
  int order = 0;
  // values[i][k - 1] = m_k(grid[i], .)
  std::vector<std::vector<Vector>> values;

  const Vector& at(std::size_t i, int k) const { return values.at(i).at(k - 1); }
};

struct OdeOptions {
  double abs_tol = 1e-10;
  double rel_tol = 1e-12;
  int max_steps = 2'000'000;
};

inline MomentTable moment_ode(const BranchingModel& model, const Vector& f,
                              const std::vector<double>& grid, int order,
                              const OdeOptions& opt = {}) {
  if (order < 1 || order > 4) throw MomentError("moment order must be in 1..4");
  if (grid.empty()) throw MomentError("empty time grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0)) throw MomentError("time grid must be non-negative");
    if (i > 0 && !(grid[i] > grid[i - 1])) throw MomentError("time grid must be increasing");
  }
  const int d = model.dim();
  const Matrix l = mean_generator(model);
  const auto a = branching_moments(model);

  using State = std::vector<double>;
  auto rhs = [&](const State& y, State& dy, double) {
    Eigen::Map<const Matrix> m(y.data(), d, order);
    Eigen::Map<Matrix> dm(dy.data(), d, order);
    dm.noalias() = l * m;
    const auto m1 = m.col(0).array();
    if (order >= 2) dm.col(1).array() += a.a2.array() * m1.square();
    if (order >= 3)
      dm.col(2).array() += 3.0 * a.a2.array() * m.col(1).array() * m1 + a.a3.array() * m1.cube();
    if (order >= 4) {
      const auto m2 = m.col(1).array();
      dm.col(3).array() += a.a4.array() * m1.square().square() +
                           6.0 * a.a3.array() * m1.square() * m2 +
                           4.0 * a.a2.array() * m.col(2).array() * m1 + 3.0 * a.a2.array() * m2.square();
    }
  };

  State y(static_cast<std::size_t>(d) * order);
  for (int k = 0; k < order; ++k)
    for (int x = 0; x < d; ++x) y[k * d + x] = std::pow(f[x], k + 1);

  std::vector<double> times;
  const bool prepend = grid.front() > 0.0;
  if (prepend) times.push_back(0.0);
  times.insert(times.end(), grid.begin(), grid.end());

  MomentTable table;
  table.grid = grid;
  table.order = order;
  bool skip_start = prepend;
  auto observer = [&](const State& s, double) {
    if (skip_start) {
      skip_start = false;
      return;
    }
    std::vector<Vector> row(order);
    for (int k = 0; k < order; ++k) row[k] = Eigen::Map<const Vector>(s.data() + k * d, d);
    table.values.push_back(std::move(row));
  };

  namespace odeint = boost::numeric::odeint;
  auto stepper = odeint::make_controlled(opt.abs_tol, opt.rel_tol, odeint::runge_kutta_dopri5<State>());
  const double span = times.back() - times.front();
  const double dt0 = span > 0.0 ? std::min(1e-3, span / 16.0) : 1e-3;
  try {
    if (times.size() == 1) {
      observer(y, times.front());
    } else {
      odeint::integrate_times(stepper, rhs, y, times.begin(), times.end(), dt0, observer,
                              odeint::max_step_checker(opt.max_steps));
    }
  } catch (const odeint::odeint_error& e) {
    throw MomentError(std::string("moment ODE step-size underflow: ") + e.what());
  }
  for (const auto& row : table.values)
    for (const auto& v : row)
      if (!v.allFinite()) throw MomentError("moment ODE produced non-finite values");
  return table;
}

// ---------------------------------------------------------------------------
// Variance constants.

struct VarianceConstants {
  double sm = 0.0;
  double cr = 0.0;
  double la = 0.0;
  int tau_cr = 0;
};

namespace detail {

// <A2 |E(s)|^2, phihat_1> e^{shift s} as one exponential polynomial.
inline ExpPoly weighted_square(const std::vector<ExpPoly>& e, const Vector& weight, Complex shift) {
  ExpPoly acc;
  for (std::size_t x = 0; x < e.size(); ++x) {
    if (weight[x] == 0.0) continue;
    acc += (e[x] * e[x].conj()).scaled(weight[x]);
  }
  return acc.shifted(shift);
}

inline double weighted_norm2(const Vector& g, const Vector& weight) {
  return (g.cwiseAbs2().array() * weight.array()).sum();
}

}  // namespace detail

// int_0^inf e^{lambda_1 s} <A2 |T_s f_sm|^2, phihat_1> ds + <|f_sm|^2, phihat_1>
inline double sigma_sm(const BranchingModel& m, const Eigensystem& sys, const Decomposition& dec) {
  const auto a = branching_moments(m);
  if (a.deterministic()) return 0.0;
  const auto& s = sys.spectrum;
  const auto flow = eigen_flow(sys, dec.projection, 1.0,
                               [&](int k) { return s.regime(k) == Regime::small; });
  const Vector weight = a.a2.cwiseProduct(sys.basis.perron_left);
  const auto integrand = detail::weighted_square(flow, weight, -s.perron_growth());
  return integrand.integral_to_infinity().real() +
         detail::weighted_norm2(dec.f_sm, sys.basis.perron_left);
}

// (1 + 2 tau(f_cr))^{-1} sum_{critical k} <A2 |Phi[k] F_{f_cr,k}|^2, phihat_1>
inline double sigma_cr(const BranchingModel& m, const Eigensystem& sys, const Decomposition& dec) {
  const auto a = branching_moments(m);
  if (a.deterministic()) return 0.0;
  const auto& s = sys.spectrum;
  const Vector weight = a.a2.cwiseProduct(sys.basis.perron_left);
  double acc = 0.0;
  for (int k = 0; k < s.size(); ++k) {
    if (s.regime(k) != Regime::critical) continue;
    const CVector g = sys.basis.right[k] * dec.critical_coefficients[k];
    acc += (g.cwiseAbs2().array() * weight.array()).sum();
  }
  return acc / (1.0 + 2.0 * dec.tau_cr);
}

// int_0^inf e^{-lambda_1 s} <A2 |I_s f_la|^2, phihat_1> ds - <|f_la|^2, phihat_1>
inline double sigma_la(const BranchingModel& m, const Eigensystem& sys, const Decomposition& dec) {
  const auto a = branching_moments(m);
  if (a.deterministic()) return 0.0;
  const auto& s = sys.spectrum;
  const auto flow = eigen_flow(sys, dec.projection, -1.0,
                               [&](int k) { return s.regime(k) == Regime::large; });
  const Vector weight = a.a2.cwiseProduct(sys.basis.perron_left);
  const auto integrand = detail::weighted_square(flow, weight, s.perron_growth());
  return integrand.integral_to_infinity().real() -
         detail::weighted_norm2(dec.f_la, sys.basis.perron_left);
}

inline VarianceConstants variance_constants(const BranchingModel& m, const Eigensystem& sys,
                                            const Decomposition& dec) {
  return {sigma_sm(m, sys, dec), sigma_cr(m, sys, dec), sigma_la(m, sys, dec), dec.tau_cr};
}

namespace detail {

// Upper limit S with e^{rate S} (1 + S)^power below 1e-14.
inline double truncation_point(double rate, int power) {
  if (!(rate < 0.0)) throw MomentError("non-convergent integral: integrand does not decay");
  double s = std::log(1e-14) / rate;
  for (int i = 0; i < 50; ++i) s = (std::log(1e-14) - power * std::log1p(s)) / rate;
  return s;
}

inline int max_block(const Spectrum& s) {
  int b = 1;
  for (const auto& c : s.clusters)
    for (int size : c.blocks) b = std::max(b, size);
  return b;
}

}  // namespace detail

// Quadrature evaluation of the small-component constant; independent of the
// closed-form exponential-polynomial route.
inline double sigma_sm_quadrature(const BranchingModel& m, const Eigensystem& sys,
                                  const Decomposition& dec, const QuadratureOptions& opt = {}) {
  const auto a = branching_moments(m);
  if (a.deterministic()) return 0.0;
  const auto& s = sys.spectrum;
  double top = -INFINITY;
  for (int k = 0; k < s.size(); ++k)
    if (s.regime(k) == Regime::small && dec.projection[k].norm() > 0.0)
      top = std::max(top, s[k].growth.real());
  const double base = detail::weighted_norm2(dec.f_sm, sys.basis.perron_left);
  if (top == -INFINITY) return base;
  const double rate = 2.0 * top - s.perron_growth();
  const double upper = detail::truncation_point(rate, 2 * detail::max_block(s));
  const Vector weight = a.a2.cwiseProduct(sys.basis.perron_left);
  auto integrand = [&](double u) {
    const Vector tf = semigroup_apply(sys, dec.f_sm, u);
    return std::exp(-s.perron_growth() * u) * detail::weighted_norm2(tf, weight);
  };
  return integrate_scalar(integrand, 0.0, upper, opt) + base;
}

inline double sigma_la_quadrature(const BranchingModel& m, const Eigensystem& sys,
                                  const Decomposition& dec, const QuadratureOptions& opt = {}) {
  const auto a = branching_moments(m);
  if (a.deterministic()) return 0.0;
  const auto& s = sys.spectrum;
  double low = INFINITY;
  for (int k = 0; k < s.size(); ++k)
    if (s.regime(k) == Regime::large && dec.projection[k].norm() > 0.0)
      low = std::min(low, s[k].growth.real());
  const double base = detail::weighted_norm2(dec.f_la, sys.basis.perron_left);
  if (low == INFINITY) return -base;
  const double rate = s.perron_growth() - 2.0 * low;
  const double upper = detail::truncation_point(rate, 2 * detail::max_block(s));
  const Vector weight = a.a2.cwiseProduct(sys.basis.perron_left);
  auto integrand = [&](double u) {
    const Vector flow = large_flow(sys, dec.f_la, u);
    return std::exp(s.perron_growth() * u) * detail::weighted_norm2(flow, weight);
  };
  return integrate_scalar(integrand, 0.0, upper, opt) - base;
}

// ---------------------------------------------------------------------------
// Finite-time variance against the limiting constants.

struct VarianceLimitReport {
  double t = 0.0;
  std::optional<double> small_residual;     // empty: f_sm = 0 (vacuous)
  std::optional<double> critical_residual;  // empty: f_cr = 0 (vacuous)
  Vector small_scaled, small_target;
  Vector critical_scaled, critical_target;
};

inline VarianceLimitReport variance_limit_check(const BranchingModel& m, const Eigensystem& sys,
                                                const Vector& f, double t,
                                                double zero_tol = kZeroTol) {
  const auto dec = split(sys, f);
  const auto consts = variance_constants(m, sys, dec);
  const double growth = sys.spectrum.perron_growth();
  const Vector& phi = sys.basis.perron_right;
  VarianceLimitReport rep;
  rep.t = t;
  auto scaled_variance = [&](const Vector& g) {
    const auto table = moment_ode(m, g, {t}, 2);
    return Vector((table.at(0, 2) - table.at(0, 1).cwiseAbs2()) * std::exp(-growth * t));
  };
  auto residual = [](const Vector& got, const Vector& want) {
    return ((got - want).cwiseAbs().array() / want.cwiseAbs().array()).maxCoeff();
  };
  if (dec.f_sm.norm() > zero_tol) {
    rep.small_scaled = scaled_variance(dec.f_sm);
    rep.small_target = consts.sm * phi;
    rep.small_residual = residual(rep.small_scaled, rep.small_target);
  }
  if (dec.f_cr.norm() > zero_tol) {
    rep.critical_scaled = scaled_variance(dec.f_cr) / std::pow(t, 1.0 + 2.0 * dec.tau_cr);
    rep.critical_target = consts.cr * phi;
    rep.critical_residual = residual(rep.critical_scaled, rep.critical_target);
  }
  return rep;
}

}  // namespace bmp

#pragma once

// Statistical checks of the limit theorems against ensemble output:
// Gaussian limits (KS distance + variance ratio), a LIL sanity envelope,
// martingale constancy, and the single-type Heyde cross-check.

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bmp/decompose.hpp"
#include "bmp/moments.hpp"
#include "bmp/simulate.hpp"

namespace bmp {

inline double normal_cdf(double x, double variance) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0 * variance));
}

// sup_x |F_n(x) - Phi(x / sigma)|. Sorts a copy of the sample.
inline double ks_distance_normal(std::vector<double> sample, double variance) {
  if (sample.empty()) throw VerificationError("KS distance of an empty sample");
  if (!(variance > 0.0)) throw VerificationError("KS distance needs a positive target variance");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = normal_cdf(sample[i], variance);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return d;
}

inline double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = 0.0, s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double d = v[i] - m;
    m += d / static_cast<double>(i + 1);
    s += d * (v[i] - m);
  }
  return s / static_cast<double>(v.size() - 1);
}

// Linear-interpolation quantile of a sorted sample.
inline double quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return 0.0;
  const double h = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// ---------------------------------------------------------------------------
// Gaussian limits.

enum class Component { small, critical, large };

inline const char* to_string(Component c) {
  switch (c) {
    case Component::small: return "sm";
    case Component::critical: return "cr";
    case Component::large: return "la";
  }
  return "?";
}

inline Component parse_component(const std::string& s) {
  if (s == "sm" || s == "small") return Component::small;
  if (s == "cr" || s == "critical") return Component::critical;
  if (s == "la" || s == "large") return Component::large;
  throw ValidationError("unknown component '" + s + "' (expected sm, cr or la)");
}

struct CltOptions {
  double ks_tol = 0.03;
  double v_tol = 0.08;
  std::size_t min_survivors = 1000;
};

struct CltReport {
  Component component = Component::small;
  double t = 0.0;
  std::size_t n_reps = 0;
  std::size_t n_survivors = 0;
  double ks_statistic = 0.0;
  double empirical_variance = 0.0;
  double target_variance = 0.0;
  double variance_ratio = 0.0;
  bool vacuous = false;
  bool pass = false;
  std::vector<double> statistic;  // per survivor, in replicate order
};

// KS + variance-ratio decision on an already-normalized sample.
inline CltReport gaussian_check(std::vector<double> sample, double target_variance,
                                const CltOptions& opt = {}) {
  CltReport r;
  r.n_survivors = sample.size();
  r.target_variance = target_variance;
  r.empirical_variance = sample_variance(sample);
  if (!(target_variance > 0.0)) throw VerificationError("target variance must be positive");
  r.ks_statistic = ks_distance_normal(sample, target_variance);
  r.variance_ratio = r.empirical_variance / target_variance;
  r.pass = r.ks_statistic <= opt.ks_tol && std::abs(r.variance_ratio - 1.0) <= opt.v_tol;
  r.statistic = std::move(sample);
  return r;
}

inline std::size_t grid_index(const std::vector<double>& grid, double t) {
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (std::abs(grid[i] - t) <= 1e-9 * std::max(1.0, std::abs(t))) return i;
  throw VerificationError("time " + format_real(t) + " is not on the ensemble grid");
}

inline Vector counts_vector(const Counts& c) {
  Vector v(static_cast<Eigen::Index>(c.size()));
  for (std::size_t x = 0; x < c.size(); ++x) v[x] = static_cast<double>(c[x]);
  return v;
}

// Conditioning on non-extinction is approximated by survival at the
// ensemble horizon (last grid time).
inline CltReport clt_check(const Ensemble& e, const Eigensystem& sys, const Vector& f,
                           const VarianceConstants& consts, double t, Component component,
                           const CltOptions& opt = {}) {
  const std::size_t i = grid_index(e.grid, t);
  const std::size_t last = e.grid.size() - 1;
  const auto dec = split(sys, f);
  const Vector& fc = component == Component::small      ? dec.f_sm
                     : component == Component::critical ? dec.f_cr
                                                        : dec.f_la;
  const double target = component == Component::small      ? consts.sm
                        : component == Component::critical ? consts.cr
                                                           : consts.la;
  CltReport r;
  r.component = component;
  r.t = t;
  r.target_variance = target;
  for (const auto& rep : e.replicates) r.n_reps += rep.ok();
  if (fc.norm() <= kZeroTol) {
    r.vacuous = true;
    r.pass = true;
    return r;
  }
  const double scale = component == Component::critical ? std::pow(t, 1.0 + 2.0 * dec.tau_cr) : 1.0;
  std::vector<CVector> h_inf(sys.spectrum.size());
  std::vector<double> sample;
  for (const auto& rep : e.replicates) {
    if (!rep.ok() || rep.trajectory->states[last].total() == 0) continue;
    const Vector x = counts_vector(rep.trajectory->states[i].counts);
    const double mass = sys.basis.perron_right.dot(x);
    if (!(mass > 0.0)) continue;
    double num = fc.dot(x);
    if (component == Component::large) {
      for (int k : large_clusters(sys)) h_inf[k] = rep.path->martingale(last, k);
      num -= compensator(sys, h_inf, fc, t);
    }
    sample.push_back(num / std::sqrt(scale * mass));
  }
  if (sample.size() < opt.min_survivors)
    throw VerificationError("too few survivors: " + std::to_string(sample.size()) + " < " +
                            std::to_string(opt.min_survivors));
  auto out = gaussian_check(std::move(sample), target, opt);
  out.component = component;
  out.t = t;
  out.n_reps = r.n_reps;
  return out;
}

// ---------------------------------------------------------------------------
// LIL envelope: a sanity check on the fluctuation scale, not a measurement
// of the limsup constant (log t stays below 3 at reachable horizons).

struct LilOptions {
  double lo = 0.2, hi = 2.0;
  double min_fraction = 0.8;
  double t_min = 3.0;
  double horizon_margin = 4.0;  // only t <= T - margin enters the sup
  std::size_t min_survivors = 200;
};

struct LilEnvelopeReport {
  bool critical = false;
  int tau = 0;
  double sigma2 = 0.0;
  double horizon = 0.0;
  std::size_t n_survivors = 0;
  std::vector<double> ratios;  // per surviving trajectory, replicate order
  std::vector<std::uint64_t> replicate;
  double q05 = 0, q25 = 0, q50 = 0, q75 = 0, q95 = 0;
  double fraction_in_band = 0.0;
  bool degenerate = false;
  bool pass = false;
  std::string note =
      "sanity envelope: compares fluctuations with the LIL scale; it does not reproduce the "
      "limsup constant";
};

inline LilEnvelopeReport lil_envelope(const Ensemble& e, const Eigensystem& sys, const Vector& f,
                                      const VarianceConstants& consts, const LilOptions& opt = {}) {
  const std::size_t last = e.grid.size() - 1;
  const double horizon = e.grid[last];
  if (horizon - opt.horizon_margin < opt.t_min)
    throw VerificationError("insufficient horizon: need T >= " + format_real(opt.t_min + opt.horizon_margin));
  const auto dec = split(sys, f);
  LilEnvelopeReport r;
  r.horizon = horizon;
  r.critical = dec.f_cr.norm() > kZeroTol;
  r.tau = dec.tau_cr;
  r.sigma2 = r.critical ? consts.cr : consts.sm + consts.la;
  r.degenerate = !(r.sigma2 > 0.0);
  auto scale = [&](double t) {
    return r.critical ? std::pow(t, 1.0 + 2.0 * r.tau) * std::log(std::log(t)) : std::log(t);
  };
  std::vector<std::size_t> window;
  for (std::size_t i = 0; i < e.grid.size(); ++i)
    if (e.grid[i] >= opt.t_min && e.grid[i] <= horizon - opt.horizon_margin + 1e-12) window.push_back(i);

  for (const auto& rep : e.replicates) {
    if (!rep.ok()) continue;
    const double w_inf = rep.path->w[last];
    if (!(w_inf > 0.0)) continue;
    const auto fl = fluctuation(*rep.path, sys, f);
    double ratio = 0.0;
    // No randomness: the envelope scale vanishes and ratios are reported as 0.
    if (!r.degenerate)
      for (std::size_t i : window) {
        const double num = std::abs(fl[i]);
        if (num == 0.0) continue;
        ratio = std::max(ratio, num / std::sqrt(2.0 * r.sigma2 * w_inf * scale(e.grid[i])));
      }
    r.ratios.push_back(ratio);
    r.replicate.push_back(rep.index);
  }
  r.n_survivors = r.ratios.size();
  if (r.n_survivors < opt.min_survivors)
    throw VerificationError("too few surviving trajectories: " + std::to_string(r.n_survivors) + " < " +
                            std::to_string(opt.min_survivors));
  std::vector<double> sorted = r.ratios;
  std::sort(sorted.begin(), sorted.end());
  r.q05 = quantile(sorted, 0.05);
  r.q25 = quantile(sorted, 0.25);
  r.q50 = quantile(sorted, 0.50);
  r.q75 = quantile(sorted, 0.75);
  r.q95 = quantile(sorted, 0.95);
  std::size_t inside = 0;
  for (double x : r.ratios) inside += x >= opt.lo && x <= opt.hi;
  r.fraction_in_band = static_cast<double>(inside) / static_cast<double>(r.n_survivors);
  r.pass = !r.degenerate && r.fraction_in_band >= opt.min_fraction;
  return r;
}

// ---------------------------------------------------------------------------
// Martingale constancy of H_t^(k) for a large-regime cluster.

struct MartingaleReport {
  int cluster = 0;
  std::size_t n = 0;
  double z_limit = 4.0;
  CVector initial;                 // H_0 (deterministic)
  std::vector<CVector> mean;       // per grid time
  std::vector<Vector> variance;    // per grid time, |H - mean|^2 componentwise
  double max_mean_z = 0.0;
  double variance_z = 0.0;  // last two grid times, summed over components
  bool pass = false;
};

inline MartingaleReport martingale_check(const Ensemble& e, const Eigensystem& sys, int k,
                                         double z_limit = 4.0) {
  if (k < 0 || k >= sys.spectrum.size()) throw ValidationError("cluster index out of range");
  if (sys.spectrum.regime(k) != Regime::large)
    throw VerificationError("H^(" + std::to_string(k) +
                            ") is not an L2-bounded martingale: cluster is not in the large regime");
  std::vector<const ObservablePath*> paths;
  for (const auto& rep : e.replicates)
    if (rep.ok()) paths.push_back(&*rep.path);
  if (paths.size() < 2) throw VerificationError("insufficient data: need at least two replicates");
  const std::size_t nt = e.grid.size();
  if (nt < 2) throw VerificationError("insufficient data: need at least two grid times");
  const int width = sys.spectrum[k].multiplicity();
  const double n = static_cast<double>(paths.size());

  MartingaleReport r;
  r.cluster = k;
  r.n = paths.size();
  r.z_limit = z_limit;
  r.initial = paths.front()->martingale(0, k);
  r.mean.assign(nt, CVector::Zero(width));
  r.variance.assign(nt, Vector::Zero(width));
  // Re / Im parts are tested separately; fourth moments feed the SE of the variance.
  std::vector<Vector> m4(nt, Vector::Zero(width));
  for (std::size_t i = 0; i < nt; ++i) {
    for (const auto* p : paths) r.mean[i] += p->martingale(i, k);
    r.mean[i] /= n;
    for (const auto* p : paths) {
      const CVector dev = p->martingale(i, k) - r.mean[i];
      r.variance[i] += dev.cwiseAbs2();
      m4[i] += dev.cwiseAbs2().cwiseAbs2();
    }
    r.variance[i] /= n - 1.0;
    m4[i] /= n;
  }
  auto part_z = [&](double got, double want, double var) {
    if (var <= 0.0) return got == want ? 0.0 : INFINITY;
    return std::abs(got - want) / std::sqrt(var / n);
  };
  for (std::size_t i = 1; i < nt; ++i) {
    for (int j = 0; j < width; ++j) {
      double var_re = 0.0, var_im = 0.0;
      for (const auto* p : paths) {
        const Complex dev = p->martingale(i, k)[j] - r.mean[i][j];
        var_re += dev.real() * dev.real();
        var_im += dev.imag() * dev.imag();
      }
      var_re /= n - 1.0;
      var_im /= n - 1.0;
      r.max_mean_z = std::max(r.max_mean_z, part_z(r.mean[i][j].real(), r.initial[j].real(), var_re));
      r.max_mean_z = std::max(r.max_mean_z, part_z(r.mean[i][j].imag(), r.initial[j].imag(), var_im));
    }
  }
  // Bounded-variance proxy: the two latest variances agree within noise.
  const std::size_t a = nt - 2, b = nt - 1;
  double diff = 0.0, se2 = 0.0;
  for (int j = 0; j < width; ++j) {
    diff += r.variance[b][j] - r.variance[a][j];
    se2 += (m4[a][j] - r.variance[a][j] * r.variance[a][j]) / n +
           (m4[b][j] - r.variance[b][j] * r.variance[b][j]) / n;
  }
  r.variance_z = se2 > 0.0 ? diff / std::sqrt(se2) : (diff > 0.0 ? INFINITY : 0.0);
  r.pass = r.max_mean_z <= z_limit && r.variance_z <= z_limit;
  return r;
}

// ---------------------------------------------------------------------------
// Single-type cross-check. For a Galton-Watson law with mean m > 1, the
// martingale limit has variance sigma^2 = (E Z_1^2 - m^2) / (m^2 - m). A
// continuous-time single-state model with the same offspring law (beta = 1)
// sampled at integer times is again Galton-Watson; its skeleton sigma^2
// must equal the large-component constant of f = 1.

struct HeydeReport {
  double mean = 0.0;
  double second_moment = 0.0;
  double sigma2 = 0.0;             // closed form
  double recursion_limit = 0.0;    // lim Var(Z_n / m^n) from the variance recursion
  double discrete_residual = 0.0;
  double skeleton_mean = 0.0;
  double skeleton_second_moment = 0.0;
  double skeleton_sigma2 = 0.0;
  double sigma2_la = 0.0;
  double skeleton_residual = 0.0;
  double tol = 1e-8;
  bool pass = false;
};

inline double heyde_sigma2(double mean, double second_moment) {
  if (!(mean > 1.0)) throw ValidationError("Galton-Watson law is not supercritical (m <= 1)");
  return (second_moment - mean * mean) / (mean * mean - mean);
}

inline HeydeReport heyde_crosscheck(const std::vector<double>& pmf, double tol = 1e-8) {
  if (pmf.empty()) throw ValidationError("empty offspring law");
  BranchingModel model;
  model.generator = Matrix::Zero(1, 1);
  model.branching_rate = Vector::Ones(1);
  model.offspring = {pmf};
  model.name = "galton-watson";
  validate(model);

  HeydeReport r;
  r.tol = tol;
  for (std::size_t k = 0; k < pmf.size(); ++k) {
    r.mean += static_cast<double>(k) * pmf[k];
    r.second_moment += static_cast<double>(k * k) * pmf[k];
  }
  r.sigma2 = heyde_sigma2(r.mean, r.second_moment);

  // Var(Z_{n+1}) = m^2 Var(Z_n) + m^n Var(Z_1); iterate on W_n = Z_n / m^n.
  const double v1 = r.second_moment - r.mean * r.mean;
  double var_w = 0.0, inv_mn = 1.0;
  for (int n = 0; n < 100000; ++n) {
    const double next = var_w + inv_mn * v1 / (r.mean * r.mean);
    inv_mn /= r.mean;
    const bool done = std::abs(next - var_w) <= 1e-18 * std::max(1.0, next);
    var_w = next;
    if (done) break;
  }
  r.recursion_limit = var_w;
  r.discrete_residual = std::abs(r.recursion_limit - r.sigma2);

  const auto table = moment_ode(model, Vector::Ones(1), {1.0}, 2);
  r.skeleton_mean = table.at(0, 1)[0];
  r.skeleton_second_moment = table.at(0, 2)[0];
  r.skeleton_sigma2 = heyde_sigma2(r.skeleton_mean, r.skeleton_second_moment);
  const auto sys = model_eigensystem(model);
  const auto dec = split(sys, Vector::Ones(1));
  r.sigma2_la = sigma_la(model, sys, dec);
  r.skeleton_residual = std::abs(r.skeleton_sigma2 - r.sigma2_la);
  r.pass = r.discrete_residual <= tol && r.skeleton_residual <= tol;
  return r;
}

// ---------------------------------------------------------------------------
// Reading an ensemble back from CSV (see write_csv for the layout).

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_real(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ValidationError("malformed number '" + s + "' in ensemble CSV");
  }
  if (used != s.size()) throw ValidationError("malformed number '" + s + "' in ensemble CSV");
  return v;
}

}  // namespace detail

inline Ensemble read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw ValidationError("empty ensemble CSV");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 4 || header[0] != "rep" || header[1] != "t")
    throw ValidationError("ensemble CSV header must start with rep,t");
  Ensemble e;
  std::size_t col = 2;
  while (col < header.size() && header[col].size() > 1 && header[col][0] == 'n') {
    ++e.dim;
    ++col;
  }
  if (col + 2 > header.size() || header[col] != "f" || header[col + 1] != "W")
    throw ValidationError("ensemble CSV header must contain f,W after the counts");
  const std::size_t h_start = col + 2;
  // H<k>_<q>_re / _im pairs.
  std::vector<std::pair<int, int>> h_layout;  // (cluster, position)
  for (std::size_t c = h_start; c < header.size(); c += 2) {
    int k = 0, q = 0;
    if (std::sscanf(header[c].c_str(), "H%d_%d_re", &k, &q) != 2)
      throw ValidationError("unexpected ensemble CSV column '" + header[c] + "'");
    h_layout.emplace_back(k, q);
    if (std::find(e.clusters.begin(), e.clusters.end(), k) == e.clusters.end()) e.clusters.push_back(k);
  }

  std::map<std::uint64_t, std::size_t> slot;
  std::vector<double> grid;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) throw ValidationError("ragged ensemble CSV row");
    const auto rep = static_cast<std::uint64_t>(std::stoull(cells[0]));
    const double t = detail::parse_real(cells[1]);
    auto [it, fresh] = slot.try_emplace(rep, e.replicates.size());
    if (fresh) {
      Replicate r;
      r.index = rep;
      r.trajectory = Trajectory{};
      r.trajectory->stream = rep;
      r.path = ObservablePath{};
      r.path->clusters = e.clusters;
      e.replicates.push_back(std::move(r));
    }
    auto& r = e.replicates[it->second];
    auto& tr = *r.trajectory;
    auto& p = *r.path;
    PopulationState st;
    st.time = t;
    for (int x = 0; x < e.dim; ++x) st.counts.push_back(std::stoll(cells[2 + x]));
    tr.grid.push_back(t);
    tr.states.push_back(std::move(st));
    p.grid.push_back(t);
    p.value.push_back(detail::parse_real(cells[col]));
    p.w.push_back(detail::parse_real(cells[col + 1]));
    std::vector<CVector> h;
    for (int k : e.clusters) {
      int width = 0;
      for (const auto& [kk, q] : h_layout) width += kk == k;
      h.emplace_back(CVector::Zero(width));
    }
    for (std::size_t j = 0; j < h_layout.size(); ++j) {
      const auto [k, q] = h_layout[j];
      const auto pos = std::find(e.clusters.begin(), e.clusters.end(), k) - e.clusters.begin();
      h[pos][q] = Complex(detail::parse_real(cells[h_start + 2 * j]),
                          detail::parse_real(cells[h_start + 2 * j + 1]));
    }
    p.h.push_back(std::move(h));
    if (e.replicates.size() == 1) grid.push_back(t);
  }
  if (e.replicates.empty()) throw ValidationError("ensemble CSV has no rows");
  for (const auto& r : e.replicates)
    if (r.trajectory->grid != grid) throw ValidationError("replicates disagree on the time grid");
  e.grid = grid;
  check_grid(e.grid);
  e.summary = summarize(e);
  return e;
}

}  // namespace bmp

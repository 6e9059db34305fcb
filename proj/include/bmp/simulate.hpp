#pragma once

// Exact event-driven simulation of the branching process over aggregated
// per-state counts, and the observables read off a trajectory.
//
// Particles within a state are exchangeable, so only the count vector is
// tracked. With n_x particles at x the event rate is n_x (q_x + beta(x));
// an event is either a motion jump x -> y (rate n_x Q(x,y)) or a branching
// at x (rate n_x beta(x)) replacing one particle by k ~ p(x) offspring.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <boost/random/exponential_distribution.hpp>

#include "bmp/decompose.hpp"
#include "bmp/model.hpp"
#include "bmp/rng.hpp"
#include "bmp/spectral.hpp"

namespace bmp {

using Counts = std::vector<std::int64_t>;

struct PopulationState {
  double time = 0.0;
  Counts counts;

  std::int64_t total() const {
    std::int64_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
};

struct Trajectory {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  std::vector<double> grid;
  std::vector<PopulationState> states;
  std::uint64_t event_count = 0;
  std::optional<double> extinction_time;
};

struct SimulationOptions {
  std::int64_t population_cap = 10'000'000;
};

inline void check_grid(const std::vector<double>& grid) {
  if (grid.empty()) throw ValidationError("time grid is empty");
  if (grid.front() != 0.0) throw ValidationError("time grid must start at 0");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw ValidationError("time grid must be strictly increasing");
  if (!std::isfinite(grid.back())) throw ValidationError("time grid must be finite");
}

// Regular grid 0, step, 2 step, ..., up to t_max (inclusive within rounding).
inline std::vector<double> regular_grid(double t_max, double step) {
  if (!(step > 0.0) || !(t_max >= 0.0)) throw ValidationError("grid needs step > 0 and t_max >= 0");
  std::vector<double> g;
  const auto n = static_cast<std::int64_t>(std::floor(t_max / step + 1e-9));
  for (std::int64_t i = 0; i <= n; ++i) g.push_back(static_cast<double>(i) * step);
  return g;
}

namespace detail {

// Per-state event tables, built once per model.
struct EventTable {
  struct State {
    double rate = 0.0;    // q_x + beta(x)
    double branch = 0.0;  // beta(x)
    std::vector<int> dest;
    std::vector<double> dest_cdf;  // cumulative Q(x, y), last entry q_x
    std::vector<int> sizes;
    std::vector<double> size_cdf;  // cumulative p_k(x)
  };
  std::vector<State> states;

  explicit EventTable(const BranchingModel& m) {
    const int d = m.dim();
    states.resize(d);
    for (int x = 0; x < d; ++x) {
      auto& s = states[x];
      double acc = 0.0;
      for (int y = 0; y < d; ++y) {
        if (y == x || m.generator(x, y) <= 0.0) continue;
        acc += m.generator(x, y);
        s.dest.push_back(y);
        s.dest_cdf.push_back(acc);
      }
      s.branch = m.branching_rate[x];
      s.rate = acc + s.branch;
      double mass = 0.0;
      const auto& pmf = m.offspring[x];
      for (std::size_t k = 0; k < pmf.size(); ++k) {
        if (pmf[k] <= 0.0) continue;
        mass += pmf[k];
        s.sizes.push_back(static_cast<int>(k));
        s.size_cdf.push_back(mass);
      }
      if (s.branch > 0.0 && s.sizes.empty()) throw ValidationError("empty offspring law");
    }
  }
};

template <class Urbg>
int pick(const std::vector<double>& cdf, Urbg& rng) {
  if (cdf.size() == 1) return 0;
  const double u = uniform01(rng) * cdf.back();
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return static_cast<int>(std::min<std::ptrdiff_t>(it - cdf.begin(), cdf.size() - 1));
}

}  // namespace detail

// Simulates from `initial` and records the population at each grid time.
// Deterministic in (model, initial, grid, seed, stream).
inline Trajectory simulate(const BranchingModel& model, const Counts& initial,
                           const std::vector<double>& grid, std::uint64_t seed,
                           std::uint64_t stream = 0, const SimulationOptions& opt = {}) {
  check_grid(grid);
  const int d = model.dim();
  if (static_cast<int>(initial.size()) != d) throw ValidationError("initial counts must have d entries");
  for (auto c : initial)
    if (c < 0) throw ValidationError("initial counts must be non-negative");

  const detail::EventTable table(model);
  Philox4x64 rng(seed, stream);
  boost::random::exponential_distribution<double> expo(1.0);

  Trajectory tr;
  tr.seed = seed;
  tr.stream = stream;
  tr.grid = grid;
  tr.states.resize(grid.size());

  Counts n = initial;
  std::int64_t total = 0;
  for (auto c : n) total += c;
  if (total > opt.population_cap) throw SimulationError("initial population exceeds the cap");
  if (total == 0) tr.extinction_time = 0.0;

  double t = 0.0;
  std::size_t next = 0;
  auto record_until = [&](double time) {
    for (; next < grid.size() && grid[next] < time; ++next) tr.states[next] = {grid[next], n};
  };
  tr.states[0] = {grid[0], n};
  next = 1;

  while (next < grid.size()) {
    double rate = 0.0;
    for (int x = 0; x < d; ++x) rate += static_cast<double>(n[x]) * table.states[x].rate;
    if (total == 0 || rate <= 0.0) break;  // absorbed: freeze
    t += expo(rng) / rate;
    record_until(t);
    if (next == grid.size()) break;

    // State and event type from one uniform; a single state can only branch.
    int x = 0;
    double u = d == 1 ? 0.0 : uniform01(rng) * rate;
    for (;; ++x) {
      const double rx = static_cast<double>(n[x]) * table.states[x].rate;
      if (u < rx || x == d - 1) break;
      u -= rx;
    }
    while (n[x] == 0) --x;  // guard against rounding past the last occupied state
    const auto& s = table.states[x];
    const double local = u / static_cast<double>(n[x]);
    ++tr.event_count;
    if (local < s.branch || s.dest.empty()) {
      const int k = s.sizes[detail::pick(s.size_cdf, rng)];
      n[x] += k - 1;
      total += k - 1;
      if (total == 0) {
        tr.extinction_time = t;
      } else if (total > opt.population_cap) {
        throw SimulationError("population cap " + std::to_string(opt.population_cap) +
                              " exceeded at t = " + std::to_string(t));
      }
    } else {
      --n[x];
      ++n[s.dest[detail::pick(s.dest_cdf, rng)]];
    }
  }
  record_until(INFINITY);
  return tr;
}

// ---------------------------------------------------------------------------
// Observables.

struct ObservablePath {
  std::vector<double> grid;
  std::vector<double> value;     // <f, X_t>
  std::vector<double> w;         // e^{lambda_1 t} <phi_1, X_t>
  std::vector<int> clusters;     // requested k
  // h[i][j]: H_t^(k) at grid[i] for k = clusters[j], one entry per chain position.
  std::vector<std::vector<CVector>> h;

  const CVector& martingale(std::size_t i, int k) const {
    for (std::size_t j = 0; j < clusters.size(); ++j)
      if (clusters[j] == k) return h[i][j];
    throw Error("martingale H^(" + std::to_string(k) + ") was not requested");
  }
};

inline ObservablePath observe(const Trajectory& tr, const Eigensystem& sys, const Vector& f,
                              const std::vector<int>& requested) {
  const int d = sys.dim();
  if (f.size() != d) throw ValidationError("f must have d entries");
  for (int k : requested)
    if (k < 0 || k >= sys.spectrum.size()) throw ValidationError("requested cluster out of range");
  const double growth = sys.spectrum.perron_growth();

  ObservablePath p;
  p.grid = tr.grid;
  p.clusters = requested;
  const std::size_t n = tr.grid.size();
  p.value.resize(n);
  p.w.resize(n);
  p.h.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = tr.grid[i];
    Vector counts(d);
    for (int x = 0; x < d; ++x) counts[x] = static_cast<double>(tr.states[i].counts[x]);
    p.value[i] = f.dot(counts);
    p.w[i] = std::exp(-growth * t) * sys.basis.perron_right.dot(counts);
    p.h[i].reserve(requested.size());
    for (int k : requested) {
      const auto& c = sys.spectrum[k];
      // Row vector (<phi_j, X_t>)_j D_k(-t), scaled by e^{-mu_k t}.
      const CVector row = sys.basis.right[k].transpose() * counts.cast<Complex>();
      CVector hk = propagator(c, -t).cast<Complex>().transpose() * row;
      hk *= std::exp(-c.growth * t);
      p.h[i].push_back(std::move(hk));
    }
  }
  return p;
}

// Large-regime clusters: the ones whose martingales feed the compensator.
inline std::vector<int> large_clusters(const Eigensystem& sys) {
  std::vector<int> out;
  for (int k = 0; k < sys.spectrum.size(); ++k)
    if (sys.spectrum.regime(k) == Regime::large) out.push_back(k);
  return out;
}

// e^{lambda_1 t / 2} (<f, X_t> - E_t(f_la)) on the grid, with H_inf replaced
// by H_T at the path's horizon. The path must carry every large cluster
// unless f has no large part.
inline std::vector<double> fluctuation(const ObservablePath& p, const Eigensystem& sys, const Vector& f) {
  const auto& s = sys.spectrum;
  const auto dec = split(sys, f);
  const bool has_large = dec.f_la.norm() > kZeroTol;
  std::vector<CVector> h_inf(s.size());
  const std::size_t last = p.grid.size() - 1;
  if (has_large)
    for (int k : large_clusters(sys)) h_inf[k] = p.martingale(last, k);
  std::vector<double> out(p.grid.size());
  for (std::size_t i = 0; i < p.grid.size(); ++i) {
    const double t = p.grid[i];
    const double comp = has_large ? compensator(sys, h_inf, dec.f_la, t) : 0.0;
    out[i] = std::exp(-0.5 * s.perron_growth() * t) * (p.value[i] - comp);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ensembles.

struct Replicate {
  std::uint64_t index = 0;
  std::optional<Trajectory> trajectory;
  std::optional<ObservablePath> path;
  std::string error;  // non-empty when the replicate failed

  bool ok() const { return error.empty(); }
};

struct GridSummary {
  double t = 0.0;
  double mean = 0.0, variance = 0.0;      // of <f, X_t>
  double w_mean = 0.0, w_variance = 0.0;  // of W_t
  std::int64_t survivors = 0;
  std::int64_t replicates = 0;
};

struct Ensemble {
  std::vector<double> grid;
  std::vector<int> clusters;
  std::uint64_t master_seed = 0;
  int dim = 0;
  std::vector<Replicate> replicates;  // indexed by replicate number
  std::vector<GridSummary> summary;

  std::size_t failures() const {
    std::size_t n = 0;
    for (const auto& r : replicates) n += !r.ok();
    return n;
  }
};

struct EnsembleOptions {
  SimulationOptions simulation;
  unsigned threads = 0;  // 0: hardware concurrency
};

inline std::vector<GridSummary> summarize(const Ensemble& e) {
  std::vector<GridSummary> out(e.grid.size());
  for (std::size_t i = 0; i < e.grid.size(); ++i) {
    auto& g = out[i];
    g.t = e.grid[i];
    // Welford, in replicate order, so the summary is schedule independent.
    double m = 0.0, s = 0.0, wm = 0.0, ws = 0.0;
    for (const auto& r : e.replicates) {
      if (!r.ok()) continue;
      ++g.replicates;
      const double v = r.path->value[i];
      const double w = r.path->w[i];
      const double dv = v - m;
      m += dv / g.replicates;
      s += dv * (v - m);
      const double dw = w - wm;
      wm += dw / g.replicates;
      ws += dw * (w - wm);
      g.survivors += r.trajectory->states[i].total() > 0;
    }
    g.mean = m;
    g.w_mean = wm;
    g.variance = g.replicates > 1 ? s / (g.replicates - 1) : 0.0;
    g.w_variance = g.replicates > 1 ? ws / (g.replicates - 1) : 0.0;
  }
  return out;
}

// Replicate r simulates from Philox key {master_seed, r}.
inline Ensemble ensemble(const BranchingModel& model, const Eigensystem& sys, const Counts& initial,
                         const std::vector<double>& grid, std::size_t n_reps, std::uint64_t master_seed,
                         const Vector& f, const std::vector<int>& clusters,
                         const EnsembleOptions& opt = {}) {
  if (n_reps < 1) throw ValidationError("ensemble needs at least one replicate");
  check_grid(grid);
  Ensemble e;
  e.grid = grid;
  e.clusters = clusters;
  e.master_seed = master_seed;
  e.dim = model.dim();
  e.replicates.resize(n_reps);

  std::atomic<std::size_t> cursor{0};
  auto worker = [&] {
    for (std::size_t r; (r = cursor.fetch_add(1)) < n_reps;) {
      auto& rep = e.replicates[r];
      rep.index = r;
      try {
        rep.trajectory = simulate(model, initial, grid, master_seed, r, opt.simulation);
        rep.path = observe(*rep.trajectory, sys, f, clusters);
      } catch (const std::exception& ex) {
        rep.trajectory.reset();
        rep.path.reset();
        rep.error = ex.what();
      }
    }
  };
  unsigned threads = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n_reps));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  e.summary = summarize(e);
  return e;
}

// ---------------------------------------------------------------------------
// CSV: rep, t, n_0..n_{d-1}, f, W, then re/im of every H component.
// Failed replicates appear as a single comment line.

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_csv(std::ostream& os, const Ensemble& e) {
  os << "rep,t";
  for (int x = 0; x < e.dim; ++x) os << ",n" << x;
  os << ",f,W";
  // Column layout from the first successful replicate; all share it.
  const ObservablePath* shape = nullptr;
  for (const auto& r : e.replicates)
    if (r.ok()) {
      shape = &*r.path;
      break;
    }
  if (shape) {
    for (std::size_t j = 0; j < e.clusters.size(); ++j)
      for (Eigen::Index q = 0; q < shape->h[0][j].size(); ++q)
        os << ",H" << e.clusters[j] << "_" << q << "_re,H" << e.clusters[j] << "_" << q << "_im";
  }
  os << '\n';
  for (const auto& r : e.replicates) {
    if (!r.ok()) {
      os << "# rep " << r.index << " failed: " << r.error << '\n';
      continue;
    }
    const auto& tr = *r.trajectory;
    const auto& p = *r.path;
    for (std::size_t i = 0; i < e.grid.size(); ++i) {
      os << r.index << ',' << format_real(e.grid[i]);
      for (auto c : tr.states[i].counts) os << ',' << c;
      os << ',' << format_real(p.value[i]) << ',' << format_real(p.w[i]);
      for (const auto& hk : p.h[i])
        for (Eigen::Index q = 0; q < hk.size(); ++q)
          os << ',' << format_real(hk[q].real()) << ',' << format_real(hk[q].imag());
      os << '\n';
    }
  }
}

}  // namespace bmp

#pragma once

// Command-line front end: spectrum, decompose, constants, moments,
// simulate, verify, oracle. Exit codes: 0 success, 1 invalid input,
// 2 verification failed, 3 internal error.

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bmp/decompose.hpp"
#include "bmp/hypotheses.hpp"
#include "bmp/model.hpp"
#include "bmp/moments.hpp"
#include "bmp/oracle.hpp"
#include "bmp/simulate.hpp"
#include "bmp/spectral.hpp"
#include "bmp/verify.hpp"

namespace bmp::cli {

using json = nlohmann::json;

enum ExitCode : int { kOk = 0, kInvalid = 1, kVerificationFailed = 2, kInternal = 3 };

class InternalError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// JSON helpers.

inline json to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// "+ 0.0" turns negative zeros into plain zeros.
inline json to_json(const Complex& z) { return {{"re", z.real() + 0.0}, {"im", z.imag() + 0.0}}; }

inline json to_json(const CVector& v) {
  json re = json::array(), im = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    re.push_back(v[i].real());
    im.push_back(v[i].imag());
  }
  return {{"re", re}, {"im", im}};
}

inline json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(to_json(Vector(m.row(i).transpose())));
  return rows;
}

inline json to_json(const CMatrix& m) { return {{"re", to_json(Matrix(m.real()))}, {"im", to_json(Matrix(m.imag()))}}; }

// No NaN / Inf may leave the program: nlohmann would silently print null.
inline void ensure_finite(const json& j, const std::string& where = "$") {
  if (j.is_number_float()) {
    if (!std::isfinite(j.get<double>())) throw InternalError("non-finite number at " + where);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) ensure_finite(j[i], where + "[" + std::to_string(i) + "]");
  } else if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) ensure_finite(it.value(), where + "." + it.key());
  }
}

inline void emit(const json& j, const std::string& path, std::ostream& out) {
  ensure_finite(j);
  if (path.empty() || path == "-") {
    out << j.dump(2) << '\n';
    return;
  }
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write " + path);
  f << j.dump(2) << '\n';
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ValidationError("cannot write " + path);
  return f;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("parse failure in " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Argument parsing helpers.

inline std::vector<double> parse_list(std::string text) {
  std::erase_if(text, [](char c) { return c == '[' || c == ']' || c == ' '; });
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (cell.empty()) throw ValidationError("empty entry in list '" + text + "'");
    out.push_back(detail::parse_real(cell));
  }
  return out;
}

// f specification: inline list "1,-1" / "[1,-1]", or one of
//   perron   phi_1        ones     constant 1
//   unit:i   indicator    eig:k    real part of the lead eigenvector of cluster k
inline Vector parse_f(const std::string& spec, const Eigensystem& sys) {
  const int d = sys.dim();
  if (spec == "perron") return sys.basis.perron_right;
  if (spec == "ones") return Vector::Ones(d);
  auto index_after = [&](const std::string& prefix, int bound) {
    const int i = std::stoi(spec.substr(prefix.size()));
    if (i < 0 || i >= bound) throw ValidationError("index out of range in f spec '" + spec + "'");
    return i;
  };
  if (spec.rfind("unit:", 0) == 0) {
    Vector f = Vector::Zero(d);
    f[index_after("unit:", d)] = 1.0;
    return f;
  }
  if (spec.rfind("eig:", 0) == 0) {
    const int k = index_after("eig:", sys.spectrum.size());
    Vector f = sys.basis.right[k].col(0).real();
    if (f.norm() == 0.0) f = sys.basis.right[k].col(0).imag();
    return f / f.norm();
  }
  const auto values = parse_list(spec);
  if (static_cast<int>(values.size()) != d)
    throw ValidationError("f has " + std::to_string(values.size()) + " entries, model has d = " +
                          std::to_string(d));
  return Eigen::Map<const Vector>(values.data(), d);
}

inline Counts parse_initial(const std::string& spec, int d) {
  Counts c(d, 0);
  if (spec.empty()) {
    c[0] = 1;
    return c;
  }
  const auto values = parse_list(spec);
  if (static_cast<int>(values.size()) != d) throw ValidationError("initial counts must have d entries");
  for (int x = 0; x < d; ++x) {
    if (values[x] < 0 || values[x] != std::floor(values[x]))
      throw ValidationError("initial counts must be non-negative integers");
    c[x] = static_cast<std::int64_t>(values[x]);
  }
  return c;
}

inline std::vector<int> parse_observables(const std::string& spec, const Eigensystem& sys) {
  if (spec == "large") return large_clusters(sys);
  if (spec == "none") return {};
  std::vector<int> out;
  if (spec == "all") {
    for (int k = 0; k < sys.spectrum.size(); ++k) out.push_back(k);
    return out;
  }
  for (double v : parse_list(spec)) out.push_back(static_cast<int>(v));
  return out;
}

// ---------------------------------------------------------------------------
// Reports.

inline json hypotheses_json(const HypothesisReport& h) {
  json j = {{"irreducible", h.irreducible},
            {"bounded_branching_rate", h.bounded_rate},
            {"second_moment_finite", h.second_moment_finite},
            {"fourth_moment_finite", h.fourth_moment_finite},
            {"probe_time", h.probe_time},
            {"a_t", h.a_t},
            {"ahat_t", h.ahat_t},
            {"b_t", h.b_t},
            {"bhat_t", h.bhat_t},
            {"warnings", h.warnings}};
  if (h.supercritical) {
    j["supercritical"] = *h.supercritical;
    j["lambda_1"] = h.lambda1;
  }
  return j;
}

// Eigenvalues are reported in the decay convention lambda_k = -mu_k, where
// mu_k are the eigenvalues of L = Q + diag(A1); `growth` carries mu_k.
inline json spectrum_json(const BranchingModel& m, const Eigensystem& sys) {
  json clusters = json::array();
  for (int k = 0; k < sys.spectrum.size(); ++k) {
    const auto& c = sys.spectrum[k];
    clusters.push_back({{"index", k},
                        {"lambda", to_json(-c.growth)},
                        {"growth", to_json(c.growth)},
                        {"blocks", c.blocks},
                        {"multiplicity", c.multiplicity()},
                        {"regime", to_string(sys.spectrum.regime(k))},
                        {"conjugate", c.conjugate},
                        {"right", to_json(sys.basis.right[k])},
                        {"left", to_json(sys.basis.left[k])}});
  }
  return {{"model", m.name},
          {"d", m.dim()},
          {"mean_generator", to_json(sys.generator)},
          {"clusters", clusters},
          {"perron_right", to_json(sys.basis.perron_right)},
          {"perron_left", to_json(sys.basis.perron_left)},
          {"residuals",
           {{"biorthogonality", sys.diagnostics.biorthogonality_residual},
            {"action", sys.diagnostics.action_residual},
            {"condition", sys.diagnostics.condition}}},
          {"hypotheses", hypotheses_json(check_hypotheses(m))}};
}

inline json decomposition_json(const Eigensystem& sys, const Vector& f, const Decomposition& dec) {
  json coeffs = json::array(), lead = json::array();
  for (int k = 0; k < sys.spectrum.size(); ++k) {
    coeffs.push_back(to_json(dec.projection[k]));
    lead.push_back(to_json(dec.critical_coefficients[k]));
  }
  json j = {{"f", to_json(f)},
            {"v", coeffs},
            {"tau", dec.tau},
            {"tau_cr", dec.tau_cr},
            {"f_la", to_json(dec.f_la)},
            {"f_cr", to_json(dec.f_cr)},
            {"f_sm", to_json(dec.f_sm)},
            {"F_cr", lead}};
  if (dec.level.gamma) {
    j["gamma"] = *dec.level.gamma;
    j["zeta"] = dec.level.zeta;
    j["F"] = json::array();
    for (const auto& v : leading_coefficients(dec.projection, sys.spectrum)) j["F"].push_back(to_json(v));
  } else {
    j["gamma"] = "inf";  // vanishing projection
  }
  return j;
}

inline json constants_json(const BranchingModel& m, const Eigensystem& sys, const Vector& f,
                           const Decomposition& dec, const VarianceConstants& c) {
  return {{"model", m.name},
          {"f", to_json(f)},
          {"sigma2_sm", c.sm},
          {"sigma2_cr", c.cr},
          {"sigma2_la", c.la},
          {"tau_cr", c.tau_cr},
          {"quadrature",
           {{"sigma2_sm", sigma_sm_quadrature(m, sys, dec)}, {"sigma2_la", sigma_la_quadrature(m, sys, dec)}}}};
}

inline VarianceConstants read_constants(const json& j) {
  VarianceConstants c;
  try {
    c.sm = j.at("sigma2_sm").get<double>();
    c.cr = j.at("sigma2_cr").get<double>();
    c.la = j.at("sigma2_la").get<double>();
    c.tau_cr = j.at("tau_cr").get<int>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed constants document: ") + e.what());
  }
  return c;
}

inline json clt_json(const CltReport& r, const CltOptions& o) {
  return {{"mode", "clt"},
          {"component", to_string(r.component)},
          {"t", r.t},
          {"n_reps", r.n_reps},
          {"n_survivors", r.n_survivors},
          {"ks_statistic", r.ks_statistic},
          {"empirical_variance", r.empirical_variance},
          {"target_variance", r.target_variance},
          {"variance_ratio", r.variance_ratio},
          {"ks_tol", o.ks_tol},
          {"v_tol", o.v_tol},
          {"conditioning", "survival at the ensemble horizon"},
          {"vacuous", r.vacuous},
          {"pass", r.pass}};
}

inline json lil_json(const LilEnvelopeReport& r, const LilOptions& o) {
  return {{"mode", "lil"},
          {"note", r.note},
          {"critical", r.critical},
          {"tau", r.tau},
          {"sigma2", r.sigma2},
          {"horizon", r.horizon},
          {"n_survivors", r.n_survivors},
          {"band", {o.lo, o.hi}},
          {"fraction_in_band", r.fraction_in_band},
          {"min_fraction", o.min_fraction},
          {"quantiles", {{"q05", r.q05}, {"q25", r.q25}, {"q50", r.q50}, {"q75", r.q75}, {"q95", r.q95}}},
          {"degenerate", r.degenerate},
          {"pass", r.pass}};
}

inline json martingale_json(const MartingaleReport& r, const std::vector<double>& grid) {
  json rows = json::array();
  for (std::size_t i = 0; i < grid.size(); ++i)
    rows.push_back({{"t", grid[i]}, {"mean", to_json(r.mean[i])}, {"variance", to_json(r.variance[i])}});
  return {{"mode", "martingale"}, {"cluster", r.cluster},      {"n", r.n},
          {"initial", to_json(r.initial)}, {"max_mean_z", r.max_mean_z}, {"variance_z", r.variance_z},
          {"z_limit", r.z_limit}, {"grid", rows},              {"pass", r.pass}};
}

inline json heyde_json(const HeydeReport& r) {
  return {{"mode", "heyde"},
          {"mean", r.mean},
          {"second_moment", r.second_moment},
          {"sigma2", r.sigma2},
          {"recursion_limit", r.recursion_limit},
          {"discrete_residual", r.discrete_residual},
          {"skeleton_mean", r.skeleton_mean},
          {"skeleton_second_moment", r.skeleton_second_moment},
          {"skeleton_sigma2", r.skeleton_sigma2},
          {"sigma2_la", r.sigma2_la},
          {"skeleton_residual", r.skeleton_residual},
          {"tol", r.tol},
          {"pass", r.pass}};
}

inline void write_moment_csv(std::ostream& os, const MomentTable& t) {
  os << "t,x";
  for (int k = 1; k <= t.order; ++k) os << ",m" << k;
  os << '\n';
  for (std::size_t i = 0; i < t.grid.size(); ++i) {
    const auto d = t.at(i, 1).size();
    for (Eigen::Index x = 0; x < d; ++x) {
      os << format_real(t.grid[i]) << ',' << x;
      for (int k = 1; k <= t.order; ++k) os << ',' << format_real(t.at(i, k)[x]);
      os << '\n';
    }
  }
}

// ---------------------------------------------------------------------------

struct SpectralFlags {
  double cluster_tol = 1e-8;
  double rank_tol = 1e-8;
  double max_condition = 1e12;

  void attach(CLI::App* app) {
    app->add_option("--cluster-tol", cluster_tol, "eigenvalue clustering tolerance (relative)");
    app->add_option("--rank-tol", rank_tol, "rank tolerance for Jordan chains (relative)");
    app->add_option("--max-condition", max_condition, "largest admissible basis condition number");
  }
  SpectralOptions options() const {
    SpectralOptions o;
    o.cluster_tol = cluster_tol;
    o.rank_tol = rank_tol;
    o.max_condition = max_condition;
    return o;
  }
};

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Branching Markov process toolkit: spectra, moments, variance constants, simulation"};
  app.name("bmp");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string model_path, f_spec = "perron", out_path;
  SpectralFlags spectral;
  auto common = [&](CLI::App* sub, bool with_f) {
    sub->add_option("model", model_path, "model JSON file")->required()->check(CLI::ExistingFile);
    if (with_f) sub->add_option("--f", f_spec, "test function: list, perron, ones, unit:i, eig:k");
    sub->add_option("-o,--out", out_path, "output JSON path (default: stdout)");
    spectral.attach(sub);
  };

  auto* spectrum_cmd = app.add_subcommand("spectrum", "eigenvalues, Jordan structure and bases of L");
  common(spectrum_cmd, false);

  auto* decompose_cmd = app.add_subcommand("decompose", "project f and split it into la / cr / sm parts");
  common(decompose_cmd, true);

  double check_t = 0.0;
  auto* constants_cmd = app.add_subcommand("constants", "limiting variance constants of f");
  common(constants_cmd, true);
  constants_cmd->add_option("--check-t", check_t, "also compare the scaled variance at this time");

  double t_max = 1.0, step = 0.5;
  int order = 4;
  std::string method = "both", csv_path;
  auto* moments_cmd = app.add_subcommand("moments", "exact moments of <f, X_t> up to order 4");
  common(moments_cmd, true);
  moments_cmd->add_option("--t-max", t_max, "last grid time");
  moments_cmd->add_option("--step", step, "grid step");
  moments_cmd->add_option("--order", order, "highest moment order (1..4)")->check(CLI::Range(1, 4));
  moments_cmd->add_option("--method", method, "ode, convolution or both")
      ->check(CLI::IsMember({"ode", "convolution", "both"}));
  moments_cmd->add_option("--csv", csv_path, "MomentTable CSV path");

  std::string initial_spec, observables = "large", summary_path;
  std::size_t reps = 1;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::int64_t cap = SimulationOptions{}.population_cap;
  unsigned threads = 0;
  auto* simulate_cmd = app.add_subcommand("simulate", "Monte Carlo ensemble; writes a CSV of observables");
  simulate_cmd->add_option("model", model_path, "model JSON file")->required()->check(CLI::ExistingFile);
  simulate_cmd->add_option("--f", f_spec, "test function");
  simulate_cmd->add_option("--initial", initial_spec, "initial counts (default: one particle in state 0)");
  simulate_cmd->add_option("--t-max", t_max, "last grid time")->required();
  simulate_cmd->add_option("--step", step, "grid step")->required();
  simulate_cmd->add_option("--reps", reps, "number of replicates");
  simulate_cmd->add_option("--seed", seed, "master seed (required)")->required();
  simulate_cmd->add_option("--observables", observables, "H^(k) to record: large, all, none or list");
  simulate_cmd->add_option("--cap", cap, "population cap");
  simulate_cmd->add_option("--threads", threads, "worker threads (0: all cores)");
  simulate_cmd->add_option("-o,--out", out_path, "ensemble CSV path")->required();
  simulate_cmd->add_option("--summary", summary_path, "summary JSON path (default: stdout)");
  spectral.attach(simulate_cmd);

  std::string mode, ensemble_path, constants_path, component = "sm", plot_path, pmf_spec;
  double t_check = 0.0;
  int cluster = 0;
  CltOptions clt_opt;
  LilOptions lil_opt;
  double z_limit = 4.0, heyde_tol = 1e-8;
  auto* verify_cmd = app.add_subcommand("verify", "test limit theorems on ensemble output");
  verify_cmd->add_option("mode", mode, "clt, lil, martingale or heyde")
      ->required()
      ->check(CLI::IsMember({"clt", "lil", "martingale", "heyde"}));
  verify_cmd->add_option("--model", model_path, "model JSON file")->check(CLI::ExistingFile);
  verify_cmd->add_option("--ensemble", ensemble_path, "ensemble CSV")->check(CLI::ExistingFile);
  verify_cmd->add_option("--constants", constants_path, "constants JSON")->check(CLI::ExistingFile);
  verify_cmd->add_option("--f", f_spec, "test function (default: the one in the constants file)");
  verify_cmd->add_option("--t", t_check, "grid time for clt");
  verify_cmd->add_option("--component", component, "sm, cr or la");
  verify_cmd->add_option("--ks-tol", clt_opt.ks_tol, "KS tolerance");
  verify_cmd->add_option("--v-tol", clt_opt.v_tol, "variance-ratio tolerance");
  verify_cmd->add_option("--min-survivors", clt_opt.min_survivors, "minimum surviving replicates (clt)");
  verify_cmd->add_option("--lo", lil_opt.lo, "envelope band lower edge");
  verify_cmd->add_option("--hi", lil_opt.hi, "envelope band upper edge");
  verify_cmd->add_option("--min-fraction", lil_opt.min_fraction, "required fraction inside the band");
  verify_cmd->add_option("--t-min", lil_opt.t_min, "first time entering the envelope sup");
  verify_cmd->add_option("--margin", lil_opt.horizon_margin, "envelope uses t <= T - margin");
  verify_cmd->add_option("--k", cluster, "cluster for martingale mode");
  verify_cmd->add_option("--z", z_limit, "z-score limit for martingale mode");
  verify_cmd->add_option("--pmf", pmf_spec, "Galton-Watson offspring pmf p_0,p_1,... (heyde)");
  verify_cmd->add_option("--tol", heyde_tol, "agreement tolerance (heyde)");
  verify_cmd->add_option("-o,--out", out_path, "report JSON path (default: stdout)");
  verify_cmd->add_option("--plot", plot_path, "plot-ready CSV of the empirical distribution");
  spectral.attach(verify_cmd);

  std::string oracle_kind;
  double beta = 1.0, p0 = 0.0, p2 = 1.0;
  std::string oracle_t = "1";
  auto* oracle_cmd = app.add_subcommand("oracle", "closed-form single-type references");
  oracle_cmd->group("");  // debugging aid, hidden from help
  oracle_cmd->add_option("kind", oracle_kind, "yule or birth-death")
      ->required()
      ->check(CLI::IsMember({"yule", "birth-death"}));
  oracle_cmd->add_option("--beta", beta, "branching rate");
  oracle_cmd->add_option("--p0", p0, "death probability");
  oracle_cmd->add_option("--p2", p2, "split probability");
  oracle_cmd->add_option("--t", oracle_t, "time (or 'inf')");

  try {
    std::vector<std::string> args;
    for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    if (code == 0) return kOk;  // --help
    if (app.get_subcommands().empty()) err << app.help();
    return kInvalid;
  }
  seed_given = simulate_cmd->count("--seed") > 0;

  try {
    auto load = [&] {
      if (model_path.empty()) throw ValidationError("--model is required");
      return load_model_file(model_path);
    };

    if (*spectrum_cmd) {
      const auto m = load();
      const auto sys = model_eigensystem(m, spectral.options());
      emit(spectrum_json(m, sys), out_path, out);
      return kOk;
    }
    if (*decompose_cmd) {
      const auto m = load();
      const auto sys = model_eigensystem(m, spectral.options());
      const Vector f = parse_f(f_spec, sys);
      emit(decomposition_json(sys, f, split(sys, f)), out_path, out);
      return kOk;
    }
    if (*constants_cmd) {
      const auto m = load();
      const auto sys = model_eigensystem(m, spectral.options());
      const Vector f = parse_f(f_spec, sys);
      const auto dec = split(sys, f);
      const auto c = variance_constants(m, sys, dec);
      json j = constants_json(m, sys, f, dec, c);
      if (check_t > 0.0) {
        const auto rep = variance_limit_check(m, sys, f, check_t);
        json lim = {{"t", check_t}};
        if (rep.small_residual) lim["small_residual"] = *rep.small_residual;
        if (rep.critical_residual) lim["critical_residual"] = *rep.critical_residual;
        j["limit_check"] = lim;
      }
      emit(j, out_path, out);
      return kOk;
    }
    if (*moments_cmd) {
      const auto m = load();
      const auto sys = model_eigensystem(m, spectral.options());
      const Vector f = parse_f(f_spec, sys);
      const auto grid = regular_grid(t_max, step);
      json j = {{"model", m.name}, {"f", to_json(f)}, {"order", order}, {"grid", grid}};
      std::optional<MomentTable> table;
      if (method != "convolution") {
        table = moment_ode(m, f, grid, order);
        json rows = json::array();
        for (std::size_t i = 0; i < grid.size(); ++i) {
          json row = {{"t", grid[i]}};
          for (int k = 1; k <= order; ++k) row["m" + std::to_string(k)] = to_json(table->at(i, k));
          rows.push_back(row);
        }
        j["ode"] = rows;
      }
      if (method != "ode") {
        ConvolutionMoments conv(m, sys, f);
        json rows = json::array();
        double worst = 0.0;
        for (std::size_t i = 0; i < grid.size(); ++i) {
          json row = {{"t", grid[i]}};
          for (int k = 1; k <= order; ++k) {
            const Vector v = k == 1 ? conv.first(grid[i])
                             : k == 2 ? conv.second(grid[i])
                             : k == 3 ? conv.third(grid[i])
                                      : conv.fourth(grid[i]);
            row["m" + std::to_string(k)] = to_json(v);
            if (table) {
              const Vector& o = table->at(i, k);
              worst = std::max(worst, ((v - o).cwiseAbs().array() / o.cwiseAbs().array().max(1e-300)).maxCoeff());
            }
          }
          rows.push_back(row);
        }
        j["convolution"] = rows;
        if (table) j["max_relative_discrepancy"] = worst;
      }
      if (!csv_path.empty()) {
        if (!table) table = moment_ode(m, f, grid, order);
        auto os = open_output(csv_path);
        write_moment_csv(os, *table);
      }
      emit(j, out_path.empty() ? "" : out_path, out);
      return kOk;
    }
    if (*simulate_cmd) {
      if (!seed_given) throw ValidationError("--seed is required");
      const auto m = load();
      const auto sys = model_eigensystem(m, spectral.options());
      const Vector f = parse_f(f_spec, sys);
      const auto grid = regular_grid(t_max, step);
      EnsembleOptions eo;
      eo.simulation.population_cap = cap;
      eo.threads = threads;
      const auto e = ensemble(m, sys, parse_initial(initial_spec, m.dim()), grid, reps, seed, f,
                              parse_observables(observables, sys), eo);
      {
        auto os = open_output(out_path);
        write_csv(os, e);
      }
      json rows = json::array();
      for (const auto& g : e.summary)
        rows.push_back({{"t", g.t},
                        {"mean", g.mean},
                        {"variance", g.variance},
                        {"w_mean", g.w_mean},
                        {"w_variance", g.w_variance},
                        {"survivors", g.survivors},
                        {"replicates", g.replicates}});
      json errors = json::array();
      for (const auto& r : e.replicates)
        if (!r.ok()) errors.push_back({{"rep", r.index}, {"error", r.error}});
      emit({{"model", m.name},
            {"seed", seed},
            {"rng", "philox4x64-10, key {seed, replicate}"},
            {"reps", reps},
            {"summary", rows},
            {"failures", errors}},
           summary_path, out);
      return kOk;
    }
    if (*verify_cmd) {
      json report;
      bool pass = false;
      std::ofstream plot;
      if (!plot_path.empty()) plot = open_output(plot_path);
      if (mode == "heyde") {
        if (pmf_spec.empty()) throw ValidationError("--pmf is required for heyde");
        const auto r = heyde_crosscheck(parse_list(pmf_spec), heyde_tol);
        report = heyde_json(r);
        pass = r.pass;
      } else {
        if (ensemble_path.empty()) throw ValidationError("--ensemble is required");
        const auto m = load();
        const auto sys = model_eigensystem(m, spectral.options());
        std::ifstream in(ensemble_path);
        const auto e = read_csv(in);
        if (e.dim != m.dim()) throw ValidationError("ensemble and model disagree on d");
        if (mode == "martingale") {
          const auto r = martingale_check(e, sys, cluster, z_limit);
          report = martingale_json(r, e.grid);
          pass = r.pass;
          if (plot) {
            plot << "t,component,mean_re,mean_im,variance\n";
            for (std::size_t i = 0; i < e.grid.size(); ++i)
              for (Eigen::Index q = 0; q < r.mean[i].size(); ++q)
                plot << format_real(e.grid[i]) << ',' << q << ',' << format_real(r.mean[i][q].real()) << ','
                     << format_real(r.mean[i][q].imag()) << ',' << format_real(r.variance[i][q]) << '\n';
          }
        } else {
          if (constants_path.empty()) throw ValidationError("--constants is required");
          const json cj = read_json_file(constants_path);
          const auto consts = read_constants(cj);
          Vector f;
          if (verify_cmd->count("--f")) {
            f = parse_f(f_spec, sys);
          } else {
            const auto fv = cj.at("f").get<std::vector<double>>();
            if (static_cast<int>(fv.size()) != m.dim()) throw ValidationError("constants f has wrong length");
            f = Eigen::Map<const Vector>(fv.data(), m.dim());
          }
          if (mode == "clt") {
            const auto r = clt_check(e, sys, f, consts, t_check, parse_component(component), clt_opt);
            report = clt_json(r, clt_opt);
            pass = r.pass;
            if (plot) {
              std::vector<double> s = r.statistic;
              std::sort(s.begin(), s.end());
              plot << "statistic,empirical_cdf,normal_cdf\n";
              for (std::size_t i = 0; i < s.size(); ++i)
                plot << format_real(s[i]) << ',' << format_real((i + 1.0) / s.size()) << ','
                     << format_real(normal_cdf(s[i], r.target_variance)) << '\n';
            }
          } else {
            const auto r = lil_envelope(e, sys, f, consts, lil_opt);
            report = lil_json(r, lil_opt);
            pass = r.pass;
            if (plot) {
              plot << "rep,ratio\n";
              for (std::size_t i = 0; i < r.ratios.size(); ++i)
                plot << r.replicate[i] << ',' << format_real(r.ratios[i]) << '\n';
            }
          }
        }
      }
      emit(report, out_path, out);
      return pass ? kOk : kVerificationFailed;
    }
    if (*oracle_cmd) {
      const double t = oracle_t == "inf" ? INFINITY : detail::parse_real(oracle_t);
      json j;
      if (oracle_kind == "yule") {
        if (std::isinf(t)) throw ValidationError("Yule moments need a finite time");
        j = {{"kind", "yule"}, {"beta", beta}, {"t", t}, {"moments", oracle::yule_moments(beta, t)}};
      } else {
        j = {{"kind", "birth-death"}, {"beta", beta}, {"p0", p0}, {"p2", p2},
             {"extinction", oracle::birth_death_extinction(beta, p0, p2, t)}};
        if (!std::isinf(t)) j["t"] = t;
      }
      emit(j, out_path, out);
      return kOk;
    }
    err << app.help();
    return kInvalid;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const SpectralError& e) {
    err << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const VerificationError& e) {
    err << "verification failed: " << e.what() << '\n';
    return kVerificationFailed;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}

}  // namespace bmp::cli

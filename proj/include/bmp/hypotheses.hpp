#pragma once

// Diagnostic report on the standing assumptions. Nothing here is fatal:
// a finite-state model can violate the general-space column-sum condition
// without affecting any multitype conclusion, so everything is a warning.

#include <string>
#include <vector>

#include "bmp/model.hpp"
#include "bmp/spectral.hpp"

namespace bmp {

struct HypothesisReport {
  bool irreducible = false;
  bool bounded_rate = true;  // always true on a finite state space
  std::optional<bool> supercritical;  // empty when the spectrum could not be computed
  double lambda1 = 0.0;               // -(dominant growth rate)
  bool second_moment_finite = true;
  bool fourth_moment_finite = true;
  double probe_time = 1.0;
  // Finite-state analogues: max row / column sums of squared entries of
  // exp(tQ) (a_t, ahat_t) and exp(tL) (b_t, bhat_t).
  double a_t = 0.0, ahat_t = 0.0, b_t = 0.0, bhat_t = 0.0;
  std::vector<std::string> warnings;
};

inline HypothesisReport check_hypotheses(const BranchingModel& model, double probe_time = 1.0) {
  HypothesisReport r;
  r.probe_time = probe_time;
  // Structural checks minus irreducibility, which is reported separately.
  for (auto& issue : validation_issues(model, false)) r.warnings.push_back(issue);
  r.irreducible = is_irreducible(model.generator);
  if (!r.irreducible) r.warnings.emplace_back("generator Q is reducible");

  // Finite supports make every factorial moment finite; guard against
  // non-finite inputs all the same.
  const auto a = branching_moments(model);
  r.second_moment_finite = a.a2.allFinite();
  r.fourth_moment_finite = a.a4.allFinite();

  const Matrix l = mean_generator(model);
  Eigen::EigenSolver<Matrix> es(l, false);
  if (es.info() == Eigen::Success) {
    double top = -INFINITY;
    for (int i = 0; i < l.rows(); ++i) top = std::max(top, es.eigenvalues()[i].real());
    r.lambda1 = -top;
    r.supercritical = r.lambda1 < 0.0;
    if (!*r.supercritical) r.warnings.emplace_back("process is not supercritical (lambda_1 >= 0)");
  } else {
    r.warnings.emplace_back("eigenvalue computation failed");
  }

  auto sums = [](const Matrix& p, double& rows, double& cols) {
    const Matrix sq = p.cwiseAbs2();
    rows = sq.rowwise().sum().maxCoeff();
    cols = sq.colwise().sum().maxCoeff();
  };
  sums(expm(probe_time * model.generator), r.a_t, r.ahat_t);
  sums(expm(probe_time * l), r.b_t, r.bhat_t);
  return r;
}

}  // namespace bmp

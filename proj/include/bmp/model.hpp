#pragma once

// Finite-state branching Markov model: spatial generator, branching rate,
// offspring laws, and the derived factorial-moment coefficients.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bmp/types.hpp"

namespace bmp {

inline constexpr int kMaxOffspring = 64;

// One declared eigenvalue of the mean generator with its Jordan block sizes.
struct DeclaredEigenvalue {
  Complex value;
  std::vector<int> blocks;
};
using SpectralDeclaration = std::vector<DeclaredEigenvalue>;

struct BranchingModel {
  Matrix generator;                         // Q, conservative, rows sum to 0
  Vector branching_rate;                    // beta(x) >= 0
  std::vector<std::vector<double>> offspring;  // offspring[x][k] = p_k(x)
  std::optional<SpectralDeclaration> structure;
  std::string name;

  int dim() const { return static_cast<int>(branching_rate.size()); }
};

// Factorial-moment coefficients A^(k)(x) = d^k/dz^k psi(x, z) at z = 1.
struct BranchingMoments {
  Vector a1, a2, a3, a4;

  const Vector& order(int k) const {
    switch (k) {
      case 1: return a1;
      case 2: return a2;
      case 3: return a3;
      case 4: return a4;
      default: throw Error("branching moment order must be in 1..4");
    }
  }
  // True when no offspring law puts mass on k >= 2 (or beta vanishes).
  bool deterministic() const {
    return a2.isZero(0.0) && a3.isZero(0.0) && a4.isZero(0.0);
  }
};

// Strong connectivity of the jump graph {x -> y : Q(x,y) > 0}.
inline bool is_irreducible(const Matrix& q) {
  const auto d = q.rows();
  if (d <= 1) return true;
  auto reach_all = [&](bool transpose) {
    std::vector<char> seen(d, 0);
    std::vector<Eigen::Index> stack{0};
    seen[0] = 1;
    while (!stack.empty()) {
      auto x = stack.back();
      stack.pop_back();
      for (Eigen::Index y = 0; y < d; ++y) {
        double rate = transpose ? q(y, x) : q(x, y);
        if (y != x && rate > 0.0 && !seen[y]) {
          seen[y] = 1;
          stack.push_back(y);
        }
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
  };
  return reach_all(false) && reach_all(true);
}

// Every violated invariant, in a stable order. Empty means valid.
inline std::vector<std::string> validation_issues(const BranchingModel& m,
                                                  bool require_irreducible = true) {
  std::vector<std::string> issues;
  const int d = m.dim();
  if (d <= 0) {
    issues.emplace_back("state count must be positive");
    return issues;
  }
  if (m.generator.rows() != d || m.generator.cols() != d) {
    issues.emplace_back("generator must be " + std::to_string(d) + "x" + std::to_string(d));
    return issues;
  }
  if (static_cast<int>(m.offspring.size()) != d) {
    issues.emplace_back("offspring must list one law per state");
    return issues;
  }
  for (int x = 0; x < d; ++x) {
    const std::string at = " (state " + std::to_string(x) + ")";
    if (!std::isfinite(m.branching_rate[x]) || m.branching_rate[x] < 0.0)
      issues.push_back("negative or non-finite branching rate" + at);
    double row = 0.0;
    for (int y = 0; y < d; ++y) {
      double q = m.generator(x, y);
      if (!std::isfinite(q)) issues.push_back("non-finite generator entry" + at);
      if (y != x && q < 0.0) issues.push_back("negative off-diagonal generator entry" + at);
      row += q;
    }
    if (std::abs(row) > kStructuralTol)
      issues.push_back("non-conservative generator: row sum " + std::to_string(row) + at);
    const auto& pmf = m.offspring[x];
    if (pmf.empty()) {
      issues.push_back("empty offspring law" + at);
      continue;
    }
    if (static_cast<int>(pmf.size()) > kMaxOffspring + 1)
      issues.push_back("offspring support exceeds " + std::to_string(kMaxOffspring) + at);
    double total = 0.0;
    for (double p : pmf) {
      if (!std::isfinite(p) || p < 0.0) issues.push_back("negative offspring mass" + at);
      total += p;
    }
    if (std::abs(total - 1.0) > kStructuralTol) {
      std::ostringstream os;
      os.precision(17);
      os << "offspring pmf not normalized: sums to " << total << at;
      issues.push_back(os.str());
    }
  }
  if (require_irreducible && issues.empty() && !is_irreducible(m.generator))
    issues.emplace_back("reducible generator");
  return issues;
}

inline void validate(const BranchingModel& m, bool require_irreducible = true) {
  auto issues = validation_issues(m, require_irreducible);
  if (!issues.empty()) throw ValidationError(std::move(issues));
}

namespace detail {

inline double as_number(const nlohmann::json& j, const std::string& what,
                        std::vector<std::string>& issues) {
  if (!j.is_number()) {
    issues.push_back(what + " must be a number");
    return 0.0;
  }
  return j.get<double>();
}

inline SpectralDeclaration parse_declaration(const nlohmann::json& j,
                                             std::vector<std::string>& issues) {
  SpectralDeclaration out;
  if (!j.is_array()) {
    issues.emplace_back("structure must be an array");
    return out;
  }
  for (const auto& e : j) {
    if (!e.is_object()) {
      issues.emplace_back("structure entries must be objects");
      continue;
    }
    DeclaredEigenvalue dv;
    double re = 0.0, im = 0.0;
    for (auto it = e.begin(); it != e.end(); ++it) {
      if (it.key() == "re") {
        re = as_number(it.value(), "structure.re", issues);
      } else if (it.key() == "im") {
        im = as_number(it.value(), "structure.im", issues);
      } else if (it.key() == "blocks") {
        if (!it.value().is_array() || it.value().empty()) {
          issues.emplace_back("structure.blocks must be a non-empty array");
          continue;
        }
        for (const auto& b : it.value()) {
          if (!b.is_number_integer() || b.get<int>() < 1)
            issues.emplace_back("structure.blocks entries must be positive integers");
          else
            dv.blocks.push_back(b.get<int>());
        }
      } else {
        issues.push_back("unknown key in structure entry: " + it.key());
      }
    }
    dv.value = Complex(re, im);
    if (dv.blocks.empty()) dv.blocks.push_back(1);
    out.push_back(std::move(dv));
  }
  return out;
}

}  // namespace detail

// Parses and validates a model document. Keys: d, Q, beta, offspring, and
// optionally name and structure. Unknown keys are rejected.
inline BranchingModel load_model(const nlohmann::json& doc) {
  std::vector<std::string> issues;
  if (!doc.is_object()) throw ValidationError("model document must be a JSON object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    static const char* known[] = {"d", "Q", "beta", "offspring", "name", "structure"};
    if (std::find(std::begin(known), std::end(known), it.key()) == std::end(known))
      issues.push_back("unknown key: " + it.key());
  }
  for (const char* key : {"d", "Q", "beta", "offspring"})
    if (!doc.contains(key)) issues.push_back(std::string("missing key: ") + key);
  if (!issues.empty()) throw ValidationError(std::move(issues));

  if (!doc["d"].is_number_integer() || doc["d"].get<long long>() < 1)
    throw ValidationError("d must be a positive integer");
  const int d = doc["d"].get<int>();

  BranchingModel m;
  m.generator = Matrix::Zero(d, d);
  m.branching_rate = Vector::Zero(d);
  m.offspring.assign(d, {});

  const auto& q = doc["Q"];
  if (!q.is_array() || static_cast<int>(q.size()) != d) {
    issues.push_back("Q must have " + std::to_string(d) + " rows");
  } else {
    for (int x = 0; x < d; ++x) {
      if (!q[x].is_array() || static_cast<int>(q[x].size()) != d) {
        issues.push_back("Q row " + std::to_string(x) + " must have " + std::to_string(d) +
                         " entries");
        continue;
      }
      for (int y = 0; y < d; ++y) m.generator(x, y) = detail::as_number(q[x][y], "Q entry", issues);
    }
  }

  const auto& beta = doc["beta"];
  if (!beta.is_array() || static_cast<int>(beta.size()) != d) {
    issues.push_back("beta must have " + std::to_string(d) + " entries");
  } else {
    for (int x = 0; x < d; ++x) m.branching_rate[x] = detail::as_number(beta[x], "beta entry", issues);
  }

  const auto& off = doc["offspring"];
  if (!off.is_array() || static_cast<int>(off.size()) != d) {
    issues.push_back("offspring must have " + std::to_string(d) + " entries");
  } else {
    for (int x = 0; x < d; ++x) {
      const std::string at = " (state " + std::to_string(x) + ")";
      if (!off[x].is_array()) {
        issues.push_back("offspring law must be an array of [k, prob] pairs" + at);
        continue;
      }
      auto& pmf = m.offspring[x];
      for (const auto& pair : off[x]) {
        if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number_integer() ||
            !pair[1].is_number()) {
          issues.push_back("offspring entries must be [k, prob] pairs" + at);
          continue;
        }
        long long k = pair[0].get<long long>();
        if (k < 0 || k > kMaxOffspring) {
          issues.push_back("offspring count out of range [0, " + std::to_string(kMaxOffspring) +
                           "]" + at);
          continue;
        }
        if (static_cast<long long>(pmf.size()) <= k) pmf.resize(k + 1, 0.0);
        if (pmf[k] != 0.0) issues.push_back("duplicate offspring count " + std::to_string(k) + at);
        pmf[k] += pair[1].get<double>();
      }
    }
  }

  if (doc.contains("name")) {
    if (doc["name"].is_string())
      m.name = doc["name"].get<std::string>();
    else
      issues.emplace_back("name must be a string");
  }
  if (doc.contains("structure")) m.structure = detail::parse_declaration(doc["structure"], issues);

  if (!issues.empty()) throw ValidationError(std::move(issues));
  validate(m);
  return m;
}

inline BranchingModel load_model_text(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("parse failure: ") + e.what());
  }
  return load_model(doc);
}

inline BranchingModel load_model_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open model file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  auto m = load_model_text(buf.str());
  if (m.name.empty()) m.name = path.stem().string();
  return m;
}

inline nlohmann::json to_json(const BranchingModel& m) {
  nlohmann::json doc;
  const int d = m.dim();
  doc["d"] = d;
  doc["Q"] = nlohmann::json::array();
  for (int x = 0; x < d; ++x) {
    nlohmann::json row = nlohmann::json::array();
    for (int y = 0; y < d; ++y) row.push_back(m.generator(x, y));
    doc["Q"].push_back(row);
  }
  doc["beta"] = std::vector<double>(m.branching_rate.data(), m.branching_rate.data() + d);
  doc["offspring"] = nlohmann::json::array();
  for (const auto& pmf : m.offspring) {
    nlohmann::json law = nlohmann::json::array();
    for (std::size_t k = 0; k < pmf.size(); ++k)
      if (pmf[k] != 0.0) law.push_back({static_cast<int>(k), pmf[k]});
    doc["offspring"].push_back(law);
  }
  if (!m.name.empty()) doc["name"] = m.name;
  if (m.structure) {
    doc["structure"] = nlohmann::json::array();
    for (const auto& dv : *m.structure)
      doc["structure"].push_back({{"re", dv.value.real()}, {"im", dv.value.imag()}, {"blocks", dv.blocks}});
  }
  return doc;
}

inline BranchingMoments branching_moments(const BranchingModel& m) {
  const int d = m.dim();
  BranchingMoments a{Vector::Zero(d), Vector::Zero(d), Vector::Zero(d), Vector::Zero(d)};
  for (int x = 0; x < d; ++x) {
    const auto& pmf = m.offspring[x];
    double f1 = 0.0, f2 = 0.0, f3 = 0.0, f4 = 0.0;
    for (std::size_t j = 0; j < pmf.size(); ++j) {
      const double k = static_cast<double>(j);
      f1 += k * pmf[j];
      f2 += k * (k - 1.0) * pmf[j];
      f3 += k * (k - 1.0) * (k - 2.0) * pmf[j];
      f4 += k * (k - 1.0) * (k - 2.0) * (k - 3.0) * pmf[j];
    }
    const double b = m.branching_rate[x];
    a.a1[x] = b * (f1 - 1.0);
    a.a2[x] = b * f2;
    a.a3[x] = b * f3;
    a.a4[x] = b * f4;
  }
  return a;
}

// L = Q + diag(A^(1)); exp(tL) is the mean semigroup.
inline Matrix mean_generator(const BranchingModel& m) {
  Matrix l = m.generator;
  l.diagonal() += branching_moments(m).a1;
  return l;
}

}  // namespace bmp

#pragma once

#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace bmp {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

// Structural tolerance for generator rows and offspring masses.
inline constexpr double kStructuralTol = 1e-12;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input failed validation; carries every violated invariant.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> issues)
      : Error(join(issues)), issues_(std::move(issues)) {}
  explicit ValidationError(const std::string& issue)
      : ValidationError(std::vector<std::string>{issue}) {}

  const std::vector<std::string>& issues() const noexcept { return issues_; }

 private:
  static std::string join(const std::vector<std::string>& issues) {
    std::string out;
    for (const auto& s : issues) {
      if (!out.empty()) out += "; ";
      out += s;
    }
    return out;
  }
  std::vector<std::string> issues_;
};

class SpectralError : public Error {
 public:
  using Error::Error;
};

class MomentError : public Error {
 public:
  using Error::Error;
};

class SimulationError : public Error {
 public:
  using Error::Error;
};

class VerificationError : public Error {
 public:
  using Error::Error;
};

}  // namespace bmp

#pragma once

// Exponential polynomials sum_i e^{b_i s} P_i(s) with complex rates and
// complex polynomial coefficients. Products stay in the class and integrals
// over [0, inf) have the closed form  int s^j e^{b s} ds = j! / (-b)^{j+1}.

#include <cmath>
#include <vector>

#include "bmp/decompose.hpp"
#include "bmp/types.hpp"

namespace bmp {

struct ExpTerm {
  Complex rate;
  std::vector<Complex> poly;  // poly[j] multiplies s^j
};

class ExpPoly {
 public:
  ExpPoly() = default;

  void add(Complex rate, std::vector<Complex> poly) {
    for (auto& t : terms_) {
      if (t.rate == rate) {
        if (t.poly.size() < poly.size()) t.poly.resize(poly.size(), 0.0);
        for (std::size_t j = 0; j < poly.size(); ++j) t.poly[j] += poly[j];
        return;
      }
    }
    terms_.push_back({rate, std::move(poly)});
  }

  const std::vector<ExpTerm>& terms() const { return terms_; }

  ExpPoly conj() const {
    ExpPoly out;
    for (const auto& t : terms_) {
      std::vector<Complex> p(t.poly.size());
      for (std::size_t j = 0; j < p.size(); ++j) p[j] = std::conj(t.poly[j]);
      out.add(std::conj(t.rate), std::move(p));
    }
    return out;
  }

  ExpPoly scaled(Complex c) const {
    ExpPoly out = *this;
    for (auto& t : out.terms_)
      for (auto& a : t.poly) a *= c;
    return out;
  }

  // Multiply by e^{shift s}.
  ExpPoly shifted(Complex shift) const {
    ExpPoly out = *this;
    for (auto& t : out.terms_) t.rate += shift;
    return out;
  }

  ExpPoly& operator+=(const ExpPoly& o) {
    for (const auto& t : o.terms_) add(t.rate, t.poly);
    return *this;
  }

  friend ExpPoly operator*(const ExpPoly& a, const ExpPoly& b) {
    ExpPoly out;
    for (const auto& ta : a.terms_) {
      for (const auto& tb : b.terms_) {
        std::vector<Complex> p(ta.poly.size() + tb.poly.size() - 1, 0.0);
        for (std::size_t i = 0; i < ta.poly.size(); ++i)
          for (std::size_t j = 0; j < tb.poly.size(); ++j) p[i + j] += ta.poly[i] * tb.poly[j];
        out.add(ta.rate + tb.rate, std::move(p));
      }
    }
    return out;
  }

  Complex operator()(double s) const {
    Complex acc = 0.0;
    for (const auto& t : terms_) {
      Complex p = 0.0;
      for (std::size_t j = t.poly.size(); j-- > 0;) p = p * s + t.poly[j];
      acc += std::exp(t.rate * s) * p;
    }
    return acc;
  }

  // Largest real rate among terms with a non-zero coefficient.
  double abscissa() const {
    double best = -INFINITY;
    for (const auto& t : terms_)
      for (const auto& a : t.poly)
        if (a != 0.0) {
          best = std::max(best, t.rate.real());
          break;
        }
    return best;
  }

  Complex integral_to_infinity() const {
    Complex acc = 0.0;
    for (const auto& t : terms_) {
      bool nonzero = false;
      for (const auto& a : t.poly) nonzero = nonzero || a != 0.0;
      if (!nonzero) continue;
      if (!(t.rate.real() < 0.0)) throw MomentError("non-convergent integral: growth rate " +
                                                    std::to_string(t.rate.real()) + " >= 0");
      const Complex neg = -t.rate;
      Complex power = neg;  // (-b)^{j+1}
      double factorial = 1.0;
      for (std::size_t j = 0; j < t.poly.size(); ++j) {
        if (j > 0) {
          factorial *= static_cast<double>(j);
          power *= neg;
        }
        acc += t.poly[j] * factorial / power;
      }
    }
    return acc;
  }

 private:
  std::vector<ExpTerm> terms_;
};

// Per-state exponential polynomials for s -> sum_{k kept} e^{dir mu_k s}
// Phi[k] D_k(dir s) v_k. dir = +1 gives T_s f, dir = -1 gives I_s f.
template <class Pred>
std::vector<ExpPoly> eigen_flow(const Eigensystem& sys, const Projection& p, double dir, Pred keep) {
  const int d = sys.dim();
  std::vector<ExpPoly> out(d);
  for (int k = 0; k < sys.spectrum.size(); ++k) {
    if (!keep(k)) continue;
    const auto& c = sys.spectrum[k];
    const auto& phi = sys.basis.right[k];
    int offset = 0;
    for (int size : c.blocks) {
      for (int x = 0; x < d; ++x) {
        // (D(dir s) v)_p = sum_{m>=0} (dir s)^m / m! v_{p+m}
        std::vector<Complex> poly(size, 0.0);
        for (int pos = 0; pos < size; ++pos) {
          double coef = 1.0;
          for (int m = 0; pos + m < size; ++m) {
            poly[m] += phi(x, offset + pos) * coef * p[k][offset + pos + m];
            coef *= dir / static_cast<double>(m + 1);
          }
        }
        out[x].add(dir * c.growth, std::move(poly));
      }
      offset += size;
    }
  }
  return out;
}

}  // namespace bmp

#pragma once

#include <random>
#include <string>

#include "bmp/model.hpp"

namespace bmp::test {

inline BranchingModel fixture(const std::string& name) {
  return load_model_file(std::string(BMP_FIXTURE_DIR) + "/" + name + ".json");
}

inline const char* const kFixtures[] = {"yule", "two_state_small", "two_state_critical",
                                        "three_state_cyclic", "jordan_designed"};

inline Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

// Random irreducible model with d <= 4 and mean offspring > 1 somewhere.
inline BranchingModel random_model(std::mt19937_64& rng, int d) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  BranchingModel m;
  m.generator = Matrix::Zero(d, d);
  for (int x = 0; x < d; ++x) {
    for (int y = 0; y < d; ++y)
      if (x != y) m.generator(x, y) = u(rng);
    m.generator(x, x) = -m.generator.row(x).sum();
  }
  m.branching_rate = Vector(d);
  m.offspring.assign(d, {});
  for (int x = 0; x < d; ++x) {
    m.branching_rate[x] = u(rng);
    std::vector<double> p(5);
    double total = 0.0;
    for (auto& v : p) total += (v = u(rng));
    for (auto& v : p) v /= total;
    m.offspring[x] = p;
  }
  m.name = "random";
  validate(m);
  return m;
}

}  // namespace bmp::test

// Shared test helpers: seeded random tensors and a central-difference
// gradient checker.

#pragma once

#include "avasd/rng.hpp"
#include "avasd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace avasd::test {

using MatD = ad::Matrix<double>;
using VarD = ad::Var<double>;

inline MatD random_matrix(Rng& rng, ad::Index rows, ad::Index cols, double lo = -1.0,
                          double hi = 1.0) {
  MatD m(rows, cols);
  for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

// Random entries bounded away from zero, so a finite-difference probe never
// crosses a ReLU kink.
inline MatD random_away_from_zero(Rng& rng, ad::Index rows, ad::Index cols) {
  MatD m(rows, cols);
  for (ad::Index i = 0; i < m.size(); ++i) {
    const double mag = rng.uniform(0.05, 1.0);
    m.data()[i] = rng.bernoulli(0.5) ? mag : -mag;
  }
  return m;
}

inline std::vector<int> random_labels(Rng& rng, std::size_t n, double p = 0.5) {
  std::vector<int> out(n);
  for (auto& y : out) y = rng.bernoulli(p) ? 1 : 0;
  return out;
}

using ScalarFn = std::function<VarD(ad::Tape<double>&, const std::vector<VarD>&)>;

// |analytic - numeric|_2 / max(|analytic|_2, |numeric|_2, floor), the worst over
// all inputs. The floor turns the check absolute for near-zero gradients.
inline double gradient_error(const ScalarFn& f, const std::vector<MatD>& inputs, double h = 1e-5,
                             double floor = 1e-2) {
  std::vector<MatD> analytic;
  {
    ad::Tape<double> tape;
    std::vector<VarD> vars;
    for (const auto& m : inputs) vars.push_back(tape.variable(m));
    const auto loss = f(tape, vars);
    tape.backward(loss);
    for (const auto& v : vars) analytic.push_back(v.grad());
  }
  auto eval = [&](const std::vector<MatD>& xs) {
    ad::Tape<double> tape;
    std::vector<VarD> vars;
    for (const auto& m : xs) vars.push_back(tape.constant(m));
    return f(tape, vars).item();
  };
  double worst = 0.0;
  std::vector<MatD> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    MatD numeric(inputs[k].rows(), inputs[k].cols());
    for (ad::Index i = 0; i < inputs[k].size(); ++i) {
      const double x = inputs[k].data()[i];
      probe[k].data()[i] = x + h;
      const double up = eval(probe);
      probe[k].data()[i] = x - h;
      const double down = eval(probe);
      probe[k].data()[i] = x;
      numeric.data()[i] = (up - down) / (2.0 * h);
    }
    const double denom = std::max({analytic[k].norm(), numeric.norm(), floor});
    worst = std::max(worst, (analytic[k] - numeric).norm() / denom);
  }
  return worst;
}

}  // namespace avasd::test

#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ecs/hilbert.hpp"

namespace ecs::test {

inline MatrixXc gaussian(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  MatrixXc m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = Complex(n(rng), n(rng));
  return m;
}

inline MatrixXc random_hermitian(Index d, std::mt19937_64& rng) {
  MatrixXc g = gaussian(d, d, rng);
  return (g + g.adjoint()) / 2.0;
}

inline MatrixXc random_unitary(Index d, std::mt19937_64& rng) {
  Eigen::HouseholderQR<MatrixXc> qr(gaussian(d, d, rng));
  return qr.householderQ();
}

inline DensityMatrix random_density(const HilbertSpace& space, std::mt19937_64& rng) {
  MatrixXc g = gaussian(space.total(), space.total(), rng);
  MatrixXc r = g * g.adjoint();
  r /= r.trace().real();
  return DensityMatrix(space, (r + r.adjoint()) / 2.0);
}

inline VectorXc random_vector(Index d, std::mt19937_64& rng) {
  VectorXc v = gaussian(d, 1, rng);
  return v / v.norm();
}

// Coherent amplitudes from the series alpha^n / sqrt(n!), no truncation correction.
inline VectorXc fock_series(int dim, Complex alpha) {
  VectorXc v(dim);
  v(0) = std::exp(-std::norm(alpha) / 2);
  for (int n = 1; n < dim; ++n) v(n) = v(n - 1) * alpha / std::sqrt(double(n));
  return v;
}

inline double max_abs(const MatrixXc& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace ecs::test

#pragma once

#include <vector>

#include "ecs/hilbert.hpp"

namespace ecs {

// sqrt(<psi|rho|psi>), clamped to [0, 1].
double fidelity(const DensityMatrix& rho, const StateVector& target);
double fidelity(const StateVector& psi, const StateVector& target);

// log2(2 |sum of negative eigenvalues of rho^{T_slot}| + 1), in bits.
double log_negativity(const DensityMatrix& rho, std::size_t slot = 1);

// -Tr rho ln rho in nats; eigenvalues below 1e-12 count as zero.
double von_neumann_entropy(const DensityMatrix& rho);

// S(rho) - S(rho_condition_on), nats. Two-slot states only.
double conditional_entropy(const DensityMatrix& rho, std::size_t condition_on = 1);

double occupation(const DensityMatrix& rho, std::size_t slot);

// Pure two-slot states go through the Schmidt decomposition instead of a spectrum of the
// full density matrix.
Eigen::VectorXd schmidt_coefficients(const StateVector& psi);
double log_negativity(const StateVector& psi);
double entanglement_entropy(const StateVector& psi);
// S(psi) - S(one side) = -entanglement_entropy.
double conditional_entropy(const StateVector& psi);
double occupation(const StateVector& psi, std::size_t slot);

struct WignerSpec {
  double re_min = -3, re_max = 3;
  double im_min = -3, im_max = 3;
  int resolution = 61;  // points per axis
};

// values(i, j) = W(re_j + i im_i). Normalized so that sum W dRe dIm -> 1.
struct WignerGrid {
  WignerSpec spec;
  Eigen::VectorXd re;
  Eigen::VectorXd im;
  Eigen::MatrixXd values;
  double imaginary_residue = 0;  // largest |Im W| met on the grid

  double integral() const;
};

// Displaced parity (2/pi) Tr[D^dag(a) rho D(a) (-1)^n] on a single mode. Displacements are
// exact on a padded space; grid points past |a|^2 + 6|a| + 5 > dim produce a warning.
WignerGrid wigner(const DensityMatrix& rho, const WignerSpec& spec, Warnings* warnings = nullptr);
double wigner_at(const DensityMatrix& rho, Complex alpha);

struct IdealPoint {
  double time;
  double n_ideal;     // |g t|^2 / 2
  double e_n_ideal;   // log2[2 / (e^{-|g t|^2} + 1)]
};

std::vector<IdealPoint> ideal_curves(double g_tilde, const std::vector<double>& times);

}  // namespace ecs

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ecs/dynamics.hpp"

namespace ecs {

// Column-stacking Liouvillian: vec(A X B) = (B^T kron A) vec(X).
MatrixXc dense_liouvillian(const Operator& H, const DissipatorSet& dissipators);

// exp(L t) applied to vec(rho0). Small systems use the Pade exponential, larger ones a
// scaled Taylor series on the vector.
MatrixXc exact_evolution(const MatrixXc& liouvillian, const MatrixXc& rho0, double t);
MatrixXc taylor_expmv(const MatrixXc& liouvillian, const MatrixXc& rho0, double t);
MatrixXc pade_expm(const MatrixXc& liouvillian, const MatrixXc& rho0, double t);

struct RandomInstance {
  Operator H;
  DissipatorSet dissipators;
  DensityMatrix rho0;
};

// Gaussian Hamiltonian of unit scale, `channels` dense jumps, and a full-rank mixed state.
RandomInstance random_instance(const HilbertSpace& space, std::mt19937_64& rng, std::size_t channels = 3);

struct OracleCase {
  std::string name;
  Index dim = 0;
  int blocks = 1;  // transmon blocks used by the matrix-free generator
  double max_abs_error = 0;
  double seconds = 0;
};

struct OracleReport {
  std::vector<OracleCase> cases;
  double max_abs_error = 0;
  double seconds = 0;
};

// Random instances on dimensions 12, 24 and 48 plus a transmon/two-mode system built
// from a spec, each compared against the dense superoperator exponential.
OracleReport oracle_check(std::uint64_t seed);

}  // namespace ecs

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ecs/hilbert.hpp"

namespace ecs {

// exp[c^dag c (beta a^dag - beta^* a)] on mode `mode` (0-based, slot mode + 1): transmon
// level q shifts the mode by q * beta.
DensityMatrix conditional_displacement(const DensityMatrix& rho, std::size_t mode, Complex beta);
StateVector conditional_displacement(const StateVector& psi, std::size_t mode, Complex beta);

// c_k, theta_k of c0|0,0> + c1 e^{i theta1}|0,a> + c2 e^{i theta2}|a,0> + c3 e^{i theta3}|a,a>,
// with theta_0 = 0.
struct ECSCoefficients {
  std::array<double, 4> c{};
  std::array<double, 4> theta{};
  Complex alpha;
};

void validate(const ECSCoefficients& coeffs);

// Normalized two-mode state carried by the coefficients (branches are not orthogonalized).
StateVector ecs_state(const ECSCoefficients& coeffs, int fock_dim);

// Each displacement is a multiple (1, -1 or 0) of alpha.
struct ReadoutSetting {
  int beta_i = 0;
  int beta_j = 0;
  double phi = 0;

  std::string label() const;
  friend auto operator<=>(const ReadoutSetting&, const ReadoutSetting&) = default;
};

// (a,a) (-a,-a) (a,-a) (-a,a) (a,0) (-a,0) (0,a) (0,-a) (0,0), all at phi.
std::vector<ReadoutSetting> nine_settings(double phi);

struct ReadoutRecord {
  Complex alpha;
  std::map<ReadoutSetting, double> values;

  double at(int beta_i, int beta_j, double phi) const;
};

// <sigma_x> of an ancilla prepared in (|0> + e^{i phi}|1>)/sqrt 2 after the conditional
// displacements of the setting. The prepared state lives on the two modes.
double readout_run(const DensityMatrix& prepared, Complex alpha, const ReadoutSetting& setting);
// Same with the ancilla appended explicitly and displaced level by level.
double readout_run(const StateVector& prepared, Complex alpha, const ReadoutSetting& setting);

ReadoutRecord measure_record(const DensityMatrix& prepared, Complex alpha, double phi);
ReadoutRecord measure_record(const StateVector& prepared, Complex alpha, double phi);

// Closed-form <sigma_x> for orthogonal coherent branches. Warns below |alpha| = 4.
double predict_sigma_x(const ECSCoefficients& coeffs, const ReadoutSetting& setting, Warnings* warnings = nullptr);
ReadoutRecord predict_record(const ECSCoefficients& coeffs, double phi, Warnings* warnings = nullptr);

// Replaces every value by the mean of `shots` binary outcomes with P(+1) = (1 + v)/2.
ReadoutRecord sample_shots(const ReadoutRecord& exact, std::uint64_t shots, std::uint64_t seed);

struct Reconstruction {
  double c0c3 = 0;
  double theta3 = 0;
  double c1c2 = 0;
  double theta2_minus_theta1 = 0;
  double cross_f = 0;  // (c0 c2)^2 + (c1 c3)^2
  double cross_g = 0;  // (c0 c1)^2 + (c2 c3)^2
  bool theta3_undetermined = false;
  bool theta21_undetermined = false;
};

// Requires the nine settings at phi = pi/4.
Reconstruction reconstruct(const ReadoutRecord& record);

struct BellVerdict {
  bool is_bell = false;
  double c0 = 0;
  double c3 = 0;
  struct {
    double c1c2 = 0;
    double cross_f = 0;
    double cross_g = 0;
    double consistency = 0;  // sqrt2 <sx>_{0,0} - 2 c0c3 = (c0 - c3)^2
  } residuals;
};

BellVerdict verify_bell(const ReadoutRecord& record, double tol);

}  // namespace ecs

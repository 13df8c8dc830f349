#include "ecs/device.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace ecs {

namespace {

constexpr double kTwoPi = 2 * std::numbers::pi;

void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) throw Error(kind, what);
}

}  // namespace

void validate(const TransmonSpec& t, Warnings* warnings) {
  require(t.levels >= 2, ErrorKind::InvalidDimension, "transmon needs at least 2 levels");
  require(t.E_C > 0, ErrorKind::Domain, "E_C must be positive");
  require(t.E_J_max > 0, ErrorKind::Domain, "E_J_max must be positive");
  require(t.asymmetry == 0, ErrorKind::Domain, "SQUID junction asymmetry is not supported; set it to 0");
  require(t.T1 > 0 && t.T2 > 0, ErrorKind::Domain, "T1 and T2 must be positive");
  const double ratio = t.E_J_max * std::abs(std::cos(t.phi_b)) / t.E_C;
  require(ratio >= 20, ErrorKind::Regime,
          "E_J/E_C = " + std::to_string(ratio) + " is outside the transmon regime (needs >= 20)");
  if (ratio < 50) warn(warnings, "E_J/E_C = " + std::to_string(ratio) + " is close to the charge regime");
}

void validate(const ModeSpec& m, Warnings* warnings) {
  require(m.omega > 0, ErrorKind::Domain, "mode frequency must be positive");
  require(m.Q > 0, ErrorKind::Domain, "quality factor must be positive");
  require(m.n_th >= 0, ErrorKind::Domain, "thermal occupation must be non-negative");
  require(m.g_tilde >= 0, ErrorKind::Domain, "g_tilde must be non-negative");
  require(m.fock_dim >= 2, ErrorKind::InvalidDimension, "fock_dim must be at least 2");
  if (m.g_tilde / m.omega >= 1e-2)
    warn(warnings, "g_tilde/omega = " + std::to_string(m.g_tilde / m.omega) + " strains the rotating-wave approximation");
}

void validate(const Geometry& g) {
  if (const auto* m = std::get_if<MagnetGeometry>(&g)) {
    require(m->d > 0, ErrorKind::Domain, "magnet distance must be positive");
    require(m->l >= 1, ErrorKind::Domain, "magnon angular momentum l must be >= 1");
  } else {
    const auto& b = std::get<BeamGeometry>(g);
    require(b.length > 0 && b.beta0 > 0 && b.B_z >= 0 && b.x_zpf > 0 && b.mass > 0, ErrorKind::Domain,
            "beam geometry parameters must be positive");
  }
}

double josephson_energy(double E_J_max, double phi_b, const std::vector<double>& phi_offsets, Warnings* warnings) {
  const double c = std::cos(phi_b);
  require(std::abs(c) >= 1e-3, ErrorKind::NearNode,
          "flux bias is at a node of cos(phi_b); the linear expansion is invalid");
  double sum = 0;
  for (double phi : phi_offsets) {
    require(std::abs(phi) < 0.1, ErrorKind::Domain, "flux offset " + std::to_string(phi) + " is not small");
    if (std::abs(phi) > 0.01) warn(warnings, "flux offset " + std::to_string(phi) + " exceeds 0.01");
    sum += phi;
  }
  return E_J_max * std::abs(c) * (1 - std::tan(phi_b) * sum);
}

TransmonFrequencies transmon_frequency(double E_J, double E_C) {
  require(E_C > 0 && E_J / E_C >= 20, ErrorKind::Regime, "E_J/E_C below 20 is outside the transmon regime");
  return {kTwoPi * (std::sqrt(8 * E_J * E_C) - E_C), -kTwoPi * E_C};
}

double flux_zpf(const Geometry& g) {
  validate(g);
  if (const auto* m = std::get_if<MagnetGeometry>(&g))
    return constants::mu0 * m->mu_zpf / (4 * std::numbers::sqrt2 * m->d * constants::Phi0);
  const auto& b = std::get<BeamGeometry>(g);
  return std::numbers::pi * b.beta0 * b.B_z * b.length * b.x_zpf / constants::Phi0;
}

Couplings coupling_strengths(const TransmonSpec& t, double phi_zpf) {
  validate(t);
  const double c = std::cos(t.phi_b);
  require(c > 0, ErrorKind::Domain, "coupling formula needs cos(phi_b) > 0");
  const double omega_p = kTwoPi * std::sqrt(8 * t.E_J_max * t.E_C);
  return {0.5 * omega_p * std::sin(t.phi_b) / std::sqrt(c) * phi_zpf, 0.25 * omega_p * phi_zpf, omega_p};
}

double mode_frequency(const Geometry& g, double gamma0) {
  validate(g);
  if (const auto* m = std::get_if<MagnetGeometry>(&g))
    return gamma0 * (m->B_z + m->B_ani) +
           gamma0 * constants::mu0 * m->M_s * double(m->l - 1) / (3.0 * (2 * m->l + 1));
  const auto& b = std::get<BeamGeometry>(g);
  return constants::hbar / (2 * b.mass * b.x_zpf * b.x_zpf);
}

double thermal_occupation(double omega, double T) {
  require(omega > 0, ErrorKind::Domain, "thermal occupation needs omega > 0");
  require(T >= 0, ErrorKind::Domain, "temperature must be non-negative");
  if (T == 0) return 0;
  return 1.0 / std::expm1(constants::hbar * omega / (constants::kB * T));
}

}  // namespace ecs

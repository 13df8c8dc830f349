#pragma once

#include <numbers>
#include <variant>
#include <vector>

#include "ecs/errors.hpp"

namespace ecs {

namespace constants {
inline constexpr const char* kTableVersion = "CODATA-2018 exact SI";
inline constexpr double h = 6.62607015e-34;         // J s
inline constexpr double hbar = h / (2 * std::numbers::pi);
inline constexpr double kB = 1.380649e-23;          // J/K
inline constexpr double e = 1.602176634e-19;        // C
inline constexpr double Phi0 = h / (2 * e);         // Wb
inline constexpr double mu0 = 1.25663706212e-6;     // N/A^2
inline constexpr double gamma_e = 1.76085963023e11; // rad/(s T), electron gyromagnetic ratio
}  // namespace constants

// Energies are given as frequencies E/h in Hz.
struct TransmonSpec {
  double E_C = 300e6;
  double E_J_max = 30e9;
  double phi_b = 0;
  double asymmetry = 0;  // symmetric SQUID only; must stay 0
  int levels = 3;
  double T1 = 50e-6;
  double T2 = 50e-6;
};

void validate(const TransmonSpec& t, Warnings* warnings = nullptr);

enum class ModeKind { Magnon, Phonon };

struct ModeSpec {
  ModeKind kind = ModeKind::Magnon;
  double omega = 0;    // rad/s
  double g_tilde = 0;  // rad/s
  double Q = 0;        // may be +inf
  double n_th = 0;     // initial thermal occupation
  int fock_dim = 2;
};

void validate(const ModeSpec& m, Warnings* warnings = nullptr);

struct MagnetGeometry {
  double d = 0;       // sphere to loop distance, m
  double mu_zpf = 0;  // J/T
  double B_z = 0;     // T
  double B_ani = 0;   // T
  double M_s = 0;     // A/m; mu0 * M_s is the field entering the mode shift
  int l = 1;
};

struct BeamGeometry {
  double length = 0;  // m
  double beta0 = 0;
  double B_z = 0;     // T
  double x_zpf = 0;   // m
  double mass = 0;    // kg
};

using Geometry = std::variant<MagnetGeometry, BeamGeometry>;

void validate(const Geometry& g);

// E_J(phi_b) with the linear response to small extra reduced fluxes.
double josephson_energy(double E_J_max, double phi_b, const std::vector<double>& phi_offsets = {},
                        Warnings* warnings = nullptr);

struct TransmonFrequencies {
  double omega_q;        // rad/s
  double anharmonicity;  // rad/s
};

TransmonFrequencies transmon_frequency(double E_J, double E_C);

double flux_zpf(const Geometry& g);

struct Couplings {
  double g_static;  // rad/s
  double g_tilde;   // rad/s
  double omega_p;   // rad/s
};

Couplings coupling_strengths(const TransmonSpec& t, double phi_zpf);

double mode_frequency(const Geometry& g, double gamma0 = constants::gamma_e);

// Bose-Einstein occupation; 0 at T = 0.
double thermal_occupation(double omega, double T);

}  // namespace ecs

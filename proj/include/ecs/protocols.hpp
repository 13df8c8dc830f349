#pragma once

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ecs/dynamics.hpp"

namespace ecs {

enum class Axis { X, Y, Z };

// exp(-i angle sigma_axis / 2) on transmon levels {0, 1}.
struct QubitPulse {
  Axis axis = Axis::Y;
  double angle = 0;
};

// |0> -> (|0> + e^{i chi}|1>)/sqrt 2.
struct PrepareSuperposition {
  double chi = 0;
};

// Flux modulation at omega_ac for tau. A resonant mode is displaced by
// i g_tilde tau e^{-i theta} on transmon level 1.
struct InteractionWindow {
  double omega_ac = 0;
  double tau = 0;
  double theta = std::numbers::pi;
};

// Post-selection on a transmon state (length = transmon levels, or 2 for the qubit).
struct ProjectQubit {
  VectorXc state;
  std::string label;

  static ProjectQubit level(int k, int levels = 2);
};

struct ConditionalDisplace {
  std::size_t mode = 0;
  Complex beta;
};

struct MeasureSigmaX {
  std::string label;
};

using ProtocolStep =
    std::variant<QubitPulse, PrepareSuperposition, InteractionWindow, ProjectQubit, ConditionalDisplace, MeasureSigmaX>;
using ProtocolSequence = std::vector<ProtocolStep>;

std::string describe(const ProtocolStep& step);

MatrixXc qubit_matrix(const QubitPulse& pulse);
MatrixXc qubit_matrix(const PrepareSuperposition& prep);

// The 2x2 rotation acts on levels {0, 1}; higher levels and the modes are untouched.
DensityMatrix qubit_unitary(const DensityMatrix& rho, const MatrixXc& u2);
StateVector qubit_unitary(const StateVector& psi, const MatrixXc& u2);

struct Projection {
  DensityMatrix modes;
  double probability;
};
struct PureProjection {
  StateVector modes;
  double probability;
};

Projection project_qubit(const DensityMatrix& rho, const VectorXc& state);
PureProjection project_qubit(const StateVector& psi, const VectorXc& state);

// <sigma_x> on transmon levels {0, 1}.
double qubit_sigma_x(const DensityMatrix& rho);
double qubit_sigma_x(const StateVector& psi);

// Builders read couplings and frequencies from the spec they will run against.
// Outcome 0 selects the "+" state, outcome 1 the "-" state.
ProtocolSequence bell_sequence(const SystemSpec& spec, Complex alpha, double chi = 0, int outcome = 0);
ProtocolSequence noon_sequence(const SystemSpec& spec, Complex alpha, double chi = 0, int outcome = 0);
ProtocolSequence general_ecs_sequence(const SystemSpec& spec, Complex alpha, int outcome = 0);

enum class TargetKind { Bell, Noon, General };

// Normalized targets:
//   bell     (|0,0> +- e^{i chi}|a,a>)/N
//   noon     (|0,a> +- e^{i chi}|a,0>)/N
//   general  (|0,0> + |0,a> +- |a,0> -+ |a,a>)/N
StateVector ideal_target(TargetKind kind, Complex alpha, int sign, double chi, int fock_dim1, int fock_dim2);

// State the sequence ideally leaves behind for a measurement outcome. Equal to
// ideal_target except for the general "-" branch, where the two modes trade places.
StateVector protocol_target(TargetKind kind, Complex alpha, int outcome, double chi, int fock_dim1, int fock_dim2);

// Throws a sequencing error when the steps cannot run on the spec.
void validate(const ProtocolSequence& steps, const SystemSpec& spec, Warnings* warnings = nullptr,
              bool rwa_drop_detuned = true);

// Frame used by a window: resonant modes active, far-detuned modes co-rotating unless
// rwa_drop_detuned is off, in which case every coupling is kept.
FrameConfig window_frame(const SystemSpec& spec, const InteractionWindow& w, bool rwa_drop_detuned = true);

struct ProtocolOptions {
  EvolveOptions evolve;
  // Number of evenly spaced record points over the total window time (0: window ends only).
  std::size_t records = 0;
  // Called at every record with the time and the full state in the per-mode frame.
  std::function<void(double, std::size_t window, const DensityMatrix&)> observer;
  std::function<void(double, std::size_t window, const StateVector&)> pure_observer;
  Warnings* warnings = nullptr;
  bool rwa_drop_detuned = true;
};

struct ProtocolResult {
  Trajectory trajectory;
  DensityMatrix final_two_mode_state;
  std::optional<DensityMatrix> final_full_state;  // before any projection
  double projection_probability = 1;
  std::string selected_outcome;
  std::vector<std::pair<std::string, double>> sigma_x;
};

struct PureProtocolResult {
  std::vector<double> times;
  std::vector<double> norm_defects;
  StateVector final_two_mode_state;
  double projection_probability = 1;
  std::string selected_outcome;
  std::vector<std::pair<std::string, double>> sigma_x;
  EvolveStats stats;
};

// Mode states are reported in each mode's own rotating frame.
ProtocolResult run_protocol(const ProtocolSequence& steps, const SystemSpec& spec, const DensityMatrix& rho0,
                            const ProtocolOptions& options = {});
PureProtocolResult run_protocol(const ProtocolSequence& steps, const SystemSpec& spec, const StateVector& psi0,
                                const ProtocolOptions& options = {});

// Steps after the last interaction window: the instantaneous tail of a sequence.
ProtocolSequence trailing_steps(const ProtocolSequence& steps);
double total_window_time(const ProtocolSequence& steps);

struct TailResult {
  DensityMatrix modes;
  double probability;
};

// Applies instantaneous steps (no windows) to a full state and reduces it to the modes,
// projecting when the steps include a projection and tracing the transmon otherwise.
TailResult apply_tail(const ProtocolSequence& tail, const DensityMatrix& rho);

struct PureTailResult {
  StateVector modes;
  double probability;
};

// State-vector version; without a projection the transmon must end in |0>.
PureTailResult apply_tail(const ProtocolSequence& tail, const StateVector& psi);

}  // namespace ecs

#pragma once

#include <Eigen/Sparse>

#include <cstddef>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "ecs/device.hpp"
#include "ecs/hilbert.hpp"

namespace ecs {

struct SystemSpec {
  TransmonSpec transmon;
  std::vector<ModeSpec> modes;
  double temperature = 0;  // K, sets the bath occupations
  double coupling_phase_theta = std::numbers::pi;

  // (transmon levels, fock_dim of each mode)
  HilbertSpace space() const;
  HilbertSpace mode_space() const;
};

void validate(const SystemSpec& spec, Warnings* warnings = nullptr);

// Bath occupation of every mode at the spec temperature.
std::vector<double> bath_occupations(const SystemSpec& spec);

struct FrameConfig {
  double omega_ac = 0;  // rad/s
  std::vector<std::size_t> active_modes;
  bool rwa_drop_detuned = true;
  // Describe modes whose coupling is dropped in their own rotating frame, i.e. omit
  // their detuning term. Exact, since such modes then evolve freely.
  bool corotate_dropped = false;
  double qubit_detuning = 0;  // residual qubit frequency in this frame, rad/s
};

void validate(const SystemSpec& spec, const FrameConfig& frame, Warnings* warnings = nullptr);

bool coupling_dropped(const SystemSpec& spec, const FrameConfig& frame, std::size_t mode);

// Detuning that actually enters the Hamiltonian for this mode.
double effective_detuning(const SystemSpec& spec, const FrameConfig& frame, std::size_t mode);

struct Dissipator {
  double rate;  // 1/s
  Operator jump;
  std::string label;
};

struct DissipatorSet {
  std::vector<Dissipator> channels;

  // Zero rates are skipped; negative rates are an error.
  void add(double rate, Operator jump, std::string label);
};

Operator build_hamiltonian(const SystemSpec& spec, const FrameConfig& frame, bool coupling_on);
DissipatorSet build_dissipators(const SystemSpec& spec);

DensityMatrix thermal_state(int dim, double n_th);

// Product of the transmon ground state and thermal modes at ModeSpec::n_th.
DensityMatrix initial_state(const SystemSpec& spec);

using SparseMatrixXc = Eigen::SparseMatrix<Complex, Eigen::RowMajor>;

// A density matrix (or state vector) cut into blocks along the transmon slot.
// Blocks flagged inactive are exactly zero and stay zero under the generator.
struct Blocks {
  std::vector<MatrixXc> b;
  std::vector<char> active;
};

// Matrix-free Lindblad generator. When the Hamiltonian conserves the transmon level
// and each jump acts either on the transmon alone or on the modes alone, the state is
// handled as levels x levels blocks over the mode space; otherwise as one block.
// Inputs are taken to be Hermitian: only the upper blocks are computed.
// Holds scratch buffers, so one instance must not be shared between threads.
class Generator {
 public:
  Generator(const Operator& H, const DissipatorSet& dissipators);
  static Generator from_spec(const SystemSpec& spec, const FrameConfig& frame, bool coupling_on);

  int levels() const { return nq_; }
  Index block_dim() const { return m_; }
  bool dissipative() const { return dissipative_; }

  Blocks split(const MatrixXc& rho) const;
  MatrixXc merge(const Blocks& x) const;
  void apply(const Blocks& x, Blocks& dx) const;
  MatrixXc apply(const MatrixXc& rho) const;

  // State-vector blocks for the unitary limit.
  Blocks split_pure(const VectorXc& psi) const;
  VectorXc merge_pure(const Blocks& x) const;
  void apply_pure(const Blocks& x, Blocks& dx) const;

 private:
  struct Transfer {
    int dst;
    int src;
    Complex c;
  };

  Generator() = default;
  void finish(std::vector<SparseMatrixXc> h, std::vector<SparseMatrixXc> mode_jumps,
              const std::vector<std::pair<double, MatrixXc>>& level_jumps);

  int nq_ = 1;
  Index m_ = 0;
  bool dissipative_ = false;
  std::vector<SparseMatrixXc> h_;      // Hamiltonian per transmon level
  std::vector<SparseMatrixXc> a_adj_;  // (-iH_q - 1/2 sum L^dag L)^dag
  std::vector<SparseMatrixXc> j_adj_;  // sqrt(rate) L^dag for mode jumps
  std::vector<std::vector<Transfer>> transfers_;  // by destination block
  mutable MatrixXc t1_, t2_, t3_;
};

// dρ/dt = -i[H,ρ] + Σ rate (LρL† - {L†L,ρ}/2), H in rad/s, without a superoperator.
MatrixXc lindblad_rhs(const DensityMatrix& rho, const Operator& H, const DissipatorSet& dissipators);

struct TrajectoryRecord {
  double time;
  std::vector<double> occupations;
  double purity;
  double trace_defect;
  double hermiticity_defect;
  // Lower bound on the smallest eigenvalue (NaN when the audit is off).
  double min_eigenvalue;
  std::vector<double> leakage;  // top-two Fock population per mode
};

struct EvolveStats {
  std::size_t rhs_evaluations = 0;
  std::size_t accepted_steps = 0;
  std::size_t rejected_steps = 0;
  // Sum of the max-abs local error estimates over accepted steps.
  double error_estimate = 0;
};

struct EvolveOptions {
  double rtol = 1e-8;
  double atol = 1e-10;
  double fixed_step = 0;  // > 0 selects classical RK4 with this step
  std::size_t max_steps = 2'000'000;
  std::size_t max_snapshots = 200;
  bool audit_positivity = true;
  double leakage_limit = 1e-4;
  double t0 = 0;  // added to every reported time
  // Relative record times in [0, duration]; when empty the grid is 0, record_every, ...
  std::vector<double> record_times;
  std::function<void(double, const DensityMatrix&)> observer;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<TrajectoryRecord> records;
  std::vector<double> snapshot_times;
  std::vector<DensityMatrix> snapshots;  // always ends with the final state
  EvolveStats stats;

  const DensityMatrix& final_state() const { return snapshots.back(); }
};

Trajectory evolve(const DensityMatrix& rho0, const SystemSpec& spec, const FrameConfig& frame, double duration,
                  bool coupling_on, double record_every, const EvolveOptions& options = {});

// Same propagation driven by an explicit generator (used for oracle comparisons).
Trajectory evolve(const DensityMatrix& rho0, const Generator& generator, double duration, double record_every,
                  const EvolveOptions& options = {});

struct PureEvolveOptions {
  double rtol = 1e-8;
  double atol = 1e-10;
  double fixed_step = 0;
  std::size_t max_steps = 2'000'000;
  double t0 = 0;
  std::vector<double> record_times;
  std::function<void(double, const StateVector&)> observer;
};

struct PureTrajectory {
  std::vector<double> times;
  std::vector<double> norm_defects;  // |<psi|psi> - 1| at each record, before renormalizing
  StateVector final_state;
  EvolveStats stats;
};

// Schrodinger propagation for dissipationless systems.
PureTrajectory evolve_pure(const StateVector& psi0, const SystemSpec& spec, const FrameConfig& frame,
                           double duration, bool coupling_on, double record_every,
                           const PureEvolveOptions& options = {});

// Population of the two highest Fock levels of each mode.
std::vector<double> top_level_leakage(const MatrixXc& rho, const HilbertSpace& space);

}  // namespace ecs

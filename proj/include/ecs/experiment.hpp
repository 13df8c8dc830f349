#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ecs/config.hpp"
#include "ecs/readout.hpp"

namespace ecs {

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr int kCsvSchemaVersion = 1;

struct TrajectoryRow {
  double time_s;
  double n_mode1;
  double n_mode2;
  double fidelity;
  double log_negativity_bits;
  double conditional_entropy_nats;
  double purity;
  double trace_defect;
};

inline constexpr const char* kTrajectoryHeader =
    "time_s,n_mode1,n_mode2,fidelity,log_negativity_bits,conditional_entropy_nats,purity,trace_defect";

// Thresholds every recorded state is held to.
inline constexpr double kAuditTrace = 1e-8;
inline constexpr double kAuditHermiticity = 1e-9;
inline constexpr double kAuditPositivity = -1e-7;
inline constexpr double kAuditLeakage = 1e-4;

struct RunAudit {
  double max_trace_defect = 0;
  double max_hermiticity_defect = 0;
  double min_eigenvalue = 0;  // lower bound; NaN when the positivity audit is off
  double max_leakage = 0;
  double projection_probability = 1;
  std::string selected_outcome;
  std::size_t records = 0;
  bool passed() const;
};

struct ExperimentResult {
  std::vector<TrajectoryRow> rows;
  RunAudit audit;
  EvolveStats stats;
  bool state_vector_path = false;
  std::optional<DensityMatrix> final_modes;
  std::optional<StateVector> final_modes_pure;
  std::vector<std::pair<std::size_t, WignerGrid>> wigner;  // (1-based mode, grid)
  std::optional<ReadoutRecord> readout;
  std::vector<std::pair<std::string, double>> sigma_x;
  Warnings warnings;
  double wall_seconds = 0;
};

// Dissipationless systems starting from the vacuum run as state vectors.
bool uses_state_vector(const SystemSpec& spec);

ExperimentResult simulate(const ExperimentConfig& config);

// Writes trajectory.csv, wigner_modeK.csv, readout.csv and manifest.json into `dir`.
void write_outputs(const ExperimentConfig& config, const ExperimentResult& result, const std::filesystem::path& dir);

ExperimentResult run_experiment(const ExperimentConfig& config, const std::filesystem::path& dir);

struct SummaryRow {
  double sweep_value;
  double peak_fidelity;
  double peak_log_negativity_bits;
  double min_conditional_entropy_nats;
  double time_of_peak_fidelity_s;
  std::string status;
  int exit_code = 0;
};

inline constexpr const char* kSummaryHeader =
    "sweep_value,peak_fidelity,peak_log_negativity_bits,min_conditional_entropy_nats,time_of_peak_fidelity_s,status";

SummaryRow summarize(double sweep_value, const std::vector<TrajectoryRow>& rows);

// Runs every point into dir/point_<k>, concurrently, and writes dir/summary.csv. A failing
// point is recorded in its row and does not stop the others.
std::vector<SummaryRow> sweep_experiment(const ExperimentConfig& config, const std::filesystem::path& dir,
                                         unsigned max_threads = 0);

struct ReadoutReport {
  ReadoutRecord record;
  Reconstruction reconstruction;
  BellVerdict verdict;
  double tol = 0;
  Warnings warnings;
};

// Prepares the configured state, records the nine settings at phi = pi/4 and runs the
// Bell test on them.
ReadoutReport verify_readout(const ExperimentConfig& config);

std::string sha256_hex(const std::string& data);
std::string format_double(double v);

}  // namespace ecs

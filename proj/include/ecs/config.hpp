#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ecs/metrics.hpp"
#include "ecs/protocols.hpp"

namespace ecs {

enum class ProtocolKind { Bell, Noon, GeneralEcs, Custom };

struct TargetConfig {
  TargetKind kind = TargetKind::Bell;
  Complex alpha;
  int sign = 1;
  double chi = 0;
  bool running = false;  // scale alpha with the elapsed fraction of the window time
  bool swapped = false;  // general "-" branch: modes exchanged
};

struct ProtocolConfig {
  ProtocolKind kind = ProtocolKind::Bell;
  Complex alpha;
  double chi = 0;
  int outcome = 0;
  bool rwa_drop_detuned = true;
  ProtocolSequence steps;
  std::optional<TargetConfig> target;
};

struct WignerConfig {
  std::vector<std::size_t> modes;  // 1-based
  WignerSpec grid;
};

struct ReadoutConfig {
  double phi = std::numbers::pi / 4;
  std::uint64_t shots = 0;  // 0: exact expectations
  double tol = 1e-3;        // verify-readout acceptance tolerance
};

struct SolverConfig {
  double rtol = 1e-9;
  double atol = 1e-11;
  double fixed_step = 0;  // s; > 0 selects deterministic RK4
  std::size_t max_steps = 2'000'000;
  bool audit_positivity = true;
};

struct SweepConfig {
  std::string parameter;  // dotted path into the document, '*' maps over a list
  std::vector<double> values;
};

inline const std::vector<std::string> kTrajectoryMetrics = {"occupations", "fidelity", "log_negativity",
                                                            "conditional_entropy", "purity"};

struct ExperimentConfig {
  SystemSpec system;
  ProtocolConfig protocol;
  std::vector<std::string> metrics = kTrajectoryMetrics;
  std::size_t time_points = 41;
  std::optional<WignerConfig> wigner;
  std::optional<ReadoutConfig> readout;
  SolverConfig solver;
  std::optional<SweepConfig> sweep;
  std::uint64_t seed = 0;
  std::string output;
  std::string source;  // document text the run was parsed from
  Warnings warnings;   // raised while loading

  bool wants(const std::string& metric) const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

struct SweepPoint {
  double value;
  std::string source;  // the document with the value substituted and the sweep removed
};

std::vector<SweepPoint> sweep_points(const ExperimentConfig& config);

}  // namespace ecs

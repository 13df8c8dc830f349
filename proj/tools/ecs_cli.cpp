#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "ecs/experiment.hpp"
#include "ecs/oracle.hpp"
#include "json.hpp"

namespace {

using json = nlohmann::ordered_json;

std::filesystem::path output_dir(const std::string& flag, const ecs::ExperimentConfig& cfg) {
  if (!flag.empty()) return flag;
  if (!cfg.output.empty()) return cfg.output;
  throw ecs::ConfigError("no output directory: pass --out or set 'output' in the configuration");
}

void print_warnings(const ecs::Warnings& w) {
  for (const auto& m : w) std::cerr << "warning: " << m << '\n';
}

int cmd_run(const std::string& config, const std::string& out) {
  const auto cfg = ecs::load_config(config);
  const auto dir = output_dir(out, cfg);
  const auto res = ecs::run_experiment(cfg, dir);
  print_warnings(res.warnings);
  std::cout << "wrote " << dir.string() << " (" << res.rows.size() << " records, "
            << (res.state_vector_path ? "state-vector" : "density-matrix") << " path, "
            << ecs::format_double(res.wall_seconds) << " s)\n";
  return 0;
}

int cmd_sweep(const std::string& config, const std::string& out, unsigned threads) {
  const auto cfg = ecs::load_config(config);
  if (!cfg.sweep) throw ecs::ConfigError("sweep needs a 'sweep' block in the configuration");
  const auto dir = output_dir(out, cfg);
  print_warnings(cfg.warnings);
  const auto rows = ecs::sweep_experiment(cfg, dir, threads);
  int code = 0;
  for (const auto& r : rows) {
    std::cout << cfg.sweep->parameter << " = " << ecs::format_double(r.sweep_value) << ": " << r.status << '\n';
    if (r.exit_code && !code) code = r.exit_code;
  }
  std::cout << "wrote " << (dir / "summary.csv").string() << '\n';
  return code;
}

int cmd_verify(const std::string& config) {
  const auto cfg = ecs::load_config(config);
  const auto rep = ecs::verify_readout(cfg);
  print_warnings(rep.warnings);
  json record = json::array();
  for (const auto& [s, v] : rep.record.values)
    record.push_back({{"setting", s.label()}, {"beta_i", s.beta_i}, {"beta_j", s.beta_j}, {"phi", s.phi}, {"sigma_x", v}});
  const auto& r = rep.reconstruction;
  const auto& v = rep.verdict;
  json j = {
      {"alpha", {rep.record.alpha.real(), rep.record.alpha.imag()}},
      {"record", record},
      {"reconstruction",
       {{"c0c3", r.c0c3},
        {"theta3", r.theta3},
        {"theta3_undetermined", r.theta3_undetermined},
        {"c1c2", r.c1c2},
        {"theta2_minus_theta1", r.theta2_minus_theta1},
        {"theta21_undetermined", r.theta21_undetermined},
        {"cross_f", r.cross_f},
        {"cross_g", r.cross_g}}},
      {"bell",
       {{"is_bell", v.is_bell},
        {"tol", rep.tol},
        {"c0", v.c0},
        {"c3", v.c3},
        {"residuals",
         {{"c1c2", v.residuals.c1c2},
          {"cross_f", v.residuals.cross_f},
          {"cross_g", v.residuals.cross_g},
          {"consistency", v.residuals.consistency}}}}},
  };
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_oracle(std::uint64_t seed) {
  const auto rep = ecs::oracle_check(seed);
  constexpr double tol = 1e-8;
  for (const auto& c : rep.cases)
    std::printf("%-40s dim %3ld  blocks %d  max|diff| %.3e  %.2f s  %s\n", c.name.c_str(), long(c.dim), c.blocks,
                c.max_abs_error, c.seconds, c.max_abs_error <= tol ? "ok" : "FAIL");
  std::printf("total %.2f s, worst %.3e (tolerance %.0e)\n", rep.seconds, rep.max_abs_error, tol);
  return rep.max_abs_error <= tol ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entangled coherent state protocols on a transmon coupled to two bosonic modes"};
  app.require_subcommand(1);
  std::string config, out;
  unsigned threads = 0;
  std::uint64_t seed = 1;

  auto* run = app.add_subcommand("run", "Run one configured experiment");
  run->add_option("--config", config, "Experiment configuration (YAML)")->required();
  run->add_option("--out", out, "Output directory (defaults to the config 'output' key)");

  auto* sweep = app.add_subcommand("sweep", "Run every value of the configured sweep");
  sweep->add_option("--config", config, "Experiment configuration (YAML)")->required();
  sweep->add_option("--out", out, "Output directory (defaults to the config 'output' key)");
  sweep->add_option("--threads", threads, "Concurrent points (0: hardware concurrency)");

  auto* verify = app.add_subcommand("verify-readout", "Nine-setting readout and Bell test of the prepared state");
  verify->add_option("--config", config, "Experiment configuration (YAML)")->required();

  auto* oracle = app.add_subcommand("oracle-check", "Compare the matrix-free solver with dense exponentiation");
  oracle->add_option("--seed", seed, "Random instance seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*run) return cmd_run(config, out);
    if (*sweep) return cmd_sweep(config, out, threads);
    if (*verify) return cmd_verify(config);
    if (*oracle) return cmd_oracle(seed);
  } catch (const ecs::ConfigError& e) {
    std::cerr << "config error";
    if (e.line() > 0) std::cerr << " at " << config << ":" << e.line() << ":" << e.column();
    std::cerr << ": " << e.what() << '\n';
    return 2;
  } catch (const ecs::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return ecs::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

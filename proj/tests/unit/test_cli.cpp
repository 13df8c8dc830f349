#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "ecs/experiment.hpp"
#include "json.hpp"

using namespace ecs;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

const fs::path kSource = ECS_SOURCE_DIR;
const std::string kCli = ECS_CLI_PATH;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string f; std::getline(in, f, ',');) out.push_back(f);
  return out;
}

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("ecs_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(path_ / name) << text;
    return path_ / name;
  }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

struct Proc {
  int code;
  std::string out;
};

Proc run_cli(const std::string& args) {
  const std::string cmd = kCli + " " + args + " 2>&1";
  FILE* p = ::popen(cmd.c_str(), "r");
  std::string out;
  char buf[512];
  while (std::fgets(buf, sizeof buf, p)) out += buf;
  const int status = ::pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

// Small dissipative Bell run, deterministic through the fixed-step solver.
const std::string kSmall = R"(name: small
system:
  transmon: {levels: 3, T1_s: 20.0e-6, T2_s: 20.0e-6}
  temperature_K: 0.01
  modes:
    - {kind: magnon, omega_hz: 1.0e9, g_tilde_hz: 2.0e6, Q: 1.0e4, n_th: 0.01, fock_dim: 12}
    - {kind: magnon, omega_hz: 1.0e9, g_tilde_hz: 2.0e6, Q: 1.0e4, n_th: 0.01, fock_dim: 12}
protocol: {kind: bell, alpha: 1.0}
time_grid: {points: 6}
solver: {fixed_step_s: 2.0e-9}
)";

}  // namespace

TEST(LoadConfig, Fig2Bundle) {
  const auto c = load_config((kSource / "configs/fig2_bell_magnon.yaml").string());
  ASSERT_EQ(c.system.modes.size(), 2u);
  for (const auto& m : c.system.modes) {
    EXPECT_EQ(m.kind, ModeKind::Magnon);
    EXPECT_NEAR(m.omega, 2 * kPi * 1e9, 1e-3);
    EXPECT_NEAR(m.g_tilde, 2 * kPi * 2e6, 1e-6);
  }
  EXPECT_DOUBLE_EQ(c.system.transmon.T1, 50e-6);
  EXPECT_DOUBLE_EQ(c.system.transmon.T2, 50e-6);
  EXPECT_DOUBLE_EQ(c.system.temperature, 0.010);
  ASSERT_TRUE(c.sweep);
  EXPECT_EQ(c.sweep->parameter, "system.modes.*.Q");
  EXPECT_EQ(c.sweep->values, (std::vector<double>{1e3, 1e4, 1e5}));
  EXPECT_EQ(c.protocol.kind, ProtocolKind::Bell);
}

TEST(LoadConfig, Fig4Bundle) {
  const auto c = load_config((kSource / "configs/fig4_bell_phonon.yaml").string());
  for (const auto& m : c.system.modes) {
    EXPECT_EQ(m.kind, ModeKind::Phonon);
    EXPECT_NEAR(m.omega, 2 * kPi * 10e6, 1e-6);
    EXPECT_NEAR(m.g_tilde, 2 * kPi * 100e3, 1e-6);
    EXPECT_DOUBLE_EQ(m.n_th, 0.1);
  }
  ASSERT_TRUE(c.sweep);
  EXPECT_EQ(c.sweep->values, (std::vector<double>{1e5, 1e6, 1e7}));
}

TEST(LoadConfig, EveryBundledConfigLoads) {
  for (const auto& e : fs::directory_iterator(kSource / "configs"))
    if (e.path().extension() == ".yaml") EXPECT_NO_THROW(load_config(e.path().string())) << e.path();
}

TEST(LoadConfig, EmptyFile) {
  try {
    parse_config("");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 1);
    EXPECT_EQ(e.column(), 1);
  }
  EXPECT_THROW(parse_config("# only a comment\n"), ConfigError);
}

TEST(LoadConfig, UnknownKeyNamesLine) {
  std::string text = kSmall;
  text.replace(text.find("protocol:"), 0, "bogus_key: 3\n");
  try {
    parse_config(text);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("bogus_key"), std::string::npos);
    EXPECT_EQ(e.line(), 8);
  }
  std::string nested = kSmall;
  nested.replace(nested.find("levels: 3"), 0, "T3_s: 1, ");
  try {
    parse_config(nested);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("T3_s"), std::string::npos);
    EXPECT_EQ(e.line(), 3);
  }
}

TEST(LoadConfig, ParseErrorHasPosition) {
  try {
    parse_config("system: [1, 2\nprotocol: {kind: bell}\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_GT(e.line(), 0);
  }
}

TEST(LoadConfig, SchemaViolations) {
  auto bad = [](const std::string& from, const std::string& to) {
    std::string t = kSmall;
    t.replace(t.find(from), from.size(), to);
    return t;
  };
  EXPECT_THROW(parse_config(bad("kind: bell", "kind: tango")), ConfigError);
  EXPECT_THROW(parse_config(bad("points: 6", "points: 1")), ConfigError);
  EXPECT_THROW(parse_config(bad("alpha: 1.0", "alpha: one")), ConfigError);
  // Physics checks run at load time and keep their own class.
  try {
    parse_config(bad("levels: 3", "levels: 3, E_J_max_hz: 1.0e9"));
    FAIL();
  } catch (const ConfigError&) {
    FAIL() << "regime violation reported as a schema error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Regime);
  }
}

TEST(LoadConfig, DefaultsApplied) {
  const auto c = parse_config(kSmall);
  EXPECT_EQ(c.metrics, kTrajectoryMetrics);
  EXPECT_EQ(c.time_points, 6u);
  EXPECT_DOUBLE_EQ(c.solver.rtol, 1e-9);
  EXPECT_DOUBLE_EQ(c.solver.fixed_step, 2e-9);
  EXPECT_DOUBLE_EQ(c.system.coupling_phase_theta, kPi);
  EXPECT_FALSE(c.sweep);
}

TEST(Sweep, Substitution) {
  std::string text = kSmall + "sweep: {parameter: system.modes.*.Q, values: [100.0, 2.5e3]}\n";
  const auto c = parse_config(text);
  const auto pts = sweep_points(c);
  ASSERT_EQ(pts.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto p = parse_config(pts[k].source);
    EXPECT_FALSE(p.sweep);
    for (const auto& m : p.system.modes) EXPECT_EQ(m.Q, c.sweep->values[k]);
  }
  const auto t = parse_config(kSmall + "sweep: {parameter: system.transmon.T1_s, values: [1.0e-5]}\n");
  EXPECT_DOUBLE_EQ(parse_config(sweep_points(t)[0].source).system.transmon.T1, 1e-5);
  EXPECT_THROW(parse_config(kSmall + "sweep: {parameter: system.nothing.here, values: [1]}\n"), ConfigError);
}

TEST(Run, FilesHeadersAndRows) {
  TempDir tmp;
  const auto cfg = parse_config(kSmall);
  const auto res = run_experiment(cfg, tmp.path());
  EXPECT_FALSE(res.state_vector_path);
  const auto csv = lines(slurp(tmp.path() / "trajectory.csv"));
  ASSERT_EQ(csv.size(), cfg.time_points + 1);
  EXPECT_EQ(csv[0], "time_s,n_mode1,n_mode2,fidelity,log_negativity_bits,conditional_entropy_nats,purity,trace_defect");
  for (std::size_t k = 1; k < csv.size(); ++k) EXPECT_EQ(split(csv[k]).size(), 8u);
  EXPECT_TRUE(fs::exists(tmp.path() / "manifest.json"));
  EXPECT_FALSE(fs::exists(tmp.path() / "readout.csv"));

  const auto m = nlohmann::json::parse(slurp(tmp.path() / "manifest.json"));
  EXPECT_EQ(m["config_sha256"], sha256_hex(cfg.source));
  EXPECT_EQ(m["config_sha256"].get<std::string>().size(), 64u);
  EXPECT_TRUE(m["audit"]["passed"].get<bool>());
  for (const char* key : {"tool", "wall_time_s", "audit", "warnings", "outputs"}) EXPECT_TRUE(m.contains(key)) << key;
  EXPECT_LT(m["audit"]["max_trace_defect"].get<double>(), 1e-8);
  EXPECT_GT(m["audit"]["projection_probability"].get<double>(), 0.4);
}

TEST(Run, FixedStepOutputIsByteIdentical) {
  TempDir a, b;
  const auto cfg = parse_config(kSmall);
  run_experiment(cfg, a.path());
  run_experiment(cfg, b.path());
  EXPECT_EQ(slurp(a.path() / "trajectory.csv"), slurp(b.path() / "trajectory.csv"));
}

TEST(Run, WignerBeyondTruncationWarns) {
  TempDir tmp;
  const auto cfg = parse_config(kSmall + "metrics: [fidelity, wigner]\n"
                                         "wigner: {modes: [1], re: [-4, 4], im: [-4, 4], resolution: 9}\n");
  const auto cfg_path = tmp.write("w.yaml", kSmall + "metrics: [fidelity, wigner]\n"
                                                     "wigner: {modes: [1], re: [-4, 4], im: [-4, 4], resolution: 9}\n");
  const auto p = run_cli("run --config " + cfg_path.string() + " --out " + (tmp.path() / "o").string());
  EXPECT_EQ(p.code, 0) << p.out;
  const auto m = nlohmann::json::parse(slurp(tmp.path() / "o/manifest.json"));
  bool found = false;
  for (const auto& w : m["warnings"]) found |= w.get<std::string>().find("Wigner") != std::string::npos;
  EXPECT_TRUE(found);
  const auto grid = lines(slurp(tmp.path() / "o/wigner_mode1.csv"));
  EXPECT_EQ(grid[0], "re,im,value");
  EXPECT_EQ(grid.size(), 82u);
  EXPECT_TRUE(cfg.wants("wigner"));
}

TEST(Sweep, SummaryMatchesPointColumnsAndSingleValueEqualsRun) {
  TempDir tmp;
  const auto cfg = parse_config(kSmall + "sweep: {parameter: system.modes.*.Q, values: [1.0e3, 1.0e4]}\n");
  const auto rows = sweep_experiment(cfg, tmp.path(), 2);
  ASSERT_EQ(rows.size(), 2u);
  const auto summary = lines(slurp(tmp.path() / "summary.csv"));
  ASSERT_EQ(summary.size(), 3u);
  EXPECT_EQ(summary[0], kSummaryHeader);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto traj = lines(slurp(tmp.path() / ("point_" + std::to_string(k)) / "trajectory.csv"));
    double fmax = -1, emax = -1, smin = 1e300;
    for (std::size_t r = 1; r < traj.size(); ++r) {
      const auto f = split(traj[r]);
      fmax = std::max(fmax, std::strtod(f[3].c_str(), nullptr));
      emax = std::max(emax, std::strtod(f[4].c_str(), nullptr));
      smin = std::min(smin, std::strtod(f[5].c_str(), nullptr));
    }
    const auto s = split(summary[k + 1]);
    EXPECT_EQ(std::strtod(s[1].c_str(), nullptr), fmax);
    EXPECT_EQ(std::strtod(s[2].c_str(), nullptr), emax);
    EXPECT_EQ(std::strtod(s[3].c_str(), nullptr), smin);
    EXPECT_EQ(s[5], "ok");
  }
  EXPECT_LT(rows[0].peak_fidelity, rows[1].peak_fidelity);

  // The Q = 1e4 point is the base config itself.
  TempDir single;
  run_experiment(parse_config(kSmall), single.path());
  EXPECT_EQ(slurp(single.path() / "trajectory.csv"), slurp(tmp.path() / "point_1/trajectory.csv"));
}

TEST(Sweep, FailedPointIsRecorded) {
  TempDir tmp;
  // Fock dim 12 cannot hold alpha = 2.5.
  std::string text = kSmall;
  text.replace(text.find("alpha: 1.0"), 10, "alpha: 2.5");
  const auto cfg = parse_config(text + "sweep: {parameter: system.modes.*.Q, values: [1.0e4, 10.0]}\n");
  const auto rows = sweep_experiment(cfg, tmp.path(), 1);
  EXPECT_NE(rows[0].status, "ok");
  EXPECT_EQ(rows[0].exit_code, 4);
  EXPECT_TRUE(std::isnan(rows[0].peak_fidelity));
}

TEST(Cli, ExitCodes) {
  TempDir tmp;
  const auto good = tmp.write("good.yaml", kSmall);
  const auto r0 = run_cli("run --config " + good.string() + " --out " + (tmp.path() / "o").string());
  EXPECT_EQ(r0.code, 0) << r0.out;

  const auto unknown = tmp.write("unknown.yaml", kSmall + "colour: blue\n");
  const auto r2 = run_cli("run --config " + unknown.string() + " --out " + (tmp.path() / "u").string());
  EXPECT_EQ(r2.code, 2);
  EXPECT_NE(r2.out.find("unknown.yaml:11:1:"), std::string::npos) << r2.out;
  EXPECT_EQ(run_cli("run").code, 2);
  EXPECT_EQ(run_cli("run --config " + good.string()).code, 2);  // no output directory anywhere
  EXPECT_EQ(run_cli("frobnicate").code, 2);

  std::string regime = kSmall;
  regime.replace(regime.find("levels: 3"), 9, "levels: 3, E_J_max_hz: 1.0e9");
  const auto r3 = run_cli("run --config " + tmp.write("regime.yaml", regime).string() + " --out " +
                          (tmp.path() / "r").string());
  EXPECT_EQ(r3.code, 3) << r3.out;

  std::string overflow = kSmall;
  overflow.replace(overflow.find("alpha: 1.0"), 10, "alpha: 2.5");
  const auto r4 = run_cli("run --config " + tmp.write("overflow.yaml", overflow).string() + " --out " +
                          (tmp.path() / "t").string());
  EXPECT_EQ(r4.code, 4) << r4.out;
}

TEST(Cli, VerifyReadout) {
  TempDir tmp;
  const std::string text = R"(system:
  transmon: {levels: 2, T1_s: inf, T2_s: inf}
  modes:
    - {kind: magnon, omega_hz: 1.0e9, g_tilde_hz: 2.0e6, Q: inf, n_th: 0}
    - {kind: magnon, omega_hz: 1.0e9, g_tilde_hz: 2.0e6, Q: inf, n_th: 0}
protocol: {kind: bell, alpha: 4.0}
metrics: [readout]
)";
  const auto p = run_cli("verify-readout --config " + tmp.write("v.yaml", text).string());
  ASSERT_EQ(p.code, 0) << p.out;
  const auto j = nlohmann::json::parse(p.out.substr(p.out.find("{\n")));
  EXPECT_TRUE(j["bell"]["is_bell"].get<bool>());
  EXPECT_NEAR(j["bell"]["c0"].get<double>(), std::sqrt(0.5), 1e-3);
  EXPECT_EQ(j["record"].size(), 9u);
}

TEST(Format, DoublesRoundTrip) {
  for (double v : {0.1, 1.0 / 3, 6.02214076e23, -2.5e-300, 123456789.0}) EXPECT_EQ(std::strtod(format_double(v).c_str(), nullptr), v);
  EXPECT_EQ(format_double(-0.0), "0");
  EXPECT_EQ(format_double(std::nan("")), "nan");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

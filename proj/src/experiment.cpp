#include "ecs/experiment.hpp"

#include <openssl/evp.h>

#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include "json.hpp"

namespace ecs {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Metrics of one post-selected record; failures of the tail (e.g. an outcome with zero
// probability at t = 0) leave NaN.
struct Conditioned {
  double fidelity = kNaN;
  double log_negativity = kNaN;
  double conditional_entropy = kNaN;
};

class TargetCache {
 public:
  TargetCache(const ExperimentConfig& cfg, double total_time)
      : target_(cfg.protocol.target),
        total_(total_time),
        d1_(cfg.system.modes[0].fock_dim),
        d2_(cfg.system.modes[1].fock_dim) {}

  std::optional<StateVector> at(double t) {
    if (!target_) return std::nullopt;
    const TargetConfig& tc = *target_;
    if (tc.running) return make(tc.alpha * std::clamp(t / total_, 0.0, 1.0));
    if (!fixed_) fixed_ = make(tc.alpha);
    return fixed_;
  }

 private:
  StateVector make(Complex alpha) const {
    const TargetConfig& tc = *target_;
    if (tc.swapped) return protocol_target(TargetKind::General, alpha, 1, tc.chi, d1_, d2_);
    return ideal_target(tc.kind, alpha, tc.sign, tc.chi, d1_, d2_);
  }

  std::optional<TargetConfig> target_;
  double total_;
  int d1_, d2_;
  std::optional<StateVector> fixed_;
};

bool tolerable(const Error& e) {
  return e.kind() == ErrorKind::ImpossibleOutcome || e.kind() == ErrorKind::Domain;
}

template <typename State>
Conditioned conditioned(const ExperimentConfig& cfg, const ProtocolSequence& tail, const State& full,
                        TargetCache& targets, double t) {
  Conditioned c;
  try {
    const auto reduced = apply_tail(tail, full);
    const auto& modes = reduced.modes;
    if (cfg.wants("fidelity"))
      if (auto target = targets.at(t)) c.fidelity = fidelity(modes, *target);
    if (cfg.wants("log_negativity")) c.log_negativity = log_negativity(modes);
    if (cfg.wants("conditional_entropy")) c.conditional_entropy = conditional_entropy(modes);
  } catch (const Error& e) {
    if (!tolerable(e)) throw;
  }
  return c;
}

std::vector<double> pure_leakage(const StateVector& psi) {
  const HilbertSpace& space = psi.space();
  std::vector<double> out;
  for (std::size_t slot = 1; slot < space.slots(); ++slot) {
    double p = 0;
    for (Index i = 0; i < space.total(); ++i)
      if (space.level(i, slot) >= space.dim(slot) - 2) p += std::norm(psi.amplitudes()(i));
    out.push_back(p);
  }
  return out;
}

// rho_k of a pure two-mode state.
DensityMatrix reduced_mode(const StateVector& psi, std::size_t mode) {
  const HilbertSpace& s = psi.space();
  const MatrixXc m = psi.amplitudes().reshaped(s.dim(1), s.dim(0));  // m(j, i) = psi(i, j)
  MatrixXc r = mode == 0 ? MatrixXc(m.transpose() * m.conjugate()) : MatrixXc(m * m.adjoint());
  return DensityMatrix::trusted(HilbertSpace{s.dim(mode)}, std::move(r));
}

void note_audit(RunAudit& a, double trace, double herm, double min_eig, const std::vector<double>& leakage) {
  a.max_trace_defect = std::max(a.max_trace_defect, trace);
  a.max_hermiticity_defect = std::max(a.max_hermiticity_defect, herm);
  if (std::isnan(min_eig) || std::isnan(a.min_eigenvalue)) a.min_eigenvalue = kNaN;
  else a.min_eigenvalue = std::min(a.min_eigenvalue, min_eig);
  for (double l : leakage) a.max_leakage = std::max(a.max_leakage, l);
  ++a.records;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ProtocolOptions protocol_options(const ExperimentConfig& cfg, Warnings* warnings) {
  ProtocolOptions po;
  po.evolve.rtol = cfg.solver.rtol;
  po.evolve.atol = cfg.solver.atol;
  po.evolve.fixed_step = cfg.solver.fixed_step;
  po.evolve.max_steps = cfg.solver.max_steps;
  po.evolve.audit_positivity = cfg.solver.audit_positivity;
  po.evolve.leakage_limit = kAuditLeakage;
  po.evolve.max_snapshots = 2;
  po.records = cfg.time_points;
  po.warnings = warnings;
  po.rwa_drop_detuned = cfg.protocol.rwa_drop_detuned;
  return po;
}

}  // namespace

bool RunAudit::passed() const {
  return max_trace_defect <= kAuditTrace && max_hermiticity_defect <= kAuditHermiticity &&
         (std::isnan(min_eigenvalue) || min_eigenvalue >= kAuditPositivity) && max_leakage <= kAuditLeakage;
}

bool uses_state_vector(const SystemSpec& spec) {
  if (std::isfinite(spec.transmon.T1) || std::isfinite(spec.transmon.T2)) return false;
  for (const auto& m : spec.modes)
    if (std::isfinite(m.Q) || m.n_th != 0) return false;
  return true;
}

ExperimentResult simulate(const ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentResult res;
  res.warnings = cfg.warnings;
  const SystemSpec& spec = cfg.system;
  const ProtocolSequence& steps = cfg.protocol.steps;
  const ProtocolSequence tail = trailing_steps(steps);
  TargetCache targets(cfg, total_window_time(steps));
  ProtocolOptions po = protocol_options(cfg, &res.warnings);
  const bool occ = cfg.wants("occupations"), pur = cfg.wants("purity");
  res.state_vector_path = uses_state_vector(spec);

  if (res.state_vector_path) {
    po.pure_observer = [&](double t, std::size_t, const StateVector& psi) {
      const auto leak = pure_leakage(psi);
      for (std::size_t k = 0; k < leak.size(); ++k)
        if (leak[k] > kAuditLeakage)
          throw Error(ErrorKind::TruncationOverflow, "mode " + std::to_string(k + 1) +
                                                         " top Fock levels hold " + std::to_string(leak[k]) +
                                                         "; raise fock_dim");
      const Conditioned c = conditioned(cfg, tail, psi, targets, t);
      res.rows.push_back({t, occ ? occupation(psi, 1) : kNaN, occ ? occupation(psi, 2) : kNaN, c.fidelity,
                          c.log_negativity, c.conditional_entropy, pur ? 1.0 : kNaN, 0});
      note_audit(res.audit, 0, 0, 0, leak);
    };
    VectorXc psi0 = VectorXc::Zero(spec.space().total());
    psi0(0) = 1;
    const PureProtocolResult r = run_protocol(steps, spec, StateVector(spec.space(), psi0), po);
    for (std::size_t k = 0; k < res.rows.size() && k < r.norm_defects.size(); ++k) {
      res.rows[k].trace_defect = r.norm_defects[k];
      if (pur) res.rows[k].purity = std::pow(1 + r.norm_defects[k], 2);
      res.audit.max_trace_defect = std::max(res.audit.max_trace_defect, r.norm_defects[k]);
    }
    res.stats = r.stats;
    res.audit.projection_probability = r.projection_probability;
    res.audit.selected_outcome = r.selected_outcome;
    res.sigma_x = r.sigma_x;
    res.final_modes_pure = r.final_two_mode_state;
  } else {
    if (spec.space().total() > kDenseCap)
      throw Error(ErrorKind::InvalidDimension, "density-matrix run refused for " + spec.space().describe() +
                                                   "; lower fock_dim");
    po.observer = [&](double t, std::size_t, const DensityMatrix& rho) {
      const Conditioned c = conditioned(cfg, tail, rho, targets, t);
      res.rows.push_back({t, occ ? occupation(rho, 1) : kNaN, occ ? occupation(rho, 2) : kNaN, c.fidelity,
                          c.log_negativity, c.conditional_entropy, pur ? purity(rho.matrix()) : kNaN,
                          trace_defect(rho.matrix())});
    };
    const ProtocolResult r = run_protocol(steps, spec, initial_state(spec), po);
    for (const auto& rec : r.trajectory.records)
      note_audit(res.audit, rec.trace_defect, rec.hermiticity_defect, rec.min_eigenvalue, rec.leakage);
    res.stats = r.trajectory.stats;
    res.audit.projection_probability = r.projection_probability;
    res.audit.selected_outcome = r.selected_outcome;
    res.sigma_x = r.sigma_x;
    res.final_modes = r.final_two_mode_state;
  }
  if (res.rows.size() != cfg.time_points)
    throw Error(ErrorKind::Sequencing, "recorded " + std::to_string(res.rows.size()) + " rows for a grid of " +
                                           std::to_string(cfg.time_points));
  if (!res.audit.passed()) warn(&res.warnings, "state audit exceeded a threshold; see manifest audit block");

  if (cfg.wigner) {
    for (std::size_t mode : cfg.wigner->modes) {
      const DensityMatrix rho = res.final_modes ? partial_trace(*res.final_modes, {mode - 1})
                                                : reduced_mode(*res.final_modes_pure, mode - 1);
      Warnings w;
      res.wigner.emplace_back(mode, wigner(rho, cfg.wigner->grid, &w));
      for (auto& msg : w) res.warnings.push_back("wigner mode " + std::to_string(mode) + ": " + msg);
    }
  }
  if (cfg.readout) {
    ReadoutRecord rec = res.final_modes ? measure_record(*res.final_modes, cfg.protocol.alpha, cfg.readout->phi)
                                        : measure_record(*res.final_modes_pure, cfg.protocol.alpha, cfg.readout->phi);
    if (cfg.readout->shots > 0) rec = sample_shots(rec, cfg.readout->shots, cfg.seed);
    res.readout = std::move(rec);
  }
  res.wall_seconds = seconds_since(start);
  return res;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0) return "0";  // no "-0"
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, r.ptr);
}

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

namespace {

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

std::string join(std::initializer_list<std::string> cells) {
  std::string s;
  for (const auto& c : cells) {
    if (!s.empty()) s += ',';
    s += c;
  }
  return s + '\n';
}

// JSON cannot hold NaN or infinities; those become strings.
json number(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

json describe_config(const ExperimentConfig& cfg) {
  const SystemSpec& s = cfg.system;
  json modes = json::array();
  for (const auto& m : s.modes)
    modes.push_back({{"kind", m.kind == ModeKind::Magnon ? "magnon" : "phonon"},
                     {"omega_rad_per_s", m.omega},
                     {"g_tilde_rad_per_s", m.g_tilde},
                     {"Q", number(m.Q)},
                     {"n_th", m.n_th},
                     {"fock_dim", m.fock_dim}});
  json steps = json::array();
  for (const auto& step : cfg.protocol.steps) steps.push_back(describe(step));
  json j = {
      {"system",
       {{"transmon",
         {{"E_C_hz", s.transmon.E_C},
          {"E_J_max_hz", s.transmon.E_J_max},
          {"phi_b", s.transmon.phi_b},
          {"asymmetry", s.transmon.asymmetry},
          {"levels", s.transmon.levels},
          {"T1_s", number(s.transmon.T1)},
          {"T2_s", number(s.transmon.T2)}}},
        {"temperature_K", s.temperature},
        {"modes", modes}}},
      {"protocol",
       {{"alpha", {cfg.protocol.alpha.real(), cfg.protocol.alpha.imag()}},
        {"chi", cfg.protocol.chi},
        {"outcome", cfg.protocol.outcome},
        {"rwa_drop_detuned", cfg.protocol.rwa_drop_detuned},
        {"steps", steps}}},
      {"metrics", cfg.metrics},
      {"time_grid", {{"points", cfg.time_points}}},
      {"solver",
       {{"rtol", cfg.solver.rtol},
        {"atol", cfg.solver.atol},
        {"fixed_step_s", cfg.solver.fixed_step},
        {"max_steps", cfg.solver.max_steps},
        {"audit_positivity", cfg.solver.audit_positivity}}},
      {"seed", cfg.seed},
  };
  if (cfg.wigner) {
    const auto& g = cfg.wigner->grid;
    j["wigner"] = {{"modes", cfg.wigner->modes},
                   {"re", {g.re_min, g.re_max}},
                   {"im", {g.im_min, g.im_max}},
                   {"resolution", g.resolution}};
  }
  if (cfg.readout)
    j["readout"] = {{"phi", cfg.readout->phi}, {"shots", cfg.readout->shots}, {"tol", cfg.readout->tol}};
  return j;
}

}  // namespace

void write_outputs(const ExperimentConfig& cfg, const ExperimentResult& res, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<std::string> files;

  std::string csv = std::string(kTrajectoryHeader) + '\n';
  for (const auto& r : res.rows)
    csv += join({format_double(r.time_s), format_double(r.n_mode1), format_double(r.n_mode2),
                 format_double(r.fidelity), format_double(r.log_negativity_bits),
                 format_double(r.conditional_entropy_nats), format_double(r.purity), format_double(r.trace_defect)});
  write_file(dir / "trajectory.csv", csv);
  files.push_back("trajectory.csv");

  for (const auto& [mode, grid] : res.wigner) {
    std::string w = "re,im,value\n";
    for (Index i = 0; i < grid.im.size(); ++i)
      for (Index j = 0; j < grid.re.size(); ++j)
        w += join({format_double(grid.re(j)), format_double(grid.im(i)), format_double(grid.values(i, j))});
    const std::string name = "wigner_mode" + std::to_string(mode) + ".csv";
    write_file(dir / name, w);
    files.push_back(name);
  }

  if (res.readout) {
    std::string r = "setting,beta_i,beta_j,phi,sigma_x\n";
    for (const auto& [setting, value] : res.readout->values)
      r += join({setting.label(), std::to_string(setting.beta_i), std::to_string(setting.beta_j),
                 format_double(setting.phi), format_double(value)});
    write_file(dir / "readout.csv", r);
    files.push_back("readout.csv");
  }

  const RunAudit& a = res.audit;
  json manifest = {
      {"tool", "ecs"},
      {"tool_version", kToolVersion},
      {"csv_schema_version", kCsvSchemaVersion},
      {"constants_table_version", constants::kTableVersion},
      {"config_sha256", sha256_hex(cfg.source)},
      {"wall_time_s", res.wall_seconds},
      {"path", res.state_vector_path ? "state-vector" : "density-matrix"},
      {"solver",
       {{"method", cfg.solver.fixed_step > 0 ? "rk4-fixed" : "dopri5-adaptive"},
        {"rhs_evaluations", res.stats.rhs_evaluations},
        {"accepted_steps", res.stats.accepted_steps},
        {"rejected_steps", res.stats.rejected_steps},
        {"error_estimate", res.stats.error_estimate}}},
      {"audit",
       {{"records", a.records},
        {"max_trace_defect", a.max_trace_defect},
        {"max_hermiticity_defect", a.max_hermiticity_defect},
        {"min_eigenvalue_bound", number(a.min_eigenvalue)},
        {"max_truncation_leakage", a.max_leakage},
        {"projection_probability", a.projection_probability},
        {"selected_outcome", a.selected_outcome},
        {"thresholds",
         {{"trace", kAuditTrace},
          {"hermiticity", kAuditHermiticity},
          {"positivity", kAuditPositivity},
          {"leakage", kAuditLeakage}}},
        {"passed", a.passed()}}},
      {"warnings", res.warnings},
      {"outputs", files},
      {"resolved_config", describe_config(cfg)},
  };
  if (!res.sigma_x.empty()) {
    json sx = json::object();
    for (const auto& [label, v] : res.sigma_x) sx[label] = v;
    manifest["sigma_x"] = sx;
  }
  write_file(dir / "manifest.json", manifest.dump(2) + '\n');
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const fs::path& dir) {
  ExperimentResult res = simulate(cfg);
  write_outputs(cfg, res, dir);
  return res;
}

SummaryRow summarize(double value, const std::vector<TrajectoryRow>& rows) {
  SummaryRow s{value, kNaN, kNaN, kNaN, kNaN, "ok", 0};
  for (const auto& r : rows) {
    if (!std::isnan(r.fidelity) && (std::isnan(s.peak_fidelity) || r.fidelity > s.peak_fidelity)) {
      s.peak_fidelity = r.fidelity;
      s.time_of_peak_fidelity_s = r.time_s;
    }
    if (!std::isnan(r.log_negativity_bits) &&
        (std::isnan(s.peak_log_negativity_bits) || r.log_negativity_bits > s.peak_log_negativity_bits))
      s.peak_log_negativity_bits = r.log_negativity_bits;
    if (!std::isnan(r.conditional_entropy_nats) &&
        (std::isnan(s.min_conditional_entropy_nats) || r.conditional_entropy_nats < s.min_conditional_entropy_nats))
      s.min_conditional_entropy_nats = r.conditional_entropy_nats;
  }
  return s;
}

std::vector<SummaryRow> sweep_experiment(const ExperimentConfig& cfg, const fs::path& dir, unsigned max_threads) {
  const auto points = sweep_points(cfg);
  fs::create_directories(dir);
  std::vector<SummaryRow> rows(points.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next++) < points.size();) {
      const SweepPoint& p = points[k];
      try {
        const ExperimentConfig pc = parse_config(p.source);
        const fs::path sub = dir / ("point_" + std::to_string(k));
        fs::create_directories(sub);
        write_file(sub / "config.yaml", p.source);
        rows[k] = summarize(p.value, run_experiment(pc, sub).rows);
      } catch (const Error& e) {
        rows[k] = {p.value, kNaN, kNaN, kNaN, kNaN, "error: " + std::string(e.what()), exit_code(e.kind())};
      } catch (const std::exception& e) {
        rows[k] = {p.value, kNaN, kNaN, kNaN, kNaN, "error: " + std::string(e.what()), 1};
      }
    }
  };
  unsigned n = max_threads ? max_threads : std::max(1u, std::thread::hardware_concurrency());
  n = unsigned(std::min<std::size_t>(n, points.size()));
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::string csv = std::string(kSummaryHeader) + '\n';
  for (const auto& r : rows) {
    std::string status = r.status;
    for (char& c : status)
      if (c == ',' || c == '\n' || c == '"') c = ';';
    csv += join({format_double(r.sweep_value), format_double(r.peak_fidelity),
                 format_double(r.peak_log_negativity_bits), format_double(r.min_conditional_entropy_nats),
                 format_double(r.time_of_peak_fidelity_s), status});
  }
  write_file(dir / "summary.csv", csv);
  return rows;
}

ReadoutReport verify_readout(const ExperimentConfig& config) {
  ExperimentConfig cfg = config;
  ReadoutConfig rc = cfg.readout.value_or(ReadoutConfig{});
  ReadoutReport report;
  if (std::abs(rc.phi - std::numbers::pi / 4) > 1e-15)
    warn(&report.warnings, "readout.phi replaced by pi/4, the phase the reconstruction assumes");
  rc.phi = std::numbers::pi / 4;
  cfg.readout = rc;
  cfg.wigner.reset();
  cfg.metrics = {"readout"};
  cfg.time_points = 2;
  ExperimentResult res = simulate(cfg);
  report.record = *res.readout;
  report.reconstruction = reconstruct(report.record);
  report.verdict = verify_bell(report.record, rc.tol);
  report.tol = rc.tol;
  report.warnings.insert(report.warnings.end(), res.warnings.begin(), res.warnings.end());
  return report;
}

}  // namespace ecs

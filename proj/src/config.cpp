#include "ecs/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace ecs {

namespace {

constexpr double kTwoPi = 2 * std::numbers::pi;

[[noreturn]] void fail(const std::string& what, const YAML::Mark& mark) {
  if (mark.is_null()) throw ConfigError(what);
  throw ConfigError(what, mark.line + 1, mark.column + 1);
}

double number(const YAML::Node& n, const std::string& path) {
  if (!n.IsScalar()) fail(path + ": expected a number", n.Mark());
  const std::string& s = n.Scalar();
  if (s == "inf" || s == "+inf" || s == "Infinity") return std::numeric_limits<double>::infinity();
  try {
    return n.as<double>();
  } catch (const YAML::BadConversion&) {
    fail(path + ": expected a number, got '" + s + "'", n.Mark());
  }
}

long long integer(const YAML::Node& n, const std::string& path) {
  if (!n.IsScalar()) fail(path + ": expected an integer", n.Mark());
  try {
    return n.as<long long>();
  } catch (const YAML::BadConversion&) {
    fail(path + ": expected an integer, got '" + n.Scalar() + "'", n.Mark());
  }
}

bool boolean(const YAML::Node& n, const std::string& path) {
  if (!n.IsScalar()) fail(path + ": expected true or false", n.Mark());
  try {
    return n.as<bool>();
  } catch (const YAML::BadConversion&) {
    fail(path + ": expected true or false, got '" + n.Scalar() + "'", n.Mark());
  }
}

std::string text(const YAML::Node& n, const std::string& path) {
  if (!n.IsScalar()) fail(path + ": expected a string", n.Mark());
  return n.Scalar();
}

// A number, or [re, im].
Complex complex_value(const YAML::Node& n, const std::string& path) {
  if (n.IsSequence()) {
    if (n.size() != 2) fail(path + ": expected [re, im]", n.Mark());
    return {number(n[0], path + "[0]"), number(n[1], path + "[1]")};
  }
  return {number(n, path), 0};
}

std::pair<double, double> range(const YAML::Node& n, const std::string& path) {
  if (!n.IsSequence() || n.size() != 2) fail(path + ": expected [min, max]", n.Mark());
  return {number(n[0], path + "[0]"), number(n[1], path + "[1]")};
}

// Map reader that remembers which keys were consumed and rejects the rest.
class Section {
 public:
  Section(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    map_ = node_ && node_.IsMap();
    if (node_ && !node_.IsNull() && !map_) fail(path_ + ": expected a mapping", node_.Mark());
  }

  YAML::Node take(const std::string& key) {
    used_.insert(key);
    if (!map_) return YAML::Node(YAML::NodeType::Undefined);
    const YAML::Node& c = node_;
    return c[key];
  }

  YAML::Node need(const std::string& key) {
    YAML::Node n = take(key);
    if (!n) fail(path_.empty() ? "missing required key '" + key + "'"
                               : path_ + ": missing required key '" + key + "'",
                 mark());
    return n;
  }

  double num(const std::string& key, double fallback) {
    YAML::Node n = take(key);
    return n ? number(n, at(key)) : fallback;
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    if (!map_) return;
    for (const auto& kv : node_) {
      const std::string key = kv.first.Scalar();
      if (!used_.count(key)) fail("unknown key '" + at(key) + "'", kv.first.Mark());
    }
  }

  YAML::Mark mark() const { return node_ ? node_.Mark() : YAML::Mark::null_mark(); }

 private:
  YAML::Node node_;
  std::string path_;
  bool map_ = false;
  std::set<std::string> used_;
};

TransmonSpec parse_transmon(const YAML::Node& node) {
  Section s(node, "system.transmon");
  TransmonSpec t;
  t.E_C = s.num("E_C_hz", t.E_C);
  t.E_J_max = s.num("E_J_max_hz", t.E_J_max);
  t.phi_b = s.num("phi_b", t.phi_b);
  t.asymmetry = s.num("asymmetry", t.asymmetry);
  if (auto n = s.take("levels")) t.levels = int(integer(n, s.at("levels")));
  t.T1 = s.num("T1_s", t.T1);
  t.T2 = s.num("T2_s", t.T2);
  s.finish();
  return t;
}

Geometry parse_geometry(const YAML::Node& node, const std::string& path) {
  Section s(node, path);
  const std::string type = text(s.need("type"), s.at("type"));
  Geometry g;
  if (type == "magnet") {
    MagnetGeometry m;
    m.d = s.num("d_m", 0);
    m.mu_zpf = s.num("mu_zpf_J_per_T", 0);
    m.B_z = s.num("B_z_T", 0);
    m.B_ani = s.num("B_ani_T", 0);
    m.M_s = s.num("M_s_A_per_m", 0);
    if (auto n = s.take("l")) m.l = int(integer(n, s.at("l")));
    g = m;
  } else if (type == "beam") {
    BeamGeometry b;
    b.length = s.num("length_m", 0);
    b.beta0 = s.num("beta0", 0);
    b.B_z = s.num("B_z_T", 0);
    b.x_zpf = s.num("x_zpf_m", 0);
    b.mass = s.num("mass_kg", 0);
    g = b;
  } else {
    fail(s.at("type") + ": expected magnet or beam, got '" + type + "'", s.mark());
  }
  s.finish();
  validate(g);
  return g;
}

// Fock dimensions may be "auto"; those are resolved once alpha is known.
struct PendingMode {
  ModeSpec spec;
  bool auto_dim = false;
  bool bath_n_th = false;
};

PendingMode parse_mode(const YAML::Node& node, const std::string& path, const TransmonSpec& transmon) {
  Section s(node, path);
  PendingMode p;
  ModeSpec& m = p.spec;
  const std::string kind = text(s.need("kind"), s.at("kind"));
  if (kind == "magnon") m.kind = ModeKind::Magnon;
  else if (kind == "phonon") m.kind = ModeKind::Phonon;
  else fail(s.at("kind") + ": expected magnon or phonon, got '" + kind + "'", s.mark());

  std::optional<Geometry> geometry;
  if (auto n = s.take("geometry")) geometry = parse_geometry(n, s.at("geometry"));
  if (auto n = s.take("omega_hz")) m.omega = kTwoPi * number(n, s.at("omega_hz"));
  else if (geometry) m.omega = mode_frequency(*geometry);
  else fail(path + ": give omega_hz or a geometry", s.mark());
  if (auto n = s.take("g_tilde_hz")) m.g_tilde = kTwoPi * number(n, s.at("g_tilde_hz"));
  else if (geometry) m.g_tilde = coupling_strengths(transmon, flux_zpf(*geometry)).g_tilde;
  else fail(path + ": give g_tilde_hz or a geometry", s.mark());

  m.Q = number(s.need("Q"), s.at("Q"));
  if (auto n = s.take("n_th"); n && !(n.IsScalar() && n.Scalar() == "bath")) m.n_th = number(n, s.at("n_th"));
  else p.bath_n_th = true;
  if (auto n = s.take("fock_dim"); n && !(n.IsScalar() && n.Scalar() == "auto")) {
    m.fock_dim = int(integer(n, s.at("fock_dim")));
  } else {
    p.auto_dim = true;
  }
  s.finish();
  return p;
}

Axis parse_axis(const YAML::Node& n, const std::string& path) {
  const std::string a = text(n, path);
  if (a == "x") return Axis::X;
  if (a == "y") return Axis::Y;
  if (a == "z") return Axis::Z;
  fail(path + ": expected x, y or z", n.Mark());
}

std::size_t mode_index(const YAML::Node& n, const std::string& path, const SystemSpec& spec) {
  const long long k = integer(n, path);
  if (k < 1 || std::size_t(k) > spec.modes.size())
    fail(path + ": mode must be between 1 and " + std::to_string(spec.modes.size()), n.Mark());
  return std::size_t(k - 1);
}

ProtocolStep parse_step(const YAML::Node& node, const std::string& path, const SystemSpec& spec) {
  if (!node.IsMap() || node.size() != 1) fail(path + ": each step is a mapping with a single key", node.Mark());
  const std::string kind = node.begin()->first.Scalar();
  const YAML::Node body = node.begin()->second;
  Section s(body, path + "." + kind);
  ProtocolStep step;
  if (kind == "prepare") {
    step = PrepareSuperposition{s.num("chi", 0)};
  } else if (kind == "pulse") {
    QubitPulse p;
    p.axis = parse_axis(s.need("axis"), s.at("axis"));
    p.angle = number(s.need("angle"), s.at("angle"));
    step = p;
  } else if (kind == "window") {
    InteractionWindow w;
    if (auto n = s.take("mode")) {
      const std::size_t k = mode_index(n, s.at("mode"), spec);
      const Complex alpha = complex_value(s.need("alpha"), s.at("alpha"));
      const ModeSpec& m = spec.modes[k];
      w.omega_ac = m.omega;
      w.tau = std::abs(alpha) / m.g_tilde;
      w.theta = std::numbers::pi / 2 - std::arg(alpha);
    } else {
      w.omega_ac = kTwoPi * number(s.need("omega_hz"), s.at("omega_hz"));
      w.tau = number(s.need("tau_s"), s.at("tau_s"));
      w.theta = s.num("theta", w.theta);
    }
    step = w;
  } else if (kind == "project") {
    int level = 0;
    if (auto n = s.take("level")) level = int(integer(n, s.at("level")));
    if (level < 0 || level >= spec.transmon.levels) fail(s.at("level") + ": no such transmon level", body.Mark());
    ProjectQubit p = ProjectQubit::level(level, spec.transmon.levels);
    if (auto n = s.take("label")) p.label = text(n, s.at("label"));
    step = p;
  } else if (kind == "displace") {
    ConditionalDisplace d;
    d.mode = mode_index(s.need("mode"), s.at("mode"), spec);
    d.beta = complex_value(s.need("beta"), s.at("beta"));
    step = d;
  } else if (kind == "measure_sigma_x") {
    MeasureSigmaX m;
    if (auto n = s.take("label")) m.label = text(n, s.at("label"));
    step = m;
  } else {
    fail(path + ": unknown step '" + kind + "'", node.Mark());
  }
  s.finish();
  return step;
}

TargetKind parse_target_kind(const YAML::Node& n, const std::string& path) {
  const std::string k = text(n, path);
  if (k == "bell") return TargetKind::Bell;
  if (k == "noon") return TargetKind::Noon;
  if (k == "general") return TargetKind::General;
  fail(path + ": expected bell, noon or general", n.Mark());
}

std::vector<std::string> split_path(const std::string& p) {
  std::vector<std::string> parts;
  std::stringstream ss(p);
  for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
  return parts;
}

// Writes `value` at the path; '*' visits every element of a list. Returns the number of
// assignments made.
int assign(YAML::Node node, const std::vector<std::string>& parts, std::size_t i, const std::string& value) {
  const std::string& part = parts[i];
  const bool last = i + 1 == parts.size();
  if (part == "*") {
    if (!node.IsSequence()) return 0;
    int n = 0;
    for (std::size_t k = 0; k < node.size(); ++k) {
      YAML::Node child = node[k];
      n += last ? (child = value, 1) : assign(child, parts, i + 1, value);
    }
    return n;
  }
  if (node.IsSequence()) {
    std::size_t k = 0;
    try {
      k = std::stoul(part);
    } catch (const std::exception&) {
      return 0;
    }
    if (k >= node.size()) return 0;
    YAML::Node child = node[k];
    if (last) {
      child = value;
      return 1;
    }
    return assign(child, parts, i + 1, value);
  }
  if (!node.IsMap()) return 0;
  if (last) {
    node[part] = value;
    return 1;
  }
  YAML::Node child = node[part];
  if (!child) return 0;
  return assign(child, parts, i + 1, value);
}

std::string format_value(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

YAML::Node load_document(const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(source);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("parse error: " + e.msg, e.mark.line + 1, e.mark.column + 1);
  }
  if (!root || root.IsNull()) throw ConfigError("configuration is empty", 1, 1);
  if (!root.IsMap()) fail("configuration must be a mapping at the top level", root.Mark());
  return root;
}

}  // namespace

bool ExperimentConfig::wants(const std::string& metric) const {
  return std::find(metrics.begin(), metrics.end(), metric) != metrics.end();
}

ExperimentConfig parse_config(const std::string& source) {
  const YAML::Node root = load_document(source);
  ExperimentConfig cfg;
  cfg.source = source;
  Section top(root, "");

  // system
  Section sys(top.need("system"), "system");
  cfg.system.transmon = parse_transmon(sys.take("transmon"));
  cfg.system.temperature = sys.num("temperature_K", 0);
  std::vector<PendingMode> pending;
  const YAML::Node modes = sys.need("modes");
  if (!modes.IsSequence()) fail("system.modes: expected a list", modes.Mark());
  for (std::size_t k = 0; k < modes.size(); ++k)
    pending.push_back(parse_mode(modes[k], "system.modes." + std::to_string(k), cfg.system.transmon));
  sys.finish();
  if (pending.size() != 2) fail("system.modes: experiments need exactly two modes", modes.Mark());

  // protocol
  Section prot(top.need("protocol"), "protocol");
  ProtocolConfig& pc = cfg.protocol;
  const YAML::Node kind_node = prot.need("kind");
  const std::string kind = text(kind_node, "protocol.kind");
  if (kind == "bell") pc.kind = ProtocolKind::Bell;
  else if (kind == "noon") pc.kind = ProtocolKind::Noon;
  else if (kind == "general_ecs") pc.kind = ProtocolKind::GeneralEcs;
  else if (kind == "custom") pc.kind = ProtocolKind::Custom;
  else fail("protocol.kind: expected bell, noon, general_ecs or custom, got '" + kind + "'", kind_node.Mark());
  const bool custom = pc.kind == ProtocolKind::Custom;
  if (auto n = prot.take("alpha")) pc.alpha = complex_value(n, "protocol.alpha");
  else if (!custom) fail("protocol: missing required key 'alpha'", prot.mark());
  pc.chi = prot.num("chi", 0);
  if (auto n = prot.take("outcome")) {
    pc.outcome = int(integer(n, "protocol.outcome"));
    if (pc.outcome != 0 && pc.outcome != 1) fail("protocol.outcome: expected 0 or 1", n.Mark());
  }
  if (auto n = prot.take("rwa_drop_detuned")) pc.rwa_drop_detuned = boolean(n, "protocol.rwa_drop_detuned");
  YAML::Node steps_node = prot.take("steps");
  YAML::Node target_node = prot.take("target");
  if (!custom && steps_node) fail("protocol.steps: only custom protocols take explicit steps", steps_node.Mark());
  if (!custom && target_node) fail("protocol.target: only custom protocols take an explicit target", target_node.Mark());
  if (custom && !steps_node) fail("protocol: custom protocols need 'steps'", prot.mark());
  prot.finish();

  // Resolve the pending mode fields now that alpha is known.
  double alpha_max = std::abs(pc.alpha);
  for (auto& p : pending) {
    if (p.auto_dim) {
      if (custom && alpha_max == 0) fail("system.modes: fock_dim 'auto' needs protocol.alpha", modes.Mark());
      p.spec.fock_dim = truncation_rule(alpha_max);
    }
    if (p.bath_n_th) p.spec.n_th = thermal_occupation(p.spec.omega, cfg.system.temperature);
    cfg.system.modes.push_back(p.spec);
  }
  validate(cfg.system, &cfg.warnings);

  switch (pc.kind) {
    case ProtocolKind::Bell:
      pc.steps = bell_sequence(cfg.system, pc.alpha, pc.chi, pc.outcome);
      pc.target = TargetConfig{TargetKind::Bell, pc.alpha, pc.outcome ? -1 : 1, pc.chi, true, false};
      break;
    case ProtocolKind::Noon:
      pc.steps = noon_sequence(cfg.system, pc.alpha, pc.chi, pc.outcome);
      pc.target = TargetConfig{TargetKind::Noon, pc.alpha, pc.outcome ? -1 : 1, pc.chi, false, false};
      break;
    case ProtocolKind::GeneralEcs:
      pc.steps = general_ecs_sequence(cfg.system, pc.alpha, pc.outcome);
      pc.target = TargetConfig{TargetKind::General, pc.alpha, pc.outcome ? -1 : 1, 0, false, pc.outcome == 1};
      break;
    case ProtocolKind::Custom: {
      if (!steps_node.IsSequence()) fail("protocol.steps: expected a list", steps_node.Mark());
      for (std::size_t k = 0; k < steps_node.size(); ++k)
        pc.steps.push_back(parse_step(steps_node[k], "protocol.steps." + std::to_string(k), cfg.system));
      if (target_node) {
        Section t(target_node, "protocol.target");
        TargetConfig tc;
        tc.kind = parse_target_kind(t.need("kind"), "protocol.target.kind");
        tc.alpha = complex_value(t.need("alpha"), "protocol.target.alpha");
        if (auto n = t.take("sign")) {
          tc.sign = int(integer(n, "protocol.target.sign"));
          if (tc.sign != 1 && tc.sign != -1) fail("protocol.target.sign: expected 1 or -1", n.Mark());
        }
        tc.chi = t.num("chi", 0);
        t.finish();
        pc.target = tc;
      }
      break;
    }
  }
  validate(pc.steps, cfg.system, &cfg.warnings, pc.rwa_drop_detuned);
  if (!(total_window_time(pc.steps) > 0)) fail("protocol: needs at least one interaction window", prot.mark());

  // time grid
  if (auto n = top.take("time_grid")) {
    Section tg(n, "time_grid");
    if (auto p = tg.take("points")) {
      const long long v = integer(p, "time_grid.points");
      if (v < 2) fail("time_grid.points: need at least 2", p.Mark());
      cfg.time_points = std::size_t(v);
    }
    tg.finish();
  }

  // metrics
  static const std::set<std::string> known = {"occupations", "fidelity", "log_negativity", "conditional_entropy",
                                              "purity", "wigner", "readout"};
  if (auto n = top.take("metrics")) {
    if (!n.IsSequence()) fail("metrics: expected a list", n.Mark());
    cfg.metrics.clear();
    for (std::size_t k = 0; k < n.size(); ++k) {
      const std::string m = text(n[k], "metrics");
      if (!known.count(m)) fail("metrics: unknown metric '" + m + "'", n[k].Mark());
      cfg.metrics.push_back(m);
    }
  }
  const bool fidelity_without_target = cfg.wants("fidelity") && !pc.target;
  if (fidelity_without_target) warn(&cfg.warnings, "fidelity requested without a target; the column is left as nan");

  // wigner
  YAML::Node wn = top.take("wigner");
  if (wn && !cfg.wants("wigner")) fail("wigner: settings given but 'wigner' is not in metrics", wn.Mark());
  if (cfg.wants("wigner")) {
    Section w(wn, "wigner");
    WignerConfig wc;
    const Complex a = pc.alpha;
    wc.grid.re_min = std::min(0.0, a.real()) - 3;
    wc.grid.re_max = std::max(0.0, a.real()) + 3;
    wc.grid.im_min = std::min(0.0, a.imag()) - 3;
    wc.grid.im_max = std::max(0.0, a.imag()) + 3;
    if (auto n = w.take("modes")) {
      if (!n.IsSequence()) fail("wigner.modes: expected a list", n.Mark());
      for (std::size_t k = 0; k < n.size(); ++k) wc.modes.push_back(mode_index(n[k], "wigner.modes", cfg.system) + 1);
    } else {
      wc.modes = {1, 2};
    }
    if (auto n = w.take("re")) std::tie(wc.grid.re_min, wc.grid.re_max) = range(n, "wigner.re");
    if (auto n = w.take("im")) std::tie(wc.grid.im_min, wc.grid.im_max) = range(n, "wigner.im");
    if (auto n = w.take("resolution")) {
      const long long r = integer(n, "wigner.resolution");
      if (r < 2 || r > 1001) fail("wigner.resolution: expected 2..1001", n.Mark());
      wc.grid.resolution = int(r);
    }
    w.finish();
    if (!(wc.grid.re_max > wc.grid.re_min) || !(wc.grid.im_max > wc.grid.im_min))
      fail("wigner: ranges must be increasing", wn ? wn.Mark() : YAML::Mark::null_mark());
    cfg.wigner = wc;
  }

  // readout
  YAML::Node rn = top.take("readout");
  if (rn && !cfg.wants("readout")) fail("readout: settings given but 'readout' is not in metrics", rn.Mark());
  if (cfg.wants("readout")) {
    Section r(rn, "readout");
    ReadoutConfig rc;
    rc.phi = r.num("phi", rc.phi);
    if (auto n = r.take("shots")) {
      const long long v = integer(n, "readout.shots");
      if (v < 0) fail("readout.shots: must be non-negative", n.Mark());
      rc.shots = std::uint64_t(v);
    }
    rc.tol = r.num("tol", rc.tol);
    r.finish();
    if (std::abs(pc.alpha) == 0) fail("readout: needs a nonzero protocol.alpha", rn ? rn.Mark() : YAML::Mark::null_mark());
    cfg.readout = rc;
  }

  // solver
  if (auto n = top.take("solver")) {
    Section s(n, "solver");
    SolverConfig& sc = cfg.solver;
    sc.rtol = s.num("rtol", sc.rtol);
    sc.atol = s.num("atol", sc.atol);
    sc.fixed_step = s.num("fixed_step_s", sc.fixed_step);
    if (auto m = s.take("max_steps")) {
      const long long v = integer(m, "solver.max_steps");
      if (v < 1) fail("solver.max_steps: must be positive", m.Mark());
      sc.max_steps = std::size_t(v);
    }
    if (auto m = s.take("audit_positivity")) sc.audit_positivity = boolean(m, "solver.audit_positivity");
    s.finish();
    if (!(sc.rtol > 0) || !(sc.atol > 0)) fail("solver: tolerances must be positive", n.Mark());
    if (!(sc.fixed_step >= 0)) fail("solver.fixed_step_s: must be non-negative", n.Mark());
  }

  // sweep
  if (auto n = top.take("sweep")) {
    Section s(n, "sweep");
    SweepConfig sw;
    sw.parameter = text(s.need("parameter"), "sweep.parameter");
    const YAML::Node values = s.need("values");
    if (!values.IsSequence() || values.size() == 0) fail("sweep.values: expected a non-empty list", values.Mark());
    for (std::size_t k = 0; k < values.size(); ++k) sw.values.push_back(number(values[k], "sweep.values"));
    s.finish();
    YAML::Node probe = YAML::Clone(root);
    if (split_path(sw.parameter).empty() || assign(probe, split_path(sw.parameter), 0, "0") == 0)
      fail("sweep.parameter: '" + sw.parameter + "' does not name a value in this configuration", n.Mark());
    cfg.sweep = sw;
  }

  if (auto n = top.take("seed")) {
    const long long v = integer(n, "seed");
    if (v < 0) fail("seed: must be non-negative", n.Mark());
    cfg.seed = std::uint64_t(v);
  }
  if (auto n = top.take("output")) cfg.output = text(n, "output");
  top.take("name");
  top.finish();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open configuration file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::vector<SweepPoint> sweep_points(const ExperimentConfig& config) {
  if (!config.sweep) throw ConfigError("configuration has no sweep block");
  std::vector<SweepPoint> out;
  const auto parts = split_path(config.sweep->parameter);
  for (double v : config.sweep->values) {
    YAML::Node doc = YAML::Clone(load_document(config.source));
    doc.remove("sweep");
    assign(doc, parts, 0, format_value(v));
    YAML::Emitter em;
    em << doc;
    out.push_back({v, std::string(em.c_str()) + "\n"});
  }
  return out;
}

}  // namespace ecs

#include "ecs/protocols.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "ecs/readout.hpp"

namespace ecs {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr Complex kI(0, 1);

template <class... F>
struct Overloaded : F... {
  using F::operator()...;
};
template <class... F>
Overloaded(F...) -> Overloaded<F...>;

MatrixXc lift_qubit(const MatrixXc& u2, int levels) {
  MatrixXc u = MatrixXc::Identity(levels, levels);
  u.topLeftCorner(2, 2) = u2;
  return u;
}

VectorXc pad_state(const VectorXc& s, int levels) {
  if (s.size() != 2 && s.size() != levels)
    throw Error(ErrorKind::InvalidDimension, "projection state must have 2 or " + std::to_string(levels) + " entries");
  if (std::abs(s.norm() - 1) > 1e-10) throw Error(ErrorKind::Domain, "projection state must be normalized");
  VectorXc out = VectorXc::Zero(levels);
  out.head(s.size()) = s;
  return out;
}

std::vector<std::size_t> mode_slots(const HilbertSpace& space) {
  std::vector<std::size_t> keep;
  for (std::size_t s = 1; s < space.slots(); ++s) keep.push_back(s);
  return keep;
}

// Phase e^{i sum_k detuning_k n_k t} of every basis state: maps the window frame to the
// frame of each mode.
VectorXc frame_phases(const HilbertSpace& space, const std::vector<double>& detuning, double t) {
  VectorXc ph(space.total());
  for (Index i = 0; i < space.total(); ++i) {
    double a = 0;
    for (std::size_t k = 0; k < detuning.size(); ++k) a += detuning[k] * space.level(i, k + 1);
    ph(i) = std::polar(1.0, a * t);
  }
  return ph;
}

bool trivial(const std::vector<double>& detuning, double t) {
  for (double d : detuning)
    if (d * t != 0) return false;
  return true;
}

// rho -> P rho P^dag for a diagonal phase P.
MatrixXc rotate(const MatrixXc& rho, const VectorXc& ph) {
  return ph.asDiagonal() * rho * ph.conjugate().asDiagonal();
}

std::vector<double> window_detunings(const SystemSpec& spec, const FrameConfig& frame) {
  std::vector<double> d;
  for (std::size_t k = 0; k < spec.modes.size(); ++k) d.push_back(effective_detuning(spec, frame, k));
  return d;
}

void require_two_modes(const SystemSpec& spec, const char* what) {
  if (spec.modes.size() != 2)
    throw Error(ErrorKind::Sequencing, std::string(what) + " sequence needs exactly two modes");
}

void require_outcome(int outcome) {
  if (outcome != 0 && outcome != 1) throw Error(ErrorKind::Sequencing, "outcome must be 0 or 1");
}

double window_theta(Complex alpha) { return kPi / 2 - std::arg(alpha); }

void require_coupling(const ModeSpec& m, std::size_t k) {
  if (!(m.g_tilde > 0))
    throw Error(ErrorKind::Sequencing, "mode " + std::to_string(k + 1) + " has no coupling to build a window from");
}

// Mode `other` must sit out a window resonant with mode `k`.
void require_far_detuned(const SystemSpec& spec, std::size_t k, std::size_t other) {
  const auto& a = spec.modes[k];
  const auto& b = spec.modes[other];
  if (std::abs(b.omega - a.omega) < 100 * b.g_tilde)
    throw Error(ErrorKind::Sequencing, "modes are too close in frequency for sequential windows (need |w1 - w2| >= "
                                       "100 g_tilde); use the bell sequence for degenerate modes");
}

// Targets tolerate the same tail weight as the leakage audit.
VectorXc coherent(int dim, Complex alpha) { return coherent_state(dim, alpha, nullptr, 1e-4).amplitudes(); }

VectorXc product(const VectorXc& a, const VectorXc& b) { return Eigen::kroneckerProduct(a, b).eval(); }

}  // namespace

ProjectQubit ProjectQubit::level(int k, int levels) {
  if (k < 0 || k >= levels) throw Error(ErrorKind::InvalidDimension, "projection level out of range");
  VectorXc s = VectorXc::Zero(levels);
  s(k) = 1;
  return {s, std::to_string(k)};
}

std::string describe(const ProtocolStep& step) {
  std::ostringstream os;
  std::visit(Overloaded{
                 [&](const QubitPulse& p) {
                   os << "pulse(" << "xyz"[int(p.axis)] << ", " << p.angle << ")";
                 },
                 [&](const PrepareSuperposition& p) { os << "prepare(chi=" << p.chi << ")"; },
                 [&](const InteractionWindow& w) {
                   os << "window(omega_ac=" << w.omega_ac << ", tau=" << w.tau << ", theta=" << w.theta << ")";
                 },
                 [&](const ProjectQubit& p) { os << "project(" << p.label << ")"; },
                 [&](const ConditionalDisplace& d) { os << "displace(mode " << d.mode + 1 << ", " << d.beta << ")"; },
                 [&](const MeasureSigmaX& m) { os << "measure_sigma_x(" << m.label << ")"; },
             },
             step);
  return os.str();
}

MatrixXc qubit_matrix(const QubitPulse& p) {
  if (!std::isfinite(p.angle)) throw Error(ErrorKind::Domain, "pulse angle must be finite");
  MatrixXc sigma(2, 2);
  switch (p.axis) {
    case Axis::X:
      sigma << 0, 1, 1, 0;
      break;
    case Axis::Y:
      sigma << 0, -kI, kI, 0;
      break;
    case Axis::Z:
      sigma << 1, 0, 0, -1;
      break;
  }
  return std::cos(p.angle / 2) * MatrixXc::Identity(2, 2) - kI * std::sin(p.angle / 2) * sigma;
}

MatrixXc qubit_matrix(const PrepareSuperposition& p) {
  if (!std::isfinite(p.chi)) throw Error(ErrorKind::Domain, "superposition phase must be finite");
  MatrixXc u(2, 2);
  const Complex e = std::polar(1.0, p.chi);
  u << 1, -std::conj(e), e, 1;
  return u / std::numbers::sqrt2;
}

DensityMatrix qubit_unitary(const DensityMatrix& rho, const MatrixXc& u2) {
  const HilbertSpace& space = rho.space();
  const int nq = space.dim(0);
  const Index m = space.total() / nq;
  const MatrixXc u = lift_qubit(u2, nq);
  const MatrixXc& r = rho.matrix();
  MatrixXc left = MatrixXc::Zero(r.rows(), r.cols());
  for (int q = 0; q < nq; ++q)
    for (int s = 0; s < nq; ++s)
      if (u(q, s) != Complex(0)) left.middleRows(q * m, m) += u(q, s) * r.middleRows(s * m, m);
  MatrixXc out = MatrixXc::Zero(r.rows(), r.cols());
  for (int p = 0; p < nq; ++p)
    for (int s = 0; s < nq; ++s)
      if (u(p, s) != Complex(0)) out.middleCols(p * m, m) += std::conj(u(p, s)) * left.middleCols(s * m, m);
  return DensityMatrix::trusted(space, std::move(out));
}

StateVector qubit_unitary(const StateVector& psi, const MatrixXc& u2) {
  const HilbertSpace& space = psi.space();
  const int nq = space.dim(0);
  const Index m = space.total() / nq;
  const MatrixXc u = lift_qubit(u2, nq);
  VectorXc out = VectorXc::Zero(space.total());
  for (int q = 0; q < nq; ++q)
    for (int s = 0; s < nq; ++s)
      if (u(q, s) != Complex(0)) out.segment(q * m, m) += u(q, s) * psi.amplitudes().segment(s * m, m);
  return StateVector::normalized(space, std::move(out));
}

Projection project_qubit(const DensityMatrix& rho, const VectorXc& state) {
  const HilbertSpace& space = rho.space();
  if (space.slots() < 2) throw Error(ErrorKind::InvalidDimension, "projection needs a transmon and modes");
  const int nq = space.dim(0);
  const VectorXc s = pad_state(state, nq);
  const Index m = space.total() / nq;
  MatrixXc out = MatrixXc::Zero(m, m);
  for (int q = 0; q < nq; ++q)
    for (int p = 0; p < nq; ++p) {
      const Complex w = std::conj(s(q)) * s(p);
      if (w != Complex(0)) out += w * rho.matrix().block(q * m, p * m, m, m);
    }
  const double prob = out.trace().real();
  if (!(prob >= 1e-12))
    throw Error(ErrorKind::ImpossibleOutcome, "projection outcome has probability " + std::to_string(prob));
  out /= prob;
  return {DensityMatrix::trusted(space.subspace(mode_slots(space)), std::move(out)), std::min(prob, 1.0)};
}

PureProjection project_qubit(const StateVector& psi, const VectorXc& state) {
  const HilbertSpace& space = psi.space();
  if (space.slots() < 2) throw Error(ErrorKind::InvalidDimension, "projection needs a transmon and modes");
  const int nq = space.dim(0);
  const VectorXc s = pad_state(state, nq);
  const Index m = space.total() / nq;
  VectorXc out = VectorXc::Zero(m);
  for (int q = 0; q < nq; ++q)
    if (s(q) != Complex(0)) out += std::conj(s(q)) * psi.amplitudes().segment(q * m, m);
  const double prob = out.squaredNorm();
  if (!(prob >= 1e-12))
    throw Error(ErrorKind::ImpossibleOutcome, "projection outcome has probability " + std::to_string(prob));
  return {StateVector::normalized(space.subspace(mode_slots(space)), std::move(out)), std::min(prob, 1.0)};
}

double qubit_sigma_x(const DensityMatrix& rho) {
  const Index m = rho.space().total() / rho.space().dim(0);
  return 2 * rho.matrix().block(m, 0, m, m).trace().real();
}

double qubit_sigma_x(const StateVector& psi) {
  const Index m = psi.space().total() / psi.space().dim(0);
  const auto& v = psi.amplitudes();
  return 2 * v.segment(0, m).dot(v.segment(m, m)).real();
}

ProtocolSequence bell_sequence(const SystemSpec& spec, Complex alpha, double chi, int outcome) {
  require_two_modes(spec, "bell");
  require_outcome(outcome);
  const auto& m1 = spec.modes[0];
  const auto& m2 = spec.modes[1];
  require_coupling(m1, 0);
  if (std::abs(m1.omega - m2.omega) > std::min(m1.g_tilde, m2.g_tilde) / 10)
    throw Error(ErrorKind::Sequencing,
                "bell sequence needs degenerate modes; use the noon or general_ecs sequence instead");
  ProtocolSequence seq{PrepareSuperposition{chi}};
  if (alpha != Complex(0)) seq.push_back(InteractionWindow{m1.omega, std::abs(alpha) / m1.g_tilde, window_theta(alpha)});
  seq.push_back(QubitPulse{Axis::Y, -kPi / 2});
  auto p = ProjectQubit::level(outcome);
  p.label = outcome == 0 ? "+" : "-";
  seq.push_back(p);
  return seq;
}

ProtocolSequence noon_sequence(const SystemSpec& spec, Complex alpha, double chi, int outcome) {
  require_two_modes(spec, "noon");
  require_outcome(outcome);
  require_coupling(spec.modes[0], 0);
  require_coupling(spec.modes[1], 1);
  require_far_detuned(spec, 0, 1);
  require_far_detuned(spec, 1, 0);
  const double tau1 = std::abs(alpha) / spec.modes[0].g_tilde;
  const double tau2 = tau1 * spec.modes[0].g_tilde / spec.modes[1].g_tilde;
  const double theta = window_theta(alpha);
  ProtocolSequence seq{PrepareSuperposition{chi}};
  if (tau1 > 0) seq.push_back(InteractionWindow{spec.modes[0].omega, tau1, theta});
  seq.push_back(QubitPulse{Axis::X, kPi});
  if (tau2 > 0) seq.push_back(InteractionWindow{spec.modes[1].omega, tau2, theta});
  seq.push_back(QubitPulse{Axis::Y, -kPi / 2});
  auto p = ProjectQubit::level(outcome);
  p.label = outcome == 0 ? "+" : "-";
  seq.push_back(p);
  return seq;
}

ProtocolSequence general_ecs_sequence(const SystemSpec& spec, Complex alpha, int outcome) {
  require_two_modes(spec, "general_ecs");
  require_outcome(outcome);
  require_coupling(spec.modes[0], 0);
  require_coupling(spec.modes[1], 1);
  require_far_detuned(spec, 0, 1);
  require_far_detuned(spec, 1, 0);
  const double theta = window_theta(alpha);
  ProtocolSequence seq{PrepareSuperposition{0}};
  if (alpha != Complex(0)) seq.push_back(InteractionWindow{spec.modes[0].omega, std::abs(alpha) / spec.modes[0].g_tilde, theta});
  seq.push_back(QubitPulse{Axis::Y, -kPi / 2});
  if (alpha != Complex(0)) seq.push_back(InteractionWindow{spec.modes[1].omega, std::abs(alpha) / spec.modes[1].g_tilde, theta});
  seq.push_back(QubitPulse{Axis::Y, kPi / 2});
  auto p = ProjectQubit::level(outcome);
  p.label = outcome == 0 ? "+" : "-";
  seq.push_back(p);
  return seq;
}

StateVector ideal_target(TargetKind kind, Complex alpha, int sign, double chi, int d1, int d2) {
  if (sign != 1 && sign != -1) throw Error(ErrorKind::Domain, "target sign must be +1 or -1");
  const VectorXc z1 = coherent(d1, 0), z2 = coherent(d2, 0), a1 = coherent(d1, alpha), a2 = coherent(d2, alpha);
  const double s = sign;
  const Complex e = std::polar(1.0, chi);
  VectorXc psi;
  switch (kind) {
    case TargetKind::Bell:
      psi = product(z1, z2) + s * e * product(a1, a2);
      break;
    case TargetKind::Noon:
      psi = product(z1, a2) + s * e * product(a1, z2);
      break;
    case TargetKind::General:
      psi = product(z1, z2) + product(z1, a2) + s * product(a1, z2) - s * product(a1, a2);
      break;
  }
  return StateVector::normalized(HilbertSpace{d1, d2}, std::move(psi));
}

StateVector protocol_target(TargetKind kind, Complex alpha, int outcome, double chi, int d1, int d2) {
  require_outcome(outcome);
  if (kind != TargetKind::General || outcome == 0) return ideal_target(kind, alpha, outcome ? -1 : 1, chi, d1, d2);
  // |0,0> + |a,0> - |0,a> + |a,a>: the "-" target with the modes exchanged.
  const VectorXc z1 = coherent(d1, 0), z2 = coherent(d2, 0), a1 = coherent(d1, alpha), a2 = coherent(d2, alpha);
  VectorXc psi = product(z1, z2) + product(a1, z2) - product(z1, a2) + product(a1, a2);
  return StateVector::normalized(HilbertSpace{d1, d2}, std::move(psi));
}

FrameConfig window_frame(const SystemSpec& spec, const InteractionWindow& w, bool rwa_drop_detuned) {
  FrameConfig f;
  f.omega_ac = w.omega_ac;
  f.rwa_drop_detuned = rwa_drop_detuned;
  f.corotate_dropped = rwa_drop_detuned;
  for (std::size_t k = 0; k < spec.modes.size(); ++k)
    if (std::abs(spec.modes[k].omega - w.omega_ac) <= spec.modes[k].g_tilde / 10) f.active_modes.push_back(k);
  return f;
}

void validate(const ProtocolSequence& steps, const SystemSpec& spec, Warnings* warnings, bool rwa_drop_detuned) {
  validate(spec, warnings);
  bool projected = false;
  const int levels = spec.transmon.levels;
  for (const auto& step : steps) {
    const std::string where = describe(step);
    if (projected && !std::holds_alternative<ProjectQubit>(step))
      throw Error(ErrorKind::Sequencing, where + " comes after the transmon was projected out");
    std::visit(Overloaded{
                   [&](const QubitPulse& p) { qubit_matrix(p); },
                   [&](const PrepareSuperposition& p) { qubit_matrix(p); },
                   [&](const InteractionWindow& w) {
                     if (!(w.tau > 0) || !std::isfinite(w.tau))
                       throw Error(ErrorKind::Sequencing, where + ": window length must be positive");
                     if (!(w.omega_ac > 0)) throw Error(ErrorKind::Sequencing, where + ": omega_ac must be positive");
                     if (!std::isfinite(w.theta)) throw Error(ErrorKind::Sequencing, where + ": theta must be finite");
                     const FrameConfig f = window_frame(spec, w, rwa_drop_detuned);
                     validate(spec, f, warnings);
                     if (f.active_modes.empty()) warn(warnings, where + " is resonant with no mode");
                     for (std::size_t k = 0; k < spec.modes.size(); ++k) {
                       const bool active =
                           std::find(f.active_modes.begin(), f.active_modes.end(), k) != f.active_modes.end();
                       if (!active && !coupling_dropped(spec, f, k))
                         warn(warnings, where + ": mode " + std::to_string(k + 1) +
                                            " is neither resonant nor far detuned; its coupling is kept off resonance");
                     }
                   },
                   [&](const ProjectQubit& p) {
                     if (projected) throw Error(ErrorKind::Sequencing, "only one projection is supported");
                     pad_state(p.state, levels);
                     projected = true;
                   },
                   [&](const ConditionalDisplace& d) {
                     if (d.mode >= spec.modes.size())
                       throw Error(ErrorKind::Sequencing, where + ": mode index out of range");
                   },
                   [&](const MeasureSigmaX&) {},
               },
               step);
  }
}

ProtocolSequence trailing_steps(const ProtocolSequence& steps) {
  std::size_t start = 0;
  for (std::size_t k = 0; k < steps.size(); ++k)
    if (std::holds_alternative<InteractionWindow>(steps[k])) start = k + 1;
  return ProtocolSequence(steps.begin() + std::ptrdiff_t(start), steps.end());
}

double total_window_time(const ProtocolSequence& steps) {
  double t = 0;
  for (const auto& s : steps)
    if (const auto* w = std::get_if<InteractionWindow>(&s)) t += w->tau;
  return t;
}

TailResult apply_tail(const ProtocolSequence& tail, const DensityMatrix& rho) {
  DensityMatrix full = rho;
  for (const auto& step : tail) {
    if (const auto* p = std::get_if<QubitPulse>(&step)) full = qubit_unitary(full, qubit_matrix(*p));
    else if (const auto* p = std::get_if<PrepareSuperposition>(&step)) full = qubit_unitary(full, qubit_matrix(*p));
    else if (const auto* d = std::get_if<ConditionalDisplace>(&step)) full = conditional_displacement(full, d->mode, d->beta);
    else if (const auto* p = std::get_if<ProjectQubit>(&step)) {
      auto proj = project_qubit(full, p->state);
      return {std::move(proj.modes), proj.probability};
    } else if (std::holds_alternative<InteractionWindow>(step))
      throw Error(ErrorKind::Sequencing, "the tail of a sequence cannot contain windows");
  }
  return {partial_trace(full, mode_slots(full.space())), 1.0};
}

namespace {

StateVector ground_modes(const StateVector& full) {
  // Without a projection the modes stay entangled with the transmon; report them only
  // when the transmon factorizes out in its ground state.
  const HilbertSpace& space = full.space();
  const Index m = space.total() / space.dim(0);
  const double rest = full.amplitudes().tail(space.total() - m).squaredNorm();
  if (rest > 1e-12)
    throw Error(ErrorKind::Sequencing, "state-vector runs need a projection unless the transmon ends in |0>");
  return StateVector::normalized(space.subspace(mode_slots(space)), full.amplitudes().head(m));
}

}  // namespace

PureTailResult apply_tail(const ProtocolSequence& tail, const StateVector& psi) {
  StateVector full = psi;
  for (const auto& step : tail) {
    if (const auto* p = std::get_if<QubitPulse>(&step)) full = qubit_unitary(full, qubit_matrix(*p));
    else if (const auto* p = std::get_if<PrepareSuperposition>(&step)) full = qubit_unitary(full, qubit_matrix(*p));
    else if (const auto* d = std::get_if<ConditionalDisplace>(&step)) full = conditional_displacement(full, d->mode, d->beta);
    else if (const auto* p = std::get_if<ProjectQubit>(&step)) {
      auto proj = project_qubit(full, p->state);
      return {std::move(proj.modes), proj.probability};
    } else if (std::holds_alternative<InteractionWindow>(step))
      throw Error(ErrorKind::Sequencing, "the tail of a sequence cannot contain windows");
  }
  return {ground_modes(full), 1.0};
}

namespace {

// Record times per window (relative), from an even grid over the total window time.
std::vector<std::vector<double>> distribute_records(const ProtocolSequence& steps, std::size_t n) {
  std::vector<double> taus;
  for (const auto& s : steps)
    if (const auto* w = std::get_if<InteractionWindow>(&s)) taus.push_back(w->tau);
  std::vector<std::vector<double>> out(taus.size());
  if (taus.empty() || n == 0) return out;
  const double total = total_window_time(steps);
  const double eps = 1e-12 * total;
  std::vector<double> grid;
  if (n == 1) grid.push_back(total);
  else
    for (std::size_t k = 0; k < n; ++k) grid.push_back(total * double(k) / double(n - 1));
  double start = 0;
  std::size_t g = 0;
  for (std::size_t w = 0; w < taus.size(); ++w) {
    const double end = start + taus[w];
    for (; g < grid.size() && grid[g] <= end + eps; ++g)
      out[w].push_back(std::clamp(grid[g] - start, 0.0, taus[w]));
    start = end;
  }
  return out;
}

}  // namespace

ProtocolResult run_protocol(const ProtocolSequence& steps, const SystemSpec& spec, const DensityMatrix& rho0,
                            const ProtocolOptions& opt) {
  validate(steps, spec, opt.warnings, opt.rwa_drop_detuned);
  if (!(rho0.space() == spec.space())) throw Error(ErrorKind::InvalidDimension, "initial state does not match the system");
  const HilbertSpace space = spec.space();
  const auto grid = distribute_records(steps, opt.records);

  std::optional<DensityMatrix> full = rho0;
  std::optional<DensityMatrix> modes;
  ProtocolResult result{{}, DensityMatrix::trusted(HilbertSpace{2}, MatrixXc::Identity(2, 2) / 2.0), rho0, 1, {}, {}};
  double t = 0;
  std::size_t window = 0;

  for (const auto& step : steps) {
    if (const auto* p = std::get_if<QubitPulse>(&step)) {
      full = qubit_unitary(*full, qubit_matrix(*p));
    } else if (const auto* p = std::get_if<PrepareSuperposition>(&step)) {
      full = qubit_unitary(*full, qubit_matrix(*p));
    } else if (const auto* w = std::get_if<InteractionWindow>(&step)) {
      SystemSpec s = spec;
      s.coupling_phase_theta = w->theta;
      const FrameConfig frame = window_frame(s, *w, opt.rwa_drop_detuned);
      const auto det = window_detunings(s, frame);
      const bool rotating = !trivial(det, 1.0);
      const double t0 = t, t1 = t + w->tau;

      EvolveOptions eo = opt.evolve;
      eo.t0 = t0;
      const bool keep = !grid[window].empty();
      eo.record_times = keep ? grid[window] : std::vector<double>{w->tau};
      if (keep && opt.observer) {
        eo.observer = [&, window](double time, const DensityMatrix& r) {
          if (!rotating) return opt.observer(time, window, r);
          opt.observer(time, window, DensityMatrix::trusted(space, rotate(r.matrix(), frame_phases(space, det, time))));
        };
      } else {
        eo.observer = nullptr;
      }
      DensityMatrix start = rotating ? DensityMatrix::trusted(space, rotate(full->matrix(), frame_phases(space, det, -t0)))
                                     : *full;
      Trajectory tr = evolve(start, s, frame, w->tau, true, w->tau, eo);
      for (std::size_t k = 0; k < tr.snapshots.size(); ++k)
        if (rotating)
          tr.snapshots[k] = DensityMatrix::trusted(
              space, rotate(tr.snapshots[k].matrix(), frame_phases(space, det, tr.snapshot_times[k])));
      full = tr.snapshots.back();
      auto& out = result.trajectory;
      if (keep) {
        out.times.insert(out.times.end(), tr.times.begin(), tr.times.end());
        out.records.insert(out.records.end(), tr.records.begin(), tr.records.end());
      }
      out.snapshot_times.insert(out.snapshot_times.end(), tr.snapshot_times.begin(), tr.snapshot_times.end());
      out.snapshots.insert(out.snapshots.end(), tr.snapshots.begin(), tr.snapshots.end());
      out.stats.rhs_evaluations += tr.stats.rhs_evaluations;
      out.stats.accepted_steps += tr.stats.accepted_steps;
      out.stats.rejected_steps += tr.stats.rejected_steps;
      out.stats.error_estimate += tr.stats.error_estimate;
      t = t1;
      ++window;
    } else if (const auto* p = std::get_if<ProjectQubit>(&step)) {
      result.final_full_state = *full;
      auto proj = project_qubit(*full, p->state);
      modes = std::move(proj.modes);
      result.projection_probability *= proj.probability;
      result.selected_outcome = p->label;
      full.reset();
    } else if (const auto* d = std::get_if<ConditionalDisplace>(&step)) {
      full = conditional_displacement(*full, d->mode, d->beta);
    } else if (const auto* m = std::get_if<MeasureSigmaX>(&step)) {
      result.sigma_x.emplace_back(m->label, qubit_sigma_x(*full));
    }
  }
  if (full) {
    result.final_full_state = *full;
    modes = partial_trace(*full, mode_slots(space));
  }
  result.final_two_mode_state = std::move(*modes);
  return result;
}

PureProtocolResult run_protocol(const ProtocolSequence& steps, const SystemSpec& spec, const StateVector& psi0,
                                const ProtocolOptions& opt) {
  validate(steps, spec, opt.warnings, opt.rwa_drop_detuned);
  if (!(psi0.space() == spec.space())) throw Error(ErrorKind::InvalidDimension, "initial state does not match the system");
  const HilbertSpace space = spec.space();
  const auto grid = distribute_records(steps, opt.records);

  std::optional<StateVector> full = psi0;
  std::optional<StateVector> modes;
  PureProtocolResult result{{}, {}, psi0, 1, {}, {}, {}};
  double t = 0;
  std::size_t window = 0;

  auto rotated = [&](const StateVector& v, const std::vector<double>& det, double time) {
    return StateVector::normalized(space, frame_phases(space, det, time).cwiseProduct(v.amplitudes()));
  };

  for (const auto& step : steps) {
    if (const auto* p = std::get_if<QubitPulse>(&step)) {
      full = qubit_unitary(*full, qubit_matrix(*p));
    } else if (const auto* p = std::get_if<PrepareSuperposition>(&step)) {
      full = qubit_unitary(*full, qubit_matrix(*p));
    } else if (const auto* w = std::get_if<InteractionWindow>(&step)) {
      SystemSpec s = spec;
      s.coupling_phase_theta = w->theta;
      const FrameConfig frame = window_frame(s, *w, opt.rwa_drop_detuned);
      const auto det = window_detunings(s, frame);
      const bool rotating = !trivial(det, 1.0);
      const double t0 = t;
      PureEvolveOptions eo;
      eo.rtol = opt.evolve.rtol;
      eo.atol = opt.evolve.atol;
      eo.fixed_step = opt.evolve.fixed_step;
      eo.max_steps = opt.evolve.max_steps;
      eo.t0 = t0;
      const bool keep = !grid[window].empty();
      eo.record_times = keep ? grid[window] : std::vector<double>{w->tau};
      if (keep) {
        eo.observer = [&, window](double time, const StateVector& v) {
          result.times.push_back(time);
          if (opt.pure_observer) opt.pure_observer(time, window, rotating ? rotated(v, det, time) : v);
        };
      }
      StateVector start = rotating ? rotated(*full, det, -t0) : *full;
      auto tr = evolve_pure(start, s, frame, w->tau, true, w->tau, eo);
      if (keep) result.norm_defects.insert(result.norm_defects.end(), tr.norm_defects.begin(), tr.norm_defects.end());
      full = rotating ? rotated(tr.final_state, det, t0 + w->tau) : tr.final_state;
      result.stats.rhs_evaluations += tr.stats.rhs_evaluations;
      result.stats.accepted_steps += tr.stats.accepted_steps;
      result.stats.rejected_steps += tr.stats.rejected_steps;
      result.stats.error_estimate += tr.stats.error_estimate;
      t += w->tau;
      ++window;
    } else if (const auto* p = std::get_if<ProjectQubit>(&step)) {
      auto proj = project_qubit(*full, p->state);
      modes = std::move(proj.modes);
      result.projection_probability *= proj.probability;
      result.selected_outcome = p->label;
      full.reset();
    } else if (const auto* d = std::get_if<ConditionalDisplace>(&step)) {
      full = conditional_displacement(*full, d->mode, d->beta);
    } else if (const auto* m = std::get_if<MeasureSigmaX>(&step)) {
      result.sigma_x.emplace_back(m->label, qubit_sigma_x(*full));
    }
  }
  if (full) modes = ground_modes(*full);
  result.final_two_mode_state = std::move(*modes);
  return result;
}

}  // namespace ecs

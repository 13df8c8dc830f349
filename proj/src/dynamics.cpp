#include "ecs/dynamics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <utility>

namespace ecs {

namespace {

constexpr double kTwoPi = 2 * std::numbers::pi;
constexpr Complex kI(0, 1);

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

using Triplet = Eigen::Triplet<Complex>;

SparseMatrixXc sparse_identity(Index n) {
  SparseMatrixXc id(n, n);
  id.setIdentity();
  return id;
}

// Annihilation operator of mode slot k acting on the whole mode space.
SparseMatrixXc ladder(const HilbertSpace& modes, std::size_t k) {
  std::vector<Triplet> t;
  const Index s = modes.stride(k);
  for (Index i = 0; i < modes.total(); ++i)
    if (int n = modes.level(i, k); n > 0) t.emplace_back(i - s, i, std::sqrt(double(n)));
  SparseMatrixXc a(modes.total(), modes.total());
  a.setFromTriplets(t.begin(), t.end());
  return a;
}

MatrixXc transmon_lowering(int levels) { return annihilation_matrix(levels); }

double rate_or_zero(double time) { return std::isinf(time) ? 0.0 : 1.0 / time; }

double mode_decay(const ModeSpec& m) { return std::isinf(m.Q) ? 0.0 : m.omega / m.Q; }

struct SpecParts {
  std::vector<SparseMatrixXc> h;
  std::vector<SparseMatrixXc> mode_jumps;  // already scaled by sqrt(rate)
  std::vector<std::pair<double, MatrixXc>> level_jumps;
};

SpecParts spec_parts(const SystemSpec& spec, const FrameConfig& frame, bool coupling_on) {
  const HilbertSpace modes = spec.mode_space();
  const Index M = modes.total();
  const int nq = spec.transmon.levels;
  const double theta = spec.coupling_phase_theta;

  std::vector<SparseMatrixXc> a;
  for (std::size_t k = 0; k < spec.modes.size(); ++k) a.push_back(ladder(modes, k));

  std::vector<Triplet> diag;
  for (Index i = 0; i < M; ++i) {
    double d = 0;
    for (std::size_t k = 0; k < spec.modes.size(); ++k)
      d += effective_detuning(spec, frame, k) * modes.level(i, k);
    if (d != 0) diag.emplace_back(i, i, d);
  }
  SparseMatrixXc drift(M, M);
  drift.setFromTriplets(diag.begin(), diag.end());

  SparseMatrixXc coupling(M, M);
  if (coupling_on) {
    for (std::size_t k = 0; k < spec.modes.size(); ++k) {
      if (coupling_dropped(spec, frame, k) || spec.modes[k].g_tilde == 0) continue;
      const double g = spec.modes[k].g_tilde;
      SparseMatrixXc ad = a[k].adjoint();
      coupling += g * std::polar(1.0, theta) * a[k] + g * std::polar(1.0, -theta) * ad;
    }
  }

  SpecParts parts;
  const double ec = kTwoPi * spec.transmon.E_C;
  const SparseMatrixXc id = sparse_identity(M);
  for (int q = 0; q < nq; ++q) {
    const double level_energy = frame.qubit_detuning * q - 0.5 * ec * q * (q - 1);
    SparseMatrixXc hq = drift - double(q) * coupling + level_energy * id;
    hq.prune(Complex(0));
    parts.h.push_back(std::move(hq));
  }

  const auto bath = bath_occupations(spec);
  for (std::size_t k = 0; k < spec.modes.size(); ++k) {
    const double kappa = mode_decay(spec.modes[k]);
    if (kappa * (bath[k] + 1) > 0) parts.mode_jumps.push_back(std::sqrt(kappa * (bath[k] + 1)) * a[k]);
    if (kappa * bath[k] > 0) {
      SparseMatrixXc ad = a[k].adjoint();
      parts.mode_jumps.push_back(std::sqrt(kappa * bath[k]) * ad);
    }
  }

  const MatrixXc c = transmon_lowering(nq);
  if (double r = rate_or_zero(spec.transmon.T1); r > 0) parts.level_jumps.emplace_back(r, c);
  if (double r = rate_or_zero(spec.transmon.T2); r > 0) parts.level_jumps.emplace_back(r, c.adjoint() * c);
  return parts;
}

bool all_zero(const Eigen::Ref<const MatrixXc>& m) { return (m.array() == Complex(0)).all(); }

bool is_scalar_block(const Eigen::Ref<const MatrixXc>& m) {
  const Complex s = m(0, 0);
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i < m.rows(); ++i)
      if (m(i, j) != (i == j ? s : Complex(0))) return false;
  return true;
}

}  // namespace

HilbertSpace SystemSpec::space() const {
  std::vector<int> dims{transmon.levels};
  for (const auto& m : modes) dims.push_back(m.fock_dim);
  return HilbertSpace(std::move(dims));
}

HilbertSpace SystemSpec::mode_space() const {
  std::vector<int> dims;
  for (const auto& m : modes) dims.push_back(m.fock_dim);
  return HilbertSpace(std::move(dims));
}

void validate(const SystemSpec& spec, Warnings* warnings) {
  validate(spec.transmon, warnings);
  if (spec.modes.empty()) throw Error(ErrorKind::InvalidDimension, "system needs at least one mode");
  for (const auto& m : spec.modes) validate(m, warnings);
  if (!(spec.temperature >= 0)) throw Error(ErrorKind::Domain, "temperature must be non-negative");
  if (!std::isfinite(spec.coupling_phase_theta)) throw Error(ErrorKind::Domain, "coupling phase must be finite");
}

std::vector<double> bath_occupations(const SystemSpec& spec) {
  std::vector<double> n;
  for (const auto& m : spec.modes) n.push_back(thermal_occupation(m.omega, spec.temperature));
  return n;
}

bool coupling_dropped(const SystemSpec& spec, const FrameConfig& frame, std::size_t mode) {
  const auto& m = spec.modes.at(mode);
  return frame.rwa_drop_detuned && std::abs(m.omega - frame.omega_ac) >= 100 * m.g_tilde;
}

double effective_detuning(const SystemSpec& spec, const FrameConfig& frame, std::size_t mode) {
  if (frame.corotate_dropped && coupling_dropped(spec, frame, mode)) return 0;
  return spec.modes.at(mode).omega - frame.omega_ac;
}

void validate(const SystemSpec& spec, const FrameConfig& frame, Warnings* warnings) {
  for (auto k : frame.active_modes) {
    if (k >= spec.modes.size()) throw Error(ErrorKind::InvalidDimension, "active mode index out of range");
    const auto& m = spec.modes[k];
    if (std::abs(m.omega - frame.omega_ac) > m.g_tilde / 10)
      throw Error(ErrorKind::Domain, "mode " + std::to_string(k + 1) + " is not resonant with the modulation");
  }
  for (std::size_t k = 0; k < spec.modes.size(); ++k) {
    const auto& m = spec.modes[k];
    if (coupling_dropped(spec, frame, k)) continue;
    const double ratio = m.g_tilde / (m.omega + frame.omega_ac);
    if (ratio >= 1e-2)
      warn(warnings, "mode " + std::to_string(k + 1) + ": g_tilde/(omega+omega_ac) = " + std::to_string(ratio) +
                         " is not small; rotating-wave approximation is doubtful");
  }
}

void DissipatorSet::add(double rate, Operator jump, std::string label) {
  if (!(rate >= 0)) throw Error(ErrorKind::Domain, "dissipator rate must be non-negative");
  if (rate == 0) return;
  if (!channels.empty() && !(channels.front().jump.space() == jump.space()))
    throw Error(ErrorKind::InvalidDimension, "dissipators act on different spaces");
  channels.push_back({rate, std::move(jump), std::move(label)});
}

Operator build_hamiltonian(const SystemSpec& spec, const FrameConfig& frame, bool coupling_on) {
  validate(spec);
  validate(spec, frame);
  const HilbertSpace space = spec.space();
  if (space.total() > kDenseCap) throw Error(ErrorKind::InvalidDimension, "dense Hamiltonian refused for " + space.describe());
  const auto parts = spec_parts(spec, frame, coupling_on);
  const Index M = spec.mode_space().total();
  MatrixXc h = MatrixXc::Zero(space.total(), space.total());
  for (std::size_t q = 0; q < parts.h.size(); ++q) h.block(q * M, q * M, M, M) = MatrixXc(parts.h[q]);
  return {space, std::move(h)};
}

DissipatorSet build_dissipators(const SystemSpec& spec) {
  validate(spec);
  const HilbertSpace space = spec.space();
  DissipatorSet set;
  const MatrixXc c = transmon_lowering(spec.transmon.levels);
  set.add(rate_or_zero(spec.transmon.T1), embed(c, 0, space), "transmon decay");
  set.add(rate_or_zero(spec.transmon.T2), embed(MatrixXc(c.adjoint() * c), 0, space), "transmon dephasing");
  const auto bath = bath_occupations(spec);
  for (std::size_t k = 0; k < spec.modes.size(); ++k) {
    const double kappa = mode_decay(spec.modes[k]);
    const MatrixXc a = annihilation_matrix(spec.modes[k].fock_dim);
    const std::string name = "mode " + std::to_string(k + 1);
    set.add(kappa * (bath[k] + 1), embed(a, k + 1, space), name + " decay");
    set.add(kappa * bath[k], embed(MatrixXc(a.adjoint()), k + 1, space), name + " heating");
  }
  return set;
}

DensityMatrix thermal_state(int dim, double n_th) {
  if (dim < 2) throw Error(ErrorKind::InvalidDimension, "mode dimension must be at least 2");
  if (!(n_th >= 0)) throw Error(ErrorKind::Domain, "thermal occupation must be non-negative");
  const double x = n_th / (1 + n_th);
  if (std::pow(x, dim) >= 1e-9)
    throw Error(ErrorKind::TruncationOverflow, "thermal tail beyond dim " + std::to_string(dim) +
                                                   " is too heavy for n_th = " + std::to_string(n_th));
  Eigen::VectorXd p(dim);
  p(0) = 1 / (1 + n_th);
  for (int n = 1; n < dim; ++n) p(n) = p(n - 1) * x;
  p /= p.sum();
  return DensityMatrix::trusted(HilbertSpace{dim}, p.cast<Complex>().asDiagonal());
}

DensityMatrix initial_state(const SystemSpec& spec) {
  validate(spec);
  const HilbertSpace space = spec.space();
  if (space.total() > kDenseCap) throw Error(ErrorKind::InvalidDimension, "dense state refused for " + space.describe());
  VectorXc diag = VectorXc::Ones(1);
  for (const auto& m : spec.modes) {
    const VectorXc p = thermal_state(m.fock_dim, m.n_th).matrix().diagonal();
    VectorXc next(diag.size() * p.size());
    for (Index i = 0; i < diag.size(); ++i) next.segment(i * p.size(), p.size()) = diag(i) * p;
    diag = std::move(next);
  }
  MatrixXc rho = MatrixXc::Zero(space.total(), space.total());
  rho.diagonal().head(diag.size()) = diag;  // transmon level 0 occupies the first block
  return DensityMatrix::trusted(space, std::move(rho));
}

Generator Generator::from_spec(const SystemSpec& spec, const FrameConfig& frame, bool coupling_on) {
  validate(spec);
  validate(spec, frame);
  auto parts = spec_parts(spec, frame, coupling_on);
  Generator g;
  g.nq_ = spec.transmon.levels;
  g.m_ = spec.mode_space().total();
  g.finish(std::move(parts.h), std::move(parts.mode_jumps), parts.level_jumps);
  return g;
}

Generator::Generator(const Operator& H, const DissipatorSet& dissipators) {
  const HilbertSpace& space = H.space();
  for (const auto& ch : dissipators.channels)
    if (!(ch.jump.space() == space)) throw Error(ErrorKind::InvalidDimension, "dissipator space mismatch");
  const Index D = space.total();
  const MatrixXc& h = H.matrix();

  int nq = space.slots() >= 2 ? space.dim(0) : 1;
  Index m = D / nq;
  auto blk = [&](const MatrixXc& x, int q, int p) { return x.block(q * m, p * m, m, m); };

  bool blocked = nq > 1;
  for (int q = 0; blocked && q < nq; ++q)
    for (int p = 0; blocked && p < nq; ++p)
      if (q != p && !all_zero(blk(h, q, p))) blocked = false;

  std::vector<SparseMatrixXc> mode_jumps;
  std::vector<std::pair<double, MatrixXc>> level_jumps;
  for (const auto& ch : dissipators.channels) {
    if (!blocked) break;
    const MatrixXc& L = ch.jump.matrix();
    bool level_op = true;
    for (int q = 0; level_op && q < nq; ++q)
      for (int p = 0; level_op && p < nq; ++p) level_op = is_scalar_block(blk(L, q, p));
    if (level_op) {
      MatrixXc o(nq, nq);
      for (int q = 0; q < nq; ++q)
        for (int p = 0; p < nq; ++p) o(q, p) = L(q * m, p * m);
      level_jumps.emplace_back(ch.rate, std::move(o));
      continue;
    }
    bool mode_op = true;
    for (int q = 0; mode_op && q < nq; ++q)
      for (int p = 0; mode_op && p < nq; ++p)
        mode_op = q == p ? blk(L, q, q) == blk(L, 0, 0) : all_zero(blk(L, q, p));
    if (!mode_op) {
      blocked = false;
      break;
    }
    mode_jumps.push_back((std::sqrt(ch.rate) * MatrixXc(blk(L, 0, 0))).sparseView());
  }

  std::vector<SparseMatrixXc> hs;
  if (blocked) {
    for (int q = 0; q < nq; ++q) hs.push_back(MatrixXc(blk(h, q, q)).sparseView());
  } else {
    nq = 1;
    m = D;
    mode_jumps.clear();
    level_jumps.clear();
    hs.push_back(h.sparseView());
    for (const auto& ch : dissipators.channels) mode_jumps.push_back((std::sqrt(ch.rate) * ch.jump.matrix()).sparseView());
  }
  nq_ = nq;
  m_ = m;
  finish(std::move(hs), std::move(mode_jumps), level_jumps);
}

void Generator::finish(std::vector<SparseMatrixXc> h, std::vector<SparseMatrixXc> mode_jumps,
                       const std::vector<std::pair<double, MatrixXc>>& level_jumps) {
  h_ = std::move(h);
  dissipative_ = !mode_jumps.empty() || !level_jumps.empty();

  SparseMatrixXc loss(m_, m_);
  for (const auto& J : mode_jumps) {
    SparseMatrixXc jd = J.adjoint();
    loss += SparseMatrixXc(jd * J);
    j_adj_.push_back(std::move(jd));
  }

  const int nb = nq_ * nq_;
  transfers_.assign(nb, {});
  std::vector<double> level_loss(nq_, 0.0);
  for (const auto& [rate, o] : level_jumps) {
    // rate * o rho o^dag, block by block
    for (int q = 0; q < nq_; ++q)
      for (int qq = 0; qq < nq_; ++qq)
        for (int p = 0; p < nq_; ++p)
          for (int pp = 0; pp < nq_; ++pp) {
            const Complex c = rate * o(q, p) * std::conj(o(qq, pp));
            if (c != Complex(0)) transfers_[q * nq_ + qq].push_back({q * nq_ + qq, p * nq_ + pp, c});
          }
    const MatrixXc oo = o.adjoint() * o;
    for (int q = 0; q < nq_; ++q) {
      level_loss[q] += rate * oo(q, q).real();
      for (int p = 0; p < nq_; ++p) {
        if (p == q || oo(q, p) == Complex(0)) continue;
        // -rate/2 (oo rho + rho oo) off-diagonal parts
        for (int r = 0; r < nq_; ++r) {
          transfers_[q * nq_ + r].push_back({q * nq_ + r, p * nq_ + r, -0.5 * rate * oo(q, p)});
          transfers_[r * nq_ + p].push_back({r * nq_ + p, r * nq_ + q, -0.5 * rate * oo(q, p)});
        }
      }
    }
  }

  const SparseMatrixXc id = sparse_identity(m_);
  for (int q = 0; q < nq_; ++q) {
    SparseMatrixXc a = -kI * h_[q] - 0.5 * loss - 0.5 * level_loss[q] * id;
    a.prune(Complex(0));
    a_adj_.push_back(a.adjoint());
  }
}

Blocks Generator::split(const MatrixXc& rho) const {
  if (rho.rows() != nq_ * m_ || rho.cols() != nq_ * m_)
    throw Error(ErrorKind::InvalidDimension, "state does not match the generator");
  const int nb = nq_ * nq_;
  Blocks x;
  x.b.resize(nb);
  x.active.assign(nb, 0);
  for (int k = 0; k < nb; ++k) x.active[k] = !all_zero(rho.block(k / nq_ * m_, k % nq_ * m_, m_, m_));
  for (int k = 0; k < nb; ++k) x.active[k] |= x.active[k % nq_ * nq_ + k / nq_];
  // Blocks fed by an active block through a transmon jump become active too.
  for (bool grew = true; grew;) {
    grew = false;
    for (int k = 0; k < nb; ++k)
      for (const auto& t : transfers_[k])
        if (!x.active[k] && x.active[t.src]) x.active[k] = grew = true;
  }
  for (int k = 0; k < nb; ++k)
    if (x.active[k]) x.b[k] = rho.block(k / nq_ * m_, k % nq_ * m_, m_, m_);
  return x;
}

MatrixXc Generator::merge(const Blocks& x) const {
  MatrixXc rho = MatrixXc::Zero(nq_ * m_, nq_ * m_);
  for (int k = 0; k < nq_ * nq_; ++k)
    if (x.active[k]) rho.block(k / nq_ * m_, k % nq_ * m_, m_, m_) = x.b[k];
  return rho;
}

void Generator::apply(const Blocks& x, Blocks& dx) const {
  const int nb = nq_ * nq_;
  dx.active = x.active;
  dx.b.resize(nb);
  for (int k = 0; k < nb; ++k) {
    const int q = k / nq_, p = k % nq_;
    if (!x.active[k] || q > p) continue;
    const MatrixXc& X = x.b[k];
    MatrixXc& Y = dx.b[k];
    // Sparse factors always sit on the right: dense * sparse is the fast kernel.
    // X is Hermitian on diagonal blocks, which saves the adjoint round trips.
    if (q == p) {
      t2_.noalias() = X * a_adj_[p];
      Y = t2_ + t2_.adjoint();
      for (const auto& jd : j_adj_) {
        t2_.noalias() = X * jd;
        t1_ = t2_.adjoint();
        Y.noalias() += t1_ * jd;
      }
    } else {
      Y.noalias() = X * a_adj_[p];
      t1_ = X.adjoint();
      t2_.noalias() = t1_ * a_adj_[q];
      Y += t2_.adjoint();
      for (const auto& jd : j_adj_) {
        t2_.noalias() = X * jd;
        t1_ = t2_.adjoint();
        t3_.noalias() = t1_ * jd;
        Y += t3_.adjoint();
      }
    }
    for (const auto& t : transfers_[k])
      if (x.active[t.src]) Y += t.c * x.b[t.src];
  }
  // Lower blocks mirror the upper ones.
  for (int k = 0; k < nb; ++k) {
    const int q = k / nq_, p = k % nq_;
    if (!x.active[k]) dx.b[k].resize(0, 0);
    else if (q > p) dx.b[k] = dx.b[p * nq_ + q].adjoint();
  }
}

MatrixXc Generator::apply(const MatrixXc& rho) const {
  Blocks dx;
  apply(split(rho), dx);
  return merge(dx);
}

Blocks Generator::split_pure(const VectorXc& psi) const {
  if (psi.size() != nq_ * m_) throw Error(ErrorKind::InvalidDimension, "state does not match the generator");
  Blocks x;
  x.b.resize(nq_);
  x.active.assign(nq_, 0);
  for (int q = 0; q < nq_; ++q) {
    x.active[q] = !all_zero(psi.segment(q * m_, m_));
    if (x.active[q]) x.b[q] = psi.segment(q * m_, m_);
  }
  return x;
}

VectorXc Generator::merge_pure(const Blocks& x) const {
  VectorXc psi = VectorXc::Zero(nq_ * m_);
  for (int q = 0; q < nq_; ++q)
    if (x.active[q]) psi.segment(q * m_, m_) = x.b[q];
  return psi;
}

void Generator::apply_pure(const Blocks& x, Blocks& dx) const {
  dx.active = x.active;
  dx.b.resize(nq_);
  for (int q = 0; q < nq_; ++q) {
    if (!x.active[q]) {
      dx.b[q].resize(0, 0);
      continue;
    }
    dx.b[q].noalias() = h_[q] * x.b[q];
    dx.b[q] *= -kI;
  }
}

MatrixXc lindblad_rhs(const DensityMatrix& rho, const Operator& H, const DissipatorSet& dissipators) {
  if (!(rho.space() == H.space())) throw Error(ErrorKind::InvalidDimension, "state and Hamiltonian spaces differ");
  return Generator(H, dissipators).apply(rho.matrix());
}

std::vector<double> top_level_leakage(const MatrixXc& rho, const HilbertSpace& space) {
  std::vector<double> leak(space.slots() > 1 ? space.slots() - 1 : 0, 0.0);
  for (Index i = 0; i < rho.rows(); ++i) {
    const double p = rho(i, i).real();
    for (std::size_t s = 1; s < space.slots(); ++s)
      if (space.level(i, s) >= space.dim(s) - 2) leak[s - 1] += p;
  }
  return leak;
}

// ---------------------------------------------------------------------------
// Integrators on block states.

namespace {

std::size_t entries(const Blocks& y) {
  std::size_t n = 0;
  for (std::size_t k = 0; k < y.b.size(); ++k)
    if (y.active[k]) n += std::size_t(y.b[k].size());
  return n;
}

void shape_like(Blocks& out, const Blocks& y) {
  out.active = y.active;
  out.b.resize(y.b.size());
  for (std::size_t k = 0; k < y.b.size(); ++k)
    if (y.active[k]) out.b[k].resize(y.b[k].rows(), y.b[k].cols());
    else out.b[k].resize(0, 0);
}

// out = y + h * sum_i a_i k_i, fused into one pass per block.
template <std::size_t... I, class... K>
void stage_impl(std::index_sequence<I...>, Blocks& out, const Blocks& y, double h,
                const std::array<double, sizeof...(K)>& a, const K&... k) {
  for (std::size_t b = 0; b < y.b.size(); ++b)
    if (y.active[b]) out.b[b] = y.b[b] + (((h * a[I]) * k.b[b]) + ...);
}

template <class... K>
void stage(Blocks& out, const Blocks& y, double h, const std::array<double, sizeof...(K)>& a, const K&... k) {
  stage_impl(std::index_sequence_for<K...>{}, out, y, h, a, k...);
}

double rms_norm(const Blocks& v, const Blocks& y, double rtol, double atol) {
  double sum = 0;
  for (std::size_t b = 0; b < y.b.size(); ++b)
    if (y.active[b]) sum += (v.b[b].array().abs() / (atol + rtol * y.b[b].array().abs())).square().sum();
  const auto n = entries(y);
  return n ? std::sqrt(sum / double(n)) : 0.0;
}

template <class Rhs>
class DormandPrince {
 public:
  DormandPrince(Rhs f, double rtol, double atol, std::size_t max_steps, EvolveStats& stats)
      : f_(std::move(f)), rtol_(rtol), atol_(atol), max_steps_(max_steps), stats_(stats) {}

  // Advances y from t to exactly t_end.
  void advance(Blocks& y, double& t, double t_end, double span) {
    if (t_end <= t) return;
    if (!started_) start(y, t_end - t, span);
    const double hmin = span * 1e-13;
    while (t < t_end) {
      if (++steps_ > max_steps_)
        throw Error(ErrorKind::Stiffness, "step budget exhausted; the problem looks stiff");
      if (h_ < hmin) throw Error(ErrorKind::Stiffness, "step size underflow at t = " + std::to_string(t));
      double h = h_;
      bool clipped = false;
      if (t + h >= t_end || t_end - (t + h) < hmin) {
        h = t_end - t;
        clipped = true;
      }
      const double err = attempt(y, h);
      const double fac11 = std::pow(err, 0.17);
      double fac = fac11 / std::pow(facold_, 0.04);
      fac = std::clamp(fac / 0.9, 0.1, 5.0);
      if (err <= 1) {
        facold_ = std::max(err, 1e-4);
        ++stats_.accepted_steps;
        stats_.error_estimate += err_max_;
        t = clipped ? t_end : t + h;
        std::swap(y, ynew_);
        std::swap(k1_, k7_);
        double hnew = h / fac;
        if (rejected_) hnew = std::min(hnew, h);
        if (clipped) hnew = std::max(hnew, h_);
        h_ = std::min(hnew, span);
        rejected_ = false;
      } else {
        ++stats_.rejected_steps;
        h_ = h / std::min(5.0, fac11 / 0.9);
        rejected_ = true;
      }
    }
  }

 private:
  void eval(const Blocks& x, Blocks& dx) {
    f_(x, dx);
    ++stats_.rhs_evaluations;
  }

  void start(const Blocks& y, double first, double span) {
    for (auto* b : {&k1_, &k2_, &k3_, &k4_, &k5_, &k6_, &k7_, &ytmp_, &ynew_, &err_}) shape_like(*b, y);
    eval(y, k1_);
    const double dny = rms_norm(y, y, rtol_, atol_);
    const double dnf = rms_norm(k1_, y, rtol_, atol_);
    double h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 * span : 0.01 * dny / dnf;
    h = std::min(h, first);
    stage(ytmp_, y, h, {1.0}, k1_);
    eval(ytmp_, k2_);
    for (std::size_t b = 0; b < y.b.size(); ++b)
      if (y.active[b]) err_.b[b] = k2_.b[b] - k1_.b[b];
    const double der2 = rms_norm(err_, y, rtol_, atol_) / h;
    const double der12 = std::max(der2, dnf);
    const double h1 = der12 <= 1e-15 ? std::max(1e-6 * span, h * 1e-3) : std::pow(0.01 / der12, 0.2);
    h_ = std::min({100 * h, h1, span});
    started_ = true;
  }

  double attempt(const Blocks& y, double h) {
    static constexpr double c21 = 1.0 / 5;
    static constexpr std::array<double, 2> a3{3.0 / 40, 9.0 / 40};
    static constexpr std::array<double, 3> a4{44.0 / 45, -56.0 / 15, 32.0 / 9};
    static constexpr std::array<double, 4> a5{19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729};
    static constexpr std::array<double, 5> a6{9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176,
                                              -5103.0 / 18656};
    static constexpr std::array<double, 5> b5{35.0 / 384, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84};
    static constexpr std::array<double, 6> e{71.0 / 57600,  -71.0 / 16695, 71.0 / 1920,
                                             -17253.0 / 339200, 22.0 / 525, -1.0 / 40};

    stage(ytmp_, y, h, {c21}, k1_);
    eval(ytmp_, k2_);
    stage(ytmp_, y, h, a3, k1_, k2_);
    eval(ytmp_, k3_);
    stage(ytmp_, y, h, a4, k1_, k2_, k3_);
    eval(ytmp_, k4_);
    stage(ytmp_, y, h, a5, k1_, k2_, k3_, k4_);
    eval(ytmp_, k5_);
    stage(ytmp_, y, h, a6, k1_, k2_, k3_, k4_, k5_);
    eval(ytmp_, k6_);
    stage(ynew_, y, h, b5, k1_, k3_, k4_, k5_, k6_);
    eval(ynew_, k7_);

    double sum = 0;
    err_max_ = 0;
    for (std::size_t b = 0; b < y.b.size(); ++b) {
      if (!y.active[b]) continue;
      err_.b[b] = h * (e[0] * k1_.b[b] + e[1] * k3_.b[b] + e[2] * k4_.b[b] + e[3] * k5_.b[b] +
                       e[4] * k6_.b[b] + e[5] * k7_.b[b]);
      const auto scale = atol_ + rtol_ * y.b[b].array().abs().max(ynew_.b[b].array().abs());
      sum += (err_.b[b].array().abs() / scale).square().sum();
      err_max_ = std::max(err_max_, err_.b[b].cwiseAbs().maxCoeff());
    }
    const auto n = entries(y);
    return n ? std::sqrt(sum / double(n)) : 0.0;
  }

  Rhs f_;
  double rtol_, atol_;
  std::size_t max_steps_;
  EvolveStats& stats_;
  Blocks k1_, k2_, k3_, k4_, k5_, k6_, k7_, ytmp_, ynew_, err_;
  double h_ = 0;
  double facold_ = 1e-4;
  double err_max_ = 0;
  bool started_ = false;
  bool rejected_ = false;
  std::size_t steps_ = 0;
};

template <class Rhs>
class ClassicalRK4 {
 public:
  ClassicalRK4(Rhs f, double dt, EvolveStats& stats) : f_(std::move(f)), dt_(dt), stats_(stats) {}

  void advance(Blocks& y, double& t, double t_end, double) {
    if (t_end <= t) return;
    if (k1_.b.empty()) for (auto* b : {&k1_, &k2_, &k3_, &k4_, &tmp_}) shape_like(*b, y);
    const auto n = std::max<long long>(1, (long long)std::ceil((t_end - t) / dt_ - 1e-9));
    const double h = (t_end - t) / double(n);
    for (long long s = 0; s < n; ++s) {
      eval(y, k1_);
      stage(tmp_, y, h, {0.5}, k1_);
      eval(tmp_, k2_);
      stage(tmp_, y, h, {0.5}, k2_);
      eval(tmp_, k3_);
      stage(tmp_, y, h, {1.0}, k3_);
      eval(tmp_, k4_);
      stage(tmp_, y, h, {1.0 / 6, 1.0 / 3, 1.0 / 3, 1.0 / 6}, k1_, k2_, k3_, k4_);
      std::swap(y, tmp_);
      ++stats_.accepted_steps;
    }
    t = t_end;
  }

 private:
  void eval(const Blocks& x, Blocks& dx) {
    f_(x, dx);
    ++stats_.rhs_evaluations;
  }

  Rhs f_;
  double dt_;
  EvolveStats& stats_;
  Blocks k1_, k2_, k3_, k4_, tmp_;
};

std::vector<double> record_grid(double duration, double record_every, const std::vector<double>& explicit_times) {
  if (!(duration > 0)) throw Error(ErrorKind::Domain, "duration must be positive");
  std::vector<double> grid;
  if (!explicit_times.empty()) {
    grid = explicit_times;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      if (grid[k] < 0 || grid[k] > duration * (1 + 1e-12))
        throw Error(ErrorKind::Domain, "record time outside the evolution window");
      if (k && !(grid[k] > grid[k - 1])) throw Error(ErrorKind::Domain, "record times must increase strictly");
      grid[k] = std::min(grid[k], duration);
    }
    return grid;
  }
  if (!(record_every > 0)) throw Error(ErrorKind::Domain, "record interval must be positive");
  const auto n = (long long)std::floor(duration / record_every + 1e-9);
  for (long long k = 0; k <= n; ++k) grid.push_back(std::min(duration, double(k) * record_every));
  return grid;
}

template <class Stepper>
void drive(Stepper& stepper, Blocks& y, double duration, const std::vector<double>& grid,
           const std::function<void(std::size_t, double, const Blocks&)>& on_record) {
  double t = 0;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    stepper.advance(y, t, grid[k], duration);
    on_record(k, grid[k], y);
  }
  stepper.advance(y, t, duration, duration);
}

double positivity_bound(const MatrixXc& rho) {
  for (double s : {1e-12, 1e-10, 1e-8, 1e-7})
    if (eigenvalues_above(rho, s)) return -s;
  return min_eigenvalue(rho);
}

Trajectory propagate(const DensityMatrix& rho0, const Generator& gen, double duration, const std::vector<double>& grid,
                     const EvolveOptions& opt, bool check_leakage) {
  const HilbertSpace& space = rho0.space();
  Trajectory traj;
  Blocks y = gen.split(rho0.matrix());
  const std::size_t keep = std::max<std::size_t>(1, opt.max_snapshots);
  const std::size_t stride = (grid.size() + keep - 1) / keep;

  auto snapshot = [&](double t, MatrixXc m) {
    traj.snapshot_times.push_back(opt.t0 + t);
    traj.snapshots.push_back(DensityMatrix::trusted(space, std::move(m)));
  };

  auto on_record = [&](std::size_t k, double t, const Blocks& x) {
    MatrixXc m = gen.merge(x);
    TrajectoryRecord r;
    r.time = opt.t0 + t;
    for (std::size_t s = 1; s < space.slots(); ++s) {
      double n = 0;
      for (Index i = 0; i < m.rows(); ++i) n += space.level(i, s) * m(i, i).real();
      r.occupations.push_back(n);
    }
    r.purity = purity(m);
    r.trace_defect = trace_defect(m);
    r.hermiticity_defect = hermiticity_defect(m);
    r.min_eigenvalue = opt.audit_positivity ? positivity_bound(m) : std::numeric_limits<double>::quiet_NaN();
    r.leakage = top_level_leakage(m, space);
    if (check_leakage)
      for (std::size_t j = 0; j < r.leakage.size(); ++j)
        if (r.leakage[j] > opt.leakage_limit)
          throw Error(ErrorKind::TruncationOverflow,
                      "mode " + std::to_string(j + 1) + " has population " + sci(r.leakage[j]) +
                          " in its top two Fock levels at t = " + sci(r.time) + " s; raise fock_dim for this mode");
    traj.times.push_back(r.time);
    traj.records.push_back(std::move(r));
    if (opt.observer) opt.observer(opt.t0 + t, DensityMatrix::trusted(space, m));
    const bool last = k + 1 == grid.size() && grid.back() == duration;
    if (k % stride == 0 || last) snapshot(t, std::move(m));
  };

  std::function<void(std::size_t, double, const Blocks&)> rec = on_record;
  auto rhs = [&gen](const Blocks& x, Blocks& dx) { gen.apply(x, dx); };
  if (opt.fixed_step > 0) {
    ClassicalRK4<decltype(rhs)> stepper(rhs, opt.fixed_step, traj.stats);
    drive(stepper, y, duration, grid, rec);
  } else {
    DormandPrince<decltype(rhs)> stepper(rhs, opt.rtol, opt.atol, opt.max_steps, traj.stats);
    drive(stepper, y, duration, grid, rec);
  }
  if (grid.empty() || grid.back() != duration) snapshot(duration, gen.merge(y));
  return traj;
}

}  // namespace

Trajectory evolve(const DensityMatrix& rho0, const SystemSpec& spec, const FrameConfig& frame, double duration,
                  bool coupling_on, double record_every, const EvolveOptions& options) {
  if (!(rho0.space() == spec.space())) throw Error(ErrorKind::InvalidDimension, "initial state does not match the system");
  const auto grid = record_grid(duration, record_every, options.record_times);
  const Generator gen = Generator::from_spec(spec, frame, coupling_on);
  return propagate(rho0, gen, duration, grid, options, true);
}

Trajectory evolve(const DensityMatrix& rho0, const Generator& generator, double duration, double record_every,
                  const EvolveOptions& options) {
  const auto grid = record_grid(duration, record_every, options.record_times);
  return propagate(rho0, generator, duration, grid, options, false);
}

PureTrajectory evolve_pure(const StateVector& psi0, const SystemSpec& spec, const FrameConfig& frame,
                           double duration, bool coupling_on, double record_every,
                           const PureEvolveOptions& opt) {
  if (!(psi0.space() == spec.space())) throw Error(ErrorKind::InvalidDimension, "initial state does not match the system");
  const auto grid = record_grid(duration, record_every, opt.record_times);
  const Generator gen = Generator::from_spec(spec, frame, coupling_on);
  if (gen.dissipative()) throw Error(ErrorKind::Domain, "state-vector evolution needs a dissipationless system");
  Blocks y = gen.split_pure(psi0.amplitudes());
  EvolveStats stats;
  std::vector<double> times, defects;
  auto on_record = [&](std::size_t, double t, const Blocks& x) {
    times.push_back(opt.t0 + t);
    const VectorXc v = gen.merge_pure(x);
    defects.push_back(std::abs(v.squaredNorm() - 1));
    if (opt.observer) opt.observer(opt.t0 + t, StateVector::normalized(psi0.space(), v));
  };
  std::function<void(std::size_t, double, const Blocks&)> rec = on_record;
  auto rhs = [&gen](const Blocks& x, Blocks& dx) { gen.apply_pure(x, dx); };
  if (opt.fixed_step > 0) {
    ClassicalRK4<decltype(rhs)> stepper(rhs, opt.fixed_step, stats);
    drive(stepper, y, duration, grid, rec);
  } else {
    DormandPrince<decltype(rhs)> stepper(rhs, opt.rtol, opt.atol, opt.max_steps, stats);
    drive(stepper, y, duration, grid, rec);
  }
  return {std::move(times), std::move(defects), StateVector::normalized(psi0.space(), gen.merge_pure(y)), stats};
}

}  // namespace ecs

#include "ecs/readout.hpp"

#include <Eigen/Sparse>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace ecs {

namespace {

using SparseXc = Eigen::SparseMatrix<Complex>;

constexpr double kLeakLimit = 1e-4;

SparseXc sparse_identity(Index n) {
  SparseXc id(n, n);
  id.setIdentity();
  return id;
}

// Single-slot operator lifted onto the product of `dims`.
SparseXc lift(const MatrixXc& op, std::size_t slot, const std::vector<int>& dims) {
  Index before = 1, after = 1;
  for (std::size_t s = 0; s < slot; ++s) before *= dims[s];
  for (std::size_t s = slot + 1; s < dims.size(); ++s) after *= dims[s];
  SparseXc mid = op.sparseView();
  SparseXc left = Eigen::kroneckerProduct(sparse_identity(before), mid);
  return Eigen::kroneckerProduct(left, sparse_identity(after));
}

void require_mode(const HilbertSpace& space, std::size_t mode) {
  if (space.slots() < 2) throw Error(ErrorKind::InvalidDimension, "conditional displacement needs a transmon and a mode");
  if (mode + 1 >= space.slots()) throw Error(ErrorKind::InvalidDimension, "mode index out of range");
}

double top_population(const VectorXc& psi, const HilbertSpace& space, std::size_t slot) {
  double p = 0;
  for (Index i = 0; i < psi.size(); ++i)
    if (space.level(i, slot) >= space.dim(slot) - 2) p += std::norm(psi(i));
  return p;
}

void check_leak(double p, std::size_t mode) {
  if (p > kLeakLimit)
    throw Error(ErrorKind::TruncationOverflow, "displacement pushes " + std::to_string(p) + " of mode " +
                                                   std::to_string(mode + 1) +
                                                   " into its top Fock levels; raise fock_dim");
}

// d x d block of D(beta) computed on a padded space, so entries are exact up to
// the padding leakage.
MatrixXc padded_displacement(int d, Complex beta) {
  const int pad = d + truncation_rule(std::abs(beta));
  return DisplacementFamily(pad).top_rows(beta, d).leftCols(d);
}

// Blocks D(q beta) for every transmon level q, sharing one padded family.
std::vector<MatrixXc> level_displacements(int d, Complex beta, int levels) {
  const DisplacementFamily family(d + truncation_rule(std::abs(beta) * (levels - 1)));
  std::vector<MatrixXc> out;
  for (int q = 0; q < levels; ++q) out.push_back(family.top_rows(double(q) * beta, d).leftCols(d));
  return out;
}

// x <- (1 x op x 1) x on a vector laid out as [before][d][after].
void apply_on_slot(const MatrixXc& op, Index before, Index after, Complex* x) {
  const Index d = op.rows();
  for (Index b = 0; b < before; ++b) {
    Eigen::Map<MatrixXc> block(x + b * d * after, after, d);
    block = (block * op.transpose()).eval();
  }
}

double c(const ECSCoefficients& e, int k) { return e.c[k]; }

}  // namespace

DensityMatrix conditional_displacement(const DensityMatrix& rho, std::size_t mode, Complex beta) {
  const HilbertSpace& space = rho.space();
  require_mode(space, mode);
  if (beta == Complex(0)) return rho;
  const int nq = space.dim(0);
  const Index m = space.total() / nq;
  std::vector<int> mode_dims(space.dims().begin() + 1, space.dims().end());
  const int d = space.dim(mode + 1);
  std::vector<SparseXc> ops;
  for (const auto& op : level_displacements(d, beta, nq)) ops.push_back(lift(op, mode, mode_dims));
  MatrixXc out(space.total(), space.total());
  for (int q = 0; q < nq; ++q)
    for (int p = 0; p < nq; ++p) {
      MatrixXc x = rho.matrix().block(q * m, p * m, m, m) * SparseXc(ops[p].adjoint());
      MatrixXc y = (x.adjoint() * SparseXc(ops[q].adjoint())).adjoint();
      out.block(q * m, p * m, m, m) = y;
    }
  // Weight pushed past the cutoff is gone from `out`; count it with the top levels.
  const double kept = out.trace().real();
  double leak = 1 - kept;
  for (Index i = 0; i < out.rows(); ++i)
    if (space.level(i, mode + 1) >= d - 2) leak += out(i, i).real();
  check_leak(leak, mode);
  out /= kept;
  return DensityMatrix::trusted(space, std::move(out));
}

StateVector conditional_displacement(const StateVector& psi, std::size_t mode, Complex beta) {
  const HilbertSpace& space = psi.space();
  require_mode(space, mode);
  if (beta == Complex(0)) return psi;
  const int nq = space.dim(0);
  const Index m = space.total() / nq;
  std::vector<int> mode_dims(space.dims().begin() + 1, space.dims().end());
  const int d = space.dim(mode + 1);
  const auto ops = level_displacements(d, beta, nq);
  Index before = 1, after = 1;
  for (std::size_t k = 0; k < mode; ++k) before *= mode_dims[k];
  for (std::size_t k = mode + 1; k < mode_dims.size(); ++k) after *= mode_dims[k];
  VectorXc out = psi.amplitudes();
  for (int q = 1; q < nq; ++q) apply_on_slot(ops[q], before, after, out.data() + q * m);
  check_leak(1 - out.squaredNorm() + top_population(out, space, mode + 1), mode);
  return StateVector::normalized(space, std::move(out));
}

void validate(const ECSCoefficients& e) {
  double norm = 0;
  for (double v : e.c) {
    if (!(v >= 0)) throw Error(ErrorKind::Domain, "ECS coefficients must be non-negative");
    norm += v * v;
  }
  if (std::abs(norm - 1) > 1e-10) throw Error(ErrorKind::Domain, "ECS coefficients must satisfy sum c_k^2 = 1");
  if (e.theta[0] != 0) throw Error(ErrorKind::Domain, "theta_0 is fixed to 0 by gauge");
}

StateVector ecs_state(const ECSCoefficients& e, int fock_dim) {
  validate(e);
  const VectorXc zero = coherent_state(fock_dim, 0).amplitudes();
  const VectorXc alpha = coherent_state(fock_dim, e.alpha).amplitudes();
  const VectorXc* branch[2] = {&zero, &alpha};
  VectorXc psi = VectorXc::Zero(Index(fock_dim) * fock_dim);
  for (int k = 0; k < 4; ++k) {
    const Complex w = e.c[k] * std::polar(1.0, e.theta[k]);
    psi += w * Eigen::kroneckerProduct(*branch[k / 2], *branch[k % 2]).eval();
  }
  return StateVector::normalized(HilbertSpace{fock_dim, fock_dim}, std::move(psi));
}

std::string ReadoutSetting::label() const {
  auto part = [](int b) { return b == 0 ? std::string("0") : b > 0 ? std::string("+a") : std::string("-a"); };
  return "(" + part(beta_i) + "," + part(beta_j) + ")";
}

std::vector<ReadoutSetting> nine_settings(double phi) {
  return {{1, 1, phi},  {-1, -1, phi}, {1, -1, phi}, {-1, 1, phi}, {1, 0, phi},
          {-1, 0, phi}, {0, 1, phi},   {0, -1, phi}, {0, 0, phi}};
}

double ReadoutRecord::at(int beta_i, int beta_j, double phi) const {
  auto it = values.find({beta_i, beta_j, phi});
  if (it == values.end())
    throw Error(ErrorKind::IncompleteRecord, "readout record lacks setting " + ReadoutSetting{beta_i, beta_j, phi}.label());
  return it->second;
}

namespace {

void require_setting(const ReadoutSetting& s) {
  auto ok = [](int b) { return b == -1 || b == 0 || b == 1; };
  if (!ok(s.beta_i) || !ok(s.beta_j)) throw Error(ErrorKind::UnknownSetting, "displacements must be +a, -a or 0");
  if (!std::isfinite(s.phi)) throw Error(ErrorKind::UnknownSetting, "readout phase must be finite");
}

void require_two_modes(const HilbertSpace& space) {
  if (space.slots() != 2) throw Error(ErrorKind::InvalidDimension, "readout expects a two-mode state");
}

}  // namespace

double readout_run(const DensityMatrix& prepared, Complex alpha, const ReadoutSetting& s) {
  require_setting(s);
  const HilbertSpace& space = prepared.space();
  require_two_modes(space);
  const int di = space.dim(0), dj = space.dim(1);
  const MatrixXc Di = padded_displacement(di, double(s.beta_i) * alpha);
  const MatrixXc Dj = padded_displacement(dj, double(s.beta_j) * alpha);
  // Tr[rho (Di x Dj)] = sum_{a,c} Di(c,a) Tr[rho_{ac} Dj], rho_{ac} the (a,c) block.
  const MatrixXc& r = prepared.matrix();
  Complex tr = 0;
  for (int a = 0; a < di; ++a)
    for (int cc = 0; cc < di; ++cc) {
      if (Di(cc, a) == Complex(0)) continue;
      const auto block = r.block(Index(a) * dj, Index(cc) * dj, dj, dj);
      tr += Di(cc, a) * block.cwiseProduct(Dj.transpose()).sum();
    }
  return (std::polar(1.0, s.phi) * tr).real();
}

double readout_run(const StateVector& prepared, Complex alpha, const ReadoutSetting& s) {
  require_setting(s);
  require_two_modes(prepared.space());
  const int di = prepared.space().dim(0), dj = prepared.space().dim(1);
  // Room for the displaced branches, then the ancilla in front. A dimension d holds
  // coherent states up to |a| = sqrt(d + 4) - 3; a displaced copy needs that plus |alpha|.
  auto room = [&](int d) {
    const double r = std::max(0.0, std::sqrt(d + 4.0) - 3);
    return std::max(d + 1, truncation_rule(r + std::abs(alpha)));
  };
  const int pi = room(di), pj = room(dj);
  const HilbertSpace space{2, pi, pj};
  VectorXc psi = VectorXc::Zero(space.total());
  const Complex a0 = 1 / std::numbers::sqrt2, a1 = std::polar(1 / std::numbers::sqrt2, s.phi);
  for (int a = 0; a < di; ++a)
    for (int b = 0; b < dj; ++b) {
      const Complex v = prepared.amplitudes()(Index(a) * dj + b);
      psi(Index(a) * pj + b) = a0 * v;
      psi(space.stride(0) + Index(a) * pj + b) = a1 * v;
    }
  StateVector state(space, std::move(psi));
  state = conditional_displacement(state, 0, double(s.beta_i) * alpha);
  state = conditional_displacement(state, 1, double(s.beta_j) * alpha);
  const Index m = space.stride(0);
  const auto& v = state.amplitudes();
  return 2 * v.head(m).dot(v.tail(m)).real();
}

ReadoutRecord measure_record(const DensityMatrix& prepared, Complex alpha, double phi) {
  ReadoutRecord rec{alpha, {}};
  for (const auto& s : nine_settings(phi)) rec.values[s] = readout_run(prepared, alpha, s);
  return rec;
}

ReadoutRecord measure_record(const StateVector& prepared, Complex alpha, double phi) {
  ReadoutRecord rec{alpha, {}};
  for (const auto& s : nine_settings(phi)) rec.values[s] = readout_run(prepared, alpha, s);
  return rec;
}

double predict_sigma_x(const ECSCoefficients& e, const ReadoutSetting& s, Warnings* warnings) {
  validate(e);
  require_setting(s);
  if (std::abs(e.alpha) < 4)
    warn(warnings, "|alpha| = " + std::to_string(std::abs(e.alpha)) +
                       " < 4: coherent branches overlap and the closed forms are approximate");
  // Branch k = 2 x_i + x_j, x = 1 when the mode holds alpha. Shifting branch l by the
  // setting lands on branch k, contributing c_k c_l e^{i(theta_l - theta_k)}.
  Complex sum = 0;
  for (int l = 0; l < 4; ++l) {
    const int xi = l / 2 + s.beta_i, xj = l % 2 + s.beta_j;
    if (xi < 0 || xi > 1 || xj < 0 || xj > 1) continue;
    const int k = 2 * xi + xj;
    sum += c(e, k) * c(e, l) * std::polar(1.0, e.theta[l] - e.theta[k]);
  }
  return (std::polar(1.0, s.phi) * sum).real();
}

ReadoutRecord predict_record(const ECSCoefficients& e, double phi, Warnings* warnings) {
  ReadoutRecord rec{e.alpha, {}};
  for (const auto& s : nine_settings(phi)) rec.values[s] = predict_sigma_x(e, s, warnings);
  return rec;
}

ReadoutRecord sample_shots(const ReadoutRecord& exact, std::uint64_t shots, std::uint64_t seed) {
  if (shots == 0) throw Error(ErrorKind::Domain, "shot count must be positive");
  std::mt19937_64 rng(seed);
  ReadoutRecord out{exact.alpha, {}};
  for (const auto& [setting, v] : exact.values) {
    const double p = std::clamp((1 + v) / 2, 0.0, 1.0);
    std::binomial_distribution<std::uint64_t> dist(shots, p);
    out.values[setting] = 2 * double(dist(rng)) / double(shots) - 1;
  }
  return out;
}

namespace {

constexpr double kPhaseFloor = 1e-12;

// Two settings at pi/4 sharing one product c_a c_b e^{i t}: v+ ~ cos(pi/4 - t), v- ~ cos(pi/4 + t).
Complex phased_product(double plus, double minus) {
  return Complex(plus + minus, plus - minus) / std::numbers::sqrt2;
}

// |p1|^2 + |p2|^2 from z = p1 + p2 (read off two settings) and the known p1 p2.
double pair_norm(double plus, double minus, Complex product) {
  const Complex z = Complex(plus + minus, plus - minus) / std::numbers::sqrt2;
  return 0.5 * (std::norm(z) + std::abs(z * z - 4.0 * product));
}

}  // namespace

Reconstruction reconstruct(const ReadoutRecord& rec) {
  const double phi = std::numbers::pi / 4;
  Reconstruction r;
  const Complex p03 = phased_product(rec.at(1, 1, phi), rec.at(-1, -1, phi));
  const Complex p12 = phased_product(rec.at(1, -1, phi), rec.at(-1, 1, phi));
  r.c0c3 = std::abs(p03);
  r.c1c2 = std::abs(p12);
  r.theta3 = std::arg(p03);
  r.theta2_minus_theta1 = std::arg(p12);
  r.theta3_undetermined = r.c0c3 < kPhaseFloor;
  r.theta21_undetermined = r.c1c2 < kPhaseFloor;
  if (r.theta3_undetermined) r.theta3 = 0;
  if (r.theta21_undetermined) r.theta2_minus_theta1 = 0;
  // (a,0)/(-a,0) carry c0c2 e^{i theta2} + c1c3 e^{i(theta3-theta1)}; the product of the
  // two terms is p03 p12. (0,a)/(0,-a) pair c0c1 e^{i theta1} with c2c3 e^{i(theta3-theta2)}.
  r.cross_f = pair_norm(rec.at(1, 0, phi), rec.at(-1, 0, phi), p03 * p12);
  r.cross_g = pair_norm(rec.at(0, 1, phi), rec.at(0, -1, phi), p03 * std::conj(p12));
  return r;
}

BellVerdict verify_bell(const ReadoutRecord& rec, double tol) {
  if (!(tol > 0)) throw Error(ErrorKind::Domain, "verification tolerance must be positive");
  const Reconstruction r = reconstruct(rec);
  const double x00 = rec.at(0, 0, std::numbers::pi / 4);
  BellVerdict v;
  v.residuals.c1c2 = r.c1c2;
  v.residuals.cross_f = r.cross_f;
  v.residuals.cross_g = r.cross_g;
  v.residuals.consistency = std::abs(std::numbers::sqrt2 * x00 - 2 * r.c0c3);
  v.is_bell = r.c0c3 > tol && v.residuals.c1c2 < tol && v.residuals.cross_f < tol && v.residuals.cross_g < tol &&
              v.residuals.consistency < tol;
  if (v.is_bell) v.c0 = v.c3 = std::pow(2.0, -0.25) * std::sqrt(std::max(0.0, x00));
  return v;
}

}  // namespace ecs

#include "ecs/metrics.hpp"

#include <cmath>
#include <numbers>

namespace ecs {

namespace {

constexpr double kEigenFloor = 1e-12;

Eigen::VectorXd spectrum(const MatrixXc& m) {
  return Eigen::SelfAdjointEigenSolver<MatrixXc>(m, Eigen::EigenvaluesOnly).eigenvalues();
}

void require_single_mode(const HilbertSpace& space) {
  if (space.slots() != 1) throw Error(ErrorKind::InvalidDimension, "expected a single-mode state");
}

}  // namespace

double fidelity(const DensityMatrix& rho, const StateVector& target) {
  if (!(rho.space() == target.space())) throw Error(ErrorKind::InvalidDimension, "fidelity: space mismatch");
  const auto& v = target.amplitudes();
  const double overlap = v.dot(rho.matrix() * v).real();
  return std::sqrt(std::clamp(overlap, 0.0, 1.0));
}

double fidelity(const StateVector& psi, const StateVector& target) {
  if (!(psi.space() == target.space())) throw Error(ErrorKind::InvalidDimension, "fidelity: space mismatch");
  return std::min(1.0, std::abs(target.amplitudes().dot(psi.amplitudes())));
}

double log_negativity(const DensityMatrix& rho, std::size_t slot) {
  const auto ev = spectrum(partial_transpose(rho.matrix(), rho.space(), slot));
  double neg = 0;
  for (Index i = 0; i < ev.size(); ++i)
    if (ev(i) < 0) neg -= ev(i);
  return std::log2(2 * neg + 1);
}

double von_neumann_entropy(const DensityMatrix& rho) {
  const auto ev = spectrum(rho.matrix());
  double s = 0;
  for (Index i = 0; i < ev.size(); ++i)
    if (ev(i) > kEigenFloor) s -= ev(i) * std::log(ev(i));
  return s;
}

double conditional_entropy(const DensityMatrix& rho, std::size_t condition_on) {
  if (rho.space().slots() != 2) throw Error(ErrorKind::InvalidDimension, "conditional entropy needs a bipartite state");
  return von_neumann_entropy(rho) - von_neumann_entropy(partial_trace(rho, {condition_on}));
}

double occupation(const DensityMatrix& rho, std::size_t slot) {
  const HilbertSpace& space = rho.space();
  detail::require_slot(space, slot);
  double n = 0;
  for (Index i = 0; i < space.total(); ++i) n += space.level(i, slot) * rho.matrix()(i, i).real();
  return n;
}

Eigen::VectorXd schmidt_coefficients(const StateVector& psi) {
  const HilbertSpace& space = psi.space();
  if (space.slots() != 2) throw Error(ErrorKind::InvalidDimension, "Schmidt decomposition needs a bipartite state");
  // Column-major reshape gives the transpose of the coefficient matrix; same singular values.
  const MatrixXc m = psi.amplitudes().reshaped(space.dim(1), space.dim(0));
  return Eigen::JacobiSVD<MatrixXc>(m).singularValues();
}

double log_negativity(const StateVector& psi) {
  return 2 * std::log2(schmidt_coefficients(psi).sum());
}

double entanglement_entropy(const StateVector& psi) {
  const Eigen::VectorXd s = schmidt_coefficients(psi);
  double e = 0;
  for (Index i = 0; i < s.size(); ++i) {
    const double p = s(i) * s(i);
    if (p > kEigenFloor) e -= p * std::log(p);
  }
  return e;
}

double conditional_entropy(const StateVector& psi) { return -entanglement_entropy(psi); }

double occupation(const StateVector& psi, std::size_t slot) {
  const HilbertSpace& space = psi.space();
  detail::require_slot(space, slot);
  double n = 0;
  for (Index i = 0; i < space.total(); ++i) n += space.level(i, slot) * std::norm(psi.amplitudes()(i));
  return n;
}

double WignerGrid::integral() const {
  const double dre = re.size() > 1 ? re(1) - re(0) : 0;
  const double dim = im.size() > 1 ? im(1) - im(0) : 0;
  return values.sum() * dre * dim;
}

namespace {

Complex displaced_parity(const MatrixXc& rho, const DisplacementFamily& family, Complex alpha) {
  const Index d = rho.rows();
  const MatrixXc top = family.top_rows(alpha, d);
  const MatrixXc y = rho * top;
  Complex w = 0;
  for (Index k = 0; k < top.cols(); ++k) {
    const Complex diag = top.col(k).dot(y.col(k));
    w += (k % 2 ? -1.0 : 1.0) * diag;
  }
  return 2 / std::numbers::pi * w;
}

}  // namespace

WignerGrid wigner(const DensityMatrix& rho, const WignerSpec& spec, Warnings* warnings) {
  require_single_mode(rho.space());
  if (spec.resolution < 2) throw Error(ErrorKind::Domain, "Wigner grid needs at least 2 points per axis");
  if (!(spec.re_max > spec.re_min) || !(spec.im_max > spec.im_min))
    throw Error(ErrorKind::Domain, "Wigner grid ranges must be increasing");
  WignerGrid g;
  g.spec = spec;
  g.re = Eigen::VectorXd::LinSpaced(spec.resolution, spec.re_min, spec.re_max);
  g.im = Eigen::VectorXd::LinSpaced(spec.resolution, spec.im_min, spec.im_max);
  g.values.resize(spec.resolution, spec.resolution);
  double rmax = 0;
  for (double x : {spec.re_min, spec.re_max})
    for (double y : {spec.im_min, spec.im_max}) rmax = std::max(rmax, std::hypot(x, y));
  const int d = rho.space().dim(0);
  const DisplacementFamily family(d + truncation_rule(rmax));
  int unreliable = 0;
  for (int i = 0; i < spec.resolution; ++i)
    for (int j = 0; j < spec.resolution; ++j) {
      const Complex a(g.re(j), g.im(i));
      const double r = std::abs(a);
      if (r * r + 6 * r + 5 > d) ++unreliable;
      const Complex w = displaced_parity(rho.matrix(), family, a);
      g.values(i, j) = w.real();
      g.imaginary_residue = std::max(g.imaginary_residue, std::abs(w.imag()));
    }
  if (unreliable)
    warn(warnings, std::to_string(unreliable) + " Wigner grid points lie where |a|^2 + 6|a| + 5 exceeds fock_dim " +
                       std::to_string(d) + "; values there reflect the truncated state");
  return g;
}

double wigner_at(const DensityMatrix& rho, Complex alpha) {
  require_single_mode(rho.space());
  const int d = rho.space().dim(0);
  const DisplacementFamily family(d + truncation_rule(std::abs(alpha)));
  return displaced_parity(rho.matrix(), family, alpha).real();
}

std::vector<IdealPoint> ideal_curves(double g_tilde, const std::vector<double>& times) {
  std::vector<IdealPoint> out;
  for (double t : times) {
    const double x = std::pow(g_tilde * t, 2);
    out.push_back({t, x / 2, std::log2(2 / (std::exp(-x) + 1))});
  }
  return out;
}

}  // namespace ecs

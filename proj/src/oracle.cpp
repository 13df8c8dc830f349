#include "ecs/oracle.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <chrono>
#include <cmath>

namespace ecs {

namespace {

MatrixXc vec(const MatrixXc& m) { return m.reshaped(m.size(), 1); }

MatrixXc unvec(const MatrixXc& v, Index d) { return v.reshaped(d, d); }

MatrixXc gaussian(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  MatrixXc m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = Complex(n(rng), n(rng));
  return m;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

MatrixXc dense_liouvillian(const Operator& H, const DissipatorSet& dissipators) {
  const Index d = H.space().total();
  const MatrixXc id = MatrixXc::Identity(d, d);
  const Complex i(0, 1);
  MatrixXc L = -i * (Eigen::kroneckerProduct(id, H.matrix()).eval() -
                     Eigen::kroneckerProduct(H.matrix().transpose(), id).eval());
  for (const auto& ch : dissipators.channels) {
    const MatrixXc& J = ch.jump.matrix();
    const MatrixXc jj = J.adjoint() * J;
    L += ch.rate * (Eigen::kroneckerProduct(J.conjugate(), J).eval() -
                    0.5 * Eigen::kroneckerProduct(id, jj).eval() -
                    0.5 * Eigen::kroneckerProduct(jj.transpose(), id).eval());
  }
  return L;
}

MatrixXc pade_expm(const MatrixXc& liouvillian, const MatrixXc& rho0, double t) {
  const MatrixXc prop = (liouvillian * t).exp();
  return unvec(prop * vec(rho0), rho0.rows());
}

MatrixXc taylor_expmv(const MatrixXc& liouvillian, const MatrixXc& rho0, double t) {
  const double norm1 = liouvillian.cwiseAbs().colwise().sum().maxCoeff() * std::abs(t);
  const int steps = std::max(1, int(std::ceil(norm1)));
  const double h = t / steps;
  MatrixXc v = vec(rho0);
  for (int s = 0; s < steps; ++s) {
    MatrixXc term = v;
    MatrixXc acc = v;
    // ||hL|| <= 1, so the series terms fall at least as 1/k!.
    for (int k = 1; k < 60; ++k) {
      term = (liouvillian * term) * (h / k);
      acc += term;
      if (term.cwiseAbs().maxCoeff() <= 1e-18 * acc.cwiseAbs().maxCoeff()) break;
    }
    v = std::move(acc);
  }
  return unvec(v, rho0.rows());
}

MatrixXc exact_evolution(const MatrixXc& liouvillian, const MatrixXc& rho0, double t) {
  if (rho0.rows() <= 16) return pade_expm(liouvillian, rho0, t);
  return taylor_expmv(liouvillian, rho0, t);
}

RandomInstance random_instance(const HilbertSpace& space, std::mt19937_64& rng, std::size_t channels) {
  const Index d = space.total();
  MatrixXc g = gaussian(d, d, rng);
  MatrixXc h = (g + g.adjoint()) / (2 * std::sqrt(double(d)));
  DissipatorSet set;
  std::uniform_real_distribution<double> rate(0.05, 0.3);
  for (std::size_t k = 0; k < channels; ++k)
    set.add(rate(rng), Operator(space, gaussian(d, d, rng) / std::sqrt(double(d))), "random " + std::to_string(k));
  MatrixXc r = gaussian(d, d, rng);
  MatrixXc rho = r * r.adjoint();
  rho /= rho.trace().real();
  rho = (rho + rho.adjoint()) / 2;
  return {Operator(space, h), std::move(set), DensityMatrix(space, rho)};
}

OracleReport oracle_check(std::uint64_t seed) {
  OracleReport report;
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);

  EvolveOptions opts;
  opts.rtol = 1e-11;
  opts.atol = 1e-13;
  opts.audit_positivity = false;
  opts.max_snapshots = 1;

  auto run_case = [&](std::string name, const Operator& H, const DissipatorSet& diss, const DensityMatrix& rho0,
                      double t) {
    const auto t0 = std::chrono::steady_clock::now();
    Generator gen(H, diss);
    const Trajectory traj = evolve(rho0, gen, t, t, opts);
    const MatrixXc exact = exact_evolution(dense_liouvillian(H, diss), rho0.matrix(), t);
    OracleCase c;
    c.name = std::move(name);
    c.dim = rho0.space().total();
    c.blocks = gen.levels();
    c.max_abs_error = (traj.final_state().matrix() - exact).cwiseAbs().maxCoeff();
    c.seconds = seconds_since(t0);
    report.max_abs_error = std::max(report.max_abs_error, c.max_abs_error);
    report.cases.push_back(std::move(c));
  };

  for (const HilbertSpace& space : {HilbertSpace{3, 2, 2}, HilbertSpace{2, 3, 4}, HilbertSpace{3, 4, 4}}) {
    const RandomInstance inst = random_instance(space, rng);
    run_case("random " + space.describe(), inst.H, inst.dissipators, inst.rho0, 1.0);
  }

  // Transmon and two modes with every dissipation channel switched on, scaled so that
  // the dense propagator stays cheap.
  SystemSpec spec;
  spec.transmon.E_C = 1e6;
  spec.transmon.T1 = 2e-6;
  spec.transmon.T2 = 1e-6;
  spec.temperature = 1e-3;
  const double two_pi = 2 * std::numbers::pi;
  spec.modes = {ModeSpec{ModeKind::Phonon, two_pi * 10e6, two_pi * 1e6, 50, 0, 4},
                ModeSpec{ModeKind::Phonon, two_pi * 10.3e6, two_pi * 0.8e6, 80, 0, 4}};
  FrameConfig frame;
  frame.omega_ac = two_pi * 10e6;
  frame.active_modes = {0};  // mode 2 stays coupled off resonance
  frame.rwa_drop_detuned = false;
  frame.qubit_detuning = two_pi * 0.3e6;
  const Operator H = build_hamiltonian(spec, frame, true);
  const DissipatorSet diss = build_dissipators(spec);
  MatrixXc rho0 = initial_state(spec).matrix();
  // Put coherence between transmon levels so that every block is exercised.
  MatrixXc u = MatrixXc::Identity(3, 3);
  u.topLeftCorner(2, 2) << 1, -1, 1, 1;
  u.topLeftCorner(2, 2) /= std::sqrt(2.0);
  const Operator U = embed(u, 0, spec.space());
  rho0 = U.matrix() * rho0 * U.matrix().adjoint();
  run_case("transmon+2 modes " + spec.space().describe(), H, diss, DensityMatrix::trusted(spec.space(), rho0),
           0.3e-6);

  report.seconds = seconds_since(start);
  return report;
}

}  // namespace ecs

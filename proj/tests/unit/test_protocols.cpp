#include "support.hpp"

#include <limits>
#include <numbers>

#include "ecs/metrics.hpp"
#include "ecs/protocols.hpp"

using namespace ecs;
using ecs::test::max_abs;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kInf = std::numeric_limits<double>::infinity();

SystemSpec magnons(int dim, double f2 = 1e9) {
  SystemSpec s;
  s.transmon.T1 = s.transmon.T2 = kInf;
  s.modes.push_back({ModeKind::Magnon, 2 * kPi * 1e9, 2 * kPi * 2e6, kInf, 0, dim});
  s.modes.push_back({ModeKind::Magnon, 2 * kPi * f2, 2 * kPi * 2e6, kInf, 0, dim});
  return s;
}

StateVector ground(const SystemSpec& s) { return basis_state(s.space(), std::vector<int>(s.space().slots(), 0)); }

ProtocolOptions tight() {
  ProtocolOptions o;
  o.evolve.rtol = 1e-10;
  o.evolve.atol = 1e-12;
  return o;
}

// Explicit pre-measurement state (|0>|0,0> + |1>|a,a>)/sqrt2 on a 3-level transmon.
StateVector ghz(Complex a, int d) {
  const VectorXc z = ecs::test::fock_series(d, 0), c = ecs::test::fock_series(d, a);
  VectorXc v = VectorXc::Zero(3 * d * d);
  v.segment(0, d * d) = Eigen::kroneckerProduct(z, z).eval();
  v.segment(d * d, d * d) = Eigen::kroneckerProduct(c, c).eval();
  return StateVector::normalized(HilbertSpace{3, d, d}, v);
}

double sq(double x) { return x * x; }

}  // namespace

TEST(QubitUnitary, FullTurnLeavesDensityUnchanged) {
  std::mt19937_64 rng(1);
  const DensityMatrix rho = ecs::test::random_density(HilbertSpace{3, 3}, rng);
  const auto out = qubit_unitary(rho, qubit_matrix(QubitPulse{Axis::Y, 4 * kPi}));  // 2 pi flips the sign against level 2
  EXPECT_LT(max_abs(out.matrix() - rho.matrix()), 1e-14);
}

TEST(QubitUnitary, PrepareAndRotate) {
  const HilbertSpace s{3, 2};
  const auto plus = qubit_unitary(DensityMatrix::pure(basis_state(s, {0, 0})), qubit_matrix(PrepareSuperposition{0}));
  const MatrixXc q = partial_trace(plus, {0}).matrix();
  MatrixXc ref = MatrixXc::Zero(3, 3);
  ref.topLeftCorner(2, 2).setConstant(0.5);
  EXPECT_LT(max_abs(q - ref), 1e-15);

  const MatrixXc r = qubit_matrix(QubitPulse{Axis::Y, kPi / 2});
  const StateVector once = qubit_unitary(basis_state(s, {0, 0}), r);
  const StateVector twice = qubit_unitary(once, r);
  EXPECT_NEAR(std::abs(twice.amplitudes()(2)), 1, 1e-12);  // |1,0>
  // Level 2 is untouched.
  const StateVector two = qubit_unitary(basis_state(s, {2, 1}), r);
  EXPECT_EQ(two.amplitudes()(5), Complex(1));
  EXPECT_THROW(qubit_matrix(QubitPulse{Axis::X, std::nan("")}), Error);
}

TEST(ProjectQubit, ProductStates) {
  std::mt19937_64 rng(2);
  const DensityMatrix m = ecs::test::random_density(HilbertSpace{3, 3}, rng);
  MatrixXc q0 = MatrixXc::Zero(3, 3);
  q0(0, 0) = 1;
  const DensityMatrix rho(HilbertSpace{3, 3, 3}, Eigen::kroneckerProduct(q0, m.matrix()).eval());
  const auto p = project_qubit(rho, ProjectQubit::level(0).state);
  EXPECT_NEAR(p.probability, 1, 1e-15);
  EXPECT_LT(max_abs(p.modes.matrix() - m.matrix()), 1e-15);
  try {
    project_qubit(rho, ProjectQubit::level(1).state);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ImpossibleOutcome);
  }
}

TEST(ProjectQubit, GhzOnPlusGivesBell) {
  const double a = 3;
  const int d = truncation_rule(a);
  VectorXc plus(2);
  plus << std::sqrt(0.5), std::sqrt(0.5);
  const StateVector g = ghz(a, d);
  const auto pure = project_qubit(g, plus);
  const auto mixed = project_qubit(DensityMatrix::pure(g), plus);
  const StateVector target = ideal_target(TargetKind::Bell, a, 1, 0, d, d);
  EXPECT_NEAR(fidelity(pure.modes, target), 1, 1e-8);
  EXPECT_NEAR(fidelity(mixed.modes, target), 1, 1e-8);
  EXPECT_NEAR(pure.probability, (2 + 2 * std::exp(-a * a)) / 4, 1e-8);
  EXPECT_NEAR(mixed.probability, pure.probability, 1e-12);
}

TEST(BellSequence, Structure) {
  const SystemSpec s = magnons(10);
  const auto seq = bell_sequence(s, 2.0);
  ASSERT_EQ(seq.size(), 4u);
  EXPECT_TRUE(std::holds_alternative<PrepareSuperposition>(seq[0]));
  const auto& w = std::get<InteractionWindow>(seq[1]);
  EXPECT_NEAR(w.tau, 2 / (2 * kPi * 2e6), 1e-18);
  EXPECT_NEAR(w.tau * 1e6, 0.159, 1e-3);
  EXPECT_DOUBLE_EQ(w.omega_ac, s.modes[0].omega);
  EXPECT_TRUE(std::holds_alternative<QubitPulse>(seq[2]));
  EXPECT_EQ(std::get<ProjectQubit>(seq[3]).label, "+");
  EXPECT_EQ(std::get<ProjectQubit>(bell_sequence(s, 2.0, 0, 1)[3]).label, "-");
  try {
    bell_sequence(magnons(10, 1.5e9), 2.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Sequencing);
    EXPECT_NE(std::string(e.what()).find("noon"), std::string::npos);
  }
  EXPECT_THROW(bell_sequence(s, 2.0, 0, 2), Error);
}

TEST(BellSequence, ZeroAlphaLeavesVacuum) {
  const SystemSpec s = magnons(6);
  const auto r = run_protocol(bell_sequence(s, 0.0), s, ground(s));
  EXPECT_NEAR(fidelity(r.final_two_mode_state, basis_state(s.mode_space(), {0, 0})), 1, 1e-12);
}

TEST(Targets, BellNormalizationAndOrthogonality) {
  const double a = 3;
  const int d = truncation_rule(a) + 10;
  const StateVector p = ideal_target(TargetKind::Bell, a, 1, 0, d, d);
  const StateVector m = ideal_target(TargetKind::Bell, a, -1, 0, d, d);
  const double Np = std::sqrt(2 * (1 + std::exp(-a * a)));
  EXPECT_NEAR(std::abs(p.amplitudes()(0)), (1 + std::exp(-a * a)) / Np, 1e-9);
  // Brute-force Fock expansion of both targets.
  const VectorXc z = ecs::test::fock_series(d, 0), c = ecs::test::fock_series(d, a);
  const VectorXc zz = Eigen::kroneckerProduct(z, z).eval(), cc = Eigen::kroneckerProduct(c, c).eval();
  const VectorXc bp = (zz + cc) / Np;
  const VectorXc bm = (zz - cc) / std::sqrt(2 * (1 - std::exp(-a * a)));
  EXPECT_NEAR(std::abs(bp.dot(bm)), 0, 1e-12);
  EXPECT_NEAR(std::abs(p.amplitudes().dot(m.amplitudes())), std::abs(bp.dot(bm)), 1e-9);
  EXPECT_NEAR(std::abs(p.amplitudes().dot(bp)), 1, 1e-9);
  EXPECT_EQ(max_abs(ideal_target(TargetKind::Bell, 0, 1, 0, 5, 5).amplitudes() -
                    basis_state(HilbertSpace{5, 5}, {0, 0}).amplitudes()),
            0);
  EXPECT_THROW(ideal_target(TargetKind::Bell, 1, 0, 0, 10, 10), Error);
}

TEST(BellProtocol, DissipationlessMatchesTarget) {
  for (double a : {1.0, 2.0, 3.0}) {
    const int d = truncation_rule(a);
    const SystemSpec s = magnons(d);
    for (int outcome : {0, 1}) {
      const auto r = run_protocol(bell_sequence(s, a, 0, outcome), s, ground(s), tight());
      const auto t = protocol_target(TargetKind::Bell, a, outcome, 0, d, d);
      EXPECT_GE(fidelity(r.final_two_mode_state, t), 1 - 1e-6) << a << " " << outcome;
      const double n = outcome ? 1 - std::exp(-a * a) : 1 + std::exp(-a * a);
      EXPECT_NEAR(r.projection_probability, n / 2, 1e-8);
    }
  }
}

TEST(BellProtocol, ComplexAlphaAndChi) {
  const Complex a = std::polar(2.0, 0.7);
  const int d = truncation_rule(2);
  const SystemSpec s = magnons(d);
  const auto r = run_protocol(bell_sequence(s, a, 0.4), s, ground(s), tight());
  EXPECT_GE(fidelity(r.final_two_mode_state, ideal_target(TargetKind::Bell, a, 1, 0.4, d, d)), 1 - 1e-6);
}

TEST(BellProtocol, LargeAlphaFidelity) {
  const int d = truncation_rule(4);
  const SystemSpec s = magnons(d);
  const auto r = run_protocol(bell_sequence(s, 4.0), s, ground(s), tight());
  EXPECT_GE(fidelity(r.final_two_mode_state, ideal_target(TargetKind::Bell, 4.0, 1, 0, d, d)), 0.999);
}

TEST(NoonSequence, StructureAndTarget) {
  SystemSpec s = magnons(truncation_rule(3), 1.5e9);
  auto seq = noon_sequence(s, 3.0);
  ASSERT_EQ(seq.size(), 6u);
  EXPECT_DOUBLE_EQ(std::get<InteractionWindow>(seq[1]).tau, std::get<InteractionWindow>(seq[3]).tau);
  s.modes[1].g_tilde *= 2;
  seq = noon_sequence(s, 3.0);
  EXPECT_DOUBLE_EQ(std::get<InteractionWindow>(seq[3]).tau, std::get<InteractionWindow>(seq[1]).tau / 2);
  EXPECT_THROW(noon_sequence(magnons(10), 3.0), Error);

  const int d = truncation_rule(3);
  const SystemSpec t = magnons(d, 1.5e9);
  for (int outcome : {0, 1}) {
    const auto r = run_protocol(noon_sequence(t, 3.0, 0, outcome), t, ground(t), tight());
    EXPECT_GE(fidelity(r.final_two_mode_state, protocol_target(TargetKind::Noon, 3.0, outcome, 0, d, d)), 1 - 1e-6);
  }
  const auto v = run_protocol(noon_sequence(t, 0.0), t, ground(t));
  EXPECT_NEAR(fidelity(v.final_two_mode_state, basis_state(t.mode_space(), {0, 0})), 1, 1e-12);
}

TEST(GeneralEcs, CoefficientsAndFidelity) {
  // Outcome 0 target amplitudes in the coherent basis: (1, 1, 1, -1)/2 for large alpha.
  const double a = 4;
  const int d = truncation_rule(a);
  const StateVector t = ideal_target(TargetKind::General, a, 1, 0, d, d);
  const VectorXc z = coherent_state(d, 0).amplitudes(), c = coherent_state(d, a).amplitudes();
  const std::array<VectorXc, 4> basis{Eigen::kroneckerProduct(z, z).eval(), Eigen::kroneckerProduct(z, c).eval(),
                                      Eigen::kroneckerProduct(c, z).eval(), Eigen::kroneckerProduct(c, c).eval()};
  const std::array<double, 4> expected{0.5, 0.5, 0.5, -0.5};
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(basis[k].dot(t.amplitudes()).real(), expected[k], 1e-3) << k;

  const SystemSpec s = magnons(d, 1.5e9);
  for (int outcome : {0, 1}) {
    const auto r = run_protocol(general_ecs_sequence(s, a, outcome), s, ground(s), tight());
    EXPECT_GE(fidelity(r.final_two_mode_state, protocol_target(TargetKind::General, a, outcome, 0, d, d)), 1 - 1e-4);
  }
  const SystemSpec small = magnons(6, 1.5e9);
  const auto v = run_protocol(general_ecs_sequence(small, 0.0), small, ground(small));
  EXPECT_NEAR(fidelity(v.final_two_mode_state, basis_state(small.mode_space(), {0, 0})), 1, 1e-12);
}

TEST(RunProtocol, EmptySequence) {
  std::mt19937_64 rng(3);
  SystemSpec s = magnons(3);
  const DensityMatrix rho = ecs::test::random_density(s.space(), rng);
  const auto r = run_protocol({}, s, rho);
  EXPECT_EQ(r.projection_probability, 1);
  EXPECT_EQ(max_abs(r.final_full_state->matrix() - rho.matrix()), 0);
  EXPECT_LT(max_abs(r.final_two_mode_state.matrix() - partial_trace(rho, {1, 2}).matrix()), 1e-15);
}

TEST(RunProtocol, BuildersPassValidation) {
  SystemSpec s = magnons(10);
  EXPECT_NO_THROW(validate(bell_sequence(s, 1.5), s));
  SystemSpec t = magnons(10, 1.5e9);
  EXPECT_NO_THROW(validate(noon_sequence(t, 1.5), t));
  EXPECT_NO_THROW(validate(general_ecs_sequence(t, 1.5), t));
  ProtocolSequence bad{ProjectQubit::level(0), QubitPulse{Axis::Y, 1}};
  EXPECT_THROW(validate(bad, s), Error);
  EXPECT_THROW(validate(ProtocolSequence{InteractionWindow{s.modes[0].omega, -1, 0}}, s), Error);
}

TEST(RunProtocol, OutcomeProbabilitiesSum) {
  SystemSpec s = magnons(10);
  s.transmon.T1 = 2e-6;
  s.transmon.T2 = 4e-6;
  s.modes[0].Q = s.modes[1].Q = 1e3;
  const DensityMatrix rho0 = DensityMatrix::pure(ground(s));
  const auto r0 = run_protocol(bell_sequence(s, 1.2, 0, 0), s, rho0);
  const auto r1 = run_protocol(bell_sequence(s, 1.2, 0, 1), s, rho0);
  const Index m = s.mode_space().total();
  const double qubit_pop = r0.final_full_state->matrix().topLeftCorner(2 * m, 2 * m).trace().real();
  EXPECT_NEAR(r0.projection_probability + r1.projection_probability, qubit_pop, 1e-9);
}

TEST(RunProtocol, ModeExchangeSymmetry) {
  SystemSpec s = magnons(16);
  s.transmon.T1 = s.transmon.T2 = 5e-6;
  s.modes[0].Q = 1e3;
  s.modes[1].Q = 3e3;
  s.temperature = 0.05;
  for (auto& m : s.modes) m.n_th = 0.02;
  SystemSpec w = s;
  std::swap(w.modes[0], w.modes[1]);
  ProtocolOptions o = tight();
  const auto a = run_protocol(bell_sequence(s, 1.4), s, initial_state(s), o);
  const auto b = run_protocol(bell_sequence(w, 1.4), w, initial_state(w), o);
  const auto t = ideal_target(TargetKind::Bell, 1.4, 1, 0, 16, 16);
  EXPECT_NEAR(fidelity(a.final_two_mode_state, t), fidelity(b.final_two_mode_state, t), 1e-9);
  EXPECT_NEAR(log_negativity(a.final_two_mode_state, 1), log_negativity(b.final_two_mode_state, 1), 1e-9);
  EXPECT_NEAR(conditional_entropy(a.final_two_mode_state, 1), conditional_entropy(b.final_two_mode_state, 0), 1e-9);
  EXPECT_NEAR(occupation(a.final_two_mode_state, 0), occupation(b.final_two_mode_state, 1), 1e-9);
  EXPECT_NEAR(a.projection_probability, b.projection_probability, 1e-9);
}

TEST(RunProtocol, PureAndDensityPathsAgree) {
  const int d = 14;
  const SystemSpec s = magnons(d, 1.5e9);
  const auto seq = noon_sequence(s, 1.5);
  const auto p = run_protocol(seq, s, ground(s), tight());
  const auto r = run_protocol(seq, s, DensityMatrix::pure(ground(s)), tight());
  EXPECT_LT(max_abs(DensityMatrix::pure(p.final_two_mode_state).matrix() - r.final_two_mode_state.matrix()), 1e-8);
  EXPECT_NEAR(p.projection_probability, r.projection_probability, 1e-9);
}

TEST(Tail, TrailingStepsAndApply) {
  const SystemSpec s = magnons(8);
  const auto seq = bell_sequence(s, 1.0);
  const auto tail = trailing_steps(seq);
  ASSERT_EQ(tail.size(), 2u);
  EXPECT_NEAR(total_window_time(seq), 1 / s.modes[0].g_tilde, 1e-18);
  const StateVector g = ghz(1.0, 8);
  const auto pt = apply_tail(tail, g);
  const auto dt = apply_tail(tail, DensityMatrix::pure(g));
  EXPECT_NEAR(pt.probability, dt.probability, 1e-12);
  EXPECT_NEAR(pt.probability, (1 + std::exp(-1.0)) / 2, 1e-5);
  EXPECT_THROW(apply_tail({}, g), Error);  // transmon not in |0>
  EXPECT_NEAR(sq(std::abs(apply_tail({}, ground(s)).modes.amplitudes()(0))), 1, 1e-15);
}

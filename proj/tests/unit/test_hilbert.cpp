#include "support.hpp"

using namespace ecs;
using ecs::test::max_abs;

TEST(ModeOperators, LadderActions) {
  const auto ops = mode_operators(3);
  VectorXc one = VectorXc::Zero(3), vac = VectorXc::Zero(3);
  one(1) = 1;
  vac(0) = 1;
  VectorXc r = ops.annihilation.matrix() * one;
  EXPECT_NEAR(std::abs(r(0) - Complex(1)), 0, 1e-15);
  EXPECT_NEAR(r.tail(2).norm(), 0, 1e-15);
  EXPECT_EQ((ops.annihilation.matrix() * vac).norm(), 0);
  EXPECT_EQ(max_abs(ops.creation.matrix() - ops.annihilation.matrix().adjoint()), 0);
  for (int n = 0; n < 3; ++n) EXPECT_EQ(ops.number.matrix()(n, n), Complex(n));
}

TEST(ModeOperators, TruncatedCommutator) {
  const int d = 7;
  const MatrixXc a = annihilation_matrix(d);
  const MatrixXc c = a * a.adjoint() - a.adjoint() * a;
  EXPECT_LT(max_abs(c.topLeftCorner(d - 1, d - 1) - MatrixXc::Identity(d - 1, d - 1)), 1e-14);
}

TEST(ModeOperators, RejectsTinyDimension) {
  try {
    mode_operators(1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidDimension);
  }
}

TEST(CoherentState, VacuumAndMean) {
  const auto vac = coherent_state(10, 0);
  EXPECT_NEAR(std::abs(vac.amplitudes()(0)), 1, 1e-15);
  const auto psi = coherent_state(40, 2);
  double n = 0;
  for (int k = 0; k < 40; ++k) n += k * std::norm(psi.amplitudes()(k));
  EXPECT_NEAR(n, 4, 1e-8);
}

TEST(CoherentState, OverlapMatchesSeries) {
  const Complex a(1, 0), b(1, 1);
  const VectorXc u = ecs::test::fock_series(40, a), v = ecs::test::fock_series(40, b);
  const double brute = std::abs(u.dot(v));
  const double lib = std::abs(coherent_state(40, a).amplitudes().dot(coherent_state(40, b).amplitudes()));
  EXPECT_NEAR(brute, std::exp(-0.5), 1e-12);
  EXPECT_NEAR(lib, std::exp(-std::norm(a - b) / 2), 1e-8);
}

TEST(CoherentState, LeakageIsReportedAndChecked) {
  double leak = 0;
  coherent_state(40, 2, &leak);
  EXPECT_LT(leak, 1e-12);
  try {
    coherent_state(10, 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TruncationOverflow);
  }
  // A looser threshold lets the same call through.
  EXPECT_NO_THROW(coherent_state(10, 3, &leak, 0.5));
  EXPECT_GT(leak, 1e-3);
}

TEST(Displacement, IdentityAndVacuum) {
  EXPECT_LT(max_abs(displacement_operator(12, 0).matrix() - MatrixXc::Identity(12, 12)), 1e-15);
  const Complex a(1.2, -0.7);
  // Padding keeps the truncated generator's edge away from the occupied levels.
  const int d = truncation_rule(std::abs(a)) + 20;
  VectorXc vac = VectorXc::Zero(d);
  vac(0) = 1;
  const VectorXc moved = displacement_operator(d, a).matrix() * vac;
  EXPECT_LT((moved - coherent_state(d, a).amplitudes()).norm(), 1e-10);
}

TEST(Displacement, InverseAndUnitarity) {
  for (double r : {0.5, 1.0, 2.0, 3.0}) {
    const Complex a = std::polar(r, 0.3);
    const int d = truncation_rule(r);
    const MatrixXc D = displacement_operator(d, a).matrix();
    const MatrixXc Dm = displacement_operator(d, -a).matrix();
    EXPECT_LT(max_abs(D * Dm - MatrixXc::Identity(d, d)), 1e-8) << r;
    EXPECT_LT(max_abs(D.adjoint() * D - MatrixXc::Identity(d, d)), 1e-8) << r;
  }
}

// D(a) D(b) = e^{i Im(a b^*)} D(a + b), checked on Fock columns the truncation does not reach.
TEST(Displacement, CompositionLaw) {
  const Complex a(1, 0), b(0, 1);
  const int d = 40;
  const MatrixXc lhs = displacement_operator(d, a).matrix() * displacement_operator(d, b).matrix();
  const MatrixXc rhs = std::exp(Complex(0, std::imag(a * std::conj(b)))) * displacement_operator(d, a + b).matrix();
  EXPECT_LT(max_abs((lhs - rhs).leftCols(10)), 1e-8);
}

TEST(Displacement, FamilyMatchesSingleEvaluation) {
  const DisplacementFamily fam(30);
  for (Complex a : {Complex(0.4, 0.1), Complex(-1.5, 2.0)}) {
    EXPECT_LT(max_abs(fam(a) - displacement_operator(30, a).matrix()), 1e-12);
    EXPECT_LT(max_abs(fam.top_rows(a, 7) - fam(a).topRows(7)), 1e-14);
  }
}

TEST(Embed, IdentityAndNumber) {
  const HilbertSpace s{3, 4};
  EXPECT_EQ(max_abs(embed(MatrixXc::Identity(4, 4), 1, s).matrix() - MatrixXc::Identity(12, 12)), 0);
  const Operator n = embed(mode_operators(4).number.matrix(), 1, s);
  const VectorXc v = basis_state(s, {0, 2}).amplitudes();
  EXPECT_LT((n.matrix() * v - 2.0 * v).norm(), 1e-15);
}

TEST(Embed, DisjointSlotsCommute) {
  std::mt19937_64 rng(11);
  const HilbertSpace s{3, 4, 4};
  for (int k = 0; k < 5; ++k) {
    const MatrixXc A = embed(ecs::test::gaussian(4, 4, rng), 1, s).matrix();
    const MatrixXc B = embed(ecs::test::gaussian(4, 4, rng), 2, s).matrix();
    EXPECT_LT(max_abs(A * B - B * A), 1e-12);
  }
}

TEST(Embed, Errors) {
  const HilbertSpace s{3, 4};
  EXPECT_THROW(embed(MatrixXc::Identity(4, 4), 2, s), Error);
  EXPECT_THROW(embed(MatrixXc::Identity(3, 3), 1, s), Error);
}

TEST(PartialTrace, ProductAndTrace) {
  std::mt19937_64 rng(3);
  const DensityMatrix a = ecs::test::random_density(HilbertSpace{3}, rng);
  const DensityMatrix b = ecs::test::random_density(HilbertSpace{4}, rng);
  const HilbertSpace s{3, 4};
  const DensityMatrix ab(s, Eigen::kroneckerProduct(a.matrix(), b.matrix()).eval());
  EXPECT_LT(max_abs(partial_trace(ab, {0}).matrix() - a.matrix()), 1e-12);
  EXPECT_LT(max_abs(partial_trace(ab, {1}).matrix() - b.matrix()), 1e-12);

  const DensityMatrix r = ecs::test::random_density(HilbertSpace{2, 3, 4}, rng);
  for (std::vector<std::size_t> keep : {std::vector<std::size_t>{0}, {1}, {2}, {0, 2}, {1, 2}})
    EXPECT_NEAR(std::abs(partial_trace(r, keep).matrix().trace() - Complex(1)), 0, 1e-12);
  EXPECT_EQ(max_abs(partial_trace(r, {0, 1, 2}).matrix() - r.matrix()), 0);
  EXPECT_THROW(partial_trace(r, {}), Error);
}

// Reduced mode of (|00> + |aa>)/N has eigenvalues (1 +- s)^2 / (2 (1 + s^2)), s = <0|a>.
TEST(PartialTrace, BellReducedSpectrum) {
  const double a = 2;
  const int d = truncation_rule(a);
  const VectorXc z = ecs::test::fock_series(d, 0), c = ecs::test::fock_series(d, a);
  VectorXc psi = Eigen::kroneckerProduct(z, z).eval() + Eigen::kroneckerProduct(c, c).eval();
  psi.normalize();
  const DensityMatrix rho = DensityMatrix::pure(StateVector(HilbertSpace{d, d}, psi));
  const MatrixXc r1 = partial_trace(rho, {0}).matrix();
  Eigen::SelfAdjointEigenSolver<MatrixXc> es(r1);
  const auto ev = es.eigenvalues();
  const double s = std::exp(-a * a / 2);
  EXPECT_NEAR(ev(d - 1), std::pow(1 + s, 2) / (2 * (1 + s * s)), 1e-9);
  EXPECT_NEAR(ev(d - 2), std::pow(1 - s, 2) / (2 * (1 + s * s)), 1e-9);
}

TEST(PartialTranspose, InvolutionAndPpt) {
  std::mt19937_64 rng(5);
  const HilbertSpace s{3, 4};
  const DensityMatrix r = ecs::test::random_density(s, rng);
  for (std::size_t slot : {0u, 1u}) {
    const MatrixXc once = partial_transpose(r.matrix(), s, slot);
    EXPECT_LT(max_abs(partial_transpose(once, s, slot) - r.matrix()), 1e-15);
    EXPECT_LT(hermiticity_defect(once), 1e-12);
  }
  const DensityMatrix a = ecs::test::random_density(HilbertSpace{3}, rng);
  const DensityMatrix b = ecs::test::random_density(HilbertSpace{4}, rng);
  const MatrixXc pt = partial_transpose(Eigen::kroneckerProduct(a.matrix(), b.matrix()).eval(), s, 1);
  EXPECT_GT(min_eigenvalue(pt), -1e-10);
}

TEST(PartialTranspose, BellIsNpt) {
  const double a = 3;
  const int d = truncation_rule(a);
  const VectorXc z = ecs::test::fock_series(d, 0), c = ecs::test::fock_series(d, a);
  VectorXc psi = Eigen::kroneckerProduct(z, z).eval() + Eigen::kroneckerProduct(c, c).eval();
  psi.normalize();
  const HilbertSpace s{d, d};
  const MatrixXc rho = psi * psi.adjoint();
  EXPECT_LT(min_eigenvalue(partial_transpose(rho, s, 1)), -0.1);
}

TEST(DensityMatrixType, Invariants) {
  const HilbertSpace s{2};
  MatrixXc m(2, 2);
  m << 0.5, 0.1, 0.2, 0.5;
  EXPECT_THROW(DensityMatrix(s, m), Error);  // not Hermitian
  m << 0.6, 0, 0, 0.6;
  EXPECT_THROW(DensityMatrix(s, m), Error);  // trace
  m << 1.1, 0, 0, -0.1;
  EXPECT_THROW(DensityMatrix(s, m), Error);  // negative
  m << 0.5, 0.5, 0.5, 0.5;
  EXPECT_NO_THROW(DensityMatrix(s, m));
  EXPECT_THROW(StateVector(s, VectorXc::Ones(2)), Error);
  EXPECT_THROW(HilbertSpace({3, 1}), Error);
}

TEST(Hilbert, DeterministicConstruction) {
  const Complex a(0.7, -1.1);
  EXPECT_EQ(max_abs(displacement_operator(25, a).matrix() - displacement_operator(25, a).matrix()), 0);
  EXPECT_EQ((coherent_state(25, a).amplitudes() - coherent_state(25, a).amplitudes()).norm(), 0);
}

TEST(Hilbert, TruncationRule) {
  EXPECT_EQ(truncation_rule(0), 5);
  EXPECT_EQ(truncation_rule(3), 32);
  EXPECT_EQ(truncation_rule(4), 45);
  double leak = 1;
  coherent_state(truncation_rule(4), 4, &leak);
  EXPECT_LT(leak, 1e-6);
}

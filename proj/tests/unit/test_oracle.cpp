#include <gtest/gtest.h>

#include <unsupported/Eigen/MatrixFunctions>

#include "ecs/oracle.hpp"
#include "support.hpp"

using namespace ecs;
using namespace ecs::test;

namespace {

// Row-by-row superoperator built by applying the generator to matrix units.
MatrixXc brute_liouvillian(const Operator& H, const DissipatorSet& ds) {
  const MatrixXc& h = H.matrix();
  const Index n = h.rows();
  MatrixXc L(n * n, n * n);
  for (Index c = 0; c < n; ++c)
    for (Index r = 0; r < n; ++r) {
      MatrixXc e = MatrixXc::Zero(n, n);
      e(r, c) = 1;
      const Complex i(0, 1);
      MatrixXc out = -i * (h * e - e * h);
      for (const auto& d : ds.channels) {
        const MatrixXc& J = d.jump.matrix();
        const MatrixXc JdJ = J.adjoint() * J;
        out += d.rate * (J * e * J.adjoint() - 0.5 * (JdJ * e + e * JdJ));
      }
      L.col(c * n + r) = out.reshaped();
    }
  return L;
}

}  // namespace

TEST(Oracle, LiouvillianMatchesUnitResponses) {
  std::mt19937_64 rng(11);
  const HilbertSpace space{2, 3};
  const auto inst = random_instance(space, rng, 2);
  const MatrixXc L = dense_liouvillian(inst.H, inst.dissipators);
  EXPECT_LT(max_abs(L - brute_liouvillian(inst.H, inst.dissipators)), 1e-12);
  const MatrixXc rhs = lindblad_rhs(inst.rho0, inst.H, inst.dissipators);
  EXPECT_LT(max_abs(rhs.reshaped() - L * inst.rho0.matrix().reshaped()), 1e-12);
}

TEST(Oracle, PadeTaylorAndEigenAgree) {
  std::mt19937_64 rng(5);
  const HilbertSpace space{6};
  const auto inst = random_instance(space, rng);
  const MatrixXc L = dense_liouvillian(inst.H, inst.dissipators);
  const MatrixXc& rho = inst.rho0.matrix();
  for (double t : {0.0, 0.3, 2.0}) {
    const MatrixXc ref = ((L * t).exp() * rho.reshaped()).reshaped(6, 6);
    EXPECT_LT(max_abs(pade_expm(L, rho, t) - ref), 1e-11) << t;
    EXPECT_LT(max_abs(taylor_expmv(L, rho, t) - ref), 1e-11) << t;
    EXPECT_LT(max_abs(exact_evolution(L, rho, t) - ref), 1e-11) << t;
  }
}

TEST(Oracle, ExactEvolutionKeepsStateValid) {
  std::mt19937_64 rng(8);
  const HilbertSpace space{3, 3};
  const auto inst = random_instance(space, rng);
  const MatrixXc L = dense_liouvillian(inst.H, inst.dissipators);
  const MatrixXc out = exact_evolution(L, inst.rho0.matrix(), 1.5);
  EXPECT_NEAR(out.trace().real(), 1, 1e-10);
  EXPECT_LT(hermiticity_defect(out), 1e-10);
  EXPECT_GT(min_eigenvalue(out), -1e-10);
}

TEST(Oracle, RandomInstanceShape) {
  std::mt19937_64 a(3), b(3);
  const HilbertSpace space{4};
  const auto x = random_instance(space, a, 4);
  const auto y = random_instance(space, b, 4);
  EXPECT_EQ(x.dissipators.channels.size(), 4u);
  EXPECT_LT(hermiticity_defect(x.H.matrix()), 1e-14);
  EXPECT_GT(min_eigenvalue(x.rho0.matrix()), 0);
  EXPECT_EQ(max_abs(x.H.matrix() - y.H.matrix()), 0);
  EXPECT_EQ(max_abs(x.rho0.matrix() - y.rho0.matrix()), 0);
}

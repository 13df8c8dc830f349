#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "ecs/errors.hpp"

namespace ecs {

using Complex = std::complex<double>;
using Index = Eigen::Index;
template <typename Scalar>
using DenseMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using DenseVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using MatrixXc = DenseMatrix<Complex>;
using VectorXc = DenseVector<Complex>;

// Dense operators are refused above this total dimension; state vectors go further.
inline constexpr Index kDenseCap = 4096;
inline constexpr Index kVectorCap = Index(1) << 24;

// Invariant thresholds for DensityMatrix.
inline constexpr double kHermiticityTol = 1e-10;
inline constexpr double kTraceTol = 1e-9;
inline constexpr double kPositivityTol = 1e-8;

// Ordered subsystem dimensions. Slot 0 varies slowest in the flat basis index.
class HilbertSpace {
 public:
  explicit HilbertSpace(std::vector<int> dims);
  HilbertSpace(std::initializer_list<int> dims) : HilbertSpace(std::vector<int>(dims)) {}

  std::size_t slots() const { return dims_.size(); }
  int dim(std::size_t slot) const { return dims_.at(slot); }
  const std::vector<int>& dims() const { return dims_; }
  Index total() const { return total_; }
  Index stride(std::size_t slot) const { return strides_.at(slot); }
  int level(Index flat, std::size_t slot) const {
    return int(flat / strides_[slot] % dims_[slot]);
  }
  HilbertSpace subspace(const std::vector<std::size_t>& keep) const;
  std::string describe() const;

  friend bool operator==(const HilbertSpace& a, const HilbertSpace& b) { return a.dims_ == b.dims_; }

 private:
  std::vector<int> dims_;
  std::vector<Index> strides_;
  Index total_ = 1;
};

namespace detail {

inline void require_slot(const HilbertSpace& space, std::size_t slot) {
  if (slot >= space.slots())
    throw Error(ErrorKind::InvalidDimension, "slot " + std::to_string(slot) + " out of range for " +
                                                 space.describe());
}

inline void require_square(Index rows, Index cols, const HilbertSpace& space) {
  if (rows != space.total() || cols != space.total())
    throw Error(ErrorKind::InvalidDimension, "matrix of shape " + std::to_string(rows) + "x" +
                                                 std::to_string(cols) + " does not match " +
                                                 space.describe());
}

}  // namespace detail

template <typename Derived>
typename Derived::RealScalar hermiticity_defect(const Eigen::MatrixBase<Derived>& m) {
  if (m.size() == 0) return 0;
  return (m - m.adjoint()).cwiseAbs().maxCoeff();
}

template <typename Derived>
typename Derived::RealScalar trace_defect(const Eigen::MatrixBase<Derived>& m) {
  return std::abs(m.trace() - typename Derived::Scalar(1));
}

template <typename Derived>
typename Derived::RealScalar purity(const Eigen::MatrixBase<Derived>& m) {
  // Tr(rho^2) for Hermitian rho is the squared Frobenius norm.
  return m.squaredNorm();
}

// Rows/columns that carry any nonzero entry. For a PSD matrix the spectrum is the
// spectrum of this principal submatrix plus zeros.
template <typename Derived>
std::vector<Index> support(const Eigen::MatrixBase<Derived>& m) {
  std::vector<Index> rows;
  for (Index i = 0; i < m.rows(); ++i)
    if (!(m.row(i).array() == typename Derived::Scalar(0)).all() ||
        !(m.col(i).array() == typename Derived::Scalar(0)).all())
      rows.push_back(i);
  return rows;
}

template <typename Derived>
typename Derived::RealScalar min_eigenvalue(const Eigen::MatrixBase<Derived>& m) {
  using Matrix = DenseMatrix<typename Derived::Scalar>;
  const auto idx = support(m);
  if (idx.size() < std::size_t(m.rows())) {
    if (idx.empty()) return 0;
    Matrix sub = m(idx, idx);
    Eigen::SelfAdjointEigenSolver<Matrix> es(sub, Eigen::EigenvaluesOnly);
    return std::min<typename Derived::RealScalar>(es.eigenvalues().minCoeff(), 0);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(m.eval(), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// True when every eigenvalue exceeds -shift. Uses a Cholesky factorization of the
// shifted support block, which is much cheaper than a full spectrum.
template <typename Derived>
bool eigenvalues_above(const Eigen::MatrixBase<Derived>& m, typename Derived::RealScalar shift) {
  using Matrix = DenseMatrix<typename Derived::Scalar>;
  const auto idx = support(m);
  if (idx.empty()) return true;
  Matrix sub = m(idx, idx);
  sub.diagonal().array() += shift;
  Eigen::LLT<Matrix> llt(sub);
  return llt.info() == Eigen::Success;
}

template <typename Scalar>
class BasicOperator {
 public:
  using Matrix = DenseMatrix<Scalar>;

  BasicOperator(HilbertSpace space, Matrix matrix) : space_(std::move(space)), matrix_(std::move(matrix)) {
    detail::require_square(matrix_.rows(), matrix_.cols(), space_);
  }

  const HilbertSpace& space() const { return space_; }
  const Matrix& matrix() const { return matrix_; }

 private:
  HilbertSpace space_;
  Matrix matrix_;
};

template <typename Scalar>
class BasicStateVector {
 public:
  using Vector = DenseVector<Scalar>;
  using Real = typename Eigen::NumTraits<Scalar>::Real;

  BasicStateVector(HilbertSpace space, Vector amplitudes)
      : space_(std::move(space)), amplitudes_(std::move(amplitudes)) {
    if (amplitudes_.size() != space_.total())
      throw Error(ErrorKind::InvalidDimension, "state vector length does not match " + space_.describe());
    if (std::abs(amplitudes_.norm() - Real(1)) > Real(1e-10))
      throw Error(ErrorKind::Domain, "state vector is not normalized");
  }

  static BasicStateVector normalized(HilbertSpace space, Vector amplitudes) {
    const Real n = amplitudes.norm();
    if (!(n > 0)) throw Error(ErrorKind::Domain, "cannot normalize a zero vector");
    return BasicStateVector(std::move(space), amplitudes / n);
  }

  const HilbertSpace& space() const { return space_; }
  const Vector& amplitudes() const { return amplitudes_; }

 private:
  HilbertSpace space_;
  Vector amplitudes_;
};

template <typename Scalar>
class BasicDensityMatrix {
 public:
  using Matrix = DenseMatrix<Scalar>;
  using Real = typename Eigen::NumTraits<Scalar>::Real;

  // Checks Hermiticity, unit trace and positivity.
  BasicDensityMatrix(HilbertSpace space, Matrix matrix) : space_(std::move(space)), matrix_(std::move(matrix)) {
    if (space_.total() > kDenseCap)
      throw Error(ErrorKind::InvalidDimension, "dense density matrix refused for " + space_.describe());
    detail::require_square(matrix_.rows(), matrix_.cols(), space_);
    if (hermiticity_defect(matrix_) > Real(kHermiticityTol))
      throw Error(ErrorKind::Domain, "density matrix is not Hermitian");
    if (trace_defect(matrix_) > Real(kTraceTol)) throw Error(ErrorKind::Domain, "density matrix trace is not 1");
    if (!eigenvalues_above(matrix_, Real(kPositivityTol)))
      throw Error(ErrorKind::Domain, "density matrix has an eigenvalue below -1e-8");
  }

  // For states whose invariants the caller guarantees or audits separately
  // (integrator output, exact algebraic constructions).
  static BasicDensityMatrix trusted(HilbertSpace space, Matrix matrix) {
    if (space.total() > kDenseCap)
      throw Error(ErrorKind::InvalidDimension, "dense density matrix refused for " + space.describe());
    detail::require_square(matrix.rows(), matrix.cols(), space);
    return BasicDensityMatrix(std::move(space), std::move(matrix), 0);
  }

  static BasicDensityMatrix pure(const BasicStateVector<Scalar>& psi) {
    return trusted(psi.space(), psi.amplitudes() * psi.amplitudes().adjoint());
  }

  const HilbertSpace& space() const { return space_; }
  const Matrix& matrix() const { return matrix_; }

 private:
  BasicDensityMatrix(HilbertSpace space, Matrix matrix, int) : space_(std::move(space)), matrix_(std::move(matrix)) {}

  HilbertSpace space_;
  Matrix matrix_;
};

using Operator = BasicOperator<Complex>;
using StateVector = BasicStateVector<Complex>;
using DensityMatrix = BasicDensityMatrix<Complex>;

// Identity on every slot except `slot`, where `op` acts.
template <typename Derived>
BasicOperator<typename Derived::Scalar> embed(const Eigen::MatrixBase<Derived>& op, std::size_t slot,
                                              const HilbertSpace& space) {
  using Matrix = DenseMatrix<typename Derived::Scalar>;
  detail::require_slot(space, slot);
  if (op.rows() != space.dim(slot) || op.cols() != space.dim(slot))
    throw Error(ErrorKind::InvalidDimension, "embedded operator does not match slot dimension");
  if (space.total() > kDenseCap)
    throw Error(ErrorKind::InvalidDimension, "dense operator refused for " + space.describe());
  const Index before = space.total() / space.stride(slot) / space.dim(slot);
  const Index after = space.stride(slot);
  Matrix left = Matrix::Identity(before, before);
  Matrix right = Matrix::Identity(after, after);
  Matrix full = Eigen::kroneckerProduct(Eigen::kroneckerProduct(left, op.derived()).eval(), right);
  return {space, std::move(full)};
}

template <typename Scalar>
BasicOperator<Scalar> embed(const BasicOperator<Scalar>& op, std::size_t slot, const HilbertSpace& space) {
  return embed(op.matrix(), slot, space);
}

// Trace over every slot not listed in `keep`; kept slots retain their relative order.
template <typename Derived>
DenseMatrix<typename Derived::Scalar> partial_trace(const Eigen::MatrixBase<Derived>& m, const HilbertSpace& space,
                                                    std::vector<std::size_t> keep) {
  using Matrix = DenseMatrix<typename Derived::Scalar>;
  if (keep.empty()) throw Error(ErrorKind::InvalidDimension, "partial trace needs at least one kept slot");
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  for (auto s : keep) detail::require_slot(space, s);
  detail::require_square(m.rows(), m.cols(), space);

  const HilbertSpace kept = space.subspace(keep);
  std::vector<std::size_t> traced;
  for (std::size_t s = 0; s < space.slots(); ++s)
    if (!std::binary_search(keep.begin(), keep.end(), s)) traced.push_back(s);
  Index traced_total = 1;
  for (auto s : traced) traced_total *= space.dim(s);

  std::vector<std::vector<Index>> groups(traced_total, std::vector<Index>(kept.total()));
  for (Index i = 0; i < space.total(); ++i) {
    Index k = 0, t = 0;
    for (auto s : keep) k = k * space.dim(s) + space.level(i, s);
    for (auto s : traced) t = t * space.dim(s) + space.level(i, s);
    groups[t][k] = i;
  }
  Matrix out = Matrix::Zero(kept.total(), kept.total());
  for (const auto& g : groups) out += m(g, g);
  return out;
}

template <typename Scalar>
BasicDensityMatrix<Scalar> partial_trace(const BasicDensityMatrix<Scalar>& rho, std::vector<std::size_t> keep) {
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  auto out = partial_trace(rho.matrix(), rho.space(), keep);
  return BasicDensityMatrix<Scalar>::trusted(rho.space().subspace(keep), std::move(out));
}

// Transpose of the indices belonging to one slot.
template <typename Derived>
DenseMatrix<typename Derived::Scalar> partial_transpose(const Eigen::MatrixBase<Derived>& m,
                                                        const HilbertSpace& space, std::size_t slot) {
  using Matrix = DenseMatrix<typename Derived::Scalar>;
  detail::require_slot(space, slot);
  detail::require_square(m.rows(), m.cols(), space);
  const Index s = space.stride(slot);
  Matrix out(m.rows(), m.cols());
  for (Index j = 0; j < m.cols(); ++j) {
    const Index lj = space.level(j, slot);
    for (Index i = 0; i < m.rows(); ++i) {
      const Index li = space.level(i, slot);
      out(i, j) = m(i + (lj - li) * s, j + (li - lj) * s);
    }
  }
  return out;
}

template <typename Scalar>
BasicOperator<Scalar> partial_transpose(const BasicDensityMatrix<Scalar>& rho, std::size_t slot) {
  return {rho.space(), partial_transpose(rho.matrix(), rho.space(), slot)};
}

template <typename Scalar>
Scalar expectation(const BasicDensityMatrix<Scalar>& rho, const BasicOperator<Scalar>& op) {
  if (!(rho.space() == op.space())) throw Error(ErrorKind::InvalidDimension, "expectation: space mismatch");
  return (rho.matrix().cwiseProduct(op.matrix().transpose())).sum();
}

struct LadderOperators {
  Operator annihilation;
  Operator creation;
  Operator number;
};

LadderOperators mode_operators(int dim);

// Raw single-slot matrices used when assembling larger objects.
MatrixXc annihilation_matrix(int dim);

// |alpha> truncated to `dim` levels and renormalized. The untruncated tail weight is
// written to `leakage` when requested; above `max_leakage` it is an error.
StateVector coherent_state(int dim, Complex alpha, double* leakage = nullptr, double max_leakage = 1e-6);

// Fock basis vector |levels...> on a composite space.
StateVector basis_state(const HilbertSpace& space, const std::vector<int>& levels);

// Smallest dimension for which a coherent amplitude of magnitude r leaks < 1e-6.
int truncation_rule(double r);

// exp(alpha a^dag - alpha^* a) on a truncated mode, for many alphas.
// The generator a^dag - a is diagonalized once; a phase rotation e^{i arg(alpha) n}
// maps it onto any direction, so each evaluation is two small products.
class DisplacementFamily {
 public:
  explicit DisplacementFamily(int dim);

  int dim() const { return dim_; }
  MatrixXc operator()(Complex alpha) const;
  // First `rows` rows of D(alpha), for states supported on low Fock levels.
  MatrixXc top_rows(Complex alpha, Index rows) const;

 private:
  int dim_;
  MatrixXc vectors_;
  Eigen::VectorXd values_;
};

Operator displacement_operator(int dim, Complex alpha);

}  // namespace ecs

#include "ecs/hilbert.hpp"

#include <cmath>
#include <sstream>

namespace ecs {

HilbertSpace::HilbertSpace(std::vector<int> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) throw Error(ErrorKind::InvalidDimension, "Hilbert space needs at least one slot");
  strides_.assign(dims_.size(), 1);
  for (std::size_t k = dims_.size(); k-- > 0;) {
    if (dims_[k] < 2)
      throw Error(ErrorKind::InvalidDimension, "slot dimension " + std::to_string(dims_[k]) + " is below 2");
    strides_[k] = total_;
    total_ *= dims_[k];
    if (total_ > kVectorCap) throw Error(ErrorKind::InvalidDimension, "total dimension exceeds the supported cap");
  }
}

HilbertSpace HilbertSpace::subspace(const std::vector<std::size_t>& keep) const {
  std::vector<int> d;
  for (auto s : keep) d.push_back(dim(s));
  return HilbertSpace(std::move(d));
}

std::string HilbertSpace::describe() const {
  std::ostringstream os;
  os << "space (";
  for (std::size_t k = 0; k < dims_.size(); ++k) os << (k ? "," : "") << dims_[k];
  os << ")";
  return os.str();
}

MatrixXc annihilation_matrix(int dim) {
  if (dim < 2) throw Error(ErrorKind::InvalidDimension, "mode dimension must be at least 2");
  MatrixXc a = MatrixXc::Zero(dim, dim);
  for (int n = 1; n < dim; ++n) a(n - 1, n) = std::sqrt(double(n));
  return a;
}

LadderOperators mode_operators(int dim) {
  const HilbertSpace space{dim};
  MatrixXc a = annihilation_matrix(dim);
  MatrixXc n = MatrixXc::Zero(dim, dim);
  n.diagonal() = Eigen::VectorXd::LinSpaced(dim, 0, dim - 1).cast<Complex>();
  MatrixXc ad = a.adjoint();
  return {Operator(space, std::move(a)), Operator(space, std::move(ad)), Operator(space, std::move(n))};
}

StateVector coherent_state(int dim, Complex alpha, double* leakage, double max_leakage) {
  if (dim < 2) throw Error(ErrorKind::InvalidDimension, "mode dimension must be at least 2");
  VectorXc c(dim);
  c(0) = std::exp(-0.5 * std::norm(alpha));
  for (int n = 1; n < dim; ++n) c(n) = c(n - 1) * alpha / std::sqrt(double(n));
  const double tail = std::max(0.0, 1.0 - c.squaredNorm());
  if (leakage) *leakage = tail;
  if (tail > max_leakage)
    throw Error(ErrorKind::TruncationOverflow, "coherent state |alpha|=" + std::to_string(std::abs(alpha)) +
                                                   " leaks " + std::to_string(tail) + " beyond dim " +
                                                   std::to_string(dim) + "; raise the Fock dimension");
  return StateVector::normalized(HilbertSpace{dim}, std::move(c));
}

StateVector basis_state(const HilbertSpace& space, const std::vector<int>& levels) {
  if (levels.size() != space.slots()) throw Error(ErrorKind::InvalidDimension, "basis state needs one level per slot");
  Index flat = 0;
  for (std::size_t s = 0; s < levels.size(); ++s) {
    if (levels[s] < 0 || levels[s] >= space.dim(s))
      throw Error(ErrorKind::InvalidDimension, "basis level out of range");
    flat += levels[s] * space.stride(s);
  }
  VectorXc v = VectorXc::Zero(space.total());
  v(flat) = 1;
  return StateVector(space, std::move(v));
}

int truncation_rule(double r) {
  return std::max(2, int(std::ceil(r * r + 6 * r + 5)));
}

DisplacementFamily::DisplacementFamily(int dim) : dim_(dim) {
  const MatrixXc a = annihilation_matrix(dim);
  // i(a^dag - a) is Hermitian; exp(r (a^dag - a)) = exp(-i r P).
  const MatrixXc p = Complex(0, 1) * (a.adjoint() - a);
  Eigen::SelfAdjointEigenSolver<MatrixXc> es(p);
  vectors_ = es.eigenvectors();
  values_ = es.eigenvalues();
}

MatrixXc DisplacementFamily::top_rows(Complex alpha, Index rows) const {
  if (alpha == Complex(0)) return MatrixXc::Identity(rows, dim_);
  const double r = std::abs(alpha);
  const double phi = std::arg(alpha);
  VectorXc rot(dim_);
  for (int n = 0; n < dim_; ++n) rot(n) = std::polar(1.0, phi * n);
  VectorXc phase(dim_);
  for (int k = 0; k < dim_; ++k) phase(k) = std::polar(1.0, -r * values_(k));
  MatrixXc left = rot.head(rows).asDiagonal() * vectors_.topRows(rows) * phase.asDiagonal();
  return left * (vectors_.adjoint() * rot.conjugate().asDiagonal());
}

MatrixXc DisplacementFamily::operator()(Complex alpha) const { return top_rows(alpha, dim_); }

Operator displacement_operator(int dim, Complex alpha) {
  return {HilbertSpace{dim}, DisplacementFamily(dim)(alpha)};
}

}  // namespace ecs

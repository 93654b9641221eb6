#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>

#include "shrinkcov/errors.hpp"

namespace shrinkcov {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class SymMat;
SymMat self_outer(const Vector& v);
SymMat rank_one_downdate(const SymMat& m, const Vector& v, double denom,
                         double s);

/// Dense symmetric p x p matrix. Full storage, with symmetry enforced at
/// every construction boundary: entries(i,j) == entries(j,i) holds exactly
/// (bitwise), not just up to rounding. Immutable after construction.
class SymMat {
 public:
  /// Empty placeholder (dim 0); any sized construction requires p >= 1.
  SymMat() = default;

  /// Zero matrix of dimension p.
  explicit SymMat(Eigen::Index p) : m_(Matrix::Zero(check_dim(p), p)) {}

  static SymMat identity(Eigen::Index p) {
    return SymMat(Trusted{}, Matrix::Identity(check_dim(p), p));
  }

  static SymMat scaled_identity(Eigen::Index p, double c) {
    Matrix m = Matrix::Zero(check_dim(p), p);
    m.diagonal().setConstant(c);
    return SymMat(Trusted{}, std::move(m));
  }

  /// 0.5 * (a + a^T). The canonical way to bring a numerically
  /// near-symmetric product back onto the invariant.
  static SymMat symmetrized(const Matrix& a) {
    if (a.rows() != a.cols()) {
      throw DimensionMismatchError("symmetrized: matrix must be square");
    }
    check_dim(a.rows());
    return SymMat(Trusted{}, 0.5 * (a + a.transpose()));
  }

  Eigen::Index dim() const { return m_.rows(); }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }
  const Matrix& mat() const { return m_; }

  friend SymMat operator+(const SymMat& a, const SymMat& b) {
    require_same_dim(a, b, "operator+");
    return SymMat(Trusted{}, a.m_ + b.m_);
  }
  friend SymMat operator-(const SymMat& a, const SymMat& b) {
    require_same_dim(a, b, "operator-");
    return SymMat(Trusted{}, a.m_ - b.m_);
  }
  friend SymMat operator*(double c, const SymMat& a) {
    return SymMat(Trusted{}, c * a.m_);
  }

  friend SymMat self_outer(const Vector& v);
  friend SymMat rank_one_downdate(const SymMat& m, const Vector& v,
                                  double denom, double s);

 private:
  // Tag for constructions whose symmetry is exact by construction.
  struct Trusted {};
  SymMat(Trusted, Matrix m) : m_(std::move(m)) {}

  static Eigen::Index check_dim(Eigen::Index p) {
    if (p < 1) throw InvalidInputError("SymMat: dimension must be >= 1");
    return p;
  }
  static void require_same_dim(const SymMat& a, const SymMat& b,
                               const char* op) {
    if (a.dim() != b.dim()) {
      throw DimensionMismatchError(std::string(op) + ": dimension mismatch");
    }
  }

  Matrix m_;
};

/// v v^T; exactly symmetric entry by entry.
inline SymMat self_outer(const Vector& v) {
  if (v.size() < 1) throw InvalidInputError("self_outer: empty vector");
  return SymMat(SymMat::Trusted{}, v * v.transpose());
}

/// s * (m - (v v^T) / denom). Shared kernel of the rank-one inverse
/// updates; elementwise, so exact symmetry is preserved.
inline SymMat rank_one_downdate(const SymMat& m, const Vector& v, double denom,
                                double s) {
  if (v.size() != m.dim()) {
    throw DimensionMismatchError("rank_one_downdate: dimension mismatch");
  }
  return SymMat(SymMat::Trusted{}, s * (m.mat() - (v * v.transpose()) / denom));
}

/// Lower-triangular Cholesky factor L with L L^T equal to the factored
/// matrix. Diagonal strictly positive.
struct CholFactor {
  Matrix lower;
  Eigen::Index dim() const { return lower.rows(); }
};

/// Cholesky factorization of an SPD matrix.
inline CholFactor cholesky(const SymMat& a) {
  Eigen::LLT<Matrix> llt(a.mat());
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefiniteError("cholesky: matrix is not positive definite");
  }
  return CholFactor{Matrix(llt.matrixL())};
}

/// Inverse of an SPD matrix via Cholesky. Used as the direct-inversion
/// oracle against which the sequential updates are checked.
inline SymMat inv_spd(const SymMat& a) {
  Eigen::LLT<Matrix> llt(a.mat());
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefiniteError("inv_spd: matrix is not positive definite");
  }
  return SymMat::symmetrized(llt.solve(Matrix::Identity(a.dim(), a.dim())));
}

/// L z for z of i.i.d. standard normals: a zero-mean Gaussian draw with
/// covariance L L^T. Any mean offset is the caller's business.
inline Vector sample_gaussian(const CholFactor& chol, const Vector& standard_normals) {
  if (standard_normals.size() != chol.dim()) {
    throw DimensionMismatchError("sample_gaussian: dimension mismatch");
  }
  return chol.lower * standard_normals;
}

/// Squared Frobenius norm; frob_norm2(I_p) == p.
inline double frob_norm2(const SymMat& a) { return a.mat().squaredNorm(); }

inline double trace(const SymMat& a) { return a.mat().trace(); }

/// Frobenius inner product Tr(a^T b), i.e. the elementwise product sum.
inline double inner(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionMismatchError("inner: dimension mismatch");
  }
  return a.cwiseProduct(b).sum();
}

inline double inner(const SymMat& a, const SymMat& b) {
  return inner(a.mat(), b.mat());
}

/// General matrix product. Products of symmetric matrices are not
/// symmetric, hence the plain Matrix result.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionMismatchError("matmul: dimension mismatch");
  }
  return a * b;
}

inline Matrix matmul(const SymMat& a, const SymMat& b) {
  return matmul(a.mat(), b.mat());
}

inline Matrix matmul(const SymMat& a, const Matrix& b) {
  return matmul(a.mat(), b);
}

inline Matrix matmul(const Matrix& a, const SymMat& b) {
  return matmul(a, b.mat());
}

}  // namespace shrinkcov

#include "jointlti/linalg.hpp"

#include "jointlti/rng.hpp"

#include <algorithm>
#include <cmath>

namespace jointlti {

double spectral_radius(const Matrix& A) {
  if (A.size() == 0) return 0.0;
  if (A.rows() == 1) return std::abs(A(0, 0));
  Eigen::EigenSolver<Matrix> es(A, /*computeEigenvectors=*/false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

Matrix gaussian_matrix(Rng& rng, Index rows, Index cols, double scale) {
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) out(i, j) = scale * rng.normal();
  return out;
}

Matrix psd_sqrt(const Matrix& C) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(C);
  Vector ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Matrix random_orthogonal(Rng& rng, Index d) {
  Matrix G = gaussian_matrix(rng, d, d);
  Eigen::HouseholderQR<Matrix> qr(G);
  Matrix Q = qr.householderQ() * Matrix::Identity(d, d);
  const Matrix R = qr.matrixQR().triangularView<Eigen::Upper>();
  // Haar measure needs the signs of R's diagonal folded into Q.
  for (Index j = 0; j < d; ++j)
    if (R(j, j) < 0.0) Q.col(j) *= -1.0;
  return Q;
}

bool is_symmetric(const Matrix& C, double tol) {
  if (C.rows() != C.cols()) return false;
  return (C - C.transpose()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, C.cwiseAbs().maxCoeff());
}

}  // namespace jointlti

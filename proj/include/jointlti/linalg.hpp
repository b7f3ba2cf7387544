#pragma once

#include <Eigen/Dense>

#include <vector>

namespace jointlti {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ComplexMatrix = Eigen::MatrixXcd;
using Index = Eigen::Index;

class Rng;

/// Largest eigenvalue modulus.
double spectral_radius(const Matrix& A);

/// rows x cols matrix of i.i.d. N(0, scale^2) entries, filled row-major.
Matrix gaussian_matrix(Rng& rng, Index rows, Index cols, double scale = 1.0);

/// Symmetric square root of a PSD matrix; tiny negative eigenvalues are clipped.
Matrix psd_sqrt(const Matrix& C);

/// Random orthogonal matrix (QR of a Gaussian matrix with sign-fixed R diagonal).
Matrix random_orthogonal(Rng& rng, Index d);

bool is_symmetric(const Matrix& C, double tol = 1e-12);

}  // namespace jointlti

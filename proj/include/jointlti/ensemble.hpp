#pragma once

#include "jointlti/linalg.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace jointlti {

/// k common d x d matrices W_1..W_k.
class SharedBasis {
 public:
  explicit SharedBasis(std::vector<Matrix> matrices);

  Index k() const { return static_cast<Index>(matrices_.size()); }
  Index d() const { return matrices_.front().rows(); }
  const Matrix& operator[](Index i) const { return matrices_[static_cast<std::size_t>(i)]; }
  const std::vector<Matrix>& matrices() const { return matrices_; }

 private:
  std::vector<Matrix> matrices_;
};

/// k x M matrix whose m-th column holds the coefficients of system m.
class CoefficientSet {
 public:
  explicit CoefficientSet(Matrix B);

  Index k() const { return B_.rows(); }
  Index M() const { return B_.cols(); }
  const Matrix& matrix() const { return B_; }
  Vector beta(Index m) const { return B_.col(m); }

 private:
  Matrix B_;
};

/// Per-system additive deviations D_m from the shared-basis structure.
class MisspecificationSet {
 public:
  explicit MisspecificationSet(std::vector<Matrix> D);

  Index M() const { return static_cast<Index>(D_.size()); }
  Index d() const { return D_.front().rows(); }
  const Matrix& operator[](Index m) const { return D_[static_cast<std::size_t>(m)]; }
  const std::vector<Matrix>& matrices() const { return D_; }
  /// ||D_m||_F^2 per system.
  const std::vector<double>& per_system_fro_sq() const { return per_system_; }
  /// Sum over systems of ||D_m||_F^2.
  double total_fro_sq() const { return total_; }
  /// Number of systems with a nonzero D_m.
  Index affected_count() const;

 private:
  std::vector<Matrix> D_;
  std::vector<double> per_system_;
  double total_ = 0.0;
};

struct JordanBlock {
  double eigenvalue = 0.0;
  int size = 1;
};

/// Block structure of a real Jordan matrix plus the conditioning of the
/// similarity transform used to hide it.
struct JordanSpec {
  std::vector<JordanBlock> blocks;
  /// Target condition number of P, >= 1.
  double conditioning = 1.0;
  /// When false the orthogonal factor of P is the identity (P = diag(s)).
  bool random_rotation = true;

  int dimension() const;
  int largest_block() const;
  /// Eigenvalue of largest modulus (the first such block wins ties).
  double leading_eigenvalue() const;
  /// d/l blocks of size l, all with eigenvalue lambda.
  static JordanSpec uniform(int d, int block_size, double lambda, double conditioning = 1.0);
};

/// A = P^{-1} Lambda P with Lambda the Jordan matrix described by spec.
struct JordanFactor {
  Matrix A;
  Matrix P;
  Matrix Lambda;
  JordanSpec spec;
};

class SystemEnsemble {
 public:
  SystemEnsemble(SharedBasis basis, CoefficientSet coefficients,
                 std::optional<MisspecificationSet> misspec = std::nullopt, double rho_slack = 0.0);

  Index k() const { return basis_.k(); }
  Index d() const { return basis_.d(); }
  Index M() const { return coefficients_.M(); }

  const SharedBasis& basis() const { return basis_; }
  const CoefficientSet& coefficients() const { return coefficients_; }
  const std::optional<MisspecificationSet>& misspecification() const { return misspec_; }
  const Matrix& A(Index m) const { return A_[static_cast<std::size_t>(m)]; }
  const std::vector<Matrix>& transitions() const { return A_; }
  double rho_slack() const { return rho_slack_; }

  /// Set when the radii were fixed by rescale_to_radius; holds T_nominal.
  const std::optional<double>& spectral_control() const { return T_nominal_; }

  /// Jordan construction metadata per system, when known (empty otherwise).
  const std::vector<std::optional<JordanFactor>>& jordan() const { return jordan_; }

  std::map<std::string, std::string> seed_provenance;

  SystemEnsemble with_spectral_control(double T_nominal) const;
  SystemEnsemble with_jordan(std::vector<std::optional<JordanFactor>> jordan) const;

 private:
  SharedBasis basis_;
  CoefficientSet coefficients_;
  std::optional<MisspecificationSet> misspec_;
  std::vector<Matrix> A_;
  double rho_slack_;
  std::optional<double> T_nominal_;
  std::vector<std::optional<JordanFactor>> jordan_;
};

SharedBasis generate_shared_basis(int k, int d, std::uint64_t seed);

CoefficientSet sample_coefficients(int k, int M, std::uint64_t seed);

SystemEnsemble compose_systems(const SharedBasis& basis, const CoefficientSet& coefficients,
                               const std::optional<MisspecificationSet>& misspec = std::nullopt);

/// Scales each beta_m by targets[m] / rho(A_m); the basis is untouched so the
/// shared structure survives. Must run before misspecification is injected.
SystemEnsemble rescale_to_radius(const SystemEnsemble& ensemble, std::span<const double> targets,
                                 double T_nominal);

/// One uniform draw in [lo, hi] per system, each from its own sub-stream.
std::vector<double> sample_radius_targets(int M, double lo, double hi, std::uint64_t seed);

/// P = Q diag(s), Q random orthogonal (or I), s geometric in [1, conditioning].
JordanFactor build_from_jordan(const JordanSpec& spec, std::uint64_t seed);

/// Each system independently receives a Gaussian D_m with entry standard
/// deviation sqrt(fro_sq_target) / d with probability M^{-a}.
MisspecificationSet sample_misspecification(int d, int M, double a, double fro_sq_target,
                                            std::uint64_t seed);

/// Single-system ensemble (k = 1, W_1 = A, beta = 1) carrying Jordan metadata.
SystemEnsemble ensemble_from_jordan(const JordanFactor& factor);

/// Single-system or multi-system ensemble from arbitrary matrices: k = M,
/// W_i = A_i, B = I. Used to wrap hand-built systems.
SystemEnsemble ensemble_from_matrices(std::vector<Matrix> transitions);

}  // namespace jointlti

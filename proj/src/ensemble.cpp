#include "jointlti/ensemble.hpp"

#include "jointlti/error.hpp"
#include "jointlti/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace jointlti {

SharedBasis::SharedBasis(std::vector<Matrix> matrices) : matrices_(std::move(matrices)) {
  if (matrices_.empty()) throw ArgumentError("shared basis needs k >= 1 matrices");
  const Index d = matrices_.front().rows();
  if (d < 1) throw ArgumentError("shared basis needs d >= 1");
  for (const auto& W : matrices_) {
    if (W.rows() != d || W.cols() != d)
      throw ArgumentError(fmt::format("basis matrices must all be {}x{}", d, d));
    if (!W.allFinite()) throw ArgumentError("basis matrix has non-finite entries");
  }
}

CoefficientSet::CoefficientSet(Matrix B) : B_(std::move(B)) {
  if (B_.rows() < 1 || B_.cols() < 1) throw ArgumentError("coefficient matrix needs k >= 1 and M >= 1");
  if (!B_.allFinite()) throw ArgumentError("coefficient matrix has non-finite entries");
}

MisspecificationSet::MisspecificationSet(std::vector<Matrix> D) : D_(std::move(D)) {
  if (D_.empty()) throw ArgumentError("misspecification set needs M >= 1 matrices");
  const Index d = D_.front().rows();
  per_system_.reserve(D_.size());
  for (const auto& Dm : D_) {
    if (Dm.rows() != d || Dm.cols() != d) throw ArgumentError("misspecification matrices must all be d x d");
    if (!Dm.allFinite()) throw ArgumentError("misspecification matrix has non-finite entries");
    per_system_.push_back(Dm.squaredNorm());
    total_ += per_system_.back();
  }
}

Index MisspecificationSet::affected_count() const {
  return std::count_if(D_.begin(), D_.end(), [](const Matrix& Dm) { return !Dm.isZero(0.0); });
}

int JordanSpec::dimension() const {
  int d = 0;
  for (const auto& b : blocks) d += b.size;
  return d;
}

int JordanSpec::largest_block() const {
  int l = 0;
  for (const auto& b : blocks) l = std::max(l, b.size);
  return l;
}

double JordanSpec::leading_eigenvalue() const {
  double lead = 0.0;
  for (const auto& b : blocks)
    if (std::abs(b.eigenvalue) > std::abs(lead)) lead = b.eigenvalue;
  return lead;
}

JordanSpec JordanSpec::uniform(int d, int block_size, double lambda, double conditioning) {
  if (d < 1 || block_size < 1 || block_size > d)
    throw ArgumentError(fmt::format("invalid uniform Jordan layout d={} l={}", d, block_size));
  JordanSpec spec;
  spec.conditioning = conditioning;
  int remaining = d;
  while (remaining > 0) {
    const int l = std::min(block_size, remaining);
    spec.blocks.push_back({lambda, l});
    remaining -= l;
  }
  return spec;
}

SystemEnsemble::SystemEnsemble(SharedBasis basis, CoefficientSet coefficients,
                               std::optional<MisspecificationSet> misspec, double rho_slack)
    : basis_(std::move(basis)),
      coefficients_(std::move(coefficients)),
      misspec_(std::move(misspec)),
      rho_slack_(rho_slack) {
  if (coefficients_.k() != basis_.k())
    throw ArgumentError(fmt::format("coefficient rows ({}) must equal basis size k ({})", coefficients_.k(),
                                    basis_.k()));
  if (misspec_ && (misspec_->M() != coefficients_.M() || misspec_->d() != basis_.d()))
    throw ArgumentError("misspecification set must hold M matrices of size d x d");
  if (!(rho_slack_ >= 0.0)) throw ArgumentError("rho_slack must be >= 0");

  const Matrix& B = coefficients_.matrix();
  A_.reserve(static_cast<std::size_t>(M()));
  for (Index m = 0; m < M(); ++m) {
    Matrix Am = Matrix::Zero(d(), d());
    for (Index i = 0; i < k(); ++i) Am += B(i, m) * basis_[i];
    if (misspec_) Am += (*misspec_)[m];
    A_.push_back(std::move(Am));
  }
}

SystemEnsemble SystemEnsemble::with_spectral_control(double T_nominal) const {
  SystemEnsemble out = *this;
  out.T_nominal_ = T_nominal;
  return out;
}

SystemEnsemble SystemEnsemble::with_jordan(std::vector<std::optional<JordanFactor>> jordan) const {
  if (!jordan.empty() && static_cast<Index>(jordan.size()) != M())
    throw ArgumentError("Jordan metadata must cover every system");
  SystemEnsemble out = *this;
  out.jordan_ = std::move(jordan);
  return out;
}

SharedBasis generate_shared_basis(int k, int d, std::uint64_t seed) {
  if (k < 1 || d < 1) throw ArgumentError(fmt::format("generate_shared_basis: need k >= 1, d >= 1 (got k={}, d={})", k, d));
  std::vector<Matrix> W;
  W.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    Rng rng = Rng::stream(seed, "basis", {static_cast<std::uint64_t>(i)});
    W.push_back(gaussian_matrix(rng, d, d));
  }
  return SharedBasis(std::move(W));
}

CoefficientSet sample_coefficients(int k, int M, std::uint64_t seed) {
  if (k < 1 || M < 1) throw ArgumentError(fmt::format("sample_coefficients: need k >= 1, M >= 1 (got k={}, M={})", k, M));
  Matrix B(k, M);
  for (int m = 0; m < M; ++m) {
    Rng rng = Rng::stream(seed, "coefficients", {static_cast<std::uint64_t>(m)});
    for (int i = 0; i < k; ++i) B(i, m) = rng.normal();
  }
  return CoefficientSet(std::move(B));
}

SystemEnsemble compose_systems(const SharedBasis& basis, const CoefficientSet& coefficients,
                               const std::optional<MisspecificationSet>& misspec) {
  return SystemEnsemble(basis, coefficients, misspec);
}

SystemEnsemble rescale_to_radius(const SystemEnsemble& ensemble, std::span<const double> targets,
                                 double T_nominal) {
  if (ensemble.misspecification())
    throw ArgumentError("rescale_to_radius must run before misspecification is injected");
  if (static_cast<Index>(targets.size()) != ensemble.M())
    throw ArgumentError(fmt::format("need {} radius targets, got {}", ensemble.M(), targets.size()));
  if (!(T_nominal > 0.0)) throw ArgumentError("T_nominal must be positive");

  Matrix B = ensemble.coefficients().matrix();
  for (Index m = 0; m < ensemble.M(); ++m) {
    const double target = targets[static_cast<std::size_t>(m)];
    if (!(target > 0.0) || !std::isfinite(target)) throw ArgumentError("radius targets must be positive");
    const double rho = spectral_radius(ensemble.A(m));
    if (rho < 1e-12)
      throw DegenerateSystemError(fmt::format("system {} is nilpotent to precision (rho = {:.3g})", m, rho));
    B.col(m) *= target / rho;
  }
  SystemEnsemble scaled(ensemble.basis(), CoefficientSet(B), std::nullopt, ensemble.rho_slack());

  // One correction pass absorbs the rounding of the recomposed sum.
  for (Index m = 0; m < scaled.M(); ++m) B.col(m) *= targets[static_cast<std::size_t>(m)] / spectral_radius(scaled.A(m));
  SystemEnsemble out(ensemble.basis(), CoefficientSet(std::move(B)), std::nullopt, ensemble.rho_slack());
  out.seed_provenance = ensemble.seed_provenance;
  return out.with_spectral_control(T_nominal).with_jordan(ensemble.jordan());
}

std::vector<double> sample_radius_targets(int M, double lo, double hi, std::uint64_t seed) {
  if (M < 1) throw ArgumentError("sample_radius_targets: need M >= 1");
  if (!(lo > 0.0) || !(hi >= lo)) throw ArgumentError("radius range must satisfy 0 < lo <= hi");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    Rng rng = Rng::stream(seed, "radius", {static_cast<std::uint64_t>(m)});
    out.push_back(rng.uniform(lo, hi));
  }
  return out;
}

JordanFactor build_from_jordan(const JordanSpec& spec, std::uint64_t seed) {
  if (spec.blocks.empty()) throw ArgumentError("Jordan spec has no blocks");
  for (const auto& b : spec.blocks) {
    if (b.size < 1) throw ArgumentError("Jordan block sizes must be positive");
    if (!std::isfinite(b.eigenvalue)) throw ArgumentError("Jordan eigenvalues must be finite");
  }
  if (!(spec.conditioning >= 1.0) || !std::isfinite(spec.conditioning))
    throw ArgumentError(fmt::format("conditioning must be >= 1 (got {})", spec.conditioning));

  const int d = spec.dimension();
  Matrix Lambda = Matrix::Zero(d, d);
  int offset = 0;
  for (const auto& b : spec.blocks) {
    for (int j = 0; j < b.size; ++j) {
      Lambda(offset + j, offset + j) = b.eigenvalue;
      if (j + 1 < b.size) Lambda(offset + j, offset + j + 1) = 1.0;
    }
    offset += b.size;
  }

  Rng rng = Rng::stream(seed, "jordan");
  Matrix Q = spec.random_rotation ? random_orthogonal(rng, d) : Matrix::Identity(d, d);
  Vector s(d);
  for (int i = 0; i < d; ++i)
    s(i) = d == 1 ? 1.0 : std::pow(spec.conditioning, static_cast<double>(i) / (d - 1));

  Matrix P = Q * s.asDiagonal();
  Matrix P_inv = s.cwiseInverse().asDiagonal() * Q.transpose();
  Matrix A = P_inv * Lambda * P;
  return JordanFactor{std::move(A), std::move(P), std::move(Lambda), spec};
}

MisspecificationSet sample_misspecification(int d, int M, double a, double fro_sq_target, std::uint64_t seed) {
  if (d < 1 || M < 1) throw ArgumentError("sample_misspecification: need d >= 1, M >= 1");
  if (!(a >= 0.0)) throw ArgumentError("misspecification exponent a must be >= 0");
  if (!(fro_sq_target > 0.0)) throw ArgumentError("misspecification target ||D||_F^2 must be > 0");

  const double p = std::pow(static_cast<double>(M), -a);
  const double entry_std = std::sqrt(fro_sq_target) / d;
  std::vector<Matrix> D;
  D.reserve(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    Rng rng = Rng::stream(seed, "misspec", {static_cast<std::uint64_t>(m)});
    if (rng.bernoulli(p))
      D.push_back(gaussian_matrix(rng, d, d, entry_std));
    else
      D.push_back(Matrix::Zero(d, d));
  }
  return MisspecificationSet(std::move(D));
}

SystemEnsemble ensemble_from_jordan(const JordanFactor& factor) {
  SystemEnsemble e(SharedBasis({factor.A}), CoefficientSet(Matrix::Ones(1, 1)));
  return e.with_jordan({factor});
}

SystemEnsemble ensemble_from_matrices(std::vector<Matrix> transitions) {
  const auto M = static_cast<Index>(transitions.size());
  return SystemEnsemble(SharedBasis(std::move(transitions)), CoefficientSet(Matrix::Identity(M, M)));
}

}  // namespace jointlti

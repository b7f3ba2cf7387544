#pragma once

#include "jointlti/dynamics.hpp"
#include "jointlti/ensemble.hpp"
#include "jointlti/linalg.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace jointlti {

/// Eigenvalue-decay factor of a stable Jordan matrix with largest block l_star
/// and leading eigenvalue modulus lam:
///   e^{1/lam} [ (l*-1)/(-log lam) + (l*-1)! / (-log lam)^{l*} ],
/// evaluated in log space. For l_star = 1 this returns 1/(1 - lam), the
/// diagonalizable bound. Throws DomainError for lam >= 1.
double f_lambda(int l_star, double lam);

/// Max row absolute sum.
double op_norm_inf(const Matrix& A);
double op_norm_inf(const ComplexMatrix& A);

struct NormValue {
  double value = 0.0;
  bool exact = false;
};

/// Largest inner-product cutoff for exact enumeration of ||A||_{inf->2}.
inline constexpr Index kExactInfTo2MaxCols = 16;

/// ||A||_{inf->2} = max over v in {-1,1}^cols of ||A v||_2, enumerated exactly
/// when cols <= 16; otherwise the Cauchy-Schwarz bound sqrt(sum_i ||row_i||_1^2).
NormValue op_norm_inf_to_2(const Matrix& A);
/// Complex matrices always use the row bound (exact = false).
NormValue op_norm_inf_to_2(const ComplexMatrix& A);
/// The row bound sqrt(sum_i ||row_i||_1^2).
double op_norm_inf_to_2_bound(const Matrix& A);

enum class SpectralRegime { stable, near_unit };

std::string to_string(SpectralRegime regime);

struct SpectralSummary {
  double spectral_radius = 0.0;
  int l_star = 1;
  /// ||P^{-1}||_{inf->2} ||P||_inf.
  double xi = 0.0;
  bool xi_exact = false;
  /// f(Lambda) in the stable regime, e^{rho+1} in the near-unit regime.
  double f_value = 0.0;
  double alpha = 0.0;
  SpectralRegime regime = SpectralRegime::stable;
};

/// alpha(A) from construction metadata (A = P^{-1} Lambda P).
SpectralSummary alpha(const JordanFactor& factor, double rho, double T);

/// alpha(A) for a diagonalizable A, using its eigendecomposition A = V D V^{-1}
/// (P = V^{-1}). Throws JordanUnavailableError when cond(V) > 1e8.
SpectralSummary alpha(const Matrix& A, double rho, double T);

/// b_T(delta) = sqrt(2 sigma^2 log(2 d M T / delta)).
double noise_truncation_level(double sigma_sq, Index d, Index M, Index T, double delta);

struct SystemCovariance {
  Index m = 0;
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  double lower_theory = 0.0;
  double upper_theory = 0.0;
  double kappa = 0.0;
  bool lower_held = false;
  bool upper_held = false;
  double b_bar = 0.0;
  SpectralSummary spectral;
};

struct CovarianceReport {
  std::vector<SystemCovariance> systems;
  double lambda_lower = 0.0;  ///< min_m of the theory lower bounds
  double lambda_upper = 0.0;  ///< max_m of the theory upper bounds
  double kappa = 0.0;         ///< max_m kappa_m
  double kappa_infty = 0.0;   ///< lambda_upper / lambda_lower
  double delta = 0.0;
  double rho = 0.0;
};

/// Sample covariances Sigma_m = sum_{t<T} x_m(t) x_m(t)' against the envelopes
/// lambda_min(C) T / 4 and alpha(A_m)^2 b_bar^2 T (stable) or
/// alpha(A_m)^2 b_bar^2 T^{2 l* + 1} (near unit), b_bar = b_T(delta/3) + ||x_m(0)||_inf.
CovarianceReport covariance_report(const TrajectoryBundle& bundle, const SystemEnsemble& ensemble,
                                   const NoiseModel& noise, double delta, double rho);

struct ErrorReport {
  std::vector<double> per_system_fro_sq;
  double mean = 0.0;
  std::string method;
};

ErrorReport estimation_error(std::span<const Matrix> A_hat, const SystemEnsemble& ensemble,
                             std::string method = "");

struct NoiseEvents {
  bool bounded = false;     ///< max ||eta||_inf <= b_T(delta)
  bool covariance = false;  ///< 3 lmin(C)/4 I <= (1/T) sum eta eta' <= 5 lmax(C)/4 I for every m
  bool magnitude = false;   ///< ||Z||_F^2 <= M T tr(C) + log(2/delta)
  double max_abs_noise = 0.0;
  double truncation_level = 0.0;
  double total_noise_sq = 0.0;
  double magnitude_bound = 0.0;
};

/// Requires retained noise (UnavailableError otherwise).
NoiseEvents noise_event_check(const TrajectoryBundle& bundle, double delta);

struct EventFrequencies {
  double bounded = 0.0;
  double covariance = 0.0;
  double magnitude = 0.0;
  std::size_t replicates = 0;
};

EventFrequencies event_frequencies(std::span<const NoiseEvents> events);

}  // namespace jointlti

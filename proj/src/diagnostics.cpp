#include "jointlti/diagnostics.hpp"

#include "jointlti/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <limits>

namespace jointlti {

double f_lambda(int l_star, double lam) {
  if (l_star < 1) throw ArgumentError("f_lambda: l_star must be >= 1");
  if (!(lam < 1.0)) throw DomainError(fmt::format("f_lambda: |lambda_1| = {} is not < 1; use the near-unit regime", lam));
  if (l_star == 1) {
    if (!(lam >= 0.0)) throw DomainError("f_lambda: |lambda_1| must be >= 0");
    return 1.0 / (1.0 - lam);
  }
  if (!(lam > 0.0)) throw DomainError("f_lambda: |lambda_1| must be > 0 when l_star > 1");
  const double L = -std::log(lam);
  const double l = static_cast<double>(l_star);
  const double log_prefactor = 1.0 / lam;
  const double log_first = std::log(l - 1.0) - std::log(L);
  const double log_second = std::lgamma(l) - l * std::log(L);
  // log(e^a + e^b) without overflow.
  const double hi = std::max(log_first, log_second);
  const double lo = std::min(log_first, log_second);
  return std::exp(log_prefactor + hi + std::log1p(std::exp(lo - hi)));
}

double op_norm_inf(const Matrix& A) { return A.cwiseAbs().rowwise().sum().maxCoeff(); }

double op_norm_inf(const ComplexMatrix& A) { return A.cwiseAbs().rowwise().sum().maxCoeff(); }

double op_norm_inf_to_2_bound(const Matrix& A) {
  return std::sqrt(A.cwiseAbs().rowwise().sum().squaredNorm());
}

NormValue op_norm_inf_to_2(const Matrix& A) {
  const Index n = A.cols();
  if (n == 0 || A.rows() == 0) return {0.0, true};
  if (n > kExactInfTo2MaxCols) return {op_norm_inf_to_2_bound(A), false};

  // ||A v||_2^2 is convex in v, so the max over the cube sits on a vertex.
  // v and -v give the same norm: fix v_0 = +1 and walk the remaining
  // 2^{n-1} sign patterns in Gray-code order, one column update per step.
  Vector Av = A.rowwise().sum();
  Eigen::VectorXi sign = Eigen::VectorXi::Ones(n);
  double best = Av.squaredNorm();
  const std::uint64_t count = std::uint64_t{1} << (n - 1);
  for (std::uint64_t i = 1; i < count; ++i) {
    const int bit = std::countr_zero(i);
    const Index col = bit + 1;
    sign(col) = -sign(col);
    Av += (2.0 * sign(col)) * A.col(col);
    best = std::max(best, Av.squaredNorm());
  }
  return {std::sqrt(best), true};
}

NormValue op_norm_inf_to_2(const ComplexMatrix& A) {
  return {std::sqrt(A.cwiseAbs().rowwise().sum().squaredNorm()), false};
}

std::string to_string(SpectralRegime regime) {
  return regime == SpectralRegime::stable ? "stable" : "near_unit";
}

namespace {

SpectralSummary assemble(double radius, int l_star, double xi, bool xi_exact, double rho, double T) {
  if (!(rho >= 0.0)) throw ArgumentError("rho must be >= 0");
  if (!(T > 0.0)) throw ArgumentError("T must be > 0");
  SpectralSummary s;
  s.spectral_radius = radius;
  s.l_star = l_star;
  s.xi = xi;
  s.xi_exact = xi_exact;
  if (radius < 1.0) {
    s.regime = SpectralRegime::stable;
    s.f_value = f_lambda(l_star, radius);
  } else if (radius <= 1.0 + rho / T) {
    s.regime = SpectralRegime::near_unit;
    s.f_value = std::exp(rho + 1.0);
  } else {
    throw DomainError(fmt::format("spectral radius {} exceeds the budget 1 + rho/T = {}", radius, 1.0 + rho / T));
  }
  s.alpha = s.xi * s.f_value;
  return s;
}

}  // namespace

SpectralSummary alpha(const JordanFactor& factor, double rho, double T) {
  const Matrix P_inv = factor.P.inverse();
  const NormValue n = op_norm_inf_to_2(P_inv);
  const double xi = n.value * op_norm_inf(factor.P);
  return assemble(std::abs(factor.spec.leading_eigenvalue()), factor.spec.largest_block(), xi, n.exact, rho, T);
}

SpectralSummary alpha(const Matrix& A, double rho, double T) {
  if (A.rows() != A.cols() || A.rows() < 1) throw ArgumentError("alpha: A must be square");
  if (!A.allFinite()) throw ArgumentError("alpha: A has non-finite entries");
  Eigen::EigenSolver<Matrix> es(A);
  if (es.info() != Eigen::Success) throw JordanUnavailableError("alpha: eigendecomposition failed");
  const ComplexMatrix V = es.eigenvectors();
  const double radius = es.eigenvalues().cwiseAbs().maxCoeff();

  Eigen::JacobiSVD<ComplexMatrix> svd(V);
  const auto& sv = svd.singularValues();
  const double cond = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
  if (!(cond <= 1e8))
    throw JordanUnavailableError(
        fmt::format("alpha: A looks defective (eigenvector condition number {:.3g}); supply Jordan metadata", cond));

  const ComplexMatrix V_inv = V.inverse();
  const bool real = V.imag().cwiseAbs().maxCoeff() == 0.0;
  double xi = 0.0;
  bool exact = false;
  if (real) {
    const NormValue n = op_norm_inf_to_2(Matrix(V.real()));
    xi = n.value * op_norm_inf(Matrix(V_inv.real()));
    exact = n.exact;
  } else {
    const NormValue n = op_norm_inf_to_2(V);
    xi = n.value * op_norm_inf(V_inv);
    exact = n.exact;
  }
  return assemble(radius, 1, xi, exact, rho, T);
}

double noise_truncation_level(double sigma_sq, Index d, Index M, Index T, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw ArgumentError("delta must lie in (0, 1)");
  return std::sqrt(2.0 * sigma_sq *
                   std::log(2.0 * static_cast<double>(d) * static_cast<double>(M) * static_cast<double>(T) / delta));
}

CovarianceReport covariance_report(const TrajectoryBundle& bundle, const SystemEnsemble& ensemble,
                                   const NoiseModel& noise, double delta, double rho) {
  if (bundle.M() != ensemble.M() || bundle.d() != ensemble.d() || noise.d() != bundle.d())
    throw ArgumentError("covariance_report: bundle, ensemble and noise dimensions disagree");
  const Index T = bundle.T();
  const double Td = static_cast<double>(T);
  const double b_T = noise_truncation_level(noise.sigma_sq(), bundle.d(), bundle.M(), T, delta / 3.0);

  CovarianceReport report;
  report.delta = delta;
  report.rho = rho;
  report.lambda_lower = std::numeric_limits<double>::infinity();
  report.lambda_upper = 0.0;
  for (Index m = 0; m < bundle.M(); ++m) {
    const auto& tr = bundle[m];
    const Matrix X = tr.regressors();
    const Matrix Sigma = X.transpose() * X;
    Eigen::SelfAdjointEigenSolver<Matrix> es(Sigma, Eigen::EigenvaluesOnly);

    SystemCovariance row;
    row.m = m;
    row.lambda_min = es.eigenvalues().minCoeff();
    row.lambda_max = es.eigenvalues().maxCoeff();
    const auto& meta = ensemble.jordan();
    try {
      row.spectral = (!meta.empty() && meta[static_cast<std::size_t>(m)])
                         ? alpha(*meta[static_cast<std::size_t>(m)], rho, Td)
                         : alpha(ensemble.A(m), rho, Td);
    } catch (const JordanUnavailableError& e) {
      throw JordanUnavailableError(fmt::format("system {}: {}", m, e.what()));
    } catch (const DomainError& e) {
      throw DomainError(fmt::format("system {}: {}", m, e.what()));
    }
    row.b_bar = b_T + tr.states.row(0).cwiseAbs().maxCoeff();
    row.lower_theory = 0.25 * noise.lambda_min() * Td;
    const double a2b2 = row.spectral.alpha * row.spectral.alpha * row.b_bar * row.b_bar;
    row.upper_theory = row.spectral.regime == SpectralRegime::stable
                           ? a2b2 * Td
                           : a2b2 * std::pow(Td, 2.0 * row.spectral.l_star + 1.0);
    row.kappa = row.upper_theory / row.lower_theory;
    row.lower_held = row.lower_theory > 0.0 && row.lambda_min >= row.lower_theory;
    row.upper_held = row.lambda_max <= row.upper_theory;

    report.lambda_lower = std::min(report.lambda_lower, row.lower_theory);
    report.lambda_upper = std::max(report.lambda_upper, row.upper_theory);
    report.kappa = std::max(report.kappa, row.kappa);
    report.systems.push_back(row);
  }
  report.kappa_infty = report.lambda_upper / report.lambda_lower;
  return report;
}

ErrorReport estimation_error(std::span<const Matrix> A_hat, const SystemEnsemble& ensemble, std::string method) {
  if (static_cast<Index>(A_hat.size()) != ensemble.M())
    throw ArgumentError(fmt::format("estimation_error: {} estimates for {} systems", A_hat.size(), ensemble.M()));
  ErrorReport r;
  r.method = std::move(method);
  double sum = 0.0;
  for (Index m = 0; m < ensemble.M(); ++m) {
    const Matrix& Ah = A_hat[static_cast<std::size_t>(m)];
    if (Ah.rows() != ensemble.d() || Ah.cols() != ensemble.d())
      throw ArgumentError("estimation_error: estimate dimension mismatch");
    r.per_system_fro_sq.push_back((Ah - ensemble.A(m)).squaredNorm());
    sum += r.per_system_fro_sq.back();
  }
  r.mean = sum / static_cast<double>(ensemble.M());
  return r;
}

NoiseEvents noise_event_check(const TrajectoryBundle& bundle, double delta) {
  if (!bundle.noise_retained()) throw UnavailableError("noise_event_check: bundle was simulated without retained noise");
  const NoiseModel& noise = bundle.noise();
  const Index T = bundle.T();
  const Index d = bundle.d();

  NoiseEvents ev;
  ev.truncation_level = noise_truncation_level(noise.sigma_sq(), d, bundle.M(), T, delta);
  ev.magnitude_bound = static_cast<double>(bundle.M() * T) * noise.C().trace() + std::log(2.0 / delta);
  ev.covariance = true;
  const double lo = 0.75 * noise.lambda_min();
  const double hi = 1.25 * noise.lambda_max();
  const double slack = 1e-12 * std::max(1.0, hi);
  for (const auto& tr : bundle.trajectories()) {
    const auto eta = tr.noise->bottomRows(T);
    ev.max_abs_noise = std::max(ev.max_abs_noise, eta.cwiseAbs().maxCoeff());
    ev.total_noise_sq += eta.squaredNorm();
    const Matrix S = (eta.transpose() * eta) / static_cast<double>(T);
    Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < lo - slack || es.eigenvalues().maxCoeff() > hi + slack) ev.covariance = false;
  }
  ev.bounded = ev.max_abs_noise <= ev.truncation_level;
  ev.magnitude = ev.total_noise_sq <= ev.magnitude_bound;
  return ev;
}

EventFrequencies event_frequencies(std::span<const NoiseEvents> events) {
  EventFrequencies f;
  f.replicates = events.size();
  if (events.empty()) return f;
  for (const auto& e : events) {
    f.bounded += e.bounded;
    f.covariance += e.covariance;
    f.magnitude += e.magnitude;
  }
  const auto n = static_cast<double>(events.size());
  f.bounded /= n;
  f.covariance /= n;
  f.magnitude /= n;
  return f;
}

}  // namespace jointlti

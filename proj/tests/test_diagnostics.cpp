#include "jointlti/diagnostics.hpp"
#include "jointlti/error.hpp"
#include "jointlti/estimators.hpp"
#include "jointlti/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace jointlti;

namespace {

// Plain enumeration over every sign vector; no symmetry or Gray-code tricks.
double brute_inf_to_2(const Matrix& A) {
  const Index n = A.cols();
  double best = 0.0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    Vector v(n);
    for (Index j = 0; j < n; ++j) v(j) = (mask >> j) & 1 ? 1.0 : -1.0;
    best = std::max(best, (A * v).norm());
  }
  return best;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

SystemEnsemble stable_ensemble(int k, int d, int M, double T, std::uint64_t seed) {
  const SystemEnsemble raw = compose_systems(generate_shared_basis(k, d, derive_seed(seed, "b")),
                                             sample_coefficients(k, M, derive_seed(seed, "c")));
  return rescale_to_radius(raw, sample_radius_targets(M, 0.7, 0.9, derive_seed(seed, "r")), T);
}

}  // namespace

TEST_CASE("f_lambda examples") {
  CHECK(f_lambda(1, 0.5) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(f_lambda(2, std::exp(-1.0)) == doctest::Approx(2.0 * std::exp(std::exp(1.0))).epsilon(1e-12));
  CHECK(2.0 * std::exp(std::exp(1.0)) == doctest::Approx(30.31).epsilon(1e-3));
  CHECK(f_lambda(1, 1e-12) == doctest::Approx(1.0).epsilon(1e-11));
  CHECK_THROWS_AS(f_lambda(1, 1.0), DomainError);
  CHECK_THROWS_AS(f_lambda(3, 1.5), DomainError);
}

TEST_CASE("f_lambda matches the direct formula and stays finite for large blocks") {
  for (int l : {2, 3, 5, 8}) {
    for (double lam : {0.3, 0.7, 0.9, 0.99}) {
      const double L = -std::log(lam);
      double fact = 1.0;
      for (int i = 2; i < l; ++i) fact *= i;
      const double direct = std::exp(1.0 / lam) * ((l - 1) / L + fact / std::pow(L, l));
      CHECK(f_lambda(l, lam) == doctest::Approx(direct).epsilon(1e-10));
    }
  }
  const double big = f_lambda(32, 0.999);
  CHECK(std::isfinite(big));
  CHECK(std::log(big) == doctest::Approx(1.0 / 0.999 + std::lgamma(32.0) - 32.0 * std::log(-std::log(0.999))).epsilon(1e-9));
}

TEST_CASE("operator norm examples") {
  Matrix A(2, 2);
  A << 1, 1, 1, -1;
  const NormValue n = op_norm_inf_to_2(A);
  CHECK(n.exact);
  CHECK(n.value == doctest::Approx(2.0).epsilon(1e-15));
  for (int d : {1, 3, 7}) {
    const Matrix I = Matrix::Identity(d, d);
    CHECK(op_norm_inf_to_2(I).value == doctest::Approx(std::sqrt(d)).epsilon(1e-15));
    CHECK(op_norm_inf(I) == 1.0);
  }
  Matrix R(2, 3);
  R << 1, -2, 3, -4, 5, -6;
  CHECK(op_norm_inf(R) == 15.0);
}

TEST_CASE("exact enumeration agrees with brute force and dominates interior points") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Index rows = 2 + trial % 5;
    const Index cols = 1 + trial % 9;
    const Matrix A = gaussian_matrix(rng, rows, cols);
    const NormValue n = op_norm_inf_to_2(A);
    CHECK(n.exact);
    CHECK(n.value == doctest::Approx(brute_inf_to_2(A)).epsilon(1e-12));
    for (int s = 0; s < 50; ++s) {
      Vector v(cols);
      for (Index j = 0; j < cols; ++j) v(j) = rng.uniform(-1.0, 1.0);
      CHECK((A * v).norm() <= n.value + 1e-12);
    }
    CHECK(op_norm_inf_to_2_bound(A) >= n.value - 1e-12);
  }
}

TEST_CASE("fallback bound dominates exact minors") {
  Rng rng(8);
  const Matrix A = gaussian_matrix(rng, 25, 25);
  const NormValue big = op_norm_inf_to_2(A);
  CHECK_FALSE(big.exact);
  CHECK(big.value == doctest::Approx(op_norm_inf_to_2_bound(A)).epsilon(1e-15));
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Index> idx(25);
    for (Index i = 0; i < 25; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (Index i = 24; i > 0; --i) std::swap(idx[static_cast<std::size_t>(i)], idx[rng.next_u64() % static_cast<std::uint64_t>(i + 1)]);
    Matrix minor(10, 10);
    for (Index r = 0; r < 10; ++r)
      for (Index c = 0; c < 10; ++c) minor(r, c) = A(idx[static_cast<std::size_t>(r)], idx[static_cast<std::size_t>(10 + c)]);
    const NormValue exact = op_norm_inf_to_2(minor);
    REQUIRE(exact.exact);
    CHECK(op_norm_inf_to_2_bound(minor) >= exact.value - 1e-12);
  }
}

TEST_CASE("alpha examples") {
  {
    const int d = 5;
    JordanSpec spec = JordanSpec::uniform(d, 1, 0.5);
    spec.random_rotation = false;
    const SpectralSummary s = alpha(build_from_jordan(spec, 0), 0.0, 100.0);
    CHECK(s.regime == SpectralRegime::stable);
    CHECK(s.xi == doctest::Approx(std::sqrt(d)).epsilon(1e-14));
    CHECK(s.f_value == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(s.alpha == doctest::Approx(2.0 * std::sqrt(d)).epsilon(1e-14));
  }
  {
    JordanSpec spec{{{1.0, 2}}, 1.0, false};
    const SpectralSummary s = alpha(build_from_jordan(spec, 0), 0.0, 100.0);
    CHECK(s.regime == SpectralRegime::near_unit);
    CHECK(s.l_star == 2);
    CHECK(s.alpha == doctest::Approx(std::sqrt(2.0) * std::exp(1.0)).epsilon(1e-14));
  }
  {
    JordanSpec spec{{{1.2, 1}, {0.5, 1}}, 1.0};
    CHECK_THROWS_AS(alpha(build_from_jordan(spec, 0), 0.1, 100.0), DomainError);
    Matrix A = Matrix::Zero(2, 2);
    A(0, 0) = 1.2;
    CHECK_THROWS_AS(alpha(A, 0.1, 100.0), DomainError);
  }
}

TEST_CASE("alpha assembly identity and the near-unit budget") {
  for (double lam : {0.6, 0.95, 1.0, 1.004}) {
    JordanSpec spec = JordanSpec::uniform(6, 3, lam, 5.0);
    const SpectralSummary s = alpha(build_from_jordan(spec, 2), 0.5, 100.0);
    CHECK(s.l_star == 3);
    CHECK(s.alpha > 0.0);
    if (lam < 1.0) {
      CHECK(s.regime == SpectralRegime::stable);
      CHECK(s.alpha == doctest::Approx(s.xi * f_lambda(3, lam)).epsilon(1e-12));
    } else {
      CHECK(s.regime == SpectralRegime::near_unit);
      CHECK(s.alpha == doctest::Approx(s.xi * std::exp(1.5)).epsilon(1e-12));
    }
  }
  JordanSpec over = JordanSpec::uniform(4, 2, 1.006);
  CHECK_THROWS_AS(alpha(build_from_jordan(over, 2), 0.5, 100.0), DomainError);
}

TEST_CASE("alpha from A alone") {
  Matrix A = Matrix::Zero(3, 3);
  A(0, 0) = 0.5;
  A(1, 1) = -0.3;
  A(2, 2) = 0.2;
  const SpectralSummary s = alpha(A, 0.0, 10.0);
  CHECK(s.spectral_radius == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(s.l_star == 1);
  CHECK(s.xi == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
  CHECK(s.alpha == doctest::Approx(2.0 * std::sqrt(3.0)).epsilon(1e-12));

  Matrix J(2, 2);
  J << 1, 1, 0, 1;
  CHECK_THROWS_AS(alpha(J, 0.0, 10.0), JordanUnavailableError);

  // A rotation has complex eigenvalues; the complex path still yields a bound.
  Matrix R(2, 2);
  R << 0.0, -0.8, 0.8, 0.0;
  const SpectralSummary c = alpha(R, 0.0, 10.0);
  CHECK(c.spectral_radius == doctest::Approx(0.8).epsilon(1e-12));
  CHECK_FALSE(c.xi_exact);
}

TEST_CASE("truncation level formula") {
  CHECK(noise_truncation_level(4.0, 25, 50, 200, 0.1) ==
        doctest::Approx(std::sqrt(8.0 * std::log(2.0 * 25 * 50 * 200 / 0.1))).epsilon(1e-14));
  CHECK_THROWS_AS(noise_truncation_level(1.0, 2, 2, 2, 0.0), ArgumentError);
}

TEST_CASE("covariance report on zero data") {
  const SystemEnsemble e = stable_ensemble(2, 3, 2, 100, 1);
  const NoiseModel zero = NoiseModel::isotropic(3, 0.0);
  const TrajectoryBundle b = simulate_bundle(e, 100, zero, std::nullopt, 2);
  const CovarianceReport r = covariance_report(b, e, zero, 0.1, 0.0);
  for (const auto& s : r.systems) {
    CHECK(s.lambda_min == 0.0);
    CHECK(s.lambda_max == 0.0);
    CHECK_FALSE(s.lower_held);
  }
}

TEST_CASE("covariance report consistency and lower event at large T") {
  const int T = 2000;
  const NoiseModel noise = NoiseModel::isotropic(10, 1.0);
  int held = 0, total = 0, upper = 0;
  for (std::uint64_t rep = 0; rep < 20; ++rep) {
    const SystemEnsemble e = stable_ensemble(3, 10, 5, T, 10 + rep);
    const TrajectoryBundle b = simulate_bundle(e, T, noise, std::nullopt, rep);
    const CovarianceReport r = covariance_report(b, e, noise, 0.1, 0.0);
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0, kmax = 0.0;
    for (const auto& s : r.systems) {
      // Independent recomputation of the sample covariance eigenvalues.
      Matrix Sigma = Matrix::Zero(10, 10);
      for (Index t = 0; t < T; ++t) Sigma += b[s.m].states.row(t).transpose() * b[s.m].states.row(t);
      Eigen::SelfAdjointEigenSolver<Matrix> es(Sigma);
      CHECK(s.lambda_min == doctest::Approx(es.eigenvalues()(0)).epsilon(1e-9));
      CHECK(s.lower_theory == doctest::Approx(T / 4.0).epsilon(1e-14));
      CHECK(s.kappa == doctest::Approx(s.upper_theory / s.lower_theory).epsilon(1e-14));
      lo = std::min(lo, s.lower_theory);
      hi = std::max(hi, s.upper_theory);
      kmax = std::max(kmax, s.kappa);
      held += s.lambda_min >= T / 4.0;
      upper += s.upper_held;
      ++total;
    }
    CHECK(r.lambda_lower == lo);
    CHECK(r.lambda_upper == hi);
    CHECK(r.kappa == kmax);
    CHECK(r.kappa_infty == doctest::Approx(hi / lo).epsilon(1e-14));
    CHECK(r.kappa_infty >= r.kappa);
  }
  CHECK(static_cast<double>(held) / total >= 0.97);
  CHECK(static_cast<double>(upper) / total >= 1.0 - 0.1 - 0.03);
}

TEST_CASE("upper event in the near-unit regime") {
  const int T = 500;
  const NoiseModel noise = NoiseModel::isotropic(4, 1.0);
  int upper = 0, total = 0;
  for (std::uint64_t rep = 0; rep < 200; ++rep) {
    const JordanFactor f = build_from_jordan(JordanSpec::uniform(4, 2, 1.0, 2.0), rep);
    const SystemEnsemble e = ensemble_from_jordan(f);
    const TrajectoryBundle b = simulate_bundle(e, T, noise, std::nullopt, 1000 + rep);
    const CovarianceReport r = covariance_report(b, e, noise, 0.1, 0.0);
    CHECK(r.systems[0].spectral.regime == SpectralRegime::near_unit);
    upper += r.systems[0].upper_held;
    ++total;
  }
  CHECK(static_cast<double>(upper) / total >= 1.0 - 0.1 - 0.03);
}

TEST_CASE("covariance report needs Jordan metadata for defective systems") {
  Matrix J(2, 2);
  J << 1, 1, 0, 1;
  const SystemEnsemble e = ensemble_from_matrices({J});
  const NoiseModel noise = NoiseModel::isotropic(2, 1.0);
  const TrajectoryBundle b = simulate_bundle(e, 20, noise, std::nullopt, 2);
  CHECK_THROWS_AS(covariance_report(b, e, noise, 0.1, 0.0), JordanUnavailableError);
}

TEST_CASE("estimation error arithmetic") {
  const SystemEnsemble e = stable_ensemble(2, 3, 10, 100, 3);
  std::vector<Matrix> exact(e.transitions());
  CHECK(estimation_error(exact, e).mean == 0.0);
  Matrix E = Matrix::Zero(3, 3);
  E(1, 2) = 0.3;
  exact[4] += E;
  const ErrorReport r = estimation_error(exact, e, "probe");
  CHECK(r.mean == doctest::Approx(0.009).epsilon(1e-12));
  CHECK(r.per_system_fro_sq[4] == doctest::Approx(0.09).epsilon(1e-12));
  CHECK(r.method == "probe");
  exact.pop_back();
  CHECK_THROWS_AS(estimation_error(exact, e), ArgumentError);
}

TEST_CASE("joint beats OLS at desk scale") {
  const SystemEnsemble e = stable_ensemble(3, 10, 50, 100, 5);
  const TrajectoryBundle b = simulate_bundle(e, 100, NoiseModel::isotropic(10, 1.0), std::nullopt, 6);
  const double joint = estimation_error(joint_fit(b, 3, FitConfig{}).A_hat, e).mean;
  const double ols = estimation_error(ols_fit(b).A_hat, e).mean;
  CHECK(joint < ols);
}

TEST_CASE("noise events need retained noise") {
  const SystemEnsemble e = stable_ensemble(2, 3, 2, 100, 7);
  const TrajectoryBundle b = simulate_bundle(e, 20, NoiseModel::isotropic(3, 1.0), std::nullopt, 1);
  CHECK_THROWS_AS(noise_event_check(b, 0.1), UnavailableError);
}

TEST_CASE("zero noise satisfies every event") {
  const SystemEnsemble e = stable_ensemble(2, 3, 2, 100, 7);
  const TrajectoryBundle b = simulate_bundle(e, 20, NoiseModel::isotropic(3, 0.0), std::nullopt, 1, true);
  const NoiseEvents ev = noise_event_check(b, 0.1);
  CHECK(ev.bounded);
  CHECK(ev.covariance);
  CHECK(ev.magnitude);
}

TEST_CASE("noise event computation and frequencies") {
  const int d = 5, M = 10, T = 200;
  const double delta = 0.05;
  const SystemEnsemble e = stable_ensemble(2, d, M, T, 9);
  const NoiseModel noise = NoiseModel::isotropic(d, 1.0);
  std::vector<NoiseEvents> events;
  for (std::uint64_t r = 0; r < 500; ++r) {
    const TrajectoryBundle b = simulate_bundle(e, T, noise, std::nullopt, derive_seed(3, "rep", {r}), true);
    const NoiseEvents ev = noise_event_check(b, delta);
    if (r < 5) {
      double total = 0.0, mx = 0.0;
      bool cov = true;
      for (const auto& tr : b.trajectories()) {
        Matrix S = Matrix::Zero(d, d);
        for (Index t = 1; t <= T; ++t) {
          S += tr.noise->row(t).transpose() * tr.noise->row(t);
          total += tr.noise->row(t).squaredNorm();
          mx = std::max(mx, tr.noise->row(t).cwiseAbs().maxCoeff());
        }
        Eigen::SelfAdjointEigenSolver<Matrix> es(S / T);
        cov = cov && es.eigenvalues()(0) >= 0.75 && es.eigenvalues()(d - 1) <= 1.25;
      }
      CHECK(ev.total_noise_sq == doctest::Approx(total).epsilon(1e-12));
      CHECK(ev.max_abs_noise == mx);
      CHECK(ev.magnitude_bound == doctest::Approx(M * T * d + std::log(2.0 / delta)).epsilon(1e-14));
      CHECK(ev.magnitude == (total <= M * T * d + std::log(2.0 / delta)));
      CHECK(ev.covariance == cov);
    }
    events.push_back(ev);
  }
  const EventFrequencies f = event_frequencies(events);
  CHECK(f.replicates == 500);
  CHECK(f.bounded >= 1.0 - delta - 0.02);
  // ||Z||_F^2 is chi-square with n = dMT degrees of freedom; the bound sits
  // log(2/delta) above its mean, so the event frequency is close to
  // Phi(log(2/delta) / sqrt(2n)). 500 replicates give a standard error of ~0.022.
  const double n = static_cast<double>(d * M * T);
  const double predicted = normal_cdf(std::log(2.0 / delta) / std::sqrt(2.0 * n));
  CHECK(std::abs(f.magnitude - predicted) <= 0.07);
}

TEST_CASE("magnitude event reaches the stated frequency" * doctest::should_fail()) {
  // Stated target: frequency >= 0.93 at d=5, M=10, T=200, C=I, delta=0.05.
  // The chi-square analysis in the previous test predicts about one half, so
  // this check is expected to fail and is kept to record the discrepancy.
  const int d = 5, M = 10, T = 200;
  const SystemEnsemble e = stable_ensemble(2, d, M, T, 9);
  const NoiseModel noise = NoiseModel::isotropic(d, 1.0);
  std::vector<NoiseEvents> events;
  for (std::uint64_t r = 0; r < 200; ++r)
    events.push_back(
        noise_event_check(simulate_bundle(e, T, noise, std::nullopt, derive_seed(4, "rep", {r}), true), 0.05));
  CHECK(event_frequencies(events).magnitude >= 0.93);
}

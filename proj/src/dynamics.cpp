#include "jointlti/dynamics.hpp"

#include "jointlti/error.hpp"
#include "jointlti/rng.hpp"

#include <fmt/format.h>

#include <algorithm>

namespace jointlti {

NoiseModel NoiseModel::gaussian(Matrix C) {
  if (C.rows() < 1 || C.rows() != C.cols()) throw ArgumentError("noise covariance must be square with d >= 1");
  if (!C.allFinite()) throw ArgumentError("noise covariance has non-finite entries");
  if (!is_symmetric(C)) throw ArgumentError("noise covariance must be symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(C, Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, C.cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -1e-12 * scale) throw ArgumentError("noise covariance must be PSD");

  NoiseModel n;
  n.lambda_min_ = std::max(0.0, es.eigenvalues().minCoeff());
  n.lambda_max_ = std::max(0.0, es.eigenvalues().maxCoeff());
  n.sigma_sq_ = n.lambda_max_;
  n.root_ = psd_sqrt(C);
  n.C_ = std::move(C);
  return n;
}

NoiseModel NoiseModel::isotropic(Index d, double variance) {
  if (!(variance >= 0.0)) throw ArgumentError("noise variance must be >= 0");
  return gaussian(variance * Matrix::Identity(d, d));
}

Vector NoiseModel::sample(Rng& rng) const {
  Vector z(d());
  for (Index i = 0; i < d(); ++i) z(i) = rng.normal();
  return root_ * z;
}

TrajectoryBundle::TrajectoryBundle(std::vector<Trajectory> trajectories, NoiseModel noise, BundleMode mode,
                                   std::uint64_t seed)
    : trajectories_(std::move(trajectories)), noise_(std::move(noise)), mode_(mode), seed_(seed) {
  if (trajectories_.empty()) throw ArgumentError("bundle needs at least one trajectory");
  const Index T = trajectories_.front().T();
  const Index d = trajectories_.front().d();
  if (T < 1) throw ArgumentError("trajectories need at least 2 states");
  if (noise_.d() != d) throw ArgumentError("noise dimension does not match trajectories");
  std::vector<bool> seen(trajectories_.size(), false);
  for (const auto& tr : trajectories_) {
    if (tr.T() != T || tr.d() != d) throw ArgumentError("all trajectories must share (T, d)");
    if (!tr.states.allFinite()) throw ArgumentError("trajectory has non-finite states");
    if ((mode_ == BundleMode::regression) != tr.responses.has_value())
      throw ArgumentError("responses must be present exactly in regression mode");
    if (tr.responses && (tr.responses->rows() != T + 1 || tr.responses->cols() != d))
      throw ArgumentError("responses array must be (T+1) x d");
    const auto idx = static_cast<std::size_t>(tr.system_index);
    if (tr.system_index < 0 || idx >= seen.size() || seen[idx])
      throw ArgumentError("system indices must be a permutation of 0..M-1");
    seen[idx] = true;
  }
  std::sort(trajectories_.begin(), trajectories_.end(),
            [](const Trajectory& a, const Trajectory& b) { return a.system_index < b.system_index; });
}

bool TrajectoryBundle::noise_retained() const {
  return std::all_of(trajectories_.begin(), trajectories_.end(),
                     [](const Trajectory& t) { return t.noise.has_value(); });
}

Trajectory simulate(const Matrix& A, int T, const NoiseModel& noise, const Vector& x0, std::uint64_t seed,
                    bool retain_noise) {
  if (T < 1) throw ArgumentError(fmt::format("simulate: T must be >= 1 (got {})", T));
  const Index d = A.rows();
  if (A.cols() != d || d < 1) throw ArgumentError("simulate: A must be square");
  if (!A.allFinite()) throw ArgumentError("simulate: A has non-finite entries");
  if (noise.d() != d || x0.size() != d) throw ArgumentError("simulate: dimension mismatch between A, noise and x0");

  Rng rng(seed);
  Trajectory out;
  out.states.resize(T + 1, d);
  out.states.row(0) = x0.transpose();
  if (retain_noise) out.noise = Matrix::Zero(T + 1, d);
  Vector x = x0;
  for (int t = 0; t < T; ++t) {
    Vector eta = noise.sample(rng);
    x = A * x + eta;
    if (!x.allFinite()) throw OverflowError(fmt::format("non-finite state at step t={}", t + 1));
    out.states.row(t + 1) = x.transpose();
    if (retain_noise) out.noise->row(t + 1) = eta.transpose();
  }
  return out;
}

std::uint64_t dynamics_stream_seed(std::uint64_t seed, Index m) {
  return derive_seed(seed, "dynamics", {static_cast<std::uint64_t>(m)});
}

TrajectoryBundle simulate_bundle(const SystemEnsemble& ensemble, int T, const NoiseModel& noise,
                                 const std::optional<std::vector<Vector>>& x0, std::uint64_t seed,
                                 bool retain_noise) {
  if (noise.d() != ensemble.d()) throw ArgumentError("simulate_bundle: noise dimension does not match ensemble");
  if (x0 && static_cast<Index>(x0->size()) != ensemble.M())
    throw ArgumentError("simulate_bundle: need one initial state per system");
  std::vector<Trajectory> trajectories;
  trajectories.reserve(static_cast<std::size_t>(ensemble.M()));
  for (Index m = 0; m < ensemble.M(); ++m) {
    const Vector start = x0 ? (*x0)[static_cast<std::size_t>(m)] : Vector::Zero(ensemble.d());
    try {
      Trajectory tr = simulate(ensemble.A(m), T, noise, start, dynamics_stream_seed(seed, m), retain_noise);
      tr.system_index = static_cast<int>(m);
      trajectories.push_back(std::move(tr));
    } catch (const OverflowError& e) {
      throw OverflowError(fmt::format("system {}: {}", m, e.what()));
    } catch (const ArgumentError& e) {
      throw ArgumentError(fmt::format("system {}: {}", m, e.what()));
    }
  }
  return TrajectoryBundle(std::move(trajectories), noise, BundleMode::var, seed);
}

TrajectoryBundle simulate_regression_bundle(const SystemEnsemble& ensemble, int T, const NoiseModel& noise,
                                            const Matrix& regressor_cov, std::uint64_t seed,
                                            bool retain_noise) {
  if (T < 1) throw ArgumentError(fmt::format("simulate_regression_bundle: T must be >= 1 (got {})", T));
  const Index d = ensemble.d();
  if (noise.d() != d || regressor_cov.rows() != d || regressor_cov.cols() != d)
    throw ArgumentError("simulate_regression_bundle: dimension mismatch");
  const NoiseModel regressors = NoiseModel::gaussian(regressor_cov);

  std::vector<Trajectory> trajectories;
  trajectories.reserve(static_cast<std::size_t>(ensemble.M()));
  for (Index m = 0; m < ensemble.M(); ++m) {
    Rng rng = Rng::stream(seed, "regression", {static_cast<std::uint64_t>(m)});
    Trajectory tr;
    tr.system_index = static_cast<int>(m);
    tr.states.resize(T + 1, d);
    tr.responses = Matrix::Zero(T + 1, d);
    if (retain_noise) tr.noise = Matrix::Zero(T + 1, d);
    for (int t = 0; t <= T; ++t) tr.states.row(t) = regressors.sample(rng).transpose();
    for (int t = 0; t < T; ++t) {
      Vector eta = noise.sample(rng);
      Vector y = ensemble.A(m) * tr.states.row(t).transpose() + eta;
      if (!y.allFinite()) throw OverflowError(fmt::format("system {}: non-finite response at t={}", m, t));
      tr.responses->row(t + 1) = y.transpose();
      if (retain_noise) tr.noise->row(t + 1) = eta.transpose();
    }
    trajectories.push_back(std::move(tr));
  }
  return TrajectoryBundle(std::move(trajectories), noise, BundleMode::regression, seed);
}

}  // namespace jointlti

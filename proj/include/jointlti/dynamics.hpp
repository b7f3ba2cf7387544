#pragma once

#include "jointlti/ensemble.hpp"
#include "jointlti/linalg.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

namespace jointlti {

/// Gaussian martingale-difference noise with covariance C.
///
/// sigma_sq is the sub-Gaussian proxy; for Gaussian noise it equals
/// lambda_max(C).
class NoiseModel {
 public:
  static NoiseModel gaussian(Matrix C);
  static NoiseModel isotropic(Index d, double variance);

  Index d() const { return C_.rows(); }
  const Matrix& C() const { return C_; }
  double sigma_sq() const { return sigma_sq_; }
  double lambda_min() const { return lambda_min_; }
  double lambda_max() const { return lambda_max_; }
  /// c^2 = max(sigma^2, lambda_max(C)).
  double c_sq() const { return std::max(sigma_sq_, lambda_max_); }
  bool is_zero() const { return lambda_max_ == 0.0; }

  /// One draw eta ~ N(0, C).
  Vector sample(Rng& rng) const;

 private:
  NoiseModel() = default;
  Matrix C_;
  Matrix root_;
  double sigma_sq_ = 0.0;
  double lambda_min_ = 0.0;
  double lambda_max_ = 0.0;
};

enum class BundleMode { var, regression };

/// One system's data.
///
/// states is (T+1) x d with row t = x(t). In var mode the response paired
/// with regressor row t is states row t+1; in regression mode it is row t+1
/// of `responses` (row 0 of that array is unused and zero).
struct Trajectory {
  Matrix states;
  int system_index = 0;
  std::optional<Matrix> responses;
  /// Row t+1 holds the noise draw eta(t+1); row 0 is zero. Kept only on request.
  std::optional<Matrix> noise;

  Index T() const { return states.rows() - 1; }
  Index d() const { return states.cols(); }
  /// T x d regressors x(0..T-1).
  Matrix regressors() const { return states.topRows(T()); }
  /// T x d responses paired with regressors().
  Matrix targets() const { return responses ? responses->bottomRows(T()) : states.bottomRows(T()); }
};

class TrajectoryBundle {
 public:
  TrajectoryBundle(std::vector<Trajectory> trajectories, NoiseModel noise, BundleMode mode,
                   std::uint64_t seed = 0);

  Index M() const { return static_cast<Index>(trajectories_.size()); }
  Index T() const { return trajectories_.front().T(); }
  Index d() const { return trajectories_.front().d(); }
  BundleMode mode() const { return mode_; }
  const NoiseModel& noise() const { return noise_; }
  std::uint64_t seed() const { return seed_; }
  const Trajectory& operator[](Index m) const { return trajectories_[static_cast<std::size_t>(m)]; }
  const std::vector<Trajectory>& trajectories() const { return trajectories_; }
  bool noise_retained() const;

 private:
  std::vector<Trajectory> trajectories_;
  NoiseModel noise_;
  BundleMode mode_;
  std::uint64_t seed_;
};

/// x(0) = x0, x(t+1) = A x(t) + eta(t+1). Throws OverflowError naming the
/// first step that produced a non-finite state.
Trajectory simulate(const Matrix& A, int T, const NoiseModel& noise, const Vector& x0, std::uint64_t seed,
                    bool retain_noise = false);

/// Per-system seed used by simulate_bundle for system m.
std::uint64_t dynamics_stream_seed(std::uint64_t seed, Index m);

/// M independent trajectories; x0 = 0 unless initial states are given.
TrajectoryBundle simulate_bundle(const SystemEnsemble& ensemble, int T, const NoiseModel& noise,
                                 const std::optional<std::vector<Vector>>& x0, std::uint64_t seed,
                                 bool retain_noise = false);

/// Independent-regressor variant: x_m(t) ~ N(0, regressor_cov), y_m(t) = A_m x_m(t) + eta_m(t).
TrajectoryBundle simulate_regression_bundle(const SystemEnsemble& ensemble, int T, const NoiseModel& noise,
                                            const Matrix& regressor_cov, std::uint64_t seed,
                                            bool retain_noise = false);

}  // namespace jointlti

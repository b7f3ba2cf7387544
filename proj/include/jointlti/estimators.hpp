#pragma once

#include "jointlti/dynamics.hpp"
#include "jointlti/linalg.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace jointlti {

enum class Optimizer { als, gd };

struct FitConfig {
  Optimizer optimizer = Optimizer::als;
  int max_iters = 500;
  /// Stop once the relative loss decrease drops below tol.
  double tol = 1e-8;
  int restarts = 1;
  /// Ridge added to every normal matrix. Unset means 1e-8 * trace(N) / dim(N)
  /// computed per subproblem, applied as a proximal term toward the previous
  /// iterate so it damps the solves without shifting the minimizer.
  std::optional<double> ridge;
  std::uint64_t init_seed = 0;
  double gd_step = 1e-3;

  void validate() const;
};

/// Regressor/response pairs of one system, both T x d with row t paired.
struct SystemData {
  Matrix X;
  Matrix Y;
};
using Dataset = std::vector<SystemData>;

/// Pairs (x(t), response(t)) for t in [t_begin, t_end) of every system.
Dataset make_dataset(const TrajectoryBundle& bundle, Index t_begin = 0, std::optional<Index> t_end = std::nullopt);

/// (1 / sum_m T_m) * sum_m sum_t ||y_m(t) - A_m x_m(t)||^2.
double evaluate_transition_loss(const Dataset& data, std::span<const Matrix> transitions);

/// Joint loss of the shared-basis model A_m = sum_i B(i, m) W_i.
double evaluate_loss(const Dataset& data, std::span<const Matrix> W, const Matrix& B);
double evaluate_loss(const TrajectoryBundle& bundle, std::span<const Matrix> W, const Matrix& B);

/// A_m = sum_i B(i, m) W_i for every column of B.
std::vector<Matrix> compose_transitions(std::span<const Matrix> W, const Matrix& B);

struct OlsFit {
  std::vector<Matrix> A_hat;
  double ridge_used = 0.0;
  /// Mean squared one-step residual per system.
  std::vector<double> per_system_residual;
};

/// A_m = (sum_t y x') (sum_t x x' + ridge I)^{-1}, system by system.
OlsFit ols_fit(const Dataset& data, double ridge = 0.0);
OlsFit ols_fit(const TrajectoryBundle& bundle, double ridge = 0.0);

struct JointFit {
  std::vector<Matrix> W_hat;
  Matrix B_hat;
  std::vector<Matrix> A_hat;
  /// Loss at initialization followed by the loss after every iteration (best restart).
  std::vector<double> loss_trace;
  bool converged = false;
  int best_restart = 0;
  double final_loss = 0.0;
  /// Final loss of every restart, in restart order.
  std::vector<double> restart_losses;
  /// Ridge used by the last coefficient step (max over systems) and basis step.
  double ridge_coefficient = 0.0;
  double ridge_basis = 0.0;
  std::string stop_reason;
};

JointFit joint_fit(const Dataset& data, int k_fit, const FitConfig& config);
JointFit joint_fit(const TrajectoryBundle& bundle, int k_fit, const FitConfig& config);

namespace als {

/// Per-system second moments: Sxx = sum x x', Syx = sum y x'.
struct Moments {
  std::vector<Matrix> Sxx;
  std::vector<Matrix> Syx;
  Index d = 0;
};

Moments moments(const Dataset& data);

struct StepResult {
  Matrix B;
  double ridge = 0.0;
};

/// Exact minimizer over B with W fixed: one k x k ridge solve per system.
/// With the default ridge and an anchor, the ridge pulls toward the anchor
/// instead of zero (a proximal step), so fixed points are unbiased.
StepResult coefficient_step(const Moments& mom, std::span<const Matrix> W, std::optional<double> ridge,
                            const Matrix* anchor = nullptr);

struct BasisResult {
  std::vector<Matrix> W;
  double ridge = 0.0;
};

/// Exact minimizer over W with B fixed. The dk x dk normal matrix
/// sum_m (beta_m beta_m') kron Sxx_m is shared by all d rows of [W_1 ... W_k].
/// The anchor plays the same role as in coefficient_step.
BasisResult basis_step(const Moments& mom, const Matrix& B, std::optional<double> ridge,
                       const std::vector<Matrix>* anchor = nullptr);

}  // namespace als

enum class ValidationKind { steps, systems };

struct ValidationSplit {
  ValidationKind kind = ValidationKind::steps;
  double fraction = 0.2;
};

struct SelectionPoint {
  int k = 0;
  double fit_error = 0.0;
  double validation_error = 0.0;
};

struct Selection {
  int k_chosen = 0;
  std::vector<SelectionPoint> curve;
  /// Estimated transition matrices of all M systems, per grid entry.
  std::vector<std::vector<Matrix>> estimates;
};

/// Elbow rule: the smallest k whose validation error is within
/// (1 + elbow_slack) of the minimum over the grid.
Selection select_k(const TrajectoryBundle& bundle, std::span<const int> k_grid, ValidationSplit validation,
                   const FitConfig& config, double elbow_slack = 0.05);

}  // namespace jointlti

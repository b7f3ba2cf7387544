#include "jointlti/estimators.hpp"

#include "jointlti/error.hpp"
#include "jointlti/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace jointlti {

void FitConfig::validate() const {
  if (max_iters < 1) throw ArgumentError("max_iters must be >= 1");
  if (!(tol > 0.0)) throw ArgumentError("tol must be > 0");
  if (restarts < 1) throw ArgumentError("restarts must be >= 1");
  if (ridge && !(*ridge >= 0.0)) throw ArgumentError("ridge must be >= 0");
  if (optimizer == Optimizer::gd && !(gd_step > 0.0)) throw ArgumentError("gd_step must be > 0");
}

Dataset make_dataset(const TrajectoryBundle& bundle, Index t_begin, std::optional<Index> t_end) {
  const Index end = t_end.value_or(bundle.T());
  if (t_begin < 0 || end > bundle.T() || t_begin >= end)
    throw ArgumentError(fmt::format("invalid time range [{}, {}) for T={}", t_begin, end, bundle.T()));
  Dataset data;
  data.reserve(static_cast<std::size_t>(bundle.M()));
  for (const auto& tr : bundle.trajectories()) {
    const Matrix& resp = tr.responses ? *tr.responses : tr.states;
    data.push_back({tr.states.middleRows(t_begin, end - t_begin), resp.middleRows(t_begin + 1, end - t_begin)});
  }
  return data;
}

namespace {

Index sample_count(const Dataset& data) {
  Index n = 0;
  for (const auto& s : data) n += s.X.rows();
  return n;
}

void check_dataset(const Dataset& data) {
  if (data.empty()) throw ArgumentError("dataset has no systems");
  const Index d = data.front().X.cols();
  for (const auto& s : data) {
    if (s.X.cols() != d || s.Y.cols() != d || s.X.rows() != s.Y.rows() || s.X.rows() < 1)
      throw ArgumentError("dataset systems must share d and pair every regressor with a response");
  }
}

double mean_response_energy(const Dataset& data) {
  double e = 0.0;
  for (const auto& s : data) e += s.Y.squaredNorm();
  return e / static_cast<double>(sample_count(data));
}

bool is_zero_matrix(const Matrix& N) { return N.cwiseAbs().maxCoeff() == 0.0; }

double default_ridge(const Matrix& N) { return 1e-8 * N.trace() / static_cast<double>(N.rows()); }

}  // namespace

double evaluate_transition_loss(const Dataset& data, std::span<const Matrix> transitions) {
  check_dataset(data);
  if (transitions.size() != data.size()) throw ArgumentError("need one transition matrix per system");
  const Index d = data.front().X.cols();
  double total = 0.0;
  for (std::size_t m = 0; m < data.size(); ++m) {
    if (transitions[m].rows() != d || transitions[m].cols() != d)
      throw ArgumentError("transition matrix dimension does not match data");
    total += (data[m].Y - data[m].X * transitions[m].transpose()).squaredNorm();
  }
  return total / static_cast<double>(sample_count(data));
}

std::vector<Matrix> compose_transitions(std::span<const Matrix> W, const Matrix& B) {
  if (W.empty() || static_cast<Index>(W.size()) != B.rows())
    throw ArgumentError(fmt::format("basis has {} matrices but B has {} rows", W.size(), B.rows()));
  const Index d = W.front().rows();
  for (const auto& Wi : W)
    if (Wi.rows() != d || Wi.cols() != d) throw ArgumentError("basis matrices must be d x d");
  std::vector<Matrix> A;
  A.reserve(static_cast<std::size_t>(B.cols()));
  for (Index m = 0; m < B.cols(); ++m) {
    Matrix Am = Matrix::Zero(d, d);
    for (Index i = 0; i < B.rows(); ++i) Am += B(i, m) * W[static_cast<std::size_t>(i)];
    A.push_back(std::move(Am));
  }
  return A;
}

double evaluate_loss(const Dataset& data, std::span<const Matrix> W, const Matrix& B) {
  if (static_cast<std::size_t>(B.cols()) != data.size())
    throw ArgumentError(fmt::format("B has {} columns for {} systems", B.cols(), data.size()));
  const auto A = compose_transitions(W, B);
  return evaluate_transition_loss(data, A);
}

double evaluate_loss(const TrajectoryBundle& bundle, std::span<const Matrix> W, const Matrix& B) {
  return evaluate_loss(make_dataset(bundle), W, B);
}

OlsFit ols_fit(const Dataset& data, double ridge) {
  check_dataset(data);
  if (!(ridge >= 0.0)) throw ArgumentError("ridge must be >= 0");
  const Index d = data.front().X.cols();
  OlsFit fit;
  fit.ridge_used = ridge;
  for (std::size_t m = 0; m < data.size(); ++m) {
    Matrix A;
    if (ridge == 0.0) {
      // QR on the design itself; the Gram matrix squares its condition number.
      Eigen::ColPivHouseholderQR<Matrix> qr(data[m].X);
      if (qr.rank() < d) throw RankDeficiencyError(fmt::format("OLS Gram matrix of system {} is singular", m));
      A = qr.solve(data[m].Y).transpose();
    } else {
      const Matrix N = data[m].X.transpose() * data[m].X + ridge * Matrix::Identity(d, d);
      A = N.ldlt().solve(data[m].X.transpose() * data[m].Y).transpose();
    }
    fit.per_system_residual.push_back((data[m].Y - data[m].X * A.transpose()).squaredNorm() /
                                      static_cast<double>(data[m].X.rows()));
    fit.A_hat.push_back(std::move(A));
  }
  return fit;
}

OlsFit ols_fit(const TrajectoryBundle& bundle, double ridge) { return ols_fit(make_dataset(bundle), ridge); }

namespace als {

Moments moments(const Dataset& data) {
  check_dataset(data);
  Moments mom;
  mom.d = data.front().X.cols();
  for (const auto& s : data) {
    mom.Sxx.push_back(s.X.transpose() * s.X);
    mom.Syx.push_back(s.Y.transpose() * s.X);
  }
  return mom;
}

StepResult coefficient_step(const Moments& mom, std::span<const Matrix> W, std::optional<double> ridge,
                            const Matrix* anchor) {
  const auto k = static_cast<Index>(W.size());
  const auto M = static_cast<Index>(mom.Sxx.size());
  StepResult out{Matrix(k, M), 0.0};
  std::vector<Matrix> WS(static_cast<std::size_t>(k));
  for (Index m = 0; m < M; ++m) {
    const auto mu = static_cast<std::size_t>(m);
    Matrix G(k, k);
    Vector h(k);
    for (Index i = 0; i < k; ++i) WS[static_cast<std::size_t>(i)] = W[static_cast<std::size_t>(i)] * mom.Sxx[mu];
    for (Index i = 0; i < k; ++i) {
      const auto iu = static_cast<std::size_t>(i);
      h(i) = mom.Syx[mu].cwiseProduct(W[iu]).sum();
      for (Index j = i; j < k; ++j) G(i, j) = G(j, i) = WS[iu].cwiseProduct(W[static_cast<std::size_t>(j)]).sum();
    }
    const double eps = ridge ? *ridge : default_ridge(G);
    out.ridge = std::max(out.ridge, eps);
    if (eps > 0.0) {
      G.diagonal().array() += eps;
      if (!ridge && anchor) h += eps * anchor->col(m);
      out.B.col(m) = G.llt().solve(h);
    } else {
      if (is_zero_matrix(G))
        throw RankDeficiencyError(fmt::format("coefficient step: normal matrix of system {} is zero", m));
      // Consistent but possibly singular: take the minimum-norm minimizer.
      out.B.col(m) = G.completeOrthogonalDecomposition().solve(h);
    }
  }
  return out;
}

BasisResult basis_step(const Moments& mom, const Matrix& B, std::optional<double> ridge,
                       const std::vector<Matrix>* anchor) {
  const Index d = mom.d;
  const Index k = B.rows();
  const Index n = d * k;
  Matrix H = Matrix::Zero(n, n);
  Matrix R = Matrix::Zero(d, n);
  for (Index m = 0; m < B.cols(); ++m) {
    const auto mu = static_cast<std::size_t>(m);
    for (Index i = 0; i < k; ++i) {
      const double bi = B(i, m);
      R.middleCols(i * d, d) += bi * mom.Syx[mu];
      for (Index j = i; j < k; ++j) H.block(i * d, j * d, d, d) += (bi * B(j, m)) * mom.Sxx[mu];
    }
  }
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < i; ++j) H.block(i * d, j * d, d, d) = H.block(j * d, i * d, d, d).transpose();

  const double eps = ridge ? *ridge : default_ridge(H);
  Matrix Wcat_t;
  if (eps > 0.0) {
    H.diagonal().array() += eps;
    if (!ridge && anchor)
      for (Index i = 0; i < k; ++i) R.middleCols(i * d, d) += eps * (*anchor)[static_cast<std::size_t>(i)];
    Wcat_t = H.llt().solve(R.transpose());
  } else {
    if (is_zero_matrix(H)) throw RankDeficiencyError("basis step: normal matrix is zero");
    Wcat_t = H.completeOrthogonalDecomposition().solve(R.transpose());
  }
  BasisResult out{{}, eps};
  out.W.reserve(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) out.W.push_back(Wcat_t.middleRows(i * d, d).transpose());
  return out;
}

}  // namespace als

namespace {

struct RestartOutcome {
  std::vector<Matrix> W;
  Matrix B;
  std::vector<double> trace;
  bool converged = false;
  double ridge_coefficient = 0.0;
  double ridge_basis = 0.0;
  std::string stop_reason;
};

// Scale every W_i to unit Frobenius norm and push the scale into row i of B;
// A_m and the loss are unchanged.
void balance(std::vector<Matrix>& W, Matrix& B) {
  for (std::size_t i = 0; i < W.size(); ++i) {
    const double n = W[i].norm();
    if (n > 0.0 && std::isfinite(n)) {
      W[i] /= n;
      B.row(static_cast<Index>(i)) *= n;
    }
  }
}

// Stopping rule shared by both optimizers. Returns a reason when done.
std::optional<std::string> should_stop(double prev, double cur, double floor, double tol) {
  if (cur <= floor) return std::string("loss at numerical zero");
  const double rel = (prev - cur) / std::max(std::abs(prev), std::numeric_limits<double>::min());
  if (std::abs(rel) < tol) return std::string("relative decrease below tol");
  return std::nullopt;
}

RestartOutcome run_als(const Dataset& data, const als::Moments& mom, std::vector<Matrix> W, Matrix B,
                       const FitConfig& config, double floor) {
  RestartOutcome out;
  double prev = evaluate_loss(data, W, B);
  out.trace.push_back(prev);
  for (int it = 0; it < config.max_iters; ++it) {
    auto cstep = als::coefficient_step(mom, W, config.ridge, &B);
    B = std::move(cstep.B);
    auto bstep = als::basis_step(mom, B, config.ridge, &W);
    W = std::move(bstep.W);
    balance(W, B);
    out.ridge_coefficient = cstep.ridge;
    out.ridge_basis = bstep.ridge;
    const double cur = evaluate_loss(data, W, B);
    out.trace.push_back(cur);
    if (auto reason = should_stop(prev, cur, floor, config.tol)) {
      out.converged = true;
      out.stop_reason = *reason;
      break;
    }
    prev = cur;
  }
  if (!out.converged) out.stop_reason = "max_iters reached";
  out.W = std::move(W);
  out.B = std::move(B);
  return out;
}

RestartOutcome run_gd(const Dataset& data, const als::Moments& mom, std::vector<Matrix> W, Matrix B,
                      const FitConfig& config, double floor) {
  RestartOutcome out;
  const double scale = 2.0 / static_cast<double>(sample_count(data));
  const auto k = static_cast<Index>(W.size());
  double prev = evaluate_loss(data, W, B);
  out.trace.push_back(prev);
  for (int it = 0; it < config.max_iters; ++it) {
    const auto A = compose_transitions(W, B);
    std::vector<Matrix> gW(W.size(), Matrix::Zero(mom.d, mom.d));
    Matrix gB(k, B.cols());
    for (Index m = 0; m < B.cols(); ++m) {
      const auto mu = static_cast<std::size_t>(m);
      const Matrix gA = scale * (A[mu] * mom.Sxx[mu] - mom.Syx[mu]);
      for (Index i = 0; i < k; ++i) {
        const auto iu = static_cast<std::size_t>(i);
        gW[iu] += B(i, m) * gA;
        gB(i, m) = gA.cwiseProduct(W[iu]).sum();
      }
    }
    for (Index i = 0; i < k; ++i) W[static_cast<std::size_t>(i)] -= config.gd_step * gW[static_cast<std::size_t>(i)];
    B -= config.gd_step * gB;
    const double cur = evaluate_loss(data, W, B);
    if (!std::isfinite(cur))
      throw DivergenceError(fmt::format("gradient descent diverged at iteration {} (step {})", it + 1, config.gd_step));
    out.trace.push_back(cur);
    if (auto reason = should_stop(prev, cur, floor, config.tol)) {
      out.converged = true;
      out.stop_reason = *reason;
      break;
    }
    prev = cur;
  }
  if (!out.converged) out.stop_reason = "max_iters reached";
  out.W = std::move(W);
  out.B = std::move(B);
  return out;
}

}  // namespace

JointFit joint_fit(const Dataset& data, int k_fit, const FitConfig& config) {
  check_dataset(data);
  config.validate();
  const Index d = data.front().X.cols();
  const auto M = static_cast<Index>(data.size());
  if (k_fit < 1 || k_fit > d * d) throw ArgumentError(fmt::format("k_fit must lie in [1, d^2] = [1, {}]", d * d));

  const als::Moments mom = als::moments(data);
  const double floor = 1e-28 * mean_response_energy(data);

  JointFit best;
  double best_loss = std::numeric_limits<double>::infinity();
  for (int r = 0; r < config.restarts; ++r) {
    Rng rng = Rng::stream(config.init_seed, "init", {static_cast<std::uint64_t>(r)});
    std::vector<Matrix> W;
    for (int i = 0; i < k_fit; ++i) W.push_back(gaussian_matrix(rng, d, d, 1.0 / std::sqrt(static_cast<double>(d))));
    Matrix B = gaussian_matrix(rng, k_fit, M);

    RestartOutcome outcome = config.optimizer == Optimizer::als ? run_als(data, mom, std::move(W), std::move(B), config, floor)
                                                                : run_gd(data, mom, std::move(W), std::move(B), config, floor);
    const double final_loss = outcome.trace.back();
    best.restart_losses.push_back(final_loss);
    if (final_loss < best_loss) {
      best_loss = final_loss;
      best.W_hat = std::move(outcome.W);
      best.B_hat = std::move(outcome.B);
      best.loss_trace = std::move(outcome.trace);
      best.converged = outcome.converged;
      best.best_restart = r;
      best.final_loss = final_loss;
      best.ridge_coefficient = outcome.ridge_coefficient;
      best.ridge_basis = outcome.ridge_basis;
      best.stop_reason = std::move(outcome.stop_reason);
    }
  }
  best.A_hat = compose_transitions(best.W_hat, best.B_hat);
  return best;
}

JointFit joint_fit(const TrajectoryBundle& bundle, int k_fit, const FitConfig& config) {
  return joint_fit(make_dataset(bundle), k_fit, config);
}

Selection select_k(const TrajectoryBundle& bundle, std::span<const int> k_grid, ValidationSplit validation,
                   const FitConfig& config, double elbow_slack) {
  if (k_grid.empty()) throw ArgumentError("k_grid is empty");
  if (!std::is_sorted(k_grid.begin(), k_grid.end())) throw ArgumentError("k_grid must be sorted ascending");
  if (!(validation.fraction > 0.0 && validation.fraction < 1.0))
    throw ArgumentError("validation fraction must lie in (0, 1)");
  if (!(elbow_slack >= 0.0)) throw ArgumentError("elbow_slack must be >= 0");

  const Index T = bundle.T();
  const Index M = bundle.M();
  Selection out;
  double val_scale = 0.0;

  if (validation.kind == ValidationKind::steps) {
    const auto n_val = static_cast<Index>(std::floor(validation.fraction * static_cast<double>(T)));
    const Index n_train = T - n_val;
    if (n_val < 1 || n_train < 1)
      throw ArgumentError(fmt::format("validation split of T={} leaves no training or validation steps", T));
    const Dataset train = make_dataset(bundle, 0, n_train);
    const Dataset val = make_dataset(bundle, n_train, T);
    val_scale = mean_response_energy(val);
    for (int k : k_grid) {
      JointFit fit = joint_fit(train, k, config);
      out.curve.push_back({k, fit.final_loss, evaluate_transition_loss(val, fit.A_hat)});
      out.estimates.push_back(std::move(fit.A_hat));
    }
  } else {
    const auto n_val = std::max<Index>(1, static_cast<Index>(std::lround(validation.fraction * static_cast<double>(M))));
    const Index n_train = M - n_val;
    const Index half = T / 2;
    if (n_train < 1) throw ArgumentError(fmt::format("validation split of M={} leaves no training systems", M));
    if (half < 1) throw ArgumentError("held-out systems need T >= 2");
    const Dataset all = make_dataset(bundle);
    const Dataset train(all.begin(), all.begin() + n_train);
    Dataset calib, val;
    for (Index m = n_train; m < M; ++m) {
      const auto& s = all[static_cast<std::size_t>(m)];
      calib.push_back({s.X.topRows(half), s.Y.topRows(half)});
      val.push_back({s.X.bottomRows(T - half), s.Y.bottomRows(T - half)});
    }
    val_scale = mean_response_energy(val);
    const als::Moments calib_mom = als::moments(calib);
    for (int k : k_grid) {
      JointFit fit = joint_fit(train, k, config);
      const Matrix B_val = als::coefficient_step(calib_mom, fit.W_hat, config.ridge).B;
      const auto A_val = compose_transitions(fit.W_hat, B_val);
      out.curve.push_back({k, fit.final_loss, evaluate_transition_loss(val, A_val)});
      std::vector<Matrix> est = std::move(fit.A_hat);
      est.insert(est.end(), A_val.begin(), A_val.end());
      out.estimates.push_back(std::move(est));
    }
  }

  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : out.curve) best = std::min(best, p.validation_error);
  const double threshold = std::max((1.0 + elbow_slack) * best, 1e-20 * val_scale);
  for (const auto& p : out.curve) {
    if (p.validation_error <= threshold) {
      out.k_chosen = p.k;
      break;
    }
  }
  return out;
}

}  // namespace jointlti

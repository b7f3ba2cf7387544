#pragma once

#include "jointlti/dynamics.hpp"
#include "jointlti/ensemble.hpp"
#include "jointlti/estimators.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace jointlti {

enum class RegimeKind { stable_range, unit_root };

std::string to_string(RegimeKind regime);
RegimeKind regime_from_string(const std::string& name);

struct MisspecConfig {
  double a = 0.0;
  /// E ||D_m||_F^2 for an affected system.
  double fro_sq_target = 6.25;
};

struct SweepConfig {
  int d = 25;
  int k_true = 10;
  /// 0 means "use k_true".
  int k_fit = 0;
  int T = 200;
  std::vector<int> M_list{1, 10, 20, 50, 100, 200};
  RegimeKind regime = RegimeKind::stable_range;
  double radius_lo = 0.7;
  double radius_hi = 0.9;
  double noise_variance = 4.0;
  /// Initial states have i.i.d. N(0, x0_scale^2) entries; 0 keeps x0 = 0.
  double x0_scale = 0.0;
  std::optional<MisspecConfig> misspec;
  int replicates = 10;
  std::uint64_t seed = 0;
  FitConfig fit;
  int jobs = 1;

  int effective_k_fit() const { return k_fit > 0 ? k_fit : k_true; }
  void validate() const;
};

struct SweepRow {
  int M = 0;
  std::string method;  ///< "joint" or "ols"
  std::string regime;
  std::optional<double> a;
  double mean_error = 0.0;
  /// Standard deviation across replicates (not the standard error).
  double std_error = 0.0;
  int replicates = 0;

  bool operator==(const SweepRow&) const = default;
};

struct SweepResult {
  std::vector<SweepRow> rows;

  const SweepRow* find(int M, const std::string& method, std::optional<double> a = std::nullopt) const;
  bool operator==(const SweepResult&) const = default;
};

/// Ground truth and data of one (M, replicate) cell.
struct SweepCell {
  SystemEnsemble ensemble;
  TrajectoryBundle bundle;
};

/// Builds the cell: basis and coefficients -> radius rescaling -> optional
/// misspecification -> simulation. Every random ingredient is keyed by the
/// replicate and, where per-system, by m; cells with larger M extend the
/// systems of cells with smaller M.
SweepCell make_sweep_cell(const SweepConfig& config, int M, int replicate);

struct CellErrors {
  double joint = 0.0;
  double ols = 0.0;
};

/// Joint and OLS fits on the same bundle, scored against the cell's truth.
CellErrors evaluate_sweep_cell(const SweepConfig& config, int M, int replicate);

SweepResult run_sweep(const SweepConfig& config);

/// One sweep per exponent a, rows tagged with a. config.misspec supplies fro_sq_target.
SweepResult run_misspec_grid(const SweepConfig& config, std::span<const double> a_list);

struct GrowthPoint {
  int t = 0;
  /// log ||x(t)||_2, missing when the state is exactly zero.
  std::optional<double> log_norm;
};

struct GrowthProfile {
  int l_star = 0;
  double lambda = 0.0;
  std::vector<GrowthPoint> points;
};

/// Simulates one trajectory of the system built from spec and returns its
/// log-magnitude series. x0 defaults to zero.
GrowthProfile state_growth_profile(const JordanSpec& spec, int T, const NoiseModel& noise, std::uint64_t seed,
                                   const std::optional<Vector>& x0 = std::nullopt);

/// Least-squares slope of log ||x(t)|| against log t over t in [t_from, t_to].
double growth_slope(const GrowthProfile& profile, int t_from, int t_to);

struct SelectionExperimentConfig {
  int d = 25;
  int k_true = 10;
  int T = 250;
  int M = 50;
  std::vector<int> k_grid{2, 4, 6, 8, 10, 12, 14, 16, 18, 20};
  int replicates = 10;
  std::uint64_t seed = 0;
  double noise_variance = 4.0;
  double x0_scale = 0.0;
  RegimeKind regime = RegimeKind::stable_range;
  double radius_lo = 0.7;
  double radius_hi = 0.9;
  ValidationSplit validation;
  FitConfig fit;
  double elbow_slack = 0.05;

  void validate() const;
};

struct SelectionRun {
  int k_chosen = 0;
  std::vector<SelectionPoint> curve;
  /// Mean ||A_hat_m - A_m||_F^2 per grid entry.
  std::vector<double> estimation_error;
};

std::vector<SelectionRun> run_selection_experiment(const SelectionExperimentConfig& config);

// Export -------------------------------------------------------------------

inline constexpr const char* kSweepCsvHeader = "M,method,regime,a,mean_error,std_error,replicates";

std::string sweep_to_csv(const SweepResult& result);
SweepResult sweep_from_csv(const std::string& text);
void export_sweep(const SweepResult& result, const std::filesystem::path& path, const std::string& format);
SweepResult import_sweep(const std::filesystem::path& path);

std::string growth_to_csv(std::span<const GrowthProfile> profiles);
std::string selection_to_csv(std::span<const SelectionRun> runs);

/// Error-vs-M chart with standard-deviation error bars, one series per (method, a).
void render_sweep_plot(const SweepResult& result, const std::filesystem::path& path);
void render_growth_plot(std::span<const GrowthProfile> profiles, const std::filesystem::path& path);
void render_selection_plot(std::span<const SelectionRun> runs, const std::filesystem::path& path);

/// Writes text to path, throwing IoError on failure.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace jointlti

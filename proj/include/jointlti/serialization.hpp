#pragma once

#include "jointlti/diagnostics.hpp"
#include "jointlti/dynamics.hpp"
#include "jointlti/ensemble.hpp"
#include "jointlti/estimators.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace jointlti {

using json = nlohmann::json;

// Matrices are nested row-major arrays: [[a00, a01, ...], [a10, ...], ...].
json matrix_to_json(const Matrix& A);
Matrix matrix_from_json(const json& j);

/// {k, d, M, rho_slack, W, B, D (or null), seed_provenance, T_nominal, jordan}.
json ensemble_to_json(const SystemEnsemble& ensemble);
SystemEnsemble ensemble_from_json(const json& j);
void save_ensemble(const SystemEnsemble& ensemble, const std::filesystem::path& path);
SystemEnsemble load_ensemble(const std::filesystem::path& path);

/// CSV with header system,t,x0,...,x{d-1} (plus y0..y{d-1} in regression
/// mode), one row per (system, t), 17 significant digits.
std::string bundle_to_csv(const TrajectoryBundle& bundle);
/// Sidecar with T, d, M, noise covariance, mode and seed.
json bundle_sidecar(const TrajectoryBundle& bundle);
TrajectoryBundle bundle_from_csv(const std::string& csv, const json& sidecar);
/// Writes path and path + ".json".
void save_bundle(const TrajectoryBundle& bundle, const std::filesystem::path& path);
TrajectoryBundle load_bundle(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& bundle_path);

json fit_config_to_json(const FitConfig& config);
FitConfig fit_config_from_json(const json& j, FitConfig base = {});
json joint_fit_to_json(const JointFit& fit, const FitConfig& config, const TrajectoryBundle& bundle);
json ols_fit_to_json(const OlsFit& fit, const TrajectoryBundle& bundle);

json spectral_to_json(const SpectralSummary& s);
json covariance_report_to_json(const CovarianceReport& report);
/// Header m,lmin,lmax,lower_theory,upper_theory,kappa_m,lower_held,upper_held.
std::string covariance_report_to_csv(const CovarianceReport& report);
json noise_events_to_json(const NoiseEvents& events);
json error_report_to_json(const ErrorReport& report);

/// Git blob hash (SHA-1 over "blob <size>\0" + content), lowercase hex.
std::string git_blob_hash(const std::string& content);

}  // namespace jointlti

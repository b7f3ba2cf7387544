#include "jointlti/serialization.hpp"

#include "jointlti/error.hpp"
#include "jointlti/experiments.hpp"

#include <fmt/format.h>
#include <openssl/evp.h>

#include <map>
#include <sstream>

namespace jointlti {

json matrix_to_json(const Matrix& A) {
  json rows = json::array();
  for (Index i = 0; i < A.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < A.cols(); ++j) row.push_back(A(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw IoError("matrix must be a non-empty array of rows");
  const auto rows = static_cast<Index>(j.size());
  const auto cols = static_cast<Index>(j.front().size());
  Matrix A(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) throw IoError("matrix rows must have equal length");
    for (Index c = 0; c < cols; ++c) A(i, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return A;
}

namespace {

json jordan_spec_to_json(const JordanSpec& spec) {
  json blocks = json::array();
  for (const auto& b : spec.blocks) blocks.push_back({{"eigenvalue", b.eigenvalue}, {"size", b.size}});
  return {{"blocks", blocks}, {"conditioning", spec.conditioning}, {"random_rotation", spec.random_rotation}};
}

JordanSpec jordan_spec_from_json(const json& j) {
  JordanSpec spec;
  for (const auto& b : j.at("blocks")) spec.blocks.push_back({b.at("eigenvalue").get<double>(), b.at("size").get<int>()});
  spec.conditioning = j.at("conditioning").get<double>();
  spec.random_rotation = j.value("random_rotation", true);
  return spec;
}

std::string mode_name(BundleMode mode) { return mode == BundleMode::var ? "var" : "regression"; }

}  // namespace

json ensemble_to_json(const SystemEnsemble& e) {
  json W = json::array();
  for (const auto& Wi : e.basis().matrices()) W.push_back(matrix_to_json(Wi));
  json D = nullptr;
  if (e.misspecification()) {
    D = json::array();
    for (const auto& Dm : e.misspecification()->matrices()) D.push_back(matrix_to_json(Dm));
  }
  json jordan = nullptr;
  if (!e.jordan().empty()) {
    jordan = json::array();
    for (const auto& f : e.jordan()) {
      if (!f) {
        jordan.push_back(nullptr);
        continue;
      }
      jordan.push_back({{"P", matrix_to_json(f->P)}, {"Lambda", matrix_to_json(f->Lambda)}, {"spec", jordan_spec_to_json(f->spec)}});
    }
  }
  json out = {{"k", e.k()},
              {"d", e.d()},
              {"M", e.M()},
              {"rho_slack", e.rho_slack()},
              {"W", W},
              {"B", matrix_to_json(e.coefficients().matrix())},
              {"D", D},
              {"seed_provenance", e.seed_provenance},
              {"T_nominal", e.spectral_control() ? json(*e.spectral_control()) : json(nullptr)},
              {"jordan", jordan}};
  return out;
}

SystemEnsemble ensemble_from_json(const json& j) {
  try {
    std::vector<Matrix> W;
    for (const auto& Wi : j.at("W")) W.push_back(matrix_from_json(Wi));
    std::optional<MisspecificationSet> D;
    if (j.contains("D") && !j.at("D").is_null()) {
      std::vector<Matrix> Ds;
      for (const auto& Dm : j.at("D")) Ds.push_back(matrix_from_json(Dm));
      D.emplace(std::move(Ds));
    }
    SystemEnsemble e(SharedBasis(std::move(W)), CoefficientSet(matrix_from_json(j.at("B"))), std::move(D),
                     j.value("rho_slack", 0.0));
    if (e.k() != j.at("k").get<Index>() || e.d() != j.at("d").get<Index>() || e.M() != j.at("M").get<Index>())
      throw IoError("ensemble JSON: declared k/d/M do not match the arrays");
    if (j.contains("T_nominal") && !j.at("T_nominal").is_null())
      e = e.with_spectral_control(j.at("T_nominal").get<double>());
    if (j.contains("jordan") && !j.at("jordan").is_null()) {
      std::vector<std::optional<JordanFactor>> meta;
      for (Index m = 0; m < e.M(); ++m) {
        const auto& f = j.at("jordan").at(static_cast<std::size_t>(m));
        if (f.is_null()) {
          meta.emplace_back();
          continue;
        }
        JordanFactor jf;
        jf.spec = jordan_spec_from_json(f.at("spec"));
        jf.P = matrix_from_json(f.at("P"));
        jf.Lambda = matrix_from_json(f.at("Lambda"));
        jf.A = e.A(m);
        meta.emplace_back(std::move(jf));
      }
      e = e.with_jordan(std::move(meta));
    }
    if (j.contains("seed_provenance"))
      e.seed_provenance = j.at("seed_provenance").get<std::map<std::string, std::string>>();
    return e;
  } catch (const json::exception& ex) {
    throw IoError(fmt::format("malformed ensemble JSON: {}", ex.what()));
  }
}

void save_ensemble(const SystemEnsemble& ensemble, const std::filesystem::path& path) {
  write_text_file(path, ensemble_to_json(ensemble).dump(2) + "\n");
}

SystemEnsemble load_ensemble(const std::filesystem::path& path) {
  try {
    return ensemble_from_json(json::parse(read_text_file(path)));
  } catch (const json::parse_error& ex) {
    throw IoError(fmt::format("{}: {}", path.string(), ex.what()));
  }
}

std::string bundle_to_csv(const TrajectoryBundle& bundle) {
  const Index d = bundle.d();
  const bool regression = bundle.mode() == BundleMode::regression;
  std::string out = "system,t";
  for (Index i = 0; i < d; ++i) out += fmt::format(",x{}", i);
  if (regression)
    for (Index i = 0; i < d; ++i) out += fmt::format(",y{}", i);
  out += '\n';
  for (const auto& tr : bundle.trajectories()) {
    for (Index t = 0; t <= tr.T(); ++t) {
      out += fmt::format("{},{}", tr.system_index, t);
      for (Index i = 0; i < d; ++i) out += fmt::format(",{:.17g}", tr.states(t, i));
      if (regression)
        for (Index i = 0; i < d; ++i) out += fmt::format(",{:.17g}", (*tr.responses)(t, i));
      out += '\n';
    }
  }
  return out;
}

json bundle_sidecar(const TrajectoryBundle& bundle) {
  return {{"T", bundle.T()},
          {"d", bundle.d()},
          {"M", bundle.M()},
          {"mode", mode_name(bundle.mode())},
          {"seed", bundle.seed()},
          {"noise",
           {{"kind", "gaussian"}, {"sigma_sq", bundle.noise().sigma_sq()}, {"C", matrix_to_json(bundle.noise().C())}}}};
}

TrajectoryBundle bundle_from_csv(const std::string& csv, const json& sidecar) {
  try {
    const auto T = sidecar.at("T").get<Index>();
    const auto d = sidecar.at("d").get<Index>();
    const auto M = sidecar.at("M").get<Index>();
    const std::string mode_str = sidecar.at("mode").get<std::string>();
    if (mode_str != "var" && mode_str != "regression") throw IoError("bundle sidecar: unknown mode " + mode_str);
    const BundleMode mode = mode_str == "var" ? BundleMode::var : BundleMode::regression;
    const bool regression = mode == BundleMode::regression;
    NoiseModel noise = NoiseModel::gaussian(matrix_from_json(sidecar.at("noise").at("C")));

    std::vector<Trajectory> trajectories(static_cast<std::size_t>(M));
    for (Index m = 0; m < M; ++m) {
      auto& tr = trajectories[static_cast<std::size_t>(m)];
      tr.system_index = static_cast<int>(m);
      tr.states = Matrix::Constant(T + 1, d, std::numeric_limits<double>::quiet_NaN());
      if (regression) tr.responses = Matrix::Zero(T + 1, d);
    }

    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);
    const Index n_values = regression ? 2 * d : d;
    std::size_t rows = 0;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::vector<std::string> f;
      std::stringstream ls(line);
      std::string cell;
      while (std::getline(ls, cell, ',')) f.push_back(cell);
      if (static_cast<Index>(f.size()) != 2 + n_values) throw IoError(fmt::format("bundle CSV: bad row '{}'", line));
      const Index m = std::stoll(f[0]);
      const Index t = std::stoll(f[1]);
      if (m < 0 || m >= M || t < 0 || t > T) throw IoError(fmt::format("bundle CSV: index out of range in '{}'", line));
      auto& tr = trajectories[static_cast<std::size_t>(m)];
      for (Index i = 0; i < d; ++i) tr.states(t, i) = std::stod(f[static_cast<std::size_t>(2 + i)]);
      if (regression)
        for (Index i = 0; i < d; ++i) (*tr.responses)(t, i) = std::stod(f[static_cast<std::size_t>(2 + d + i)]);
      ++rows;
    }
    if (rows != static_cast<std::size_t>(M * (T + 1))) throw IoError("bundle CSV: row count does not match sidecar");
    return TrajectoryBundle(std::move(trajectories), std::move(noise), mode, sidecar.value("seed", std::uint64_t{0}));
  } catch (const json::exception& ex) {
    throw IoError(fmt::format("malformed bundle sidecar: {}", ex.what()));
  } catch (const std::invalid_argument& ex) {
    throw IoError(fmt::format("bundle CSV: cannot parse number ({})", ex.what()));
  }
}

std::filesystem::path sidecar_path(const std::filesystem::path& bundle_path) {
  return std::filesystem::path(bundle_path.string() + ".json");
}

void save_bundle(const TrajectoryBundle& bundle, const std::filesystem::path& path) {
  write_text_file(path, bundle_to_csv(bundle));
  write_text_file(sidecar_path(path), bundle_sidecar(bundle).dump(2) + "\n");
}

TrajectoryBundle load_bundle(const std::filesystem::path& path) {
  json sidecar;
  try {
    sidecar = json::parse(read_text_file(sidecar_path(path)));
  } catch (const json::parse_error& ex) {
    throw IoError(fmt::format("{}: {}", sidecar_path(path).string(), ex.what()));
  }
  return bundle_from_csv(read_text_file(path), sidecar);
}

json fit_config_to_json(const FitConfig& c) {
  return {{"optimizer", c.optimizer == Optimizer::als ? "als" : "gd"},
          {"max_iters", c.max_iters},
          {"tol", c.tol},
          {"restarts", c.restarts},
          {"ridge", c.ridge ? json(*c.ridge) : json(nullptr)},
          {"init_seed", c.init_seed},
          {"gd_step", c.gd_step}};
}

FitConfig fit_config_from_json(const json& j, FitConfig c) {
  if (j.contains("optimizer")) {
    const auto name = j.at("optimizer").get<std::string>();
    if (name != "als" && name != "gd") throw ArgumentError("optimizer must be als or gd");
    c.optimizer = name == "als" ? Optimizer::als : Optimizer::gd;
  }
  c.max_iters = j.value("max_iters", c.max_iters);
  c.tol = j.value("tol", c.tol);
  c.restarts = j.value("restarts", c.restarts);
  if (j.contains("ridge")) c.ridge = j.at("ridge").is_null() ? std::nullopt : std::optional<double>(j.at("ridge").get<double>());
  c.init_seed = j.value("init_seed", c.init_seed);
  c.gd_step = j.value("gd_step", c.gd_step);
  return c;
}

namespace {

json bundle_provenance(const TrajectoryBundle& b) {
  return {{"seed", b.seed()}, {"T", b.T()}, {"d", b.d()}, {"M", b.M()}, {"mode", mode_name(b.mode())}};
}

json matrices_to_json(const std::vector<Matrix>& As) {
  json out = json::array();
  for (const auto& A : As) out.push_back(matrix_to_json(A));
  return out;
}

}  // namespace

json joint_fit_to_json(const JointFit& fit, const FitConfig& config, const TrajectoryBundle& bundle) {
  return {{"kind", "joint"},
          {"k_fit", fit.W_hat.size()},
          {"W_hat", matrices_to_json(fit.W_hat)},
          {"B_hat", matrix_to_json(fit.B_hat)},
          {"A_hat", matrices_to_json(fit.A_hat)},
          {"loss_trace", fit.loss_trace},
          {"final_loss", fit.final_loss},
          {"converged", fit.converged},
          {"stop_reason", fit.stop_reason},
          {"best_restart", fit.best_restart},
          {"restart_losses", fit.restart_losses},
          {"ridge", {{"coefficient", fit.ridge_coefficient}, {"basis", fit.ridge_basis}}},
          {"config", fit_config_to_json(config)},
          {"bundle", bundle_provenance(bundle)}};
}

json ols_fit_to_json(const OlsFit& fit, const TrajectoryBundle& bundle) {
  double loss = 0.0;
  for (double r : fit.per_system_residual) loss += r;
  loss /= static_cast<double>(fit.per_system_residual.size());
  return {{"kind", "ols"},
          {"A_hat", matrices_to_json(fit.A_hat)},
          {"ridge_used", fit.ridge_used},
          {"per_system_residual", fit.per_system_residual},
          {"final_loss", loss},
          {"bundle", bundle_provenance(bundle)}};
}

json spectral_to_json(const SpectralSummary& s) {
  return {{"spectral_radius", s.spectral_radius}, {"l_star", s.l_star}, {"xi", s.xi},          {"xi_exact", s.xi_exact},
          {"f_value", s.f_value},                 {"alpha", s.alpha},   {"regime", to_string(s.regime)}};
}

json covariance_report_to_json(const CovarianceReport& r) {
  json systems = json::array();
  for (const auto& s : r.systems) {
    systems.push_back({{"m", s.m},
                       {"lambda_min", s.lambda_min},
                       {"lambda_max", s.lambda_max},
                       {"lower_theory", s.lower_theory},
                       {"upper_theory", s.upper_theory},
                       {"kappa", s.kappa},
                       {"lower_held", s.lower_held},
                       {"upper_held", s.upper_held},
                       {"b_bar", s.b_bar},
                       {"spectral", spectral_to_json(s.spectral)}});
  }
  return {{"systems", systems},   {"lambda_lower", r.lambda_lower}, {"lambda_upper", r.lambda_upper},
          {"kappa", r.kappa},     {"kappa_infty", r.kappa_infty},   {"delta", r.delta},
          {"rho", r.rho}};
}

std::string covariance_report_to_csv(const CovarianceReport& r) {
  std::string out = "m,lmin,lmax,lower_theory,upper_theory,kappa_m,lower_held,upper_held\n";
  for (const auto& s : r.systems)
    out += fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{},{}\n", s.m, s.lambda_min, s.lambda_max,
                       s.lower_theory, s.upper_theory, s.kappa, s.lower_held ? 1 : 0, s.upper_held ? 1 : 0);
  return out;
}

json noise_events_to_json(const NoiseEvents& e) {
  return {{"bounded", e.bounded},
          {"covariance", e.covariance},
          {"magnitude", e.magnitude},
          {"max_abs_noise", e.max_abs_noise},
          {"truncation_level", e.truncation_level},
          {"total_noise_sq", e.total_noise_sq},
          {"magnitude_bound", e.magnitude_bound}};
}

json error_report_to_json(const ErrorReport& r) {
  return {{"method", r.method}, {"mean", r.mean}, {"per_system_fro_sq", r.per_system_fro_sq}};
}

std::string git_blob_hash(const std::string& content) {
  const std::string payload = fmt::format("blob {}", content.size()) + std::string(1, '\0') + content;
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(payload.data(), payload.size(), digest, &len, EVP_sha1(), nullptr) != 1)
    throw Error("SHA-1 digest failed");
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

}  // namespace jointlti

#include "jointlti/experiments.hpp"

#include "jointlti/diagnostics.hpp"
#include "jointlti/error.hpp"
#include "jointlti/plot.hpp"
#include "jointlti/rng.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

namespace jointlti {

std::string to_string(RegimeKind regime) { return regime == RegimeKind::stable_range ? "stable" : "unit_root"; }

RegimeKind regime_from_string(const std::string& name) {
  if (name == "stable" || name == "stable_range") return RegimeKind::stable_range;
  if (name == "unit_root" || name == "unit-root") return RegimeKind::unit_root;
  throw ArgumentError(fmt::format("unknown regime '{}' (expected stable or unit_root)", name));
}

void SweepConfig::validate() const {
  if (d < 1 || k_true < 1 || T < 1) throw ArgumentError("sweep needs d, k, T >= 1");
  if (effective_k_fit() > d * d) throw ArgumentError("k_fit must be <= d^2");
  if (M_list.empty()) throw ArgumentError("M_list must not be empty");
  for (std::size_t i = 0; i < M_list.size(); ++i) {
    if (M_list[i] < 1) throw ArgumentError("M values must be >= 1");
    if (i > 0 && M_list[i] <= M_list[i - 1]) throw ArgumentError("M_list must be strictly ascending");
  }
  if (regime == RegimeKind::stable_range && !(radius_lo > 0.0 && radius_lo <= radius_hi))
    throw ArgumentError("radius range must satisfy 0 < lo <= hi");
  if (!(noise_variance >= 0.0)) throw ArgumentError("noise variance must be >= 0");
  if (!(x0_scale >= 0.0)) throw ArgumentError("x0_scale must be >= 0");
  if (misspec && (!(misspec->a >= 0.0) || !(misspec->fro_sq_target >= 0.0)))
    throw ArgumentError("misspecification needs a >= 0 and fro_sq_target >= 0");
  if (replicates < 1) throw ArgumentError("replicates must be >= 1");
  if (jobs < 1) throw ArgumentError("jobs must be >= 1");
  fit.validate();
}

const SweepRow* SweepResult::find(int M, const std::string& method, std::optional<double> a) const {
  for (const auto& r : rows)
    if (r.M == M && r.method == method && (!a || (r.a && *r.a == *a))) return &r;
  return nullptr;
}

SweepCell make_sweep_cell(const SweepConfig& config, int M, int replicate) {
  const std::uint64_t rep_seed = derive_seed(config.seed, "replicate", {static_cast<std::uint64_t>(replicate)});
  const SharedBasis basis = generate_shared_basis(config.k_true, config.d, derive_seed(rep_seed, "basis"));
  const CoefficientSet coeffs = sample_coefficients(config.k_true, M, derive_seed(rep_seed, "coefficients"));
  const SystemEnsemble raw = compose_systems(basis, coeffs);

  const std::vector<double> targets =
      config.regime == RegimeKind::stable_range
          ? sample_radius_targets(M, config.radius_lo, config.radius_hi, derive_seed(rep_seed, "radius"))
          : std::vector<double>(static_cast<std::size_t>(M), 1.0);
  SystemEnsemble ensemble = rescale_to_radius(raw, targets, config.T);

  if (config.misspec && config.misspec->fro_sq_target > 0.0) {
    MisspecificationSet D = sample_misspecification(config.d, M, config.misspec->a, config.misspec->fro_sq_target,
                                                    derive_seed(rep_seed, "misspec"));
    ensemble = SystemEnsemble(ensemble.basis(), ensemble.coefficients(), std::move(D), ensemble.rho_slack())
                   .with_spectral_control(config.T);
  }
  ensemble.seed_provenance = {{"sweep_seed", std::to_string(config.seed)},
                              {"replicate", std::to_string(replicate)},
                              {"M", std::to_string(M)}};

  const NoiseModel noise = NoiseModel::isotropic(config.d, config.noise_variance);
  std::optional<std::vector<Vector>> x0;
  if (config.x0_scale > 0.0) {
    x0.emplace();
    for (int m = 0; m < M; ++m) {
      Rng rng = Rng::stream(rep_seed, "x0", {static_cast<std::uint64_t>(m)});
      x0->push_back(gaussian_matrix(rng, config.d, 1, config.x0_scale).col(0));
    }
  }
  TrajectoryBundle bundle = simulate_bundle(ensemble, config.T, noise, x0, derive_seed(rep_seed, "dynamics"));
  return SweepCell{std::move(ensemble), std::move(bundle)};
}

CellErrors evaluate_sweep_cell(const SweepConfig& config, int M, int replicate) {
  const SweepCell cell = make_sweep_cell(config, M, replicate);
  FitConfig fit = config.fit;
  fit.init_seed = derive_seed(config.fit.init_seed, "sweep-init",
                              {static_cast<std::uint64_t>(replicate), static_cast<std::uint64_t>(M)});
  const JointFit joint = joint_fit(cell.bundle, config.effective_k_fit(), fit);
  const OlsFit ols = ols_fit(cell.bundle, config.fit.ridge.value_or(0.0));
  return CellErrors{estimation_error(joint.A_hat, cell.ensemble, "joint").mean,
                    estimation_error(ols.A_hat, cell.ensemble, "ols").mean};
}

namespace {

struct CellKey {
  int M;
  int replicate;
};

// Runs every (M, replicate) cell, possibly on several threads; results are
// stored by key so the reduction order never depends on scheduling.
std::vector<CellErrors> run_cells(const SweepConfig& config, const std::vector<CellKey>& keys) {
  std::vector<CellErrors> results(keys.size());
  std::vector<std::exception_ptr> failures(keys.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < keys.size(); i = next++) {
      try {
        results[i] = evaluate_sweep_cell(config, keys[i].M, keys[i].replicate);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  const auto n_threads = static_cast<std::size_t>(std::min<int>(config.jobs, static_cast<int>(keys.size())));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (!failures[i]) continue;
    try {
      std::rethrow_exception(failures[i]);
    } catch (const std::exception& e) {
      throw Error(fmt::format("M={}, replicate={}: {}", keys[i].M, keys[i].replicate, e.what()));
    }
  }
  return results;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::optional<double> row_tag(const SweepConfig& config) {
  return config.misspec ? std::optional<double>(config.misspec->a) : std::nullopt;
}

}  // namespace

SweepResult run_sweep(const SweepConfig& config) {
  config.validate();
  std::vector<CellKey> keys;
  for (int M : config.M_list)
    for (int r = 0; r < config.replicates; ++r) keys.push_back({M, r});
  const std::vector<CellErrors> errors = run_cells(config, keys);

  SweepResult result;
  std::size_t idx = 0;
  for (int M : config.M_list) {
    std::vector<double> joint, ols;
    for (int r = 0; r < config.replicates; ++r, ++idx) {
      joint.push_back(errors[idx].joint);
      ols.push_back(errors[idx].ols);
    }
    for (const auto& [method, values] : {std::pair{"joint", &joint}, std::pair{"ols", &ols}}) {
      result.rows.push_back(SweepRow{M, method, to_string(config.regime), row_tag(config), mean_of(*values),
                                     std_of(*values), config.replicates});
    }
  }
  return result;
}

SweepResult run_misspec_grid(const SweepConfig& config, std::span<const double> a_list) {
  if (!config.misspec) throw ArgumentError("run_misspec_grid needs a misspecification target (fro_sq_target)");
  if (a_list.empty()) throw ArgumentError("a_list must not be empty");
  SweepResult out;
  for (double a : a_list) {
    SweepConfig c = config;
    c.misspec->a = a;
    SweepResult r = run_sweep(c);
    out.rows.insert(out.rows.end(), r.rows.begin(), r.rows.end());
  }
  return out;
}

GrowthProfile state_growth_profile(const JordanSpec& spec, int T, const NoiseModel& noise, std::uint64_t seed,
                                   const std::optional<Vector>& x0) {
  if (T < 10) throw ArgumentError(fmt::format("state_growth_profile: T must be >= 10 (got {})", T));
  const JordanFactor factor = build_from_jordan(spec, derive_seed(seed, "growth-system"));
  const Vector start = x0 ? *x0 : Vector::Zero(factor.A.rows());
  const Trajectory tr = simulate(factor.A, T, noise, start, derive_seed(seed, "growth-noise"));

  GrowthProfile profile;
  profile.l_star = spec.largest_block();
  profile.lambda = spec.leading_eigenvalue();
  for (int t = 0; t <= T; ++t) {
    const double n = tr.states.row(t).norm();
    profile.points.push_back({t, n > 0.0 ? std::optional<double>(std::log(n)) : std::nullopt});
  }
  return profile;
}

double growth_slope(const GrowthProfile& profile, int t_from, int t_to) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (const auto& p : profile.points) {
    if (p.t < std::max(1, t_from) || p.t > t_to || !p.log_norm) continue;
    const double x = std::log(static_cast<double>(p.t));
    sx += x;
    sy += *p.log_norm;
    sxx += x * x;
    sxy += x * *p.log_norm;
    ++n;
  }
  if (n < 2) throw ArgumentError("growth_slope: fewer than two usable points in range");
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

void SelectionExperimentConfig::validate() const {
  if (d < 1 || k_true < 1 || T < 2 || M < 1) throw ArgumentError("selection experiment needs d, k, M >= 1 and T >= 2");
  if (k_grid.empty() || !std::is_sorted(k_grid.begin(), k_grid.end()))
    throw ArgumentError("k_grid must be non-empty and ascending");
  if (replicates < 1) throw ArgumentError("replicates must be >= 1");
  fit.validate();
}

std::vector<SelectionRun> run_selection_experiment(const SelectionExperimentConfig& config) {
  config.validate();
  SweepConfig cell_config;
  cell_config.d = config.d;
  cell_config.k_true = config.k_true;
  cell_config.T = config.T;
  cell_config.regime = config.regime;
  cell_config.radius_lo = config.radius_lo;
  cell_config.radius_hi = config.radius_hi;
  cell_config.noise_variance = config.noise_variance;
  cell_config.x0_scale = config.x0_scale;
  cell_config.seed = config.seed;

  std::vector<SelectionRun> runs;
  for (int r = 0; r < config.replicates; ++r) {
    const SweepCell cell = make_sweep_cell(cell_config, config.M, r);
    FitConfig fit = config.fit;
    fit.init_seed = derive_seed(config.fit.init_seed, "selection-init", {static_cast<std::uint64_t>(r)});
    Selection sel = select_k(cell.bundle, config.k_grid, config.validation, fit, config.elbow_slack);
    SelectionRun run;
    run.k_chosen = sel.k_chosen;
    run.curve = std::move(sel.curve);
    for (const auto& est : sel.estimates) run.estimation_error.push_back(estimation_error(est, cell.ensemble).mean);
    runs.push_back(std::move(run));
  }
  return runs;
}

// Export -------------------------------------------------------------------

namespace {

std::string fmt_double(double v) { return fmt::format("{:.17g}", v); }

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError(fmt::format("cannot parse number '{}'", s));
  }
}

}  // namespace

std::string sweep_to_csv(const SweepResult& result) {
  std::string out = std::string(kSweepCsvHeader) + "\n";
  for (const auto& r : result.rows) {
    out += fmt::format("{},{},{},{},{},{},{}\n", r.M, r.method, r.regime, r.a ? fmt_double(*r.a) : std::string(),
                       fmt_double(r.mean_error), fmt_double(r.std_error), r.replicates);
  }
  return out;
}

SweepResult sweep_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kSweepCsvHeader) throw IoError("sweep CSV: unexpected header");
  SweepResult result;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 7) throw IoError(fmt::format("sweep CSV: expected 7 fields in '{}'", line));
    SweepRow r;
    r.M = static_cast<int>(parse_double(f[0]));
    r.method = f[1];
    r.regime = f[2];
    if (!f[3].empty()) r.a = parse_double(f[3]);
    r.mean_error = parse_double(f[4]);
    r.std_error = parse_double(f[5]);
    r.replicates = static_cast<int>(parse_double(f[6]));
    result.rows.push_back(std::move(r));
  }
  return result;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  os << text;
  if (!os) throw IoError(fmt::format("failed writing '{}'", path.string()));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(fmt::format("cannot open '{}' for reading", path.string()));
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void export_sweep(const SweepResult& result, const std::filesystem::path& path, const std::string& format) {
  if (result.rows.empty()) throw ArgumentError("export: result is empty");
  if (format == "csv") {
    write_text_file(path, sweep_to_csv(result));
  } else if (format == "json") {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : result.rows) {
      rows.push_back({{"M", r.M},
                      {"method", r.method},
                      {"regime", r.regime},
                      {"a", r.a ? nlohmann::json(*r.a) : nlohmann::json(nullptr)},
                      {"mean_error", r.mean_error},
                      {"std_error", r.std_error},
                      {"replicates", r.replicates}});
    }
    write_text_file(path, nlohmann::json{{"rows", rows}}.dump(2) + "\n");
  } else {
    throw ArgumentError(fmt::format("unknown export format '{}' (expected csv or json)", format));
  }
}

SweepResult import_sweep(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  if (path.extension() != ".json") return sweep_from_csv(text);
  SweepResult result;
  const auto doc = nlohmann::json::parse(text);
  for (const auto& r : doc.at("rows")) {
    SweepRow row;
    row.M = r.at("M").get<int>();
    row.method = r.at("method").get<std::string>();
    row.regime = r.at("regime").get<std::string>();
    if (!r.at("a").is_null()) row.a = r.at("a").get<double>();
    row.mean_error = r.at("mean_error").get<double>();
    row.std_error = r.at("std_error").get<double>();
    row.replicates = r.at("replicates").get<int>();
    result.rows.push_back(std::move(row));
  }
  return result;
}

std::string growth_to_csv(std::span<const GrowthProfile> profiles) {
  std::string out = "l_star,lambda,t,log_norm\n";
  for (const auto& p : profiles)
    for (const auto& pt : p.points)
      out += fmt::format("{},{},{},{}\n", p.l_star, fmt_double(p.lambda), pt.t,
                         pt.log_norm ? fmt_double(*pt.log_norm) : std::string());
  return out;
}

std::string selection_to_csv(std::span<const SelectionRun> runs) {
  std::string out = "run,k,fit_error,validation_error,estimation_error,k_chosen\n";
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const auto& run = runs[r];
    for (std::size_t i = 0; i < run.curve.size(); ++i) {
      out += fmt::format("{},{},{},{},{},{}\n", r, run.curve[i].k, fmt_double(run.curve[i].fit_error),
                         fmt_double(run.curve[i].validation_error),
                         i < run.estimation_error.size() ? fmt_double(run.estimation_error[i]) : std::string(),
                         run.k_chosen);
    }
  }
  return out;
}

void render_sweep_plot(const SweepResult& result, const std::filesystem::path& path) {
  if (result.rows.empty()) throw ArgumentError("render_sweep_plot: result is empty");
  std::map<std::pair<std::string, std::string>, PlotSeries> by_series;
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& r : result.rows) {
    const std::string tag = r.a ? fmt::format("{:g}", *r.a) : std::string();
    const auto key = std::make_pair(r.method, tag);
    if (!by_series.contains(key)) {
      order.push_back(key);
      by_series[key].label = tag.empty() ? r.method : fmt::format("{} (a={})", r.method, tag);
    }
    auto& s = by_series[key];
    s.x.push_back(r.M);
    s.y.push_back(r.mean_error);
    s.err.push_back(r.std_error);
  }
  std::vector<PlotSeries> series;
  for (const auto& key : order) series.push_back(by_series[key]);
  PlotSpec spec{fmt::format("Per-system estimation error ({})", result.rows.front().regime), "M (number of systems)",
                "mean ||A_hat - A||_F^2", true, false};
  write_text_file(path, render_svg(spec, series));
}

void render_growth_plot(std::span<const GrowthProfile> profiles, const std::filesystem::path& path) {
  if (profiles.empty()) throw ArgumentError("render_growth_plot: no profiles");
  std::vector<PlotSeries> series;
  for (const auto& p : profiles) {
    PlotSeries s;
    s.label = fmt::format("l={} (lambda={:g})", p.l_star, p.lambda);
    for (const auto& pt : p.points) {
      if (!pt.log_norm) continue;
      s.x.push_back(pt.t);
      s.y.push_back(*pt.log_norm);
    }
    series.push_back(std::move(s));
  }
  write_text_file(path, render_svg(PlotSpec{"State magnitude growth", "t", "log ||x(t)||", false, false}, series));
}

void render_selection_plot(std::span<const SelectionRun> runs, const std::filesystem::path& path) {
  if (runs.empty()) throw ArgumentError("render_selection_plot: no runs");
  const auto& grid = runs.front().curve;
  PlotSeries fit{"training loss", {}, {}, {}}, val{"validation error", {}, {}, {}}, est{"estimation error", {}, {}, {}};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    std::vector<double> f, v, e;
    for (const auto& run : runs) {
      f.push_back(run.curve[i].fit_error);
      v.push_back(run.curve[i].validation_error);
      if (i < run.estimation_error.size()) e.push_back(run.estimation_error[i]);
    }
    const double k = grid[i].k;
    fit.x.push_back(k), fit.y.push_back(mean_of(f)), fit.err.push_back(std_of(f));
    val.x.push_back(k), val.y.push_back(mean_of(v)), val.err.push_back(std_of(v));
    if (!e.empty()) est.x.push_back(k), est.y.push_back(mean_of(e)), est.err.push_back(std_of(e));
  }
  std::vector<PlotSeries> series{fit, val};
  if (!est.x.empty()) series.push_back(est);
  write_text_file(path, render_svg(PlotSpec{"Model selection over k", "k'", "error", false, false}, series));
}

}  // namespace jointlti

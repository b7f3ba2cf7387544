#include "jointlti/cli.hpp"

#include "jointlti/diagnostics.hpp"
#include "jointlti/error.hpp"
#include "jointlti/experiments.hpp"
#include "jointlti/rng.hpp"
#include "jointlti/serialization.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <functional>
#include <map>
#include <sstream>

namespace jointlti {

namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Kind { integer, real, text, int_list, real_list };

struct OptionSpec {
  std::string name;
  Kind kind;
  json fallback;  // null means "required" unless listed as optional
  std::string help;
  bool optional = false;
};

using Handler = std::function<void(const json& cfg, std::ostream& out)>;

struct Command {
  std::string name;
  std::string description;
  std::vector<OptionSpec> options;
  std::function<std::string(const json& cfg)> plan;
  Handler run;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) parts.push_back(item);
  return parts;
}

long long parse_int(const std::string& name, const std::string& s) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw UsageError(fmt::format("--{}: '{}' is not an integer", name, s));
  return v;
}

double parse_real(const std::string& name, const std::string& s) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) throw UsageError(fmt::format("--{}: '{}' is not a number", name, s));
  return v;
}

json convert(const OptionSpec& spec, const std::string& raw) {
  switch (spec.kind) {
    case Kind::integer: return parse_int(spec.name, raw);
    case Kind::real: return parse_real(spec.name, raw);
    case Kind::text: return raw;
    case Kind::int_list: {
      json out = json::array();
      for (const auto& p : split(raw, ',')) out.push_back(parse_int(spec.name, p));
      if (out.empty()) throw UsageError(fmt::format("--{}: empty list", spec.name));
      return out;
    }
    case Kind::real_list: {
      json out = json::array();
      for (const auto& p : split(raw, ',')) out.push_back(parse_real(spec.name, p));
      if (out.empty()) throw UsageError(fmt::format("--{}: empty list", spec.name));
      return out;
    }
  }
  return nullptr;
}

template <class T>
T get(const json& cfg, const std::string& key) {
  const json& v = cfg.at(key);
  if (v.is_null()) throw UsageError(fmt::format("missing required option --{}", key));
  try {
    return v.get<T>();
  } catch (const json::type_error&) {
    throw UsageError(fmt::format("option {} has the wrong type", key));
  }
}

bool has(const json& cfg, const std::string& key) { return cfg.contains(key) && !cfg.at(key).is_null(); }

fs::path sibling(const fs::path& out, const std::string& ext) {
  fs::path p = out;
  p.replace_extension(ext);
  return p;
}

Optimizer optimizer_from(const std::string& name) {
  if (name == "als") return Optimizer::als;
  if (name == "gd") return Optimizer::gd;
  throw UsageError(fmt::format("unknown optimizer '{}' (als, gd)", name));
}

RegimeKind regime_from(const json& cfg) {
  const auto name = get<std::string>(cfg, "regime");
  try {
    return regime_from_string(name);
  } catch (const Error&) {
    throw UsageError(fmt::format("unknown regime '{}' (stable, unit_root)", name));
  }
}

// Option groups shared by several commands.
std::vector<OptionSpec> fit_options(const std::string& default_optimizer) {
  return {{"optimizer", Kind::text, default_optimizer, "als, gd (fit also accepts ols)"},
          {"ridge", Kind::real, nullptr, "ridge added to every normal matrix", true},
          {"max-iters", Kind::integer, 500, "iteration cap"},
          {"tol", Kind::real, 1e-8, "relative loss-decrease tolerance"},
          {"restarts", Kind::integer, 1, "random restarts"}};
}

FitConfig fit_config(const json& cfg) {
  FitConfig fit;
  fit.optimizer = optimizer_from(get<std::string>(cfg, "optimizer"));
  if (has(cfg, "ridge")) fit.ridge = get<double>(cfg, "ridge");
  fit.max_iters = get<int>(cfg, "max-iters");
  fit.tol = get<double>(cfg, "tol");
  fit.restarts = get<int>(cfg, "restarts");
  fit.init_seed = get<std::uint64_t>(cfg, "seed");
  return fit;
}

std::vector<OptionSpec> sweep_options() {
  std::vector<OptionSpec> o = {{"d", Kind::integer, 25, "state dimension"},
                               {"k", Kind::integer, 10, "true basis size"},
                               {"k-fit", Kind::integer, 0, "fitted basis size (0: same as --k)"},
                               {"T", Kind::integer, 200, "trajectory length"},
                               {"M", Kind::int_list, json::array({1, 10, 20, 50, 100, 200}), "system counts, ascending"},
                               {"regime", Kind::text, "stable", "stable or unit_root"},
                               {"radius-lo", Kind::real, 0.7, "lower spectral radius"},
                               {"radius-hi", Kind::real, 0.9, "upper spectral radius"},
                               {"noise-var", Kind::real, 4.0, "noise variance"},
                               {"replicates", Kind::integer, 10, "replicates per M"},
                               {"jobs", Kind::integer, 1, "worker threads"}};
  for (auto& f : fit_options("als")) o.push_back(f);
  return o;
}

SweepConfig sweep_config(const json& cfg) {
  SweepConfig c;
  c.d = get<int>(cfg, "d");
  c.k_true = get<int>(cfg, "k");
  c.k_fit = get<int>(cfg, "k-fit");
  c.T = get<int>(cfg, "T");
  c.M_list = get<std::vector<int>>(cfg, "M");
  c.regime = regime_from(cfg);
  c.radius_lo = get<double>(cfg, "radius-lo");
  c.radius_hi = get<double>(cfg, "radius-hi");
  c.noise_variance = get<double>(cfg, "noise-var");
  c.replicates = get<int>(cfg, "replicates");
  c.jobs = get<int>(cfg, "jobs");
  c.seed = get<std::uint64_t>(cfg, "seed");
  c.fit = fit_config(cfg);
  return c;
}

void write_sweep_outputs(const std::string& command, const json& cfg, const SweepResult& result,
                         const fs::path& out, std::ostream& os) {
  const std::string csv = sweep_to_csv(result);
  write_text_file(out, csv);
  const fs::path svg = sibling(out, ".svg");
  render_sweep_plot(result, svg);
  const fs::path manifest_path = sibling(out, ".manifest.json");
  json manifest = {{"command", command},
                   {"config", cfg},
                   {"input_hash", git_blob_hash(cfg.dump())},
                   {"outputs",
                    {{"csv", {{"path", out.filename().string()}, {"hash", git_blob_hash(csv)}}},
                     {"plot", {{"path", svg.filename().string()}, {"hash", git_blob_hash(read_text_file(svg))}}}}}};
  write_text_file(manifest_path, manifest.dump(2) + "\n");
  os << fmt::format("wrote {} ({} rows), {}, {}\n", out.string(), result.rows.size(), svg.string(),
                    manifest_path.string());
}

SystemEnsemble generate_ensemble(const json& cfg) {
  const int d = get<int>(cfg, "d");
  const int k = get<int>(cfg, "k");
  const int M = get<int>(cfg, "M");
  const double T = get<double>(cfg, "T");
  const auto seed = get<std::uint64_t>(cfg, "seed");
  const double rho = get<double>(cfg, "rho");

  if (get<int>(cfg, "jordan-block") > 0) {
    JordanSpec spec = JordanSpec::uniform(d, get<int>(cfg, "jordan-block"), get<double>(cfg, "jordan-lambda"),
                                          get<double>(cfg, "conditioning"));
    SystemEnsemble e = ensemble_from_jordan(build_from_jordan(spec, derive_seed(seed, "jordan")));
    e.seed_provenance = {{"seed", std::to_string(seed)}, {"jordan", "jordan"}};
    return e;
  }

  const SharedBasis basis = generate_shared_basis(k, d, derive_seed(seed, "basis"));
  const CoefficientSet coeffs = sample_coefficients(k, M, derive_seed(seed, "coefficients"));
  const std::vector<double> targets =
      regime_from(cfg) == RegimeKind::stable_range
          ? sample_radius_targets(M, get<double>(cfg, "radius-lo"), get<double>(cfg, "radius-hi"),
                                  derive_seed(seed, "radius"))
          : std::vector<double>(static_cast<std::size_t>(M), 1.0);
  const SystemEnsemble scaled = rescale_to_radius(compose_systems(basis, coeffs), targets, T);
  std::optional<MisspecificationSet> D;
  if (has(cfg, "misspec-a"))
    D = sample_misspecification(d, M, get<double>(cfg, "misspec-a"), get<double>(cfg, "misspec-fro"),
                                derive_seed(seed, "misspec"));
  SystemEnsemble e = SystemEnsemble(scaled.basis(), scaled.coefficients(), std::move(D), rho).with_spectral_control(T);
  e.seed_provenance = {{"seed", std::to_string(seed)},
                       {"basis", "basis"},
                       {"coefficients", "coefficients"},
                       {"radius", "radius"},
                       {"misspec", "misspec"}};
  return e;
}

std::vector<Command> commands() {
  std::vector<Command> cmds;

  cmds.push_back(
      {"generate",
       "sample a shared-basis ensemble (or a single Jordan system) and write it as JSON",
       {{"d", Kind::integer, 10, "state dimension"},
        {"k", Kind::integer, 3, "basis size"},
        {"M", Kind::integer, 10, "number of systems"},
        {"T", Kind::real, 200.0, "nominal horizon recorded with the radius control"},
        {"regime", Kind::text, "stable", "stable or unit_root"},
        {"radius-lo", Kind::real, 0.7, "lower spectral radius"},
        {"radius-hi", Kind::real, 0.9, "upper spectral radius"},
        {"rho", Kind::real, 0.0, "spectral slack rho"},
        {"misspec-a", Kind::real, nullptr, "misspecification exponent a (off when absent)", true},
        {"misspec-fro", Kind::real, 6.25, "E||D_m||_F^2 of an affected system"},
        {"jordan-block", Kind::integer, 0, "build one Jordan system with blocks of this size instead"},
        {"jordan-lambda", Kind::real, 1.0, "Jordan eigenvalue"},
        {"conditioning", Kind::real, 1.0, "condition number of the Jordan similarity"},
        {"out", Kind::text, "ensemble.json", "output path"}},
       [](const json& cfg) {
         return fmt::format("generate ensemble d={} k={} M={} -> {}", cfg["d"].dump(), cfg["k"].dump(),
                            cfg["M"].dump(), cfg["out"].get<std::string>());
       },
       [](const json& cfg, std::ostream& os) {
         const SystemEnsemble e = generate_ensemble(cfg);
         save_ensemble(e, get<std::string>(cfg, "out"));
         os << fmt::format("wrote {} (k={}, d={}, M={})\n", get<std::string>(cfg, "out"), e.k(), e.d(), e.M());
       }});

  cmds.push_back(
      {"simulate",
       "simulate every system of an ensemble and write a trajectory bundle",
       {{"ensemble", Kind::text, nullptr, "ensemble JSON"},
        {"T", Kind::integer, 200, "trajectory length"},
        {"noise-var", Kind::real, 1.0, "isotropic noise variance"},
        {"x0", Kind::text, "zero", "initial state: zero, ones or gaussian"},
        {"mode", Kind::text, "var", "var or regression"},
        {"out", Kind::text, "bundle.csv", "output CSV (sidecar written next to it)"}},
       [](const json& cfg) {
         return fmt::format("simulate {} for T={} -> {}", cfg["ensemble"].dump(), cfg["T"].dump(),
                            cfg["out"].get<std::string>());
       },
       [](const json& cfg, std::ostream& os) {
         const SystemEnsemble e = load_ensemble(get<std::string>(cfg, "ensemble"));
         const int T = get<int>(cfg, "T");
         const auto seed = get<std::uint64_t>(cfg, "seed");
         const NoiseModel noise = NoiseModel::isotropic(e.d(), get<double>(cfg, "noise-var"));
         const auto x0_kind = get<std::string>(cfg, "x0");
         std::optional<std::vector<Vector>> x0;
         if (x0_kind == "ones") {
           x0 = std::vector<Vector>(static_cast<std::size_t>(e.M()), Vector::Ones(e.d()));
         } else if (x0_kind == "gaussian") {
           x0.emplace();
           for (Index m = 0; m < e.M(); ++m) {
             Rng rng = Rng::stream(seed, "x0", {static_cast<std::uint64_t>(m)});
             Vector v(e.d());
             for (Index i = 0; i < e.d(); ++i) v(i) = rng.normal();
             x0->push_back(v);
           }
         } else if (x0_kind != "zero") {
           throw UsageError(fmt::format("unknown --x0 '{}' (zero, ones, gaussian)", x0_kind));
         }
         const auto mode = get<std::string>(cfg, "mode");
         TrajectoryBundle bundle = [&] {
           if (mode == "var") return simulate_bundle(e, T, noise, x0, seed);
           if (mode == "regression")
             return simulate_regression_bundle(e, T, noise, Matrix::Identity(e.d(), e.d()), seed);
           throw UsageError(fmt::format("unknown --mode '{}' (var, regression)", mode));
         }();
         save_bundle(bundle, get<std::string>(cfg, "out"));
         os << fmt::format("wrote {} and {}\n", get<std::string>(cfg, "out"),
                           sidecar_path(get<std::string>(cfg, "out")).string());
       }});

  {
    std::vector<OptionSpec> o = {{"bundle", Kind::text, nullptr, "bundle CSV"},
                                 {"k", Kind::integer, 3, "fitted basis size"}};
    for (auto& f : fit_options("als")) o.push_back(f);
    o.push_back({"out", Kind::text, "fit.json", "output JSON"});
    cmds.push_back({"fit", "fit the joint estimator (or per-system OLS) to a bundle", o,
                    [](const json& cfg) {
                      return fmt::format("fit {} with {} k={} -> {}", cfg["bundle"].dump(),
                                         cfg["optimizer"].get<std::string>(), cfg["k"].dump(),
                                         cfg["out"].get<std::string>());
                    },
                    [](const json& cfg, std::ostream& os) {
                      const TrajectoryBundle bundle = load_bundle(get<std::string>(cfg, "bundle"));
                      const fs::path out = get<std::string>(cfg, "out");
                      if (get<std::string>(cfg, "optimizer") == "ols") {
                        const OlsFit fit = ols_fit(bundle, has(cfg, "ridge") ? get<double>(cfg, "ridge") : 0.0);
                        const json j = ols_fit_to_json(fit, bundle);
                        write_text_file(out, j.dump(2) + "\n");
                        os << fmt::format("ols loss {:.6g}; wrote {}\n", j["final_loss"].get<double>(), out.string());
                        return;
                      }
                      const FitConfig fc = fit_config(cfg);
                      const JointFit fit = joint_fit(bundle, get<int>(cfg, "k"), fc);
                      write_text_file(out, joint_fit_to_json(fit, fc, bundle).dump(2) + "\n");
                      os << fmt::format("joint loss {:.6g} after {} iterations ({}); wrote {}\n", fit.final_loss,
                                        fit.loss_trace.size() - 1, fit.stop_reason, out.string());
                    }});
  }

  cmds.push_back(
      {"diagnose",
       "sample covariance envelopes, condition numbers and noise events of a bundle",
       {{"ensemble", Kind::text, nullptr, "ensemble JSON"},
        {"bundle", Kind::text, nullptr, "bundle CSV"},
        {"delta", Kind::real, 0.1, "failure probability delta"},
        {"rho", Kind::real, 0.0, "spectral slack rho"},
        {"out", Kind::text, "report.json", "report JSON (a CSV of per-system rows is written next to it)"}},
       [](const json& cfg) {
         return fmt::format("diagnose {} against {} -> {}", cfg["bundle"].dump(), cfg["ensemble"].dump(),
                            cfg["out"].get<std::string>());
       },
       [](const json& cfg, std::ostream& os) {
         const SystemEnsemble e = load_ensemble(get<std::string>(cfg, "ensemble"));
         const TrajectoryBundle bundle = load_bundle(get<std::string>(cfg, "bundle"));
         if (bundle.d() != e.d() || bundle.M() != e.M())
           throw ArgumentError(fmt::format("bundle (d={}, M={}) does not match ensemble (d={}, M={})", bundle.d(),
                                           bundle.M(), e.d(), e.M()));
         const CovarianceReport r =
             covariance_report(bundle, e, bundle.noise(), get<double>(cfg, "delta"), get<double>(cfg, "rho"));
         const fs::path out = get<std::string>(cfg, "out");
         json j = covariance_report_to_json(r);
         j["ols_error"] = error_report_to_json(estimation_error(ols_fit(bundle, 0.0).A_hat, e, "ols"));
         write_text_file(out, j.dump(2) + "\n");
         write_text_file(sibling(out, ".csv"), covariance_report_to_csv(r));
         os << fmt::format("kappa {:.6g}, kappa_infty {:.6g}; wrote {} and {}\n", r.kappa, r.kappa_infty, out.string(),
                           sibling(out, ".csv").string());
       }});

  {
    std::vector<OptionSpec> o = sweep_options();
    o.push_back({"out", Kind::text, "sweep.csv", "output CSV (plot and manifest written next to it)"});
    cmds.push_back({"sweep", "estimation error of joint and OLS fits against the number of systems", o,
                    [](const json& cfg) {
                      return fmt::format("sweep M={} x {} replicates -> {}", cfg["M"].dump(),
                                         cfg["replicates"].dump(), cfg["out"].get<std::string>());
                    },
                    [](const json& cfg, std::ostream& os) {
                      const SweepResult r = run_sweep(sweep_config(cfg));
                      write_sweep_outputs("sweep", cfg, r, get<std::string>(cfg, "out"), os);
                    }});
  }

  {
    std::vector<OptionSpec> o = sweep_options();
    o.push_back({"a", Kind::real_list, json::array({0.0, 0.5, 1.0}), "misspecification exponents"});
    o.push_back({"fro", Kind::real, 6.25, "E||D_m||_F^2 of an affected system"});
    o.push_back({"out", Kind::text, "misspec.csv", "output CSV (plot and manifest written next to it)"});
    cmds.push_back({"misspec-grid", "the sweep repeated for several misspecification exponents", o,
                    [](const json& cfg) {
                      return fmt::format("misspec-grid a={} M={} -> {}", cfg["a"].dump(), cfg["M"].dump(),
                                         cfg["out"].get<std::string>());
                    },
                    [](const json& cfg, std::ostream& os) {
                      SweepConfig c = sweep_config(cfg);
                      c.misspec = MisspecConfig{0.0, get<double>(cfg, "fro")};
                      const auto a = get<std::vector<double>>(cfg, "a");
                      const SweepResult r = run_misspec_grid(c, a);
                      write_sweep_outputs("misspec-grid", cfg, r, get<std::string>(cfg, "out"), os);
                    }});
  }

  cmds.push_back(
      {"growth",
       "state magnitude over time for Jordan systems of several block sizes",
       {{"d", Kind::integer, 8, "state dimension"},
        {"l", Kind::int_list, json::array({1, 2, 4}), "Jordan block sizes"},
        {"lambda", Kind::real, 1.0, "Jordan eigenvalue"},
        {"conditioning", Kind::real, 1.0, "condition number of the similarity"},
        {"T", Kind::integer, 500, "trajectory length"},
        {"noise-var", Kind::real, 1.0, "isotropic noise variance"},
        {"x0", Kind::text, "zero", "zero or last (last standard basis vector)"},
        {"out", Kind::text, "growth.csv", "output CSV (plot written next to it)"}},
       [](const json& cfg) {
         return fmt::format("growth l={} T={} -> {}", cfg["l"].dump(), cfg["T"].dump(), cfg["out"].get<std::string>());
       },
       [](const json& cfg, std::ostream& os) {
         const int d = get<int>(cfg, "d");
         const int T = get<int>(cfg, "T");
         const auto seed = get<std::uint64_t>(cfg, "seed");
         const NoiseModel noise = NoiseModel::isotropic(d, get<double>(cfg, "noise-var"));
         std::optional<Vector> x0;
         const auto x0_kind = get<std::string>(cfg, "x0");
         if (x0_kind == "last") {
           x0 = Vector::Unit(d, d - 1);
         } else if (x0_kind != "zero") {
           throw UsageError(fmt::format("unknown --x0 '{}' (zero, last)", x0_kind));
         }
         std::vector<GrowthProfile> profiles;
         for (int l : get<std::vector<int>>(cfg, "l")) {
           const JordanSpec spec =
               JordanSpec::uniform(d, l, get<double>(cfg, "lambda"), get<double>(cfg, "conditioning"));
           profiles.push_back(
               state_growth_profile(spec, T, noise, derive_seed(seed, "growth", {static_cast<std::uint64_t>(l)}), x0));
           os << fmt::format("l={}: slope over [{}, {}] = {:.4f}\n", l, T / 2, T,
                             growth_slope(profiles.back(), T / 2, T));
         }
         const fs::path out = get<std::string>(cfg, "out");
         write_text_file(out, growth_to_csv(profiles));
         render_growth_plot(profiles, sibling(out, ".svg"));
         os << fmt::format("wrote {} and {}\n", out.string(), sibling(out, ".svg").string());
       }});

  {
    std::vector<OptionSpec> o = {{"d", Kind::integer, 25, "state dimension"},
                                 {"k", Kind::integer, 10, "true basis size"},
                                 {"T", Kind::integer, 250, "trajectory length"},
                                 {"M", Kind::integer, 50, "number of systems"},
                                 {"grid", Kind::int_list, json::array({2, 4, 6, 8, 10, 12, 14, 16, 18, 20}), "candidate k"},
                                 {"replicates", Kind::integer, 10, "independent runs"},
                                 {"noise-var", Kind::real, 4.0, "noise variance"},
                                 {"regime", Kind::text, "stable", "stable or unit_root"},
                                 {"radius-lo", Kind::real, 0.7, "lower spectral radius"},
                                 {"radius-hi", Kind::real, 0.9, "upper spectral radius"},
                                 {"validation", Kind::text, "steps", "steps or systems"},
                                 {"fraction", Kind::real, 0.2, "held-out fraction"},
                                 {"slack", Kind::real, 0.05, "elbow slack"}};
    for (auto& f : fit_options("als")) o.push_back(f);
    o.push_back({"out", Kind::text, "selection.csv", "output CSV (plot written next to it)"});
    cmds.push_back(
        {"select-k", "choose the basis size by held-out prediction error", o,
         [](const json& cfg) {
           return fmt::format("select-k grid={} x {} runs -> {}", cfg["grid"].dump(), cfg["replicates"].dump(),
                              cfg["out"].get<std::string>());
         },
         [](const json& cfg, std::ostream& os) {
           SelectionExperimentConfig c;
           c.d = get<int>(cfg, "d");
           c.k_true = get<int>(cfg, "k");
           c.T = get<int>(cfg, "T");
           c.M = get<int>(cfg, "M");
           c.k_grid = get<std::vector<int>>(cfg, "grid");
           c.replicates = get<int>(cfg, "replicates");
           c.noise_variance = get<double>(cfg, "noise-var");
           c.regime = regime_from(cfg);
           c.radius_lo = get<double>(cfg, "radius-lo");
           c.radius_hi = get<double>(cfg, "radius-hi");
           const auto kind = get<std::string>(cfg, "validation");
           if (kind != "steps" && kind != "systems")
             throw UsageError(fmt::format("unknown --validation '{}' (steps, systems)", kind));
           c.validation = {kind == "steps" ? ValidationKind::steps : ValidationKind::systems,
                           get<double>(cfg, "fraction")};
           c.elbow_slack = get<double>(cfg, "slack");
           c.seed = get<std::uint64_t>(cfg, "seed");
           c.fit = fit_config(cfg);
           const auto runs = run_selection_experiment(c);
           const fs::path out = get<std::string>(cfg, "out");
           write_text_file(out, selection_to_csv(runs));
           render_selection_plot(runs, sibling(out, ".svg"));
           std::string chosen;
           for (const auto& r : runs) chosen += fmt::format("{}{}", chosen.empty() ? "" : ",", r.k_chosen);
           os << fmt::format("k_chosen per run: {}; wrote {} and {}\n", chosen, out.string(),
                             sibling(out, ".svg").string());
         }});
  }

  cmds.push_back({"export",
                  "convert a sweep result between CSV and JSON, optionally re-rendering its plot",
                  {{"in", Kind::text, nullptr, "sweep result (.csv or .json)"},
                   {"format", Kind::text, "json", "csv or json"},
                   {"plot", Kind::text, nullptr, "also write an SVG plot here", true},
                   {"out", Kind::text, nullptr, "output path"}},
                  [](const json& cfg) {
                    return fmt::format("export {} as {} -> {}", cfg["in"].dump(), cfg["format"].dump(),
                                       cfg["out"].dump());
                  },
                  [](const json& cfg, std::ostream& os) {
                    const SweepResult r = import_sweep(get<std::string>(cfg, "in"));
                    const auto format = get<std::string>(cfg, "format");
                    if (format != "csv" && format != "json")
                      throw UsageError(fmt::format("unknown --format '{}' (csv, json)", format));
                    export_sweep(r, get<std::string>(cfg, "out"), format);
                    if (has(cfg, "plot")) render_sweep_plot(r, get<std::string>(cfg, "plot"));
                    os << fmt::format("wrote {}\n", get<std::string>(cfg, "out"));
                  }});

  for (auto& c : cmds) c.options.insert(c.options.begin(), {"seed", Kind::integer, 0, "master seed"});
  return cmds;
}

json resolve(const Command& cmd, const std::map<std::string, std::string>& given, const std::string& config_path) {
  json cfg = json::object();
  for (const auto& o : cmd.options) cfg[o.name] = o.fallback;
  if (!config_path.empty()) {
    json file;
    try {
      file = json::parse(read_text_file(config_path));
    } catch (const json::parse_error& ex) {
      throw UsageError(fmt::format("--config {}: {}", config_path, ex.what()));
    }
    if (!file.is_object()) throw UsageError("--config must hold a JSON object");
    for (const auto& [key, value] : file.items()) {
      if (!cfg.contains(key)) throw UsageError(fmt::format("--config: unknown key '{}' for {}", key, cmd.name));
      cfg[key] = value;
    }
  }
  for (const auto& o : cmd.options) {
    auto it = given.find(o.name);
    if (it != given.end()) cfg[o.name] = convert(o, it->second);
  }
  for (const auto& o : cmd.options)
    if (!o.optional && cfg[o.name].is_null()) throw UsageError(fmt::format("missing required option --{}", o.name));
  return cfg;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const std::vector<Command> cmds = commands();
  CLI::App app{"Joint estimation of many linear systems that share a low-dimensional basis", "jointlti"};
  app.require_subcommand(1, 1);

  // CLI11 stores flag values as strings; typing happens in resolve().
  std::map<std::string, std::map<std::string, std::string>> raw;
  std::map<std::string, std::string> config_paths;
  std::map<std::string, bool> dry_run;
  std::map<std::string, CLI::App*> subs;
  for (const auto& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.description);
    subs[c.name] = sub;
    for (const auto& o : c.options) {
      std::string help = o.help;
      if (!o.fallback.is_null()) help += fmt::format(" [default {}]", o.fallback.dump());
      sub->add_option("--" + o.name, raw[c.name][o.name], help);
    }
    sub->add_option("--config", config_paths[c.name], "JSON file of option values; flags override it");
    sub->add_flag("--dry-run", dry_run[c.name], "print the resolved plan and exit");
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  for (const auto& c : cmds) {
    CLI::App* sub = subs[c.name];
    if (!sub->parsed()) continue;
    try {
      std::map<std::string, std::string> given;
      for (const auto& o : c.options)
        if (sub->get_option("--" + o.name)->count() > 0) given[o.name] = raw[c.name][o.name];
      const json cfg = resolve(c, given, config_paths[c.name]);
      out << "resolved config: " << cfg.dump() << "\n";
      if (dry_run[c.name]) {
        out << "plan: " << c.plan(cfg) << "\n";
        return kExitOk;
      }
      c.run(cfg, out);
      return kExitOk;
    } catch (const UsageError& e) {
      err << "usage error: " << e.what() << "\n";
      return kExitUsage;
    } catch (const ArgumentError& e) {
      err << "usage error: " << e.what() << "\n";
      return kExitUsage;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kExitRuntime;
    }
  }
  return kExitUsage;
}

}  // namespace jointlti

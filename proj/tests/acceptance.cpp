// Acceptance runs. Prints one PASS/FAIL line per criterion and exits nonzero
// when any criterion fails.

#include "jointlti/diagnostics.hpp"
#include "jointlti/error.hpp"
#include "jointlti/experiments.hpp"
#include "jointlti/rng.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>

using namespace jointlti;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  std::string csv;
  double seconds = 0.0;
  double budget = 0.0;  ///< 0 means no runtime bound
};

std::string g(double v) { return fmt::format("{:.17g}", v); }

SweepConfig desk(int M_max = 50) {
  SweepConfig c;
  c.d = 10;
  c.k_true = 3;
  c.T = 100;
  c.M_list = {1, 5, 25, M_max};
  c.noise_variance = 1.0;
  c.replicates = 10;
  c.seed = 20240601;
  return c;
}

Outcome noiseless_recovery() {
  Outcome o;
  Matrix A(2, 2);
  A << 0.9, 0.0, 0.0, 0.5;
  const NoiseModel zero = NoiseModel::isotropic(2, 0.0);
  const Vector x0 = Vector::Ones(2);
  const SystemEnsemble single = ensemble_from_matrices({A});
  const TrajectoryBundle one = simulate_bundle(single, 5, zero, std::vector<Vector>{x0}, 1);
  const double ols_err = (ols_fit(one).A_hat[0] - A).norm();

  const SystemEnsemble triple = compose_systems(SharedBasis({A}), CoefficientSet(Matrix::Ones(1, 3)));
  const TrajectoryBundle three = simulate_bundle(triple, 5, zero, std::vector<Vector>(3, x0), 1);
  FitConfig fit;
  fit.tol = 1e-14;
  const JointFit jf = joint_fit(three, 1, fit);
  double joint_err = 0.0;
  for (const auto& Ah : jf.A_hat) joint_err = std::max(joint_err, (Ah - A).norm());

  o.pass = ols_err <= 1e-10 && joint_err <= 1e-8;
  o.detail = fmt::format("OLS error {:.3g} (<= 1e-10), joint max error {:.3g} (<= 1e-8)", ols_err, joint_err);
  o.csv = "method,error\nols," + g(ols_err) + "\njoint," + g(joint_err) + "\n";
  o.budget = 1.0;
  return o;
}

Outcome als_monotonicity() {
  Outcome o;
  SweepConfig c = desk();
  c.M_list = {20};
  c.seed = 77;
  int violations = 0;
  double worst = 0.0;
  o.csv = "bundle,iterations,final_loss\n";
  for (int r = 0; r < 20; ++r) {
    const SweepCell cell = make_sweep_cell(c, 20, r);
    FitConfig fit;
    fit.init_seed = static_cast<std::uint64_t>(r);
    const JointFit f = joint_fit(cell.bundle, 3, fit);
    for (std::size_t i = 1; i < f.loss_trace.size(); ++i) {
      const double rise = f.loss_trace[i] - f.loss_trace[i - 1];
      worst = std::max(worst, rise);
      if (rise > 1e-9) ++violations;
    }
    o.csv += fmt::format("{},{},{}\n", r, f.loss_trace.size() - 1, g(f.final_loss));
  }
  o.pass = violations == 0;
  o.detail = fmt::format("{} increases above 1e-9 across 20 traces (largest step up {:.3g})", violations, worst);
  o.budget = 30.0;
  return o;
}

Outcome saturation() {
  Outcome o;
  SweepConfig c;
  c.d = 4;
  c.k_true = 2;
  c.T = 100;
  c.noise_variance = 1.0;
  c.M_list = {1};
  c.seed = 31;
  const SweepCell cell = make_sweep_cell(c, 1, 0);
  FitConfig fit;
  fit.ridge = 0.0;
  fit.tol = 1e-15;
  fit.max_iters = 5000;
  const JointFit jf = joint_fit(cell.bundle, 16, fit);
  const Dataset data = make_dataset(cell.bundle);
  const double ols_loss = evaluate_transition_loss(data, ols_fit(data).A_hat);
  const double gap = std::abs(jf.final_loss - ols_loss);
  o.pass = gap <= 1e-8;
  o.detail = fmt::format("joint loss {:.12g}, OLS loss {:.12g}, gap {:.3g} (<= 1e-8)", jf.final_loss, ols_loss, gap);
  o.csv = "method,loss\njoint," + g(jf.final_loss) + "\nols," + g(ols_loss) + "\n";
  o.budget = 5.0;
  return o;
}

Outcome joint_vs_individual() {
  Outcome o;
  const SweepConfig c = desk();
  const SweepResult r = run_sweep(c);
  const double j50 = r.find(50, "joint")->mean_error;
  const double o50 = r.find(50, "ols")->mean_error;
  bool monotone = true;
  std::string path;
  for (std::size_t i = 0; i < c.M_list.size(); ++i) {
    const SweepRow* cur = r.find(c.M_list[i], "joint");
    path += fmt::format("{}{}:{:.4g}", i ? " " : "", c.M_list[i], cur->mean_error);
    if (i == 0) continue;
    const SweepRow* prev = r.find(c.M_list[i - 1], "joint");
    const double pooled = std::sqrt(0.5 * (cur->std_error * cur->std_error + prev->std_error * prev->std_error));
    if (cur->mean_error > prev->mean_error + pooled) monotone = false;
  }
  o.pass = j50 <= 0.5 * o50 && monotone;
  o.detail = fmt::format("joint/OLS at M=50 = {:.3f} (<= 0.5); joint by M {}; monotone within pooled sd: {}",
                         j50 / o50, path, monotone ? "yes" : "no");
  o.csv = sweep_to_csv(r);
  o.budget = 300.0;
  return o;
}

Outcome misspecification() {
  Outcome o;
  SweepConfig c = desk();
  c.misspec = MisspecConfig{0.0, 1.0};
  const std::vector<double> a_list{0.0, 0.5};
  const SweepResult r = run_misspec_grid(c, a_list);
  const double j0 = r.find(50, "joint", 0.0)->mean_error, o0 = r.find(50, "ols", 0.0)->mean_error;
  const double jh = r.find(50, "joint", 0.5)->mean_error, oh = r.find(50, "ols", 0.5)->mean_error;
  o.pass = j0 >= o0 && jh <= oh;
  o.detail = fmt::format("M=50: a=0 joint {:.4g} vs OLS {:.4g} (joint >= OLS); a=0.5 joint {:.4g} vs OLS {:.4g} "
                         "(joint <= OLS)",
                         j0, o0, jh, oh);
  o.csv = sweep_to_csv(r);
  o.budget = 600.0;
  return o;
}

Outcome lower_event() {
  Outcome o;
  SweepConfig c;
  c.d = 10;
  c.k_true = 3;
  c.T = 2000;
  c.M_list = {1};
  c.noise_variance = 1.0;
  c.seed = 606;
  int held = 0;
  o.csv = "replicate,lambda_min,lower_theory\n";
  for (int r = 0; r < 100; ++r) {
    const SweepCell cell = make_sweep_cell(c, 1, r);
    const CovarianceReport rep = covariance_report(cell.bundle, cell.ensemble, cell.bundle.noise(), 0.1, 0.0);
    const SystemCovariance& s = rep.systems[0];
    held += s.lambda_min >= c.T / 4.0 ? 1 : 0;
    o.csv += fmt::format("{},{},{}\n", r, g(s.lambda_min), g(s.lower_theory));
  }
  const double freq = held / 100.0;
  o.pass = freq >= 0.97;
  o.detail = fmt::format("lambda_min >= T/4 in {:.2f} of 100 replicates (>= 0.97)", freq);
  return o;
}

Outcome noise_events() {
  Outcome o;
  SweepConfig c;
  c.d = 10;
  c.k_true = 3;
  c.T = 100;
  c.M_list = {5};
  c.noise_variance = 1.0;
  c.seed = 707;
  std::vector<NoiseEvents> events;
  o.csv = "replicate,bounded,covariance,magnitude,total_noise_sq,magnitude_bound\n";
  for (int r = 0; r < 500; ++r) {
    const SweepCell cell = make_sweep_cell(c, 5, r);
    const TrajectoryBundle b = simulate_bundle(cell.ensemble, c.T, cell.bundle.noise(), std::nullopt,
                                               derive_seed(c.seed, "events", {static_cast<std::uint64_t>(r)}), true);
    const NoiseEvents e = noise_event_check(b, 0.1);
    events.push_back(e);
    o.csv += fmt::format("{},{},{},{},{},{}\n", r, int(e.bounded), int(e.covariance), int(e.magnitude),
                         g(e.total_noise_sq), g(e.magnitude_bound));
  }
  const EventFrequencies f = event_frequencies(events);
  o.pass = f.bounded >= 0.88 && f.magnitude >= 0.88;
  o.detail = fmt::format("E_bdd {:.3f} (>= 0.88), E_Z {:.3f} (>= 0.88), E_eta {:.3f} (reported)", f.bounded,
                         f.magnitude, f.covariance);
  return o;
}

Outcome growth_law() {
  Outcome o;
  const int d = 8, T = 500;
  std::vector<GrowthProfile> profiles;
  bool slopes_ok = true;
  std::string slopes;
  for (int l : {2, 4}) {
    profiles.push_back(state_growth_profile(JordanSpec::uniform(d, l, 1.0), T, NoiseModel::isotropic(d, 0.0),
                                            808, Vector::Unit(d, d - 1)));
    const double s = growth_slope(profiles.back(), T / 2, T);
    slopes_ok = slopes_ok && std::abs(s - (l - 1)) <= 0.2;
    slopes += fmt::format("{}l={}: {:.4f}", slopes.empty() ? "" : ", ", l, s);
  }
  const bool increasing = *profiles[1].points.back().log_norm > *profiles[0].points.back().log_norm;
  o.pass = slopes_ok && increasing;
  o.detail = fmt::format("slopes {} (within 0.2 of l-1); terminal magnitudes increasing: {}", slopes,
                         increasing ? "yes" : "no");
  o.csv = growth_to_csv(profiles);
  return o;
}

Outcome model_selection() {
  Outcome o;
  SelectionExperimentConfig c;
  c.d = 10;
  c.k_true = 3;
  c.T = 120;
  c.M = 30;
  c.k_grid = {1, 2, 3, 4, 5, 6, 7, 8};
  c.replicates = 10;
  c.noise_variance = 1.0;
  c.seed = 909;
  const std::vector<SelectionRun> runs = run_selection_experiment(c);
  int in_range = 0;
  bool never_below = true;
  std::string chosen;
  for (const auto& r : runs) {
    in_range += (r.k_chosen == 3 || r.k_chosen == 4) ? 1 : 0;
    double best = std::numeric_limits<double>::infinity(), at_true = 0.0;
    for (const auto& p : r.curve) {
      best = std::min(best, p.validation_error);
      if (p.k == 3) at_true = p.validation_error;
    }
    if (at_true < 1.05 * best && r.k_chosen < 3) never_below = false;
    chosen += fmt::format("{}{}", chosen.empty() ? "" : " ", r.k_chosen);
  }
  o.pass = in_range >= 8 && never_below;
  o.detail = fmt::format("k_chosen per run [{}]; {} of 10 in {{3,4}} (>= 8); never below 3 when k_true is "
                         "within 5% of the minimum: {}",
                         chosen, in_range, never_below ? "yes" : "no");
  o.csv = selection_to_csv(runs);
  return o;
}

using Criterion = std::function<Outcome()>;

std::vector<Outcome> run_all(const std::vector<Criterion>& criteria, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<Outcome> out;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i]();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = fmt::format("threw: {}", e.what());
    }
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_text_file(dir / fmt::format("criterion_{}.csv", i + 1), o.csv);
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "jointlti_acceptance";
  const std::vector<Criterion> criteria{noiseless_recovery, als_monotonicity, saturation,
                                        joint_vs_individual, misspecification, lower_event,
                                        noise_events,       growth_law,        model_selection};

  const std::vector<Outcome> first = run_all(criteria, root / "run1");
  bool all = true;
  for (std::size_t i = 0; i < first.size(); ++i) {
    const Outcome& o = first[i];
    const bool in_time = o.budget == 0.0 || o.seconds < o.budget;
    const bool pass = o.pass && in_time;
    all = all && pass;
    const std::string timing =
        o.budget > 0.0 ? fmt::format("{:.2f}s, limit {:.0f}s", o.seconds, o.budget) : fmt::format("{:.2f}s", o.seconds);
    fmt::print("{} criterion {}: {} [{}]\n", pass ? "PASS" : "FAIL", i + 1, o.detail, timing);
    std::fflush(stdout);
  }

  const std::vector<Outcome> second = run_all(criteria, root / "run2");
  std::vector<int> differing;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto name = fmt::format("criterion_{}.csv", i + 1);
    if (read_text_file(root / "run1" / name) != read_text_file(root / "run2" / name))
      differing.push_back(static_cast<int>(i) + 1);
  }
  const bool det = differing.empty();
  all = all && det;
  fmt::print("{} criterion 10: rerun of criteria 1-9 gives byte-identical CSV outputs{}\n", det ? "PASS" : "FAIL",
             det ? "" : fmt::format(" (differs: {})", fmt::join(differing, ", ")));
  return all ? 0 : 1;
}

#include "jointlti/diagnostics.hpp"
#include "jointlti/error.hpp"
#include "jointlti/experiments.hpp"
#include "jointlti/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <regex>
#include <sstream>

using namespace jointlti;
namespace fs = std::filesystem;

namespace {

SweepConfig desk_config() {
  SweepConfig c;
  c.d = 10;
  c.k_true = 3;
  c.T = 100;
  c.M_list = {1, 5, 25, 50};
  c.noise_variance = 1.0;
  c.replicates = 10;
  c.seed = 2024;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "jointlti_experiments_test";
  fs::create_directories(dir);
  return dir / name;
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("sweep config validation") {
  SweepConfig c;
  CHECK_NOTHROW(c.validate());
  c.M_list = {5, 1};
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = SweepConfig{};
  c.M_list = {};
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = SweepConfig{};
  c.replicates = 0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = SweepConfig{};
  c.k_fit = 626;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  CHECK(regime_from_string("stable") == RegimeKind::stable_range);
  CHECK(regime_from_string("unit_root") == RegimeKind::unit_root);
  CHECK_THROWS_AS(regime_from_string("wild"), ArgumentError);
}

TEST_CASE("one row per (M, method) cell") {
  SweepConfig c;
  c.d = 4;
  c.k_true = 2;
  c.T = 30;
  c.replicates = 2;
  const SweepResult r = run_sweep(c);
  REQUIRE(r.rows.size() == 12);
  for (int M : c.M_list) {
    REQUIRE(r.find(M, "joint") != nullptr);
    REQUIRE(r.find(M, "ols") != nullptr);
    CHECK(r.find(M, "joint")->std_error >= 0.0);
    CHECK(r.find(M, "joint")->regime == "stable");
    CHECK_FALSE(r.find(M, "joint")->a.has_value());
  }
}

TEST_CASE("saturated single-system sweep matches OLS") {
  SweepConfig c;
  c.d = 3;
  c.k_true = 2;
  c.k_fit = 9;
  c.T = 60;
  c.M_list = {1};
  c.replicates = 3;
  c.fit.ridge = 0.0;
  c.fit.tol = 1e-14;
  c.fit.max_iters = 5000;
  const SweepResult r = run_sweep(c);
  CHECK(std::abs(r.find(1, "joint")->mean_error - r.find(1, "ols")->mean_error) <= 1e-6);
}

TEST_CASE("cells with larger M extend smaller ones") {
  const SweepConfig c = desk_config();
  const SweepCell small = make_sweep_cell(c, 5, 3);
  const SweepCell large = make_sweep_cell(c, 25, 3);
  for (Index m = 0; m < 5; ++m) {
    CHECK(small.ensemble.A(m) == large.ensemble.A(m));
    CHECK(small.bundle[m].states == large.bundle[m].states);
  }
  // Radii land in the configured range.
  for (Index m = 0; m < 25; ++m) {
    Eigen::EigenSolver<Matrix> es(large.ensemble.A(m), false);
    const double rho = es.eigenvalues().cwiseAbs().maxCoeff();
    CHECK(rho >= 0.7 - 1e-8);
    CHECK(rho <= 0.9 + 1e-8);
  }
}

TEST_CASE("paired fits share the bundle") {
  const SweepConfig c = desk_config();
  const SweepCell cell = make_sweep_cell(c, 5, 1);
  FitConfig fit = c.fit;
  fit.init_seed = derive_seed(c.fit.init_seed, "sweep-init", {1, 5});
  const double joint = estimation_error(joint_fit(cell.bundle, 3, fit).A_hat, cell.ensemble).mean;
  const double ols = estimation_error(ols_fit(cell.bundle).A_hat, cell.ensemble).mean;
  const CellErrors e = evaluate_sweep_cell(c, 5, 1);
  CHECK(e.joint == joint);
  CHECK(e.ols == ols);
}

TEST_CASE("desk-scale stable sweep shape") {
  const SweepConfig c = desk_config();
  const SweepResult r = run_sweep(c);
  double prev = std::numeric_limits<double>::infinity();
  double ols_lo = std::numeric_limits<double>::infinity(), ols_hi = 0.0;
  for (int M : c.M_list) {
    const double j = r.find(M, "joint")->mean_error;
    CHECK(j < prev);
    prev = j;
    ols_lo = std::min(ols_lo, r.find(M, "ols")->mean_error);
    ols_hi = std::max(ols_hi, r.find(M, "ols")->mean_error);
  }
  CHECK((ols_hi - ols_lo) / ols_lo < 0.2);

  // Floor: doubling M once more does not cut the joint error by 10x.
  SweepConfig more = c;
  more.M_list = {50, 100};
  more.replicates = 3;
  const SweepResult f = run_sweep(more);
  CHECK(f.find(100, "joint")->mean_error >= 0.1 * f.find(50, "joint")->mean_error);
}

TEST_CASE("sweeps are deterministic and independent of the thread count") {
  SweepConfig c = desk_config();
  c.M_list = {1, 5, 10};
  c.replicates = 3;
  const SweepResult a = run_sweep(c);
  const SweepResult b = run_sweep(c);
  CHECK(sweep_to_csv(a) == sweep_to_csv(b));
  c.jobs = 3;
  CHECK(sweep_to_csv(run_sweep(c)) == sweep_to_csv(a));
}

TEST_CASE("sweep errors carry the cell") {
  SweepConfig c;
  c.d = 5;
  c.k_true = 2;
  c.T = 3;
  c.M_list = {1};
  c.replicates = 1;
  c.fit.ridge = 0.0;
  try {
    run_sweep(c);
    FAIL("expected a rank-deficient OLS fit");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("M=1, replicate=0") != std::string::npos);
  }
}

TEST_CASE("misspecification grid") {
  SweepConfig c = desk_config();
  c.M_list = {5, 10};
  c.replicates = 2;
  c.misspec = MisspecConfig{0.0, 0.0};
  const std::vector<double> a_list{0.0, 0.5};
  const SweepResult zero = run_misspec_grid(c, a_list);
  REQUIRE(zero.rows.size() == 8);
  SweepConfig plain = c;
  plain.misspec.reset();
  const SweepResult base = run_sweep(plain);
  for (const auto& row : base.rows) {
    for (double a : a_list) {
      const SweepRow* tagged = zero.find(row.M, row.method, a);
      REQUIRE(tagged != nullptr);
      CHECK(tagged->mean_error == row.mean_error);
      CHECK(tagged->std_error == row.std_error);
    }
  }
  SweepConfig none = c;
  none.misspec.reset();
  CHECK_THROWS_AS(run_misspec_grid(none, a_list), ArgumentError);
}

TEST_CASE("misspecified cells carry D on top of the rescaled systems") {
  SweepConfig c = desk_config();
  c.misspec = MisspecConfig{0.0, 1.0};
  const SweepCell cell = make_sweep_cell(c, 6, 0);
  REQUIRE(cell.ensemble.misspecification().has_value());
  CHECK(cell.ensemble.misspecification()->affected_count() == 6);
  SweepConfig clean = c;
  clean.misspec.reset();
  const SweepCell base = make_sweep_cell(clean, 6, 0);
  for (Index m = 0; m < 6; ++m)
    CHECK((cell.ensemble.A(m) - base.ensemble.A(m) - (*cell.ensemble.misspecification())[m]).norm() <= 1e-12);
}

TEST_CASE("growth profile examples") {
  {
    JordanSpec spec{{{1.0, 1}, {1.0, 1}, {1.0, 1}}, 1.0};
    const GrowthProfile p = state_growth_profile(spec, 50, NoiseModel::isotropic(3, 0.0), 1, Vector::Unit(3, 0));
    REQUIRE(p.points.size() == 51);
    for (const auto& pt : p.points) CHECK(std::abs(*pt.log_norm) <= 1e-12);
  }
  {
    JordanSpec spec{{{1.0, 2}}, 1.0, false};
    const GrowthProfile p = state_growth_profile(spec, 400, NoiseModel::isotropic(2, 0.0), 1, Vector::Unit(2, 1));
    for (const auto& pt : p.points) {
      const double t = pt.t;
      CHECK(*pt.log_norm == doctest::Approx(std::log(std::sqrt(t * t + 1.0))).epsilon(1e-12));
    }
    CHECK(growth_slope(p, 200, 400) == doctest::Approx(1.0).epsilon(1e-3));
  }
  {
    double prev = -std::numeric_limits<double>::infinity();
    for (int l : {2, 4, 8, 16}) {
      const GrowthProfile p =
          state_growth_profile(JordanSpec::uniform(32, l, 0.99), 300, NoiseModel::isotropic(32, 1.0), 7);
      const double terminal = *p.points.back().log_norm;
      CHECK(terminal > prev);
      prev = terminal;
    }
  }
  {
    const GrowthProfile p = state_growth_profile(JordanSpec::uniform(2, 1, 0.5), 10, NoiseModel::isotropic(2, 0.0), 0);
    CHECK_FALSE(p.points.front().log_norm.has_value());
    CHECK_THROWS_AS(state_growth_profile(JordanSpec::uniform(2, 1, 0.5), 9, NoiseModel::isotropic(2, 0.0), 0),
                    ArgumentError);
  }
}

TEST_CASE("selection experiment on noiseless data") {
  SelectionExperimentConfig c;
  c.d = 4;
  c.k_true = 2;
  c.T = 40;
  c.M = 10;
  c.k_grid = {1, 2, 3, 4};
  c.replicates = 3;
  c.noise_variance = 0.0;
  c.x0_scale = 1.0;
  const auto runs = run_selection_experiment(c);
  REQUIRE(runs.size() == 3);
  for (const auto& r : runs) {
    CHECK(r.k_chosen == 2);
    CHECK(r.curve.size() == 4);
    CHECK(r.estimation_error.size() == 4);
  }
}

TEST_CASE("sweep CSV export and round trips") {
  SweepResult r;
  for (int M : {1, 10, 20, 50, 100, 200})
    for (const char* method : {"joint", "ols"})
      r.rows.push_back(SweepRow{M, method, "stable", std::nullopt, 0.1 * M + 1.0 / 3.0, 0.2 / 7.0, 10});
  r.rows[3].a = 0.25;
  const std::string csv = sweep_to_csv(r);
  CHECK(count_lines(csv) == 13);
  CHECK(csv.substr(0, csv.find('\n')) == "M,method,regime,a,mean_error,std_error,replicates");
  CHECK(sweep_from_csv(csv) == r);

  const fs::path csv_path = scratch("rt.csv");
  const fs::path json_path = scratch("rt.json");
  export_sweep(r, csv_path, "csv");
  export_sweep(r, json_path, "json");
  CHECK(import_sweep(csv_path) == r);
  CHECK(import_sweep(json_path) == r);
  CHECK_THROWS_AS(export_sweep(r, scratch("x.bin"), "bin"), ArgumentError);
  CHECK_THROWS_AS(export_sweep(r, fs::path("/nonexistent-dir/x.csv"), "csv"), IoError);
  CHECK_THROWS_AS(sweep_from_csv("bad header\n"), IoError);
}

TEST_CASE("growth plot holds every sample") {
  JordanSpec spec{{{1.0, 2}}, 1.0, false};
  const GrowthProfile p = state_growth_profile(spec, 199, NoiseModel::isotropic(2, 0.0), 1, Vector::Unit(2, 1));
  REQUIRE(p.points.size() == 200);
  const fs::path path = scratch("growth.svg");
  const std::vector<GrowthProfile> profiles{p};
  render_growth_plot(profiles, path);
  const std::string svg = read_text_file(path);
  const std::regex poly("<polyline class=\"series\"[^>]*points=\"([^\"]*)\"");
  std::smatch m;
  REQUIRE(std::regex_search(svg, m, poly));
  std::istringstream pts(m[1].str());
  std::string pair;
  std::size_t n = 0;
  while (pts >> pair) n += pair.find(',') != std::string::npos;
  CHECK(n == 200);
}

TEST_CASE("sweep and selection plots render") {
  SweepResult r;
  for (int M : {1, 10})
    for (const char* method : {"joint", "ols"}) r.rows.push_back(SweepRow{M, method, "stable", 0.5, 1.0 / M, 0.1, 3});
  const fs::path path = scratch("sweep.svg");
  render_sweep_plot(r, path);
  const std::string svg = read_text_file(path);
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("data-label=\"joint (a=0.5)\"") != std::string::npos);
  CHECK(svg.find("class=\"errorbar\"") != std::string::npos);
  CHECK_THROWS_AS(render_sweep_plot(SweepResult{}, path), ArgumentError);
}

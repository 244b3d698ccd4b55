// Command-line runner for the intersection local time lab.
//
//   fraclt <command> [--spec n1,n2,a1,a2,d] [--seed S] [--out DIR] ...
//
// Every run writes CSV data, summary.json and run.json into
// <out>/<command>-<config hash>. Exit status: 0 all checks pass, 1 a check
// failed, 2 usage or configuration error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fraclt/experiment.hpp"
#include "fraclt/fbm_sim.hpp"
#include "fraclt/fractal.hpp"
#include "fraclt/io.hpp"
#include "fraclt/localtime.hpp"
#include "fraclt/parallel.hpp"
#include "fraclt/regime.hpp"
#include "fraclt/verify.hpp"

namespace {

using namespace fraclt;
namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kExitPass = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

/// Small grids also get a CSV copy of the simulated field.
constexpr std::size_t kCsvPointLimit = 1 << 16;

struct Run {
  ExperimentConfig cfg;
  ProblemSpec spec;
  fs::path dir;
  json summary = json::object();
  std::vector<Verdict> verdicts;

  double tol(const std::string& key) const { return cfg.tolerances.at(key); }
};

void run_regime(Run& run) {
  const RegimeReport rep = classify(run.spec);
  run.summary = {{"spec", to_json(run.spec)}, {"regime", to_json(rep)}};
  auto cell = [](const auto& v) { return v ? format_double(static_cast<double>(*v)) : std::string("undefined"); };
  CsvTable t({"exists", "critical", "log_case", "scaling_exponent", "tau", "beta_tau", "eta_tau", "dim_m2", "dim_d2",
              "dim_d2_case"});
  t.add({rep.exists ? "true" : "false", rep.critical ? "true" : "false", rep.log_case ? "true" : "false",
         format_double(rep.scaling_exponent), rep.tau ? std::to_string(*rep.tau) : "undefined", cell(rep.beta_tau),
         cell(rep.eta_tau), cell(rep.dim_m2), cell(rep.dim_d2),
         rep.dim_d2_case ? std::to_string(*rep.dim_d2_case) : "undefined"});
  t.write((run.dir / "regime.csv").string());
}

void run_simulate(Run& run) {
  const double extent = *run.cfg.radius;
  const GridSpec g1 = GridSpec::uniform(std::vector<int>(run.spec.n1(), run.cfg.grid[0]), Vec(run.spec.n1(), extent));
  const GridSpec g2 = GridSpec::uniform(std::vector<int>(run.spec.n2(), run.cfg.grid[1]), Vec(run.spec.n2(), extent));
  const DifferenceSample s = sample_difference_field(run.spec, g1, g2, run.cfg.seed);
  json fields = json::array();
  for (const auto& [name, f] : {std::pair{"field1", &s.first}, std::pair{"field2", &s.second}}) {
    write_field_sample(*f, (run.dir / name).string());
    const bool csv = f->points() <= kCsvPointLimit;
    if (csv) to_csv(*f).write((run.dir / (std::string(name) + ".csv")).string());
    fields.push_back({{"name", name}, {"points", f->points()}, {"method", to_string(f->method)},
                      {"jitter", f->jitter}, {"csv", csv}});
  }
  run.summary = {{"spec", to_json(run.spec)}, {"fields", fields}};
}

void run_sweep(Run& run) {
  const double R = *run.cfg.radius;
  const std::vector<double> grid = geometric_grid(*run.cfg.eps_min, *run.cfg.eps_max, *run.cfg.eps_points);
  const int reps = *run.cfg.replications;
  const int resolution = run.cfg.grid[0];
  const RegimeReport rep = classify(run.spec);

  std::vector<double> eps = grid;
  std::sort(eps.begin(), eps.end(), std::greater<>());
  std::vector<double> values, errors;
  std::vector<std::string> cols{"epsilon", "mean_quad", "quad_abs_error"};
  if (reps > 0) cols.insert(cols.end(), {"mc_mean", "mc_std_error", "riemann_mean"});
  CsvTable t(cols);
  for (std::size_t k = 0; k < eps.size(); ++k) {
    const MomentQuadResult q = mean_i_eps_quad(run.spec, R, eps[k]);
    values.push_back(q.value);
    errors.push_back(q.abs_error);
    std::vector<std::string> row{format_double(eps[k]), format_double(q.value), format_double(q.abs_error)};
    if (reps > 0) {
      const EpsilonEstimate mc = i_eps_mc(run.spec, R, eps[k], reps, derive_seed(run.cfg.seed, k), resolution);
      row.insert(row.end(), {format_double(mc.value), format_double(mc.std_error),
                             format_double(i_eps_riemann_mean(run.spec, R, eps[k], resolution))});
    }
    t.add(std::move(row));
  }
  t.write((run.dir / "sweep.csv").string());

  run.summary = {{"spec", to_json(run.spec)}, {"radius", R}};
  if (eps.size() < 8) {
    run.summary["classification"] = "not attempted (needs >= 8 epsilon values)";
    return;
  }
  const SweepResult s = classify_sweep(eps, values);
  json models = json::array();
  for (const auto& m : s.models)
    models.push_back({{"name", m.name}, {"a", m.a}, {"b", m.b}, {"c", m.c}, {"rss", m.rss}, {"bic", m.bic},
                      {"feasible", m.feasible}});
  const SweepClass expected =
      rep.exists ? SweepClass::convergent : (rep.critical ? SweepClass::log_divergent : SweepClass::power_divergent);
  run.summary["classification"] = to_string(s.classification);
  run.summary["expected"] = to_string(expected);
  run.summary["fitted_slope"] = s.fitted_slope;
  run.summary["fit_r2"] = s.fit_r2;
  run.summary["models"] = models;

  Verdict v{"classification matches the existence regime", s.classification == expected ? 1.0 : 0.0, 1.0};
  v.passed = s.classification == expected;
  v.detail = {{"observed", to_string(s.classification)}, {"expected", to_string(expected)}};
  run.verdicts.push_back(v);
  if (expected == SweepClass::log_divergent) {
    Verdict r{"log fit r2", s.fit_r2, run.tol("log_r2")};
    r.passed = s.fit_r2 >= r.threshold;
    run.verdicts.push_back(r);
  } else if (expected == SweepClass::power_divergent) {
    const double target = -0.5 * rep.scaling_exponent;
    Verdict r{"divergence exponent", std::abs(s.fitted_slope - target), run.tol("exponent")};
    r.passed = r.value <= r.threshold;
    r.detail = {{"fitted", s.fitted_slope}, {"expected", target}};
    run.verdicts.push_back(r);
  }
}

void run_moment_fit(Run& run) {
  const RegimeReport rep = classify(run.spec);
  const RadiusFit fit =
      first_moment_radius_fit(run.spec, geometric_grid(*run.cfg.r_min, *run.cfg.r_max, *run.cfg.r_points));
  CsvTable t({"radius", "mean_localtime"});
  for (std::size_t k = 0; k < fit.radii.size(); ++k) t.row(fit.radii[k], fit.means[k]);
  t.write((run.dir / "moment.csv").string());
  run.summary = {{"spec", to_json(run.spec)}, {"slope", fit.slope}, {"r2", fit.r2}, {"beta_tau", *rep.beta_tau}};
  Verdict v{"log-log slope against beta_tau", std::abs(fit.slope - *rep.beta_tau), run.tol("slope")};
  v.passed = v.value <= v.threshold;
  v.detail = {{"slope", fit.slope}, {"beta_tau", *rep.beta_tau}};
  run.verdicts.push_back(v);
}

void run_scaling(Run& run) {
  CsvTable t({"c", "relative_error"});
  double worst = 0.0;
  for (double c : run.cfg.scales) {
    const double e = scaling_check(run.spec, *run.cfg.radius, c);
    worst = std::max(worst, e);
    t.row(c, e);
  }
  t.write((run.dir / "scaling.csv").string());
  run.summary = {{"spec", to_json(run.spec)}, {"radius", *run.cfg.radius}, {"max_relative_error", worst},
                 {"scaling_exponent", run.spec.scaling_exponent()}};
  Verdict v{"scaling law relative error", worst, run.tol("relative")};
  v.passed = worst <= v.threshold;
  run.verdicts.push_back(v);
}

void run_dimension(Run& run, bool points_in_space) {
  CloudOptions opt;
  opt.count1 = run.cfg.grid[0];
  opt.count2 = run.cfg.grid[1];
  opt.kappa = *run.cfg.kappa;
  opt.pair_cap = *run.cfg.pair_cap;
  const int reps = *run.cfg.replications;
  const DimEstimate e = points_in_space ? estimate_dim_d2(run.spec, opt, run.cfg.seed, reps)
                                        : estimate_dim_m2(run.spec, opt, run.cfg.seed, reps);

  CsvTable clouds({"replication", "cloud_size"});
  for (std::size_t r = 0; r < e.cloud_sizes.size(); ++r) clouds.row(r, e.cloud_sizes[r]);
  clouds.write((run.dir / "replications.csv").string());
  CsvTable fits({"fit", "fitted_dim", "fit_r2", "window_first", "window_last", "low_confidence"});
  CsvTable boxes({"fit", "scale", "count", "in_window"});
  for (std::size_t f = 0; f < e.fits.size(); ++f) {
    const BoxCountResult& b = e.fits[f];
    fits.row(f, b.fitted_dim, b.fit_r2, b.window_first, b.window_last, b.low_confidence);
    for (std::size_t k = 0; k < b.scales.size(); ++k)
      boxes.row(f, b.scales[k], b.counts[k], k >= b.window_first && k <= b.window_last);
  }
  fits.write((run.dir / "fits.csv").string());
  boxes.write((run.dir / "boxcounts.csv").string());

  run.summary = {{"spec", to_json(run.spec)}, {"formula", e.formula}, {"median", e.median}, {"q25", e.q25},
                 {"q75", e.q75}, {"iqr", e.iqr()}, {"delta", e.delta}, {"skipped", e.skipped},
                 {"fits", e.fits.size()}};
  Verdict v{points_in_space ? "intersection-point dimension" : "intersection-time dimension",
            std::abs(e.median - e.formula), run.tol("dimension")};
  v.passed = v.value <= v.threshold;
  v.detail = {{"median", e.median}, {"formula", e.formula}};
  run.verdicts.push_back(v);
}

void run_verify(Run& run) {
  BatteryOptions opt;
  opt.seed = run.cfg.seed;
  opt.detcov_tolerance = run.tol("detcov");
  opt.moment_tolerance = run.tol("moment_identity");
  run.verdicts = full_battery(opt);
  CsvTable t({"check", "value", "threshold", "passed"});
  json checks = json::array();
  for (const auto& v : run.verdicts) {
    t.row(v.name, v.value, v.threshold, v.passed);
    checks.push_back(to_json(v));
  }
  t.write((run.dir / "verify.csv").string());
  run.summary = {{"checks", checks}};
}

RunRecord execute(const ExperimentConfig& resolved, bool overwrite) {
  const auto start = std::chrono::steady_clock::now();
  Run run;
  run.cfg = resolved;
  if (!resolved.spec.empty()) run.spec = ProblemSpec::parse(resolved.spec);
  run.dir = prepare_run_directory(resolved, overwrite);
  write_json(run.dir / "config.json", to_json(resolved));

  const std::string& cmd = resolved.command;
  if (cmd == "regime") run_regime(run);
  else if (cmd == "simulate") run_simulate(run);
  else if (cmd == "iepsilon-sweep") run_sweep(run);
  else if (cmd == "moment-fit") run_moment_fit(run);
  else if (cmd == "scaling-check") run_scaling(run);
  else if (cmd == "dim-m2") run_dimension(run, false);
  else if (cmd == "dim-d2") run_dimension(run, true);
  else run_verify(run);

  json verdicts = json::array();
  for (const auto& v : run.verdicts) verdicts.push_back(to_json(v));
  run.summary["verdicts"] = verdicts;
  write_json(run.dir / "summary.json", run.summary);

  RunRecord rec;
  rec.config = resolved;
  rec.threads = thread_count();
  rec.verdicts = run.verdicts;
  rec.directory = run.dir;
  rec.files = manifest(run.dir, "run.json");
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_json(run.dir / "run.json", to_json(rec));
  if (cmd == "regime") std::cout << run.summary.dump(2) << '\n';
  return rec;
}

void print_error(const json& j) { std::cerr << j.dump() << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Intersection local times of two independent multiparameter fractional Brownian motions"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, spec, out;
  std::uint64_t seed = 1;
  int replications = 0, eps_points = 0, r_points = 0, threads = 0;
  std::vector<int> grid;
  std::vector<double> scales;
  double eps_min = 0, eps_max = 0, radius = 0, r_min = 0, r_max = 0, kappa = 0;
  std::uint64_t pair_cap = 0;
  bool overwrite = false;

  app.add_option("--config", config_path, "JSON config file; flags override its fields")->check(CLI::ExistingFile);
  auto* o_spec = app.add_option("--spec", spec, "problem spec n1,n2,alpha1,alpha2,d (Hurst indices may be a/b)");
  auto* o_seed = app.add_option("--seed", seed, "master seed");
  auto* o_out = app.add_option("--out", out, "output root (default runs)");
  auto* o_reps = app.add_option("--replications", replications, "independent replications");
  auto* o_grid = app.add_option("--grid", grid, "nodes per axis, one value or first,second")->delimiter(',');
  auto* o_emin = app.add_option("--eps-min", eps_min, "smallest epsilon");
  auto* o_emax = app.add_option("--eps-max", eps_max, "largest epsilon");
  auto* o_epts = app.add_option("--eps-points", eps_points, "number of epsilon values (geometric)");
  auto* o_rad = app.add_option("--radius", radius, "ball radius, or simulation extent");
  auto* o_rmin = app.add_option("--r-min", r_min, "smallest radius for moment-fit");
  auto* o_rmax = app.add_option("--r-max", r_max, "largest radius for moment-fit");
  auto* o_rpts = app.add_option("--r-points", r_points, "number of radii for moment-fit");
  auto* o_scales = app.add_option("--scales", scales, "dilation factors for scaling-check")->delimiter(',');
  auto* o_kappa = app.add_option("--kappa", kappa, "threshold multiplier for near-intersections");
  auto* o_cap = app.add_option("--pair-cap", pair_cap, "largest nominal product grid for dimension runs");
  app.add_option("--threads", threads, "worker threads (default: FRACLT_THREADS, then hardware)");
  app.add_flag("--overwrite", overwrite, "replace an existing run directory");

  const std::vector<std::pair<std::string, std::string>> commands{
      {"regime", "print the regime constants of a spec"},
      {"simulate", "sample both fields on uniform grids"},
      {"iepsilon-sweep", "mean of the smoothed functional across epsilon, with classification"},
      {"moment-fit", "log-log slope of the first moment against the ball radius"},
      {"scaling-check", "operator-scaling law of the first moment"},
      {"dim-m2", "box dimension of the intersection-time set"},
      {"dim-d2", "box dimension of the intersection-point set"},
      {"verify", "identity and integral-bound battery"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitPass : kExitUsage;
  }

  try {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : read_config(config_path);
    const std::string command = app.get_subcommands().front()->get_name();
    if (!cfg.command.empty() && cfg.command != command)
      throw ConfigError("command", "config file is for '" + cfg.command + "', not '" + command + "'");
    cfg.command = command;
    if (*o_spec) cfg.spec = spec;
    if (*o_seed) cfg.seed = seed;
    if (*o_out) cfg.out = out;
    if (*o_reps) cfg.replications = replications;
    if (*o_grid) cfg.grid = grid;
    if (*o_emin) cfg.eps_min = eps_min;
    if (*o_emax) cfg.eps_max = eps_max;
    if (*o_epts) cfg.eps_points = eps_points;
    if (*o_rad) cfg.radius = radius;
    if (*o_rmin) cfg.r_min = r_min;
    if (*o_rmax) cfg.r_max = r_max;
    if (*o_rpts) cfg.r_points = r_points;
    if (*o_scales) cfg.scales = scales;
    if (*o_kappa) cfg.kappa = kappa;
    if (*o_cap) cfg.pair_cap = pair_cap;
    if (threads > 0) set_thread_count(threads);

    const RunRecord rec = execute(resolve(cfg), overwrite);
    std::cerr << "run directory: " << rec.directory.string() << '\n';
    for (const auto& v : rec.verdicts)
      std::cerr << (v.passed ? "[PASS] " : "[FAIL] ") << v.name << ": " << format_double(v.value) << " (threshold "
                << format_double(v.threshold) << ")\n";
    return rec.passed() ? kExitPass : kExitCheckFailed;
  } catch (const ConfigError& e) {
    print_error(e.diagnostics());
    return kExitUsage;
  } catch (const std::exception& e) {
    print_error({{"error", "run failed"}, {"command", app.get_subcommands().front()->get_name()}, {"message", e.what()}});
    return kExitUsage;
  }
}

// Full-scale acceptance run: one PASS/FAIL line per criterion, exit status 1
// if any criterion fails.
#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fraclt/fractal.hpp"
#include "fraclt/localtime.hpp"
#include "fraclt/verify.hpp"

using namespace fraclt;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    passed = passed && ok;
    notes.push_back((ok ? "ok   " : "FAIL ") + what);
  }
};

std::string fmt(const char* f, auto... args) {
  std::array<char, 512> buf;
  std::snprintf(buf.data(), buf.size(), f, args...);
  return buf.data();
}

// ---------------------------------------------------------------------------

Outcome identities() {
  Outcome o;
  BatteryOptions opt;
  opt.identity_configs = 100;
  for (const Verdict& v : identity_battery(opt))
    o.check(v.passed, fmt("%s: %.3g (threshold %.3g)", v.name.c_str(), v.value, v.threshold));
  return o;
}

Outcome simulation_law() {
  Outcome o;
  constexpr int kReps = 10000;
  const GridSpec g = GridSpec::uniform({9}, {2.0});
  for (double gamma : {0.3, 0.5, 0.8}) {
    const FbmSpec spec = FbmSpec::make(gamma, 1, 1);
    for (std::size_t node : {1u, 2u, 4u, 6u, 8u}) {
      std::vector<double> sq(kReps);
      for (int r = 0; r < kReps; ++r) {
        const double x = sample_field(spec, g, derive_seed(17, r), SamplerChoice::cholesky).at(node, 0);
        sq[r] = x * x;
      }
      const double target = std::pow(g.point(node)[0], 2 * gamma);
      const double dev = std::abs(mean(sq) - target) / std_error(sq);
      o.check(dev <= 3.0, fmt("variance gamma=%.1f u=%.2f: %.2f SE", gamma, g.point(node)[0], dev));
    }
  }
  const GridSpec line = GridSpec::uniform({33}, {1.0});
  for (double gamma : {0.3, 0.5, 0.8}) {
    const FbmSpec spec = FbmSpec::make(gamma, 1, 1);
    std::vector<double> fast(kReps), exact(kReps);
    for (int r = 0; r < kReps; ++r) {
      fast[r] = sample_field(spec, line, derive_seed(31, r), SamplerChoice::fast1d).at(32, 0);
      exact[r] = sample_field(spec, line, derive_seed(37, r), SamplerChoice::cholesky).at(32, 0);
    }
    const double ks = ks_two_sample(fast, exact).statistic;
    o.check(ks <= 0.02, fmt("fast vs exact sampler, gamma=%.1f: KS %.4f (threshold 0.02)", gamma, ks));
  }
  return o;
}

Outcome existence_threshold() {
  Outcome o;
  const auto grid = geometric_grid(1e-8, 1e-2, 13);
  const SweepResult conv = epsilon_sweep(ProblemSpec::parse("1,1,1/2,1/2,3"), 1.0, grid);
  o.check(conv.classification == SweepClass::convergent, fmt("d=3 classified %s", to_string(conv.classification)));
  const SweepResult crit = epsilon_sweep(ProblemSpec::parse("1,1,1/2,1/2,4"), 1.0, grid);
  const double r2 = log_fit(crit).r2;
  o.check(crit.classification == SweepClass::log_divergent, fmt("d=4 classified %s", to_string(crit.classification)));
  o.check(r2 >= 0.99, fmt("d=4 log(1/eps) fit r2 %.5f (threshold 0.99)", r2));
  const SweepResult sub = epsilon_sweep(ProblemSpec::parse("1,1,1/2,1/2,5"), 1.0, grid);
  o.check(sub.classification == SweepClass::power_divergent, fmt("d=5 classified %s", to_string(sub.classification)));
  o.check(std::abs(sub.fitted_slope - 0.5) <= 0.05, fmt("d=5 exponent %.4f (target 0.5 +- 0.05)", sub.fitted_slope));
  return o;
}

Outcome mc_vs_quadrature() {
  Outcome o;
  const ProblemSpec spec = ProblemSpec::parse("1,1,1/2,1/2,1");
  for (double eps : {0.1, 0.01}) {
    const EpsilonEstimate mc = i_eps_mc(spec, 1.0, eps, 64, 2024, 256);
    const MomentQuadResult q = mean_i_eps_quad(spec, 1.0, eps);
    const double se = std::hypot(mc.std_error, q.abs_error);
    const double dev = std::abs(mc.value - q.value) / se;
    o.check(dev <= 3.0, fmt("eps=%g: mc %.5f +- %.5f, quadrature %.6f, %.2f combined SE", eps, mc.value,
                            mc.std_error, q.value, dev));
  }
  return o;
}

Outcome scaling() {
  Outcome o;
  for (const char* s : {"1,1,0.5,0.5,1", "1,1,0.6,0.6,2", "1,1,0.4,0.8,2"})
    for (double c : {2.0, 5.0}) {
      const ProblemSpec spec = ProblemSpec::parse(s);
      const double err = scaling_check(spec, 1.0, c);
      o.check(err <= 1e-3, fmt("(%s) tau=%d c=%g: relative error %.2e", s, classify(spec).tau, c, err));
    }
  return o;
}

Outcome radius_slopes() {
  Outcome o;
  for (const char* s : {"1,1,0.5,0.5,1", "1,1,0.6,0.6,2", "1,1,0.4,0.8,2"}) {
    const ProblemSpec spec = ProblemSpec::parse(s);
    const double beta = *classify(spec).beta_tau;
    const RadiusFit f = first_moment_radius_fit(spec);
    o.check(std::abs(f.slope - beta) <= 0.05, fmt("(%s) slope %.4f, exponent %.4f", s, f.slope, beta));
  }
  return o;
}

struct DimCase {
  const char* spec;
  int count1;
  int count2;
  double target;
  double tol;
};

Outcome dimensions(bool intersection_times, const std::vector<DimCase>& cases) {
  Outcome o;
  for (const DimCase& c : cases) {
    const ProblemSpec spec = ProblemSpec::parse(c.spec);
    CloudOptions opt;
    opt.count1 = c.count1;
    opt.count2 = c.count2;
    opt.pair_cap = std::size_t{1} << 40;
    const DimEstimate e =
        intersection_times ? estimate_dim_m2(spec, opt, 1, 8) : estimate_dim_d2(spec, opt, 1, 8);
    o.check(std::abs(e.formula - c.target) < 1e-12, fmt("(%s) formula %.4f", c.spec, e.formula));
    o.check(std::abs(e.median - c.target) <= c.tol,
            fmt("(%s) grid %dx%d: median %.4f, iqr [%.3f, %.3f], target %.4f +- %.2f, skipped %d", c.spec, c.count1,
                c.count2, e.median, e.q25, e.q75, c.target, c.tol, e.skipped));
  }
  return o;
}

Outcome integral_batteries() {
  Outcome o;
  BatteryOptions opt;
  opt.bounds.configs = 1000;
  for (const Verdict& v : radial_battery())
    o.check(v.passed, fmt("%s: drift %.2e", v.name.c_str(), v.value));
  for (const Verdict& v : nearest_point_battery(opt))
    o.check(v.passed, fmt("%s: trend vs n %.3f (threshold %.3f), %d configs", v.name.c_str(), v.value,
                          v.threshold, v.detail.at("configs").get<int>()));
  return o;
}

// ---------------------------------------------------------------------------
// Reproducibility through the command-line tool.

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FRACLT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> outputs_of(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& run : fs::directory_iterator(root))
    for (const auto& e : fs::directory_iterator(run.path()))
      if (e.path().extension() == ".csv" || e.path().extension() == ".bin") {
        std::ifstream f(e.path(), std::ios::binary);
        std::stringstream s;
        s << f.rdbuf();
        out[e.path().filename()] = s.str();
      }
  return out;
}

Outcome reproducibility() {
  Outcome o;
  const std::vector<std::string> jobs = {
      "simulate --spec 1,2,0.4,0.7,2 --seed 9",
      "iepsilon-sweep --spec 1,1,1/2,1/2,1 --eps-points 8 --eps-min 1e-4 --replications 8 --grid 32 --seed 3",
      "dim-m2 --spec 1,1,1/2,1/2,1 --grid 1024 --replications 4 --seed 5",
      "dim-d2 --spec 1,1,0.75,0.75,1 --grid 4097 --replications 2 --seed 5",
  };
  const fs::path root = fs::temp_directory_path() / "fraclt_acceptance_repro";
  for (const auto& job : jobs) {
    std::vector<std::map<std::string, std::string>> runs;
    bool ran = true;
    for (const char* threads : {"1", "1", "8"}) {
      fs::remove_all(root);
      const int code = run_cli(job + " --threads " + threads + " --out " + root.string());
      ran = ran && (code == 0 || code == 1);
      runs.push_back(ran ? outputs_of(root) : std::map<std::string, std::string>{});
    }
    fs::remove_all(root);
    const bool same = ran && !runs[0].empty() && runs[0] == runs[1] && runs[0] == runs[2];
    o.check(same, fmt("%s: %zu files identical over two runs and threads 1/8", job.c_str(), runs[0].size()));
  }
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"AC1 covariance identities", identities},
      {"AC2 simulation law", simulation_law},
      {"AC3 existence threshold", existence_threshold},
      {"AC4 Monte Carlo vs quadrature", mc_vs_quadrature},
      {"AC5 scaling law", scaling},
      {"AC6 first-moment exponent", radius_slopes},
      {"AC7 dimension of intersection times",
       [] {
         return dimensions(true, {{"1,1,0.5,0.5,1", 2048, 2048, 1.5, 0.15}, {"1,1,0.6,0.6,2", 65537, 65537, 0.8, 0.2}});
       }},
      {"AC8 dimension of intersection points",
       [] {
         return dimensions(false, {{"1,1,0.75,0.75,1", 16385, 16385, 1.0, 0.25},
                                   {"1,1,0.6,0.6,2", 262145, 262145, 4.0 / 3.0, 0.25},
                                   {"1,1,0.4,0.8,2", 4194305, 4097, 1.25, 0.25}});
       }},
      {"AC9 integral bounds", integral_batteries},
      {"AC10 reproducibility", reproducibility},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.check(false, std::string("threw: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %s (%.1f s)\n", o.passed ? "PASS" : "FAIL", name.c_str(), secs);
    for (const auto& n : o.notes) std::printf("    %s\n", n.c_str());
    std::fflush(stdout);
    failed += !o.passed;
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}

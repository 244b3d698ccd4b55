#pragma once

// The verification battery: exact Gaussian identities on random fBm
// configurations plus the integral bound checks. Each check reports one
// verdict; the CLI `verify` command and the acceptance driver share it.

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fraclt/gaussian.hpp"
#include "fraclt/integral_bounds.hpp"
#include "fraclt/rng.hpp"

namespace fraclt {

struct Verdict {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool passed = false;
  nlohmann::json detail = nlohmann::json::object();
};

inline nlohmann::json to_json(const Verdict& v) {
  return nlohmann::json{{"name", v.name}, {"value", v.value}, {"threshold", v.threshold},
                        {"passed", v.passed}, {"detail", v.detail}};
}

struct BatteryOptions {
  std::uint64_t seed = 1;
  int identity_configs = 100;
  int moment_configs_per_order = 4;
  double detcov_tolerance = 1e-8;
  double moment_tolerance = 0.01;
  RandomConfigOptions bounds;
};

namespace detail {

/// n points uniform in [0,1]^p with pairwise separation >= min_sep.
inline std::vector<Vec> separated_points(const RandomStream& rs, int p, std::size_t n, double min_sep) {
  std::vector<Vec> pts;
  std::uint64_t draw = 0;
  while (pts.size() < n) {
    Vec u(p);
    for (int k = 0; k < p; ++k) u[k] = rs.uniform(draw++);
    bool ok = norm(u) >= min_sep;
    for (const auto& q : pts) ok = ok && distance(u, q) >= min_sep;
    if (ok) pts.push_back(std::move(u));
  }
  return pts;
}

inline ProblemSpec random_spec(const RandomStream& rs, int d) {
  const int n1 = 1 + static_cast<int>(rs.uniform(0) * 2.0);
  const int n2 = 1 + static_cast<int>(rs.uniform(1) * 2.0);
  return ProblemSpec::make(n1, n2, 0.1 + 0.8 * rs.uniform(2), 0.1 + 0.8 * rs.uniform(3), d);
}

}  // namespace detail

/// Worst relative gap between det(Cov) and the conditional-variance chain over
/// random fBm covariances of order 1..6.
inline Verdict detcov_chain_battery(const BatteryOptions& opt) {
  const RandomStream root(opt.seed, 21);
  std::vector<double> residuals(opt.identity_configs);
  for (int k = 0; k < opt.identity_configs; ++k) {
    const RandomStream rs = root.split(static_cast<std::uint64_t>(k));
    const int p = 1 + k % 3;
    const std::size_t n = 1 + static_cast<std::size_t>(k) % 6;
    const double gamma = 0.1 + 0.8 * rs.uniform(0);
    residuals[k] = detcov_chain_check(fbm_cov_matrix(gamma, detail::separated_points(rs.split(1), p, n, 0.02)));
  }
  Verdict v{"determinant chain rule", 0.0, opt.detcov_tolerance};
  for (double r : residuals) v.value = std::max(v.value, r);
  v.passed = v.value <= v.threshold;
  v.detail = {{"configs", opt.identity_configs}};
  return v;
}

/// Conditional variance of the difference field against the sum of the two
/// fields' conditional variances; value is the count of violations.
inline Verdict split_battery(const BatteryOptions& opt) {
  const RandomStream root(opt.seed, 22);
  int violations = 0;
  double worst_margin = std::numeric_limits<double>::infinity();
  for (int k = 0; k < opt.identity_configs; ++k) {
    const RandomStream rs = root.split(static_cast<std::uint64_t>(k));
    const ProblemSpec spec = detail::random_spec(rs, 1);
    const std::size_t n = 1 + static_cast<std::size_t>(k) % 6;
    const auto s = detail::separated_points(rs.split(1), spec.n1(), n + 1, 0.02);
    const auto t = detail::separated_points(rs.split(2), spec.n2(), n + 1, 0.02);
    PointConfig config;
    config.first.assign(s.begin(), s.end() - 1);
    config.second.assign(t.begin(), t.end() - 1);
    const SplitCheck c = slnd_split_check(spec, config, TimePoint{s.back(), t.back()});
    if (!c.holds()) ++violations;
    worst_margin = std::min(worst_margin, c.lhs - c.rhs);
  }
  Verdict v{"conditional variance splitting", static_cast<double>(violations), 0.0};
  v.passed = violations == 0;
  v.detail = {{"configs", opt.identity_configs}, {"smallest_margin", worst_margin}};
  return v;
}

/// Quadrature against closed form for the Gaussian moment identity, orders 1..3.
inline Verdict moment_identity_battery(const BatteryOptions& opt) {
  const RandomStream root(opt.seed, 23);
  Verdict v{"gaussian moment identity", 0.0, opt.moment_tolerance};
  int k = 0;
  for (std::size_t n = 1; n <= 3; ++n) {
    for (int rep = 0; rep < opt.moment_configs_per_order; ++rep, ++k) {
      const RandomStream rs = root.split(static_cast<std::uint64_t>(k));
      const ProblemSpec spec = detail::random_spec(rs, 1);
      const auto s = detail::separated_points(rs.split(1), spec.n1(), n, 0.05);
      const auto t = detail::separated_points(rs.split(2), spec.n2(), n, 0.05);
      std::vector<TimePoint> pts;
      for (std::size_t i = 0; i < n; ++i) pts.push_back({s[i], t[i]});
      const double power = 2.0 * rs.uniform(10);
      v.value = std::max(v.value, gaussian_moment_identity_check(power, x0_cov_matrix(spec, pts)).rel_diff());
    }
  }
  v.passed = v.value <= v.threshold;
  v.detail = {{"configs", k}};
  return v;
}

/// Ratio to the reference in all three branches of the radial integral; the
/// verdict value is the drift between the two smallest A.
inline std::vector<Verdict> radial_battery() {
  std::vector<Verdict> out;
  for (const auto& [p, gamma, beta] : {std::array{1.0, 1.0, 2.0}, std::array{1.0, 1.0, 1.0}, std::array{2.0, 1.0, 1.0}}) {
    const RadialReport r = radial_integral_check(p, gamma, beta);
    const double drift = std::abs(r.rows.back().ratio / r.rows[r.rows.size() - 2].ratio - 1.0);
    Verdict v{std::string("radial integral, ") + to_string(r.branch) + " branch", drift, kStabilizeTol};
    v.passed = r.passed();
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows) rows.push_back({{"A", row.A}, {"ratio", row.ratio}});
    v.detail = {{"p", p}, {"gamma", gamma}, {"beta", beta}, {"within_band", r.within_band},
                {"stabilized", r.stabilized}, {"rows", rows}};
    out.push_back(std::move(v));
  }
  return out;
}

inline Verdict to_verdict(const BoundCheckReport& r) {
  Verdict v{r.name, r.ratio_trend_vs_n, BoundCheckReport::kTrendTolerance};
  v.passed = r.passed();
  nlohmann::json by_n = nlohmann::json::object();
  for (const auto& [n, m] : r.max_ratio_by_n) by_n[std::to_string(n)] = m;
  v.detail = {{"configs", r.configs_tested}, {"max_ratio", r.max_ratio},
              {"trend_vs_r", r.ratio_trend_vs_r}, {"max_ratio_by_n", by_n}};
  return v;
}

/// Nearest-point integral bounds: power and logarithmic regimes of
/// (A + rho^gamma)^-beta, then the two singularity bounds.
inline std::vector<Verdict> nearest_point_battery(const BatteryOptions& opt) {
  std::vector<Verdict> out;
  for (const auto& r : nearest_point_integral_check(1.0, 3.0, opt.bounds, opt.seed)) out.push_back(to_verdict(r));
  for (const auto& r : nearest_point_integral_check(1.0, 2.0, opt.bounds, opt.seed)) out.push_back(to_verdict(r));
  for (const auto& r : nearest_point_singularity_check(1.0, opt.bounds, opt.seed)) out.push_back(to_verdict(r));
  return out;
}

inline std::vector<Verdict> identity_battery(const BatteryOptions& opt) {
  return {detcov_chain_battery(opt), split_battery(opt), moment_identity_battery(opt)};
}

inline std::vector<Verdict> full_battery(const BatteryOptions& opt) {
  std::vector<Verdict> out = identity_battery(opt);
  for (auto& v : radial_battery()) out.push_back(std::move(v));
  for (auto& v : nearest_point_battery(opt)) out.push_back(std::move(v));
  return out;
}

}  // namespace fraclt

#pragma once

// Empirical checks of the integral bounds used in the moment estimates:
// the one-dimensional radial integral int_0^1 r^{p-1} / (A + r^gamma)^beta,
// and integrals over a ball of functions of the distance to the nearest of
// n given points.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "fraclt/io.hpp"
#include "fraclt/localtime.hpp"
#include "fraclt/parallel.hpp"
#include "fraclt/quadrature.hpp"
#include "fraclt/rng.hpp"
#include "fraclt/stats.hpp"

namespace fraclt {

// ---------------------------------------------------------------------------
// Radial integral.

enum class RadialBranch { power, logarithmic, bounded };

inline const char* to_string(RadialBranch b) {
  return b == RadialBranch::power ? "power" : b == RadialBranch::logarithmic ? "logarithmic" : "bounded";
}

inline RadialBranch radial_branch(double p, double gamma, double beta) {
  const double bg = beta * gamma;
  if (std::abs(bg - p) <= 1e-12 * std::max(bg, p)) return RadialBranch::logarithmic;
  return bg > p ? RadialBranch::power : RadialBranch::bounded;
}

/// The asymptotic shape of the radial integral as A -> 0.
inline double radial_reference(double p, double gamma, double beta, double A) {
  switch (radial_branch(p, gamma, beta)) {
    case RadialBranch::power:
      return std::pow(A, p / gamma - beta);
    case RadialBranch::logarithmic:
      return std::log1p(std::pow(A, -1.0 / gamma));
    default:
      return 1.0;
  }
}

/// int_0^x rho^{p-1} / (A + rho^gamma)^beta d rho.
inline QuadResult radial_integral(double p, double gamma, double beta, double A, double x = 1.0) {
  if (!(p > 0.0 && gamma > 0.0 && beta > 0.0 && A > 0.0)) throw std::invalid_argument("radial_integral: bad parameters");
  QuadOptions opt;
  opt.rel_tol = 1e-10;
  const double zero[] = {0.0};
  return integrate([&](double r) { return std::pow(r, p - 1.0) * std::pow(A + std::pow(r, gamma), -beta); }, 0.0, x,
                   opt, zero);
}

struct RadialRow {
  double A = 0.0;
  double value = 0.0;
  double reference = 0.0;
  double ratio = 0.0;
};

struct RadialReport {
  RadialBranch branch = RadialBranch::bounded;
  std::vector<RadialRow> rows;
  bool within_band = false;
  bool stabilized = false;

  bool passed() const { return within_band && stabilized; }
};

inline constexpr double kBandLow = 0.1;
inline constexpr double kBandHigh = 10.0;
inline constexpr double kStabilizeTol = 0.05;

/// Ratio of the radial integral to its asymptotic shape over a grid of A.
/// Passes when every ratio lies in [0.1, 10] and the two smallest A give
/// ratios within 5% of each other.
inline RadialReport radial_integral_check(double p, double gamma, double beta,
                                          std::vector<double> A_grid = geometric_grid(1e-8, 1e-1, 8)) {
  if (A_grid.size() < 2) throw std::invalid_argument("A grid needs >= 2 points");
  for (double A : A_grid)
    if (!(A > 0.0 && A < 1.0)) throw std::invalid_argument("A grid must lie in (0, 1)");
  std::sort(A_grid.begin(), A_grid.end(), std::greater<>());
  RadialReport rep;
  rep.branch = radial_branch(p, gamma, beta);
  rep.within_band = true;
  for (double A : A_grid) {
    RadialRow row{A, radial_integral(p, gamma, beta, A).value, radial_reference(p, gamma, beta, A), 0.0};
    row.ratio = row.value / row.reference;
    rep.within_band = rep.within_band && row.ratio >= kBandLow && row.ratio <= kBandHigh;
    rep.rows.push_back(row);
  }
  const double last = rep.rows.back().ratio, prev = rep.rows[rep.rows.size() - 2].ratio;
  rep.stabilized = std::abs(last - prev) <= kStabilizeTol * std::abs(last);
  return rep;
}

// ---------------------------------------------------------------------------
// Nearest-point integrals over a ball.

/// n points in the ball O_p(center, r).
struct PointCloudConfig {
  Vec center;
  double radius = 1.0;
  std::vector<Vec> points;

  int p() const { return static_cast<int>(center.size()); }
  std::size_t n() const { return points.size(); }
};

namespace detail {

/// Uniform point in B(center, r) from p + 2 normals (dropped coordinates).
inline Vec uniform_in_ball(const RandomStream& rs, std::uint64_t index, const Vec& center, double r) {
  const int p = static_cast<int>(center.size());
  const Vec z = rs.split(index).normals(static_cast<std::size_t>(p) + 2);
  double r2 = 0.0;
  for (double v : z) r2 += v * v;
  Vec u(center);
  for (int k = 0; k < p; ++k) u[k] += r * z[k] / std::sqrt(r2);
  return u;
}

inline double nearest_distance(const PointCloudConfig& c, std::span<const double> u) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : c.points) {
    double s = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) s += (u[k] - q[k]) * (u[k] - q[k]);
    best = std::min(best, s);
  }
  return std::sqrt(best);
}

}  // namespace detail

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

inline constexpr double kUniformShare = 0.25;

/// Importance-sampled integral over the ball of f(distance to the nearest
/// point). The proposal mixes the uniform law on the ball with radial laws
/// around each point whose radius is log-uniform on [lo, 2r], so integrable
/// singularities at the points are sampled with bounded weights.
template <class F>
McEstimate nearest_point_integral(const PointCloudConfig& c, F&& f, int samples, std::uint64_t seed) {
  if (c.points.empty()) throw std::invalid_argument("need at least one point");
  if (samples < 2) throw std::invalid_argument("need >= 2 samples");
  const int p = c.p();
  const double vol = ball_volume(p) * std::pow(c.radius, p);
  const double hi = 2.0 * c.radius, lo = c.radius * 1e-9;
  const double log_span = std::log(hi / lo);
  const double area = sphere_area(p);
  const double n = static_cast<double>(c.n());
  const RandomStream rs(seed, 11);
  auto radial_density = [&](double rho) {
    // Distances recomputed from coordinates can round just below lo.
    if (rho > hi) return 0.0;
    return 1.0 / (area * std::pow(std::max(rho, lo), p) * log_span);
  };
  std::vector<double> w(static_cast<std::size_t>(samples));
  for (int m = 0; m < samples; ++m) {
    const RandomStream s = rs.split(static_cast<std::uint64_t>(m));
    const auto [u0, u1] = s.uniform_pair(0);
    Vec u;
    if (u0 < kUniformShare) {
      u = detail::uniform_in_ball(s, 1, c.center, c.radius);
    } else {
      const auto j = std::min(c.n() - 1, static_cast<std::size_t>(u1 * n));
      const double rho = lo * std::exp(s.uniform(2) * log_span);
      const Vec dir = s.split(3).normals(static_cast<std::size_t>(p));
      double dn = 0.0;
      for (double v : dir) dn += v * v;
      u = c.points[j];
      for (int k = 0; k < p; ++k) u[k] += rho * dir[k] / std::sqrt(dn);
    }
    if (distance(u, c.center) > c.radius) {
      w[m] = 0.0;
      continue;
    }
    double mix = 0.0;
    for (const auto& q : c.points) mix += radial_density(distance(u, q));
    const double q = kUniformShare / vol + (1.0 - kUniformShare) * mix / n;
    w[m] = f(detail::nearest_distance(c, u)) / q;
  }
  return {mean(w), std_error(w)};
}

struct BoundCheckReport {
  std::string name;
  int configs_tested = 0;
  double max_ratio = 0.0;
  /// Slope of log(max ratio at each n) against log n.
  double ratio_trend_vs_n = 0.0;
  /// Slope of log(max ratio per radius decade) against log r.
  double ratio_trend_vs_r = 0.0;
  std::map<std::size_t, double> max_ratio_by_n;

  bool passed(double tolerance = kTrendTolerance) const {
    return std::isfinite(max_ratio) && max_ratio > 0.0 && ratio_trend_vs_n <= tolerance;
  }

  static constexpr double kTrendTolerance = 0.1;
};

struct RandomConfigOptions {
  int p = 2;
  std::size_t n_max = 32;
  int configs = 1000;
  int samples = 2000;
  /// Share of configurations whose points all lie within 1e-6 r of one point.
  double clustered_share = 0.25;
};

namespace detail {

inline std::vector<std::size_t> n_levels(std::size_t n_max) {
  std::vector<std::size_t> v;
  for (std::size_t n = 1; n <= n_max; n *= 2) v.push_back(n);
  if (v.back() != n_max) v.push_back(n_max);
  return v;
}

/// Configuration k: center in [-1,1]^p, radius log-uniform in [1e-2, 10],
/// points uniform in the ball (or clustered), n cycling through powers of 2.
inline PointCloudConfig random_config(const RandomConfigOptions& opt, std::uint64_t seed, std::uint64_t k) {
  const RandomStream rs = RandomStream(seed, 5).split(k);
  const auto levels = n_levels(opt.n_max);
  const std::size_t n = levels[k % levels.size()];
  PointCloudConfig c;
  c.center.resize(opt.p);
  for (int i = 0; i < opt.p; ++i) c.center[i] = 2.0 * rs.uniform(static_cast<std::uint64_t>(i)) - 1.0;
  c.radius = 1e-2 * std::pow(1e3, rs.uniform(100));
  const bool clustered = rs.uniform(101) < opt.clustered_share;
  const Vec anchor = uniform_in_ball(rs, 200, c.center, c.radius * (1.0 - 1e-5));
  for (std::size_t j = 0; j < n; ++j) {
    if (clustered && j > 0)
      c.points.push_back(uniform_in_ball(rs, 300 + j, anchor, 1e-6 * c.radius));
    else if (clustered)
      c.points.push_back(anchor);
    else
      c.points.push_back(uniform_in_ball(rs, 300 + j, c.center, c.radius));
  }
  return c;
}

inline BoundCheckReport summarize_ratios(std::string name, const std::vector<std::size_t>& ns,
                                         const std::vector<double>& radii, const std::vector<double>& ratios) {
  BoundCheckReport rep;
  rep.name = std::move(name);
  rep.configs_tested = static_cast<int>(ratios.size());
  std::map<int, double> by_decade;
  for (std::size_t k = 0; k < ratios.size(); ++k) {
    rep.max_ratio = std::max(rep.max_ratio, ratios[k]);
    auto& m = rep.max_ratio_by_n[ns[k]];
    m = std::max(m, ratios[k]);
    auto& d = by_decade[static_cast<int>(std::floor(std::log10(radii[k])))];
    d = std::max(d, ratios[k]);
  }
  auto slope = [](const auto& table) {
    std::vector<double> x, y;
    for (const auto& [key, val] : table) {
      if (!(val > 0.0)) continue;
      x.push_back(static_cast<double>(key));
      y.push_back(std::log(val));
    }
    return x.size() >= 2 ? linear_fit(x, y).slope : 0.0;
  };
  std::map<double, double> log_n;
  for (const auto& [n, v] : rep.max_ratio_by_n) log_n[std::log(static_cast<double>(n))] = v;
  std::vector<double> x, y;
  for (const auto& [ln, v] : log_n) {
    x.push_back(ln);
    y.push_back(std::log(v));
  }
  rep.ratio_trend_vs_n = x.size() >= 2 ? linear_fit(x, y).slope : 0.0;
  // Decades are in log10 units; convert the slope to natural-log units.
  rep.ratio_trend_vs_r = slope(by_decade) / std::log(10.0);
  return rep;
}

}  // namespace detail

/// Bound for the integral of (A + min_j |u - u_j|^gamma)^{-beta} over the
/// ball: n A^{p/gamma - beta} when gamma beta > p, and
/// n log(e + (A^{-1/gamma} r n^{-1/p})^kappa) when gamma beta = p.
/// One report per kappa in the logarithmic case (a single report otherwise).
inline std::vector<BoundCheckReport> nearest_point_integral_check(double gamma, double beta, const RandomConfigOptions& opt,
                                                                  std::uint64_t seed,
                                                                  std::vector<double> kappas = {0.25, 0.5, 0.75}) {
  const double p = opt.p;
  if (gamma * beta < p * (1.0 - 1e-12)) throw std::invalid_argument("nearest-point integral bound needs gamma*beta >= p");
  const bool log_case = radial_branch(p, gamma, beta) == RadialBranch::logarithmic;
  if (!log_case) kappas = {0.0};
  struct Sample {
    std::size_t n;
    double r, A, lhs;
  };
  const auto samples = parallel_map(static_cast<std::size_t>(opt.configs), [&](std::size_t k) {
    const PointCloudConfig c = detail::random_config(opt, seed, k);
    const double A = std::pow(10.0, -6.0 * RandomStream(seed, 6).uniform(k));
    const McEstimate e = nearest_point_integral(
        c, [&](double rho) { return std::pow(A + std::pow(rho, gamma), -beta); }, opt.samples, derive_seed(seed, k));
    return Sample{c.n(), c.radius, A, e.value};
  });
  std::vector<BoundCheckReport> out;
  for (double kappa : kappas) {
    std::vector<std::size_t> ns;
    std::vector<double> radii, ratios;
    for (const auto& s : samples) {
      const double n = static_cast<double>(s.n);
      const double rhs = log_case ? n * std::log(std::exp(1.0) + std::pow(std::pow(s.A, -1.0 / gamma) * s.r /
                                                                              std::pow(n, 1.0 / p),
                                                                          kappa))
                                  : n * std::pow(s.A, p / gamma - beta);
      ns.push_back(s.n);
      radii.push_back(s.r);
      ratios.push_back(s.lhs / rhs);
    }
    std::string name = log_case ? "nearest-point integral, log case, kappa=" + format_double(kappa)
                                : "nearest-point integral, power case";
    out.push_back(detail::summarize_ratios(std::move(name), ns, radii, ratios));
  }
  return out;
}

/// Two bounds with beta < p:
///   int min_j |u - u_j|^{-beta} du <= C n^{beta/p} r^{p-beta},
///   int log(e + K min_j |u - u_j|^{-beta}) du <= C r^p log(e + K (r n^{-1/p})^{-beta}).
inline std::vector<BoundCheckReport> nearest_point_singularity_check(double beta, const RandomConfigOptions& opt,
                                                                     std::uint64_t seed) {
  const double p = opt.p;
  if (!(beta > 0.0 && beta < p)) throw std::invalid_argument("nearest-point singularity bound needs 0 < beta < p");
  struct Sample {
    std::size_t n;
    double r, power_ratio, log_ratio;
  };
  const auto samples = parallel_map(static_cast<std::size_t>(opt.configs), [&](std::size_t k) {
    const PointCloudConfig c = detail::random_config(opt, seed, k);
    const double K = std::pow(10.0, 6.0 * RandomStream(seed, 8).uniform(k) - 3.0);
    const double n = static_cast<double>(c.n()), r = c.radius;
    const McEstimate power =
        nearest_point_integral(c, [&](double rho) { return std::pow(rho, -beta); }, opt.samples, derive_seed(seed, 2 * k));
    const McEstimate logv = nearest_point_integral(
        c, [&](double rho) { return std::log(std::exp(1.0) + K * std::pow(rho, -beta)); }, opt.samples,
        derive_seed(seed, 2 * k + 1));
    const double rhs_power = std::pow(n, beta / p) * std::pow(r, p - beta);
    const double rhs_log = std::pow(r, p) * std::log(std::exp(1.0) + K * std::pow(r / std::pow(n, 1.0 / p), -beta));
    return Sample{c.n(), r, power.value / rhs_power, logv.value / rhs_log};
  });
  std::vector<std::size_t> ns;
  std::vector<double> radii, pr, lr;
  for (const auto& s : samples) {
    ns.push_back(s.n);
    radii.push_back(s.r);
    pr.push_back(s.power_ratio);
    lr.push_back(s.log_ratio);
  }
  return {detail::summarize_ratios("nearest-point power singularity", ns, radii, pr),
          detail::summarize_ratios("nearest-point log singularity", ns, radii, lr)};
}

}  // namespace fraclt

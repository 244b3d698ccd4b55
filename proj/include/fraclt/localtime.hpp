#pragma once

// The intersection local time at x = 0: smoothed Monte Carlo estimator,
// quadrature oracles for its first moment, epsilon sweeps and scaling checks.

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "fraclt/fbm_sim.hpp"
#include "fraclt/gaussian.hpp"
#include "fraclt/parallel.hpp"
#include "fraclt/quadrature.hpp"
#include "fraclt/regime.hpp"
#include "fraclt/rng.hpp"
#include "fraclt/stats.hpp"

namespace fraclt {

using MomentQuadResult = QuadResult;

struct EpsilonEstimate {
  double epsilon = 0.0;
  double value = 0.0;
  double std_error = 0.0;
  int n_samples = 0;
  ProblemSpec spec;
  double radius = 0.0;
};

/// Normalized Gaussian kernel (2 pi eps)^{-d/2} exp(-|x|^2 / (2 eps)).
inline double p_eps(std::span<const double> x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("p_eps requires eps > 0");
  double r2 = 0.0;
  for (double v : x) r2 += v * v;
  const double d = static_cast<double>(x.size());
  return std::pow(2.0 * std::numbers::pi * eps, -0.5 * d) * std::exp(-r2 / (2.0 * eps));
}

/// Surface area of the unit sphere in R^n.
inline double sphere_area(int n) { return 2.0 * std::pow(std::numbers::pi, 0.5 * n) / std::tgamma(0.5 * n); }

/// Volume of the unit ball in R^n.
inline double ball_volume(int n) { return sphere_area(n) / n; }

/// Density of |u| for u uniform (Lebesgue, unnormalized) on the ball
/// B(c, r) in R^dim, where only |c| matters.
struct RadialShell {
  int dim = 1;
  double center_norm = 0.0;
  double radius = 0.0;

  double lower() const { return std::max(0.0, center_norm - radius); }
  double upper() const { return center_norm + radius; }
  bool contains_origin() const { return center_norm <= radius; }

  /// Surface measure of {|u| = rho} inside the ball.
  double weight(double rho) const {
    if (rho < lower() || rho > upper() || radius <= 0.0) return 0.0;
    if (center_norm == 0.0) return sphere_area(dim) * std::pow(rho, dim - 1);
    if (rho == 0.0) return 0.0;
    const double cos_phi = std::clamp(
        (rho * rho + center_norm * center_norm - radius * radius) / (2.0 * rho * center_norm), -1.0, 1.0);
    return std::pow(rho, dim - 1) * cap_area(cos_phi);
  }

  /// Area of the spherical cap of half-angle acos(cos_phi) on the unit sphere.
  double cap_area(double cos_phi) const {
    using std::numbers::pi;
    switch (dim) {
      case 1:
        return (cos_phi <= 1.0 ? 1.0 : 0.0) + (cos_phi <= -1.0 ? 1.0 : 0.0);
      case 2:
        return 2.0 * std::acos(cos_phi);
      case 3:
        return 2.0 * pi * (1.0 - cos_phi);
      default: {
        // omega_{n-2} * int_0^phi sin^{n-2}; the sine integral via the
        // regularized incomplete beta function.
        const double a = 0.5 * (dim - 1);
        const double full = boost::math::beta(a, 0.5);
        const double s2 = 1.0 - cos_phi * cos_phi;
        const double half = 0.5 * full * boost::math::ibeta(a, 0.5, std::clamp(s2, 0.0, 1.0));
        const double angle_integral = cos_phi >= 0.0 ? half : full - half;
        return sphere_area(dim - 1) * angle_integral;
      }
    }
  }
};

namespace detail {

/// Integral over rho in the shell's support, split at the interior kink and
/// graded toward rho = 0 when the ball contains the origin.
template <class F>
QuadResult radial_integrate(F&& f, const RadialShell& shell, const QuadOptions& opt) {
  const double lo = shell.lower(), hi = shell.upper();
  if (!(hi > lo) || shell.radius <= 0.0) return {};
  auto g = [&](double rho) { return shell.weight(rho) * f(rho); };
  const double zero[] = {0.0};
  const std::span<const double> sing = lo == 0.0 ? std::span<const double>(zero) : std::span<const double>();
  const double kink = std::abs(shell.center_norm - shell.radius);
  if (shell.center_norm == 0.0 || !(kink > lo && kink < hi)) return integrate(g, lo, hi, opt, sing);
  QuadOptions piece = opt;
  piece.abs_tol = 0.5 * opt.abs_tol;
  QuadResult r = integrate(g, lo, kink, piece, sing);
  r += integrate(g, kink, hi, piece);
  return r;
}

/// Iterated integral of f(rho1, rho2) against the two shell densities.
template <class F>
QuadResult radial_pair_integrate(F&& f, const RadialShell& a, const RadialShell& b, const QuadOptions& outer,
                                 const QuadOptions& inner) {
  std::mutex m;
  double worst_rel = 0.0;
  long evals = 0;
  bool ok = true;
  auto g = [&](double r1) {
    const QuadResult r = radial_integrate([&](double r2) { return f(r1, r2); }, b, inner);
    std::lock_guard lock(m);
    if (r.value != 0.0) worst_rel = std::max(worst_rel, r.abs_error / std::abs(r.value));
    evals += r.evaluations;
    ok = ok && r.converged;
    return r.value;
  };
  QuadResult out = radial_integrate(g, a, outer);
  out.abs_error += worst_rel * std::abs(out.value);
  out.evaluations = evals;
  out.converged = out.converged && ok;
  return out;
}

inline QuadOptions outer_options() {
  QuadOptions o;
  o.rel_tol = 1e-10;
  o.parallel = true;
  return o;
}

inline QuadOptions inner_options() {
  QuadOptions o;
  o.rel_tol = 1e-11;
  return o;
}

inline double variance_x0(const ProblemSpec& spec, double rho1, double rho2) {
  return pow2h(rho1, spec.alpha1()) + pow2h(rho2, spec.alpha2());
}

}  // namespace detail

/// Product ball B(center.s, r) x B(center.t, r) as a pair of radial shells.
inline std::pair<RadialShell, RadialShell> product_ball(const ProblemSpec& spec, const TimePoint& center, double r1,
                                                        double r2) {
  detail::check_time_point(spec, center);
  return {RadialShell{spec.n1(), norm(center.s), r1}, RadialShell{spec.n2(), norm(center.t), r2}};
}

inline TimePoint origin(const ProblemSpec& spec) {
  return {Vec(static_cast<std::size_t>(spec.n1()), 0.0), Vec(static_cast<std::size_t>(spec.n2()), 0.0)};
}

/// E I_eps over the product ball O(0, R): the integral of
/// (2 pi (eps + sigma^2(s,t)))^{-d/2}, sigma^2 = |s|^{2 a1} + |t|^{2 a2}.
inline MomentQuadResult mean_i_eps_quad(const ProblemSpec& spec, double R, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("mean_i_eps_quad requires eps > 0");
  if (!(R > 0.0)) throw std::invalid_argument("mean_i_eps_quad requires R > 0");
  const auto [a, b] = product_ball(spec, origin(spec), R, R);
  const double half_d = 0.5 * spec.d();
  return detail::radial_pair_integrate(
      [&](double r1, double r2) {
        return std::pow(2.0 * std::numbers::pi * (eps + detail::variance_x0(spec, r1, r2)), -half_d);
      },
      a, b, detail::outer_options(), detail::inner_options());
}

/// E L(0, B(s0, r1) x B(t0, r2)) = (2 pi)^{-d/2} int (Var X0)^{-d/2}.
inline MomentQuadResult mean_localtime_quad(const ProblemSpec& spec, const TimePoint& center, double r1, double r2) {
  if (r1 < 0.0 || r2 < 0.0) throw std::invalid_argument("radius must be non-negative");
  const auto [a, b] = product_ball(spec, center, r1, r2);
  if (r1 == 0.0 || r2 == 0.0) return {};
  if (!classify(spec).exists && a.contains_origin() && b.contains_origin())
    throw std::domain_error("mean local time diverges: the ball contains the origin and the local time does not exist");
  const double half_d = 0.5 * spec.d();
  return detail::radial_pair_integrate(
      [&](double q1, double q2) {
        const double v = detail::variance_x0(spec, q1, q2);
        return v > 0.0 ? std::pow(2.0 * std::numbers::pi * v, -half_d) : 0.0;
      },
      a, b, detail::outer_options(), detail::inner_options());
}

inline MomentQuadResult mean_localtime_ball_quad(const ProblemSpec& spec, const TimePoint& center, double r) {
  return mean_localtime_quad(spec, center, r, r);
}

/// Relative mismatch between E L over the anisotropic dilation of O(0,R)
/// and c^{N1/a1 + N2/a2 - d} E L over O(0,R).
inline double scaling_check(const ProblemSpec& spec, double R, double c) {
  if (!(c > 0.0)) throw std::invalid_argument("scaling_check requires c > 0");
  if (!classify(spec).exists) throw std::domain_error("scaling_check requires an existing local time");
  const TimePoint o = origin(spec);
  const double lhs =
      mean_localtime_quad(spec, o, std::pow(c, 1.0 / spec.alpha1()) * R, std::pow(c, 1.0 / spec.alpha2()) * R).value;
  const double rhs = std::pow(c, spec.scaling_exponent()) * mean_localtime_quad(spec, o, R, R).value;
  return std::abs(lhs - rhs) / std::abs(rhs);
}

inline std::vector<double> geometric_grid(double from, double to, int points) {
  if (points < 2 || !(from > 0.0) || !(to > 0.0)) throw std::invalid_argument("geometric_grid: bad arguments");
  std::vector<double> g(points);
  const double step = std::log(to / from) / (points - 1);
  for (int i = 0; i < points; ++i) g[i] = from * std::exp(step * i);
  g.back() = to;
  return g;
}

struct RadiusFit {
  std::vector<double> radii;
  std::vector<double> means;
  double slope = 0.0;
  double r2 = 0.0;
};

/// Slope of log E L(0, O(0,r)) against log r.
inline RadiusFit first_moment_radius_fit(const ProblemSpec& spec,
                                         std::vector<double> r_grid = geometric_grid(1e-7, 1e-4, 10)) {
  const RegimeReport rep = classify(spec);
  if (!rep.exists) throw std::domain_error("first_moment_radius_fit requires an existing local time");
  if (rep.log_case)
    throw std::domain_error(
        "first_moment_radius_fit: N1 = a1*d is the logarithmic case; fit against r^N2 times the log correction instead");
  if (r_grid.size() < 3) throw std::invalid_argument("radius grid needs >= 3 points");
  std::sort(r_grid.begin(), r_grid.end());
  if (!(r_grid.front() > 0.0) || r_grid.back() / r_grid.front() < 100.0 * (1.0 - 1e-12))
    throw std::invalid_argument("radius grid must be positive and span at least two decades");
  RadiusFit fit;
  fit.radii = r_grid;
  std::vector<double> lx, ly;
  for (double r : r_grid) {
    const double m = mean_localtime_ball_quad(spec, origin(spec), r).value;
    fit.means.push_back(m);
    lx.push_back(std::log(r));
    ly.push_back(std::log(m));
  }
  const LinearFit lf = linear_fit(lx, ly);
  fit.slope = lf.slope;
  fit.r2 = lf.r2;
  return fit;
}

// ---------------------------------------------------------------------------
// Monte Carlo Riemann sums of the smoothed functional.

/// Midpoint cells of [-R, R]^n with weight = volume of cell ∩ B(0, R).
struct BallCells {
  GridSpec grid;
  std::vector<double> weights;
};

inline constexpr int kBoundarySubsamples = 128;

inline BallCells ball_cells(int n, double R, int resolution) {
  if (resolution < 1) throw std::invalid_argument("resolution must be positive");
  BallCells cells;
  cells.grid = GridSpec::midpoints(std::vector<int>(n, resolution), Vec(n, -R), Vec(n, R));
  const double h = 2.0 * R / resolution;
  const double vol = std::pow(h, n);
  const double half_diag = 0.5 * h * std::sqrt(static_cast<double>(n));
  // Kronecker lattice with generalized golden-ratio increments.
  double phi = 2.0;
  for (int k = 0; k < 50; ++k) phi = std::pow(1.0 + phi, 1.0 / (n + 1));
  Vec step(n);
  for (int k = 0; k < n; ++k) step[k] = std::fmod(std::pow(1.0 / phi, k + 1), 1.0);
  cells.weights.resize(cells.grid.size());
  for (std::size_t i = 0; i < cells.grid.size(); ++i) {
    const Vec u = cells.grid.point(i);
    const double r = norm(u);
    if (r + half_diag <= R) {
      cells.weights[i] = vol;
    } else if (r - half_diag >= R) {
      cells.weights[i] = 0.0;
    } else if (n == 1) {
      cells.weights[i] = std::clamp(R - (std::abs(u[0]) - 0.5 * h), 0.0, h);
    } else {
      int inside = 0;
      Vec v(n);
      for (int m = 0; m < kBoundarySubsamples; ++m) {
        for (int k = 0; k < n; ++k) v[k] = u[k] + h * (std::fmod(0.5 + (m + 0.5) * step[k], 1.0) - 0.5);
        if (norm(v) <= R) ++inside;
      }
      cells.weights[i] = vol * inside / kBoundarySubsamples;
    }
  }
  return cells;
}

/// One replication of sum_{i,j} w_i w_j p_eps(X(s_i, t_j)).
inline double i_eps_riemann(const DifferenceSample& x, const BallCells& c1, const BallCells& c2, double eps) {
  const int d = x.d();
  const double norm_const = std::pow(2.0 * std::numbers::pi * eps, -0.5 * d);
  std::vector<double> rows(c1.weights.size());
  for (std::size_t i = 0; i < c1.weights.size(); ++i) {
    double acc = 0.0;
    if (c1.weights[i] > 0.0) {
      for (std::size_t j = 0; j < c2.weights.size(); ++j) {
        if (c2.weights[j] == 0.0) continue;
        double r2 = 0.0;
        for (int c = 0; c < d; ++c) {
          const double v = x.x(i, j, c);
          r2 += v * v;
        }
        acc += c2.weights[j] * std::exp(-r2 / (2.0 * eps));
      }
    }
    rows[i] = c1.weights[i] * acc;
  }
  return norm_const * pairwise_sum(rows);
}

/// Monte Carlo mean of I_eps over independent field replications; the
/// replication r uses seed derive_seed(seed, r).
inline EpsilonEstimate i_eps_mc(const ProblemSpec& spec, double R, double eps, int n_samples, std::uint64_t seed,
                                int resolution, std::size_t cap = kDefaultPointCap) {
  if (!(eps > 0.0)) throw std::invalid_argument("i_eps_mc requires eps > 0");
  if (n_samples < 2) throw std::invalid_argument("i_eps_mc needs >= 2 samples");
  const BallCells c1 = ball_cells(spec.n1(), R, resolution);
  const BallCells c2 = ball_cells(spec.n2(), R, resolution);
  check_cap(c1.grid, cap);
  check_cap(c2.grid, cap);
  const std::vector<double> values = parallel_map(static_cast<std::size_t>(n_samples), [&](std::size_t r) {
    const DifferenceSample x =
        sample_difference_field(spec, c1.grid, c2.grid, derive_seed(seed, r), SamplerChoice::cholesky, cap);
    return i_eps_riemann(x, c1, c2, eps);
  });
  EpsilonEstimate e{eps, mean(values), std_error(values), n_samples, spec, R};
  return e;
}

/// Expected value of the Riemann sum itself (the discretized oracle):
/// sum_{i,j} w_i w_j (2 pi (eps + sigma^2))^{-d/2}.
inline double i_eps_riemann_mean(const ProblemSpec& spec, double R, double eps, int resolution) {
  const BallCells c1 = ball_cells(spec.n1(), R, resolution);
  const BallCells c2 = ball_cells(spec.n2(), R, resolution);
  std::vector<double> rows(c1.weights.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double v1 = pow2h(norm(c1.grid.point(i)), spec.alpha1());
    double acc = 0.0;
    for (std::size_t j = 0; j < c2.weights.size(); ++j) {
      const double v = v1 + pow2h(norm(c2.grid.point(j)), spec.alpha2());
      acc += c2.weights[j] * std::pow(2.0 * std::numbers::pi * (eps + v), -0.5 * spec.d());
    }
    rows[i] = c1.weights[i] * acc;
  }
  return pairwise_sum(rows);
}

/// Monte Carlo cubature of the second moment
/// (2 pi)^{-d} int int detCov(X0(a), X0(b))^{-d/2} over the product ball twice.
inline EpsilonEstimate second_moment_mc(const ProblemSpec& spec, double R, int n_points, std::uint64_t seed) {
  if (!classify(spec).exists) throw std::domain_error("second moment diverges when the local time does not exist");
  const int n1 = spec.n1(), n2 = spec.n2();
  const double vol = std::pow(ball_volume(n1) * std::pow(R, n1) * ball_volume(n2) * std::pow(R, n2), 2);
  const RandomStream rs(seed, 7);
  // Uniform point in B(0,R) of R^n from n+2 normals (the dropped-coordinates method).
  auto ball_point = [&](std::uint64_t base, int n) {
    const RandomStream s = rs.split(base);
    const Vec z = s.normals(n + 2);
    double r2 = 0.0;
    for (double v : z) r2 += v * v;
    Vec u(z.begin(), z.begin() + n);
    for (double& v : u) v *= R / std::sqrt(r2);
    return u;
  };
  const std::vector<double> vals = parallel_map(static_cast<std::size_t>(n_points), [&](std::size_t k) {
    const std::uint64_t b = 4 * static_cast<std::uint64_t>(k);
    const TimePoint a{ball_point(b, n1), ball_point(b + 1, n2)};
    const TimePoint c{ball_point(b + 2, n1), ball_point(b + 3, n2)};
    const double va = x0_cov(spec, a, a), vc = x0_cov(spec, c, c), cv = x0_cov(spec, a, c);
    const double det = va * vc - cv * cv;
    if (!(det > 0.0)) return 0.0;
    return vol * std::pow(2.0 * std::numbers::pi, -static_cast<double>(spec.d())) *
           std::pow(det, -0.5 * spec.d());
  });
  return {0.0, mean(vals), std_error(vals), n_points, spec, R};
}

// ---------------------------------------------------------------------------
// Epsilon sweeps and model selection.

enum class SweepClass { convergent, log_divergent, power_divergent, ambiguous };

inline const char* to_string(SweepClass c) {
  switch (c) {
    case SweepClass::convergent:
      return "convergent";
    case SweepClass::log_divergent:
      return "log_divergent";
    case SweepClass::power_divergent:
      return "power_divergent";
    default:
      return "ambiguous";
  }
}

struct ModelFit {
  std::string name;
  double a = 0.0, b = 0.0, c = 0.0;
  double rss = std::numeric_limits<double>::infinity();
  double bic = std::numeric_limits<double>::infinity();
  int parameters = 0;
  bool feasible = false;
};

struct SweepResult {
  std::vector<double> eps;
  std::vector<double> values;
  std::vector<double> errors;
  SweepClass classification = SweepClass::ambiguous;
  double fitted_slope = 0.0;
  double fit_r2 = 0.0;
  /// convergent, log, power (in that order).
  std::vector<ModelFit> models;
};

inline constexpr double kBicMargin = 2.0;
inline constexpr double kRateMin = 0.05;
inline constexpr double kRateMaxConvergent = 2.0;
inline constexpr double kRateMaxPower = 3.0;

namespace detail {

/// Least squares y = a + b * basis; returns rss.
inline double fit_affine(std::span<const double> basis, std::span<const double> y, double& a, double& b) {
  const LinearFit f = linear_fit(basis, y);
  a = f.intercept;
  b = f.slope;
  return f.rss;
}

/// Best exponent c in [lo, hi] for y = a + b * eps^{sign*c}: coarse scan then
/// golden-section refinement.
inline ModelFit fit_power_family(std::span<const double> eps, std::span<const double> y, double sign, double lo,
                                 double hi, bool require_positive_b) {
  std::vector<double> basis(eps.size());
  auto eval = [&](double c, double& a, double& b) {
    for (std::size_t i = 0; i < eps.size(); ++i) basis[i] = std::pow(eps[i], sign * c);
    const double rss = fit_affine(basis, y, a, b);
    if (require_positive_b && !(b > 0.0)) return std::numeric_limits<double>::infinity();
    return rss;
  };
  ModelFit best;
  best.parameters = 3;
  const int scan = 200;
  double best_c = lo;
  for (int k = 0; k <= scan; ++k) {
    const double c = lo + (hi - lo) * k / scan;
    double a, b;
    const double rss = eval(c, a, b);
    if (rss < best.rss) {
      best.rss = rss;
      best_c = c;
    }
  }
  if (!std::isfinite(best.rss)) return best;
  double left = std::max(lo, best_c - (hi - lo) / scan), right = std::min(hi, best_c + (hi - lo) / scan);
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int it = 0; it < 60; ++it) {
    const double x1 = right - g * (right - left), x2 = left + g * (right - left);
    double a, b;
    if (eval(x1, a, b) < eval(x2, a, b))
      right = x2;
    else
      left = x1;
  }
  const double c = 0.5 * (left + right);
  double a, b;
  const double rss = eval(c, a, b);
  if (rss <= best.rss) {
    best.rss = rss;
    best_c = c;
  }
  best.c = best_c;
  eval(best_c, best.a, best.b);
  best.feasible = true;
  return best;
}

}  // namespace detail

/// Classifies a sequence of values v(eps) by BIC over three models on the
/// rescaled data: a + b eps^c (limit), a + b ln(1/eps), a + b eps^{-c} (b > 0).
inline SweepResult classify_sweep(std::vector<double> eps, std::vector<double> values) {
  if (eps.size() != values.size() || eps.size() < 8) throw std::invalid_argument("sweep needs >= 8 points");
  const double scale = *std::max_element(values.begin(), values.end(),
                                         [](double x, double y) { return std::abs(x) < std::abs(y); });
  if (scale == 0.0) throw std::invalid_argument("sweep values are all zero");
  std::vector<double> y(values.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = values[i] / std::abs(scale);
  const double n = static_cast<double>(y.size());
  const double floor = n * 1e-24;

  SweepResult out;
  out.eps = eps;
  out.values = values;

  ModelFit conv = detail::fit_power_family(eps, y, 1.0, kRateMin, kRateMaxConvergent, false);
  conv.name = "convergent";
  ModelFit log_fit;
  log_fit.name = "log";
  log_fit.parameters = 2;
  {
    std::vector<double> basis(eps.size());
    for (std::size_t i = 0; i < eps.size(); ++i) basis[i] = std::log(1.0 / eps[i]);
    log_fit.rss = detail::fit_affine(basis, y, log_fit.a, log_fit.b);
    log_fit.feasible = true;
  }
  ModelFit pow_fit = detail::fit_power_family(eps, y, -1.0, kRateMin, kRateMaxPower, true);
  pow_fit.name = "power";
  out.models = {conv, log_fit, pow_fit};
  for (auto& m : out.models) {
    if (!m.feasible) continue;
    m.bic = n * std::log(std::max(m.rss, floor) / n) + m.parameters * std::log(n);
  }
  std::vector<std::size_t> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](auto i, auto j) { return out.models[i].bic < out.models[j].bic; });
  const ModelFit& best = out.models[order[0]];
  const ModelFit& second = out.models[order[1]];
  if (!best.feasible || (second.feasible && second.bic - best.bic < kBicMargin)) {
    out.classification = SweepClass::ambiguous;
  } else {
    out.classification = order[0] == 0 ? SweepClass::convergent
                         : order[0] == 1 ? SweepClass::log_divergent
                                         : SweepClass::power_divergent;
  }
  // Slope in the original units: rate c for the power families, b for log.
  out.fitted_slope = order[0] == 1 ? best.b * std::abs(scale) : best.c;
  double syy = 0.0;
  const double my = mean(y);
  for (double v : y) syy += (v - my) * (v - my);
  out.fit_r2 = syy > 0.0 ? 1.0 - best.rss / syy : 1.0;
  return out;
}

/// Quadrature means of I_eps over a geometric eps grid (sorted decreasing),
/// classified by model selection.
inline SweepResult epsilon_sweep(const ProblemSpec& spec, double R, std::vector<double> eps_grid) {
  if (eps_grid.size() < 8) throw std::invalid_argument("epsilon sweep needs >= 8 grid points");
  std::sort(eps_grid.begin(), eps_grid.end(), std::greater<>());
  for (std::size_t i = 1; i < eps_grid.size(); ++i)
    if (!(eps_grid[i] < eps_grid[i - 1]) || !(eps_grid[i] > 0.0))
      throw std::invalid_argument("eps grid must be positive and strictly decreasing");
  std::vector<double> values, errors;
  for (double e : eps_grid) {
    const MomentQuadResult q = mean_i_eps_quad(spec, R, e);
    values.push_back(q.value);
    errors.push_back(q.abs_error);
  }
  SweepResult out = classify_sweep(eps_grid, values);
  out.errors = std::move(errors);
  return out;
}

/// Log-divergence fit of the values against ln(1/eps) alone.
inline LinearFit log_fit(const SweepResult& s) {
  std::vector<double> x;
  for (double e : s.eps) x.push_back(std::log(1.0 / e));
  return linear_fit(x, s.values);
}

// ---------------------------------------------------------------------------
// The existence integral over the product ball squared.

/// Density of |u - v| for u, v uniform (unnormalized) on B(0, R) in R^n:
/// sphere area times x^{n-1} times the volume of the lens of two balls at
/// distance x.
inline double difference_kernel(int n, double R, double x) {
  if (x < 0.0 || x > 2.0 * R) return 0.0;
  // I_{1-y}((n+1)/2, 1/2) written as the complement in y, which avoids the
  // cancellation in 1 - y for small x.
  const double y = std::clamp(x * x / (4.0 * R * R), 0.0, 1.0);
  const double lens = ball_volume(n) * std::pow(R, n) * boost::math::ibetac(0.5, 0.5 * (n + 1), y);
  return sphere_area(n) * std::pow(x, n - 1) * lens;
}

struct ExistIntegralResult {
  MomentQuadResult integral;
  bool finite = false;
  /// Estimated geometric decay exponent (base 2) of the shell contributions.
  double decay_exponent = 0.0;
  std::vector<double> shells;
};

inline constexpr double kDecayFloor = 1e-3;

/// Shells {lambda_{k+1} < max(x^{a1}, y^{a2}) <= lambda_k}, lambda_k halving,
/// down to lambda^2 = cutoff. A finite integral shows contributions decaying
/// like 2^{-k (N1/a1 + N2/a2 - d)}.
inline ExistIntegralResult exist_integral_quad(const ProblemSpec& spec, double R, double cutoff = 1e-20) {
  if (!(R > 0.0) || !(cutoff > 0.0)) throw std::invalid_argument("exist_integral_quad: bad arguments");
  const double a1 = spec.alpha1(), a2 = spec.alpha2(), half_d = 0.5 * spec.d();
  const int n1 = spec.n1(), n2 = spec.n2();
  auto f = [&](double x, double y) {
    const double v = pow2h(x, a1) + pow2h(y, a2);
    if (!(v > 0.0)) return 0.0;
    return difference_kernel(n1, R, x) * difference_kernel(n2, R, y) * std::pow(v, -half_d);
  };
  const double top = 2.0 * R;
  double lambda = std::max(std::pow(top, a1), std::pow(top, a2));
  auto side = [&](double lam, double a) { return std::min(top, std::pow(lam, 1.0 / a)); };
  QuadOptions outer;
  outer.rel_tol = 1e-9;
  outer.grading_levels = 24;
  outer.parallel = true;
  QuadOptions inner = outer;
  inner.parallel = false;
  const double zero[] = {0.0};

  ExistIntegralResult out;
  std::vector<double> values;
  for (int k = 0; k < 400 && lambda * lambda >= cutoff; ++k) {
    const double next = 0.5 * lambda;
    const double ak = side(lambda, a1), bk = side(lambda, a2);
    const double an = side(next, a1), bn = side(next, a2);
    QuadResult shell;
    if (ak > an) shell += integrate2d(f, an, ak, 0.0, bk, outer, inner, {}, zero);
    if (bk > bn) shell += integrate2d(f, 0.0, an, bn, bk, outer, inner, zero, {});
    out.integral.abs_error += shell.abs_error;
    out.integral.evaluations += shell.evaluations;
    out.integral.converged = out.integral.converged && shell.converged;
    values.push_back(shell.value);
    lambda = next;
  }
  out.shells = values;
  const std::size_t m = values.size();
  if (m < 6) throw std::invalid_argument("exist_integral_quad: cutoff too coarse for a decay estimate");
  std::vector<double> rates;
  for (std::size_t k = m - 4; k + 1 < m; ++k) rates.push_back(std::log2(values[k] / values[k + 1]));
  out.decay_exponent = mean(rates);
  out.finite = out.decay_exponent > kDecayFloor;
  double total = pairwise_sum(values);
  if (out.finite) {
    const double ratio = std::exp2(-out.decay_exponent);
    const double tail = values.back() * ratio / (1.0 - ratio);
    total += tail;
    out.integral.abs_error += std::abs(tail);
  }
  out.integral.value = total;
  return out;
}

/// The smoothed family int int k1(x) k2(y) (eps + x^{2a1} + y^{2a2})^{-d/2},
/// whose eps -> 0 limit is the existence integral.
inline MomentQuadResult exist_integral_smoothed(const ProblemSpec& spec, double R, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
  const double a1 = spec.alpha1(), a2 = spec.alpha2(), half_d = 0.5 * spec.d();
  auto f = [&](double x, double y) {
    return difference_kernel(spec.n1(), R, x) * difference_kernel(spec.n2(), R, y) *
           std::pow(eps + pow2h(x, a1) + pow2h(y, a2), -half_d);
  };
  QuadOptions outer = detail::outer_options();
  QuadOptions inner = detail::inner_options();
  const double zero[] = {0.0};
  return integrate2d(f, 0.0, 2.0 * R, 0.0, 2.0 * R, outer, inner, zero, zero);
}

}  // namespace fraclt

#pragma once

// Adaptive Gauss-Kronrod quadrature with geometric grading toward declared
// singular points, nested multidimensional integration and Gauss-Legendre
// tensor rules.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <numbers>
#include <queue>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "fraclt/parallel.hpp"

namespace fraclt {

struct QuadOptions {
  double rel_tol = 1e-10;
  double abs_tol = 1e-300;
  int max_intervals = 2000;
  /// Number of geometric breakpoints placed toward each singular point.
  int grading_levels = 40;
  /// Spread top-level pieces over worker threads.
  bool parallel = false;
};

struct QuadResult {
  double value = 0.0;
  double abs_error = 0.0;
  long evaluations = 0;
  bool converged = true;

  QuadResult& operator+=(const QuadResult& o) {
    value += o.value;
    abs_error += o.abs_error;
    evaluations += o.evaluations;
    converged = converged && o.converged;
    return *this;
  }
};

namespace detail {

inline constexpr double kXgk[11] = {
    0.995657163025808080735527280689003, 0.973906528517171720077964012084452,
    0.930157491355708226001207180059508, 0.865063366688984510732096688423493,
    0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
    0.562757134668604683339000099272694, 0.433395394129247190799265943165784,
    0.294392862701460198131126603103866, 0.148874338981631210884826001129720,
    0.000000000000000000000000000000000};
inline constexpr double kWgk[11] = {
    0.011694638867371874278064396062192, 0.032558162307964727478818972459390,
    0.054755896574351996031381300244580, 0.075039674810919952767043140916190,
    0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
    0.123491976262065851077600340279890, 0.134709217311473325928054001771707,
    0.142775938577060080797094273138717, 0.147739104901338491374841515972068,
    0.149445554002916905664936468389821};
inline constexpr double kWg[5] = {
    0.066671344308688137593568809893332, 0.149451349150580593145776339657697,
    0.219086362515982043995534934228163, 0.269266719309996355091226921569469,
    0.295524224714752870173892994651338};

struct Segment {
  double a, b, value, error;
  bool operator<(const Segment& o) const { return error < o.error; }
};

}  // namespace detail

/// 21-point Gauss-Kronrod rule on [a, b] with the QUADPACK error heuristic.
template <class F>
QuadResult gauss_kronrod21(F&& f, double a, double b) {
  using namespace detail;
  const double center = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  const double fc = f(center);
  double resg = 0.0;
  double resk = kWgk[10] * fc;
  double resabs = std::abs(resk);
  double fv1[10], fv2[10];
  for (int j = 0; j < 10; ++j) {
    const double dx = half * kXgk[j];
    const double f1 = f(center - dx);
    const double f2 = f(center + dx);
    fv1[j] = f1;
    fv2[j] = f2;
    resk += kWgk[j] * (f1 + f2);
    resabs += kWgk[j] * (std::abs(f1) + std::abs(f2));
    if (j % 2 == 1) resg += kWg[j / 2] * (f1 + f2);
  }
  const double reskh = 0.5 * resk;
  double resasc = kWgk[10] * std::abs(fc - reskh);
  for (int j = 0; j < 10; ++j) resasc += kWgk[j] * (std::abs(fv1[j] - reskh) + std::abs(fv2[j] - reskh));
  const double result = resk * half;
  resabs *= std::abs(half);
  resasc *= std::abs(half);
  double err = std::abs((resk - resg) * half);
  if (resasc != 0.0 && err != 0.0) err = resasc * std::min(1.0, std::pow(200.0 * err / resasc, 1.5));
  constexpr double kEps = std::numeric_limits<double>::epsilon();
  if (resabs > std::numeric_limits<double>::min() / (50.0 * kEps))
    err = std::max(50.0 * kEps * resabs, err);
  return {result, err, 21, std::isfinite(result)};
}

/// Globally adaptive bisection on a single interval.
template <class F>
QuadResult integrate_interval(F&& f, double a, double b, const QuadOptions& opt) {
  if (a == b) return {};
  QuadResult first = gauss_kronrod21(f, a, b);
  std::priority_queue<detail::Segment> heap;
  heap.push({a, b, first.value, first.abs_error});
  double total = first.value, total_err = first.abs_error;
  long evals = first.evaluations;
  int intervals = 1;
  bool converged = true;
  while (total_err > std::max(opt.abs_tol, opt.rel_tol * std::abs(total))) {
    if (intervals >= opt.max_intervals) {
      converged = false;
      break;
    }
    const detail::Segment worst = heap.top();
    const double mid = 0.5 * (worst.a + worst.b);
    // Below this width the outer Kronrod nodes round onto the endpoints, where
    // an interior singularity would be evaluated.
    const double floor = 1e-12 * std::max(std::abs(worst.a), std::abs(worst.b));
    if (!(mid > worst.a && mid < worst.b) || worst.b - worst.a <= floor) {
      converged = false;
      break;
    }
    heap.pop();
    const QuadResult left = gauss_kronrod21(f, worst.a, mid);
    const QuadResult right = gauss_kronrod21(f, mid, worst.b);
    evals += 42;
    heap.push({worst.a, mid, left.value, left.abs_error});
    heap.push({mid, worst.b, right.value, right.abs_error});
    ++intervals;
    total += left.value + right.value - worst.value;
    total_err += left.abs_error + right.abs_error - worst.error;
  }
  if (intervals > 1) {
    // Final sum in left-to-right order so the value does not depend on
    // the refinement history.
    std::vector<detail::Segment> segs;
    segs.reserve(heap.size());
    while (!heap.empty()) {
      segs.push_back(heap.top());
      heap.pop();
    }
    std::sort(segs.begin(), segs.end(), [](const auto& x, const auto& y) { return x.a < y.a; });
    total = 0.0;
    total_err = 0.0;
    for (const auto& s : segs) {
      total += s.value;
      total_err += s.error;
    }
  }
  return {total, total_err, evals, converged && std::isfinite(total)};
}

/// Breakpoints on [a, b] graded geometrically toward each singular point.
inline std::vector<double> graded_breakpoints(double a, double b, std::span<const double> singular,
                                              int levels) {
  std::vector<double> pts{a, b};
  for (double x0 : singular) {
    if (x0 < a || x0 > b) continue;
    pts.push_back(x0);
    double left = x0 - a, right = b - x0;
    for (int k = 0; k < levels; ++k) {
      left *= 0.5;
      right *= 0.5;
      if (left > 0.0) pts.push_back(x0 - left);
      if (right > 0.0) pts.push_back(x0 + right);
    }
  }
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  return pts;
}

/// Adaptive integral over [a, b]; the interval is first split at geometric
/// breakpoints toward the declared singular points, then each piece is refined
/// to the relative tolerance on its own.
template <class F>
QuadResult integrate(F&& f, double a, double b, const QuadOptions& opt = {},
                     std::span<const double> singular = {}) {
  if (a == b) return {};
  if (a > b) {
    QuadResult r = integrate(f, b, a, opt, singular);
    r.value = -r.value;
    return r;
  }
  const std::vector<double> pts = graded_breakpoints(a, b, singular, opt.grading_levels);
  const std::size_t pieces = pts.size() - 1;
  QuadOptions piece_opt = opt;
  piece_opt.abs_tol = opt.abs_tol / static_cast<double>(pieces);
  auto run = [&](std::size_t i) { return integrate_interval(f, pts[i], pts[i + 1], piece_opt); };
  std::vector<QuadResult> parts;
  if (opt.parallel) {
    parts = parallel_map(pieces, run);
  } else {
    parts.reserve(pieces);
    for (std::size_t i = 0; i < pieces; ++i) parts.push_back(run(i));
  }
  std::vector<double> values(pieces);
  QuadResult out;
  for (std::size_t i = 0; i < pieces; ++i) {
    values[i] = parts[i].value;
    out.abs_error += parts[i].abs_error;
    out.evaluations += parts[i].evaluations;
    out.converged = out.converged && parts[i].converged;
  }
  out.value = pairwise_sum(values);
  return out;
}

/// Iterated integral of f(x, y) over x in [ax, bx], y in [ay, by].
/// The reported error adds the outer error to the worst inner relative error
/// times the result.
template <class F>
QuadResult integrate2d(F&& f, double ax, double bx, double ay, double by, const QuadOptions& outer,
                       const QuadOptions& inner, std::span<const double> sing_x = {},
                       std::span<const double> sing_y = {}) {
  struct Tally {
    double worst_rel = 0.0;
    long evals = 0;
    bool ok = true;
  };
  // The outer integrand may run on several threads; keep per-thread tallies.
  std::vector<Tally> tallies(1);
  std::mutex m;
  auto g = [&](double x) {
    const QuadResult r = integrate([&](double y) { return f(x, y); }, ay, by, inner, sing_y);
    std::lock_guard lock(m);
    Tally& t = tallies[0];
    if (r.value != 0.0) t.worst_rel = std::max(t.worst_rel, r.abs_error / std::abs(r.value));
    t.evals += r.evaluations;
    t.ok = t.ok && r.converged;
    return r.value;
  };
  QuadResult out = integrate(g, ax, bx, outer, sing_x);
  out.abs_error += tallies[0].worst_rel * std::abs(out.value);
  out.evaluations = tallies[0].evals;
  out.converged = out.converged && tallies[0].ok;
  return out;
}

/// Gauss-Legendre nodes and weights on [-1, 1].
inline void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights) {
  if (n < 1) throw std::invalid_argument("gauss_legendre needs n >= 1");
  nodes.assign(n, 0.0);
  weights.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) p1 = x, p0 = 1.0;
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    nodes[i] = -x;
    nodes[n - 1 - i] = x;
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    weights[i] = w;
    weights[n - 1 - i] = w;
  }
}

// ---------------------------------------------------------------------------
// Generic problem description.

struct BoxDomain {
  std::vector<double> lo, hi;
};

struct BallDomain {
  std::vector<double> center;
  double radius = 1.0;
};

/// An integration problem in 1-3 dimensions over a box or a ball.
struct QuadProblem {
  int dimension = 1;
  std::function<double(std::span<const double>)> integrand;
  std::variant<BoxDomain, BallDomain> domain;
  double rel_tol = 1e-8;
  double abs_tol = 1e-14;
  /// Points where the integrand may be singular; each coordinate becomes a
  /// grading target on its axis.
  std::vector<std::vector<double>> singular_points;
};

namespace detail {

inline QuadResult nested_integrate(const QuadProblem& p, std::vector<double>& x, int level) {
  double lo = 0.0, hi = 0.0;
  if (const auto* box = std::get_if<BoxDomain>(&p.domain)) {
    lo = box->lo[level];
    hi = box->hi[level];
  } else {
    const auto& ball = std::get<BallDomain>(p.domain);
    double used = 0.0;
    for (int k = 0; k < level; ++k) used += (x[k] - ball.center[k]) * (x[k] - ball.center[k]);
    const double half = std::sqrt(std::max(0.0, ball.radius * ball.radius - used));
    lo = ball.center[level] - half;
    hi = ball.center[level] + half;
  }
  std::vector<double> sing;
  for (const auto& s : p.singular_points) sing.push_back(s[level]);
  QuadOptions opt;
  opt.rel_tol = p.rel_tol;
  opt.abs_tol = p.abs_tol;
  opt.grading_levels = 30;
  if (level + 1 == p.dimension) {
    return integrate(
        [&](double v) {
          x[level] = v;
          return p.integrand(x);
        },
        lo, hi, opt, sing);
  }
  long evals = 0;
  bool ok = true;
  double worst_rel = 0.0;
  QuadResult r = integrate(
      [&](double v) {
        x[level] = v;
        const QuadResult in = nested_integrate(p, x, level + 1);
        evals += in.evaluations;
        ok = ok && in.converged;
        if (in.value != 0.0) worst_rel = std::max(worst_rel, in.abs_error / std::abs(in.value));
        return in.value;
      },
      lo, hi, opt, sing);
  r.abs_error += worst_rel * std::abs(r.value);
  r.evaluations = evals;
  r.converged = r.converged && ok;
  return r;
}

}  // namespace detail

/// Adaptive integration of a QuadProblem. Non-convergence is reported via
/// QuadResult::converged, never thrown.
inline QuadResult quad_adaptive(const QuadProblem& p) {
  if (p.dimension < 1) throw std::invalid_argument("quadrature dimension must be >= 1");
  if (!(p.rel_tol > 0.0) || !(p.abs_tol > 0.0))
    throw std::invalid_argument("quadrature tolerances must be positive");
  if (!p.integrand) throw std::invalid_argument("quadrature problem has no integrand");
  std::size_t extent = 0;
  if (const auto* box = std::get_if<BoxDomain>(&p.domain)) {
    if (box->lo.size() != box->hi.size()) throw std::invalid_argument("box bounds mismatch");
    extent = box->lo.size();
  } else {
    extent = std::get<BallDomain>(p.domain).center.size();
  }
  if (extent != static_cast<std::size_t>(p.dimension))
    throw std::invalid_argument("domain dimension does not match problem dimension");
  for (const auto& s : p.singular_points)
    if (s.size() != extent) throw std::invalid_argument("singular point dimension mismatch");
  std::vector<double> x(p.dimension, 0.0);
  QuadResult r = detail::nested_integrate(p, x, 0);
  r.converged = r.converged && r.abs_error <= std::max(p.abs_tol, p.rel_tol * std::abs(r.value)) * 10;
  return r;
}

}  // namespace fraclt

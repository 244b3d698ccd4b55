#pragma once

// Finite-dimensional Gaussian machinery for fractional Brownian fields:
// covariance kernels, Cholesky factors, conditional variances and the
// algebraic identities behind the moment estimates.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/LU>

#include "fraclt/quadrature.hpp"
#include "fraclt/regime.hpp"

namespace fraclt {

using Vec = std::vector<double>;

/// A (p, q)-fractional Brownian motion: Hurst index gamma, p parameters,
/// q independent components.
struct FbmSpec {
  double gamma = 0.5;
  int p = 1;
  int q = 1;

  static FbmSpec make(double gamma, int p, int q) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("Hurst index must lie in (0,1)");
    if (p < 1 || q < 1) throw std::invalid_argument("fBm dimensions must be >= 1");
    return {gamma, p, q};
  }
};

/// Raised when a covariance matrix is not numerically positive definite.
class FactorizationError : public std::runtime_error {
 public:
  FactorizationError(const std::string& what, Eigen::Index pivot)
      : std::runtime_error(what + " (pivot " + std::to_string(pivot) + ")"), pivot_(pivot) {}
  Eigen::Index pivot() const { return pivot_; }

 private:
  Eigen::Index pivot_;
};

inline double norm(std::span<const double> u) {
  double s = 0.0;
  for (double x : u) s += x * x;
  return std::sqrt(s);
}

inline double distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// |x|^{2 gamma} with the convention 0^{2 gamma} = 0.
inline double pow2h(double x, double gamma) { return x == 0.0 ? 0.0 : std::pow(x, 2.0 * gamma); }

/// E[B(u1) B(u2)] = (|u1|^{2g} + |u2|^{2g} - |u1 - u2|^{2g}) / 2.
inline double fbm_cov(double gamma, std::span<const double> u1, std::span<const double> u2) {
  if (u1.size() != u2.size()) throw std::invalid_argument("fbm_cov: dimension mismatch");
  return 0.5 * (pow2h(norm(u1), gamma) + pow2h(norm(u2), gamma) - pow2h(distance(u1, u2), gamma));
}

inline double fbm_cov(const FbmSpec& spec, std::span<const double> u1, std::span<const double> u2) {
  if (u1.size() != static_cast<std::size_t>(spec.p) || u2.size() != static_cast<std::size_t>(spec.p))
    throw std::invalid_argument("fbm_cov: point dimension differs from p");
  return fbm_cov(spec.gamma, u1, u2);
}

/// A time point (s, t) of the difference field X(s,t) = B1(s) - B2(t).
struct TimePoint {
  Vec s;
  Vec t;
};

namespace detail {
inline void check_time_point(const ProblemSpec& spec, const TimePoint& a) {
  if (a.s.size() != static_cast<std::size_t>(spec.n1()) || a.t.size() != static_cast<std::size_t>(spec.n2()))
    throw std::invalid_argument("time point dimension does not match (n1, n2)");
}
}  // namespace detail

/// Covariance of one coordinate X0 of the difference field.
inline double x0_cov(const ProblemSpec& spec, const TimePoint& a, const TimePoint& b) {
  detail::check_time_point(spec, a);
  detail::check_time_point(spec, b);
  return fbm_cov(spec.alpha1(), a.s, b.s) + fbm_cov(spec.alpha2(), a.t, b.t);
}

/// E[(X0(a) - X0(b))^2] = |s - v|^{2 a1} + |t - w|^{2 a2}.
inline double increment_variance(const ProblemSpec& spec, const TimePoint& a, const TimePoint& b) {
  detail::check_time_point(spec, a);
  detail::check_time_point(spec, b);
  return pow2h(distance(a.s, b.s), spec.alpha1()) + pow2h(distance(a.t, b.t), spec.alpha2());
}

/// Symmetric covariance matrix.
class CovMatrix {
 public:
  CovMatrix() = default;
  explicit CovMatrix(Eigen::MatrixXd m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols()) throw std::invalid_argument("covariance matrix must be square");
    const double scale = m_.size() > 0 ? std::max(1.0, m_.cwiseAbs().maxCoeff()) : 1.0;
    if (m_.size() > 0 && (m_ - m_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
      throw std::invalid_argument("covariance matrix must be symmetric");
  }

  Eigen::Index order() const { return m_.rows(); }
  const Eigen::MatrixXd& entries() const { return m_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }

 private:
  Eigen::MatrixXd m_;
};

/// Covariance of a (scalar) fBm at the given points.
inline CovMatrix fbm_cov_matrix(double gamma, const std::vector<Vec>& pts) {
  const auto n = static_cast<Eigen::Index>(pts.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) m(i, j) = m(j, i) = fbm_cov(gamma, pts[i], pts[j]);
  return CovMatrix(std::move(m));
}

/// Covariance of X0 at the given time points.
inline CovMatrix x0_cov_matrix(const ProblemSpec& spec, const std::vector<TimePoint>& pts) {
  const auto n = static_cast<Eigen::Index>(pts.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) m(i, j) = m(j, i) = x0_cov(spec, pts[i], pts[j]);
  return CovMatrix(std::move(m));
}

/// Pivots below this fraction of the largest diagonal entry are treated as a
/// degenerate configuration.
inline constexpr double kPivotFloor = 1e-12;

/// Lower-triangular L with L L^T = m. Throws FactorizationError naming the
/// first pivot that falls below kPivotFloor * max diag.
inline Eigen::MatrixXd cholesky(const CovMatrix& m) {
  const Eigen::MatrixXd& a = m.entries();
  const Eigen::Index n = a.rows();
  if (n == 0) return Eigen::MatrixXd(0, 0);
  const double floor = kPivotFloor * std::max(a.diagonal().maxCoeff(), 0.0);
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) {
    Eigen::MatrixXd l = llt.matrixL();
    for (Eigen::Index k = 0; k < n; ++k)
      if (!(l(k, k) * l(k, k) > floor)) throw FactorizationError("covariance not positive definite", k);
    return l;
  }
  // Locate the failing pivot with an unblocked factorization.
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double pivot = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(pivot > floor)) throw FactorizationError("covariance not positive definite", j);
    l(j, j) = std::sqrt(pivot);
    for (Eigen::Index i = j + 1; i < n; ++i)
      l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
  }
  throw FactorizationError("covariance not positive definite", n - 1);
}

/// Var(Z_target | Z_given) as the last squared pivot of the Cholesky factor
/// of the covariance restricted to (given..., target).
inline double cond_var(const CovMatrix& m, Eigen::Index target, std::span<const Eigen::Index> given) {
  const Eigen::Index n = m.order();
  if (target < 0 || target >= n) throw std::out_of_range("cond_var: target index out of range");
  for (auto g : given) {
    if (g < 0 || g >= n) throw std::out_of_range("cond_var: conditioning index out of range");
    if (g == target) throw std::invalid_argument("cond_var: target is in the conditioning set");
  }
  if (given.empty()) return m(target, target);
  const auto k = static_cast<Eigen::Index>(given.size());
  Eigen::MatrixXd sub(k, k);
  Eigen::VectorXd cross(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) sub(i, j) = m(given[i], given[j]);
    cross(i) = m(given[i], target);
  }
  Eigen::MatrixXd l;
  try {
    l = cholesky(CovMatrix(sub));
  } catch (const FactorizationError& e) {
    throw FactorizationError("cond_var: singular conditioning set", given[e.pivot()]);
  }
  const Eigen::VectorXd w = l.triangularView<Eigen::Lower>().solve(cross);
  return std::max(m(target, target) - w.squaredNorm(), 0.0);
}

/// |det(m) - Var(Z1) prod_k Var(Z_k | Z_1..Z_{k-1})| / |det(m)|, with the
/// determinant taken from an LU factorization.
inline double detcov_chain_check(const CovMatrix& m) {
  const Eigen::Index n = m.order();
  if (n == 0) throw std::invalid_argument("detcov_chain_check: empty matrix");
  const double det = m.entries().partialPivLu().determinant();
  if (!(det > 0.0)) throw FactorizationError("detcov_chain_check: singular matrix", 0);
  double chain = m(0, 0);
  std::vector<Eigen::Index> prefix{0};
  for (Eigen::Index k = 1; k < n; ++k) {
    chain *= cond_var(m, k, prefix);
    prefix.push_back(k);
  }
  return std::abs(det - chain) / std::abs(det);
}

/// Paired configuration (s_i, t_i), i = 1..n, of the two parameter spaces.
struct PointConfig {
  std::vector<Vec> first;
  std::vector<Vec> second;

  std::size_t size() const { return first.size(); }

  void validate(const ProblemSpec& spec) const {
    if (first.size() != second.size()) throw std::invalid_argument("PointConfig: unpaired points");
    for (const auto& s : first)
      if (s.size() != static_cast<std::size_t>(spec.n1())) throw std::invalid_argument("PointConfig: s dimension");
    for (const auto& t : second)
      if (t.size() != static_cast<std::size_t>(spec.n2())) throw std::invalid_argument("PointConfig: t dimension");
    auto distinct = [](const std::vector<Vec>& v, const char* which) {
      for (std::size_t i = 0; i < v.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
          if (v[i] == v[j]) throw std::invalid_argument(std::string("PointConfig: duplicate ") + which + " point");
    };
    distinct(first, "first-field");
    distinct(second, "second-field");
  }
};

struct SplitCheck {
  double lhs = 0.0;  ///< Var(X0(v,w) | X0(s_i,t_i))
  double rhs = 0.0;  ///< Var(B1(v) | B1(s_i)) + Var(B2(w) | B2(t_i))
  bool holds(double tol = 1e-10) const { return lhs >= rhs - tol; }
};

/// Conditional-variance splitting for the difference field: the conditional
/// variance of X0 dominates the sum of the two fields' conditional variances.
inline SplitCheck slnd_split_check(const ProblemSpec& spec, const PointConfig& config, const TimePoint& target) {
  config.validate(spec);
  detail::check_time_point(spec, target);
  const std::size_t n = config.size();
  for (std::size_t i = 0; i < n; ++i)
    if (config.first[i] == target.s && config.second[i] == target.t)
      throw std::invalid_argument("slnd_split_check: target coincides with a configuration point");

  std::vector<TimePoint> pts;
  for (std::size_t i = 0; i < n; ++i) pts.push_back({config.first[i], config.second[i]});
  pts.push_back(target);
  std::vector<Eigen::Index> given(n);
  for (std::size_t i = 0; i < n; ++i) given[i] = static_cast<Eigen::Index>(i);

  SplitCheck out;
  out.lhs = cond_var(x0_cov_matrix(spec, pts), static_cast<Eigen::Index>(n), given);

  auto field_part = [&](double gamma, std::vector<Vec> points, const Vec& u) {
    // A conditioning point equal to the target makes the conditional variance 0.
    for (const auto& p : points)
      if (p == u) return 0.0;
    points.push_back(u);
    return cond_var(fbm_cov_matrix(gamma, points), static_cast<Eigen::Index>(n), given);
  };
  out.rhs = field_part(spec.alpha1(), config.first, target.s) + field_part(spec.alpha2(), config.second, target.t);
  return out;
}

/// Ratio det Cov(X0 at config) / prod_j [Var(B1(s_j)|B1(s_<j)) + Var(B2(t_j)|B2(t_<j))].
/// The product lower bound asserts this stays bounded below by c^n.
inline double detcov_product_ratio(const ProblemSpec& spec, const PointConfig& config) {
  config.validate(spec);
  const std::size_t n = config.size();
  std::vector<TimePoint> pts;
  for (std::size_t i = 0; i < n; ++i) pts.push_back({config.first[i], config.second[i]});
  const CovMatrix cx = x0_cov_matrix(spec, pts);
  const CovMatrix c1 = fbm_cov_matrix(spec.alpha1(), config.first);
  const CovMatrix c2 = fbm_cov_matrix(spec.alpha2(), config.second);
  const double det = cx.entries().partialPivLu().determinant();
  double prod = 1.0;
  std::vector<Eigen::Index> prefix;
  for (std::size_t j = 0; j < n; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    prod *= cond_var(c1, jj, prefix) + cond_var(c2, jj, prefix);
    prefix.push_back(jj);
  }
  return det / prod;
}

struct IdentityCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double rel_diff() const { return std::abs(lhs - rhs) / std::abs(rhs); }
};

/// Both sides of the Gaussian integral identity
///   int_{R^n} |v1|^power exp(-Var(sum v_j Z_j)/2) dv
///     = (2 pi)^{(n-1)/2} det(m)^{-1/2} int |v/sigma1|^power e^{-v^2/2} dv,
/// sigma1^2 = Var(Z1 | Z2..Zn). The left side uses a tensor Gauss-Legendre
/// rule with `quad_points` nodes per axis on a truncated box; the first axis
/// is split at 0 and squared-graded to resolve |v1|^power.
inline IdentityCheck gaussian_moment_identity_check(double power, const CovMatrix& m, int quad_points = 48) {
  const Eigen::Index n = m.order();
  if (n < 1 || n > 3) throw std::invalid_argument("gaussian_moment_identity_check supports orders 1..3");
  if (power < 0.0) throw std::invalid_argument("gaussian_moment_identity_check: power must be >= 0");
  if (quad_points < 2) throw std::invalid_argument("gaussian_moment_identity_check: need >= 2 quadrature points");
  cholesky(m);  // rejects singular input
  const Eigen::MatrixXd& a = m.entries();
  const double det = a.partialPivLu().determinant();
  const Eigen::MatrixXd inv = a.inverse();

  std::vector<Eigen::Index> rest;
  for (Eigen::Index k = 1; k < n; ++k) rest.push_back(k);
  const double sigma1 = std::sqrt(cond_var(m, 0, rest));

  IdentityCheck out;
  out.rhs = std::pow(2.0 * std::numbers::pi, 0.5 * (n - 1)) / std::sqrt(det) * std::pow(sigma1, -power) *
            std::pow(2.0, 0.5 * (power + 1.0)) * std::tgamma(0.5 * (power + 1.0));

  std::vector<double> gx, gw;
  gauss_legendre(quad_points, gx, gw);
  // Per-axis nodes/weights on [-h_k, h_k], h_k = 9 marginal standard deviations.
  std::vector<std::vector<double>> nodes(n), weights(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double h = 9.0 * std::sqrt(inv(k, k));
    if (k == 0) {
      // v = +-h u^2 on each half: smooths the |v|^power cusp at the origin.
      for (int side = -1; side <= 1; side += 2)
        for (int i = 0; i < quad_points; ++i) {
          const double u = 0.5 * (gx[i] + 1.0);
          nodes[k].push_back(side * h * u * u);
          weights[k].push_back(0.5 * gw[i] * 2.0 * h * u);
        }
    } else {
      for (int i = 0; i < quad_points; ++i) {
        nodes[k].push_back(h * gx[i]);
        weights[k].push_back(h * gw[i]);
      }
    }
  }
  auto quad_form = [&](const double* v) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) s += v[i] * a(i, j) * v[j];
    return s;
  };
  double total = 0.0;
  double v[3] = {0.0, 0.0, 0.0};
  const std::size_t n0 = nodes[0].size();
  const std::size_t n1 = n > 1 ? nodes[1].size() : 1;
  const std::size_t n2 = n > 2 ? nodes[2].size() : 1;
  for (std::size_t i = 0; i < n0; ++i) {
    v[0] = nodes[0][i];
    const double g = std::pow(std::abs(v[0]), power);
    double acc1 = 0.0;
    for (std::size_t j = 0; j < n1; ++j) {
      double w1 = 1.0;
      if (n > 1) { v[1] = nodes[1][j]; w1 = weights[1][j]; }
      double acc2 = 0.0;
      for (std::size_t k = 0; k < n2; ++k) {
        double w2 = 1.0;
        if (n > 2) { v[2] = nodes[2][k]; w2 = weights[2][k]; }
        acc2 += w2 * std::exp(-0.5 * quad_form(v));
      }
      acc1 += w1 * acc2;
    }
    total += weights[0][i] * g * acc1;
  }
  out.lhs = total;
  return out;
}

}  // namespace fraclt

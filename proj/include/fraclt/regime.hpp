#pragma once

// Closed-form regime constants for the intersection local time of two
// independent fractional Brownian motions B^{a1}: R^{n1} -> R^d and
// B^{a2}: R^{n2} -> R^d.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace fraclt {

/// Exact rational p/q with q > 0, used for Hurst indices given as "a/b".
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }

  static Rational make(std::int64_t p, std::int64_t q) {
    if (q == 0) throw std::invalid_argument("rational with zero denominator");
    if (q < 0) { p = -p; q = -q; }
    const auto g = std::gcd(p < 0 ? -p : p, q);
    return {p / g, q / g};
  }

  friend bool operator==(const Rational&, const Rational&) = default;
};

/// A Hurst index with an optional exact representation.
struct Hurst {
  double value = 0.5;
  std::optional<Rational> exact;

  Hurst() = default;
  Hurst(double v) : value(v) {}  // NOLINT(implicit)
  Hurst(Rational r) : value(r.value()), exact(r) {}  // NOLINT(implicit)

  /// Parses "0.25", "1/4" or "  3/8 ".
  static Hurst parse(std::string_view text) {
    std::string s(text);
    s.erase(0, s.find_first_not_of(" \t"));
    s.erase(s.find_last_not_of(" \t") + 1);
    if (s.empty()) throw std::invalid_argument("empty Hurst index");
    const auto slash = s.find('/');
    try {
      if (slash == std::string::npos) {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return Hurst(v);
      }
      std::size_t used_p = 0, used_q = 0;
      const std::string ps = s.substr(0, slash), qs = s.substr(slash + 1);
      const long long p = std::stoll(ps, &used_p);
      const long long q = std::stoll(qs, &used_q);
      if (used_p != ps.size() || used_q != qs.size()) throw std::invalid_argument(s);
      return Hurst(Rational::make(p, q));
    } catch (const std::logic_error&) {
      throw std::invalid_argument("malformed Hurst index '" + s + "'");
    }
  }

  std::string to_string() const {
    if (exact) return std::to_string(exact->num) + "/" + std::to_string(exact->den);
    std::ostringstream os;
    os.precision(17);
    os << value;
    return os.str();
  }
};

namespace detail {

inline constexpr double kRelTol = 1e-12;

inline int sign_with_tolerance(double lhs, double rhs) {
  const double scale = std::max({std::abs(lhs), std::abs(rhs), 1.0});
  const double diff = lhs - rhs;
  if (std::abs(diff) <= kRelTol * scale) return 0;
  return diff > 0 ? 1 : -1;
}

inline int sign_of(__int128 v) { return v > 0 ? 1 : (v < 0 ? -1 : 0); }

}  // namespace detail

/// The tuple (n1, n2, alpha1, alpha2, d). Construction enforces alpha1 <= alpha2
/// by swapping the two fields when needed and records the swap.
class ProblemSpec {
 public:
  ProblemSpec() = default;

  static ProblemSpec make(int n1, int n2, Hurst alpha1, Hurst alpha2, int d) {
    if (n1 < 1 || n2 < 1) throw std::invalid_argument("parameter dimensions must be >= 1");
    if (d < 1) throw std::invalid_argument("ambient dimension must be >= 1");
    for (const auto& h : {alpha1, alpha2}) {
      if (!(h.value > 0.0 && h.value < 1.0))
        throw std::invalid_argument("Hurst index must lie in (0,1), got " + h.to_string());
    }
    ProblemSpec s;
    s.d_ = d;
    if (less(alpha2, alpha1)) {
      s.n1_ = n2; s.n2_ = n1; s.a1_ = alpha2; s.a2_ = alpha1; s.swapped_ = true;
    } else {
      s.n1_ = n1; s.n2_ = n2; s.a1_ = alpha1; s.a2_ = alpha2;
    }
    return s;
  }

  /// Parses "n1,n2,a1,a2,d" where the Hurst indices may be rationals.
  static ProblemSpec parse(std::string_view text) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : text) {
      if (c == ',') { parts.push_back(cur); cur.clear(); }
      else cur.push_back(c);
    }
    parts.push_back(cur);
    if (parts.size() != 5)
      throw std::invalid_argument("spec must have the form n1,n2,alpha1,alpha2,d");
    auto as_int = [](const std::string& p, const char* what) {
      std::size_t used = 0;
      int v = 0;
      try { v = std::stoi(p, &used); } catch (const std::logic_error&) { used = 0; }
      std::string rest = p.substr(used);
      if (used == 0 || rest.find_first_not_of(" \t") != std::string::npos)
        throw std::invalid_argument(std::string("malformed ") + what + " '" + p + "'");
      return v;
    };
    return make(as_int(parts[0], "n1"), as_int(parts[1], "n2"), Hurst::parse(parts[2]),
                Hurst::parse(parts[3]), as_int(parts[4], "d"));
  }

  int n1() const { return n1_; }
  int n2() const { return n2_; }
  int n() const { return n1_ + n2_; }
  int d() const { return d_; }
  double alpha1() const { return a1_.value; }
  double alpha2() const { return a2_.value; }
  const Hurst& hurst1() const { return a1_; }
  const Hurst& hurst2() const { return a2_; }
  bool swapped() const { return swapped_; }

  /// n1/alpha1 + n2/alpha2 - d.
  double scaling_exponent() const { return n1_ / a1_.value + n2_ / a2_.value - d_; }

  /// Sign of n1/alpha1 + n2/alpha2 - d, exact for rational input.
  int existence_sign() const {
    if (a1_.exact && a2_.exact) {
      const __int128 p1 = a1_.exact->num, q1 = a1_.exact->den;
      const __int128 p2 = a2_.exact->num, q2 = a2_.exact->den;
      return detail::sign_of(n1_ * q1 * p2 + n2_ * q2 * p1 - d_ * p1 * p2);
    }
    return detail::sign_with_tolerance(n1_ / a1_.value + n2_ / a2_.value, d_);
  }

  /// Sign of n1 - alpha1 d (same as the sign of n1/alpha1 - d).
  int first_field_sign() const { return field_sign(n1_, a1_); }
  /// Sign of n2 - alpha2 d.
  int second_field_sign() const { return field_sign(n2_, a2_); }

  std::string to_string() const {
    return std::to_string(n1_) + "," + std::to_string(n2_) + "," + a1_.to_string() + "," +
           a2_.to_string() + "," + std::to_string(d_);
  }

 private:
  static bool less(const Hurst& a, const Hurst& b) {
    if (a.exact && b.exact)
      return static_cast<__int128>(a.exact->num) * b.exact->den <
             static_cast<__int128>(b.exact->num) * a.exact->den;
    return a.value < b.value;
  }

  int field_sign(int n, const Hurst& a) const {
    if (a.exact)
      return detail::sign_of(static_cast<__int128>(n) * a.exact->den -
                             static_cast<__int128>(a.exact->num) * d_);
    return detail::sign_with_tolerance(n, a.value * d_);
  }

  int n1_ = 1, n2_ = 1, d_ = 1;
  Hurst a1_{0.5}, a2_{0.5};
  bool swapped_ = false;
};

/// Derived constants. Optional fields are empty (undefined) when the
/// intersection local time does not exist.
struct RegimeReport {
  bool exists = false;
  bool critical = false;
  bool log_case = false;
  bool swapped = false;
  double scaling_exponent = 0.0;
  std::optional<int> tau;
  std::optional<double> beta_tau;
  std::optional<double> eta_tau;
  std::optional<double> dim_m2;
  std::optional<double> dim_d2;
  /// Which branch of the intersection-point dimension table applies (1..4).
  std::optional<int> dim_d2_case;
};

inline RegimeReport classify(const ProblemSpec& spec) {
  RegimeReport r;
  r.swapped = spec.swapped();
  r.scaling_exponent = spec.scaling_exponent();
  const int existence = spec.existence_sign();
  r.exists = existence > 0;
  r.critical = existence == 0;
  const int s1 = spec.first_field_sign();
  const int s2 = spec.second_field_sign();
  r.log_case = s1 == 0;
  if (!r.exists) return r;

  const double n1 = spec.n1(), n2 = spec.n2(), a1 = spec.alpha1(), a2 = spec.alpha2();
  const double d = spec.d();
  if (s1 > 0) {
    r.tau = 1;
    r.beta_tau = n1 + n2 - a1 * d;
    r.eta_tau = a1 * d / n1;
  } else {
    r.tau = 2;
    r.beta_tau = n2 + a2 / a1 * n1 - a2 * d;
    r.eta_tau = a2 * d / n2 + 1.0 - a2 * n1 / (a1 * n2);
  }
  if (r.log_case) {
    // Exact values on this boundary; avoids round-off in the formulas above.
    r.beta_tau = n2;
    r.eta_tau = 1.0;
  }
  r.dim_m2 = r.beta_tau;

  if (s1 > 0 && s2 > 0) {
    r.dim_d2 = d;
    r.dim_d2_case = 1;
  } else if (s1 > 0) {
    r.dim_d2 = n2 / a2;
    r.dim_d2_case = 2;
  } else if (s2 > 0) {
    r.dim_d2 = n1 / a1;
    r.dim_d2_case = 3;
  } else {
    r.dim_d2 = n1 / a1 + n2 / a2 - d;
    r.dim_d2_case = 4;
  }
  return r;
}

/// The modulus phi_1(r) governing the local Hölder behavior of the
/// intersection local time, for 0 < r < 1/e.
inline double phi1(const ProblemSpec& spec, double r) {
  if (!(r > 0.0 && r < std::exp(-1.0)))
    throw std::domain_error("phi1 requires 0 < r < 1/e");
  const RegimeReport rep = classify(spec);
  if (!rep.exists) throw std::domain_error("phi1 is undefined when the local time does not exist");
  const double ll = std::log(std::log(1.0 / r));
  if (!rep.log_case) return std::pow(r, *rep.beta_tau) * std::pow(ll, *rep.eta_tau);
  const double a1 = spec.alpha1(), a2 = spec.alpha2();
  const double expo = std::max(a2 / spec.n2() - a1 / spec.n1(), 0.0);
  return std::pow(r, spec.n2()) * ll *
         std::log(std::exp(1.0) + std::pow(ll, expo) / std::pow(r, a2 - a1));
}

inline nlohmann::json to_json(const RegimeReport& r) {
  auto opt = [](const auto& v) -> nlohmann::json {
    if (v) return *v;
    return "undefined";
  };
  return nlohmann::json{{"exists", r.exists},
                        {"critical", r.critical},
                        {"log_case", r.log_case},
                        {"swapped", r.swapped},
                        {"scaling_exponent", r.scaling_exponent},
                        {"tau", opt(r.tau)},
                        {"beta_tau", opt(r.beta_tau)},
                        {"eta_tau", opt(r.eta_tau)},
                        {"dim_m2", opt(r.dim_m2)},
                        {"dim_d2", opt(r.dim_d2)},
                        {"dim_d2_case", opt(r.dim_d2_case)}};
}

inline nlohmann::json to_json(const ProblemSpec& s) {
  return nlohmann::json{{"n1", s.n1()},
                        {"n2", s.n2()},
                        {"alpha1", s.hurst1().to_string()},
                        {"alpha2", s.hurst2().to_string()},
                        {"d", s.d()},
                        {"swapped", s.swapped()}};
}

}  // namespace fraclt

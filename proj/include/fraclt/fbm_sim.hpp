#pragma once

// Exact sampling of (p, q)-fractional Brownian fields on finite grids and of
// the difference field X(s,t) = B1(s) - B2(t).

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fftw3.h>
#include <nlohmann/json.hpp>

#include "fraclt/gaussian.hpp"
#include "fraclt/io.hpp"
#include "fraclt/regime.hpp"
#include "fraclt/rng.hpp"

namespace fraclt {

inline constexpr std::size_t kDefaultPointCap = 4096;

/// Rectangular product grid; node coordinates are listed per axis and points
/// are enumerated row-major (last axis fastest).
struct GridSpec {
  std::vector<std::vector<double>> axes;

  /// Closed grid on [0, R_i] with counts[i] nodes per axis (node 0 at the origin).
  static GridSpec uniform(const std::vector<int>& counts, const std::vector<double>& extents) {
    if (counts.empty() || counts.size() != extents.size())
      throw std::invalid_argument("GridSpec: counts and extents must be non-empty and match");
    GridSpec g;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] < 1) throw std::invalid_argument("GridSpec: per-axis counts must be positive");
      if (!(extents[i] > 0.0)) throw std::invalid_argument("GridSpec: extents must be positive");
      std::vector<double> axis(counts[i]);
      const double h = counts[i] > 1 ? extents[i] / (counts[i] - 1) : 0.0;
      for (int k = 0; k < counts[i]; ++k) axis[k] = k * h;
      g.axes.push_back(std::move(axis));
    }
    return g;
  }

  /// Cell midpoints of a regular partition of [lo_i, hi_i] into counts[i] cells.
  static GridSpec midpoints(const std::vector<int>& counts, const std::vector<double>& lo,
                            const std::vector<double>& hi) {
    if (counts.empty() || counts.size() != lo.size() || lo.size() != hi.size())
      throw std::invalid_argument("GridSpec: counts and bounds must match");
    GridSpec g;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] < 1 || !(hi[i] > lo[i])) throw std::invalid_argument("GridSpec: bad midpoint axis");
      const double h = (hi[i] - lo[i]) / counts[i];
      std::vector<double> axis(counts[i]);
      for (int k = 0; k < counts[i]; ++k) axis[k] = lo[i] + (k + 0.5) * h;
      g.axes.push_back(std::move(axis));
    }
    return g;
  }

  int p() const { return static_cast<int>(axes.size()); }

  std::size_t size() const {
    std::size_t n = 1;
    for (const auto& a : axes) n *= a.size();
    return axes.empty() ? 0 : n;
  }

  Vec point(std::size_t idx) const {
    Vec u(axes.size());
    for (std::size_t k = axes.size(); k-- > 0;) {
      u[k] = axes[k][idx % axes[k].size()];
      idx /= axes[k].size();
    }
    return u;
  }

  /// Uniform spacing of a one-axis grid starting at 0, if it has that form.
  std::optional<double> uniform_step_from_origin() const {
    if (axes.size() != 1 || axes[0].size() < 2 || axes[0][0] != 0.0) return std::nullopt;
    const auto& a = axes[0];
    const double h = a[1] - a[0];
    for (std::size_t k = 1; k < a.size(); ++k)
      if (std::abs(a[k] - k * h) > 1e-12 * std::max(1.0, std::abs(a.back()))) return std::nullopt;
    return h;
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

enum class SampleMethod { cholesky, fast1d };

inline const char* to_string(SampleMethod m) { return m == SampleMethod::cholesky ? "cholesky" : "fast1d"; }

inline SampleMethod sample_method_from_string(const std::string& s) {
  if (s == "cholesky") return SampleMethod::cholesky;
  if (s == "fast1d") return SampleMethod::fast1d;
  throw std::invalid_argument("unknown sample method '" + s + "'");
}

/// Values of a q-component field on a grid with generation provenance.
struct FieldSample {
  FbmSpec spec;
  GridSpec grid;
  std::vector<double> values;  ///< points x components, row-major
  std::uint64_t seed = 0;
  SampleMethod method = SampleMethod::cholesky;
  double jitter = 0.0;     ///< diagonal jitter used by the factorization, 0 if none
  bool fell_back = false;  ///< fast1d requested but the embedding was indefinite

  std::size_t points() const { return grid.size(); }
  double at(std::size_t point, int component) const {
    return values[point * static_cast<std::size_t>(spec.q) + static_cast<std::size_t>(component)];
  }
};

// ---------------------------------------------------------------------------
// Cholesky path with a shared factor cache.

struct GridFactor {
  Eigen::MatrixXd lower;
  std::vector<std::size_t> active;  ///< grid indices with nonzero variance
  double jitter = 0.0;
};

/// Factors keyed by (gamma, grid). Concurrent readers, exclusive insert.
class FactorCache {
 public:
  static FactorCache& global() {
    static FactorCache cache;
    return cache;
  }

  std::shared_ptr<const GridFactor> get(double gamma, const GridSpec& grid) {
    const std::string key = make_key(gamma, grid);
    {
      std::shared_lock lock(mutex_);
      if (auto it = entries_.find(key); it != entries_.end()) return it->second;
    }
    auto built = std::make_shared<const GridFactor>(build(gamma, grid));
    std::unique_lock lock(mutex_);
    auto [it, inserted] = entries_.emplace(key, std::move(built));
    return it->second;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }

  void clear() {
    std::unique_lock lock(mutex_);
    entries_.clear();
  }

  static GridFactor build(double gamma, const GridSpec& grid) {
    GridFactor f;
    std::vector<Vec> pts;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      Vec u = grid.point(i);
      if (norm(u) == 0.0) continue;  // B(0) = 0 exactly
      f.active.push_back(i);
      pts.push_back(std::move(u));
    }
    const CovMatrix cov = fbm_cov_matrix(gamma, pts);
    try {
      f.lower = cholesky(cov);
    } catch (const FactorizationError&) {
      constexpr double kJitter = 1e-10;
      Eigen::MatrixXd jittered = cov.entries();
      jittered.diagonal().array() += kJitter;
      f.lower = cholesky(CovMatrix(std::move(jittered)));
      f.jitter = kJitter;
    }
    return f;
  }

 private:
  static std::string make_key(double gamma, const GridSpec& grid) {
    std::string key(reinterpret_cast<const char*>(&gamma), sizeof gamma);
    for (const auto& axis : grid.axes) {
      const auto n = static_cast<std::uint64_t>(axis.size());
      key.append(reinterpret_cast<const char*>(&n), sizeof n);
      key.append(reinterpret_cast<const char*>(axis.data()), axis.size() * sizeof(double));
    }
    return key;
  }

  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<const GridFactor>> entries_;
};

inline void check_cap(const GridSpec& grid, std::size_t cap) {
  if (grid.size() == 0) throw std::invalid_argument("empty grid");
  if (grid.size() > cap)
    throw std::length_error("grid has " + std::to_string(grid.size()) + " points, cap is " + std::to_string(cap));
}

/// Exact sample via a cached Cholesky factor of the grid covariance.
/// Component c uses random stream (seed, c).
inline FieldSample sample_fbm(const FbmSpec& spec, const GridSpec& grid, std::uint64_t seed,
                              std::size_t cap = kDefaultPointCap) {
  if (grid.p() != spec.p) throw std::invalid_argument("grid dimension differs from fBm parameter dimension");
  check_cap(grid, cap);
  const auto factor = FactorCache::global().get(spec.gamma, grid);
  FieldSample out{spec, grid, std::vector<double>(grid.size() * spec.q, 0.0), seed, SampleMethod::cholesky,
                  factor->jitter, false};
  const auto m = static_cast<Eigen::Index>(factor->active.size());
  Eigen::VectorXd z(m);
  for (int c = 0; c < spec.q; ++c) {
    RandomStream(seed, static_cast<std::uint64_t>(c)).fill_normal(std::span<double>(z.data(), z.size()));
    const Eigen::VectorXd x = factor->lower.triangularView<Eigen::Lower>() * z;
    for (Eigen::Index k = 0; k < m; ++k) out.values[factor->active[k] * spec.q + c] = x(k);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Circulant embedding for p = 1.

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

/// Autocovariance of fractional Gaussian noise with spacing `step`.
inline double fgn_autocov(double gamma, double step, std::size_t lag) {
  const double k = static_cast<double>(lag);
  const double h2 = 2.0 * gamma;
  const double r = 0.5 * (std::pow(k + 1.0, h2) - 2.0 * std::pow(k, h2) + std::pow(std::abs(k - 1.0), h2));
  return r * std::pow(step, h2);
}

struct FftwBuffer {
  explicit FftwBuffer(std::size_t bytes) : ptr(fftw_malloc(bytes)) {
    if (!ptr) throw std::bad_alloc();
  }
  ~FftwBuffer() { fftw_free(ptr); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  void* ptr;
};

/// Eigenvalues of the circulant embedding of size 2m of the fGn covariance.
inline std::vector<double> circulant_eigenvalues(double gamma, double step, std::size_t m) {
  const std::size_t big = 2 * m;
  FftwBuffer in(sizeof(double) * big), out(sizeof(fftw_complex) * (m + 1));
  auto* c = static_cast<double*>(in.ptr);
  auto* spec = static_cast<fftw_complex*>(out.ptr);
  for (std::size_t k = 0; k <= m; ++k) c[k] = fgn_autocov(gamma, step, k);
  for (std::size_t k = 1; k < m; ++k) c[big - k] = c[k];
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(big), c, spec, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  std::vector<double> lambda(m + 1);
  for (std::size_t k = 0; k <= m; ++k) lambda[k] = spec[k][0];
  std::lock_guard lock(fftw_planner_mutex());
  fftw_destroy_plan(plan);
  return lambda;
}

}  // namespace detail

/// fBm at nodes k * step, k = 0..n_points-1, as the cumulative sum of
/// fractional Gaussian noise generated by circulant embedding. Falls back to
/// the Cholesky sampler (recorded in provenance) if the embedding has a
/// negative eigenvalue.
inline FieldSample sample_fast1d(double gamma, std::size_t n_points, double step, int q, std::uint64_t seed) {
  const FbmSpec spec = FbmSpec::make(gamma, 1, q);
  if (n_points < 1) throw std::invalid_argument("sample_fast1d: need at least one point");
  if (!(step > 0.0)) throw std::invalid_argument("sample_fast1d: step must be positive");
  GridSpec grid;
  grid.axes.emplace_back(n_points);
  for (std::size_t k = 0; k < n_points; ++k) grid.axes[0][k] = static_cast<double>(k) * step;

  FieldSample out{spec, grid, std::vector<double>(n_points * q, 0.0), seed, SampleMethod::fast1d, 0.0, false};
  const std::size_t m = n_points - 1;
  if (m == 0) return out;

  std::vector<double> lambda = detail::circulant_eigenvalues(gamma, step, m);
  const double lmax = *std::max_element(lambda.begin(), lambda.end());
  for (double& l : lambda) {
    if (l < -1e-10 * lmax) {
      FieldSample fb = sample_fbm(spec, grid, seed, std::max(kDefaultPointCap, n_points));
      fb.fell_back = true;
      return fb;
    }
    l = std::max(l, 0.0);
  }

  const std::size_t big = 2 * m;
  const double inv_big = 1.0 / static_cast<double>(big);
  detail::FftwBuffer in(sizeof(fftw_complex) * (m + 1)), outbuf(sizeof(double) * big);
  auto* xk = static_cast<fftw_complex*>(in.ptr);
  auto* y = static_cast<double*>(outbuf.ptr);
  fftw_plan plan;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan = fftw_plan_dft_c2r_1d(static_cast<int>(big), xk, y, FFTW_ESTIMATE);
  }
  std::vector<double> z(big);
  for (int c = 0; c < q; ++c) {
    RandomStream(seed, static_cast<std::uint64_t>(c)).fill_normal(z);
    // z[0], z[1] feed the real modes 0 and m; the rest pair up into complex modes.
    xk[0][0] = std::sqrt(lambda[0] * inv_big) * z[0];
    xk[0][1] = 0.0;
    xk[m][0] = std::sqrt(lambda[m] * inv_big) * z[1];
    xk[m][1] = 0.0;
    for (std::size_t k = 1; k < m; ++k) {
      const double s = std::sqrt(0.5 * lambda[k] * inv_big);
      xk[k][0] = s * z[2 * k];
      xk[k][1] = s * z[2 * k + 1];
    }
    fftw_execute(plan);
    double acc = 0.0;
    out.values[c] = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      acc += y[k];
      out.values[(k + 1) * q + c] = acc;
    }
  }
  std::lock_guard lock(detail::fftw_planner_mutex());
  fftw_destroy_plan(plan);
  return out;
}

enum class SamplerChoice { automatic, cholesky, fast1d };

/// Dispatches to the circulant path when the grid allows it (one axis,
/// uniform from the origin) and `choice` permits.
inline FieldSample sample_field(const FbmSpec& spec, const GridSpec& grid, std::uint64_t seed,
                                SamplerChoice choice = SamplerChoice::automatic,
                                std::size_t cap = kDefaultPointCap) {
  const auto step = grid.uniform_step_from_origin();
  if (choice == SamplerChoice::fast1d && !(spec.p == 1 && step))
    throw std::invalid_argument("fast1d needs a one-parameter uniform grid starting at 0");
  if (choice != SamplerChoice::cholesky && spec.p == 1 && step)
    return sample_fast1d(spec.gamma, grid.size(), *step, spec.q, seed);
  return sample_fbm(spec, grid, seed, cap);
}

/// One sample of each independent field plus the difference field on the
/// product grid.
struct DifferenceSample {
  FieldSample first;
  FieldSample second;

  int d() const { return first.spec.q; }
  double x(std::size_t i, std::size_t j, int c) const { return first.at(i, c) - second.at(j, c); }

  /// X values, shape (first points) x (second points) x d.
  std::vector<double> materialize() const {
    const std::size_t n1 = first.points(), n2 = second.points();
    std::vector<double> out(n1 * n2 * d());
    std::size_t k = 0;
    for (std::size_t i = 0; i < n1; ++i)
      for (std::size_t j = 0; j < n2; ++j)
        for (int c = 0; c < d(); ++c) out[k++] = x(i, j, c);
    return out;
  }
};

inline DifferenceSample sample_difference_field(const ProblemSpec& spec, const GridSpec& grid1,
                                                const GridSpec& grid2, std::uint64_t seed,
                                                SamplerChoice choice = SamplerChoice::automatic,
                                                std::size_t cap = kDefaultPointCap) {
  if (grid1.p() != spec.n1() || grid2.p() != spec.n2())
    throw std::invalid_argument("grid dimensions must match (n1, n2)");
  return {sample_field(FbmSpec::make(spec.alpha1(), spec.n1(), spec.d()), grid1, derive_seed(seed, 1), choice, cap),
          sample_field(FbmSpec::make(spec.alpha2(), spec.n2(), spec.d()), grid2, derive_seed(seed, 2), choice, cap)};
}

// ---------------------------------------------------------------------------
// Persistence: flat little-endian float64 array plus a JSON sidecar.

inline nlohmann::json sidecar(const FieldSample& s) {
  return nlohmann::json{{"spec", {{"gamma", s.spec.gamma}, {"p", s.spec.p}, {"q", s.spec.q}}},
                        {"grid", {{"axes", s.grid.axes}}},
                        {"seed", s.seed},
                        {"method", to_string(s.method)},
                        {"jitter", s.jitter},
                        {"fell_back", s.fell_back},
                        {"points", s.points()},
                        {"layout", "row-major points x components, float64 little-endian"}};
}

inline void write_field_sample(const FieldSample& s, const std::string& stem) {
  static_assert(std::endian::native == std::endian::little, "binary format is little-endian");
  std::ofstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + stem + ".bin");
  bin.write(reinterpret_cast<const char*>(s.values.data()),
            static_cast<std::streamsize>(s.values.size() * sizeof(double)));
  std::ofstream meta(stem + ".json", std::ios::binary);
  meta << sidecar(s).dump(2) << '\n';
}

inline FieldSample read_field_sample(const std::string& stem) {
  std::ifstream meta(stem + ".json");
  if (!meta) throw std::runtime_error("cannot read " + stem + ".json");
  const auto j = nlohmann::json::parse(meta);
  FieldSample s;
  s.spec = FbmSpec::make(j.at("spec").at("gamma"), j.at("spec").at("p"), j.at("spec").at("q"));
  s.grid.axes = j.at("grid").at("axes").get<std::vector<std::vector<double>>>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.method = sample_method_from_string(j.at("method"));
  s.jitter = j.at("jitter");
  s.fell_back = j.at("fell_back");
  s.values.resize(s.grid.size() * s.spec.q);
  std::ifstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot read " + stem + ".bin");
  bin.read(reinterpret_cast<char*>(s.values.data()), static_cast<std::streamsize>(s.values.size() * sizeof(double)));
  if (bin.gcount() != static_cast<std::streamsize>(s.values.size() * sizeof(double)))
    throw std::runtime_error(stem + ".bin is truncated");
  return s;
}

inline CsvTable to_csv(const FieldSample& s) {
  std::vector<std::string> cols;
  for (int k = 0; k < s.spec.p; ++k) cols.push_back("u" + std::to_string(k));
  for (int c = 0; c < s.spec.q; ++c) cols.push_back("b" + std::to_string(c));
  CsvTable t(cols);
  for (std::size_t i = 0; i < s.points(); ++i) {
    std::vector<std::string> row;
    for (double u : s.grid.point(i)) row.push_back(format_double(u));
    for (int c = 0; c < s.spec.q; ++c) row.push_back(format_double(s.at(i, c)));
    t.add(std::move(row));
  }
  return t;
}

}  // namespace fraclt

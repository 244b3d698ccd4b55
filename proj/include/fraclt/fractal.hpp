#pragma once

// Intersection sets of two simulated fields and their box-counting dimensions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "fraclt/fbm_sim.hpp"
#include "fraclt/parallel.hpp"
#include "fraclt/regime.hpp"
#include "fraclt/rng.hpp"
#include "fraclt/stats.hpp"

namespace fraclt {

inline constexpr std::size_t kDefaultPairCap = std::size_t{1} << 24;

/// A flat list of points in R^dim.
struct PointSet {
  int dim = 0;
  std::vector<double> coords;

  std::size_t size() const { return dim ? coords.size() / dim : 0; }
  std::span<const double> operator[](std::size_t i) const { return {coords.data() + i * dim, static_cast<std::size_t>(dim)}; }
  void push(std::span<const double> p) { coords.insert(coords.end(), p.begin(), p.end()); }
};

struct IntersectionCloud {
  /// (s, t) grid nodes with |B1(s) - B2(t)| < delta, in R^{N1+N2}.
  PointSet m2_points;
  /// Midpoints (B1(s) + B2(t)) / 2 in R^d.
  PointSet d2_points;
  /// Grid indices (i, j) of each hit.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  double delta = 0.0;
  DifferenceSample sample;

  bool empty() const { return pairs.empty(); }

  /// Rechecks every hit against the stored field values.
  bool verify() const {
    for (const auto& [i, j] : pairs) {
      double r2 = 0.0;
      for (int c = 0; c < sample.d(); ++c) r2 += sample.x(i, j, c) * sample.x(i, j, c);
      if (!(std::sqrt(r2) < delta)) return false;
    }
    return true;
  }
};

/// All pairs of grid nodes whose field values lie within delta. The second
/// field is sorted along its first component and scanned in a window of
/// width 2 delta per node of the first field.
inline IntersectionCloud threshold_scan(DifferenceSample sample, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("threshold must be positive");
  const int d = sample.d();
  const std::size_t n1 = sample.first.points(), n2 = sample.second.points();
  std::vector<std::size_t> order(n2);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> key(n2);
  for (std::size_t j = 0; j < n2; ++j) key[j] = sample.second.at(j, 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return key[a] < key[b]; });
  std::vector<double> sorted_key(n2);
  for (std::size_t k = 0; k < n2; ++k) sorted_key[k] = key[order[k]];

  const std::size_t block = 4096;
  const std::size_t blocks = (n1 + block - 1) / block;
  const double d2 = delta * delta;
  auto rows = parallel_map(blocks, [&](std::size_t b) {
    std::vector<std::pair<std::size_t, std::size_t>> hits;
    for (std::size_t i = b * block; i < std::min(n1, (b + 1) * block); ++i) {
      const double x0 = sample.first.at(i, 0);
      auto it = std::lower_bound(sorted_key.begin(), sorted_key.end(), x0 - delta);
      const std::size_t first_hit = hits.size();
      for (auto k = static_cast<std::size_t>(it - sorted_key.begin()); k < n2 && sorted_key[k] < x0 + delta; ++k) {
        const std::size_t j = order[k];
        double r2 = 0.0;
        for (int c = 0; c < d && r2 < d2; ++c) {
          const double v = sample.x(i, j, c);
          r2 += v * v;
        }
        if (r2 < d2) hits.emplace_back(i, j);
      }
      std::sort(hits.begin() + static_cast<std::ptrdiff_t>(first_hit), hits.end());
    }
    return hits;
  });

  IntersectionCloud cloud;
  cloud.delta = delta;
  cloud.m2_points.dim = sample.first.grid.p() + sample.second.grid.p();
  cloud.d2_points.dim = d;
  for (auto& r : rows) cloud.pairs.insert(cloud.pairs.end(), r.begin(), r.end());
  Vec st, mid(d);
  for (const auto& [i, j] : cloud.pairs) {
    st = sample.first.grid.point(i);
    const Vec t = sample.second.grid.point(j);
    st.insert(st.end(), t.begin(), t.end());
    cloud.m2_points.push(st);
    for (int c = 0; c < d; ++c) mid[c] = 0.5 * (sample.first.at(i, c) + sample.second.at(j, c));
    cloud.d2_points.push(mid);
  }
  cloud.sample = std::move(sample);
  return cloud;
}

/// delta = kappa * max(h1^{a1}, h2^{a2}) for grid spacings h1, h2.
inline double threshold_for_grid(const ProblemSpec& spec, double h1, double h2, double kappa) {
  if (!(kappa > 0.0)) throw std::invalid_argument("kappa must be positive");
  return kappa * std::max(std::pow(h1, spec.alpha1()), std::pow(h2, spec.alpha2()));
}

struct CloudOptions {
  int count1 = 2048;  ///< nodes per axis, first field
  int count2 = 2048;  ///< nodes per axis, second field
  double extent = 1.0;
  double kappa = 2.0;
  std::size_t pair_cap = kDefaultPairCap;
  /// Box sizes below this multiple of the cloud's thickness are not fitted.
  double resolve_margin = 2.0;
};

/// Samples both fields on closed uniform grids over [0, extent]^{N_i} and
/// extracts the near-intersections.
inline IntersectionCloud extract_intersections(const ProblemSpec& spec, const CloudOptions& opt, std::uint64_t seed) {
  if (opt.count1 < 2 || opt.count2 < 2) throw std::invalid_argument("grids need >= 2 nodes per axis");
  const GridSpec g1 = GridSpec::uniform(std::vector<int>(spec.n1(), opt.count1), Vec(spec.n1(), opt.extent));
  const GridSpec g2 = GridSpec::uniform(std::vector<int>(spec.n2(), opt.count2), Vec(spec.n2(), opt.extent));
  const double pairs = static_cast<double>(g1.size()) * static_cast<double>(g2.size());
  if (pairs > static_cast<double>(opt.pair_cap))
    throw std::invalid_argument("product grid exceeds the pair cap (" + std::to_string(opt.pair_cap) + ")");
  const double h1 = opt.extent / (opt.count1 - 1), h2 = opt.extent / (opt.count2 - 1);
  const std::size_t point_cap = std::max<std::size_t>({kDefaultPointCap, g1.size(), g2.size()});
  const auto cap1 = spec.n1() == 1 ? point_cap : kDefaultPointCap;
  const auto cap2 = spec.n2() == 1 ? point_cap : kDefaultPointCap;
  DifferenceSample s{
      sample_field(FbmSpec::make(spec.alpha1(), spec.n1(), spec.d()), g1, derive_seed(seed, 1), SamplerChoice::automatic, cap1),
      sample_field(FbmSpec::make(spec.alpha2(), spec.n2(), spec.d()), g2, derive_seed(seed, 2), SamplerChoice::automatic, cap2)};
  return threshold_scan(std::move(s), threshold_for_grid(spec, h1, h2, opt.kappa));
}

// ---------------------------------------------------------------------------
// Box counting.

struct BoxCountResult {
  std::vector<double> scales;  ///< decreasing
  std::vector<std::size_t> counts;
  double fitted_dim = 0.0;
  double fit_r2 = 0.0;
  /// Index range [first, last] into scales used by the fit.
  std::size_t window_first = 0, window_last = 0;
  bool low_confidence = false;
};

inline constexpr double kWindowR2 = 0.98;
inline constexpr std::size_t kMinWindow = 4;

/// Number of lattice boxes of side `scale` (anchored at `origin`) that hold
/// at least one point.
inline std::size_t occupied_boxes(const PointSet& pts, double scale, std::span<const double> origin) {
  std::vector<std::uint64_t> keys(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::uint64_t h = 0x9E3779B97F4A7C15ull;
    const auto p = pts[i];
    for (int c = 0; c < pts.dim; ++c) {
      const auto cell = static_cast<std::int64_t>(std::floor((p[c] - origin[c]) / scale));
      h = mix64(h ^ static_cast<std::uint64_t>(cell));
    }
    keys[i] = h;
  }
  std::sort(keys.begin(), keys.end());
  return static_cast<std::size_t>(std::unique(keys.begin(), keys.end()) - keys.begin());
}

/// Lattice offsets per axis for the staggered count.
inline constexpr int kStaggerPerAxis = 4;

/// Smallest occupied-box count over the lattices shifted by k/m of a box
/// along each axis, k = 0..m-1 (m^dim lattices). Taking the minimum removes
/// most of the dependence on where the lattice happens to be anchored.
inline std::size_t staggered_boxes(const PointSet& pts, double scale, std::span<const double> origin, int per_axis) {
  if (per_axis < 1) throw std::invalid_argument("stagger needs >= 1 offset per axis");
  std::size_t lattices = 1;
  for (int c = 0; c < pts.dim; ++c) lattices *= static_cast<std::size_t>(per_axis);
  std::size_t best = std::numeric_limits<std::size_t>::max();
  Vec o(origin.begin(), origin.end());
  for (std::size_t j = 0; j < lattices; ++j) {
    std::size_t rest = j;
    for (int c = 0; c < pts.dim; ++c) {
      o[c] = origin[c] - scale * static_cast<double>(rest % per_axis) / per_axis;
      rest /= per_axis;
    }
    best = std::min(best, occupied_boxes(pts, scale, o));
  }
  return best;
}

inline constexpr std::size_t kMinBoxCount = 10;

/// Box-counting dimension: slope of log count against log(1/scale) over the
/// widest window of usable scales with r^2 >= 0.98. The two coarsest scales,
/// those below `min_scale` and those with fewer than `min_count` occupied
/// boxes are not used. Counts are staggered minima (see staggered_boxes).
inline BoxCountResult box_dim(const PointSet& pts, std::vector<double> scales, std::span<const double> origin = {},
                              double min_scale = 0.0, std::size_t min_count = kMinBoxCount,
                              int stagger = kStaggerPerAxis) {
  if (pts.size() < 100) throw std::invalid_argument("box_dim needs >= 100 points");
  std::sort(scales.begin(), scales.end(), std::greater<>());
  if (scales.empty() || !(scales.back() > 0.0) || scales.front() / scales.back() < std::pow(10.0, 1.5) * (1 - 1e-12))
    throw std::invalid_argument("box_dim scales must be positive and span >= 1.5 decades");
  Vec zero(pts.dim, 0.0);
  if (origin.empty()) origin = zero;
  if (origin.size() != static_cast<std::size_t>(pts.dim)) throw std::invalid_argument("origin dimension mismatch");

  BoxCountResult out;
  out.scales = scales;
  out.counts =
      parallel_map(scales.size(), [&](std::size_t k) { return staggered_boxes(pts, scales[k], origin, stagger); });

  std::vector<std::size_t> usable;
  for (std::size_t k = 2; k < scales.size(); ++k)
    if (scales[k] >= min_scale && out.counts[k] >= min_count) usable.push_back(k);
  if (usable.size() < 2) {
    out.low_confidence = true;
    usable.clear();
    for (std::size_t k = 2; k < scales.size(); ++k)
      if (scales[k] >= min_scale) usable.push_back(k);
  }
  if (usable.size() < 2) throw std::invalid_argument("box_dim: fewer than two usable scales");

  auto fit = [&](std::size_t a, std::size_t b) {
    std::vector<double> x, y;
    for (std::size_t k = a; k <= b; ++k) {
      x.push_back(std::log(1.0 / scales[usable[k]]));
      y.push_back(std::log(static_cast<double>(out.counts[usable[k]])));
    }
    return linear_fit(x, y);
  };
  std::optional<std::pair<std::size_t, std::size_t>> best;
  LinearFit best_fit;
  for (std::size_t width = usable.size(); width >= kMinWindow && !best; --width) {
    for (std::size_t a = 0; a + width <= usable.size(); ++a) {
      // A window of constant counts carries no slope information.
      if (out.counts[usable[a]] == out.counts[usable[a + width - 1]]) continue;
      const LinearFit f = fit(a, a + width - 1);
      if (f.r2 >= kWindowR2 && (!best || f.r2 > best_fit.r2)) {
        best = std::pair{a, a + width - 1};
        best_fit = f;
      }
    }
  }
  if (!best) {
    out.low_confidence = true;
    best = std::pair{std::size_t{0}, usable.size() - 1};
    best_fit = fit(0, usable.size() - 1);
  }
  out.window_first = usable[best->first];
  out.window_last = usable[best->second];
  out.fitted_dim = std::max(0.0, best_fit.slope);
  out.fit_r2 = best_fit.r2;
  return out;
}

/// Largest side of the axis-aligned bounding box of the points.
inline double bounding_side(const PointSet& pts) {
  double side = 0.0;
  for (int c = 0; c < pts.dim; ++c) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      lo = std::min(lo, pts[i][c]);
      hi = std::max(hi, pts[i][c]);
    }
    side = std::max(side, hi - lo);
  }
  return side;
}

/// Scales from `top` halving down to at most `bottom`.
inline std::vector<double> dyadic_scales(double top, double bottom) {
  std::vector<double> s;
  for (double x = top; x >= bottom * (1 - 1e-12); x *= 0.5) s.push_back(x);
  return s;
}

struct DimEstimate {
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
  double formula = 0.0;
  double delta = 0.0;
  std::vector<BoxCountResult> fits;
  std::vector<std::size_t> cloud_sizes;
  /// Replications skipped because the cloud held fewer than 100 points.
  int skipped = 0;

  double iqr() const { return q75 - q25; }
};

namespace detail {

inline DimEstimate summarize(DimEstimate e) {
  std::vector<double> dims;
  for (const auto& f : e.fits) dims.push_back(f.fitted_dim);
  if (dims.empty()) throw std::runtime_error("no replication produced a usable intersection cloud");
  e.median = median(dims);
  e.q25 = quantile(dims, 0.25);
  e.q75 = quantile(dims, 0.75);
  return e;
}

}  // namespace detail

/// Median box dimension of the intersection-time set over replications
/// (replication r uses seed derive_seed(seed, r); the grid is fixed).
inline DimEstimate estimate_dim_m2(const ProblemSpec& spec, const CloudOptions& opt, std::uint64_t seed,
                                   int replications) {
  const RegimeReport rep = classify(spec);
  if (!rep.exists) throw std::domain_error("intersection-time dimension needs a supercritical spec");
  if (replications < 1) throw std::invalid_argument("replications must be positive");
  DimEstimate e;
  e.formula = *rep.dim_m2;
  const double h = opt.extent / (std::min(opt.count1, opt.count2) - 1);
  for (int r = 0; r < replications; ++r) {
    const IntersectionCloud c = extract_intersections(spec, opt, derive_seed(seed, static_cast<std::uint64_t>(r)));
    e.delta = c.delta;
    e.cloud_sizes.push_back(c.pairs.size());
    if (c.m2_points.size() < 100) {
      ++e.skipped;
      continue;
    }
    // Thickness of the thresholded set along each parameter axis.
    const double resolve = opt.resolve_margin * std::max({std::pow(c.delta, 1.0 / spec.alpha1()),
                                                          std::pow(c.delta, 1.0 / spec.alpha2()), h});
    e.fits.push_back(box_dim(c.m2_points, dyadic_scales(opt.extent, h), {}, resolve));
  }
  return detail::summarize(std::move(e));
}

/// Median box dimension of the intersection-point set in R^d.
inline DimEstimate estimate_dim_d2(const ProblemSpec& spec, const CloudOptions& opt, std::uint64_t seed,
                                   int replications) {
  const RegimeReport rep = classify(spec);
  if (!rep.exists) throw std::domain_error("intersection-point dimension needs a supercritical spec");
  if (spec.d() > 3) throw std::domain_error("intersection-point box counting is limited to d <= 3");
  if (replications < 1) throw std::invalid_argument("replications must be positive");
  DimEstimate e;
  e.formula = *rep.dim_d2;
  for (int r = 0; r < replications; ++r) {
    const IntersectionCloud c = extract_intersections(spec, opt, derive_seed(seed, static_cast<std::uint64_t>(r)));
    e.delta = c.delta;
    e.cloud_sizes.push_back(c.pairs.size());
    if (c.d2_points.size() < 100) {
      ++e.skipped;
      continue;
    }
    const double top = std::max(bounding_side(c.d2_points), 64.0 * c.delta);
    e.fits.push_back(box_dim(c.d2_points, dyadic_scales(top, c.delta / 4.0), {}, opt.resolve_margin * c.delta));
  }
  return detail::summarize(std::move(e));
}

}  // namespace fraclt

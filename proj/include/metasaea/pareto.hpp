#pragma once

// Multi-objective utilities shared across the framework: dominance and fast
// non-dominated sorting, exact hypervolume for 2 and 3 objectives,
// Das-Dennis simplex-lattice reference directions, PBI scalarization, and
// the Manhattan front-distance pair used by the reward.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "metasaea/common.hpp"

namespace metasaea {

/// Minimization dominance: p <= q componentwise and p != q.
inline bool dominates(const Vec& p, const Vec& q) {
  bool strict = false;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > q[i]) return false;
    if (p[i] < q[i]) strict = true;
  }
  return strict;
}

/// Fast non-dominated sort. Returns fronts of indices; front 0 is the
/// non-dominated set. Empty input -> empty partition.
inline std::vector<std::vector<std::size_t>> nds(const Mat& points) {
  const std::size_t n = points.size();
  std::vector<std::vector<std::size_t>> fronts;
  if (n == 0) return fronts;
  std::vector<std::vector<std::size_t>> dominated_by(n);
  std::vector<int> dom_count(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (dominates(points[i], points[j])) {
        dominated_by[i].push_back(j);
        ++dom_count[j];
      } else if (dominates(points[j], points[i])) {
        dominated_by[j].push_back(i);
        ++dom_count[i];
      }
    }
  std::vector<std::size_t> current;
  for (std::size_t i = 0; i < n; ++i)
    if (dom_count[i] == 0) current.push_back(i);
  while (!current.empty()) {
    fronts.push_back(current);
    std::vector<std::size_t> next;
    for (std::size_t i : current)
      for (std::size_t j : dominated_by[i])
        if (--dom_count[j] == 0) next.push_back(j);
    std::sort(next.begin(), next.end());
    current = std::move(next);
  }
  return fronts;
}

/// Indices of the non-dominated subset (first front).
inline std::vector<std::size_t> front_indices(const Mat& points) {
  auto f = nds(points);
  return f.empty() ? std::vector<std::size_t>{} : f.front();
}

namespace detail {

// 2D hypervolume of points already filtered to strictly dominate ref
inline double hv2d_filtered(std::vector<std::pair<double, double>>& pts,
                            double ref0, double ref1) {
  std::sort(pts.begin(), pts.end());
  double hv = 0.0, best_f2 = ref1;
  for (const auto& [f1, f2] : pts) {
    if (f2 < best_f2) {
      hv += (ref0 - f1) * (best_f2 - f2);
      best_f2 = f2;
    }
  }
  return hv;
}

}  // namespace detail

/// Exact hypervolume (Lebesgue measure of the union of boxes [p, ref]) for
/// m in {2,3}. Points that do not strictly dominate ref contribute nothing.
inline double hypervolume(const Mat& front, const Vec& ref) {
  const std::size_t m = ref.size();
  if (m != 2 && m != 3) throw ContractError("hypervolume supports m in {2,3}");
  Mat pts;
  for (const Vec& p : front) {
    if (p.size() != m) throw DimensionError("hypervolume: point/ref dimension mismatch");
    bool inside = true;
    for (std::size_t j = 0; j < m; ++j)
      if (p[j] >= ref[j]) {
        inside = false;
        break;
      }
    if (inside) pts.push_back(p);
  }
  if (pts.empty()) return 0.0;
  if (m == 2) {
    std::vector<std::pair<double, double>> xy;
    xy.reserve(pts.size());
    for (const Vec& p : pts) xy.emplace_back(p[0], p[1]);
    return detail::hv2d_filtered(xy, ref[0], ref[1]);
  }
  // m == 3: sweep slabs along the third axis; each slab's area is the 2D
  // hypervolume of the points at or below its lower bound
  std::vector<double> zs;
  zs.reserve(pts.size());
  for (const Vec& p : pts) zs.push_back(p[2]);
  std::sort(zs.begin(), zs.end());
  zs.erase(std::unique(zs.begin(), zs.end()), zs.end());
  double hv = 0.0;
  for (std::size_t k = 0; k < zs.size(); ++k) {
    const double z_lo = zs[k];
    const double z_hi = k + 1 < zs.size() ? zs[k + 1] : ref[2];
    std::vector<std::pair<double, double>> xy;
    for (const Vec& p : pts)
      if (p[2] <= z_lo) xy.emplace_back(p[0], p[1]);
    hv += detail::hv2d_filtered(xy, ref[0], ref[1]) * (z_hi - z_lo);
  }
  return hv;
}

/// Hypervolume after normalizing objectives by ideal/nadir, with reference
/// point (1.1, ..., 1.1) in normalized space.
inline double normalized_hypervolume(const Mat& front, const Vec& ideal, const Vec& nadir) {
  const std::size_t m = ideal.size();
  Mat norm;
  norm.reserve(front.size());
  for (const Vec& p : front) {
    Vec q(m);
    for (std::size_t j = 0; j < m; ++j) {
      double span = nadir[j] - ideal[j];
      q[j] = (p[j] - ideal[j]) / (span > 1e-12 ? span : 1.0);
    }
    norm.push_back(std::move(q));
  }
  return hypervolume(norm, Vec(m, 1.1));
}

struct ReferenceDirectionSet {
  Mat dirs;  // rows nonnegative, each summing to 1
  int H = 0;

  std::size_t size() const { return dirs.size(); }
};

/// All simplex-lattice weight vectors with denominator H (Das-Dennis).
inline ReferenceDirectionSet das_dennis(int m, int H) {
  if (H < 1) throw ContractError("das_dennis needs H >= 1");
  if (m < 2) throw ContractError("das_dennis needs m >= 2");
  ReferenceDirectionSet out;
  out.H = H;
  Vec row(static_cast<std::size_t>(m));
  // enumerate compositions of H into m nonnegative parts, lexicographically
  std::function<void(int, int)> rec = [&](int pos, int left) {
    if (pos == m - 1) {
      row[static_cast<std::size_t>(pos)] = static_cast<double>(left) / H;
      out.dirs.push_back(row);
      return;
    }
    for (int v = left; v >= 0; --v) {
      row[static_cast<std::size_t>(pos)] = static_cast<double>(v) / H;
      rec(pos + 1, left - v);
    }
  };
  rec(0, H);
  return out;
}

/// Penalty boundary intersection: d1 + theta*d2 along direction w from ideal.
inline double pbi(const Vec& f, const Vec& w, double theta, const Vec& ideal) {
  double wn = 0.0;
  for (double v : w) wn += v * v;
  wn = std::sqrt(wn);
  if (wn <= 0.0) throw ContractError("pbi: zero direction vector");
  double d1 = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) d1 += (f[i] - ideal[i]) * w[i];
  d1 /= wn;
  double d2sq = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    double r = (f[i] - ideal[i]) - d1 * w[i] / wn;
    d2sq += r * r;
  }
  return d1 + theta * std::sqrt(d2sq);
}

/// (d_i, d_ref) of Eq-5 bookkeeping: Manhattan distance from y_new to its
/// closest front point (lowest index on ties), and that point's Manhattan
/// distance to the origin.
inline std::pair<double, double> manhattan_front_distance(const Vec& y_new, const Mat& front) {
  if (front.empty()) throw ContractError("manhattan_front_distance: empty front");
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_ix = 0;
  for (std::size_t i = 0; i < front.size(); ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < y_new.size(); ++j) d += std::abs(y_new[j] - front[i][j]);
    if (d < best) {
      best = d;
      best_ix = i;
    }
  }
  double dref = 0.0;
  for (double v : front[best_ix]) dref += std::abs(v);
  return {best, dref};
}

/// NSGA-II crowding distance within one front (boundary points get +inf).
inline Vec crowding_distance(const Mat& points, const std::vector<std::size_t>& front) {
  const std::size_t n = front.size();
  Vec dist(n, 0.0);
  if (n == 0) return dist;
  if (n <= 2) {
    dist.assign(n, std::numeric_limits<double>::infinity());
    return dist;
  }
  const std::size_t m = points[front[0]].size();
  std::vector<std::size_t> order(n);
  for (std::size_t j = 0; j < m; ++j) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return points[front[a]][j] < points[front[b]][j];
    });
    double lo = points[front[order.front()]][j];
    double hi = points[front[order.back()]][j];
    dist[order.front()] = dist[order.back()] = std::numeric_limits<double>::infinity();
    if (hi - lo < 1e-12) continue;
    for (std::size_t k = 1; k + 1 < n; ++k)
      dist[order[k]] += (points[front[order[k + 1]]][j] - points[front[order[k - 1]]][j]) / (hi - lo);
  }
  return dist;
}

}  // namespace metasaea

#pragma once

// Slow-but-obvious reference implementations used to cross-check the fast
// library code: finite differences for gradients, Monte Carlo for
// hypervolume, quadratic-scan non-dominated sorting.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "metasaea/common.hpp"
#include "metasaea/tensor.hpp"

namespace oracles {

using metasaea::Mat;
using metasaea::Rng;
using metasaea::Tensor;
using metasaea::Vec;

/// Central-difference gradient of a scalar-valued function of one tensor,
/// evaluated at the tensor's current value.
inline std::vector<double> fd_gradient(Tensor& x,
                                       const std::function<double()>& eval,
                                       double eps = 1e-6) {
  std::vector<double> g(x.numel());
  auto& v = x.mutable_value();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double keep = v[i];
    v[i] = keep + eps;
    const double fp = eval();
    v[i] = keep - eps;
    const double fm = eval();
    v[i] = keep;
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

/// max_i |a_i - n_i| scaled by the larger of the two vectors' max-abs.
inline double grad_rel_err(const std::vector<double>& analytic,
                           const std::vector<double>& numeric) {
  double ma = 0.0, mn = 0.0, md = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    ma = std::max(ma, std::abs(analytic[i]));
    mn = std::max(mn, std::abs(numeric[i]));
    md = std::max(md, std::abs(analytic[i] - numeric[i]));
  }
  return md / std::max({ma, mn, 1e-8});
}

inline bool dominates(const Vec& p, const Vec& q) {
  bool le = true, lt = false;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > q[i]) le = false;
    if (p[i] < q[i]) lt = true;
  }
  return le && lt;
}

/// O(n^2 m) scan: indices of points not dominated by any other point.
inline std::vector<std::size_t> brute_front(const Mat& pts) {
  std::vector<std::size_t> front;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    bool dom = false;
    for (std::size_t j = 0; j < pts.size() && !dom; ++j)
      if (j != i && dominates(pts[j], pts[i])) dom = true;
    if (!dom) front.push_back(i);
  }
  return front;
}

/// Monte Carlo hypervolume of `pts` against `ref` over the box
/// [component-wise min of pts, ref].
inline double mc_hypervolume(const Mat& pts, const Vec& ref, std::size_t samples,
                             std::uint64_t seed) {
  const std::size_t m = ref.size();
  Vec lo(m);
  for (std::size_t j = 0; j < m; ++j) {
    lo[j] = ref[j];
    for (const Vec& p : pts) lo[j] = std::min(lo[j], p[j]);
  }
  double box = 1.0;
  for (std::size_t j = 0; j < m; ++j) box *= ref[j] - lo[j];
  if (box <= 0.0) return 0.0;
  Rng rng(seed);
  std::size_t hit = 0;
  Vec x(m);
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t j = 0; j < m; ++j) x[j] = rng.uniform(lo[j], ref[j]);
    for (const Vec& p : pts) {
      bool inside = true;
      for (std::size_t j = 0; j < m; ++j)
        if (p[j] > x[j]) {
          inside = false;
          break;
        }
      if (inside) {
        ++hit;
        break;
      }
    }
  }
  return box * static_cast<double>(hit) / static_cast<double>(samples);
}

}  // namespace oracles

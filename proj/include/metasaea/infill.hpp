#pragma once

// The five infill criteria and the elite-selection step: given the current
// surrogate population and the archive of true evaluations, each criterion
// ranks candidates for the next true evaluation with a different
// convergence/diversity/exploration emphasis. The criterion formulas are
// reconstructions built from each criterion's stated role, isolated behind
// CriterionId so they can be swapped independently of the policy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "metasaea/common.hpp"
#include "metasaea/pareto.hpp"
#include "metasaea/population.hpp"

namespace metasaea {

enum class CriterionId {
  ND_A,           // max-min angle to the archive: angular diversity
  ND_DPBI_CONV,   // largest PBI improvement along the nearest direction
  ND_DPBI_DIV,    // PBI improvement restricted to the worst-covered directions
  EPDI_EXPLORE,   // expected front-distance improvement, inflated uncertainty
  EPDI_EXPLOIT,   // expected front-distance improvement, deflated uncertainty
};

inline const char* to_string(CriterionId c) {
  switch (c) {
    case CriterionId::ND_A: return "nd_a";
    case CriterionId::ND_DPBI_CONV: return "nd_dpbi_conv";
    case CriterionId::ND_DPBI_DIV: return "nd_dpbi_div";
    case CriterionId::EPDI_EXPLORE: return "epdi_explore";
    case CriterionId::EPDI_EXPLOIT: return "epdi_exploit";
  }
  return "?";
}

constexpr int kCriterionCount = 5;

inline CriterionId criterion_from_index(int i) {
  if (i < 0 || i >= kCriterionCount) throw ContractError("criterion index out of range");
  return static_cast<CriterionId>(i);
}

inline int criterion_index(CriterionId c) { return static_cast<int>(c); }

inline CriterionId criterion_from_string(const std::string& s) {
  for (int i = 0; i < kCriterionCount; ++i)
    if (s == to_string(criterion_from_index(i))) return criterion_from_index(i);
  throw ContractError("unknown criterion name: '" + s + "'");
}

struct InfillConfig {
  double theta_conv = 1.0;
  double theta_div = 10.0;
  double sigma_explore = 2.0;
  double sigma_exploit = 0.5;
};

struct SelectionLog {
  bool fallback_used = false;
  std::string note;
};

namespace detail {

// min-max bounds over archive objectives plus candidate predictions; a
// degenerate span maps to 1 so normalization is the identity on that axis
struct ObjScale {
  Vec ideal, span;
  Vec apply(const Vec& y) const {
    Vec out(y.size());
    for (std::size_t j = 0; j < y.size(); ++j) out[j] = (y[j] - ideal[j]) / span[j];
    return out;
  }
};

inline ObjScale combined_scale(const Mat& true_y, const Mat& yhat,
                               const std::vector<std::size_t>& cand) {
  const std::size_t m = true_y[0].size();
  ObjScale s;
  s.ideal.assign(m, std::numeric_limits<double>::infinity());
  Vec hi(m, -std::numeric_limits<double>::infinity());
  auto take = [&](const Vec& y) {
    for (std::size_t j = 0; j < m; ++j) {
      s.ideal[j] = std::min(s.ideal[j], y[j]);
      hi[j] = std::max(hi[j], y[j]);
    }
  };
  for (const Vec& y : true_y) take(y);
  for (std::size_t ix : cand) take(yhat[ix]);
  s.span.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    s.span[j] = hi[j] - s.ideal[j];
    if (s.span[j] < 1e-12) s.span[j] = 1.0;
  }
  return s;
}

inline double vec_angle(const Vec& a, const Vec& b) {
  double na = 0, nb = 0, dot = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    na += a[j] * a[j];
    nb += b[j] * b[j];
    dot += a[j] * b[j];
  }
  if (na < 1e-24 || nb < 1e-24) return 0.0;
  return std::acos(clampd(dot / std::sqrt(na * nb), -1.0, 1.0));
}

inline std::size_t nearest_direction(const Vec& p, const ReferenceDirectionSet& dirs) {
  double best = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t w = 0; w < dirs.size(); ++w) {
    double wn = 0, along = 0;
    for (std::size_t j = 0; j < p.size(); ++j) wn += dirs.dirs[w][j] * dirs.dirs[w][j];
    wn = std::sqrt(wn);
    for (std::size_t j = 0; j < p.size(); ++j) along += p[j] * dirs.dirs[w][j] / wn;
    double d2 = 0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      double r = p[j] - along * dirs.dirs[w][j] / wn;
      d2 += r * r;
    }
    if (d2 < best) {
      best = d2;
      arg = w;
    }
  }
  return arg;
}

// expected improvement below `best` for a minimized Gaussian score (mu, sd)
inline double expected_improvement(double mu, double sd, double best) {
  if (sd <= 0.0) return std::max(best - mu, 0.0);
  double u = (best - mu) / sd;
  return sd * (u * norm_cdf(u) + norm_pdf(u));
}

}  // namespace detail

/// Ranks p_sur under one criterion and returns the k best candidate indices
/// (distinct, score-descending, ties by lowest index).
inline std::vector<std::size_t> select_elite(CriterionId criterion,
                                             const SurrogatePopulation& p_sur,
                                             const TruePopulation& p_true,
                                             const ReferenceDirectionSet& dirs,
                                             std::size_t k,
                                             const InfillConfig& cfg = {},
                                             SelectionLog* log = nullptr) {
  if (k < 1 || k > p_sur.size())
    throw ContractError("select_elite: need 1 <= k <= |p_sur|");
  if (p_true.empty()) throw ContractError("select_elite: empty archive");
  const Vec zero(p_true.Y[0].size(), 0.0);

  auto note_fallback = [&](const std::string& why) {
    if (log) {
      log->fallback_used = true;
      log->note = why;
    }
  };

  // candidate pool: surrogate non-dominated set for the ND criteria, the
  // whole population for EPDI
  std::vector<std::size_t> pool;
  const bool nd_family = criterion == CriterionId::ND_A ||
                         criterion == CriterionId::ND_DPBI_CONV ||
                         criterion == CriterionId::ND_DPBI_DIV;
  if (nd_family) {
    pool = front_indices(p_sur.yhat);
    if (pool.size() < k) {
      note_fallback("surrogate front smaller than k; scoring whole population");
      pool.resize(p_sur.size());
      std::iota(pool.begin(), pool.end(), 0);
    }
  } else {
    pool.resize(p_sur.size());
    std::iota(pool.begin(), pool.end(), 0);
  }

  Vec score(pool.size(), 0.0);
  switch (criterion) {
    case CriterionId::ND_A: {
      auto scale = detail::combined_scale(p_true.Y, p_sur.yhat, pool);
      Mat true_n;
      for (const Vec& y : p_true.Y) true_n.push_back(scale.apply(y));
      for (std::size_t i = 0; i < pool.size(); ++i) {
        Vec c = scale.apply(p_sur.yhat[pool[i]]);
        double mn = std::numeric_limits<double>::infinity();
        for (const Vec& t : true_n) mn = std::min(mn, detail::vec_angle(c, t));
        score[i] = mn;
      }
      break;
    }
    case CriterionId::ND_DPBI_CONV:
    case CriterionId::ND_DPBI_DIV: {
      const double theta =
          criterion == CriterionId::ND_DPBI_CONV ? cfg.theta_conv : cfg.theta_div;
      auto scale = detail::combined_scale(p_true.Y, p_sur.yhat, pool);
      Mat true_n;
      for (const Vec& y : p_true.Y) true_n.push_back(scale.apply(y));
      if (criterion == CriterionId::ND_DPBI_DIV) {
        // keep only candidates aimed at the least-covered directions
        std::vector<int> coverage(dirs.size(), 0);
        for (const Vec& t : true_n) ++coverage[detail::nearest_direction(t, dirs)];
        int cmin = *std::min_element(coverage.begin(), coverage.end());
        std::vector<std::size_t> restricted;
        for (std::size_t ix : pool) {
          Vec c = scale.apply(p_sur.yhat[ix]);
          if (coverage[detail::nearest_direction(c, dirs)] == cmin)
            restricted.push_back(ix);
        }
        if (restricted.size() >= k) {
          pool = std::move(restricted);
          score.assign(pool.size(), 0.0);
        } else {
          note_fallback("no candidates aim at uncovered directions; using whole front");
        }
      }
      // best archive PBI per direction, computed on demand
      Vec best_pbi(dirs.size(), std::numeric_limits<double>::quiet_NaN());
      for (std::size_t i = 0; i < pool.size(); ++i) {
        Vec c = scale.apply(p_sur.yhat[pool[i]]);
        std::size_t w = detail::nearest_direction(c, dirs);
        if (std::isnan(best_pbi[w])) {
          double mn = std::numeric_limits<double>::infinity();
          for (const Vec& t : true_n) mn = std::min(mn, pbi(t, dirs.dirs[w], theta, zero));
          best_pbi[w] = mn;
        }
        score[i] = best_pbi[w] - pbi(c, dirs.dirs[w], theta, zero);
      }
      break;
    }
    case CriterionId::EPDI_EXPLORE:
    case CriterionId::EPDI_EXPLOIT: {
      const double mult = criterion == CriterionId::EPDI_EXPLORE ? cfg.sigma_explore
                                                                 : cfg.sigma_exploit;
      Mat front;
      for (std::size_t ix : front_indices(p_true.Y)) front.push_back(p_true.Y[ix]);
      for (std::size_t i = 0; i < pool.size(); ++i) {
        const Vec& yhat = p_sur.yhat[pool[i]];
        // nearest front point by Manhattan distance (lowest index on ties);
        // the distance is signed negative when the prediction dominates it
        double d = std::numeric_limits<double>::infinity();
        std::size_t nearest = 0;
        for (std::size_t f = 0; f < front.size(); ++f) {
          double dist = 0.0;
          for (std::size_t j = 0; j < yhat.size(); ++j)
            dist += std::abs(yhat[j] - front[f][j]);
          if (dist < d) {
            d = dist;
            nearest = f;
          }
        }
        double mu = dominates(yhat, front[nearest]) ? -d : d;
        double sd = 0.0;
        for (double s : p_sur.sigma[pool[i]]) sd += std::abs(s);
        score[i] = detail::expected_improvement(mu, sd * mult, 0.0);
      }
      break;
    }
  }

  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return pool[a] < pool[b];
  });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(pool[order[i]]);
  return out;
}

}  // namespace metasaea

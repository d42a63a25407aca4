#pragma once

// Candidate generation in the surrogate evaluation space: NSGA-III with
// binary-tournament mating (rank, then crowding), simulated binary
// crossover, polynomial mutation, and reference-direction niching survival.
// The internal population persists across steps; newly evaluated archive
// members re-enter the parent pool as immigrants each generation.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "metasaea/common.hpp"
#include "metasaea/pareto.hpp"
#include "metasaea/population.hpp"
#include "metasaea/surrogate.hpp"

namespace metasaea {

struct EvolveConfig {
  int pop_size = 50;
  double sbx_eta = 15.0;
  double sbx_prob = 0.9;
  double pm_eta = 20.0;
  double pm_prob = -1.0;  // negative -> 1/d
  int H = -1;             // negative -> smallest direction count >= 20
  std::uint64_t seed = 0;

  void validate() const {
    if (pop_size < 2) throw ContractError("evolve.pop_size must be >= 2");
    if (sbx_prob < 0 || sbx_prob > 1 || (pm_prob > 1))
      throw ContractError("evolve probabilities must lie in [0,1]");
  }
};

/// Smallest Das-Dennis division count whose direction count reaches `want`.
inline int default_divisions(int m, int want = 20) {
  for (int H = 1;; ++H)
    if (das_dennis(m, H).size() >= static_cast<std::size_t>(want)) return H;
}

namespace detail {

// rank (front index) and within-front crowding for tournament selection
struct RankedPool {
  std::vector<int> rank;
  Vec crowding;
};

inline RankedPool rank_pool(const Mat& objectives) {
  RankedPool rp;
  rp.rank.assign(objectives.size(), 0);
  rp.crowding.assign(objectives.size(), 0.0);
  auto fronts = nds(objectives);
  for (std::size_t f = 0; f < fronts.size(); ++f) {
    Vec cd = crowding_distance(objectives, fronts[f]);
    for (std::size_t i = 0; i < fronts[f].size(); ++i) {
      rp.rank[fronts[f][i]] = static_cast<int>(f);
      rp.crowding[fronts[f][i]] = cd[i];
    }
  }
  return rp;
}

inline std::size_t tournament(const RankedPool& rp, Rng& rng) {
  std::size_t a = rng.below(rp.rank.size());
  std::size_t b = rng.below(rp.rank.size());
  if (rp.rank[a] != rp.rank[b]) return rp.rank[a] < rp.rank[b] ? a : b;
  if (rp.crowding[a] != rp.crowding[b]) return rp.crowding[a] > rp.crowding[b] ? a : b;
  return std::min(a, b);
}

// bounded simulated binary crossover on one variable pair
inline void sbx_pair(double& c1, double& c2, double lo, double hi, double eta, Rng& rng) {
  if (std::abs(c1 - c2) < 1e-14) return;
  double y1 = std::min(c1, c2), y2 = std::max(c1, c2);
  double u = rng.u01();
  auto spread = [&](double beta) {
    double alpha = 2.0 - std::pow(beta, -(eta + 1.0));
    return u <= 1.0 / alpha ? std::pow(u * alpha, 1.0 / (eta + 1.0))
                            : std::pow(1.0 / (2.0 - u * alpha), 1.0 / (eta + 1.0));
  };
  double beta1 = 1.0 + 2.0 * (y1 - lo) / (y2 - y1);
  double beta2 = 1.0 + 2.0 * (hi - y2) / (y2 - y1);
  double a = clampd(0.5 * ((y1 + y2) - spread(beta1) * (y2 - y1)), lo, hi);
  double b = clampd(0.5 * ((y1 + y2) + spread(beta2) * (y2 - y1)), lo, hi);
  // children keep their parents' orientation so eta -> inf copies parents
  if (c1 <= c2) {
    c1 = a;
    c2 = b;
  } else {
    c1 = b;
    c2 = a;
  }
}

// bounded polynomial mutation on one variable
inline double pm_var(double y, double lo, double hi, double eta, Rng& rng) {
  if (hi - lo < 1e-14) return y;
  double u = rng.u01();
  double d1 = (y - lo) / (hi - lo), d2 = (hi - y) / (hi - lo);
  double pw = 1.0 / (eta + 1.0);
  double dq;
  if (u < 0.5) {
    double val = 2.0 * u + (1.0 - 2.0 * u) * std::pow(1.0 - d1, eta + 1.0);
    dq = std::pow(val, pw) - 1.0;
  } else {
    double val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * std::pow(1.0 - d2, eta + 1.0);
    dq = 1.0 - std::pow(val, pw);
  }
  return clampd(y + dq * (hi - lo), lo, hi);
}

inline double perpendicular_distance(const Vec& p, const Vec& w) {
  double wn = 0.0, along = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) wn += w[j] * w[j];
  wn = std::sqrt(wn);
  for (std::size_t j = 0; j < w.size(); ++j) along += p[j] * w[j] / wn;
  double d2 = 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    double r = p[j] - along * w[j] / wn;
    d2 += r * r;
  }
  return std::sqrt(d2);
}

}  // namespace detail

/// NSGA-III survival: fill whole fronts, then split the last front by
/// reference-direction niching in adaptively normalized objective space.
/// Random tie-breaks draw from `rng` (deterministic under seed).
inline std::vector<std::size_t> environmental_select_indices(
    const Mat& objectives, std::size_t k, const ReferenceDirectionSet& dirs, Rng& rng) {
  const std::size_t n = objectives.size();
  if (k > n) throw ContractError("environmental_select: k exceeds pool size");
  if (k == 0) return {};
  auto fronts = nds(objectives);
  std::vector<std::size_t> chosen;
  std::size_t fl = 0;
  while (fl < fronts.size() && chosen.size() + fronts[fl].size() <= k) {
    chosen.insert(chosen.end(), fronts[fl].begin(), fronts[fl].end());
    ++fl;
  }
  if (chosen.size() == k) return chosen;
  const auto& last = fronts[fl];
  const std::size_t need = k - chosen.size();
  const std::size_t m = objectives[0].size();

  // Deb-Jain normalization over the considered points (fronts 0..fl)
  std::vector<std::size_t> considered = chosen;
  considered.insert(considered.end(), last.begin(), last.end());
  Vec ideal(m, std::numeric_limits<double>::infinity());
  for (std::size_t ix : considered)
    for (std::size_t j = 0; j < m; ++j) ideal[j] = std::min(ideal[j], objectives[ix][j]);
  // extreme point per axis by achievement scalarizing function
  std::vector<std::size_t> extreme(m);
  for (std::size_t j = 0; j < m; ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t ix : considered) {
      double asf = 0.0;
      for (std::size_t c = 0; c < m; ++c) {
        double w = c == j ? 1.0 : 1e-6;
        asf = std::max(asf, (objectives[ix][c] - ideal[c]) / w);
      }
      if (asf < best) {
        best = asf;
        extreme[j] = ix;
      }
    }
  }
  Vec intercept(m, 0.0);
  bool ok = true;
  {
    Eigen::MatrixXd E(m, m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < m; ++c)
        E(static_cast<long>(r), static_cast<long>(c)) =
            objectives[extreme[r]][c] - ideal[c];
    Eigen::FullPivLU<Eigen::MatrixXd> lu(E);
    if (lu.isInvertible()) {
      Eigen::VectorXd a = lu.solve(Eigen::VectorXd::Ones(static_cast<long>(m)));
      for (std::size_t j = 0; j < m; ++j) {
        double v = a(static_cast<long>(j));
        if (v <= 1e-12) {
          ok = false;
          break;
        }
        intercept[j] = 1.0 / v;
      }
    } else {
      ok = false;
    }
  }
  if (!ok) {
    // fallback: span of the first front
    for (std::size_t j = 0; j < m; ++j) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t ix : fronts[0]) mx = std::max(mx, objectives[ix][j]);
      intercept[j] = mx - ideal[j];
      if (intercept[j] < 1e-12) intercept[j] = 1.0;
    }
  }
  auto normalized = [&](std::size_t ix) {
    Vec p(m);
    for (std::size_t j = 0; j < m; ++j) p[j] = (objectives[ix][j] - ideal[j]) / intercept[j];
    return p;
  };

  // associate every considered point with its nearest reference direction
  std::vector<std::size_t> assoc(n, 0);
  Vec assoc_dist(n, 0.0);
  for (std::size_t ix : considered) {
    Vec p = normalized(ix);
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t w = 0; w < dirs.size(); ++w) {
      double d = detail::perpendicular_distance(p, dirs.dirs[w]);
      if (d < best) {
        best = d;
        arg = w;
      }
    }
    assoc[ix] = arg;
    assoc_dist[ix] = best;
  }
  std::vector<int> niche_count(dirs.size(), 0);
  for (std::size_t ix : chosen) ++niche_count[assoc[ix]];
  std::vector<std::vector<std::size_t>> members(dirs.size());
  for (std::size_t ix : last) members[assoc[ix]].push_back(ix);
  std::vector<bool> active(dirs.size(), true);

  std::size_t added = 0;
  while (added < need) {
    // direction with the smallest niche count among active ones (random tie)
    int best_count = std::numeric_limits<int>::max();
    std::vector<std::size_t> cands;
    for (std::size_t w = 0; w < dirs.size(); ++w) {
      if (!active[w] || members[w].empty()) continue;
      if (niche_count[w] < best_count) {
        best_count = niche_count[w];
        cands = {w};
      } else if (niche_count[w] == best_count) {
        cands.push_back(w);
      }
    }
    if (cands.empty()) throw ContractError("environmental_select: niching exhausted");
    std::size_t w = cands[rng.below(cands.size())];
    auto& mem = members[w];
    std::size_t pick_pos;
    if (niche_count[w] == 0) {
      pick_pos = 0;
      for (std::size_t i = 1; i < mem.size(); ++i)
        if (assoc_dist[mem[i]] < assoc_dist[mem[pick_pos]]) pick_pos = i;
    } else {
      pick_pos = rng.below(mem.size());
    }
    chosen.push_back(mem[pick_pos]);
    mem.erase(mem.begin() + static_cast<long>(pick_pos));
    ++niche_count[w];
    ++added;
  }
  return chosen;
}

/// Candidate generator plug-in point. Ships with the NSGA-III implementation;
/// alternative generators can be registered by name.
class Generator {
 public:
  virtual ~Generator() = default;
  /// Reference directions the generator selects against.
  virtual const ReferenceDirectionSet& directions() const = 0;
  /// Rebuilds the internal population from the archive (episode start).
  virtual void reset(const TruePopulation& archive, const SurrogateModel& model) = 0;
  /// Re-scores the internal population after a surrogate refit.
  virtual void rescore(const SurrogateModel& model) = 0;
  /// Advances one generation and returns the fresh surrogate population.
  virtual const SurrogatePopulation& resample(const TruePopulation& archive,
                                              const SurrogateModel& model) = 0;
  virtual const SurrogatePopulation& population() const = 0;
};

class NsgaGenerator final : public Generator {
 public:
  NsgaGenerator(const EvolveConfig& cfg, int d, int m, Vec lower, Vec upper)
      : cfg_(cfg),
        d_(d),
        m_(m),
        lower_(std::move(lower)),
        upper_(std::move(upper)),
        rng_(derive_seed(cfg.seed, 0xe701)) {
    cfg_.validate();
    int H = cfg_.H > 0 ? cfg_.H : default_divisions(m);
    dirs_ = das_dennis(m, H);
    pm_prob_ = cfg_.pm_prob >= 0.0 ? cfg_.pm_prob : 1.0 / static_cast<double>(d);
  }

  const ReferenceDirectionSet& directions() const override { return dirs_; }

  void reset(const TruePopulation& archive, const SurrogateModel& model) override {
    if (archive.empty()) throw ContractError("generator reset: empty archive");
    SurrogatePopulation scored = model.predict_batch(archive.X);
    if (scored.size() > static_cast<std::size_t>(cfg_.pop_size))
      scored = gather(scored, environmental_select_indices(
                                  scored.yhat, static_cast<std::size_t>(cfg_.pop_size),
                                  dirs_, rng_));
    pop_ = std::move(scored);
  }

  void rescore(const SurrogateModel& model) override {
    if (pop_.empty()) return;
    pop_ = model.predict_batch(pop_.X);
  }

  const SurrogatePopulation& resample(const TruePopulation& archive,
                                      const SurrogateModel& model) override {
    if (pop_.empty()) reset(archive, model);
    SurrogatePopulation offspring = propose(archive, model);
    // survival over previous population plus offspring
    SurrogatePopulation pool = pop_;
    append(pool, offspring);
    auto keep = environmental_select_indices(
        pool.yhat, std::min<std::size_t>(static_cast<std::size_t>(cfg_.pop_size), pool.size()),
        dirs_, rng_);
    pop_ = gather(pool, keep);
    return pop_;
  }

  const SurrogatePopulation& population() const override { return pop_; }

  /// pop_size offspring from tournament + SBX + polynomial mutation over the
  /// internal population and surrogate-scored archive immigrants.
  SurrogatePopulation propose(const TruePopulation& archive, const SurrogateModel& model) {
    if (archive.empty() && pop_.empty()) throw ContractError("propose: no parents");
    SurrogatePopulation parents = pop_;
    if (!archive.empty()) append(parents, model.predict_batch(archive.X));
    auto rp = detail::rank_pool(parents.yhat);
    Mat children;
    while (static_cast<int>(children.size()) < cfg_.pop_size) {
      Vec c1 = parents.X[detail::tournament(rp, rng_)];
      Vec c2 = parents.X[detail::tournament(rp, rng_)];
      if (rng_.u01() < cfg_.sbx_prob)
        for (int j = 0; j < d_; ++j) {
          const auto ju = static_cast<std::size_t>(j);
          if (rng_.u01() < 0.5)
            detail::sbx_pair(c1[ju], c2[ju], lower_[ju], upper_[ju], cfg_.sbx_eta, rng_);
        }
      for (Vec* c : {&c1, &c2})
        for (int j = 0; j < d_; ++j) {
          const auto ju = static_cast<std::size_t>(j);
          if (rng_.u01() < pm_prob_)
            (*c)[ju] = detail::pm_var((*c)[ju], lower_[ju], upper_[ju], cfg_.pm_eta, rng_);
        }
      children.push_back(std::move(c1));
      if (static_cast<int>(children.size()) < cfg_.pop_size) children.push_back(std::move(c2));
    }
    return model.predict_batch(children);
  }

 private:
  static SurrogatePopulation gather(const SurrogatePopulation& pool,
                                    const std::vector<std::size_t>& idx) {
    SurrogatePopulation out;
    for (std::size_t i : idx) {
      out.X.push_back(pool.X[i]);
      out.yhat.push_back(pool.yhat[i]);
      out.sigma.push_back(pool.sigma[i]);
    }
    return out;
  }

  static void append(SurrogatePopulation& dst, const SurrogatePopulation& src) {
    dst.X.insert(dst.X.end(), src.X.begin(), src.X.end());
    dst.yhat.insert(dst.yhat.end(), src.yhat.begin(), src.yhat.end());
    dst.sigma.insert(dst.sigma.end(), src.sigma.begin(), src.sigma.end());
  }

  EvolveConfig cfg_;
  int d_, m_;
  Vec lower_, upper_;
  ReferenceDirectionSet dirs_;
  Rng rng_;
  double pm_prob_ = 0.1;
  SurrogatePopulation pop_;
};

inline std::unique_ptr<Generator> make_generator(const std::string& name,
                                                 const EvolveConfig& cfg, int d, int m,
                                                 Vec lower, Vec upper) {
  if (name == "nsga3")
    return std::make_unique<NsgaGenerator>(cfg, d, m, std::move(lower), std::move(upper));
  throw ContractError("unknown generator: '" + name + "' (available: nsga3)");
}

}  // namespace metasaea

#pragma once

// Bi-space landscape analyzer. Both populations are min-max normalized into
// unit-range feature tensors, embedded per channel, then distilled through
// two attention stages per space -- across individuals then across decision
// dimensions (stage one), across individuals then across objectives (stage
// two) -- and mean-pooled into a feature vector whose length depends only on
// the hidden width, never on population size, dimension, or objective count.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "metasaea/common.hpp"
#include "metasaea/population.hpp"
#include "metasaea/tensor.hpp"

namespace metasaea {

enum class ElaMode { BI, TRUE_ONLY, SUR_ONLY };

inline std::string to_string(ElaMode m) {
  switch (m) {
    case ElaMode::BI:
      return "bi";
    case ElaMode::TRUE_ONLY:
      return "true_only";
    case ElaMode::SUR_ONLY:
      return "sur_only";
  }
  throw ContractError("unknown ela mode");
}

inline ElaMode ela_mode_from_string(const std::string& s) {
  if (s == "bi") return ElaMode::BI;
  if (s == "true_only") return ElaMode::TRUE_ONLY;
  if (s == "sur_only") return ElaMode::SUR_ONLY;
  throw ContractError("unknown ela mode: " + s);
}

/// Width of the landscape vector z under a mode: 2h for the bi-space
/// analyzer, h when one space is ablated away.
inline int ela_z_dim(int h, ElaMode mode) {
  return mode == ElaMode::BI ? 2 * h : h;
}

/// All learnable parameters of the analyzer: one channel-embedding matrix per
/// space plus eight attention blocks (two per space and stage). The four
/// stage blocks never share weights.
struct ElaParams {
  int h = 0;
  Tensor emb_true;                     // [2, h]: (x, y) channels
  Tensor emb_sur;                      // [3, h]: (x, yhat, sigma) channels
  AttnBlock s1_true_ind, s1_true_dim;  // stage one, true space
  AttnBlock s1_sur_ind, s1_sur_dim;    // stage one, surrogate space
  AttnBlock s2_true_ind, s2_true_obj;  // stage two, true space
  AttnBlock s2_sur_ind, s2_sur_obj;    // stage two, surrogate space

  static ElaParams init(int h, Rng& rng) {
    if (h < 1) throw ContractError("ela hidden dim must be >= 1");
    ElaParams p;
    p.h = h;
    p.emb_true = Tensor::randn({2, h}, 1.0 / std::sqrt(2.0), rng, true);
    p.emb_sur = Tensor::randn({3, h}, 1.0 / std::sqrt(3.0), rng, true);
    p.s1_true_ind = AttnBlock::init(h, rng);
    p.s1_true_dim = AttnBlock::init(h, rng);
    p.s1_sur_ind = AttnBlock::init(h, rng);
    p.s1_sur_dim = AttnBlock::init(h, rng);
    p.s2_true_ind = AttnBlock::init(h, rng);
    p.s2_true_obj = AttnBlock::init(h, rng);
    p.s2_sur_ind = AttnBlock::init(h, rng);
    p.s2_sur_obj = AttnBlock::init(h, rng);
    return p;
  }

  void collect(const std::string& prefix, ParamMap& out) const {
    out[prefix + ".emb_true"] = emb_true;
    out[prefix + ".emb_sur"] = emb_sur;
    s1_true_ind.collect(prefix + ".s1_true_ind", out);
    s1_true_dim.collect(prefix + ".s1_true_dim", out);
    s1_sur_ind.collect(prefix + ".s1_sur_ind", out);
    s1_sur_dim.collect(prefix + ".s1_sur_dim", out);
    s2_true_ind.collect(prefix + ".s2_true_ind", out);
    s2_true_obj.collect(prefix + ".s2_true_obj", out);
    s2_sur_ind.collect(prefix + ".s2_sur_ind", out);
    s2_sur_obj.collect(prefix + ".s2_sur_obj", out);
  }

  std::vector<Tensor> parameters() const {
    ParamMap m;
    collect("ela", m);
    std::vector<Tensor> out;
    out.reserve(m.size());
    for (auto& [name, t] : m) out.push_back(t);
    return out;
  }

  /// Total learnable scalars: 5h embedding entries + 8 attention blocks.
  static std::size_t param_count(int h) {
    return 5u * static_cast<std::size_t>(h) + 8u * AttnBlock::param_count(h);
  }
};

/// Normalized population tensors and their channel embeddings. The layout is
/// [objective, dimension, individual, channel]; every normalized entry lies
/// in [0, 1].
struct PieTensors {
  Tensor m_true;  // [m, d, n_true, 2]
  Tensor m_sur;   // [m, d, n_sur, 3]
  Tensor e_true;  // [m, d, n_true, h]
  Tensor e_sur;   // [m, d, n_sur, h]
};

namespace detail {

// min-max scale of v against [lo, hi]; a degenerate range maps to 0.5
inline double minmax01(double v, double lo, double hi) {
  return hi > lo ? (v - lo) / (hi - lo) : 0.5;
}

// per-column extrema of a row-major matrix
inline void column_extrema(const Mat& rows, Vec& lo, Vec& hi) {
  lo.assign(rows[0].size(), std::numeric_limits<double>::infinity());
  hi.assign(rows[0].size(), -std::numeric_limits<double>::infinity());
  for (const Vec& r : rows)
    for (std::size_t j = 0; j < r.size(); ++j) {
      lo[j] = std::min(lo[j], r[j]);
      hi[j] = std::max(hi[j], r[j]);
    }
}

}  // namespace detail

/// Sinusoidal positional encodings over `d` positions with `h` channels,
/// added along the dimension axis so attention can tell dimensions apart.
inline Tensor sinusoidal_posenc(int d, int h) {
  std::vector<double> p(static_cast<std::size_t>(d) * static_cast<std::size_t>(h));
  for (int j = 0; j < d; ++j)
    for (int c = 0; c < h; ++c) {
      const double freq = std::pow(10000.0, -2.0 * (c / 2) / static_cast<double>(h));
      p[static_cast<std::size_t>(j) * h + c] =
          (c % 2 == 0) ? std::sin(j * freq) : std::cos(j * freq);
    }
  return Tensor::from({d, h}, std::move(p));
}

/// Population Information Embedding: decision vectors are normalized against
/// the search bounds; y, yhat and sigma are min-max normalized against the
/// extrema observed within their own population (degenerate ranges map to
/// 0.5). The normalized tensors are then embedded per channel.
inline PieTensors pie(const TruePopulation& p_true, const SurrogatePopulation& p_sur,
                      const Vec& lower, const Vec& upper, const ElaParams& params) {
  if (p_true.empty() || p_sur.empty())
    throw ContractError("pie: both populations must be non-empty");
  const std::size_t d = lower.size();
  const std::size_t m = p_true.Y[0].size();
  if (upper.size() != d || p_true.X[0].size() != d || p_sur.X[0].size() != d)
    throw DimensionError("pie: decision dimension mismatch");
  if (p_sur.yhat[0].size() != m || p_sur.sigma[0].size() != m)
    throw DimensionError("pie: objective dimension mismatch");
  const std::size_t nt = p_true.size(), ns = p_sur.size();

  Vec y_lo, y_hi, yh_lo, yh_hi, sg_lo, sg_hi;
  detail::column_extrema(p_true.Y, y_lo, y_hi);
  detail::column_extrema(p_sur.yhat, yh_lo, yh_hi);
  detail::column_extrema(p_sur.sigma, sg_lo, sg_hi);

  std::vector<double> mt(m * d * nt * 2), ms(m * d * ns * 3);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t k = 0; k < nt; ++k) {
        const std::size_t at = ((i * d + j) * nt + k) * 2;
        mt[at] = detail::minmax01(p_true.X[k][j], lower[j], upper[j]);
        mt[at + 1] = detail::minmax01(p_true.Y[k][i], y_lo[i], y_hi[i]);
      }
      for (std::size_t k = 0; k < ns; ++k) {
        const std::size_t at = ((i * d + j) * ns + k) * 3;
        ms[at] = detail::minmax01(p_sur.X[k][j], lower[j], upper[j]);
        ms[at + 1] = detail::minmax01(p_sur.yhat[k][i], yh_lo[i], yh_hi[i]);
        ms[at + 2] = detail::minmax01(p_sur.sigma[k][i], sg_lo[i], sg_hi[i]);
      }
    }

  PieTensors out;
  const int mi = static_cast<int>(m), di = static_cast<int>(d);
  out.m_true = Tensor::from({mi, di, static_cast<int>(nt), 2}, std::move(mt));
  out.m_sur = Tensor::from({mi, di, static_cast<int>(ns), 3}, std::move(ms));
  out.e_true = matmul(out.m_true, params.emb_true);
  out.e_sur = matmul(out.m_sur, params.emb_sur);
  return out;
}

/// Stage one: per objective, attention across individuals within each
/// dimension, then (after injecting positional encodings so the dimension
/// order survives) attention across dimensions, mean-pooled over dimensions.
inline Tensor stage_one(const Tensor& e, const AttnBlock& ind_blk,
                        const AttnBlock& dim_blk, bool with_posenc = true) {
  if (e.ndim() != 4)
    throw DimensionError("stage_one expects [m,d,n,h], got " + detail::shape_str(e.shape()));
  Tensor a = attention(e, ind_blk);       // tokens: individuals
  Tensor t = permute(a, {0, 2, 1, 3});    // [m, n, d, h]
  if (with_posenc) t = add(t, sinusoidal_posenc(t.dim(2), t.dim(3)));
  Tensor b = attention(t, dim_blk);       // tokens: dimensions
  return mean_axis(b, 2);                 // [m, n, h]
}

/// Stage two: attention across individuals, then across objectives (no
/// positional encoding on either axis), mean-pooled over both.
inline Tensor stage_two(const Tensor& s, const AttnBlock& ind_blk,
                        const AttnBlock& obj_blk) {
  if (s.ndim() != 3)
    throw DimensionError("stage_two expects [m,n,h], got " + detail::shape_str(s.shape()));
  Tensor a = attention(s, ind_blk);     // tokens: individuals
  Tensor t = permute(a, {1, 0, 2});     // [n, m, h]
  Tensor b = attention(t, obj_blk);     // tokens: objectives
  return mean_axis(mean_axis(b, 0), 0);  // [h]
}

/// Full analyzer pass: z = concat(s'_true, s'_sur) in BI mode, or the single
/// surviving branch in an ablated mode. Gradients flow to every parameter
/// that participated when recording is on.
inline Tensor ela_forward(const TruePopulation& p_true, const SurrogatePopulation& p_sur,
                          const Vec& lower, const Vec& upper, const ElaParams& params,
                          ElaMode mode = ElaMode::BI) {
  PieTensors pt = pie(p_true, p_sur, lower, upper, params);
  if (mode == ElaMode::TRUE_ONLY)
    return stage_two(stage_one(pt.e_true, params.s1_true_ind, params.s1_true_dim),
                     params.s2_true_ind, params.s2_true_obj);
  if (mode == ElaMode::SUR_ONLY)
    return stage_two(stage_one(pt.e_sur, params.s1_sur_ind, params.s1_sur_dim),
                     params.s2_sur_ind, params.s2_sur_obj);
  Tensor zt = stage_two(stage_one(pt.e_true, params.s1_true_ind, params.s1_true_dim),
                        params.s2_true_ind, params.s2_true_obj);
  Tensor zs = stage_two(stage_one(pt.e_sur, params.s1_sur_ind, params.s1_sur_dim),
                        params.s2_sur_ind, params.s2_sur_obj);
  return concat(zt, zs, 0);
}

}  // namespace metasaea

#pragma once

// Per-objective probabilistic surrogates that report a discrete probability
// distribution over K value bins, from which mean/std are extracted. Two
// interchangeable backends:
//   ENSEMBLE (default): bootstrap ensemble of B ridge regressors over shared
//     random Fourier features (RBF approximation); bin probabilities are the
//     Laplace-smoothed histogram of member predictions.
//   GP: exact squared-exponential Gaussian process (median-heuristic length
//     scale, Cholesky solve); bin probabilities are Gaussian CDF differences
//     with tail mass folded into the edge bins.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "metasaea/common.hpp"
#include "metasaea/population.hpp"

namespace metasaea {

enum class SurrogateBackend { ENSEMBLE, GP };

struct SurrogateConfig {
  SurrogateBackend backend = SurrogateBackend::ENSEMBLE;
  int bins = 32;       // K
  int members = 16;    // B, ensemble only
  int features = 200;  // random Fourier features, ensemble only
  double ridge = 1e-3;
  double smoothing = -1.0;  // Laplace alpha; negative -> default 0.5/K
  double gp_noise = 1e-6;
  std::uint64_t seed = 0;
};

struct BinnedPrediction {
  Vec edges;  // K+1, strictly ascending
  Vec probs;  // K, sums to 1

  void validate() const {
    if (edges.size() != probs.size() + 1)
      throw DimensionError("BinnedPrediction: edges must have one more entry than probs");
    for (std::size_t k = 1; k < edges.size(); ++k)
      if (edges[k] <= edges[k - 1])
        throw ContractError("BinnedPrediction: edges not strictly ascending");
    double s = 0.0;
    for (double p : probs) s += p;
    if (std::abs(s - 1.0) > 1e-9)
      throw ContractError("BinnedPrediction: probabilities sum to " + std::to_string(s));
  }
};

/// Mean and std of the bin-midpoint distribution.
inline std::pair<double, double> moments(const BinnedPrediction& pred) {
  double mean = 0.0;
  for (std::size_t k = 0; k < pred.probs.size(); ++k)
    mean += pred.probs[k] * 0.5 * (pred.edges[k] + pred.edges[k + 1]);
  double var = 0.0;
  for (std::size_t k = 0; k < pred.probs.size(); ++k) {
    double mu_k = 0.5 * (pred.edges[k] + pred.edges[k + 1]);
    var += pred.probs[k] * (mu_k - mean) * (mu_k - mean);
  }
  return {mean, std::sqrt(std::max(0.0, var))};
}

namespace detail {

inline Vec make_edges(double lo, double hi, int bins) {
  double range = hi - lo;
  double pad = range > 1e-12 ? 0.1 * range : 1.0;
  Vec edges(static_cast<std::size_t>(bins) + 1);
  double a = lo - pad, b = hi + pad;
  for (int k = 0; k <= bins; ++k)
    edges[static_cast<std::size_t>(k)] =
        a + (b - a) * static_cast<double>(k) / static_cast<double>(bins);
  return edges;
}

inline std::size_t bin_of(const Vec& edges, double v) {
  const std::size_t K = edges.size() - 1;
  if (v <= edges.front()) return 0;
  if (v >= edges.back()) return K - 1;
  double w = (edges.back() - edges.front()) / static_cast<double>(K);
  auto k = static_cast<std::size_t>((v - edges.front()) / w);
  return std::min(k, K - 1);
}

inline double median_pairwise_distance(const Mat& X) {
  std::vector<double> d;
  d.reserve(X.size() * (X.size() - 1) / 2);
  for (std::size_t i = 0; i < X.size(); ++i)
    for (std::size_t j = i + 1; j < X.size(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < X[i].size(); ++c) {
        double t = X[i][c] - X[j][c];
        s += t * t;
      }
      if (s > 0.0) d.push_back(std::sqrt(s));
    }
  if (d.empty()) return 1.0;
  std::nth_element(d.begin(), d.begin() + static_cast<long>(d.size() / 2), d.end());
  return d[d.size() / 2];
}

}  // namespace detail

class SurrogateModel {
 public:
  SurrogateModel() = default;

  static SurrogateModel fit(const Mat& X, const Mat& Y, const SurrogateConfig& cfg) {
    if (X.size() < 2) throw ContractError("surrogate fit needs at least 2 training points");
    if (X.size() != Y.size()) throw DimensionError("surrogate fit: |X| != |Y|");
    SurrogateModel model;
    model.cfg_ = cfg;
    model.d_ = static_cast<int>(X[0].size());
    model.m_ = static_cast<int>(Y[0].size());
    model.length_scale_ = detail::median_pairwise_distance(X);
    const int n = static_cast<int>(X.size());
    for (int obj = 0; obj < model.m_; ++obj) {
      Vec col(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = Y[static_cast<std::size_t>(i)][static_cast<std::size_t>(obj)];
      double lo = *std::min_element(col.begin(), col.end());
      double hi = *std::max_element(col.begin(), col.end());
      model.edges_.push_back(detail::make_edges(lo, hi, cfg.bins));
      if (cfg.backend == SurrogateBackend::ENSEMBLE)
        model.fit_ensemble_objective(X, col, obj);
      else
        model.fit_gp_objective(X, col, obj);
    }
    model.fitted_ = true;
    return model;
  }

  bool fitted() const { return fitted_; }
  int objectives() const { return m_; }
  const SurrogateConfig& config() const { return cfg_; }

  std::vector<BinnedPrediction> predict(const Vec& x) const {
    require_fitted();
    if (static_cast<int>(x.size()) != d_)
      throw DimensionError("surrogate predict: point dimension mismatch");
    std::vector<BinnedPrediction> out;
    out.reserve(static_cast<std::size_t>(m_));
    for (int obj = 0; obj < m_; ++obj) {
      if (cfg_.backend == SurrogateBackend::ENSEMBLE)
        out.push_back(predict_ensemble(x, obj));
      else
        out.push_back(predict_gp(x, obj));
    }
    return out;
  }

  SurrogatePopulation predict_batch(const Mat& X) const {
    require_fitted();
    if (X.empty()) throw ContractError("predict_batch needs at least one point");
    SurrogatePopulation pop;
    pop.X = X;
    pop.yhat.assign(X.size(), Vec(static_cast<std::size_t>(m_)));
    pop.sigma.assign(X.size(), Vec(static_cast<std::size_t>(m_)));
    for (std::size_t i = 0; i < X.size(); ++i) {
      auto preds = predict(X[i]);
      for (int obj = 0; obj < m_; ++obj) {
        auto [mean, sd] = moments(preds[static_cast<std::size_t>(obj)]);
        pop.yhat[i][static_cast<std::size_t>(obj)] = mean;
        pop.sigma[i][static_cast<std::size_t>(obj)] = sd;
      }
    }
    return pop;
  }

  /// Analytic GP posterior (mean, std) before binning; GP backend only.
  std::pair<double, double> gp_posterior(const Vec& x, int obj) const {
    require_fitted();
    if (cfg_.backend != SurrogateBackend::GP)
      throw ContractError("gp_posterior is only available on the GP backend");
    return gp_mean_std(x, obj);
  }

 private:
  using EMat = Eigen::MatrixXd;
  using EVec = Eigen::VectorXd;

  void require_fitted() const {
    if (!fitted_) throw ContractError("surrogate model is not fitted");
  }

  // z(x) = sqrt(2/F) cos(Wx + b): rows of W ~ N(0, 1/ls^2), b ~ U[0, 2pi)
  EVec rff_features(const Vec& x, int obj) const {
    const auto& e = ens_[static_cast<std::size_t>(obj)];
    EVec xe = Eigen::Map<const EVec>(x.data(), x.size());
    EVec z = (e.W * xe + e.b).array().cos() *
             std::sqrt(2.0 / static_cast<double>(cfg_.features));
    return z;
  }

  void fit_ensemble_objective(const Mat& X, const Vec& y, int obj) {
    const int n = static_cast<int>(X.size());
    const int F = cfg_.features;
    const int B = cfg_.members;
    Rng rng(derive_seed(cfg_.seed, 0x50f7, static_cast<std::uint64_t>(obj)));
    EnsembleState e;
    e.W = EMat(F, d_);
    e.b = EVec(F);
    const double inv_ls = 1.0 / std::max(length_scale_, 1e-12);
    for (int r = 0; r < F; ++r) {
      for (int c = 0; c < d_; ++c) e.W(r, c) = rng.normal() * inv_ls;
      e.b(r) = rng.uniform(0.0, 2.0 * M_PI);
    }
    ens_.push_back(std::move(e));
    EnsembleState& st = ens_.back();

    EMat Z(n, F);
    for (int i = 0; i < n; ++i)
      Z.row(i) = rff_features(X[static_cast<std::size_t>(i)], obj).transpose();
    EMat G = Z * Z.transpose();  // shared Gram; member fits gather rows

    // dual-space ridge per bootstrap member:
    //   alpha = (G_b + ridge I)^-1 y_b,  w = Z_b^T alpha
    st.weights = EMat(B, F);
    for (int b = 0; b < B; ++b) {
      std::vector<int> idx(static_cast<std::size_t>(n));
      for (int& i : idx) i = static_cast<int>(rng.below(static_cast<std::size_t>(n)));
      EMat Gb(n, n);
      EVec yb(n);
      for (int i = 0; i < n; ++i) {
        yb(i) = y[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
        for (int j = 0; j < n; ++j)
          Gb(i, j) = G(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
      }
      Gb.diagonal().array() += cfg_.ridge;
      EVec alpha = Gb.ldlt().solve(yb);
      EVec w = EVec::Zero(F);
      for (int i = 0; i < n; ++i) w += alpha(i) * Z.row(idx[static_cast<std::size_t>(i)]).transpose();
      st.weights.row(b) = w.transpose();
    }
  }

  BinnedPrediction predict_ensemble(const Vec& x, int obj) const {
    const auto& st = ens_[static_cast<std::size_t>(obj)];
    const auto& edges = edges_[static_cast<std::size_t>(obj)];
    EVec z = rff_features(x, obj);
    EVec preds = st.weights * z;  // one prediction per member
    const int K = cfg_.bins;
    const double alpha = cfg_.smoothing >= 0.0 ? cfg_.smoothing : 0.5 / K;
    Vec probs(static_cast<std::size_t>(K), alpha);
    for (int b = 0; b < preds.size(); ++b) probs[detail::bin_of(edges, preds(b))] += 1.0;
    double total = static_cast<double>(preds.size()) + alpha * K;
    for (double& p : probs) p /= total;
    return {edges, probs};
  }

  void fit_gp_objective(const Mat& X, const Vec& y, int obj) {
    const int n = static_cast<int>(X.size());
    GpState g;
    g.X = X;
    g.y_mean = 0.0;
    for (double v : y) g.y_mean += v;
    g.y_mean /= n;
    double var = 0.0;
    for (double v : y) var += (v - g.y_mean) * (v - g.y_mean);
    g.y_std = std::sqrt(var / n);
    if (g.y_std < 1e-12) g.y_std = 1.0;
    EVec yt(n);
    for (int i = 0; i < n; ++i) yt(i) = (y[static_cast<std::size_t>(i)] - g.y_mean) / g.y_std;
    EMat K(n, n);
    const double inv2ls2 = 1.0 / (2.0 * length_scale_ * length_scale_);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) {
        double s = 0.0;
        for (int c = 0; c < d_; ++c) {
          double t = X[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] -
                     X[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
          s += t * t;
        }
        K(i, j) = K(j, i) = std::exp(-s * inv2ls2);
      }
    K.diagonal().array() += cfg_.gp_noise;
    g.chol = K.llt();
    g.alpha = g.chol.solve(yt);
    gps_.push_back(std::move(g));
    (void)obj;
  }

  std::pair<double, double> gp_mean_std(const Vec& x, int obj) const {
    const auto& g = gps_[static_cast<std::size_t>(obj)];
    const int n = static_cast<int>(g.X.size());
    EVec ks(n);
    const double inv2ls2 = 1.0 / (2.0 * length_scale_ * length_scale_);
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int c = 0; c < d_; ++c) {
        double t = x[static_cast<std::size_t>(c)] -
                   g.X[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
        s += t * t;
      }
      ks(i) = std::exp(-s * inv2ls2);
    }
    double mean = g.y_mean + g.y_std * ks.dot(g.alpha);
    EVec v = g.chol.matrixL().solve(ks);
    double var_f = std::max(0.0, 1.0 - v.squaredNorm());
    return {mean, g.y_std * std::sqrt(var_f)};
  }

  BinnedPrediction predict_gp(const Vec& x, int obj) const {
    const auto& edges = edges_[static_cast<std::size_t>(obj)];
    auto [mu, sd] = gp_mean_std(x, obj);
    const std::size_t K = edges.size() - 1;
    // the binned form cannot express certainty finer than one bin: a
    // posterior tighter than the bin width would collapse to a point mass at
    // the bin center, and the moments extracted downstream would then claim
    // zero spread around a mean that is off by up to half a bin
    sd = std::max(sd, (edges[K] - edges[0]) / static_cast<double>(K));
    Vec probs(K, 0.0);
    // interior CDF differences; tail mass folds into the two edge bins
    double prev = 0.0;  // CDF at -inf
    for (std::size_t k = 0; k < K; ++k) {
      double cdf = k + 1 < K ? norm_cdf((edges[k + 1] - mu) / sd) : 1.0;
      probs[k] = cdf - prev;
      prev = cdf;
    }
    return {edges, probs};
  }

  struct EnsembleState {
    EMat W;        // F x d feature frequencies
    EVec b;        // F phase offsets
    EMat weights;  // B x F per-member primal weights
  };
  struct GpState {
    Mat X;
    Eigen::LLT<EMat> chol;
    EVec alpha;
    double y_mean = 0.0, y_std = 1.0;
  };

  SurrogateConfig cfg_;
  int d_ = 0, m_ = 0;
  double length_scale_ = 1.0;
  bool fitted_ = false;
  std::vector<Vec> edges_;  // per objective, K+1
  std::vector<EnsembleState> ens_;
  std::vector<GpState> gps_;
};

}  // namespace metasaea

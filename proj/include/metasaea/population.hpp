#pragma once

// The two evaluation spaces the optimizer juggles: an archive of truly
// evaluated solutions and the current batch of surrogate-scored candidates.

#include <cstddef>

#include "metasaea/common.hpp"

namespace metasaea {

/// Archive of truly evaluated solutions (x_i, y_i = f(x_i)).
struct TruePopulation {
  Mat X;  // n x d
  Mat Y;  // n x m

  std::size_t size() const { return X.size(); }
  bool empty() const { return X.empty(); }

  void append(const Vec& x, const Vec& y) {
    if (!X.empty() && (x.size() != X[0].size() || y.size() != Y[0].size()))
      throw DimensionError("TruePopulation::append: inconsistent row width");
    X.push_back(x);
    Y.push_back(y);
  }
};

/// Surrogate-scored candidates (x_i, yhat_i, sigma_i).
struct SurrogatePopulation {
  Mat X;      // q x d
  Mat yhat;   // q x m  predicted objective means
  Mat sigma;  // q x m  predicted objective stds (>= 0)

  std::size_t size() const { return X.size(); }
  bool empty() const { return X.empty(); }

  void validate() const {
    if (X.size() != yhat.size() || X.size() != sigma.size())
      throw DimensionError("SurrogatePopulation: mismatched row counts");
    for (std::size_t i = 0; i < sigma.size(); ++i)
      for (double s : sigma[i])
        if (s < 0.0) throw ContractError("SurrogatePopulation: negative sigma");
  }
};

}  // namespace metasaea

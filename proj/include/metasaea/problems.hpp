#pragma once

// The nine benchmark problems (ZDT1-3, DTLZ2-7), Latin hypercube
// initialization, per-problem analytic-front extrema used to normalize
// hypervolume, and the true-evaluation budget counter.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "metasaea/common.hpp"

namespace metasaea {

enum class ProblemName { ZDT1, ZDT2, ZDT3, DTLZ2, DTLZ3, DTLZ4, DTLZ5, DTLZ6, DTLZ7 };

inline const char* to_string(ProblemName p) {
  switch (p) {
    case ProblemName::ZDT1: return "zdt1";
    case ProblemName::ZDT2: return "zdt2";
    case ProblemName::ZDT3: return "zdt3";
    case ProblemName::DTLZ2: return "dtlz2";
    case ProblemName::DTLZ3: return "dtlz3";
    case ProblemName::DTLZ4: return "dtlz4";
    case ProblemName::DTLZ5: return "dtlz5";
    case ProblemName::DTLZ6: return "dtlz6";
    case ProblemName::DTLZ7: return "dtlz7";
  }
  return "?";
}

inline bool is_zdt(ProblemName p) {
  return p == ProblemName::ZDT1 || p == ProblemName::ZDT2 || p == ProblemName::ZDT3;
}

inline ProblemName problem_from_string(const std::string& s) {
  for (ProblemName p : {ProblemName::ZDT1, ProblemName::ZDT2, ProblemName::ZDT3,
                        ProblemName::DTLZ2, ProblemName::DTLZ3, ProblemName::DTLZ4,
                        ProblemName::DTLZ5, ProblemName::DTLZ6, ProblemName::DTLZ7})
    if (s == to_string(p)) return p;
  throw ContractError("unknown problem name: '" + s + "'");
}

struct ProblemSpec {
  ProblemName name = ProblemName::ZDT1;
  int d = 0;
  int m = 2;
  Vec lower, upper;

  static ProblemSpec make(ProblemName name, int d, int m) {
    if (d < 2) throw ContractError("problem dimension must be >= 2, got " + std::to_string(d));
    if (is_zdt(name)) {
      if (m != 2) throw ContractError(std::string(to_string(name)) + " requires m=2");
    } else {
      if (m != 2 && m != 3)
        throw ContractError(std::string(to_string(name)) + " supports m in {2,3}");
      if (d < m) throw ContractError("DTLZ requires d >= m");
    }
    ProblemSpec s;
    s.name = name;
    s.d = d;
    s.m = m;
    s.lower.assign(static_cast<std::size_t>(d), 0.0);
    s.upper.assign(static_cast<std::size_t>(d), 1.0);
    return s;
  }

  /// Number of distance variables in the DTLZ family.
  int dtlz_k() const { return d - m + 1; }

  std::string id() const {
    std::ostringstream os;
    os << to_string(name) << ":d=" << d << ":m=" << m;
    return os.str();
  }
};

/// Parses "zdt1:d=30:m=2" (m optional: defaults to 2 for ZDT, 3 for DTLZ).
inline ProblemSpec parse_task(const std::string& s) {
  std::istringstream in(s);
  std::string tok;
  if (!std::getline(in, tok, ':')) throw ContractError("empty task string");
  ProblemName name = problem_from_string(tok);
  int d = -1, m = is_zdt(name) ? 2 : 3;
  while (std::getline(in, tok, ':')) {
    auto eq = tok.find('=');
    if (eq == std::string::npos)
      throw ContractError("bad task token '" + tok + "' in '" + s + "'");
    std::string key = tok.substr(0, eq);
    int val = 0;
    try {
      val = std::stoi(tok.substr(eq + 1));
    } catch (const std::exception&) {
      throw ContractError("bad task token '" + tok + "' in '" + s + "'");
    }
    if (key == "d")
      d = val;
    else if (key == "m")
      m = val;
    else
      throw ContractError("bad task token '" + tok + "' in '" + s + "'");
  }
  if (d < 0) throw ContractError("task '" + s + "' is missing d=");
  return ProblemSpec::make(name, d, m);
}

namespace detail {

inline void check_in_bounds(const ProblemSpec& spec, const Vec& x) {
  if (static_cast<int>(x.size()) != spec.d)
    throw DimensionError("evaluate: point has dim " + std::to_string(x.size()) +
                         ", problem expects " + std::to_string(spec.d));
  for (int i = 0; i < spec.d; ++i) {
    const auto j = static_cast<std::size_t>(i);
    if (x[j] < spec.lower[j] || x[j] > spec.upper[j])
      throw std::domain_error("evaluate: coordinate " + std::to_string(i) + " = " +
                              std::to_string(x[j]) + " outside [0,1]");
  }
}

inline double zdt_g(const Vec& x) {
  double s = 0.0;
  for (std::size_t i = 1; i < x.size(); ++i) s += x[i];
  return 1.0 + 9.0 * s / static_cast<double>(x.size() - 1);
}

inline double dtlz_g2(const Vec& x, int k) {
  double g = 0.0;
  for (std::size_t i = x.size() - static_cast<std::size_t>(k); i < x.size(); ++i)
    g += (x[i] - 0.5) * (x[i] - 0.5);
  return g;
}

inline double dtlz_g3(const Vec& x, int k) {
  double g = 0.0;
  for (std::size_t i = x.size() - static_cast<std::size_t>(k); i < x.size(); ++i)
    g += (x[i] - 0.5) * (x[i] - 0.5) - std::cos(20.0 * M_PI * (x[i] - 0.5));
  return 100.0 * (static_cast<double>(k) + g);
}

inline double dtlz_g6(const Vec& x, int k) {
  double g = 0.0;
  for (std::size_t i = x.size() - static_cast<std::size_t>(k); i < x.size(); ++i)
    g += std::pow(x[i], 0.1);
  return g;
}

inline double dtlz_g7(const Vec& x, int k) {
  double g = 0.0;
  for (std::size_t i = x.size() - static_cast<std::size_t>(k); i < x.size(); ++i) g += x[i];
  return 1.0 + 9.0 * g / static_cast<double>(k);
}

// spherical objectives shared by DTLZ2/3/4 given position angles in [0,1]
inline Vec dtlz_sphere(const Vec& pos, int m, double g) {
  Vec f(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    double v = 1.0 + g;
    for (int i = 0; i < m - 1 - j; ++i) v *= std::cos(pos[static_cast<std::size_t>(i)] * M_PI / 2.0);
    if (j > 0) v *= std::sin(pos[static_cast<std::size_t>(m - 1 - j)] * M_PI / 2.0);
    f[static_cast<std::size_t>(j)] = v;
  }
  return f;
}

}  // namespace detail

inline Vec evaluate(const ProblemSpec& spec, const Vec& x) {
  detail::check_in_bounds(spec, x);
  const int m = spec.m;
  switch (spec.name) {
    case ProblemName::ZDT1: {
      double g = detail::zdt_g(x);
      double f1 = x[0];
      return {f1, g * (1.0 - std::sqrt(f1 / g))};
    }
    case ProblemName::ZDT2: {
      double g = detail::zdt_g(x);
      double f1 = x[0];
      return {f1, g * (1.0 - (f1 / g) * (f1 / g))};
    }
    case ProblemName::ZDT3: {
      double g = detail::zdt_g(x);
      double f1 = x[0];
      return {f1, g * (1.0 - std::sqrt(f1 / g) - (f1 / g) * std::sin(10.0 * M_PI * f1))};
    }
    case ProblemName::DTLZ2:
    case ProblemName::DTLZ3:
    case ProblemName::DTLZ4: {
      const int k = spec.dtlz_k();
      double g = spec.name == ProblemName::DTLZ3 ? detail::dtlz_g3(x, k)
                                                 : detail::dtlz_g2(x, k);
      Vec pos(x.begin(), x.begin() + (m - 1));
      if (spec.name == ProblemName::DTLZ4)
        for (double& p : pos) p = std::pow(p, 100.0);
      return detail::dtlz_sphere(pos, m, g);
    }
    case ProblemName::DTLZ5:
    case ProblemName::DTLZ6: {
      const int k = spec.dtlz_k();
      double g = spec.name == ProblemName::DTLZ5 ? detail::dtlz_g2(x, k)
                                                 : detail::dtlz_g6(x, k);
      // degenerate position mapping: later angles squeezed toward pi/4 as g -> 0
      Vec theta(static_cast<std::size_t>(m - 1));
      theta[0] = x[0];
      for (int i = 1; i < m - 1; ++i)
        theta[static_cast<std::size_t>(i)] =
            (1.0 + 2.0 * g * x[static_cast<std::size_t>(i)]) / (2.0 * (1.0 + g));
      return detail::dtlz_sphere(theta, m, g);
    }
    case ProblemName::DTLZ7: {
      const int k = spec.dtlz_k();
      double g = detail::dtlz_g7(x, k);
      Vec f(static_cast<std::size_t>(m));
      for (int j = 0; j < m - 1; ++j) f[static_cast<std::size_t>(j)] = x[static_cast<std::size_t>(j)];
      double h = static_cast<double>(m);
      for (int j = 0; j < m - 1; ++j) {
        double fj = f[static_cast<std::size_t>(j)];
        h -= fj / (1.0 + g) * (1.0 + std::sin(3.0 * M_PI * fj));
      }
      f[static_cast<std::size_t>(m - 1)] = (1.0 + g) * h;
      return f;
    }
  }
  throw ContractError("unreachable problem name");
}

/// Classic Latin hypercube: one uniformly jittered sample per stratum per
/// dimension, strata order shuffled independently per dimension.
inline Mat lhs_init(const ProblemSpec& spec, int n, std::uint64_t seed) {
  if (n < 1) throw ContractError("lhs_init needs n >= 1");
  Rng rng(seed);
  Mat out(static_cast<std::size_t>(n), Vec(static_cast<std::size_t>(spec.d)));
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int j = 0; j < spec.d; ++j) {
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i)
      std::swap(perm[static_cast<std::size_t>(i)],
                perm[rng.below(static_cast<std::size_t>(i) + 1)]);
    const auto ju = static_cast<std::size_t>(j);
    for (int i = 0; i < n; ++i) {
      double u = (static_cast<double>(perm[static_cast<std::size_t>(i)]) + rng.u01()) /
                 static_cast<double>(n);
      out[static_cast<std::size_t>(i)][ju] =
          spec.lower[ju] + u * (spec.upper[ju] - spec.lower[ju]);
    }
  }
  return out;
}

struct BudgetState {
  int t = 0;
  int fe_max = 0;
  int n_init = 0;

  static BudgetState start(int n_init, int fe_max) {
    if (n_init < 1 || fe_max < n_init)
      throw ContractError("budget requires 1 <= n_init <= fe_max");
    return {n_init, fe_max, n_init};
  }

  bool exhausted() const { return t >= fe_max; }
  /// Fraction of the total budget consumed: t / fe_max, in [n_init/fe_max, 1].
  double rho() const { return static_cast<double>(t) / static_cast<double>(fe_max); }
  void spend(int k = 1) {
    if (t + k > fe_max) throw ContractError("evaluation budget exceeded");
    t += k;
  }
};

/// Component-wise extrema of the analytic Pareto front, used to normalize
/// objectives before hypervolume computation so HV is comparable across
/// problems. Values were computed from the closed-form fronts (1-d searches
/// for the ZDT3/DTLZ7 disconnected fronts).
struct FrontExtrema {
  Vec ideal, nadir;
};

inline FrontExtrema front_extrema(const ProblemSpec& spec) {
  // extrema of the disconnected fronts, from the closed-form expressions
  constexpr double kZdt3F2Min = -0.7733690123266762;
  constexpr double kZdt3F1Max = 0.8518328654376494;
  constexpr double kDtlz7FposMax = 0.8594008527856556;   // max f_{1..m-1} on front
  constexpr double kDtlz7LastMin2 = 2.3070043655022864;  // min f_m, m=2
  constexpr double kDtlz7LastMin3 = 2.6140087310045728;  // min f_m, m=3
  const int m = spec.m;
  switch (spec.name) {
    case ProblemName::ZDT1:
    case ProblemName::ZDT2:
      return {{0.0, 0.0}, {1.0, 1.0}};
    case ProblemName::ZDT3:
      return {{0.0, kZdt3F2Min}, {kZdt3F1Max, 1.0}};
    case ProblemName::DTLZ2:
    case ProblemName::DTLZ3:
    case ProblemName::DTLZ4:
      return {Vec(static_cast<std::size_t>(m), 0.0), Vec(static_cast<std::size_t>(m), 1.0)};
    case ProblemName::DTLZ5:
    case ProblemName::DTLZ6: {
      if (m == 2) return {{0.0, 0.0}, {1.0, 1.0}};
      const double s = std::sqrt(2.0) / 2.0;
      return {{0.0, 0.0, 0.0}, {s, s, 1.0}};
    }
    case ProblemName::DTLZ7: {
      if (m == 2) return {{0.0, kDtlz7LastMin2}, {kDtlz7FposMax, 4.0}};
      return {{0.0, 0.0, kDtlz7LastMin3}, {kDtlz7FposMax, kDtlz7FposMax, 6.0}};
    }
  }
  throw ContractError("unreachable problem name");
}

}  // namespace metasaea

#pragma once

// The optimization MDP and its meta-policy. An Environment steps the dual
// populations under six actions (resample the candidate population, or pick
// one of five infill criteria and spend true evaluations), pays a
// front-improvement reward, and exposes the landscape state. A dueling
// Q-network chooses actions epsilon-greedily, and the round-based trainer
// replays population snapshots so gradients reach both the policy and the
// landscape analyzer.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "metasaea/common.hpp"
#include "metasaea/ela.hpp"
#include "metasaea/evolve.hpp"
#include "metasaea/infill.hpp"
#include "metasaea/pareto.hpp"
#include "metasaea/population.hpp"
#include "metasaea/problems.hpp"
#include "metasaea/surrogate.hpp"
#include "metasaea/tensor.hpp"

namespace metasaea {

inline constexpr int kActionCount = 6;

/// a_1 resamples the candidate population without spending budget; a_2..a_6
/// evaluate the elite chosen by the matching infill criterion.
enum class ActionId {
  A1_RESAMPLE = 0,
  A2_ND_A = 1,
  A3_ND_DPBI_CONV = 2,
  A4_ND_DPBI_DIV = 3,
  A5_EPDI_EXPLORE = 4,
  A6_EPDI_EXPLOIT = 5,
};

inline ActionId action_from_index(int i) {
  if (i < 0 || i >= kActionCount) throw ContractError("action index out of range");
  return static_cast<ActionId>(i);
}

inline int action_index(ActionId a) { return static_cast<int>(a); }

inline bool is_resample(ActionId a) { return a == ActionId::A1_RESAMPLE; }

/// Infill criterion behind an evaluation action.
inline CriterionId action_criterion(ActionId a) {
  if (is_resample(a)) throw ContractError("a_1 carries no infill criterion");
  return criterion_from_index(action_index(a) - 1);
}

inline std::string to_string(ActionId a) {
  if (is_resample(a)) return "resample";
  return to_string(action_criterion(a));
}

// ---------------------------------------------------------------------------
// reward

/// 0 for a resample; otherwise 1 + lambda * sum_i d_i/d_ref_i if the
/// non-dominated set changed (with d_i/d_ref from the previous front, and the
/// raw d_i when d_ref ~ 0), else -1.
inline double reward(ActionId action, const Mat& new_points, const Mat& prev_front,
                     double lambda) {
  if (is_resample(action)) return 0.0;
  if (new_points.empty()) throw ContractError("reward: evaluation step with no new points");
  if (prev_front.empty()) throw ContractError("reward: empty previous front");

  // the union front only needs the previous front itself: anything the old
  // front dominated stays dominated
  Mat pool = prev_front;
  pool.insert(pool.end(), new_points.begin(), new_points.end());
  auto keep = front_indices(pool);
  Mat new_front;
  new_front.reserve(keep.size());
  for (std::size_t i : keep) new_front.push_back(pool[i]);

  auto as_set = [](Mat pts) {
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    return pts;
  };
  const bool improved = as_set(new_front) != as_set(prev_front);
  if (!improved) return -1.0;

  double bonus = 0.0;
  for (const Vec& y : new_points) {
    auto [d, dref] = manhattan_front_distance(y, prev_front);
    bonus += dref < 1e-9 ? d : d / dref;
  }
  return 1.0 + lambda * bonus;
}

// ---------------------------------------------------------------------------
// dueling Q-network

/// Q = V + A - mean(A), expressed as two matrix products so the whole
/// aggregation stays on the gradient tape: V [B,1] x 1_{1xk} + A [B,k] x
/// (I - J/k).
inline Tensor dueling_aggregate(const Tensor& v, const Tensor& a) {
  if (v.ndim() != 2 || a.ndim() != 2 || v.dim(0) != a.dim(0) || v.dim(1) != 1)
    throw DimensionError("dueling_aggregate expects V [B,1] and A [B,k]");
  const int k = a.dim(1);
  std::vector<double> ones(static_cast<std::size_t>(k), 1.0);
  std::vector<double> center(static_cast<std::size_t>(k) * static_cast<std::size_t>(k),
                             -1.0 / static_cast<double>(k));
  for (int i = 0; i < k; ++i)
    center[static_cast<std::size_t>(i) * static_cast<std::size_t>(k) +
           static_cast<std::size_t>(i)] += 1.0;
  return add(matmul(v, Tensor::from({1, k}, std::move(ones))),
             matmul(a, Tensor::from({k, k}, std::move(center))));
}

/// Shared trunk (in -> 64 -> 64) with a value head and a six-way advantage
/// head combined by dueling aggregation.
struct QNetwork {
  int in_dim = 0;
  Tensor w1, b1, w2, b2;  // trunk
  Tensor wv, bv;          // value head
  Tensor wa, ba;          // advantage head

  static constexpr int kHidden = 64;

  static QNetwork init(int in_dim, Rng& rng) {
    if (in_dim < 1) throw ContractError("q-network input width must be >= 1");
    QNetwork n;
    n.in_dim = in_dim;
    auto w = [&](int r, int c) {
      return Tensor::randn({r, c}, 1.0 / std::sqrt(static_cast<double>(r)), rng, true);
    };
    n.w1 = w(in_dim, kHidden);
    n.b1 = Tensor::zeros({kHidden}, true);
    n.w2 = w(kHidden, kHidden);
    n.b2 = Tensor::zeros({kHidden}, true);
    n.wv = w(kHidden, 1);
    n.bv = Tensor::zeros({1}, true);
    n.wa = w(kHidden, kActionCount);
    n.ba = Tensor::zeros({kActionCount}, true);
    return n;
  }

  /// s [B, in_dim] -> Q [B, 6]; stays on the tape when recording is on.
  Tensor forward(const Tensor& s) const {
    if (s.ndim() != 2 || s.dim(1) != in_dim)
      throw DimensionError("q-network expects [B," + std::to_string(in_dim) + "] states");
    Tensor h1 = gelu(add(matmul(s, w1), b1));
    Tensor h2 = gelu(add(matmul(h1, w2), b2));
    return dueling_aggregate(add(matmul(h2, wv), bv), add(matmul(h2, wa), ba));
  }

  /// Detached single-state convenience used during sampling.
  Vec q_values(const Vec& s) const {
    NoGrad ng;
    Tensor row = Tensor::from({1, static_cast<int>(s.size())}, s);
    return forward(row).value();
  }

  void collect(const std::string& prefix, ParamMap& out) const {
    out[prefix + ".w1"] = w1;
    out[prefix + ".b1"] = b1;
    out[prefix + ".w2"] = w2;
    out[prefix + ".b2"] = b2;
    out[prefix + ".wv"] = wv;
    out[prefix + ".bv"] = bv;
    out[prefix + ".wa"] = wa;
    out[prefix + ".ba"] = ba;
  }

  std::vector<Tensor> parameters() const {
    return {w1, b1, w2, b2, wv, bv, wa, ba};
  }

  /// Deep copy with detached, non-trainable tensors (the target network).
  QNetwork target_copy() const {
    QNetwork t;
    t.in_dim = in_dim;
    auto detach = [](const Tensor& x) { return Tensor::from(x.shape(), x.value()); };
    t.w1 = detach(w1);
    t.b1 = detach(b1);
    t.w2 = detach(w2);
    t.b2 = detach(b2);
    t.wv = detach(wv);
    t.bv = detach(bv);
    t.wa = detach(wa);
    t.ba = detach(ba);
    return t;
  }

  /// Copies parameter values from `src` in place (target-network sync).
  void assign_from(const QNetwork& src) {
    auto cp = [](Tensor& dst, const Tensor& s) { dst.mutable_value() = s.value(); };
    cp(w1, src.w1);
    cp(b1, src.b1);
    cp(w2, src.w2);
    cp(b2, src.b2);
    cp(wv, src.wv);
    cp(bv, src.bv);
    cp(wa, src.wa);
    cp(ba, src.ba);
  }
};

// ---------------------------------------------------------------------------
// policy

/// Epsilon-greedy over the allowed actions: uniform with probability eps,
/// otherwise argmax Q (ties to the lowest index).
inline ActionId act(const Vec& s, double eps, const std::array<bool, kActionCount>& allowed,
                    const QNetwork& net, Rng& rng) {
  std::vector<int> open;
  for (int i = 0; i < kActionCount; ++i)
    if (allowed[static_cast<std::size_t>(i)]) open.push_back(i);
  if (open.empty()) throw ContractError("act: every action is masked");
  if (rng.u01() < eps)
    return action_from_index(open[static_cast<std::size_t>(
        rng.below(static_cast<int>(open.size())))]);
  Vec q = net.q_values(s);
  int best = open[0];
  for (int i : open)
    if (q[static_cast<std::size_t>(i)] > q[static_cast<std::size_t>(best)]) best = i;
  return action_from_index(best);
}

// ---------------------------------------------------------------------------
// transitions and replay

/// One MDP step. Raw population snapshots (plus the search bounds they live
/// in) are stored instead of precomputed states so training can push
/// gradients through the current landscape analyzer.
struct Transition {
  TruePopulation p_true;
  SurrogatePopulation p_sur;
  double rho = 0.0;
  Vec lower, upper;
  int action = 0;
  double r = 0.0;
  TruePopulation p_true_next;
  SurrogatePopulation p_sur_next;
  double rho_next = 0.0;
  bool done = false;
};

/// Centralized buffer, cleared between rounds.
struct ReplayBuffer {
  std::vector<Transition> items;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  void clear() { items.clear(); }
  void merge(std::vector<Transition>&& batch) {
    for (Transition& t : batch) items.push_back(std::move(t));
  }
};

struct AgentConfig {
  double gamma = 0.99;
  double lr = 1e-4;
  int batch = 64;
  double eps_start = 1.0;
  double eps_end = 0.05;
  double eps_fraction = 0.5;  // share of total episodes the decay spans
  int target_sync = 200;
  double lambda = 1.0;
  int max_consecutive_resamples = 5;
  double huber_delta = 1.0;
  double grad_clip = 10.0;
  int updates_per_round = 2;

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ContractError("gamma must lie in (0,1]");
    if (batch < 1) throw ContractError("batch must be >= 1");
    if (lr <= 0.0) throw ContractError("learning rate must be positive");
    if (eps_start < 0.0 || eps_start > 1.0 || eps_end < 0.0 || eps_end > eps_start)
      throw ContractError("epsilon schedule needs 0 <= eps_end <= eps_start <= 1");
    if (eps_fraction <= 0.0 || eps_fraction > 1.0)
      throw ContractError("eps_fraction must lie in (0,1]");
    if (target_sync < 1) throw ContractError("target_sync must be >= 1");
    if (max_consecutive_resamples < 1)
      throw ContractError("max_consecutive_resamples must be >= 1");
    if (huber_delta <= 0.0) throw ContractError("huber_delta must be positive");
    if (grad_clip <= 0.0) throw ContractError("grad_clip must be positive");
    if (updates_per_round < 1) throw ContractError("updates_per_round must be >= 1");
  }

  /// Linear decay from eps_start to eps_end over the first eps_fraction of
  /// all episodes, then flat.
  double epsilon(int episodes_done, int total_episodes) const {
    const double span = std::max(1.0, eps_fraction * static_cast<double>(total_episodes));
    const double frac = static_cast<double>(episodes_done) / span;
    if (frac >= 1.0) return eps_end;
    return eps_start + (eps_end - eps_start) * frac;
  }
};

// ---------------------------------------------------------------------------
// environment

struct EnvOptions {
  int n_init = 20;
  int fe_max = 40;
  int k_infill = 1;
  std::string generator = "nsga3";
  SurrogateConfig surrogate;
  EvolveConfig evolve;
  InfillConfig infill;

  void validate() const {
    if (n_init < 2) throw ContractError("n_init must be >= 2 to fit a surrogate");
    if (fe_max < n_init) throw ContractError("fe_max must be >= n_init");
    if (k_infill < 1) throw ContractError("k_infill must be >= 1");
  }
};

/// The optimization episode: archive + surrogate + candidate generator,
/// stepped by meta-policy actions. All randomness derives from the episode
/// seed; the analyzer parameters are only read.
class Environment {
 public:
  Environment(const ProblemSpec& spec, const EnvOptions& opt, const AgentConfig& agent,
              const ElaParams& ela, ElaMode mode, std::uint64_t seed)
      : spec_(spec),
        opt_(opt),
        lambda_(agent.lambda),
        max_resamples_(agent.max_consecutive_resamples),
        ela_(&ela),
        mode_(mode),
        seed_(seed) {
    opt_.validate();
    opt_.surrogate.seed = derive_seed(seed, 0x5e1);
    opt_.evolve.seed = derive_seed(seed, 0xe7a);
  }

  void reset() {
    archive_ = TruePopulation{};
    Mat init = lhs_init(spec_, opt_.n_init, derive_seed(seed_, 0x1a5));
    for (const Vec& x : init) archive_.append(x, evaluate(spec_, x));
    budget_ = BudgetState::start(opt_.n_init, opt_.fe_max);
    model_ = SurrogateModel::fit(archive_.X, archive_.Y, opt_.surrogate);
    gen_ = make_generator(opt_.generator, opt_.evolve, spec_.d, spec_.m, spec_.lower,
                          spec_.upper);
    gen_->reset(archive_, model_);
    consecutive_resamples_ = 0;
    done_ = budget_.exhausted();
    refresh_state();
  }

  bool done() const { return done_; }
  const Vec& state() const { return state_; }
  double rho() const { return budget_.rho(); }
  int true_evals_spent() const { return budget_.t - budget_.n_init; }
  const TruePopulation& archive() const { return archive_; }
  const SurrogatePopulation& candidates() const { return gen_->population(); }
  const ProblemSpec& problem() const { return spec_; }
  int consecutive_resamples() const { return consecutive_resamples_; }

  /// All actions, with a_1 removed once the resample streak hits its cap (or
  /// when the caller forbids resampling outright).
  std::array<bool, kActionCount> action_mask(bool allow_resample = true) const {
    std::array<bool, kActionCount> mask;
    mask.fill(true);
    if (!allow_resample || consecutive_resamples_ >= max_resamples_) mask[0] = false;
    return mask;
  }

  /// Applies one action: a_1 advances the candidate population for free;
  /// a_2..a_6 evaluate the criterion's elite, refit the surrogate, and
  /// regenerate the candidates under the new fit.
  Transition step(ActionId a) {
    if (done_) throw ContractError("env step on a finished episode");
    Transition tr;
    tr.p_true = archive_;
    tr.p_sur = gen_->population();
    tr.rho = budget_.rho();
    tr.lower = spec_.lower;
    tr.upper = spec_.upper;
    tr.action = action_index(a);

    if (is_resample(a)) {
      gen_->resample(archive_, model_);
      tr.r = 0.0;
      ++consecutive_resamples_;
    } else {
      const auto fidx = front_indices(archive_.Y);
      Mat prev_front;
      prev_front.reserve(fidx.size());
      for (std::size_t i : fidx) prev_front.push_back(archive_.Y[i]);

      const std::size_t k = std::min<std::size_t>(
          static_cast<std::size_t>(opt_.k_infill),
          static_cast<std::size_t>(budget_.fe_max - budget_.t));
      auto picked = select_elite(action_criterion(a), gen_->population(), archive_,
                                 gen_->directions(), k, opt_.infill);
      Mat new_points;
      for (std::size_t ix : picked) {
        Vec x = gen_->population().X[ix];
        Vec y = evaluate(spec_, x);
        archive_.append(x, y);
        new_points.push_back(std::move(y));
        budget_.spend();
      }
      tr.r = reward(a, new_points, prev_front, lambda_);
      model_ = SurrogateModel::fit(archive_.X, archive_.Y, opt_.surrogate);
      gen_->resample(archive_, model_);
      consecutive_resamples_ = 0;
    }

    done_ = budget_.exhausted();
    tr.p_true_next = archive_;
    tr.p_sur_next = gen_->population();
    tr.rho_next = budget_.rho();
    tr.done = done_;
    refresh_state();
    return tr;
  }

  /// Normalized hypervolume of the current archive front against the
  /// problem's frozen ideal/nadir.
  double final_normalized_hv() const {
    auto fe = front_extrema(spec_);
    Mat front;
    for (std::size_t i : front_indices(archive_.Y)) front.push_back(archive_.Y[i]);
    return normalized_hypervolume(front, fe.ideal, fe.nadir);
  }

 private:
  void refresh_state() {
    NoGrad ng;
    Tensor z = ela_forward(archive_, gen_->population(), spec_.lower, spec_.upper, *ela_,
                           mode_);
    state_ = z.value();
    state_.push_back(budget_.rho());
  }

  ProblemSpec spec_;
  EnvOptions opt_;
  double lambda_;
  int max_resamples_;
  const ElaParams* ela_;
  ElaMode mode_;
  std::uint64_t seed_;

  TruePopulation archive_;
  BudgetState budget_{};
  SurrogateModel model_;
  std::unique_ptr<Generator> gen_;
  Vec state_;
  int consecutive_resamples_ = 0;
  bool done_ = true;
};

// ---------------------------------------------------------------------------
// episode sampling

struct EpisodeResult {
  std::vector<Transition> transitions;
  double total_reward = 0.0;
  int true_evals = 0;
  int steps = 0;
  double final_hv = 0.0;

  double reward_per_true_eval() const {
    return true_evals > 0 ? total_reward / static_cast<double>(true_evals) : 0.0;
  }
};

/// Resets the environment and rolls one episode to termination under the
/// epsilon-greedy policy. `control_mask` pre-restricts the action set (all
/// true for the full dual-control scheme).
inline EpisodeResult run_episode(Environment& env, const QNetwork& net, double eps,
                                 Rng& rng,
                                 const std::array<bool, kActionCount>& control_mask = {
                                     true, true, true, true, true, true}) {
  env.reset();
  EpisodeResult out;
  while (!env.done()) {
    auto mask = env.action_mask(control_mask[0]);
    for (int i = 1; i < kActionCount; ++i)
      mask[static_cast<std::size_t>(i)] =
          mask[static_cast<std::size_t>(i)] && control_mask[static_cast<std::size_t>(i)];
    ActionId a = act(env.state(), eps, mask, net, rng);
    Transition tr = env.step(a);
    out.total_reward += tr.r;
    out.transitions.push_back(std::move(tr));
    ++out.steps;
  }
  out.true_evals = env.true_evals_spent();
  out.final_hv = env.final_normalized_hv();
  return out;
}

// ---------------------------------------------------------------------------
// trainer

struct TrainStats {
  int updates = 0;
  double mean_loss = 0.0;
  double last_grad_norm = 0.0;
};

/// Owns the mutable analyzer + policy parameters and the target network, and
/// performs the per-round replay updates. Environments read the parameters
/// between rounds only.
class Trainer {
 public:
  Trainer(ElaParams ela, QNetwork net, const AgentConfig& cfg, ElaMode mode,
          std::uint64_t seed)
      : ela_(std::move(ela)),
        net_(std::move(net)),
        target_(net_.target_copy()),
        cfg_(cfg),
        mode_(mode),
        rng_(seed),
        opt_(collect_params(ela_, net_)) {
    cfg_.validate();
    if (net_.in_dim != ela_z_dim(ela_.h, mode_) + 1)
      throw ContractError("q-network width does not match analyzer state width");
  }

  const ElaParams& ela() const { return ela_; }
  const QNetwork& net() const { return net_; }
  const AgentConfig& config() const { return cfg_; }
  ElaMode mode() const { return mode_; }
  int gradient_steps() const { return steps_; }

  /// Mini-batch dueling-DQN updates over the round's buffer. States are
  /// recomputed from the stored snapshots through the current analyzer, so
  /// the update trains both parameter sets jointly.
  TrainStats train_round(const ReplayBuffer& buffer) {
    if (buffer.empty()) throw ContractError("train_round: empty replay buffer");
    TrainStats stats;
    double loss_sum = 0.0;
    for (int u = 0; u < cfg_.updates_per_round; ++u) {
      // multiplicity-weighted batch so each distinct transition is embedded
      // only once
      std::map<std::size_t, int> picks;
      for (int b = 0; b < cfg_.batch; ++b)
        ++picks[static_cast<std::size_t>(rng_.below(static_cast<int>(buffer.size())))];

      Tensor loss;
      for (const auto& [ix, mult] : picks) {
        const Transition& tr = buffer.items[ix];
        double target_value = tr.r;
        if (!tr.done) {
          NoGrad ng;
          Vec s_next = state_of(tr.p_true_next, tr.p_sur_next, tr.lower, tr.upper,
                                tr.rho_next);
          Vec q = target_.q_values(s_next);
          target_value += cfg_.gamma * *std::max_element(q.begin(), q.end());
        }
        Tensor z = ela_forward(tr.p_true, tr.p_sur, tr.lower, tr.upper, ela_, mode_);
        Tensor s = reshape(concat(z, Tensor::from({1}, {tr.rho}), 0),
                           {1, net_.in_dim});
        Tensor q_sa = select(net_.forward(s), static_cast<std::size_t>(tr.action));
        Tensor term = scalar_mul(huber_loss(q_sa, target_value, cfg_.huber_delta),
                                 static_cast<double>(mult) / cfg_.batch);
        loss = loss.defined() ? add(loss, term) : term;
      }

      loss_sum += loss.item();
      backward(loss);
      opt_.clip_grad_norm(cfg_.grad_clip);
      stats.last_grad_norm = opt_.grad_norm();
      opt_.step(cfg_.lr);
      opt_.zero_grad();
      ++steps_;
      ++stats.updates;
      if (steps_ % cfg_.target_sync == 0) target_.assign_from(net_);
    }
    stats.mean_loss = loss_sum / static_cast<double>(stats.updates);
    return stats;
  }

 private:
  Vec state_of(const TruePopulation& pt, const SurrogatePopulation& ps, const Vec& lower,
               const Vec& upper, double rho) const {
    Tensor z = ela_forward(pt, ps, lower, upper, ela_, mode_);
    Vec s = z.value();
    s.push_back(rho);
    return s;
  }

  static std::vector<Tensor> collect_params(const ElaParams& ela, const QNetwork& net) {
    std::vector<Tensor> all = ela.parameters();
    for (const Tensor& t : net.parameters()) all.push_back(t);
    return all;
  }

  ElaParams ela_;
  QNetwork net_;
  QNetwork target_;
  AgentConfig cfg_;
  ElaMode mode_;
  Rng rng_;
  Adam opt_;
  int steps_ = 0;
};

}  // namespace metasaea

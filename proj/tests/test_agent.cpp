#include "metasaea/agent.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "metasaea/checkpoint.hpp"
#include "oracles.hpp"

using namespace metasaea;

namespace {

EnvOptions small_env_options() {
  EnvOptions opt;
  opt.n_init = 10;
  opt.fe_max = 16;
  opt.surrogate.backend = SurrogateBackend::ENSEMBLE;
  opt.evolve.pop_size = 12;
  return opt;
}

TruePopulation tiny_true() {
  TruePopulation p;
  p.append({0.1, 0.2, 0.3}, {0.5, 1.5});
  p.append({0.6, 0.4, 0.1}, {1.0, 0.8});
  p.append({0.9, 0.8, 0.7}, {1.7, 0.3});
  return p;
}

SurrogatePopulation tiny_sur() {
  SurrogatePopulation p;
  p.X = {{0.2, 0.3, 0.4}, {0.7, 0.1, 0.5}};
  p.yhat = {{0.6, 1.2}, {1.3, 0.5}};
  p.sigma = {{0.1, 0.2}, {0.3, 0.1}};
  return p;
}

Transition tiny_transition(int action, double r, bool done) {
  Transition tr;
  tr.p_true = tiny_true();
  tr.p_sur = tiny_sur();
  tr.rho = 0.6;
  tr.lower = Vec(3, 0.0);
  tr.upper = Vec(3, 1.0);
  tr.action = action;
  tr.r = r;
  tr.p_true_next = tr.p_true;
  tr.p_true_next.append({0.5, 0.5, 0.5}, {0.9, 0.9});
  tr.p_sur_next = tr.p_sur;
  tr.rho_next = 0.8;
  tr.done = done;
  return tr;
}

}  // namespace

TEST(Reward, ResampleIsNeutral) {
  Mat front = {{0.0, 1.0}, {1.0, 0.0}};
  EXPECT_DOUBLE_EQ(reward(ActionId::A1_RESAMPLE, {}, front, 1.0), 0.0);
}

TEST(Reward, DominatedNewPointPenalized) {
  Mat front = {{0.0, 1.0}, {1.0, 0.0}};
  EXPECT_DOUBLE_EQ(reward(ActionId::A2_ND_A, {{1.5, 1.5}}, front, 1.0), -1.0);
}

TEST(Reward, ImprovementBonusHandValue) {
  // nearest front point (0.8, 1.2) has L1 norm 2.0; the new point dominates
  // it at Manhattan distance 0.2, so r = 1 + 1 * 0.2/2.0 = 1.1
  Mat front = {{0.8, 1.2}};
  EXPECT_DOUBLE_EQ(reward(ActionId::A3_ND_DPBI_CONV, {{0.7, 1.1}}, front, 1.0), 1.1);
}

TEST(Reward, LambdaZeroGivesUnitImprovement) {
  Mat front = {{0.8, 1.2}};
  EXPECT_DOUBLE_EQ(reward(ActionId::A2_ND_A, {{0.7, 1.1}}, front, 0.0), 1.0);
}

TEST(Reward, FrontExtensionWithoutDominationCounts) {
  // the new point is mutually non-dominated with the front, so the
  // non-dominated set changes as a set even though nothing is displaced
  Mat front = {{0.0, 1.0}};
  const double d = 0.5 + 0.5;  // L1 distance from (0.5, 0.5) to (0.0, 1.0)
  const double dref = 1.0;
  EXPECT_DOUBLE_EQ(reward(ActionId::A2_ND_A, {{0.5, 0.5}}, front, 1.0), 1.0 + d / dref);
}

TEST(Reward, NearZeroReferenceFallsBackToRawDistance) {
  Mat front = {{0.0, 0.0}};
  // (-0.1, 0.1) is mutually non-dominated with the origin; d_ref = 0 so the
  // raw distance 0.2 is used
  EXPECT_DOUBLE_EQ(reward(ActionId::A2_ND_A, {{-0.1, 0.1}}, front, 1.0), 1.2);
}

TEST(Reward, DuplicateOfFrontPointPenalized) {
  Mat front = {{0.0, 1.0}, {1.0, 0.0}};
  EXPECT_DOUBLE_EQ(reward(ActionId::A6_EPDI_EXPLOIT, {{0.0, 1.0}}, front, 1.0), -1.0);
}

TEST(Actions, CriterionMappingAndStrings) {
  EXPECT_THROW(action_criterion(ActionId::A1_RESAMPLE), ContractError);
  EXPECT_EQ(action_criterion(ActionId::A2_ND_A), CriterionId::ND_A);
  EXPECT_EQ(action_criterion(ActionId::A6_EPDI_EXPLOIT), CriterionId::EPDI_EXPLOIT);
  EXPECT_EQ(to_string(ActionId::A1_RESAMPLE), "resample");
  EXPECT_EQ(to_string(ActionId::A4_ND_DPBI_DIV), to_string(CriterionId::ND_DPBI_DIV));
  EXPECT_THROW(action_from_index(6), ContractError);
}

TEST(Dueling, AggregationCentersAdvantages) {
  // V = 1, A = [1..6]: the centered advantages are [-2.5,...,2.5] and the
  // value stream shifts them all by +1
  Tensor v = Tensor::from({1, 1}, {1.0});
  Tensor a = Tensor::from({1, 6}, {1, 2, 3, 4, 5, 6});
  Tensor q = dueling_aggregate(v, a);
  const Vec centered = {-2.5, -1.5, -0.5, 0.5, 1.5, 2.5};
  ASSERT_EQ(q.numel(), 6u);
  for (std::size_t i = 0; i < 6; ++i)
    EXPECT_NEAR(q.value()[i], 1.0 + centered[i], 1e-12);
}

TEST(Dueling, MeanOfAggregateEqualsValue) {
  Rng rng(5);
  Tensor v = Tensor::randn({3, 1}, 1.0, rng);
  Tensor a = Tensor::randn({3, 6}, 1.0, rng);
  Tensor q = dueling_aggregate(v, a);
  for (int b = 0; b < 3; ++b) {
    double mean = 0.0;
    for (int i = 0; i < 6; ++i) mean += q.value()[static_cast<std::size_t>(b * 6 + i)];
    EXPECT_NEAR(mean / 6.0, v.value()[static_cast<std::size_t>(b)], 1e-12);
  }
}

TEST(QNetwork, DeterministicAndFinite) {
  Rng rng(7);
  auto net = QNetwork::init(9, rng);
  Vec s(9, 0.3);
  Vec q1 = net.q_values(s);
  Vec q2 = net.q_values(s);
  EXPECT_EQ(q1, q2);
  ASSERT_EQ(q1.size(), 6u);
  for (double v : q1) EXPECT_TRUE(std::isfinite(v));
}

TEST(QNetwork, TdLossMatchesFiniteDifferences) {
  // joint gradient through the analyzer and the network at h=4
  Rng rng(11);
  auto ela = ElaParams::init(4, rng);
  auto net = QNetwork::init(2 * 4 + 1, rng);
  Transition tr = tiny_transition(3, 0.7, false);
  const double target = 1.25;

  auto loss_value = [&]() {
    NoGrad ng;
    Tensor z = ela_forward(tr.p_true, tr.p_sur, tr.lower, tr.upper, ela);
    Tensor s = reshape(concat(z, Tensor::from({1}, {tr.rho}), 0), {1, 9});
    Tensor q = select(net.forward(s), static_cast<std::size_t>(tr.action));
    double d = q.value()[0] - target;
    return std::abs(d) <= 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
  };

  Tensor z = ela_forward(tr.p_true, tr.p_sur, tr.lower, tr.upper, ela);
  Tensor s = reshape(concat(z, Tensor::from({1}, {tr.rho}), 0), {1, 9});
  Tensor loss = huber_loss(select(net.forward(s), static_cast<std::size_t>(tr.action)),
                           target, 1.0);
  backward(loss);

  for (Tensor* p : std::vector<Tensor*>{&net.w1, &net.wa, &net.wv, &ela.emb_sur,
                                        &ela.s1_sur_ind.wv}) {
    auto numeric = oracles::fd_gradient(*p, loss_value);
    EXPECT_LE(oracles::grad_rel_err(p->grad(), numeric), 1e-4);
  }
}

TEST(Act, GreedyPicksArgmaxOverAllowed) {
  Rng rng(13);
  auto net = QNetwork::init(5, rng);
  Vec s = {0.1, -0.4, 0.7, 0.2, 0.9};
  Vec q = net.q_values(s);
  std::array<bool, kActionCount> all;
  all.fill(true);
  ActionId a = act(s, 0.0, all, net, rng);
  EXPECT_EQ(q[static_cast<std::size_t>(action_index(a))],
            *std::max_element(q.begin(), q.end()));

  // masking the argmax forces the runner-up
  auto masked = all;
  masked[static_cast<std::size_t>(action_index(a))] = false;
  ActionId b = act(s, 0.0, masked, net, rng);
  EXPECT_NE(b, a);
  double best_rest = -1e300;
  for (int i = 0; i < kActionCount; ++i)
    if (i != action_index(a)) best_rest = std::max(best_rest, q[static_cast<std::size_t>(i)]);
  EXPECT_EQ(q[static_cast<std::size_t>(action_index(b))], best_rest);
}

TEST(Act, ForcedSingleActionAndAllMasked) {
  Rng rng(17);
  auto net = QNetwork::init(5, rng);
  Vec s(5, 0.0);
  std::array<bool, kActionCount> only_a2{};
  only_a2[1] = true;
  for (int i = 0; i < 20; ++i) EXPECT_EQ(act(s, 1.0, only_a2, net, rng), ActionId::A2_ND_A);
  std::array<bool, kActionCount> none{};
  EXPECT_THROW(act(s, 0.5, none, net, rng), ContractError);
}

TEST(AgentConfig, ValidatesAndSchedulesEpsilon) {
  AgentConfig cfg;
  cfg.validate();
  EXPECT_DOUBLE_EQ(cfg.epsilon(0, 100), 1.0);
  EXPECT_NEAR(cfg.epsilon(25, 100), 1.0 + (0.05 - 1.0) * 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(cfg.epsilon(50, 100), 0.05);
  EXPECT_DOUBLE_EQ(cfg.epsilon(100, 100), 0.05);

  AgentConfig bad = cfg;
  bad.gamma = 0.0;
  EXPECT_THROW(bad.validate(), ContractError);
  bad = cfg;
  bad.eps_end = 2.0;
  EXPECT_THROW(bad.validate(), ContractError);
  bad = cfg;
  bad.batch = 0;
  EXPECT_THROW(bad.validate(), ContractError);
}

TEST(Environment, ResampleStepKeepsArchiveAndBudget) {
  Rng rng(19);
  auto ela = ElaParams::init(4, rng);
  auto spec = ProblemSpec::make(ProblemName::ZDT1, 5, 2);
  Environment env(spec, small_env_options(), AgentConfig{}, ela, ElaMode::BI, 99);
  env.reset();
  const std::size_t n0 = env.archive().size();
  const Vec s0 = env.state();
  const double rho0 = env.rho();

  Transition tr = env.step(ActionId::A1_RESAMPLE);
  EXPECT_DOUBLE_EQ(tr.r, 0.0);
  EXPECT_EQ(env.archive().size(), n0);
  EXPECT_DOUBLE_EQ(env.rho(), rho0);
  EXPECT_FALSE(tr.done);
  EXPECT_EQ(tr.p_true.size(), n0);
  EXPECT_EQ(tr.p_true_next.size(), n0);
  // the candidate population advanced a generation, so the state moved
  EXPECT_NE(env.state(), s0);
  EXPECT_EQ(env.consecutive_resamples(), 1);
}

TEST(Environment, EvaluationStepGrowsArchive) {
  Rng rng(23);
  auto ela = ElaParams::init(4, rng);
  auto spec = ProblemSpec::make(ProblemName::ZDT1, 5, 2);
  Environment env(spec, small_env_options(), AgentConfig{}, ela, ElaMode::BI, 7);
  env.reset();
  const std::size_t n0 = env.archive().size();
  const int t0 = env.true_evals_spent();

  Transition tr = env.step(ActionId::A2_ND_A);
  EXPECT_EQ(env.archive().size(), n0 + 1);
  EXPECT_EQ(env.true_evals_spent(), t0 + 1);
  EXPECT_EQ(env.consecutive_resamples(), 0);
  EXPECT_TRUE(tr.r == -1.0 || tr.r >= 1.0);  // the reward cases partition
  EXPECT_EQ(tr.p_true_next.size(), n0 + 1);
}

TEST(Environment, MaskCapsConsecutiveResamples) {
  Rng rng(29);
  auto ela = ElaParams::init(4, rng);
  auto spec = ProblemSpec::make(ProblemName::ZDT1, 5, 2);
  AgentConfig cfg;
  cfg.max_consecutive_resamples = 3;
  Environment env(spec, small_env_options(), cfg, ela, ElaMode::BI, 55);
  env.reset();
  for (int i = 0; i < 3; ++i) {
    EXPECT_TRUE(env.action_mask()[0]);
    env.step(ActionId::A1_RESAMPLE);
  }
  EXPECT_FALSE(env.action_mask()[0]);
  env.step(ActionId::A2_ND_A);  // an evaluation resets the streak
  EXPECT_TRUE(env.action_mask()[0]);
  EXPECT_FALSE(env.action_mask(false)[0]);  // caller can forbid outright
}

TEST(Environment, EpisodeAccountingUnderRandomPolicy) {
  Rng rng(31);
  auto ela = ElaParams::init(4, rng);
  auto spec = ProblemSpec::make(ProblemName::ZDT1, 5, 2);
  auto opt = small_env_options();
  auto net = QNetwork::init(ela_z_dim(4, ElaMode::BI) + 1, rng);

  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Environment env(spec, opt, AgentConfig{}, ela, ElaMode::BI, seed);
    Rng erng(derive_seed(seed, 0xac7));
    auto res = run_episode(env, net, 1.0, erng);
    EXPECT_TRUE(env.done());
    EXPECT_EQ(res.true_evals, opt.fe_max - opt.n_init);
    EXPECT_GE(res.steps, res.true_evals);
    // a random policy on this tiny budget may leave the whole front outside
    // the reference box, so only finiteness and the lower bound are promised
    EXPECT_TRUE(std::isfinite(res.final_hv));
    EXPECT_GE(res.final_hv, 0.0);
    // the mask kept every resample streak within the cap
    int streak = 0, max_streak = 0;
    for (const Transition& tr : res.transitions) {
      streak = tr.action == 0 ? streak + 1 : 0;
      max_streak = std::max(max_streak, streak);
    }
    EXPECT_LE(max_streak, AgentConfig{}.max_consecutive_resamples);
    // done is set exactly on the last transition
    for (std::size_t i = 0; i < res.transitions.size(); ++i)
      EXPECT_EQ(res.transitions[i].done, i + 1 == res.transitions.size());
    EXPECT_THROW(env.step(ActionId::A2_ND_A), ContractError);
  }
}

TEST(Environment, DeterministicUnderSeed) {
  Rng rng(37);
  auto ela = ElaParams::init(4, rng);
  auto spec = ProblemSpec::make(ProblemName::DTLZ2, 5, 2);
  auto opt = small_env_options();
  auto net = QNetwork::init(ela_z_dim(4, ElaMode::BI) + 1, rng);

  auto roll = [&]() {
    Environment env(spec, opt, AgentConfig{}, ela, ElaMode::BI, 123);
    Rng erng(77);
    return run_episode(env, net, 0.3, erng);
  };
  auto a = roll();
  auto b = roll();
  EXPECT_DOUBLE_EQ(a.total_reward, b.total_reward);
  EXPECT_DOUBLE_EQ(a.final_hv, b.final_hv);
  ASSERT_EQ(a.transitions.size(), b.transitions.size());
  for (std::size_t i = 0; i < a.transitions.size(); ++i)
    EXPECT_EQ(a.transitions[i].action, b.transitions[i].action);
}

TEST(Environment, InfillOnlyMaskSpendsEveryStep) {
  Rng rng(41);
  auto ela = ElaParams::init(4, rng);
  auto spec = ProblemSpec::make(ProblemName::ZDT1, 5, 2);
  auto opt = small_env_options();
  auto net = QNetwork::init(ela_z_dim(4, ElaMode::BI) + 1, rng);
  Environment env(spec, opt, AgentConfig{}, ela, ElaMode::BI, 9);
  Rng erng(13);
  std::array<bool, kActionCount> no_resample = {false, true, true, true, true, true};
  auto res = run_episode(env, net, 1.0, erng, no_resample);
  EXPECT_EQ(res.steps, res.true_evals);  // every step truly evaluates
  for (const Transition& tr : res.transitions) EXPECT_NE(tr.action, 0);
}

TEST(ReplayBuffer, MergeAndClear) {
  ReplayBuffer buf;
  EXPECT_TRUE(buf.empty());
  std::vector<Transition> a(2, tiny_transition(1, 0.5, false));
  std::vector<Transition> b(3, tiny_transition(0, 0.0, true));
  buf.merge(std::move(a));
  buf.merge(std::move(b));
  EXPECT_EQ(buf.size(), 5u);
  buf.clear();
  EXPECT_TRUE(buf.empty());
}

TEST(Trainer, DegenerateTargetConvergesToReward) {
  // identical terminal transitions: the TD target is exactly r, so the
  // Huber loss must shrink below 1e-3 within 500 updates
  Rng rng(43);
  auto ela = ElaParams::init(4, rng);
  auto net = QNetwork::init(2 * 4 + 1, rng);
  AgentConfig cfg;
  cfg.batch = 8;
  cfg.lr = 3e-3;  // the tiny fixture tolerates a hotter rate than the default
  cfg.updates_per_round = 1;
  Trainer trainer(std::move(ela), std::move(net), cfg, ElaMode::BI, 7);

  ReplayBuffer buf;
  buf.items.assign(4, tiny_transition(2, 0.7, true));

  double last = 0.0;
  for (int i = 0; i < 500; ++i) last = trainer.train_round(buf).mean_loss;
  EXPECT_LT(last, 1e-3);
  EXPECT_EQ(trainer.gradient_steps(), 500);
}

TEST(Trainer, UpdatesBothParameterSets) {
  Rng rng(47);
  auto ela = ElaParams::init(4, rng);
  auto net = QNetwork::init(2 * 4 + 1, rng);
  const Vec emb_before = ela.emb_true.value();
  const Vec w_before = net.wa.value();
  AgentConfig cfg;
  cfg.batch = 4;
  Trainer trainer(std::move(ela), std::move(net), cfg, ElaMode::BI, 3);
  ReplayBuffer buf;
  buf.items.assign(3, tiny_transition(4, -1.0, false));
  trainer.train_round(buf);
  EXPECT_NE(trainer.ela().emb_true.value(), emb_before);
  EXPECT_NE(trainer.net().wa.value(), w_before);
}

TEST(Trainer, RejectsEmptyBufferAndWidthMismatch) {
  Rng rng(53);
  auto ela = ElaParams::init(4, rng);
  auto net = QNetwork::init(2 * 4 + 1, rng);
  Trainer trainer(ElaParams::init(4, rng), QNetwork::init(9, rng), AgentConfig{},
                  ElaMode::BI, 1);
  ReplayBuffer empty;
  EXPECT_THROW(trainer.train_round(empty), ContractError);
  // TRUE_ONLY halves the state, so a 2h+1 network no longer fits
  EXPECT_THROW(Trainer(ElaParams::init(4, rng), QNetwork::init(9, rng), AgentConfig{},
                       ElaMode::TRUE_ONLY, 1),
               ContractError);
}

TEST(Checkpoint, AgentParametersRoundTrip) {
  Rng rng(59);
  auto ela = ElaParams::init(4, rng);
  auto net = QNetwork::init(9, rng);
  ParamMap params;
  ela.collect("ela", params);
  net.collect("q", params);
  auto j = params_to_json(params, 4);

  Rng rng2(61);
  auto ela2 = ElaParams::init(4, rng2);
  auto net2 = QNetwork::init(9, rng2);
  ParamMap params2;
  ela2.collect("ela", params2);
  net2.collect("q", params2);
  params_from_json(j, params2, 4);
  EXPECT_EQ(ela2.emb_true.value(), ela.emb_true.value());
  EXPECT_EQ(net2.w2.value(), net.w2.value());
  EXPECT_THROW(params_from_json(j, params2, 16), ContractError);
}

#pragma once

// Orchestration: round-based meta-policy training with parallel episode
// sampling, leave-one-task-out cross-validation, greedy zero-shot evaluation
// against a named baseline, and the surrogate prediction bench. Commands are
// pure functions returning structured results; CSV/JSON writers live
// alongside so the CLI stays a thin shell.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "metasaea/agent.hpp"
#include "metasaea/checkpoint.hpp"
#include "metasaea/config.hpp"

namespace metasaea {

// ---------------------------------------------------------------------------
// control modes

/// What the meta-policy is allowed to decide. DUAL exposes all six actions;
/// INFILL_ONLY always evaluates (no a_1); EA_ONLY only times resampling,
/// with evaluations pinned to one default criterion; RANDOM ignores the
/// Q-values; FIXED always applies one criterion.
enum class ControlMode { DUAL, INFILL_ONLY, EA_ONLY, RANDOM, FIXED };

inline std::string to_string(ControlMode mode, CriterionId fixed = CriterionId::ND_A) {
  switch (mode) {
    case ControlMode::DUAL: return "dual";
    case ControlMode::INFILL_ONLY: return "infill_only";
    case ControlMode::EA_ONLY: return "ea_only";
    case ControlMode::RANDOM: return "random";
    case ControlMode::FIXED: return std::string("fixed:") + to_string(fixed);
  }
  throw ContractError("unreachable control mode");
}

inline std::pair<ControlMode, CriterionId> control_from_string(const std::string& s) {
  if (s == "dual") return {ControlMode::DUAL, CriterionId::ND_A};
  if (s == "infill_only") return {ControlMode::INFILL_ONLY, CriterionId::ND_A};
  if (s == "ea_only") return {ControlMode::EA_ONLY, CriterionId::ND_A};
  if (s == "random") return {ControlMode::RANDOM, CriterionId::ND_A};
  if (s.rfind("fixed:", 0) == 0) return {ControlMode::FIXED, criterion_from_string(s.substr(6))};
  throw ConfigError("unknown control mode '" + s + "'");
}

/// Action subset each mode exposes to the policy.
inline std::array<bool, kActionCount> control_mask(ControlMode mode,
                                                   CriterionId fixed = CriterionId::ND_A) {
  std::array<bool, kActionCount> mask{};
  switch (mode) {
    case ControlMode::DUAL:
    case ControlMode::RANDOM:
      mask.fill(true);
      break;
    case ControlMode::INFILL_ONLY:
      mask.fill(true);
      mask[0] = false;
      break;
    case ControlMode::EA_ONLY:
      mask[0] = true;
      mask[1 + criterion_index(CriterionId::ND_A)] = true;
      break;
    case ControlMode::FIXED:
      mask[1 + criterion_index(fixed)] = true;
      break;
  }
  return mask;
}

// ---------------------------------------------------------------------------
// run configuration

/// One struct covers every command; each command reads its subset. All
/// randomness flows from `seed` via derive_seed splits (see the seed_*
/// helpers below).
struct RunConfig {
  std::vector<ProblemSpec> tasks;
  int h = 16;
  ElaMode ela_mode = ElaMode::BI;
  ControlMode control = ControlMode::DUAL;
  CriterionId fixed_criterion = CriterionId::ND_A;
  int rounds = 40;
  int episodes_per_env = 1;
  EnvOptions env;
  AgentConfig agent;
  int workers = 0;  // 0 -> one per sampling job, capped by the hardware
  std::uint64_t seed = 1;
  bool paper_scale = false;
  std::string out_dir = "out";

  // eval
  std::string checkpoint;
  int eval_episodes = 10;
  std::string baseline = "random";  // or "none"

  // loto
  std::vector<ProblemName> families;
  std::vector<int> train_dims;
  int test_dim = 30;
  int repeats = 10;

  // surrogate bench
  CriterionId bench_criterion = CriterionId::ND_A;

  static RunConfig from_config(const Config& cfg) {
    RunConfig rc;
    rc.paper_scale = cfg.getb("paper_scale", false);
    for (const std::string& t : cfg.list("tasks")) {
      try {
        rc.tasks.push_back(parse_task(t));
      } catch (const ContractError& e) {
        throw ConfigError(std::string("tasks: ") + e.what());
      }
    }
    rc.h = cfg.geti("hidden_dim", 16);
    rc.ela_mode = ela_mode_from_string(cfg.str("ela_mode", "bi"));
    std::tie(rc.control, rc.fixed_criterion) =
        control_from_string(cfg.str("control", "dual"));
    rc.rounds = cfg.geti("rounds", rc.paper_scale ? 200 : 40);
    rc.episodes_per_env = cfg.geti("episodes_per_env", 1);
    rc.workers = cfg.geti("workers", 0);
    rc.seed = cfg.getu64("seed", 1);
    rc.out_dir = cfg.str("out_dir", "out");

    rc.env.n_init = cfg.geti("n_init", rc.paper_scale ? 80 : 20);
    rc.env.fe_max = cfg.geti("fe_max", rc.paper_scale ? 120 : 40);
    rc.env.k_infill = cfg.geti("k_infill", 1);
    rc.env.generator = cfg.str("generator", "nsga3");
    std::string backend = cfg.str("surrogate_backend", "ensemble");
    if (backend == "ensemble")
      rc.env.surrogate.backend = SurrogateBackend::ENSEMBLE;
    else if (backend == "gp")
      rc.env.surrogate.backend = SurrogateBackend::GP;
    else
      throw ConfigError("unknown surrogate_backend '" + backend + "'");
    rc.env.surrogate.bins = cfg.geti("bins", 32);
    rc.env.surrogate.members = cfg.geti("members", 16);
    rc.env.surrogate.features = cfg.geti("features", 200);
    rc.env.surrogate.ridge = cfg.getd("ridge", 1e-3);
    rc.env.surrogate.smoothing = cfg.getd("smoothing", -1.0);
    rc.env.surrogate.gp_noise = cfg.getd("gp_noise", 1e-6);
    rc.env.evolve.pop_size = cfg.geti("pop_size", rc.paper_scale ? 50 : 30);
    rc.env.evolve.sbx_eta = cfg.getd("sbx_eta", 15.0);
    rc.env.evolve.sbx_prob = cfg.getd("sbx_prob", 0.9);
    rc.env.evolve.pm_eta = cfg.getd("pm_eta", 20.0);
    rc.env.evolve.pm_prob = cfg.getd("pm_prob", -1.0);
    rc.env.evolve.H = cfg.geti("dir_h", -1);
    rc.env.infill.theta_conv = cfg.getd("theta_conv", 1.0);
    rc.env.infill.theta_div = cfg.getd("theta_div", 10.0);
    rc.env.infill.sigma_explore = cfg.getd("sigma_explore", 2.0);
    rc.env.infill.sigma_exploit = cfg.getd("sigma_exploit", 0.5);

    rc.agent.gamma = cfg.getd("gamma", 0.99);
    rc.agent.lr = cfg.getd("lr", 1e-4);
    rc.agent.batch = cfg.geti("batch", 64);
    rc.agent.eps_start = cfg.getd("eps_start", 1.0);
    rc.agent.eps_end = cfg.getd("eps_end", 0.05);
    rc.agent.eps_fraction = cfg.getd("eps_fraction", 0.5);
    rc.agent.target_sync = cfg.geti("target_sync", 200);
    rc.agent.lambda = cfg.getd("lambda", 1.0);
    rc.agent.max_consecutive_resamples = cfg.geti("max_consecutive_resamples", 5);
    rc.agent.huber_delta = cfg.getd("huber_delta", 1.0);
    rc.agent.grad_clip = cfg.getd("grad_clip", 10.0);
    rc.agent.updates_per_round = cfg.geti("updates_per_round", 2);

    rc.checkpoint = cfg.str("checkpoint", "");
    rc.eval_episodes = cfg.geti("eval_episodes", 10);
    rc.baseline = cfg.str("baseline", "random");

    for (const std::string& f : cfg.list("families")) {
      try {
        rc.families.push_back(problem_from_string(f));
      } catch (const ContractError& e) {
        throw ConfigError(std::string("families: ") + e.what());
      }
    }
    if (rc.families.empty())
      rc.families = {ProblemName::ZDT1,  ProblemName::ZDT2,  ProblemName::ZDT3,
                     ProblemName::DTLZ2, ProblemName::DTLZ3, ProblemName::DTLZ4,
                     ProblemName::DTLZ5, ProblemName::DTLZ6, ProblemName::DTLZ7};
    for (const std::string& t : cfg.list("train_dims")) {
      try {
        rc.train_dims.push_back(std::stoi(t));
      } catch (const std::exception&) {
        throw ConfigError("train_dims: bad entry '" + t + "'");
      }
    }
    if (rc.train_dims.empty())
      rc.train_dims = rc.paper_scale ? std::vector<int>{15, 20, 25} : std::vector<int>{8, 10};
    rc.test_dim = cfg.geti("test_dim", 30);
    rc.repeats = cfg.geti("repeats", 10);
    rc.bench_criterion = criterion_from_string(cfg.str("bench_criterion", "nd_a"));

    rc.agent.validate();
    rc.env.validate();
    if (rc.h < 1) throw ConfigError("hidden_dim must be >= 1");
    if (rc.rounds < 1) throw ConfigError("rounds must be >= 1");
    if (rc.episodes_per_env < 1) throw ConfigError("episodes_per_env must be >= 1");
    if (rc.eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
    if (rc.baseline != "random" && rc.baseline != "none")
      throw ConfigError("baseline must be 'random' or 'none'");
    return rc;
  }
};

// ---------------------------------------------------------------------------
// seed split scheme (documented in the README)

/// Analyzer/network initialization stream.
inline std::uint64_t seed_init(std::uint64_t root) { return derive_seed(root, 0xe1a); }
/// Trainer's batch-sampling stream.
inline std::uint64_t seed_trainer(std::uint64_t root) { return derive_seed(root, 0x7e0); }
/// Environment seed for (task, round, episode) during training.
inline std::uint64_t seed_episode(std::uint64_t root, int task, int round, int episode,
                                  int episodes_per_env) {
  return derive_seed(derive_seed(root, 0x7a50 + static_cast<std::uint64_t>(task)),
                     static_cast<std::uint64_t>(round) *
                             static_cast<std::uint64_t>(episodes_per_env) +
                         static_cast<std::uint64_t>(episode));
}
/// Environment seed for evaluation repeat j.
inline std::uint64_t seed_eval(std::uint64_t root, int repeat) {
  return derive_seed(derive_seed(root, 0xe7a1), static_cast<std::uint64_t>(repeat));
}
/// Per-episode policy (epsilon-greedy) stream.
inline std::uint64_t seed_policy(std::uint64_t env_seed) {
  return derive_seed(env_seed, 0xac7);
}
/// Root seed of LOTO fold f.
inline std::uint64_t seed_fold(std::uint64_t root, int fold) {
  return derive_seed(root, 0xf01d + static_cast<std::uint64_t>(fold));
}

// ---------------------------------------------------------------------------
// CSV writing

inline std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

/// Every file starts with a '#'-prefixed schema row, then the column header.
inline void write_csv(const std::string& path, const std::string& schema,
                      const std::vector<std::string>& columns,
                      const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write csv file: " + path);
  out << "# " << schema << "\n";
  for (std::size_t i = 0; i < columns.size(); ++i)
    out << columns[i] << (i + 1 < columns.size() ? "," : "\n");
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i)
      out << row[i] << (i + 1 < row.size() ? "," : "\n");
  }
}

// ---------------------------------------------------------------------------
// parallel sampling

/// Runs fn(0..n-1) on up to `workers` threads (serial when workers <= 1).
/// Callers preassign output slots, so scheduling order never shows.
inline void run_jobs(int n, int workers, const std::function<void(int)>& fn) {
  const int k = std::min(workers, n);
  if (k <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(k));
  for (int w = 0; w < k; ++w)
    pool.emplace_back([&]() {
      for (int i; (i = next.fetch_add(1)) < n;) fn(i);
    });
  for (auto& th : pool) th.join();
}

inline int effective_workers(const RunConfig& cfg, int n_jobs) {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  int w = cfg.workers > 0 ? cfg.workers : hw;
  return std::max(1, std::min(w, n_jobs));
}

// ---------------------------------------------------------------------------
// training

struct EpisodeMetric {
  int round = 0;
  std::string env;
  int episode = 0;
  double reward_per_true_eval = 0.0;
  double final_hv = 0.0;
  double epsilon = 0.0;
};

struct CurvePoint {
  int round = 0;
  std::string env;
  double reward_per_true_eval = 0.0;
  double ma5 = 0.0;
};

struct TrainResult {
  std::unique_ptr<Trainer> trainer;
  std::vector<EpisodeMetric> metrics;
  std::vector<CurvePoint> curve;
  std::vector<TrainStats> round_stats;
  std::vector<std::size_t> buffer_at_round_start;
  std::vector<std::string> task_ids;
};

/// Round-based loop: sample every (task, episode) job against the frozen
/// parameters, merge at the barrier in job order, then train. The replay
/// buffer is cleared at every round start.
inline TrainResult train(const RunConfig& cfg) {
  if (cfg.tasks.empty()) throw ConfigError("train requires a non-empty tasks list");
  Rng init_rng(seed_init(cfg.seed));
  auto ela = ElaParams::init(cfg.h, init_rng);
  auto net = QNetwork::init(ela_z_dim(cfg.h, cfg.ela_mode) + 1, init_rng);

  TrainResult out;
  out.trainer = std::make_unique<Trainer>(std::move(ela), std::move(net), cfg.agent,
                                          cfg.ela_mode, seed_trainer(cfg.seed));
  for (const ProblemSpec& t : cfg.tasks) out.task_ids.push_back(t.id());

  const int n_tasks = static_cast<int>(cfg.tasks.size());
  const int jobs = n_tasks * cfg.episodes_per_env;
  const int workers = effective_workers(cfg, jobs);
  const int total_episodes = cfg.rounds * jobs;
  const auto mask = control_mask(cfg.control, cfg.fixed_criterion);

  ReplayBuffer buffer;
  std::vector<std::vector<double>> env_reward(cfg.tasks.size());
  int episodes_done = 0;
  for (int round = 0; round < cfg.rounds; ++round) {
    buffer.clear();
    out.buffer_at_round_start.push_back(buffer.size());
    const double eps = cfg.control == ControlMode::RANDOM
                           ? 1.0
                           : cfg.agent.epsilon(episodes_done, total_episodes);

    std::vector<EpisodeResult> results(static_cast<std::size_t>(jobs));
    run_jobs(jobs, workers, [&](int j) {
      const int task = j / cfg.episodes_per_env;
      const int episode = j % cfg.episodes_per_env;
      const std::uint64_t es =
          seed_episode(cfg.seed, task, round, episode, cfg.episodes_per_env);
      Environment env(cfg.tasks[static_cast<std::size_t>(task)], cfg.env, cfg.agent,
                      out.trainer->ela(), cfg.ela_mode, es);
      Rng prng(seed_policy(es));
      results[static_cast<std::size_t>(j)] =
          run_episode(env, out.trainer->net(), eps, prng, mask);
    });

    for (int j = 0; j < jobs; ++j) {
      const int task = j / cfg.episodes_per_env;
      EpisodeResult& res = results[static_cast<std::size_t>(j)];
      out.metrics.push_back({round, out.task_ids[static_cast<std::size_t>(task)],
                             j % cfg.episodes_per_env, res.reward_per_true_eval(),
                             res.final_hv, eps});
      buffer.merge(std::move(res.transitions));
    }
    episodes_done += jobs;

    // per-env reward curve with a window-5 trailing moving average
    for (int task = 0; task < n_tasks; ++task) {
      double mean = 0.0;
      for (int e = 0; e < cfg.episodes_per_env; ++e)
        mean += results[static_cast<std::size_t>(task * cfg.episodes_per_env + e)]
                    .reward_per_true_eval();
      mean /= static_cast<double>(cfg.episodes_per_env);
      auto& hist = env_reward[static_cast<std::size_t>(task)];
      hist.push_back(mean);
      const std::size_t w = std::min<std::size_t>(5, hist.size());
      const double ma5 = std::accumulate(hist.end() - static_cast<long>(w), hist.end(), 0.0) /
                         static_cast<double>(w);
      out.curve.push_back({round, out.task_ids[static_cast<std::size_t>(task)], mean, ma5});
    }

    out.round_stats.push_back(out.trainer->train_round(buffer));
  }
  return out;
}

inline nlohmann::json agent_checkpoint_json(const Trainer& trainer, const RunConfig& cfg) {
  ParamMap params;
  trainer.ela().collect("ela", params);
  trainer.net().collect("q", params);
  nlohmann::json j = params_to_json(params, cfg.h);
  j["meta"] = {{"ela_mode", to_string(cfg.ela_mode)},
               {"control", to_string(cfg.control, cfg.fixed_criterion)},
               {"in_dim", trainer.net().in_dim},
               {"agent",
                {{"gamma", cfg.agent.gamma},
                 {"lr", cfg.agent.lr},
                 {"batch", cfg.agent.batch},
                 {"eps_start", cfg.agent.eps_start},
                 {"eps_end", cfg.agent.eps_end},
                 {"eps_fraction", cfg.agent.eps_fraction},
                 {"target_sync", cfg.agent.target_sync},
                 {"lambda", cfg.agent.lambda},
                 {"max_consecutive_resamples", cfg.agent.max_consecutive_resamples},
                 {"huber_delta", cfg.agent.huber_delta},
                 {"grad_clip", cfg.agent.grad_clip},
                 {"updates_per_round", cfg.agent.updates_per_round}}}};
  return j;
}

inline void save_agent_checkpoint(const std::string& path, const Trainer& trainer,
                                  const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw ContractError("cannot write checkpoint file: " + path);
  out << agent_checkpoint_json(trainer, cfg).dump(2) << "\n";
}

/// Rebuilds the analyzer + network at the configured width and loads the
/// stored values; an h mismatch is a checkpoint error.
inline std::pair<ElaParams, QNetwork> load_agent_checkpoint(const std::string& path,
                                                            int h, ElaMode mode) {
  Rng rng(0);
  auto ela = ElaParams::init(h, rng);
  auto net = QNetwork::init(ela_z_dim(h, mode) + 1, rng);
  ParamMap params;
  ela.collect("ela", params);
  net.collect("q", params);
  load_checkpoint(path, params, h);
  return {std::move(ela), std::move(net)};
}

inline void write_train_result(const TrainResult& res, const RunConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  std::vector<std::vector<std::string>> rows;
  for (const EpisodeMetric& m : res.metrics)
    rows.push_back({std::to_string(m.round), m.env, std::to_string(m.episode),
                    fmt_num(m.reward_per_true_eval), fmt_num(m.final_hv),
                    fmt_num(m.epsilon)});
  write_csv(cfg.out_dir + "/train_metrics.csv", "metasaea.train_metrics.v1",
            {"round", "env", "episode", "mean_reward_per_true_eval", "final_hv", "epsilon"},
            rows);

  rows.clear();
  for (const CurvePoint& c : res.curve)
    rows.push_back({std::to_string(c.round), c.env, fmt_num(c.reward_per_true_eval),
                    fmt_num(c.ma5)});
  write_csv(cfg.out_dir + "/reward_curve.csv", "metasaea.reward_curve.v1",
            {"round", "env", "reward_per_true_eval", "ma5"}, rows);

  nlohmann::json manifest;
  manifest["tasks"] = res.task_ids;
  manifest["rounds"] = cfg.rounds;
  manifest["episodes_per_env"] = cfg.episodes_per_env;
  manifest["seed"] = cfg.seed;
  std::ofstream mf(cfg.out_dir + "/train_manifest.json");
  if (!mf) throw ContractError("cannot write train manifest");
  mf << manifest.dump(2) << "\n";

  save_agent_checkpoint(cfg.out_dir + "/checkpoint.json", *res.trainer, cfg);
}

// ---------------------------------------------------------------------------
// evaluation

struct EvalEpisode {
  int repeat = 0;
  std::uint64_t env_seed = 0;
  double final_hv = 0.0;
  double total_reward = 0.0;
  int true_evals = 0;
  int steps = 0;
};

struct EvalStep {
  int repeat = 0;
  int step = 0;
  int action = 0;
  double reward = 0.0;
  double rho = 0.0;
};

struct EvalResult {
  std::vector<EvalEpisode> episodes;
  std::vector<EvalStep> log;
  std::vector<EvalEpisode> baseline_episodes;
  std::vector<double> log2_ratio;  // per repeat, vs the named baseline
  double mean_hv = 0.0;
  double baseline_mean_hv = 0.0;
};

namespace detail {

inline EvalEpisode eval_one(const RunConfig& cfg, const ElaParams& ela, const QNetwork& net,
                            ControlMode mode, CriterionId fixed, int repeat,
                            std::vector<EvalStep>* log) {
  const std::uint64_t es = seed_eval(cfg.seed, repeat);
  Environment env(cfg.tasks[0], cfg.env, cfg.agent, ela, cfg.ela_mode, es);
  Rng prng(seed_policy(es));
  const double eps = mode == ControlMode::RANDOM ? 1.0 : 0.0;
  EpisodeResult res = run_episode(env, net, eps, prng, control_mask(mode, fixed));
  if (log)
    for (std::size_t i = 0; i < res.transitions.size(); ++i)
      log->push_back({repeat, static_cast<int>(i), res.transitions[i].action,
                      res.transitions[i].r, res.transitions[i].rho});
  return {repeat, es, res.final_hv, res.total_reward, res.true_evals, res.steps};
}

}  // namespace detail

/// Greedy rollouts of a trained policy on one held-out task, optionally
/// paired with same-seed baseline rollouts and per-repeat log2 HV ratios
/// (both sides floored at 1e-12).
inline EvalResult evaluate(const RunConfig& cfg, const ElaParams& ela, const QNetwork& net) {
  if (cfg.tasks.size() != 1) throw ConfigError("eval expects exactly one task");
  EvalResult out;
  double hv_sum = 0.0, base_sum = 0.0;
  for (int r = 0; r < cfg.eval_episodes; ++r) {
    out.episodes.push_back(detail::eval_one(cfg, ela, net, cfg.control,
                                            cfg.fixed_criterion, r, &out.log));
    hv_sum += out.episodes.back().final_hv;
    if (cfg.baseline == "random") {
      out.baseline_episodes.push_back(
          detail::eval_one(cfg, ela, net, ControlMode::RANDOM, cfg.fixed_criterion, r,
                           nullptr));
      base_sum += out.baseline_episodes.back().final_hv;
      const double a = std::max(out.episodes.back().final_hv, 1e-12);
      const double b = std::max(out.baseline_episodes.back().final_hv, 1e-12);
      out.log2_ratio.push_back(std::log2(a / b));
    }
  }
  out.mean_hv = hv_sum / static_cast<double>(cfg.eval_episodes);
  if (!out.baseline_episodes.empty())
    out.baseline_mean_hv = base_sum / static_cast<double>(cfg.eval_episodes);
  return out;
}

inline EvalResult eval_from_checkpoint(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("eval requires a checkpoint path");
  auto [ela, net] = load_agent_checkpoint(cfg.checkpoint, cfg.h, cfg.ela_mode);
  return evaluate(cfg, ela, net);
}

inline void write_eval_result(const EvalResult& res, const RunConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < res.episodes.size(); ++i) {
    const EvalEpisode& e = res.episodes[i];
    std::vector<std::string> row = {std::to_string(e.repeat), std::to_string(e.env_seed),
                                    fmt_num(e.final_hv), fmt_num(e.total_reward),
                                    std::to_string(e.true_evals), std::to_string(e.steps)};
    row.push_back(res.baseline_episodes.empty()
                      ? ""
                      : fmt_num(res.baseline_episodes[i].final_hv));
    row.push_back(res.log2_ratio.empty() ? "" : fmt_num(res.log2_ratio[i]));
    rows.push_back(std::move(row));
  }
  write_csv(cfg.out_dir + "/eval_summary.csv", "metasaea.eval_summary.v1",
            {"repeat", "env_seed", "final_hv", "total_reward", "true_evals", "steps",
             "baseline_hv", "log2_hv_ratio"},
            rows);

  rows.clear();
  for (const EvalStep& s : res.log)
    rows.push_back({std::to_string(s.repeat), std::to_string(s.step),
                    to_string(action_from_index(s.action)), fmt_num(s.reward),
                    fmt_num(s.rho)});
  write_csv(cfg.out_dir + "/eval_log.csv", "metasaea.eval_log.v1",
            {"repeat", "step", "action", "reward", "rho"}, rows);
}

// ---------------------------------------------------------------------------
// leave-one-task-out cross-validation

struct FoldResult {
  int fold = 0;
  std::string test_task;
  std::vector<double> hv;  // one entry per repeat
  double mean_hv = 0.0;
  double std_hv = 0.0;
};

struct LotoResult {
  std::vector<FoldResult> folds;
  nlohmann::json manifest;
};

/// For each family: train on every other family crossed with the training
/// dims, then roll the greedy policy on the held-out family at test_dim.
inline LotoResult loto(const RunConfig& cfg) {
  if (cfg.families.size() < 2) throw ConfigError("loto requires >= 2 task families");
  LotoResult out;
  out.manifest["folds"] = nlohmann::json::array();
  for (std::size_t f = 0; f < cfg.families.size(); ++f) {
    RunConfig fold_cfg = cfg;
    fold_cfg.seed = seed_fold(cfg.seed, static_cast<int>(f));
    fold_cfg.tasks.clear();
    for (std::size_t g = 0; g < cfg.families.size(); ++g) {
      if (g == f) continue;
      const ProblemName fam = cfg.families[g];
      for (int d : cfg.train_dims)
        fold_cfg.tasks.push_back(ProblemSpec::make(fam, d, is_zdt(fam) ? 2 : 3));
    }
    TrainResult trained = train(fold_cfg);

    const ProblemName held = cfg.families[f];
    RunConfig eval_cfg = fold_cfg;
    eval_cfg.tasks = {ProblemSpec::make(held, cfg.test_dim, is_zdt(held) ? 2 : 3)};
    eval_cfg.eval_episodes = cfg.repeats;
    eval_cfg.baseline = "none";
    EvalResult ev = evaluate(eval_cfg, trained.trainer->ela(), trained.trainer->net());

    FoldResult fr;
    fr.fold = static_cast<int>(f);
    fr.test_task = eval_cfg.tasks[0].id();
    for (const EvalEpisode& e : ev.episodes) fr.hv.push_back(e.final_hv);
    fr.mean_hv = ev.mean_hv;
    double ss = 0.0;
    for (double v : fr.hv) ss += (v - fr.mean_hv) * (v - fr.mean_hv);
    fr.std_hv = fr.hv.size() > 1
                    ? std::sqrt(ss / static_cast<double>(fr.hv.size() - 1))
                    : 0.0;
    nlohmann::json fold_entry;
    fold_entry["fold"] = fr.fold;
    fold_entry["test_task"] = fr.test_task;
    fold_entry["train_tasks"] = nlohmann::json::array();
    for (const ProblemSpec& t : fold_cfg.tasks) fold_entry["train_tasks"].push_back(t.id());
    out.manifest["folds"].push_back(std::move(fold_entry));
    out.folds.push_back(std::move(fr));
  }
  return out;
}

inline void write_loto_result(const LotoResult& res, const RunConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  std::vector<std::vector<std::string>> rows;
  for (const FoldResult& f : res.folds)
    for (std::size_t r = 0; r < f.hv.size(); ++r)
      rows.push_back({std::to_string(f.fold), f.test_task, std::to_string(r),
                      fmt_num(f.hv[r])});
  write_csv(cfg.out_dir + "/loto_results.csv", "metasaea.loto_results.v1",
            {"fold", "test_task", "repeat", "final_hv"}, rows);

  rows.clear();
  for (const FoldResult& f : res.folds)
    rows.push_back({std::to_string(f.fold), f.test_task, fmt_num(f.mean_hv),
                    fmt_num(f.std_hv)});
  write_csv(cfg.out_dir + "/loto_summary.csv", "metasaea.loto_summary.v1",
            {"fold", "test_task", "mean_hv", "std_hv"}, rows);

  std::ofstream mf(cfg.out_dir + "/fold_manifest.json");
  if (!mf) throw ContractError("cannot write fold manifest");
  mf << res.manifest.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// surrogate bench

struct BenchRow {
  std::string task;
  std::string backend;
  int step = 0;
  Vec yhat, sigma, ytrue;  // per objective, for the picked candidate
  double yhat_mean = 0.0, sigma_mean = 0.0, ytrue_mean = 0.0;
};

struct BenchSummary {
  std::string task;
  std::string backend;
  double rmse = 0.0;
  double coverage2 = 0.0;  // fraction of |y - yhat| <= 2 sigma
};

struct BenchResult {
  std::vector<BenchRow> rows;
  std::vector<BenchSummary> summary;
};

/// Fixed-criterion run logging, at every true-evaluation step, what each
/// backend (fitted on the same archive) predicted for the point that was
/// then truly evaluated. The environment dynamics follow the configured
/// primary backend.
inline BenchResult surrogate_bench(const RunConfig& cfg) {
  if (cfg.tasks.empty()) throw ConfigError("surrogate-bench requires tasks");
  BenchResult out;
  const std::array<SurrogateBackend, 2> backends = {SurrogateBackend::ENSEMBLE,
                                                    SurrogateBackend::GP};
  const std::array<const char*, 2> names = {"ensemble", "gp"};
  for (std::size_t ti = 0; ti < cfg.tasks.size(); ++ti) {
    const ProblemSpec& spec = cfg.tasks[ti];
    const std::uint64_t root = derive_seed(cfg.seed, 0xbe9c + ti);

    TruePopulation archive;
    for (const Vec& x : lhs_init(spec, cfg.env.n_init, derive_seed(root, 0x1a5)))
      archive.append(x, evaluate(spec, x));

    std::array<SurrogateConfig, 2> scfg{cfg.env.surrogate, cfg.env.surrogate};
    for (std::size_t b = 0; b < 2; ++b) {
      scfg[b].backend = backends[b];
      scfg[b].seed = derive_seed(root, 0x5e1 + b);
    }
    const std::size_t primary =
        cfg.env.surrogate.backend == SurrogateBackend::GP ? 1u : 0u;

    EvolveConfig ecfg = cfg.env.evolve;
    ecfg.seed = derive_seed(root, 0xe7a);
    auto gen = make_generator(cfg.env.generator, ecfg, spec.d, spec.m, spec.lower,
                              spec.upper);
    std::array<SurrogateModel, 2> models;
    for (std::size_t b = 0; b < 2; ++b)
      models[b] = SurrogateModel::fit(archive.X, archive.Y, scfg[b]);
    gen->reset(archive, models[primary]);

    std::array<double, 2> se_sum{}, cover{};
    std::size_t n_terms = 0;
    const int steps = cfg.env.fe_max - cfg.env.n_init;
    for (int step = 0; step < steps; ++step) {
      auto picked = select_elite(cfg.bench_criterion, gen->population(), archive,
                                 gen->directions(), 1, cfg.env.infill);
      const Vec x = gen->population().X[picked[0]];
      const Vec y = evaluate(spec, x);
      for (std::size_t b = 0; b < 2; ++b) {
        auto pred = models[b].predict_batch({x});
        BenchRow row;
        row.task = spec.id();
        row.backend = names[b];
        row.step = step;
        row.yhat = pred.yhat[0];
        row.sigma = pred.sigma[0];
        row.ytrue = y;
        for (int j = 0; j < spec.m; ++j) {
          const auto ju = static_cast<std::size_t>(j);
          row.yhat_mean += row.yhat[ju];
          row.sigma_mean += row.sigma[ju];
          row.ytrue_mean += y[ju];
          se_sum[b] += (row.yhat[ju] - y[ju]) * (row.yhat[ju] - y[ju]);
          if (std::abs(y[ju] - row.yhat[ju]) <= 2.0 * row.sigma[ju]) cover[b] += 1.0;
        }
        row.yhat_mean /= spec.m;
        row.sigma_mean /= spec.m;
        row.ytrue_mean /= spec.m;
        out.rows.push_back(std::move(row));
      }
      n_terms += static_cast<std::size_t>(spec.m);
      archive.append(x, y);
      for (std::size_t b = 0; b < 2; ++b)
        models[b] = SurrogateModel::fit(archive.X, archive.Y, scfg[b]);
      gen->resample(archive, models[primary]);
    }
    for (std::size_t b = 0; b < 2; ++b)
      out.summary.push_back({spec.id(), names[b],
                             std::sqrt(se_sum[b] / static_cast<double>(n_terms)),
                             cover[b] / static_cast<double>(n_terms)});
  }
  return out;
}

inline void write_bench_result(const BenchResult& res, const RunConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  std::vector<std::vector<std::string>> rows;
  for (const BenchRow& r : res.rows)
    rows.push_back({r.task, r.backend, std::to_string(r.step), fmt_num(r.yhat_mean),
                    fmt_num(r.sigma_mean), fmt_num(r.ytrue_mean)});
  write_csv(cfg.out_dir + "/surrogate_bench.csv", "metasaea.surrogate_bench.v1",
            {"task", "backend", "step", "yhat_mean", "sigma_mean", "ytrue_mean"}, rows);

  rows.clear();
  for (const BenchSummary& s : res.summary)
    rows.push_back({s.task, s.backend, fmt_num(s.rmse), fmt_num(s.coverage2)});
  write_csv(cfg.out_dir + "/surrogate_rmse.csv", "metasaea.surrogate_rmse.v1",
            {"task", "backend", "rmse", "coverage_2sigma"}, rows);
}

// ---------------------------------------------------------------------------
// hv debug utility

/// Reads objective vectors from a CSV (skipping '#' and non-numeric header
/// rows) and computes the exact hypervolume against the reference point.
inline double hv_from_csv(const std::string& path, const Vec& ref) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot read points file: " + path);
  Mat points;
  std::string line;
  while (std::getline(in, line)) {
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    Vec row;
    std::istringstream ls(t);
    std::string cell;
    bool numeric = true;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(detail::trim(cell)));
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric || row.empty()) continue;  // header row
    if (row.size() != ref.size())
      throw DimensionError("points file row width " + std::to_string(row.size()) +
                           " does not match ref width " + std::to_string(ref.size()));
    points.push_back(std::move(row));
  }
  if (points.empty()) throw ContractError("points file has no numeric rows: " + path);
  return hypervolume(points, ref);
}

}  // namespace metasaea

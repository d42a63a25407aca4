#include "metasaea/runner.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <set>

using namespace metasaea;
namespace fs = std::filesystem;

namespace {

std::string smoke_config_text() {
  return R"(# two-environment smoke setup
tasks = zdt1:d=5, dtlz2:d=5
hidden_dim = 4
rounds = 5
n_init = 8
fe_max = 12
pop_size = 10
batch = 8
updates_per_round = 1
seed = 11
)";
}

RunConfig smoke_config(const std::string& out_dir) {
  Config cfg = Config::parse(smoke_config_text());
  cfg.set("out_dir", out_dir);
  return RunConfig::from_config(cfg);
}

std::string temp_dir(const std::string& leaf) {
  fs::path p = fs::path(testing::TempDir()) / leaf;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  EXPECT_TRUE(in.good()) << path;
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

TEST(Config, ParsesTrimsAndTypes) {
  Config cfg = Config::parse("# comment\n a = 1 \nb=2.5\nflag = yes\nname= zdt1 \n\nlist = x, y ,z\n");
  EXPECT_EQ(cfg.geti("a", 0), 1);
  EXPECT_DOUBLE_EQ(cfg.getd("b", 0.0), 2.5);
  EXPECT_TRUE(cfg.getb("flag", false));
  EXPECT_EQ(cfg.str("name", ""), "zdt1");
  EXPECT_EQ(cfg.list("list"), (std::vector<std::string>{"x", "y", "z"}));
  EXPECT_EQ(cfg.geti("absent", 7), 7);
  cfg.reject_unknown();
}

TEST(Config, RejectsMalformedInput) {
  EXPECT_THROW(Config::parse("just words\n"), ConfigError);
  EXPECT_THROW(Config::parse("a=1\na=2\n"), ConfigError);
  EXPECT_THROW(Config::parse("= 3\n"), ConfigError);
  Config cfg = Config::parse("n = notanumber\nb = maybe\n");
  EXPECT_THROW(cfg.geti("n", 0), ConfigError);
  EXPECT_THROW(cfg.getb("b", false), ConfigError);
  EXPECT_THROW(cfg.require("missing"), ConfigError);
}

TEST(Config, NamesUnknownKeys) {
  Config cfg = Config::parse("rounds = 3\nruonds = 4\n");
  cfg.geti("rounds", 0);
  try {
    cfg.reject_unknown();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("ruonds"), std::string::npos);
  }
}

TEST(Control, MasksMatchModes) {
  auto dual = control_mask(ControlMode::DUAL);
  for (bool b : dual) EXPECT_TRUE(b);
  auto infill = control_mask(ControlMode::INFILL_ONLY);
  EXPECT_FALSE(infill[0]);
  for (int i = 1; i < kActionCount; ++i) EXPECT_TRUE(infill[static_cast<std::size_t>(i)]);
  auto ea = control_mask(ControlMode::EA_ONLY);
  EXPECT_EQ(ea, (std::array<bool, 6>{true, true, false, false, false, false}));
  auto fixed = control_mask(ControlMode::FIXED, CriterionId::EPDI_EXPLOIT);
  EXPECT_EQ(fixed, (std::array<bool, 6>{false, false, false, false, false, true}));
}

TEST(Control, StringRoundTrip) {
  for (const std::string& s :
       {std::string("dual"), std::string("infill_only"), std::string("ea_only"),
        std::string("random"), std::string("fixed:nd_dpbi_div")}) {
    auto [mode, crit] = control_from_string(s);
    EXPECT_EQ(to_string(mode, crit), s);
  }
  EXPECT_THROW(control_from_string("hybrid"), ConfigError);
  EXPECT_THROW(control_from_string("fixed:eigrp"), ContractError);
}

TEST(RunConfig, DeskAndPaperScaleDefaults) {
  RunConfig desk = RunConfig::from_config(Config::parse("tasks = zdt1:d=8\n"));
  EXPECT_EQ(desk.rounds, 40);
  EXPECT_EQ(desk.env.n_init, 20);
  EXPECT_EQ(desk.env.fe_max, 40);
  EXPECT_EQ(desk.env.evolve.pop_size, 30);
  EXPECT_EQ(desk.train_dims, (std::vector<int>{8, 10}));

  RunConfig paper =
      RunConfig::from_config(Config::parse("tasks = zdt1:d=8\npaper_scale = true\n"));
  EXPECT_EQ(paper.rounds, 200);
  EXPECT_EQ(paper.env.n_init, 80);
  EXPECT_EQ(paper.env.fe_max, 120);
  EXPECT_EQ(paper.train_dims, (std::vector<int>{15, 20, 25}));

  // explicit keys win over the scale defaults
  RunConfig mixed = RunConfig::from_config(
      Config::parse("tasks = zdt1:d=8\npaper_scale = true\nrounds = 7\n"));
  EXPECT_EQ(mixed.rounds, 7);
}

TEST(RunConfig, NamesBadTaskToken) {
  try {
    RunConfig::from_config(Config::parse("tasks = zdt1:d=8, zdt1:q=3\n"));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("q=3"), std::string::npos);
  }
  EXPECT_THROW(RunConfig::from_config(Config::parse("surrogate_backend = tabular\n")),
               ConfigError);
  EXPECT_THROW(RunConfig::from_config(Config::parse("baseline = greedy\n")), ConfigError);
}

TEST(Seeds, SplitsAreDistinctAndStable) {
  std::set<std::uint64_t> seen;
  for (int task = 0; task < 3; ++task)
    for (int round = 0; round < 3; ++round)
      for (int ep = 0; ep < 2; ++ep)
        seen.insert(seed_episode(5, task, round, ep, 2));
  EXPECT_EQ(seen.size(), 18u);
  EXPECT_EQ(seed_episode(5, 1, 2, 0, 2), seed_episode(5, 1, 2, 0, 2));
  EXPECT_NE(seed_eval(5, 0), seed_eval(5, 1));
  EXPECT_NE(seed_fold(5, 0), seed_fold(5, 1));
}

TEST(Jobs, ParallelMatchesSerial) {
  std::vector<int> serial(64), parallel(64);
  run_jobs(64, 1, [&](int i) { serial[static_cast<std::size_t>(i)] = i * i; });
  run_jobs(64, 4, [&](int i) { parallel[static_cast<std::size_t>(i)] = i * i; });
  EXPECT_EQ(serial, parallel);
}

TEST(Train, SmokeRunWritesMetricsAndCheckpoint) {
  const std::string dir = temp_dir("train_smoke");
  RunConfig cfg = smoke_config(dir);
  TrainResult res = train(cfg);

  // 5 rounds x 2 envs x 1 episode
  ASSERT_EQ(res.metrics.size(), 10u);
  ASSERT_EQ(res.round_stats.size(), 5u);
  for (std::size_t n : res.buffer_at_round_start) EXPECT_EQ(n, 0u);
  for (const EpisodeMetric& m : res.metrics) {
    EXPECT_TRUE(std::isfinite(m.reward_per_true_eval));
    EXPECT_GE(m.final_hv, 0.0);
  }
  // the trailing window-5 average matches by hand at both ends
  ASSERT_EQ(res.curve.size(), 10u);
  EXPECT_DOUBLE_EQ(res.curve[0].ma5, res.curve[0].reward_per_true_eval);
  double sum = 0.0;
  for (int round = 0; round < 5; ++round) sum += res.curve[static_cast<std::size_t>(2 * round)].reward_per_true_eval;
  EXPECT_NEAR(res.curve[8].ma5, sum / 5.0, 1e-12);

  write_train_result(res, cfg);
  auto metrics = read_lines(dir + "/train_metrics.csv");
  ASSERT_GE(metrics.size(), 12u);  // schema + header + 10 rows
  EXPECT_EQ(metrics[0], "# metasaea.train_metrics.v1");
  EXPECT_EQ(metrics[1], "round,env,episode,mean_reward_per_true_eval,final_hv,epsilon");
  EXPECT_TRUE(fs::exists(dir + "/reward_curve.csv"));
  EXPECT_TRUE(fs::exists(dir + "/train_manifest.json"));
  EXPECT_TRUE(fs::exists(dir + "/checkpoint.json"));

  // the checkpoint restores the exact trained parameters; wrong h is an error
  auto [ela, net] = load_agent_checkpoint(dir + "/checkpoint.json", cfg.h, cfg.ela_mode);
  EXPECT_EQ(ela.emb_true.value(), res.trainer->ela().emb_true.value());
  EXPECT_EQ(net.wa.value(), res.trainer->net().wa.value());
  EXPECT_THROW(load_agent_checkpoint(dir + "/checkpoint.json", cfg.h + 1, cfg.ela_mode),
               ContractError);
}

TEST(Train, DeterministicUnderSeed) {
  RunConfig cfg = smoke_config(temp_dir("train_det"));
  cfg.rounds = 3;
  TrainResult a = train(cfg);
  TrainResult b = train(cfg);
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    EXPECT_DOUBLE_EQ(a.metrics[i].reward_per_true_eval, b.metrics[i].reward_per_true_eval);
    EXPECT_DOUBLE_EQ(a.metrics[i].final_hv, b.metrics[i].final_hv);
  }
  EXPECT_EQ(a.trainer->net().wa.value(), b.trainer->net().wa.value());
}

TEST(Train, RequiresTasks) {
  RunConfig cfg = RunConfig::from_config(Config::parse("rounds = 1\n"));
  EXPECT_THROW(train(cfg), ConfigError);
}

TEST(Eval, GreedyRolloutsWithRandomBaseline) {
  RunConfig cfg = smoke_config(temp_dir("eval_out"));
  cfg.rounds = 2;
  TrainResult trained = train(cfg);

  RunConfig eval_cfg = cfg;
  eval_cfg.tasks = {parse_task("zdt2:d=6")};
  eval_cfg.eval_episodes = 3;
  EvalResult ev = evaluate(eval_cfg, trained.trainer->ela(), trained.trainer->net());
  ASSERT_EQ(ev.episodes.size(), 3u);
  ASSERT_EQ(ev.baseline_episodes.size(), 3u);
  ASSERT_EQ(ev.log2_ratio.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    // baseline rollouts are paired on the same environment seed
    EXPECT_EQ(ev.episodes[i].env_seed, ev.baseline_episodes[i].env_seed);
    EXPECT_EQ(ev.episodes[i].true_evals, eval_cfg.env.fe_max - eval_cfg.env.n_init);
    EXPECT_TRUE(std::isfinite(ev.log2_ratio[i]));
  }
  EXPECT_FALSE(ev.log.empty());
  for (const EvalStep& s : ev.log) EXPECT_NO_THROW(action_from_index(s.action));

  // determinism: same checkpoint + seed -> same HV
  EvalResult ev2 = evaluate(eval_cfg, trained.trainer->ela(), trained.trainer->net());
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_DOUBLE_EQ(ev.episodes[i].final_hv, ev2.episodes[i].final_hv);

  eval_cfg.baseline = "none";
  EvalResult bare = evaluate(eval_cfg, trained.trainer->ela(), trained.trainer->net());
  EXPECT_TRUE(bare.baseline_episodes.empty());
  EXPECT_TRUE(bare.log2_ratio.empty());

  write_eval_result(ev, eval_cfg);
  auto lines = read_lines(eval_cfg.out_dir + "/eval_summary.csv");
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[0], "# metasaea.eval_summary.v1");
  EXPECT_TRUE(fs::exists(eval_cfg.out_dir + "/eval_log.csv"));
}

TEST(Eval, ChecksTaskCountAndCheckpointPath) {
  RunConfig cfg = smoke_config(temp_dir("eval_err"));
  Rng rng(1);
  auto ela = ElaParams::init(cfg.h, rng);
  auto net = QNetwork::init(ela_z_dim(cfg.h, cfg.ela_mode) + 1, rng);
  EXPECT_THROW(evaluate(cfg, ela, net), ConfigError);  // two tasks configured
  cfg.checkpoint = "";
  EXPECT_THROW(eval_from_checkpoint(cfg), ConfigError);
}

TEST(Loto, FoldsAreDisjointAndComplete) {
  RunConfig cfg = smoke_config(temp_dir("loto_out"));
  cfg.rounds = 2;
  cfg.families = {ProblemName::ZDT1, ProblemName::ZDT2};
  cfg.train_dims = {5};
  cfg.test_dim = 6;
  cfg.repeats = 2;
  LotoResult res = loto(cfg);
  ASSERT_EQ(res.folds.size(), 2u);
  for (const FoldResult& f : res.folds) {
    EXPECT_EQ(f.hv.size(), 2u);
    EXPECT_TRUE(std::isfinite(f.mean_hv));
    EXPECT_GE(f.std_hv, 0.0);
  }
  EXPECT_EQ(res.folds[0].test_task, "zdt1:d=6:m=2");
  EXPECT_EQ(res.folds[1].test_task, "zdt2:d=6:m=2");
  for (const auto& fold : res.manifest["folds"]) {
    const std::string held = fold["test_task"].get<std::string>();
    const std::string family = held.substr(0, held.find(':'));
    for (const auto& t : fold["train_tasks"])
      EXPECT_EQ(t.get<std::string>().rfind(family, 0), std::string::npos)
          << "held-out family leaked into fold training set";
  }

  write_loto_result(res, cfg);
  auto lines = read_lines(cfg.out_dir + "/loto_results.csv");
  ASSERT_EQ(lines.size(), 6u);  // schema + header + 2 folds x 2 repeats
  EXPECT_TRUE(fs::exists(cfg.out_dir + "/loto_summary.csv"));
  EXPECT_TRUE(fs::exists(cfg.out_dir + "/fold_manifest.json"));
}

TEST(Bench, LogsBothBackendsEveryStep) {
  RunConfig cfg = smoke_config(temp_dir("bench_out"));
  cfg.tasks = {parse_task("zdt1:d=5")};
  BenchResult res = surrogate_bench(cfg);
  const int steps = cfg.env.fe_max - cfg.env.n_init;
  ASSERT_EQ(res.rows.size(), static_cast<std::size_t>(2 * steps));
  for (const BenchRow& r : res.rows) {
    EXPECT_TRUE(std::isfinite(r.yhat_mean));
    EXPECT_TRUE(std::isfinite(r.ytrue_mean));
    EXPECT_GE(r.sigma_mean, 0.0);
    ASSERT_EQ(r.yhat.size(), 2u);
  }
  // at each step, both backends predict the same truly evaluated point
  for (int s = 0; s < steps; ++s)
    EXPECT_EQ(res.rows[static_cast<std::size_t>(2 * s)].ytrue,
              res.rows[static_cast<std::size_t>(2 * s + 1)].ytrue);
  ASSERT_EQ(res.summary.size(), 2u);
  for (const BenchSummary& s : res.summary) {
    EXPECT_GE(s.rmse, 0.0);
    EXPECT_GE(s.coverage2, 0.0);
    EXPECT_LE(s.coverage2, 1.0);
  }

  write_bench_result(res, cfg);
  EXPECT_TRUE(fs::exists(cfg.out_dir + "/surrogate_bench.csv"));
  EXPECT_TRUE(fs::exists(cfg.out_dir + "/surrogate_rmse.csv"));
}

TEST(Hv, ComputesFromCsvPointFile) {
  const std::string dir = temp_dir("hv_in");
  const std::string path = dir + "/points.csv";
  {
    std::ofstream out(path);
    out << "# metasaea.points.v1\nf1,f2\n0.25,0.75\n0.75,0.25\n";
  }
  // two squares of area 0.1875 overlapping in a 0.0625 square
  EXPECT_NEAR(hv_from_csv(path, {1.0, 1.0}), 0.3125, 1e-12);
  EXPECT_THROW(hv_from_csv(path, {1.0, 1.0, 1.0}), DimensionError);
  EXPECT_THROW(hv_from_csv(dir + "/missing.csv", {1.0, 1.0}), ContractError);
  const std::string empty = dir + "/empty.csv";
  {
    std::ofstream out(empty);
    out << "# schema only\nf1,f2\n";
  }
  EXPECT_THROW(hv_from_csv(empty, {1.0, 1.0}), ContractError);
}

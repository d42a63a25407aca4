// Command-line entry point. All logic lives in the headers; this shell parses
// arguments, loads the flat key-value config, applies the CLI overrides, and
// prints a short human summary while the CSV/JSON artifacts land in out_dir.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "metasaea/runner.hpp"

namespace {

int usage(std::FILE* to) {
  std::fprintf(to,
               "usage: metasaea <train|loto|eval|surrogate-bench|hv> --config <file>\n"
               "                [--workers N] [--paper-scale] [--seed S]\n"
               "\n"
               "  train            sampling/training rounds; writes metrics, reward\n"
               "                   curve, manifest, and checkpoint under out_dir\n"
               "  loto             leave-one-task-out cross-validation over families\n"
               "  eval             greedy rollouts of a checkpoint on one task, with\n"
               "                   an optional same-seed random baseline\n"
               "  surrogate-bench  per-step predictions of both surrogate backends\n"
               "                   along a fixed-criterion run\n"
               "  hv               hypervolume of a CSV point file vs a ref point\n"
               "                   (config keys: points, ref)\n");
  return to == stderr ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace metasaea;
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty() || args[0] == "-h" || args[0] == "--help") return usage(args.empty() ? stderr : stdout);

  const std::string command = args[0];
  std::string config_path;
  std::string workers, seed;
  bool paper_scale = false;
  for (std::size_t i = 1; i < args.size(); ++i) {
    auto value = [&](const char* flag) {
      if (i + 1 >= args.size()) {
        std::fprintf(stderr, "metasaea: %s needs a value\n", flag);
        std::exit(2);
      }
      return args[++i];
    };
    if (args[i] == "--config")
      config_path = value("--config");
    else if (args[i] == "--workers")
      workers = value("--workers");
    else if (args[i] == "--seed")
      seed = value("--seed");
    else if (args[i] == "--paper-scale")
      paper_scale = true;
    else {
      std::fprintf(stderr, "metasaea: unknown argument '%s'\n", args[i].c_str());
      return usage(stderr);
    }
  }
  if (config_path.empty()) {
    std::fprintf(stderr, "metasaea: --config is required\n");
    return usage(stderr);
  }

  try {
    Config cfg = Config::load(config_path);
    if (!workers.empty()) cfg.set("workers", workers);
    if (!seed.empty()) cfg.set("seed", seed);
    if (paper_scale) cfg.set("paper_scale", "true");

    if (command == "hv") {
      const std::string points = cfg.require("points");
      Vec ref;
      for (const std::string& r : cfg.list("ref")) ref.push_back(std::stod(r));
      if (ref.empty()) throw ConfigError("hv requires a 'ref' point");
      cfg.reject_unknown();
      std::printf("%.10g\n", hv_from_csv(points, ref));
      return 0;
    }

    RunConfig rc = RunConfig::from_config(cfg);
    cfg.reject_unknown();

    if (command == "train") {
      TrainResult res = train(rc);
      write_train_result(res, rc);
      double last = 0.0;
      int n = 0;
      for (const EpisodeMetric& m : res.metrics)
        if (m.round == rc.rounds - 1) last += m.reward_per_true_eval, ++n;
      std::printf("train: %d rounds x %zu tasks, final-round reward/true-eval %.4f\n",
                  rc.rounds, rc.tasks.size(), n ? last / n : 0.0);
      std::printf("train: artifacts in %s\n", rc.out_dir.c_str());
    } else if (command == "loto") {
      LotoResult res = loto(rc);
      write_loto_result(res, rc);
      for (const FoldResult& f : res.folds)
        std::printf("fold %d (%s): hv %.4f +/- %.4f over %zu repeats\n", f.fold,
                    f.test_task.c_str(), f.mean_hv, f.std_hv, f.hv.size());
    } else if (command == "eval") {
      EvalResult res = eval_from_checkpoint(rc);
      write_eval_result(res, rc);
      std::printf("eval %s: mean hv %.4f over %d repeats\n", rc.tasks[0].id().c_str(),
                  res.mean_hv, rc.eval_episodes);
      if (!res.baseline_episodes.empty()) {
        double ratio = 0.0;
        for (double r : res.log2_ratio) ratio += r;
        std::printf("eval baseline(random): mean hv %.4f, mean log2 ratio %.4f\n",
                    res.baseline_mean_hv,
                    ratio / static_cast<double>(res.log2_ratio.size()));
      }
    } else if (command == "surrogate-bench") {
      BenchResult res = surrogate_bench(rc);
      write_bench_result(res, rc);
      for (const BenchSummary& s : res.summary)
        std::printf("bench %s %s: rmse %.4f, 2-sigma coverage %.2f\n", s.task.c_str(),
                    s.backend.c_str(), s.rmse, s.coverage2);
    } else {
      std::fprintf(stderr, "metasaea: unknown command '%s'\n", command.c_str());
      return usage(stderr);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "metasaea: %s\n", e.what());
    return 1;
  }
  return 0;
}

// SPDX-License-Identifier: Apache-2.0
//
// diif: dataset generation, training, evaluation, ablation grids and
// report regeneration for the decoupled-interaction manipulation stack.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "diif/harness/ablate.hpp"
#include "diif/harness/checkpoint.hpp"
#include "diif/harness/dataset.hpp"
#include "diif/harness/evaluate.hpp"
#include "diif/harness/report.hpp"
#include "diif/harness/train.hpp"

namespace {

using namespace diif;

struct GlobalOpts {
  std::string config;
  std::string out = ".";
  long long seed = -1;
};

TrainConfig load_train_config(const GlobalOpts& g) {
  TrainConfig cfg;
  if (!g.config.empty()) cfg = train_config_from_kv(load_kv_file(g.config));
  if (g.seed >= 0) cfg.seed = static_cast<uint64_t>(g.seed);
  return cfg;
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

int run_gen_demos(const GlobalOpts& g, const std::string& task_arg,
                  int count) {
  TrainConfig cfg = load_train_config(g);
  if (!task_arg.empty()) cfg.task = task_from_name(task_arg);
  if (count > 0) cfg.demos = count;
  const TaskSpec spec = make_task(cfg.task);
  const std::string dir = resolve_out_dir(g.out);
  ensure_dir(dir);

  DemoSet ds = generate_demos(spec, cfg.demos, cfg.seed, cfg.n_points);
  const std::string path =
      join_path(dir, std::string(task_name(spec.name)) + "-" +
                         std::to_string(cfg.demos) + ".diif");
  save_dataset(path, ds);
  std::cout << "wrote " << path << " (" << ds.demos.size() << " demos, "
            << ds.total_steps() << " steps)\n";
  return 0;
}

int run_train(const GlobalOpts& g, const std::string& dataset_path,
              const std::string& name) {
  TrainConfig cfg = load_train_config(g);
  DemoSet ds = load_dataset(dataset_path);
  cfg.task = ds.task;
  const std::string dir = resolve_out_dir(g.out);
  ensure_dir(dir);

  TrainResult res = train_policy(cfg, ds);

  const std::string stem =
      name.empty() ? std::string("policy-") + task_name(ds.task) + "-" +
                         policy_tag_name(cfg.arch) + "-" +
                         gen_kind_name(cfg.gen) + "-seed" +
                         std::to_string(cfg.seed)
                   : name;
  const std::string ckpt_path = join_path(dir, stem + ".diif");
  save_checkpoint(ckpt_path, res.ckpt);

  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : res.log)
    log.push_back({{"step", e.step},
                   {"loss", e.loss},
                   {"smooth", e.smooth},
                   {"lr", e.lr}});
  write_text_file(join_path(dir, stem + ".train.json"),
                  nlohmann::json{{"config", canonical_config_text(cfg)},
                                 {"steps", res.steps},
                                 {"diverged", res.diverged},
                                 {"log", log}}
                      .dump(2) +
                      "\n");

  std::cout << "wrote " << ckpt_path << " (" << res.steps << " steps, final "
            << (res.log.empty() ? 0.0 : res.log.back().smooth) << ")\n";
  if (res.diverged) {
    std::cerr << "training diverged; partial checkpoint preserved\n";
    return 1;
  }
  return 0;
}

int run_eval(const GlobalOpts& g, const std::string& ckpt_path,
             const std::string& task_arg, int episodes, bool expert,
             bool raw, int svg_count) {
  const std::string dir = resolve_out_dir(g.out);
  ensure_dir(dir);
  const uint64_t seed = g.seed >= 0 ? static_cast<uint64_t>(g.seed) : 0;

  EvalSummary sum;
  std::vector<EpisodeTrace> traces;
  std::string stem;
  if (expert) {
    require(!task_arg.empty(), "eval: --expert needs --task");
    const TaskSpec spec = make_task(task_from_name(task_arg));
    sum = evaluate_expert(spec, episodes, seed,
                          svg_count > 0 ? &traces : nullptr);
    stem = std::string("eval-expert-") + task_arg;
  } else {
    require(!ckpt_path.empty(), "eval: need --checkpoint or --expert");
    PolicyCheckpoint ckpt = load_checkpoint(ckpt_path);
    const TaskSpec spec = make_task(ckpt.cfg.task);
    const Policy<float>& p = raw ? ckpt.raw : ckpt.ema;
    sum = evaluate_policy(p, spec, episodes, seed,
                          svg_count > 0 ? &traces : nullptr);
    stem = "eval-" + std::filesystem::path(ckpt_path).stem().string();
  }

  const TaskSpec spec = make_task(sum.task);
  write_text_file(join_path(dir, stem + ".json"), to_json(sum).dump(2) + "\n");
  write_text_file(join_path(dir, stem + ".csv"), eval_csv(sum));
  for (int i = 0; i < svg_count && i < static_cast<int>(traces.size()); ++i)
    write_text_file(join_path(dir, stem + "-ep" + std::to_string(i) + ".svg"),
                    episode_svg(spec, traces[static_cast<size_t>(i)]));

  std::cout << stem << ": success " << sum.success_rate << " collision "
            << sum.collision_rate << " over " << sum.episodes << " episodes\n";
  return 0;
}

int run_ablate_cmd(const GlobalOpts& g, const std::string& grid,
                   const std::string& tasks_csv, int seeds, int episodes) {
  AblationGridConfig gc;
  gc.grid = grid;
  gc.base = load_train_config(g);
  if (seeds > 0) gc.seeds = seeds;
  if (episodes > 0) gc.base.eval_episodes = episodes;
  if (!tasks_csv.empty()) {
    gc.tasks.clear();
    std::stringstream ss(tasks_csv);
    std::string item;
    while (std::getline(ss, item, ','))
      gc.tasks.push_back(task_from_name(detail::trim(item)));
  }
  gc.log = &std::cout;

  const std::string dir = resolve_out_dir(g.out);
  ensure_dir(dir);
  AblationReport rep = run_ablation(gc);
  write_ablation_reports(dir, "ablation-" + grid, rep);
  std::cout << "wrote " << join_path(dir, "ablation-" + grid + ".{json,csv,md}")
            << "\n";
  for (const auto& c : rep.cells)
    if (c.failed) {
      std::cerr << "cell " << c.row << "/" << c.task
                << " failed: " << c.error << "\n";
      return 1;
    }
  return 0;
}

int run_report(const GlobalOpts& g, const std::string& input) {
  std::ifstream f(input);
  require(f.good(), "report: cannot open ", input);
  nlohmann::json j = nlohmann::json::parse(f);
  const std::string dir = resolve_out_dir(g.out);
  ensure_dir(dir);
  const std::string stem = std::filesystem::path(input).stem().string();
  if (j.contains("cells")) {
    AblationReport rep = ablation_from_json(j);
    write_ablation_reports(dir, stem, rep);
    std::cout << "wrote " << join_path(dir, stem + ".{json,csv,md}") << "\n";
    return 0;
  }
  require(j.contains("records"), "report: ", input,
          " is neither an ablation nor an evaluation report");
  EvalSummary sum;
  sum.task = task_from_name(j.at("task").get<std::string>());
  sum.episodes = j.at("episodes").get<int>();
  sum.success_rate = j.at("success_rate").get<double>();
  sum.collision_rate = j.at("collision_rate").get<double>();
  sum.correct_arm_rate = j.at("correct_arm_rate").get<double>();
  sum.mean_steps = j.at("mean_steps").get<double>();
  for (const auto& r : j.at("records")) {
    EpisodeResult e;
    e.task = sum.task;
    e.seed = r.at("seed").get<uint64_t>();
    e.success = r.at("success").get<bool>();
    e.collision = r.at("collision").get<bool>();
    e.correct_arm = r.at("correct_arm").get<bool>();
    e.steps = r.at("steps").get<int>();
    e.wall_ms = r.at("wall_ms").get<double>();
    sum.records.push_back(e);
  }
  write_text_file(join_path(dir, stem + ".csv"), eval_csv(sum));
  std::cout << "wrote " << join_path(dir, stem + ".csv") << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"decoupled-interaction manipulation toolkit"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--config", g.config, "key=value config file")
      ->envname("DIIF_CONFIG");
  app.add_option("--out", g.out, "output directory (default .)");
  app.add_option("--seed", g.seed, "seed override");

  std::string task_name, dataset_path, ckpt_path, name, grid = "table2";
  std::string tasks_csv, report_input;
  int count = 0, episodes = 100, seeds = 0, svg_count = 0, cell_episodes = 0;
  bool expert = false, raw = false;

  auto* gen = app.add_subcommand("gen-demos", "record expert demonstrations");
  gen->add_option("--task", task_name, "task name");
  gen->add_option("--count", count, "number of demos");

  auto* train = app.add_subcommand("train", "train a policy on a dataset");
  train->add_option("--dataset", dataset_path, "dataset container path")
      ->required();
  train->add_option("--name", name, "checkpoint file stem");

  auto* ev = app.add_subcommand("eval", "roll out a checkpoint or the expert");
  ev->add_option("--checkpoint", ckpt_path, "policy checkpoint path");
  ev->add_option("--task", task_name, "task name (for --expert)");
  ev->add_option("--episodes", episodes, "episode count");
  ev->add_flag("--expert", expert, "evaluate the scripted expert");
  ev->add_flag("--raw", raw, "use raw weights instead of EMA");
  ev->add_option("--svg", svg_count, "dump the first N episodes as SVG");

  auto* ab = app.add_subcommand("ablate", "run an ablation grid");
  ab->add_option("--grid", grid, "arch | table2 | variants | demos | widths");
  ab->add_option("--tasks", tasks_csv, "comma-separated task list");
  ab->add_option("--seeds", seeds, "seeds per cell");
  ab->add_option("--episodes", cell_episodes, "eval episodes per cell");

  auto* rep = app.add_subcommand("report", "regenerate CSV/Markdown from JSON");
  rep->add_option("--input", report_input, "report JSON path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_gen_demos(g, task_name, count);
    if (train->parsed()) return run_train(g, dataset_path, name);
    if (ev->parsed())
      return run_eval(g, ckpt_path, task_name, episodes, expert, raw,
                      svg_count);
    if (ab->parsed())
      return run_ablate_cmd(g, grid, tasks_csv, seeds, cell_episodes);
    if (rep->parsed()) return run_report(g, report_input);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

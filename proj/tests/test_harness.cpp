// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "diif/harness/ablate.hpp"
#include "diif/harness/checkpoint.hpp"
#include "diif/harness/config.hpp"
#include "diif/harness/container.hpp"
#include "diif/harness/dataset.hpp"
#include "diif/harness/evaluate.hpp"
#include "diif/harness/report.hpp"
#include "diif/harness/train.hpp"

using namespace diif;

namespace {

std::string scratch_dir() {
  static const std::string dir = [] {
    std::string d = "harness-scratch";
    ensure_dir(d);
    return d;
  }();
  return dir;
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

Container sample_container() {
  Container c;
  c.meta = {{"kind", "probe"}, {"note", "roundtrip"}, {"nested", {{"a", 1}}}};
  Mat<float> a(2, 3);
  for (int i = 0; i < 6; ++i) a.data[static_cast<size_t>(i)] = 0.5f * i - 1.0f;
  Mat<float> b(1, 4);
  for (int i = 0; i < 4; ++i) b.data[static_cast<size_t>(i)] = -2.25f * i;
  c.arrays.push_back({"alpha", a});
  c.arrays.push_back({"beta", b});
  return c;
}

TrainConfig toy_config(TaskName task, GenKind gen) {
  TrainConfig c;
  c.task = task;
  c.gen = gen;
  c.d_vis = 16;
  c.d_state = 8;
  c.enc_width = 16;
  c.sel_width = 16;
  c.gen_width = 32;
  c.gen_layers = 2;
  c.diffusion_T = 20;
  c.num_inference_steps = 5;
  c.n_points = 16;
  c.batch = 16;
  c.epochs = 2;
  c.lr = 1e-3;
  c.warmup = 5;
  c.demos = 4;
  c.eval_episodes = 4;
  c.seed = 7;
  return c;
}

}  // namespace

TEST_CASE("container: save, load, save again is byte identical") {
  const Container c = sample_container();
  const std::string p1 = scratch_dir() + "/round1.diif";
  const std::string p2 = scratch_dir() + "/round2.diif";
  save_container(p1, c);
  Container loaded = load_container(p1);
  REQUIRE(loaded.arrays.size() == 2);
  CHECK(loaded.meta.at("kind") == "probe");
  CHECK(loaded.meta.at("nested").at("a") == 1);
  CHECK(loaded.get("alpha").rows == 2);
  CHECK(loaded.get("alpha").cols == 3);
  for (int i = 0; i < 6; ++i)
    CHECK(loaded.get("alpha").data[static_cast<size_t>(i)] ==
          c.arrays[0].data.data[static_cast<size_t>(i)]);
  save_container(p2, loaded);
  CHECK(read_bytes(p1) == read_bytes(p2));
}

TEST_CASE("container: header starts with magic, version, json length") {
  const std::string bytes = container_bytes(sample_container());
  REQUIRE(bytes.size() > 16);
  CHECK(bytes.substr(0, 4) == "DIIF");
  uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  CHECK(version == kContainerVersion);
  uint64_t meta_len = 0;
  std::memcpy(&meta_len, bytes.data() + 8, 8);
  REQUIRE(16 + meta_len < bytes.size());
  const auto doc = nlohmann::json::parse(bytes.substr(16, meta_len));
  CHECK(doc.at("arrays").size() == 2);
  CHECK(doc.at("arrays")[0].at("name") == "alpha");
  CHECK(doc.at("arrays")[0].at("dtype") == "f32");
  const size_t payload = 6 * 4 + 4 * 4;
  CHECK(bytes.size() == 16 + meta_len + payload);
}

TEST_CASE("container: corruption is refused with a reason") {
  const std::string good = container_bytes(sample_container());

  SECTION("bad magic") {
    std::string b = good;
    b[0] = 'X';
    REQUIRE_THROWS_AS(container_from_bytes(b), Error);
  }
  SECTION("unsupported version") {
    std::string b = good;
    b[4] = static_cast<char>(b[4] + 1);
    REQUIRE_THROWS_AS(container_from_bytes(b), Error);
  }
  SECTION("truncated header") {
    REQUIRE_THROWS_AS(container_from_bytes(good.substr(0, 10)), Error);
  }
  SECTION("truncated payload") {
    REQUIRE_THROWS_AS(container_from_bytes(good.substr(0, good.size() - 5)),
                      Error);
  }
  SECTION("metadata length past end of file") {
    std::string b = good;
    uint64_t huge = b.size();
    std::memcpy(&b[8], &huge, 8);
    REQUIRE_THROWS_AS(container_from_bytes(b), Error);
  }
  SECTION("flipped payload byte fails the hash") {
    std::string b = good;
    b[b.size() - 3] = static_cast<char>(b[b.size() - 3] ^ 0x40);
    REQUIRE_THROWS_AS(container_from_bytes(b), Error);
  }
  SECTION("trailing garbage") {
    REQUIRE_THROWS_AS(container_from_bytes(good + "zz"), Error);
  }
  SECTION("metadata that is not json") {
    std::string b = good;
    b[16] = '?';
    REQUIRE_THROWS_AS(container_from_bytes(b), Error);
  }
}

TEST_CASE("config: kv parsing, defaults, and rejection") {
  const auto kv = parse_kv_text(
      "# comment line\n"
      "arch = integrated\n"
      "generator=ddim\n"
      "epochs = 42   # trailing comment\n"
      "\n"
      "lr=0.003\n"
      "use_beta = false\n"
      "task=handover\n");
  TrainConfig c = train_config_from_kv(kv);
  CHECK(c.arch == PolicyTag::integrated);
  CHECK(c.gen == GenKind::ddim);
  CHECK(c.epochs == 42);
  CHECK(c.lr == 0.003);
  CHECK(c.interaction.use_beta == false);
  CHECK(c.task == TaskName::handover);
  CHECK(c.horizon == 8);
  CHECK(c.n_obs_steps == 3);
  CHECK(c.n_action_steps == 6);
  CHECK(c.num_inference_steps == 10);
  CHECK(c.batch == 120);
  CHECK(c.weight_decay == 1e-6);
  CHECK(c.ema_decay == 0.9999);
  CHECK(c.K() == 2);

  CHECK_THROWS_AS(train_config_from_kv(parse_kv_text("nosuchkey=1\n")), Error);
  CHECK_THROWS_AS(parse_kv_text("epochs\n"), Error);
  CHECK_THROWS_AS(parse_kv_text("epochs=1\nepochs=2\n"), Error);
  CHECK_THROWS_AS(train_config_from_kv(parse_kv_text("epochs=abc\n")), Error);
  CHECK_THROWS_AS(train_config_from_kv(parse_kv_text("use_alpha=maybe\n")),
                  Error);
  CHECK_THROWS_AS(train_config_from_kv(parse_kv_text("arch=unknown\n")), Error);
}

TEST_CASE("config: generator defaults for lr and warmup") {
  TrainConfig c;
  c.gen = GenKind::ddim;
  CHECK(c.effective_lr() == 1e-4);
  CHECK(c.effective_warmup() == 500);
  c.gen = GenKind::fm;
  CHECK(c.effective_lr() == 3e-5);
  CHECK(c.effective_warmup() == 10);
  c.lr = 0.5;
  c.warmup = 0;
  CHECK(c.effective_lr() == 0.5);
  CHECK(c.effective_warmup() == 0);
}

TEST_CASE("config: canonical text drives the hash") {
  TrainConfig a, b;
  CHECK(config_hash(a) == config_hash(b));
  b.epochs += 1;
  CHECK(config_hash(a) != config_hash(b));
  b = a;
  b.interaction.use_alpha = false;
  CHECK(config_hash(a) != config_hash(b));
  const std::string text = canonical_config_text(a);
  TrainConfig back = train_config_from_kv(parse_kv_text(text));
  CHECK(canonical_config_text(back) == text);
}

TEST_CASE("config: maps onto the policy config") {
  TrainConfig c = toy_config(TaskName::three_arm_stack, GenKind::ddim);
  c.arch = PolicyTag::decoupled_interaction;
  PolicyConfig p = to_policy_config(c);
  CHECK(p.K == 3);
  CHECK(p.tag == PolicyTag::decoupled_interaction);
  CHECK(p.gen == GenKind::ddim);
  CHECK(p.n_points == 16);
  CHECK(p.gen_width == 32);
  CHECK(p.action_dim == 4);
  CHECK(p.state_dim() == 4);
}

TEST_CASE("dataset: generation is deterministic and files are bit identical") {
  const TaskSpec spec = make_task(TaskName::dual_pick);
  DemoSet a = generate_demos(spec, 3, 100, 16);
  DemoSet b = generate_demos(spec, 3, 100, 16);
  REQUIRE(a.demos.size() == 3);
  REQUIRE(b.demos.size() == 3);
  CHECK(a.demos[0].seed == b.demos[0].seed);
  const std::string p1 = scratch_dir() + "/ds1.diif";
  const std::string p2 = scratch_dir() + "/ds2.diif";
  save_dataset(p1, a);
  save_dataset(p2, b);
  CHECK(read_bytes(p1) == read_bytes(p2));
  CHECK(std::filesystem::exists(p1 + ".manifest.json"));
  const auto manifest = nlohmann::json::parse(read_bytes(p1 + ".manifest.json"));
  CHECK(manifest.at("count") == 3);
  CHECK(manifest.at("task") == "dual-pick");
  CHECK(manifest.at("demos").size() == 3);
  CHECK(manifest.at("action_stats").size() == 2);

  DemoSet loaded = load_dataset(p1);
  REQUIRE(loaded.demos.size() == a.demos.size());
  for (size_t d = 0; d < a.demos.size(); ++d)
    for (int i = 0; i < a.K; ++i) {
      CHECK(loaded.demos[d].clouds[static_cast<size_t>(i)].data ==
            a.demos[d].clouds[static_cast<size_t>(i)].data);
      CHECK(loaded.demos[d].actions[static_cast<size_t>(i)].data ==
            a.demos[d].actions[static_cast<size_t>(i)].data);
    }
  for (int i = 0; i < a.K; ++i) {
    CHECK(loaded.stats[static_cast<size_t>(i)].mean ==
          a.stats[static_cast<size_t>(i)].mean);
    CHECK(loaded.stats[static_cast<size_t>(i)].stddev ==
          a.stats[static_cast<size_t>(i)].stddev);
  }
}

TEST_CASE("dataset: stats match an independent recomputation") {
  const TaskSpec spec = make_task(TaskName::handover);
  DemoSet ds = generate_demos(spec, 4, 50, 16);
  for (int i = 0; i < ds.K; ++i) {
    for (int c = 0; c < ds.action_dim; ++c) {
      double sum = 0.0;
      long long n = 0;
      for (const auto& d : ds.demos) {
        const auto& act = d.actions[static_cast<size_t>(i)];
        for (int r = 0; r < act.rows; ++r) sum += act.at(r, c);
        n += act.rows;
      }
      const double mean = sum / static_cast<double>(n);
      double var = 0.0;
      for (const auto& d : ds.demos) {
        const auto& act = d.actions[static_cast<size_t>(i)];
        for (int r = 0; r < act.rows; ++r)
          var += (act.at(r, c) - mean) * (act.at(r, c) - mean);
      }
      var /= static_cast<double>(n);
      const auto& s = ds.stats[static_cast<size_t>(i)];
      CHECK(std::abs(s.mean[static_cast<size_t>(c)] - mean) < 1e-5);
      CHECK(std::abs(s.stddev[static_cast<size_t>(c)] -
                     std::max(1e-6, std::sqrt(var))) < 1e-5);
    }
  }
}

TEST_CASE("dataset: gives up when the expert cannot succeed") {
  TaskSpec hobbled = make_task(TaskName::handover);
  hobbled.max_steps = 3;
  REQUIRE_THROWS_AS(generate_demos(hobbled, 1, 0, 16), Error);
}

TEST_CASE("dataset: windows match naive index arithmetic") {
  const TaskSpec spec = make_task(TaskName::dual_pick);
  DemoSet ds = generate_demos(spec, 4, 200, 16);
  TrainConfig tc = toy_config(TaskName::dual_pick, GenKind::fm);
  const PolicyConfig cfg = to_policy_config(tc);

  const int B = 100;
  Rng rng(31);
  Rng oracle(31);
  TrainingBatch<float> tb = sample_windows<float>(ds, cfg, B, rng);
  tb.validate(cfg);

  bool saw_left_edge = false;
  bool saw_right_edge = false;
  for (int b = 0; b < B; ++b) {
    const auto& demo =
        ds.demos[static_cast<size_t>(oracle.below(ds.demos.size()))];
    const int T = demo.t_steps;
    const int t = static_cast<int>(oracle.below(static_cast<uint64_t>(T)));
    if (t == 0) saw_left_edge = true;
    if (t + cfg.horizon > T) saw_right_edge = true;
    for (int i = 0; i < cfg.K; ++i) {
      const auto& arm = tb.obs.arms[static_cast<size_t>(i)];
      for (int s = 0; s < cfg.n_obs_steps; ++s) {
        const int src = std::max(0, t - (cfg.n_obs_steps - 1) + s);
        for (int r = 0; r < cfg.n_points; ++r)
          for (int cc = 0; cc < 2; ++cc)
            REQUIRE(arm.clouds.at((b * cfg.n_obs_steps + s) * cfg.n_points + r,
                                  cc) ==
                    demo.clouds[static_cast<size_t>(i)].at(
                        src * cfg.n_points + r, cc));
        for (int cc = 0; cc < cfg.state_dim(); ++cc)
          REQUIRE(arm.states.at(b * cfg.n_obs_steps + s, cc) ==
                  demo.states[static_cast<size_t>(i)].at(src, cc));
      }
      for (int h = 0; h < cfg.horizon; ++h) {
        const int src = std::min(t + h, T - 1);
        for (int cc = 0; cc < cfg.action_dim; ++cc)
          REQUIRE(tb.chunks[static_cast<size_t>(i)].at(b, h * cfg.action_dim +
                                                              cc) ==
                  demo.actions[static_cast<size_t>(i)].at(src, cc));
      }
    }
  }
  CHECK(saw_left_edge);
  CHECK(saw_right_edge);
}

TEST_CASE("dataset: window sampling rejects mismatched dims") {
  const TaskSpec spec = make_task(TaskName::dual_pick);
  DemoSet ds = generate_demos(spec, 2, 300, 16);
  TrainConfig tc = toy_config(TaskName::dual_pick, GenKind::fm);
  tc.n_points = 32;
  Rng rng(1);
  REQUIRE_THROWS_AS(sample_windows<float>(ds, to_policy_config(tc), 4, rng),
                    Error);
}

TEST_CASE("train: same config and dataset give identical checkpoints") {
  const TaskSpec spec = make_task(TaskName::dual_pick);
  TrainConfig tc = toy_config(TaskName::dual_pick, GenKind::fm);
  tc.epochs = 2;
  DemoSet ds = generate_demos(spec, tc.demos, 400, tc.n_points);

  TrainResult r1 = train_policy(tc, ds);
  TrainResult r2 = train_policy(tc, ds);
  REQUIRE(r1.steps == r2.steps);
  REQUIRE(r1.steps > 0);
  REQUIRE(!r1.diverged);
  bool all_equal = true;
  visit_policy(r1.ckpt.raw, [&](const std::string& name, float* d, size_t n) {
    visit_policy(r2.ckpt.raw,
                 [&](const std::string& name2, float* d2, size_t n2) {
                   if (name2 != name) return;
                   REQUIRE(n2 == n);
                   for (size_t i = 0; i < n; ++i)
                     all_equal = all_equal && d[i] == d2[i];
                 });
  });
  CHECK(all_equal);

  TrainConfig other = tc;
  other.seed += 1;
  TrainResult r3 = train_policy(other, ds);
  bool any_diff = false;
  visit_policy(r1.ckpt.raw, [&](const std::string& name, float* d, size_t n) {
    visit_policy(r3.ckpt.raw,
                 [&](const std::string& name2, float* d2, size_t n2) {
                   if (name2 != name || n2 != n) return;
                   for (size_t i = 0; i < n; ++i)
                     any_diff = any_diff || d[i] != d2[i];
                 });
  });
  CHECK(any_diff);
}

TEST_CASE("train: loss falls well below its starting moving average") {
  const TaskSpec spec = make_task(TaskName::dual_pick);
  TrainConfig tc = toy_config(TaskName::dual_pick, GenKind::fm);
  tc.epochs = 900;
  tc.lr = 1.5e-3;
  tc.demos = 4;
  DemoSet ds = generate_demos(spec, tc.demos, 400, tc.n_points);
  TrainResult r = train_policy(tc, ds);
  REQUIRE(!r.diverged);
  REQUIRE(r.log.size() >= 200);

  double start = 0.0;
  const size_t head = std::min<size_t>(100, r.log.size());
  for (size_t i = 0; i < head; ++i) start += r.log[i].loss;
  start /= static_cast<double>(head);
  double best = start;
  for (const auto& e : r.log) best = std::min(best, e.smooth);
  INFO("start " << start << " best " << best);
  CHECK(best < 0.5 * start);
}

TEST_CASE("train: non-finite losses abort with a diverged flag") {
  const TaskSpec spec = make_task(TaskName::dual_pick);
  TrainConfig tc = toy_config(TaskName::dual_pick, GenKind::fm);
  tc.epochs = 40;
  DemoSet ds = generate_demos(spec, tc.demos, 400, tc.n_points);
  for (auto& d : ds.demos)
    for (auto& a : d.actions)
      for (auto& v : a.data) v = std::numeric_limits<float>::quiet_NaN();
  for (auto& s : ds.stats) s = unit_stats<float>(ds.action_dim);
  TrainResult r = train_policy(tc, ds);
  CHECK(r.diverged);
  CHECK(r.ckpt.diverged);
  CHECK(r.log.size() == 2);
  CHECK(r.steps == 0);
}

TEST_CASE("checkpoint: inference is bitwise identical after reload") {
  const TaskSpec spec = make_task(TaskName::handover);
  TrainConfig tc = toy_config(TaskName::handover, GenKind::ddim);
  tc.epochs = 1;
  DemoSet ds = generate_demos(spec, tc.demos, 500, tc.n_points);
  TrainResult r = train_policy(tc, ds);
  const std::string path = scratch_dir() + "/ckpt.diif";
  save_checkpoint(path, r.ckpt);
  PolicyCheckpoint back = load_checkpoint(path);
  CHECK(back.train_steps == r.ckpt.train_steps);
  CHECK(back.cfg.gen == tc.gen);
  CHECK(config_hash(back.cfg) == config_hash(tc));

  SimState s = spawn_episode(spec, 77);
  std::vector<ObsHistory<float>> hist(2);
  diif::detail::push_observation(s, tc.n_points, hist, tc.n_obs_steps);
  Rng rng1(5), rng2(5);
  const auto out1 = infer(r.ckpt.ema, hist, rng1);
  const auto out2 = infer(back.ema, hist, rng2);
  REQUIRE(out1.size() == out2.size());
  for (size_t i = 0; i < out1.size(); ++i) {
    REQUIRE(out1[i].rows == out2[i].rows);
    for (size_t k = 0; k < out1[i].data.size(); ++k)
      REQUIRE(out1[i].data[k] == out2[i].data[k]);
  }

  SECTION("flipped byte is refused") {
    std::string bytes = read_bytes(path);
    bytes[bytes.size() - 9] = static_cast<char>(bytes[bytes.size() - 9] ^ 1);
    const std::string bad = scratch_dir() + "/ckpt-bad.diif";
    write_text_file(bad, bytes);
    REQUIRE_THROWS_AS(load_checkpoint(bad), Error);
  }
  SECTION("wrong container kind is refused") {
    const std::string dsp = scratch_dir() + "/ds-as-ckpt.diif";
    save_dataset(dsp, ds);
    REQUIRE_THROWS_AS(load_checkpoint(dsp), Error);
  }
}

TEST_CASE("evaluate: the scripted expert scores near perfect") {
  const TaskSpec spec = make_task(TaskName::handover);
  EvalSummary sum = evaluate_expert(spec, 40, 900);
  CHECK(sum.episodes == 40);
  CHECK(sum.success_rate >= 0.95);
  CHECK(sum.collision_rate == 0.0);
  for (const auto& r : sum.records) {
    if (r.success) CHECK(!r.collision);
    CHECK(r.steps >= 1);
    CHECK(r.steps <= spec.max_steps);
  }
}

TEST_CASE("evaluate: untrained policy flails, trained policy is scored the same way") {
  TaskSpec spec = make_task(TaskName::handover);
  TrainConfig tc = toy_config(TaskName::handover, GenKind::fm);
  Policy<float> p = make_policy<float>(to_policy_config(tc), 3);
  EvalSummary sum = evaluate_policy(p, spec, 10, 900);
  CHECK(sum.episodes == 10);
  CHECK(sum.success_rate <= 0.1);
  CHECK(sum.mean_steps > 0);
}

TEST_CASE("evaluate: episode cap and determinism") {
  TaskSpec spec = make_task(TaskName::dual_pick);
  spec.max_steps = 20;
  TrainConfig tc = toy_config(TaskName::dual_pick, GenKind::fm);
  Policy<float> p = make_policy<float>(to_policy_config(tc), 4);
  std::vector<EpisodeTrace> traces;
  EvalSummary a = evaluate_policy(p, spec, 3, 50, &traces);
  EvalSummary b = evaluate_policy(p, spec, 3, 50);
  REQUIRE(traces.size() == 3);
  for (int e = 0; e < 3; ++e) {
    CHECK(a.records[static_cast<size_t>(e)].success ==
          b.records[static_cast<size_t>(e)].success);
    CHECK(a.records[static_cast<size_t>(e)].steps ==
          b.records[static_cast<size_t>(e)].steps);
    if (!a.records[static_cast<size_t>(e)].success &&
        !a.records[static_cast<size_t>(e)].collision)
      CHECK(a.records[static_cast<size_t>(e)].steps == spec.max_steps);
  }

  TrainConfig wrong = toy_config(TaskName::three_arm_stack, GenKind::fm);
  Policy<float> p3 = make_policy<float>(to_policy_config(wrong), 4);
  REQUIRE_THROWS_AS(evaluate_policy(p3, spec, 1, 1), Error);
}

TEST_CASE("ablate: grid runs cells, shares caches, and marks failures") {
  TrainConfig base = toy_config(TaskName::dual_pick, GenKind::fm);
  base.epochs = 1;
  base.demos = 2;
  base.eval_episodes = 2;

  AblationGridConfig g;
  g.grid = "arch";
  g.tasks = {TaskName::dual_pick};
  g.seeds = 1;
  g.base = base;
  AblationRunner runner;
  AblationReport rep = run_ablation(g, &runner);
  REQUIRE(rep.cells.size() == 3);
  for (const auto& c : rep.cells) {
    CHECK(!c.failed);
    REQUIRE(c.per_seed.size() == 1);
  }
  AblationReport rep2 = run_ablation(g, &runner);
  for (size_t i = 0; i < rep.cells.size(); ++i)
    CHECK(rep.cells[i].mean == rep2.cells[i].mean);

  SECTION("bad width fails its cell but not the grid") {
    AblationGridConfig bad = g;
    bad.grid = "widths";
    bad.widths = {-4};
    AblationReport r = run_ablation(bad, &runner);
    REQUIRE(r.cells.size() == 2);
    CHECK(!r.cell("integrated-w32", "dual-pick").failed);
    CHECK(r.cell("interaction-w-4", "dual-pick").failed);
    CHECK(!r.cell("interaction-w-4", "dual-pick").error.empty());
  }
  SECTION("table2 grid has the five rows") {
    const auto rows = diif::detail::grid_rows([&] {
      AblationGridConfig t = g;
      t.grid = "table2";
      return t;
    }());
    REQUIRE(rows.size() == 5);
    CHECK(rows[0].first == "integrated");
    CHECK(rows[2].first == "wo-alpha");
    CHECK(rows[3].first == "wo-beta");
    CHECK(rows[4].first == "full");
  }
}

TEST_CASE("report: json roundtrip, csv, and markdown") {
  AblationReport rep;
  rep.grid = "table2";
  rep.tasks = {"handover"};
  rep.seeds = 2;
  rep.epochs = 10;
  rep.demos = 5;
  CellResult ok{"full", "handover", {0.8, 0.9}, {1.0, 1.0}, 0.85, 1.0, false, ""};
  CellResult bad{"integrated", "handover", {}, {}, 0.0, 0.0, true, "diverged"};
  rep.cells = {ok, bad};

  AblationReport back = ablation_from_json(to_json(rep));
  CHECK(back.grid == rep.grid);
  CHECK(back.cells.size() == 2);
  CHECK(back.cell("full", "handover").mean == 0.85);
  CHECK(back.cell("integrated", "handover").failed);
  CHECK(back.cell("integrated", "handover").error == "diverged");

  const std::string csv = ablation_csv(rep);
  CHECK(csv.find("grid,row,task,mean") == 0);
  CHECK(csv.find("table2,full,handover,0.85") != std::string::npos);
  CHECK(csv.find("0.8;0.9") != std::string::npos);

  const std::string md = ablation_markdown(rep);
  CHECK(md.find("| full | 0.850 |") != std::string::npos);
  CHECK(md.find("| integrated | failed | failed |") != std::string::npos);

  const std::string dir = scratch_dir() + "/reports";
  write_ablation_reports(dir, "probe", rep);
  CHECK(std::filesystem::exists(dir + "/probe.json"));
  CHECK(std::filesystem::exists(dir + "/probe.csv"));
  CHECK(std::filesystem::exists(dir + "/probe.md"));
  AblationReport reread =
      ablation_from_json(nlohmann::json::parse(read_bytes(dir + "/probe.json")));
  CHECK(reread.cell("full", "handover").per_seed == ok.per_seed);
}

TEST_CASE("report: eval json and csv carry the per-episode records") {
  const TaskSpec spec = make_task(TaskName::dual_pick);
  EvalSummary sum = evaluate_expert(spec, 5, 1234);
  const auto j = to_json(sum);
  CHECK(j.at("episodes") == 5);
  CHECK(j.at("records").size() == 5);
  CHECK(j.at("success_rate").get<double>() >= 0.0);
  const std::string csv = eval_csv(sum);
  int lines = 0;
  for (char ch : csv) lines += ch == '\n' ? 1 : 0;
  CHECK(lines == 6);
}

TEST_CASE("report: episode svg sketches the scene") {
  const TaskSpec spec = make_task(TaskName::handover);
  std::vector<EpisodeTrace> traces;
  evaluate_expert(spec, 1, 4, &traces);
  REQUIRE(traces.size() == 1);
  const std::string svg = episode_svg(spec, traces[0]);
  CHECK(svg.find("<svg") == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("polyline") != std::string::npos);
  CHECK(svg.find("handover") != std::string::npos);
  const auto evs = events_json(traces[0].last);
  REQUIRE(evs.size() >= 3);
  CHECK(evs[0].contains("kind"));
  CHECK(evs[0].contains("step"));
}

TEST_CASE("report: DIIF_OUT_DIR overrides the requested directory") {
  unsetenv("DIIF_OUT_DIR");
  CHECK(resolve_out_dir("somewhere") == "somewhere");
  CHECK(resolve_out_dir("") == ".");
  setenv("DIIF_OUT_DIR", "/tmp/diif-out-probe", 1);
  CHECK(resolve_out_dir("somewhere") == "/tmp/diif-out-probe");
  unsetenv("DIIF_OUT_DIR");
  CHECK(resolve_out_dir("somewhere") == "somewhere");
}

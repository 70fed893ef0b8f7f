// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "diif/policy.hpp"
#include "fd_check.hpp"

using namespace diif;

namespace {

PolicyConfig tiny_config(PolicyTag tag, GenKind gen = GenKind::ddim) {
  PolicyConfig cfg;
  cfg.tag = tag;
  cfg.gen = gen;
  cfg.K = 2;
  cfg.coord_dim = 2;
  cfg.n_points = 5;
  cfg.n_joints = 2;
  cfg.action_dim = 2;
  cfg.horizon = 2;
  cfg.n_obs_steps = 2;
  cfg.n_action_steps = 2;
  cfg.d_vis = 6;
  cfg.d_state = 4;
  cfg.enc_width = 8;
  cfg.sel_width = 8;
  cfg.gen_width = 12;
  cfg.gen_layers = 2;
  cfg.diffusion_T = 20;
  cfg.num_inference_steps = 5;
  return cfg;
}

template <class T>
TrainingBatch<T> random_batch(const PolicyConfig& cfg, int B, Rng& rng) {
  TrainingBatch<T> batch;
  batch.obs.batch = B;
  for (int i = 0; i < cfg.K; ++i) {
    ArmObs<T> a;
    a.clouds = Mat<T>(B * cfg.n_obs_steps * cfg.n_points, cfg.coord_dim);
    rng.fill_uniform(a.clouds, T(-1), T(1));
    a.states = Mat<T>(B * cfg.n_obs_steps, cfg.state_dim());
    rng.fill_uniform(a.states, T(-1), T(1));
    batch.obs.arms.push_back(std::move(a));
    Mat<T> chunk(B, cfg.arm_chunk_dim());
    rng.fill_uniform(chunk, T(-1), T(1));
    batch.chunks.push_back(std::move(chunk));
  }
  return batch;
}

// Zero-initialized generator readouts leave every upstream path with a
// vanishing gradient and a cond-blind output; nudge all parameters into
// generic position before structural checks.
template <class T>
void jitter_policy(Policy<T>& p, uint64_t seed) {
  Rng jitter(seed ^ 0xabcdef);
  visit_policy(p, [&](const std::string&, T* d, size_t n) {
    for (size_t i = 0; i < n; ++i)
      d[i] += static_cast<T>(jitter.uniform(-0.02, 0.02));
  });
}

template <class T>
std::vector<unsigned char> snapshot(Policy<T>& p) {
  std::vector<unsigned char> bytes;
  visit_policy(p, [&](const std::string&, T* d, size_t n) {
    const auto* raw = reinterpret_cast<const unsigned char*>(d);
    bytes.insert(bytes.end(), raw, raw + n * sizeof(T));
  });
  return bytes;
}

template <class T>
std::vector<ObsHistory<T>> random_histories(const PolicyConfig& cfg, Rng& rng) {
  std::vector<ObsHistory<T>> hist(static_cast<size_t>(cfg.K));
  for (auto& h : hist) {
    for (int s = 0; s < cfg.n_obs_steps; ++s) {
      Mat<T> cl(cfg.n_points, cfg.coord_dim);
      rng.fill_uniform(cl, T(-1), T(1));
      h.clouds.push_back(std::move(cl));
      ArmState<T> st;
      for (int j = 0; j < cfg.n_joints; ++j)
        st.joints.push_back(static_cast<T>(rng.uniform(-1.0, 1.0)));
      st.gripper = static_cast<T>(rng.uniform(0.0, 1.0));
      h.states.push_back(std::move(st));
    }
  }
  return hist;
}

}  // namespace

TEST_CASE("architecture construction rules") {
  auto dec = tiny_config(PolicyTag::decoupled);
  auto pd = make_policy<float>(dec, 1);
  REQUIRE(pd.gens.size() == 2);
  REQUIRE(pd.selectors.empty());
  REQUIRE(pd.fusions.empty());
  REQUIRE(pd.encoders.size() == 2);

  auto di = tiny_config(PolicyTag::decoupled_interaction);
  di.K = 3;
  auto pi = make_policy<float>(di, 1);
  REQUIRE(pi.gens.size() == 3);
  REQUIRE(pi.selectors.size() == 3);
  REQUIRE(pi.encoders.size() == 3);

  auto integ = tiny_config(PolicyTag::integrated);
  integ.action_dim = 7;
  auto pc = make_policy<float>(integ, 1);
  REQUIRE(pc.gens.size() == 1);
  REQUIRE(pc.gens[0].chunk_dim == integ.horizon * 14);
  REQUIRE(pc.gens[0].cond_dim == 2 * integ.base_cond_width());

  auto bad = tiny_config(PolicyTag::decoupled_interaction);
  bad.K = 1;
  REQUIRE_THROWS_AS(make_policy<float>(bad, 1), Error);

  auto solo = tiny_config(PolicyTag::decoupled);
  solo.K = 1;
  auto ps = make_policy<float>(solo, 1);
  REQUIRE(ps.gens.size() == 1);

  auto mlp_cfg = tiny_config(PolicyTag::decoupled_interaction);
  mlp_cfg.interaction.variant = InteractionVariant::mlp;
  auto pm = make_policy<float>(mlp_cfg, 1);
  REQUIRE(pm.fusions.size() == 2);
  REQUIRE(pm.selectors.empty());

  auto cat_cfg = tiny_config(PolicyTag::decoupled_interaction);
  cat_cfg.interaction.variant = InteractionVariant::concat;
  auto pcat = make_policy<float>(cat_cfg, 1);
  REQUIRE(pcat.selectors.empty());
  REQUIRE(pcat.fusions.empty());
  REQUIRE(pcat.cfg.cond_dim() ==
          cat_cfg.base_cond_width() + cat_cfg.d_state);
}

TEST_CASE("construction is deterministic per seed") {
  for (auto tag : {PolicyTag::integrated, PolicyTag::decoupled,
                   PolicyTag::decoupled_interaction}) {
    auto cfg = tiny_config(tag);
    auto a = make_policy<float>(cfg, 42);
    auto b = make_policy<float>(cfg, 42);
    auto c = make_policy<float>(cfg, 43);
    REQUIRE(snapshot(a) == snapshot(b));
    REQUIRE(snapshot(a) != snapshot(c));
  }
}

TEST_CASE("param and grad visitation stay aligned") {
  for (auto tag : {PolicyTag::integrated, PolicyTag::decoupled,
                   PolicyTag::decoupled_interaction}) {
    for (auto variant : {InteractionVariant::selective,
                         InteractionVariant::concat, InteractionVariant::mlp}) {
      auto cfg = tiny_config(tag);
      cfg.interaction.variant = variant;
      auto p = make_policy<float>(cfg, 7);
      auto grads = make_policy_grads(p);
      auto pr = policy_param_refs(p);
      auto gr = policy_grad_refs(grads, cfg);
      REQUIRE(pr.size() == gr.size());
      for (size_t i = 0; i < pr.size(); ++i) {
        REQUIRE(pr[i].name == gr[i].name);
        REQUIRE(pr[i].n == gr[i].n);
      }
    }
  }
}

TEST_CASE("parameter counting") {
  Mlp<double> single;
  single.layers.push_back(make_zero_layer<double>(5, 7, Act::identity));
  REQUIRE(param_count(single) == 5 * 7 + 7);

  auto cfg1 = tiny_config(PolicyTag::decoupled);
  cfg1.K = 1;
  auto cfg2 = tiny_config(PolicyTag::decoupled);
  cfg2.K = 2;
  auto p1 = make_policy<float>(cfg1, 3);
  auto p2 = make_policy<float>(cfg2, 3);
  REQUIRE(count_params(p2).total() == 2 * count_params(p1).total());

  // A deliberately small decoupled-interaction stack against a wide
  // single-net baseline: under a sixth of the parameters.
  PolicyConfig big = tiny_config(PolicyTag::integrated);
  big.n_points = 32;
  big.n_joints = 3;
  big.action_dim = 4;
  big.horizon = 8;
  big.n_obs_steps = 3;
  big.d_vis = 64;
  big.d_state = 32;
  big.enc_width = 64;
  big.gen_width = 384;
  big.gen_layers = 4;
  PolicyConfig small = big;
  small.tag = PolicyTag::decoupled_interaction;
  small.gen_width = 48;
  small.sel_width = 32;
  auto pb = make_policy<float>(big, 5);
  auto psm = make_policy<float>(small, 5);
  const double ratio = static_cast<double>(count_params(psm).total()) /
                       static_cast<double>(count_params(pb).total());
  INFO("ratio " << ratio << " small " << count_params(psm).total() << " big "
                << count_params(pb).total());
  REQUIRE(ratio < 1.0 / 6.0);
}

TEST_CASE("chunk normalization and joint layout") {
  NormStats<double> st;
  st.mean = {1.0, 2.0};
  st.stddev = {2.0, 4.0};
  Mat<double> chunk(1, 4);
  chunk.data = {3.0, 6.0, 5.0, 10.0};
  auto z = normalize_chunks(chunk, st, 2);
  REQUIRE(z.data == std::vector<double>{1.0, 1.0, 2.0, 2.0});
  Mat<double> back(2, 2);
  back.data = z.data;
  denormalize_chunk(back, st);
  REQUIRE(back.data == chunk.data);

  Mat<double> a(2, 4), b(2, 4);
  Rng rng(9);
  rng.fill_uniform(a, -1.0, 1.0);
  rng.fill_uniform(b, -1.0, 1.0);
  auto joint = join_chunks<double>({a, b}, 2, 2);
  REQUIRE(joint.cols == 8);
  for (int r = 0; r < 2; ++r) {
    auto ra = split_chunk_row(joint.row(r), 0, 2, 2, 2);
    auto rb = split_chunk_row(joint.row(r), 1, 2, 2, 2);
    for (int h = 0; h < 2; ++h)
      for (int c = 0; c < 2; ++c) {
        REQUIRE(ra.at(h, c) == a.at(r, h * 2 + c));
        REQUIRE(rb.at(h, c) == b.at(r, h * 2 + c));
      }
  }
}

namespace {

/// Deterministic total training loss for finite differencing: fresh,
/// fixed-seed noise streams per evaluation.
template <class T>
double policy_loss_probe(Policy<T>& p, const TrainingBatch<T>& batch,
                         uint64_t noise_seed, PolicyGrads<T>* grads) {
  const auto& cfg = p.cfg;
  PolicyFwdCache<T> cache;
  policy_conditions(p, batch.obs, cache);
  Rng rng(noise_seed);
  double total = 0.0;
  std::vector<Mat<T>> dconds;
  if (cfg.tag == PolicyTag::integrated) {
    std::vector<Mat<T>> normed;
    for (int i = 0; i < cfg.K; ++i)
      normed.push_back(normalize_chunks(batch.chunks[static_cast<size_t>(i)],
                                        p.norm[static_cast<size_t>(i)],
                                        cfg.action_dim));
    Mat<T> joint = join_chunks(normed, cfg.horizon, cfg.action_dim);
    GenGrads<T> gg = make_gen_grads(p.gens[0], batch.obs.batch);
    Rng r = rng.derive(0);
    total = cfg.gen == GenKind::ddim
                ? ddim_loss(p.gens[0], joint, cache.joint_cond, p.sched, r,
                            grads ? &gg : nullptr)
                : fm_loss(p.gens[0], joint, cache.joint_cond, r,
                          grads ? &gg : nullptr);
    if (grads) {
      grads->gens[0] = std::move(gg.net);
      dconds.push_back(std::move(gg.dcond));
      policy_conditions_backward(p, batch.obs, cache, dconds, *grads);
    }
    return total;
  }
  for (int i = 0; i < cfg.K; ++i) {
    Mat<T> normed = normalize_chunks(batch.chunks[static_cast<size_t>(i)],
                                     p.norm[static_cast<size_t>(i)],
                                     cfg.action_dim);
    GenGrads<T> gg = make_gen_grads(p.gens[static_cast<size_t>(i)],
                                    batch.obs.batch);
    Rng r = rng.derive(static_cast<uint64_t>(i));
    const Mat<T>& cond = cache.arms[static_cast<size_t>(i)].cond;
    total += cfg.gen == GenKind::ddim
                 ? ddim_loss(p.gens[static_cast<size_t>(i)], normed, cond,
                             p.sched, r, grads ? &gg : nullptr)
                 : fm_loss(p.gens[static_cast<size_t>(i)], normed, cond, r,
                           grads ? &gg : nullptr);
    if (grads) {
      grads->gens[static_cast<size_t>(i)] = std::move(gg.net);
      dconds.push_back(std::move(gg.dcond));
    }
  }
  if (grads) policy_conditions_backward(p, batch.obs, cache, dconds, *grads);
  return total;
}

void run_policy_fd(const PolicyConfig& cfg, uint64_t seed) {
  auto p = make_policy<double>(cfg, seed);
  // Zero biases also put dead relu units exactly on the kink, where
  // finite differences and subgradients legitimately disagree.
  jitter_policy(p, seed);
  Rng rng(seed ^ 0x9e3779b9);
  auto batch = random_batch<double>(cfg, 3, rng);

  PolicyGrads<double> grads = make_policy_grads(p);
  policy_loss_probe(p, batch, 2718, &grads);

  auto params = policy_param_refs(p);
  auto analytic = policy_grad_refs(grads, cfg);
  auto rep = testutil::fd_compare_adaptive(params, analytic, [&]() {
    return policy_loss_probe<double>(p, batch, 2718, nullptr);
  });
  INFO(policy_tag_name(cfg.tag)
       << "/" << variant_name(cfg.interaction.variant) << "/"
       << gen_kind_name(cfg.gen) << " seed " << seed << " worst " << rep.worst
       << " skipped " << rep.skipped << "/" << rep.total);
  REQUIRE(rep.max_rel_err < 1e-3);
  REQUIRE(rep.skipped < rep.total / 100);
}

}  // namespace

TEST_CASE("training gradients match finite differences end to end") {
  auto sel = tiny_config(PolicyTag::decoupled_interaction);
  run_policy_fd(sel, 31);

  auto selfm = tiny_config(PolicyTag::decoupled_interaction, GenKind::fm);
  run_policy_fd(selfm, 32);

  auto cat = tiny_config(PolicyTag::decoupled_interaction);
  cat.interaction.variant = InteractionVariant::concat;
  run_policy_fd(cat, 33);

  auto fus = tiny_config(PolicyTag::decoupled_interaction);
  fus.interaction.variant = InteractionVariant::mlp;
  run_policy_fd(fus, 34);

  auto dec = tiny_config(PolicyTag::decoupled);
  run_policy_fd(dec, 35);

  auto integ = tiny_config(PolicyTag::integrated);
  run_policy_fd(integ, 36);

  auto three = tiny_config(PolicyTag::decoupled_interaction);
  three.K = 3;
  run_policy_fd(three, 37);
}

TEST_CASE("pinned factor gradients skip the frozen head") {
  auto cfg = tiny_config(PolicyTag::decoupled_interaction);
  cfg.interaction.use_beta = false;
  run_policy_fd(cfg, 41);
  auto p = make_policy<double>(cfg, 41);
  jitter_policy(p, 41);
  Rng rng(5);
  auto batch = random_batch<double>(cfg, 3, rng);
  PolicyGrads<double> grads = make_policy_grads(p);
  policy_loss_probe(p, batch, 99, &grads);
  for (auto& g : grads.sel) {
    double beta_mag = 0.0;
    visit_mlp(g.beta_head, "b", [&](const std::string&, double* d, size_t n) {
      for (size_t i = 0; i < n; ++i) beta_mag += std::abs(d[i]);
    });
    REQUIRE(beta_mag == 0.0);
    double alpha_mag = 0.0;
    visit_mlp(g.alpha_head, "a", [&](const std::string&, double* d, size_t n) {
      for (size_t i = 0; i < n; ++i) alpha_mag += std::abs(d[i]);
    });
    REQUIRE(alpha_mag > 0.0);
  }

  auto cfg2 = tiny_config(PolicyTag::decoupled_interaction);
  cfg2.interaction.use_alpha = false;
  run_policy_fd(cfg2, 42);

  // Detached exchange drops the peer-path term on purpose, so finite
  // differences of the forward loss are not the right oracle. Compare
  // structurally against the full gradient instead: only the state
  // encoders feed the exchanged features, so only their grads change.
  auto cfg3 = tiny_config(PolicyTag::decoupled_interaction);
  auto p3 = make_policy<double>(cfg3, 43);
  jitter_policy(p3, 43);
  Rng rng3(7);
  auto batch3 = random_batch<double>(cfg3, 3, rng3);

  auto grab = [&](bool detach) {
    auto q = p3;
    q.cfg.interaction.detach_exchange = detach;
    PolicyGrads<double> g = make_policy_grads(q);
    policy_loss_probe(q, batch3, 123, &g);
    std::map<std::string, std::vector<double>> out;
    visit_policy_grads(g, q.cfg,
                       [&](const std::string& name, double* d, size_t n) {
                         out[name].assign(d, d + n);
                       });
    return out;
  };
  auto full = grab(false);
  auto detached = grab(true);
  REQUIRE(full.size() == detached.size());
  bool state_diff = false;
  for (auto& [name, vals] : full) {
    if (name.find(".enc.state.") != std::string::npos) {
      if (vals != detached[name]) state_diff = true;
    } else {
      REQUIRE(vals == detached[name]);
    }
  }
  REQUIRE(state_diff);
}

TEST_CASE("decoupled loss is an exact per arm sum") {
  auto cfg = tiny_config(PolicyTag::decoupled);
  auto tr = make_trainer(make_policy<float>(cfg, 11), AdamWConfig{},
                         LrSchedule{0, 100, 1e-4});
  Rng rng(21);
  auto batch = random_batch<float>(cfg, 4, rng);
  Rng step_rng(100);
  auto m = train_step(tr, batch, step_rng);
  REQUIRE(m.per_arm.size() == 2);
  REQUIRE(m.total == m.per_arm[0] + m.per_arm[1]);
  REQUIRE(std::isfinite(m.total));
  REQUIRE(m.applied);
}

TEST_CASE("decoupled arm updates ignore the other arm's batch") {
  auto cfg = tiny_config(PolicyTag::decoupled);
  auto base = make_policy<float>(cfg, 13);
  auto tr_a = make_trainer(base, AdamWConfig{}, LrSchedule{0, 100, 1e-3});
  auto tr_b = make_trainer(base, AdamWConfig{}, LrSchedule{0, 100, 1e-3});
  Rng rng(31);
  auto batch_a = random_batch<float>(cfg, 4, rng);
  auto batch_b = batch_a;
  // Rewrite arm 1's ground truth and inputs entirely.
  for (auto& v : batch_b.chunks[1].data) v += 0.7f;
  for (auto& v : batch_b.obs.arms[1].states.data) v *= -1.0f;

  Rng ra(500), rb(500);
  train_step(tr_a, batch_a, ra);
  train_step(tr_b, batch_b, rb);

  auto grab = [](Policy<float>& p, const std::string& want) {
    std::vector<unsigned char> bytes;
    visit_policy(p, [&](const std::string& name, float* d, size_t n) {
      if (name.rfind(want, 0) == 0) {
        const auto* raw = reinterpret_cast<const unsigned char*>(d);
        bytes.insert(bytes.end(), raw, raw + n * sizeof(float));
      }
    });
    return bytes;
  };
  REQUIRE(grab(tr_a.policy, "arm0.") == grab(tr_b.policy, "arm0."));
  REQUIRE(grab(tr_a.policy, "arm1.") != grab(tr_b.policy, "arm1."));
}

TEST_CASE("peer state reaches the loss only through interaction") {
  Rng rng(71);
  auto cfg_i = tiny_config(PolicyTag::decoupled_interaction);
  auto cfg_d = tiny_config(PolicyTag::decoupled);
  auto batch = random_batch<float>(cfg_i, 4, rng);
  auto perturbed = batch;
  for (auto& v : perturbed.obs.arms[1].states.data) v += 0.25f;

  for (const auto* cfg : {&cfg_i, &cfg_d}) {
    auto p = make_policy<float>(*cfg, 17);
    jitter_policy(p, 17);
    PolicyFwdCache<float> c1, c2;
    policy_conditions(p, batch.obs, c1);
    policy_conditions(p, perturbed.obs, c2);
    Rng r1(900), r2(900);
    Mat<float> normed = normalize_chunks(batch.chunks[0], p.norm[0],
                                         cfg->action_dim);
    const double l1 = ddim_loss(p.gens[0], normed, c1.arms[0].cond, p.sched,
                                r1, nullptr);
    const double l2 = ddim_loss(p.gens[0], normed, c2.arms[0].cond, p.sched,
                                r2, nullptr);
    if (cfg->tag == PolicyTag::decoupled_interaction) {
      REQUIRE(l1 != l2);
    } else {
      REQUIRE(l1 == l2);
    }
  }
}

TEST_CASE("non-finite batches skip the optimizer step") {
  auto cfg = tiny_config(PolicyTag::decoupled);
  auto tr = make_trainer(make_policy<float>(cfg, 19), AdamWConfig{},
                         LrSchedule{0, 100, 1e-3});
  Rng rng(41);
  auto batch = random_batch<float>(cfg, 4, rng);
  batch.chunks[0].at(0, 0) = std::numeric_limits<float>::quiet_NaN();
  auto before = snapshot(tr.policy);
  Rng sr(7);
  auto m = train_step(tr, batch, sr);
  REQUIRE_FALSE(m.applied);
  REQUIRE(tr.skipped == 1);
  REQUIRE(tr.step == 0);
  REQUIRE(snapshot(tr.policy) == before);
}

TEST_CASE("ema tracks applied steps") {
  // The first update's effective decay is min(configured, warmup ramp
  // 1 - 2^-0.75): a low cap binds, a high cap defers to the ramp.
  const double ramp1 = 1.0 - std::pow(2.0, -0.75);
  for (const double decay : {0.25, 0.9999}) {
    auto cfg = tiny_config(PolicyTag::decoupled);
    auto tr = make_trainer(make_policy<float>(cfg, 23), AdamWConfig{},
                           LrSchedule{0, 100, 1e-3}, decay);
    auto init = snapshot(tr.policy);
    REQUIRE(snapshot(tr.ema) == init);
    Rng rng(51);
    auto batch = random_batch<float>(cfg, 4, rng);
    Rng sr(8);
    auto m = train_step(tr, batch, sr);
    REQUIRE(m.applied);

    const double eff = std::min(decay, ramp1);
    // ema = eff * init + (1 - eff) * updated, elementwise.
    auto pr = policy_param_refs(tr.policy);
    auto er = policy_param_refs(tr.ema);
    size_t off = 0;
    std::vector<float> init_vals(init.size() / sizeof(float));
    std::memcpy(init_vals.data(), init.data(), init.size());
    for (size_t t = 0; t < pr.size(); ++t)
      for (size_t j = 0; j < pr[t].n; ++j, ++off) {
        const float want = static_cast<float>(
            eff * static_cast<double>(init_vals[off]) +
            (1.0 - eff) * static_cast<double>(pr[t].data[j]));
        REQUIRE(er[t].data[j] == want);
      }
  }
}

TEST_CASE("training is bitwise reproducible") {
  for (auto tag : {PolicyTag::decoupled_interaction, PolicyTag::integrated}) {
    auto cfg = tiny_config(tag);
    auto tr1 = make_trainer(make_policy<float>(cfg, 29), AdamWConfig{},
                            LrSchedule{2, 50, 1e-3});
    auto tr2 = make_trainer(make_policy<float>(cfg, 29), AdamWConfig{},
                            LrSchedule{2, 50, 1e-3});
    Rng data_rng(61);
    auto batch = random_batch<float>(cfg, 4, data_rng);
    Rng root(99);
    for (int s = 0; s < 5; ++s) {
      Rng sa = root.derive(static_cast<uint64_t>(s));
      Rng sb = root.derive(static_cast<uint64_t>(s));
      train_step(tr1, batch, sa);
      train_step(tr2, batch, sb);
    }
    REQUIRE(snapshot(tr1.policy) == snapshot(tr2.policy));
    REQUIRE(snapshot(tr1.ema) == snapshot(tr2.ema));
  }
}

TEST_CASE("inference shapes, determinism and history checks") {
  for (auto gen : {GenKind::ddim, GenKind::fm}) {
    auto cfg = tiny_config(PolicyTag::decoupled_interaction, gen);
    auto p = make_policy<float>(cfg, 37);
    Rng hr(71);
    auto hist = random_histories<float>(cfg, hr);
    Rng r1(11), r2(11), r3(12);
    auto c1 = infer(p, hist, r1);
    auto c2 = infer(p, hist, r2);
    auto c3 = infer(p, hist, r3);
    REQUIRE(c1.size() == 2);
    for (auto& c : c1) {
      REQUIRE(c.rows == cfg.horizon);
      REQUIRE(c.cols == cfg.action_dim);
      for (auto v : c.data) REQUIRE(std::isfinite(static_cast<double>(v)));
    }
    REQUIRE(c1[0].data == c2[0].data);
    REQUIRE(c1[1].data == c2[1].data);
    REQUIRE(c1[0].data != c3[0].data);

    auto short_hist = hist;
    short_hist[0].clouds.pop_back();
    short_hist[0].states.pop_back();
    Rng r4(11);
    REQUIRE_THROWS_AS(infer(p, short_hist, r4), Error);
  }
}

TEST_CASE("decoupled inference ignores the other arm bitwise") {
  auto cfg = tiny_config(PolicyTag::decoupled);
  auto p = make_policy<float>(cfg, 43);
  jitter_policy(p, 43);
  Rng hr(81);
  auto hist = random_histories<float>(cfg, hr);
  auto other = hist;
  Rng hr2(82);
  auto repl = random_histories<float>(cfg, hr2);
  other[1] = repl[1];

  Rng r1(5), r2(5);
  auto c1 = infer(p, hist, r1);
  auto c2 = infer(p, other, r2);
  REQUIRE(std::memcmp(c1[0].data.data(), c2[0].data.data(),
                      sizeof(float) * c1[0].data.size()) == 0);
  REQUIRE(c1[1].data != c2[1].data);
}

TEST_CASE("muted factors cut the interaction channel") {
  auto cfg = tiny_config(PolicyTag::decoupled_interaction);
  cfg.interaction.use_alpha = false;
  cfg.interaction.alpha_pin = 0.0;
  cfg.interaction.use_beta = false;
  auto p = make_policy<float>(cfg, 47);
  Rng hr(91);
  auto hist = random_histories<float>(cfg, hr);
  auto other = hist;
  Rng hr2(92);
  auto repl = random_histories<float>(cfg, hr2);
  other[1] = repl[1];

  Rng r1(6), r2(6);
  auto c1 = infer(p, hist, r1);
  auto c2 = infer(p, other, r2);
  REQUIRE(std::memcmp(c1[0].data.data(), c2[0].data.data(),
                      sizeof(float) * c1[0].data.size()) == 0);

  // With live factors the same change must reach arm 0.
  auto cfg_live = tiny_config(PolicyTag::decoupled_interaction);
  auto pl = make_policy<float>(cfg_live, 47);
  jitter_policy(pl, 47);
  Rng r3(6), r4(6);
  auto l1 = infer(pl, hist, r3);
  auto l2 = infer(pl, other, r4);
  REQUIRE(l1[0].data != l2[0].data);
}

TEST_CASE("integrated inference splits the joint chunk") {
  auto cfg = tiny_config(PolicyTag::integrated);
  auto p = make_policy<float>(cfg, 53);
  REQUIRE(p.gens[0].chunk_dim == cfg.horizon * cfg.action_dim * cfg.K);
  Rng hr(101);
  auto hist = random_histories<float>(cfg, hr);
  Rng r(13);
  auto chunks = infer(p, hist, r);
  REQUIRE(chunks.size() == 2);
  for (auto& c : chunks) {
    REQUIRE(c.rows == cfg.horizon);
    REQUIRE(c.cols == cfg.action_dim);
  }
}

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "diif/core/mat.hpp"
#include "diif/core/mlp.hpp"
#include "diif/core/optim.hpp"
#include "diif/core/rng.hpp"
#include "diif/encoders.hpp"
#include "diif/generators.hpp"
#include "diif/interaction.hpp"

namespace diif {

enum class PolicyTag { integrated, decoupled, decoupled_interaction };

inline const char* policy_tag_name(PolicyTag t) {
  switch (t) {
    case PolicyTag::integrated: return "integrated";
    case PolicyTag::decoupled: return "decoupled";
    case PolicyTag::decoupled_interaction: return "decoupled-interaction";
  }
  return "?";
}

inline PolicyTag policy_tag_from_name(const std::string& s) {
  if (s == "integrated") return PolicyTag::integrated;
  if (s == "decoupled") return PolicyTag::decoupled;
  if (s == "decoupled-interaction") return PolicyTag::decoupled_interaction;
  fail("unknown policy tag '", s,
       "' (want integrated | decoupled | decoupled-interaction)");
}

/// Everything that fixes a policy's shape. All width knobs are uniform
/// across arms; per-arm action width covers joints plus gripper.
struct PolicyConfig {
  PolicyTag tag = PolicyTag::decoupled_interaction;
  GenKind gen = GenKind::ddim;
  InteractionConfig interaction;

  int K = 2;
  int coord_dim = 2;
  int n_points = 32;
  int n_joints = 3;
  int action_dim = 4;
  int horizon = 8;
  int n_obs_steps = 3;
  int n_action_steps = 6;
  int d_vis = 64;
  int d_state = 32;
  int enc_width = 64;
  int sel_width = 64;
  int gen_width = 128;
  int gen_layers = 4;
  int diffusion_T = 100;
  int num_inference_steps = 10;

  int state_dim() const { return n_joints + 1; }
  int arm_chunk_dim() const { return horizon * action_dim; }
  int joint_chunk_dim() const { return horizon * action_dim * K; }
  bool has_interaction() const {
    return tag == PolicyTag::decoupled_interaction;
  }
  int exchanged_width() const {
    return has_interaction() ? (K - 1) * d_state : 0;
  }
  int base_cond_width() const { return n_obs_steps * (d_vis + d_state); }
  int cond_dim() const {
    return tag == PolicyTag::integrated ? K * base_cond_width()
                                        : base_cond_width() + exchanged_width();
  }
  int n_gens() const { return tag == PolicyTag::integrated ? 1 : K; }

  void validate() const {
    require(K >= 1, "policy: K must be >= 1, got ", K);
    require(!has_interaction() || K >= 2,
            "policy: decoupled-interaction needs K >= 2, got K=", K);
    for (int v : {coord_dim, n_points, n_joints, action_dim, horizon,
                  n_obs_steps, d_vis, d_state, enc_width, sel_width, gen_width,
                  gen_layers, diffusion_T, num_inference_steps})
      require(v >= 1, "policy: non-positive dimension in config");
    require(n_action_steps >= 1 && n_action_steps <= horizon,
            "policy: n_action_steps ", n_action_steps, " outside [1, horizon=",
            horizon, "]");
  }
};

/// Per-coordinate action statistics; chunks are z-scored before the
/// generators see them and undone at inference.
template <class T>
struct NormStats {
  std::vector<T> mean;
  std::vector<T> stddev;

  void validate(int action_dim) const {
    require(static_cast<int>(mean.size()) == action_dim &&
                static_cast<int>(stddev.size()) == action_dim,
            "norm stats: width ", mean.size(), "/", stddev.size(), " != ",
            action_dim);
    for (const auto& s : stddev)
      require(s > T(0) && std::isfinite(static_cast<double>(s)),
              "norm stats: stddev must be positive and finite");
    for (const auto& m : mean)
      require(std::isfinite(static_cast<double>(m)),
              "norm stats: non-finite mean");
  }
};

template <class T>
NormStats<T> unit_stats(int action_dim) {
  NormStats<T> s;
  s.mean.assign(static_cast<size_t>(action_dim), T(0));
  s.stddev.assign(static_cast<size_t>(action_dim), T(1));
  return s;
}

/// chunks: B x (H * A), h-major columns. Applies (x - mean) / stddev.
template <class T>
Mat<T> normalize_chunks(const Mat<T>& chunks, const NormStats<T>& st,
                        int action_dim) {
  st.validate(action_dim);
  require(chunks.cols % action_dim == 0, "normalize: chunk width ",
          chunks.cols, " not a multiple of action dim ", action_dim);
  Mat<T> out(chunks.rows, chunks.cols);
  for (int r = 0; r < chunks.rows; ++r)
    for (int c = 0; c < chunks.cols; ++c) {
      const int a = c % action_dim;
      out.at(r, c) = (chunks.at(r, c) - st.mean[static_cast<size_t>(a)]) /
                     st.stddev[static_cast<size_t>(a)];
    }
  return out;
}

template <class T>
void denormalize_chunk(Mat<T>& chunk, const NormStats<T>& st) {
  st.validate(chunk.cols);
  for (int r = 0; r < chunk.rows; ++r)
    for (int c = 0; c < chunk.cols; ++c)
      chunk.at(r, c) = chunk.at(r, c) * st.stddev[static_cast<size_t>(c)] +
                       st.mean[static_cast<size_t>(c)];
}

template <class T>
struct Policy {
  PolicyConfig cfg;
  std::vector<ObsEncoder<T>> encoders;  // K
  std::vector<GeneratorNet<T>> gens;    // 1 (integrated) or K
  std::vector<Selector<T>> selectors;   // K for selective interaction
  std::vector<Mlp<T>> fusions;          // K for mlp interaction
  NoiseSchedule sched;
  std::vector<NormStats<T>> norm;       // K

  void validate() const {
    cfg.validate();
    require(static_cast<int>(encoders.size()) == cfg.K, "policy: encoder count");
    require(static_cast<int>(gens.size()) == cfg.n_gens(),
            "policy: generator count ", gens.size(), " != ", cfg.n_gens());
    for (const auto& e : encoders) e.validate();
    for (const auto& g : gens) g.validate();
    for (const auto& s : selectors) s.validate();
    for (const auto& f : fusions) f.validate();
    if (cfg.gen == GenKind::ddim) sched.validate();
    require(static_cast<int>(norm.size()) == cfg.K, "policy: norm stats count");
    for (const auto& st : norm) st.validate(cfg.action_dim);
  }
};

/// Deterministic per (config, seed). Selective interaction gets one
/// selector per arm; the mlp variant gets one identity-initialized
/// fusion layer per arm.
template <class T>
Policy<T> make_policy(const PolicyConfig& cfg, uint64_t seed) {
  cfg.validate();
  Policy<T> p;
  p.cfg = cfg;
  Rng rng(seed);
  for (int i = 0; i < cfg.K; ++i)
    p.encoders.push_back(make_obs_encoder<T>(
        cfg.coord_dim, cfg.state_dim(), cfg.d_vis, cfg.d_state, cfg.enc_width,
        rng));
  if (cfg.tag == PolicyTag::integrated) {
    p.gens.push_back(make_generator_net<T>(cfg.joint_chunk_dim(),
                                           cfg.cond_dim(), cfg.gen_width,
                                           cfg.gen_layers, rng));
  } else {
    for (int i = 0; i < cfg.K; ++i)
      p.gens.push_back(make_generator_net<T>(cfg.arm_chunk_dim(),
                                             cfg.cond_dim(), cfg.gen_width,
                                             cfg.gen_layers, rng));
  }
  if (cfg.has_interaction()) {
    if (cfg.interaction.variant == InteractionVariant::selective)
      for (int i = 0; i < cfg.K; ++i)
        p.selectors.push_back(make_selector<T>(cfg.coord_dim, cfg.state_dim(),
                                               cfg.d_state, cfg.sel_width, rng));
    if (cfg.interaction.variant == InteractionVariant::mlp)
      for (int i = 0; i < cfg.K; ++i)
        p.fusions.push_back(make_fusion<T>(cfg.d_state));
  }
  p.sched = make_squared_cosine_schedule(cfg.diffusion_T);
  for (int i = 0; i < cfg.K; ++i) p.norm.push_back(unit_stats<T>(cfg.action_dim));
  p.validate();
  return p;
}

template <class T, class F>
void visit_policy(Policy<T>& p, F&& fn) {
  for (size_t i = 0; i < p.encoders.size(); ++i)
    visit_obs_encoder(p.encoders[i], "arm" + std::to_string(i) + ".enc", fn);
  if (p.cfg.tag == PolicyTag::integrated) {
    visit_mlp(p.gens[0].net, "gen", fn);
  } else {
    for (size_t i = 0; i < p.gens.size(); ++i)
      visit_mlp(p.gens[i].net, "arm" + std::to_string(i) + ".gen", fn);
  }
  for (size_t i = 0; i < p.selectors.size(); ++i)
    visit_selector(p.selectors[i], "arm" + std::to_string(i) + ".sel", fn);
  for (size_t i = 0; i < p.fusions.size(); ++i)
    visit_mlp(p.fusions[i], "arm" + std::to_string(i) + ".fuse", fn);
}

template <class T>
std::vector<TensorRef<T>> policy_param_refs(Policy<T>& p) {
  std::vector<TensorRef<T>> out;
  visit_policy(p, [&](const std::string& name, T* d, size_t n) {
    out.push_back({name, d, n});
  });
  return out;
}

struct ParamCounts {
  size_t encoders = 0;
  size_t generators = 0;
  size_t selectors = 0;
  size_t fusions = 0;
  size_t total() const { return encoders + generators + selectors + fusions; }
};

template <class T>
ParamCounts count_params(const Policy<T>& p) {
  ParamCounts c;
  for (const auto& e : p.encoders)
    c.encoders += param_count(e.point_net) + param_count(e.state_net);
  for (const auto& g : p.gens) c.generators += param_count(g.net);
  for (const auto& s : p.selectors)
    c.selectors += param_count(s.mod_point) + param_count(s.mod_state) +
                   param_count(s.alpha_head) + param_count(s.beta_head);
  for (const auto& f : p.fusions) c.fusions += param_count(f);
  return c;
}

template <class T>
struct EncGrads {
  Mlp<T> point, state;
};

template <class T>
struct PolicyGrads {
  std::vector<EncGrads<T>> enc;
  std::vector<Mlp<T>> gens;
  std::vector<SelectorGrads<T>> sel;
  std::vector<Mlp<T>> fusions;
};

template <class T>
PolicyGrads<T> make_policy_grads(const Policy<T>& p) {
  PolicyGrads<T> g;
  for (const auto& e : p.encoders)
    g.enc.push_back({make_grads_like(e.point_net), make_grads_like(e.state_net)});
  for (const auto& gen : p.gens) g.gens.push_back(make_grads_like(gen.net));
  for (const auto& s : p.selectors) g.sel.push_back(make_selector_grads(s));
  for (const auto& f : p.fusions) g.fusions.push_back(make_grads_like(f));
  return g;
}

/// Emits the same names in the same order as visit_policy.
template <class T, class F>
void visit_policy_grads(PolicyGrads<T>& g, const PolicyConfig& cfg, F&& fn) {
  for (size_t i = 0; i < g.enc.size(); ++i) {
    const std::string tag = "arm" + std::to_string(i) + ".enc";
    visit_mlp(g.enc[i].point, tag + ".point", fn);
    visit_mlp(g.enc[i].state, tag + ".state", fn);
  }
  if (cfg.tag == PolicyTag::integrated) {
    visit_mlp(g.gens[0], "gen", fn);
  } else {
    for (size_t i = 0; i < g.gens.size(); ++i)
      visit_mlp(g.gens[i], "arm" + std::to_string(i) + ".gen", fn);
  }
  for (size_t i = 0; i < g.sel.size(); ++i)
    visit_selector_grads(g.sel[i], "arm" + std::to_string(i) + ".sel", fn);
  for (size_t i = 0; i < g.fusions.size(); ++i)
    visit_mlp(g.fusions[i], "arm" + std::to_string(i) + ".fuse", fn);
}

template <class T>
std::vector<TensorRef<T>> policy_grad_refs(PolicyGrads<T>& g,
                                           const PolicyConfig& cfg) {
  std::vector<TensorRef<T>> out;
  visit_policy_grads(g, cfg, [&](const std::string& name, T* d, size_t n) {
    out.push_back({name, d, n});
  });
  return out;
}

/// One arm's observation block. clouds stacks batch x n_obs_steps
/// groups of n_points rows; states stacks batch x n_obs_steps rows.
template <class T>
struct ArmObs {
  Mat<T> clouds;
  Mat<T> states;
};

template <class T>
struct ObsBatch {
  std::vector<ArmObs<T>> arms;
  int batch = 0;

  void validate(const PolicyConfig& cfg) const {
    require(static_cast<int>(arms.size()) == cfg.K, "batch: arm count ",
            arms.size(), " != K=", cfg.K);
    require(batch >= 1, "batch: empty batch");
    for (const auto& a : arms) {
      require(a.clouds.rows == batch * cfg.n_obs_steps * cfg.n_points &&
                  a.clouds.cols == cfg.coord_dim,
              "batch: cloud block ", a.clouds.rows, "x", a.clouds.cols,
              " does not match batch=", batch, " n_obs=", cfg.n_obs_steps,
              " n_points=", cfg.n_points);
      require(a.states.rows == batch * cfg.n_obs_steps &&
                  a.states.cols == cfg.state_dim(),
              "batch: state block ", a.states.rows, "x", a.states.cols,
              " does not match batch/n_obs/state dims");
    }
  }
};

template <class T>
struct TrainingBatch {
  ObsBatch<T> obs;
  std::vector<Mat<T>> chunks;  // per arm, batch x (H * A), raw action units

  void validate(const PolicyConfig& cfg) const {
    obs.validate(cfg);
    require(static_cast<int>(chunks.size()) == cfg.K, "batch: chunk arm count");
    for (const auto& c : chunks)
      require(c.rows == obs.batch && c.cols == cfg.arm_chunk_dim(),
              "batch: chunk block ", c.rows, "x", c.cols, " != ", obs.batch,
              "x", cfg.arm_chunk_dim());
  }
};

template <class T>
struct ArmFwdCache {
  PointEncCache<T> vis;
  MlpCache<T> state;
  Mat<T> vis_out;    // (B * n_obs) x d_vis
  Mat<T> state_out;  // (B * n_obs) x d_state
  MlpCache<T> peer_state;
  Mat<T> peer_feats;  // B x d_state, from the latest state only
  SelectorCache<T> sel;
  std::vector<MlpCache<T>> fusion;  // one per peer slot
  Mat<T> cond;  // B x cond_dim (decoupled variants)
};

template <class T>
struct PolicyFwdCache {
  std::vector<ArmFwdCache<T>> arms;
  Mat<T> joint_cond;  // integrated only
  int batch = 0;
};

namespace detail {

/// Rows of the latest obs step, one per sample.
template <class T>
Mat<T> gather_last_states(const Mat<T>& states, int batch, int n_obs) {
  Mat<T> out(batch, states.cols);
  for (int b = 0; b < batch; ++b) {
    const T* src = states.row(b * n_obs + (n_obs - 1));
    T* dst = out.row(b);
    for (int c = 0; c < states.cols; ++c) dst[c] = src[c];
  }
  return out;
}

/// Point rows of the latest obs step, batch groups of n_points rows.
template <class T>
Mat<T> gather_last_clouds(const Mat<T>& clouds, int batch, int n_obs,
                          int n_points) {
  Mat<T> out(batch * n_points, clouds.cols);
  for (int b = 0; b < batch; ++b) {
    const int src0 = (b * n_obs + (n_obs - 1)) * n_points;
    for (int pt = 0; pt < n_points; ++pt) {
      const T* src = clouds.row(src0 + pt);
      T* dst = out.row(b * n_points + pt);
      for (int c = 0; c < clouds.cols; ++c) dst[c] = src[c];
    }
  }
  return out;
}

template <class T>
T effective_alpha(const PolicyConfig& cfg, const ArmFwdCache<T>& c, int b) {
  return cfg.interaction.use_alpha
             ? c.sel.alpha_out.at(b, 0)
             : static_cast<T>(cfg.interaction.alpha_pin);
}

}  // namespace detail

/// Runs every condition-side forward pass and assembles per-arm (or the
/// joint) condition rows: visual history, state history, then modulated
/// peer features in ascending peer order.
template <class T>
void policy_conditions(const Policy<T>& p, const ObsBatch<T>& obs,
                       PolicyFwdCache<T>& cache) {
  const auto& cfg = p.cfg;
  obs.validate(cfg);
  const int B = obs.batch;
  cache.batch = B;
  cache.arms.assign(static_cast<size_t>(cfg.K), {});
  for (int i = 0; i < cfg.K; ++i) {
    auto& c = cache.arms[static_cast<size_t>(i)];
    c.vis_out = encode_points_batch(p.encoders[static_cast<size_t>(i)].point_net,
                                    obs.arms[static_cast<size_t>(i)].clouds,
                                    cfg.n_points, &c.vis);
    c.state_out =
        mlp_forward_batch(p.encoders[static_cast<size_t>(i)].state_net,
                          obs.arms[static_cast<size_t>(i)].states, &c.state);
  }

  if (cfg.has_interaction()) {
    for (int j = 0; j < cfg.K; ++j) {
      auto& c = cache.arms[static_cast<size_t>(j)];
      Mat<T> last =
          detail::gather_last_states(obs.arms[static_cast<size_t>(j)].states,
                                     B, cfg.n_obs_steps);
      c.peer_feats =
          mlp_forward_batch(p.encoders[static_cast<size_t>(j)].state_net, last,
                            &c.peer_state);
    }
    if (cfg.interaction.variant == InteractionVariant::selective) {
      for (int i = 0; i < cfg.K; ++i) {
        auto& c = cache.arms[static_cast<size_t>(i)];
        Mat<T> last_clouds = detail::gather_last_clouds(
            obs.arms[static_cast<size_t>(i)].clouds, B, cfg.n_obs_steps,
            cfg.n_points);
        Mat<T> last_states = detail::gather_last_states(
            obs.arms[static_cast<size_t>(i)].states, B, cfg.n_obs_steps);
        selector_forward_batch(p.selectors[static_cast<size_t>(i)], last_clouds,
                               cfg.n_points, last_states, c.sel);
      }
    }
  }

  const int vis_w = cfg.n_obs_steps * cfg.d_vis;
  const int state_w = cfg.n_obs_steps * cfg.d_state;
  auto fill_base = [&](const ArmFwdCache<T>& c, Mat<T>& dst, int col0) {
    for (int b = 0; b < B; ++b) {
      T* row = dst.row(b);
      for (int s = 0; s < cfg.n_obs_steps; ++s) {
        const T* v = c.vis_out.row(b * cfg.n_obs_steps + s);
        for (int k = 0; k < cfg.d_vis; ++k) row[col0 + s * cfg.d_vis + k] = v[k];
        const T* st = c.state_out.row(b * cfg.n_obs_steps + s);
        for (int k = 0; k < cfg.d_state; ++k)
          row[col0 + vis_w + s * cfg.d_state + k] = st[k];
      }
    }
  };

  if (cfg.tag == PolicyTag::integrated) {
    cache.joint_cond = Mat<T>(B, cfg.cond_dim());
    for (int i = 0; i < cfg.K; ++i)
      fill_base(cache.arms[static_cast<size_t>(i)], cache.joint_cond,
                i * cfg.base_cond_width());
    return;
  }

  for (int i = 0; i < cfg.K; ++i) {
    auto& c = cache.arms[static_cast<size_t>(i)];
    c.cond = Mat<T>(B, cfg.cond_dim());
    fill_base(c, c.cond, 0);
    if (!cfg.has_interaction()) continue;
    c.fusion.assign(static_cast<size_t>(cfg.K - 1), {});
    int slot = 0;
    for (int j = 0; j < cfg.K; ++j) {
      if (j == i) continue;
      const Mat<T>& fj = cache.arms[static_cast<size_t>(j)].peer_feats;
      const int col0 = vis_w + state_w + slot * cfg.d_state;
      switch (cfg.interaction.variant) {
        case InteractionVariant::concat:
          for (int b = 0; b < B; ++b)
            for (int k = 0; k < cfg.d_state; ++k)
              c.cond.at(b, col0 + k) = fj.at(b, k);
          break;
        case InteractionVariant::mlp: {
          Mat<T> out = mlp_forward_batch(p.fusions[static_cast<size_t>(i)], fj,
                                         &c.fusion[static_cast<size_t>(slot)]);
          for (int b = 0; b < B; ++b)
            for (int k = 0; k < cfg.d_state; ++k)
              c.cond.at(b, col0 + k) = out.at(b, k);
          break;
        }
        case InteractionVariant::selective:
          for (int b = 0; b < B; ++b) {
            const T alpha = detail::effective_alpha(cfg, c, b);
            for (int k = 0; k < cfg.d_state; ++k) {
              const T beta =
                  cfg.interaction.use_beta ? c.sel.beta_out.at(b, k) : T(0);
              c.cond.at(b, col0 + k) = alpha * fj.at(b, k) + beta;
            }
          }
          break;
      }
      ++slot;
    }
  }
}

/// Backward through everything policy_conditions built. dconds holds
/// one B x cond_dim block per generator (a single joint block for the
/// integrated arch).
template <class T>
void policy_conditions_backward(const Policy<T>& p, const ObsBatch<T>& obs,
                                const PolicyFwdCache<T>& cache,
                                const std::vector<Mat<T>>& dconds,
                                PolicyGrads<T>& grads) {
  const auto& cfg = p.cfg;
  const int B = cache.batch;
  const int vis_w = cfg.n_obs_steps * cfg.d_vis;
  const int state_w = cfg.n_obs_steps * cfg.d_state;

  auto base_backward = [&](int arm, const Mat<T>& dcond, int col0) {
    const auto& c = cache.arms[static_cast<size_t>(arm)];
    Mat<T> dvis(B * cfg.n_obs_steps, cfg.d_vis);
    Mat<T> dstate(B * cfg.n_obs_steps, cfg.d_state);
    for (int b = 0; b < B; ++b) {
      const T* row = dcond.row(b);
      for (int s = 0; s < cfg.n_obs_steps; ++s) {
        T* dv = dvis.row(b * cfg.n_obs_steps + s);
        for (int k = 0; k < cfg.d_vis; ++k) dv[k] = row[col0 + s * cfg.d_vis + k];
        T* ds = dstate.row(b * cfg.n_obs_steps + s);
        for (int k = 0; k < cfg.d_state; ++k)
          ds[k] = row[col0 + vis_w + s * cfg.d_state + k];
      }
    }
    encode_points_backward(p.encoders[static_cast<size_t>(arm)].point_net,
                           c.vis, dvis, grads.enc[static_cast<size_t>(arm)].point);
    mlp_backward_batch(p.encoders[static_cast<size_t>(arm)].state_net, c.state,
                       dstate, grads.enc[static_cast<size_t>(arm)].state);
  };

  if (cfg.tag == PolicyTag::integrated) {
    require(dconds.size() == 1, "cond backward: want one joint block");
    for (int i = 0; i < cfg.K; ++i)
      base_backward(i, dconds[0], i * cfg.base_cond_width());
    return;
  }

  require(static_cast<int>(dconds.size()) == cfg.K,
          "cond backward: want K blocks");
  std::vector<Mat<T>> dpeer;  // d loss / d peer_feats, per source arm
  if (cfg.has_interaction())
    for (int j = 0; j < cfg.K; ++j) dpeer.emplace_back(B, cfg.d_state);

  for (int i = 0; i < cfg.K; ++i) {
    base_backward(i, dconds[static_cast<size_t>(i)], 0);
    if (!cfg.has_interaction()) continue;
    const auto& c = cache.arms[static_cast<size_t>(i)];
    Mat<T> dalpha, dbeta;
    if (cfg.interaction.variant == InteractionVariant::selective) {
      if (cfg.interaction.use_alpha) dalpha = Mat<T>(B, 1);
      if (cfg.interaction.use_beta) dbeta = Mat<T>(B, cfg.d_state);
    }
    int slot = 0;
    for (int j = 0; j < cfg.K; ++j) {
      if (j == i) continue;
      const int col0 = vis_w + state_w + slot * cfg.d_state;
      Mat<T> dmod(B, cfg.d_state);
      for (int b = 0; b < B; ++b)
        for (int k = 0; k < cfg.d_state; ++k)
          dmod.at(b, k) = dconds[static_cast<size_t>(i)].at(b, col0 + k);
      switch (cfg.interaction.variant) {
        case InteractionVariant::concat:
          if (!cfg.interaction.detach_exchange)
            for (size_t q = 0; q < dmod.data.size(); ++q)
              dpeer[static_cast<size_t>(j)].data[q] += dmod.data[q];
          break;
        case InteractionVariant::mlp: {
          Mat<T> din = mlp_backward_batch(
              p.fusions[static_cast<size_t>(i)],
              c.fusion[static_cast<size_t>(slot)], dmod,
              grads.fusions[static_cast<size_t>(i)]);
          if (!cfg.interaction.detach_exchange)
            for (size_t q = 0; q < din.data.size(); ++q)
              dpeer[static_cast<size_t>(j)].data[q] += din.data[q];
          break;
        }
        case InteractionVariant::selective: {
          const Mat<T>& fj = cache.arms[static_cast<size_t>(j)].peer_feats;
          for (int b = 0; b < B; ++b) {
            const T alpha = detail::effective_alpha(cfg, c, b);
            for (int k = 0; k < cfg.d_state; ++k) {
              const T d = dmod.at(b, k);
              if (cfg.interaction.use_alpha) dalpha.at(b, 0) += d * fj.at(b, k);
              if (cfg.interaction.use_beta) dbeta.at(b, k) += d;
              if (!cfg.interaction.detach_exchange)
                dpeer[static_cast<size_t>(j)].at(b, k) += alpha * d;
            }
          }
          break;
        }
      }
      ++slot;
    }
    if (cfg.interaction.variant == InteractionVariant::selective)
      selector_backward_batch(p.selectors[static_cast<size_t>(i)], c.sel,
                              dalpha, dbeta, grads.sel[static_cast<size_t>(i)]);
  }

  if (cfg.has_interaction())
    for (int j = 0; j < cfg.K; ++j)
      mlp_backward_batch(p.encoders[static_cast<size_t>(j)].state_net,
                         cache.arms[static_cast<size_t>(j)].peer_state,
                         dpeer[static_cast<size_t>(j)],
                         grads.enc[static_cast<size_t>(j)].state);
}

/// Per-arm chunks (B x H*A each) interleaved into B x (H*K*A): each
/// horizon step holds all arms' actions side by side.
template <class T>
Mat<T> join_chunks(const std::vector<Mat<T>>& chunks, int horizon,
                   int action_dim) {
  const int K = static_cast<int>(chunks.size());
  require(K >= 1, "join_chunks: no arms");
  const int B = chunks[0].rows;
  Mat<T> out(B, horizon * K * action_dim);
  for (int i = 0; i < K; ++i) {
    require(chunks[static_cast<size_t>(i)].rows == B &&
                chunks[static_cast<size_t>(i)].cols == horizon * action_dim,
            "join_chunks: arm ", i, " block shape");
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < horizon; ++h)
        for (int a = 0; a < action_dim; ++a)
          out.at(b, h * K * action_dim + i * action_dim + a) =
              chunks[static_cast<size_t>(i)].at(b, h * action_dim + a);
  }
  return out;
}

/// One arm's H x A block out of a joint chunk row.
template <class T>
Mat<T> split_chunk_row(const T* row, int arm, int K, int horizon,
                       int action_dim) {
  Mat<T> out(horizon, action_dim);
  for (int h = 0; h < horizon; ++h)
    for (int a = 0; a < action_dim; ++a)
      out.at(h, a) = row[h * K * action_dim + arm * action_dim + a];
  return out;
}

template <class T>
struct PolicyTrainer {
  Policy<T> policy;
  Policy<T> ema;
  AdamW<T> opt;
  LrSchedule lr;
  double ema_decay = kDefaultEmaDecay;
  long long step = 0;
  long long skipped = 0;
};

template <class T>
PolicyTrainer<T> make_trainer(Policy<T> policy, const AdamWConfig& opt,
                              const LrSchedule& lr,
                              double ema_decay = kDefaultEmaDecay) {
  PolicyTrainer<T> tr{std::move(policy), {}, AdamW<T>(opt), lr, ema_decay, 0, 0};
  tr.ema = tr.policy;
  return tr;
}

struct TrainMetrics {
  std::vector<double> per_arm;
  double total = 0.0;
  double lr = 0.0;
  bool applied = false;
};

/// One optimizer step: total loss is the unweighted sum of per-arm
/// generator losses (one joint loss for the integrated arch). Non-finite
/// losses or gradients skip the whole update and bump the skip counter.
template <class T>
TrainMetrics train_step(PolicyTrainer<T>& tr, const TrainingBatch<T>& batch,
                        Rng& rng) {
  Policy<T>& p = tr.policy;
  const auto& cfg = p.cfg;
  batch.validate(cfg);
  const int B = batch.obs.batch;

  PolicyFwdCache<T> cache;
  policy_conditions(p, batch.obs, cache);
  PolicyGrads<T> grads = make_policy_grads(p);

  TrainMetrics m;
  std::vector<Mat<T>> dconds;
  if (cfg.tag == PolicyTag::integrated) {
    std::vector<Mat<T>> normed;
    for (int i = 0; i < cfg.K; ++i)
      normed.push_back(normalize_chunks(batch.chunks[static_cast<size_t>(i)],
                                        p.norm[static_cast<size_t>(i)],
                                        cfg.action_dim));
    Mat<T> joint = join_chunks(normed, cfg.horizon, cfg.action_dim);
    GenGrads<T> gg = make_gen_grads(p.gens[0], B);
    Rng r = rng.derive(0);
    const double loss =
        cfg.gen == GenKind::ddim
            ? ddim_loss(p.gens[0], joint, cache.joint_cond, p.sched, r, &gg)
            : fm_loss(p.gens[0], joint, cache.joint_cond, r, &gg);
    m.per_arm.push_back(loss);
    grads.gens[0] = std::move(gg.net);
    dconds.push_back(std::move(gg.dcond));
  } else {
    for (int i = 0; i < cfg.K; ++i) {
      Mat<T> normed = normalize_chunks(batch.chunks[static_cast<size_t>(i)],
                                       p.norm[static_cast<size_t>(i)],
                                       cfg.action_dim);
      GenGrads<T> gg = make_gen_grads(p.gens[static_cast<size_t>(i)], B);
      Rng r = rng.derive(static_cast<uint64_t>(i));
      const double loss =
          cfg.gen == GenKind::ddim
              ? ddim_loss(p.gens[static_cast<size_t>(i)], normed,
                          cache.arms[static_cast<size_t>(i)].cond, p.sched, r,
                          &gg)
              : fm_loss(p.gens[static_cast<size_t>(i)], normed,
                        cache.arms[static_cast<size_t>(i)].cond, r, &gg);
      m.per_arm.push_back(loss);
      grads.gens[static_cast<size_t>(i)] = std::move(gg.net);
      dconds.push_back(std::move(gg.dcond));
    }
  }
  for (double l : m.per_arm) m.total += l;

  if (!std::isfinite(m.total)) {
    ++tr.skipped;
    return m;
  }

  policy_conditions_backward(p, batch.obs, cache, dconds, grads);

  auto params = policy_param_refs(p);
  auto grefs = policy_grad_refs(grads, cfg);
  m.lr = lr_at(tr.step, tr.lr);
  m.applied = tr.opt.step(params, grefs, m.lr);
  if (!m.applied) {
    ++tr.skipped;
    return m;
  }
  ++tr.step;
  auto ema_refs = policy_param_refs(tr.ema);
  // Warmup ramp: a short-horizon average early on, widening toward the
  // configured decay, so the EMA sheds its random initialization long
  // before 1/(1-decay) steps have elapsed.
  const double ramp =
      1.0 - std::pow(1.0 + static_cast<double>(tr.step), -0.75);
  ema_update(ema_refs, params, std::min(tr.ema_decay, ramp));
  return m;
}

/// One arm's rolling observation window, oldest first.
template <class T>
struct ObsHistory {
  std::vector<Mat<T>> clouds;       // n_obs_steps clouds, n_points x coord
  std::vector<ArmState<T>> states;  // n_obs_steps entries
};

template <class T>
ObsBatch<T> pack_histories(const PolicyConfig& cfg,
                           const std::vector<ObsHistory<T>>& hist) {
  require(static_cast<int>(hist.size()) == cfg.K, "infer: arm count ",
          hist.size(), " != K=", cfg.K);
  ObsBatch<T> obs;
  obs.batch = 1;
  for (int i = 0; i < cfg.K; ++i) {
    const auto& h = hist[static_cast<size_t>(i)];
    require(static_cast<int>(h.clouds.size()) == cfg.n_obs_steps &&
                static_cast<int>(h.states.size()) == cfg.n_obs_steps,
            "infer: arm ", i, " history length ", h.clouds.size(), "/",
            h.states.size(), " != n_obs_steps=", cfg.n_obs_steps);
    ArmObs<T> a;
    a.clouds = Mat<T>(cfg.n_obs_steps * cfg.n_points, cfg.coord_dim);
    a.states = Mat<T>(cfg.n_obs_steps, cfg.state_dim());
    for (int s = 0; s < cfg.n_obs_steps; ++s) {
      const Mat<T>& cl = h.clouds[static_cast<size_t>(s)];
      require(cl.rows == cfg.n_points && cl.cols == cfg.coord_dim,
              "infer: arm ", i, " cloud ", s, " shape ", cl.rows, "x", cl.cols);
      for (int pt = 0; pt < cfg.n_points; ++pt)
        for (int c = 0; c < cfg.coord_dim; ++c)
          a.clouds.at(s * cfg.n_points + pt, c) = cl.at(pt, c);
      const auto sv = h.states[static_cast<size_t>(s)].to_vec();
      require(static_cast<int>(sv.size()) == cfg.state_dim(), "infer: arm ", i,
              " state width ", sv.size());
      for (int c = 0; c < cfg.state_dim(); ++c) a.states.at(s, c) = sv[static_cast<size_t>(c)];
    }
    obs.arms.push_back(std::move(a));
  }
  return obs;
}

/// Samples one action chunk per arm (H x A rows, raw action units).
/// Callers pass the EMA policy for evaluation.
template <class T>
std::vector<Mat<T>> infer(const Policy<T>& p,
                          const std::vector<ObsHistory<T>>& hist, Rng& rng) {
  const auto& cfg = p.cfg;
  ObsBatch<T> obs = pack_histories(cfg, hist);
  PolicyFwdCache<T> cache;
  policy_conditions(p, obs, cache);

  std::vector<Mat<T>> out;
  if (cfg.tag == PolicyTag::integrated) {
    Rng r = rng.derive(0);
    Mat<T> joint =
        cfg.gen == GenKind::ddim
            ? ddim_sample(p.gens[0], cache.joint_cond, cfg.num_inference_steps,
                          p.sched, r)
            : fm_sample(p.gens[0], cache.joint_cond, cfg.num_inference_steps, r);
    for (int i = 0; i < cfg.K; ++i) {
      Mat<T> chunk = split_chunk_row(joint.row(0), i, cfg.K, cfg.horizon,
                                     cfg.action_dim);
      denormalize_chunk(chunk, p.norm[static_cast<size_t>(i)]);
      out.push_back(std::move(chunk));
    }
    return out;
  }

  for (int i = 0; i < cfg.K; ++i) {
    Rng r = rng.derive(static_cast<uint64_t>(i));
    const Mat<T>& cond = cache.arms[static_cast<size_t>(i)].cond;
    Mat<T> flat = cfg.gen == GenKind::ddim
                      ? ddim_sample(p.gens[static_cast<size_t>(i)], cond,
                                    cfg.num_inference_steps, p.sched, r)
                      : fm_sample(p.gens[static_cast<size_t>(i)], cond,
                                  cfg.num_inference_steps, r);
    Mat<T> chunk(cfg.horizon, cfg.action_dim);
    for (int h = 0; h < cfg.horizon; ++h)
      for (int a = 0; a < cfg.action_dim; ++a)
        chunk.at(h, a) = flat.at(0, h * cfg.action_dim + a);
    denormalize_chunk(chunk, p.norm[static_cast<size_t>(i)]);
    out.push_back(std::move(chunk));
  }
  return out;
}

}  // namespace diif

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "diif/core/mat.hpp"
#include "diif/core/mlp.hpp"
#include "diif/encoders.hpp"

namespace diif {

enum class InteractionVariant { selective, concat, mlp };

inline const char* variant_name(InteractionVariant v) {
  switch (v) {
    case InteractionVariant::selective: return "selective";
    case InteractionVariant::concat: return "concat";
    case InteractionVariant::mlp: return "mlp";
  }
  return "?";
}

inline InteractionVariant variant_from_name(const std::string& s) {
  if (s == "selective") return InteractionVariant::selective;
  if (s == "concat") return InteractionVariant::concat;
  if (s == "mlp") return InteractionVariant::mlp;
  fail("unknown interaction variant '", s, "' (want selective | concat | mlp)");
}

/// How exchanged features are produced and which factors are live.
/// use_alpha=false pins the scale at alpha_pin (1 for the ablation rows,
/// 0 to mute peers entirely); use_beta=false pins the bias at 0.
/// detach_exchange stops gradients from flowing into the peer's state
/// encoder.
struct InteractionConfig {
  InteractionVariant variant = InteractionVariant::selective;
  bool use_alpha = true;
  bool use_beta = true;
  double alpha_pin = 1.0;
  bool detach_exchange = false;
};

template <class T>
struct ModulationFactors {
  T alpha = T(1);
  std::vector<T> beta;
};

/// Per-arm selector: own-input modulation encoders feeding a sigmoid
/// scale head and a linear bias head. Heads end in zero-initialized
/// layers so training starts at alpha=0.5, beta=0.
template <class T>
struct Selector {
  Mlp<T> mod_point;   // coord_dim -> d_mod_vis, per point + max pool
  Mlp<T> mod_state;   // state_dim -> d_mod_state
  Mlp<T> alpha_head;  // (d_mod_vis + d_mod_state) -> 1, sigmoid
  Mlp<T> beta_head;   // (d_mod_vis + d_mod_state) -> d_state, linear

  int coord_dim() const { return mod_point.in_dim(); }
  int state_dim() const { return mod_state.in_dim(); }
  int beta_dim() const { return beta_head.out_dim(); }

  void validate() const {
    mod_point.validate();
    mod_state.validate();
    alpha_head.validate();
    beta_head.validate();
    require(alpha_head.out_dim() == 1, "selector: alpha head must be scalar");
    const int joint = mod_point.out_dim() + mod_state.out_dim();
    require(alpha_head.in_dim() == joint && beta_head.in_dim() == joint,
            "selector: head input width ", alpha_head.in_dim(), "/",
            beta_head.in_dim(), " != encoder outputs ", joint);
  }
};

template <class T>
Selector<T> make_selector(int coord_dim, int state_dim, int d_state, int width,
                          Rng& rng) {
  Selector<T> s;
  s.mod_point = make_mlp<T>(coord_dim, {width}, width / 2, Act::relu, rng);
  s.mod_state = make_mlp<T>(state_dim, {width}, width / 2, Act::relu, rng);
  const int joint = width;
  s.alpha_head = make_mlp<T>(joint, {width}, 1, Act::sigmoid, rng);
  s.alpha_head.layers.back() = make_zero_layer<T>(width, 1, Act::sigmoid);
  s.beta_head = make_mlp<T>(joint, {width}, d_state, Act::identity, rng);
  s.beta_head.layers.back() = make_zero_layer<T>(width, d_state, Act::identity);
  return s;
}

template <class T, class F>
void visit_selector(Selector<T>& s, const std::string& prefix, F&& fn) {
  visit_mlp(s.mod_point, prefix + ".mod_point", fn);
  visit_mlp(s.mod_state, prefix + ".mod_state", fn);
  visit_mlp(s.alpha_head, prefix + ".alpha", fn);
  visit_mlp(s.beta_head, prefix + ".beta", fn);
}

template <class T>
struct SelectorCache {
  PointEncCache<T> vis;
  MlpCache<T> state;
  MlpCache<T> alpha;
  MlpCache<T> beta;
  Mat<T> joint;      // B x (d_mod_vis + d_mod_state)
  Mat<T> alpha_out;  // B x 1
  Mat<T> beta_out;   // B x d_state
};

/// clouds holds B groups of n_points rows; states is B x state_dim.
template <class T>
void selector_forward_batch(const Selector<T>& s, const Mat<T>& clouds,
                            int n_points, const Mat<T>& states,
                            SelectorCache<T>& cache) {
  Mat<T> vis = encode_points_batch(s.mod_point, clouds, n_points, &cache.vis);
  Mat<T> st = mlp_forward_batch(s.mod_state, states, &cache.state);
  require(vis.rows == st.rows, "selector: cloud/state batch mismatch ",
          vis.rows, " vs ", st.rows);
  cache.joint = Mat<T>(vis.rows, vis.cols + st.cols);
  for (int r = 0; r < vis.rows; ++r) {
    T* dst = cache.joint.row(r);
    const T* a = vis.row(r);
    for (int c = 0; c < vis.cols; ++c) dst[c] = a[c];
    const T* b = st.row(r);
    for (int c = 0; c < st.cols; ++c) dst[vis.cols + c] = b[c];
  }
  cache.alpha_out = mlp_forward_batch(s.alpha_head, cache.joint, &cache.alpha);
  // The sigmoid saturates to exactly 0 or 1 in floating point; keep the
  // gate strictly inside the open interval.
  const T lo = static_cast<T>(1e-7), hi = T(1) - static_cast<T>(1e-7);
  for (auto& a : cache.alpha_out.data) a = std::min(std::max(a, lo), hi);
  cache.beta_out = mlp_forward_batch(s.beta_head, cache.joint, &cache.beta);
}

template <class T>
struct SelectorGrads {
  Mlp<T> mod_point, mod_state, alpha_head, beta_head;
};

template <class T>
SelectorGrads<T> make_selector_grads(const Selector<T>& s) {
  return {make_grads_like(s.mod_point), make_grads_like(s.mod_state),
          make_grads_like(s.alpha_head), make_grads_like(s.beta_head)};
}

template <class T, class F>
void visit_selector_grads(SelectorGrads<T>& g, const std::string& prefix, F&& fn) {
  visit_mlp(g.mod_point, prefix + ".mod_point", fn);
  visit_mlp(g.mod_state, prefix + ".mod_state", fn);
  visit_mlp(g.alpha_head, prefix + ".alpha", fn);
  visit_mlp(g.beta_head, prefix + ".beta", fn);
}

template <class T>
void selector_backward_batch(const Selector<T>& s, const SelectorCache<T>& cache,
                             const Mat<T>& dalpha, const Mat<T>& dbeta,
                             SelectorGrads<T>& grads) {
  Mat<T> djoint(cache.joint.rows, cache.joint.cols);
  if (dalpha.rows > 0) {
    Mat<T> d = mlp_backward_batch(s.alpha_head, cache.alpha, dalpha, grads.alpha_head);
    for (size_t i = 0; i < djoint.data.size(); ++i) djoint.data[i] += d.data[i];
  }
  if (dbeta.rows > 0) {
    Mat<T> d = mlp_backward_batch(s.beta_head, cache.beta, dbeta, grads.beta_head);
    for (size_t i = 0; i < djoint.data.size(); ++i) djoint.data[i] += d.data[i];
  }
  const int dv = s.mod_point.out_dim();
  const int ds = s.mod_state.out_dim();
  Mat<T> dvis(djoint.rows, dv), dst(djoint.rows, ds);
  for (int r = 0; r < djoint.rows; ++r) {
    const T* src = djoint.row(r);
    T* a = dvis.row(r);
    for (int c = 0; c < dv; ++c) a[c] = src[c];
    T* b = dst.row(r);
    for (int c = 0; c < ds; ++c) b[c] = src[dv + c];
  }
  encode_points_backward(s.mod_point, cache.vis, dvis, grads.mod_point);
  mlp_backward_batch(s.mod_state, cache.state, dst, grads.mod_state);
}

/// Factors for one observation; alpha comes out of the sigmoid head so
/// it sits strictly inside (0,1).
template <class T>
ModulationFactors<T> select_factors(const Selector<T>& s, const Mat<T>& cloud,
                                    const ArmState<T>& state) {
  s.validate();
  SelectorCache<T> cache;
  Mat<T> states(1, static_cast<int>(state.to_vec().size()));
  states.data = state.to_vec();
  selector_forward_batch(s, cloud, cloud.rows, states, cache);
  ModulationFactors<T> f;
  f.alpha = cache.alpha_out.at(0, 0);
  f.beta = cache.beta_out.data;
  return f;
}

/// F' = alpha * F + beta.
template <class T>
std::vector<T> modulate(const std::vector<T>& f, const ModulationFactors<T>& m) {
  require(f.size() == m.beta.size(), "modulate: feature width ", f.size(),
          " != beta width ", m.beta.size());
  std::vector<T> out(f.size());
  for (size_t i = 0; i < f.size(); ++i) out[i] = m.alpha * f[i] + m.beta[i];
  return out;
}

/// Arm i's own inputs, used to compute its receiving-side factors.
template <class T>
struct OwnInputs {
  const Mat<T>* cloud = nullptr;
  const ArmState<T>* state = nullptr;
};

/// Selective exchange for one sample: arm i receives every peer state
/// feature modulated by factors computed from arm i's own inputs,
/// peers in ascending index order.
template <class T>
std::vector<std::vector<std::vector<T>>> exchange(
    const std::vector<std::vector<T>>& state_feats,
    const std::vector<Selector<T>>& selectors,
    const std::vector<OwnInputs<T>>& own,
    const InteractionConfig& cfg = {}) {
  const size_t K = state_feats.size();
  require(K >= 2, "exchange: need at least 2 arms, got ", K);
  require(selectors.size() == K && own.size() == K,
          "exchange: per-arm sizes disagree");
  std::vector<std::vector<std::vector<T>>> out(K);
  for (size_t i = 0; i < K; ++i) {
    require(own[i].cloud && own[i].state, "exchange: missing inputs for arm ", i);
    ModulationFactors<T> f =
        select_factors(selectors[i], *own[i].cloud, *own[i].state);
    if (!cfg.use_alpha) f.alpha = static_cast<T>(cfg.alpha_pin);
    if (!cfg.use_beta) std::fill(f.beta.begin(), f.beta.end(), T(0));
    for (size_t j = 0; j < K; ++j) {
      if (j == i) continue;
      require(!state_feats[j].empty(), "exchange: missing peer feature ", j);
      out[i].push_back(modulate(state_feats[j], f));
    }
  }
  return out;
}

/// Identity-initialized per-arm fusion layer for the mlp variant.
template <class T>
Mlp<T> make_fusion(int d_state) {
  Mlp<T> m;
  Layer<T> l = make_zero_layer<T>(d_state, d_state, Act::identity);
  for (int i = 0; i < d_state; ++i) l.w.at(i, i) = T(1);
  m.layers.push_back(l);
  return m;
}

/// Appendix baseline dispatch for one receiving arm. peer_feats are in
/// ascending peer order; the returned block keeps that order.
template <class T>
std::vector<std::vector<T>> fuse_variant(
    const InteractionConfig& cfg, const std::vector<std::vector<T>>& peer_feats,
    const Selector<T>* sel, const OwnInputs<T>* own, const Mlp<T>* fusion) {
  std::vector<std::vector<T>> out;
  switch (cfg.variant) {
    case InteractionVariant::concat:
      out = peer_feats;
      return out;
    case InteractionVariant::mlp: {
      require(fusion, "fuse: mlp variant needs fusion params");
      for (const auto& f : peer_feats) out.push_back(mlp_forward(*fusion, f));
      return out;
    }
    case InteractionVariant::selective: {
      require(sel && own && own->cloud && own->state,
              "fuse: selective variant needs selector inputs");
      ModulationFactors<T> fac = select_factors(*sel, *own->cloud, *own->state);
      if (!cfg.use_alpha) fac.alpha = static_cast<T>(cfg.alpha_pin);
      if (!cfg.use_beta) std::fill(fac.beta.begin(), fac.beta.end(), T(0));
      for (const auto& f : peer_feats) out.push_back(modulate(f, fac));
      return out;
    }
  }
  fail("fuse: unknown variant tag");
}

}  // namespace diif

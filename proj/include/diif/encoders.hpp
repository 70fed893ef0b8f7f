// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "diif/core/mat.hpp"
#include "diif/core/mlp.hpp"

namespace diif {

/// Joint angles plus gripper command, flattened for the state encoder.
template <class T>
struct ArmState {
  std::vector<T> joints;
  T gripper = T(0);

  std::vector<T> to_vec() const {
    std::vector<T> v = joints;
    v.push_back(gripper);
    return v;
  }
  static int dim(int n_joints) { return n_joints + 1; }
};

/// Per-arm observation encoders: a shared per-point MLP pooled by
/// coordinate-wise max over the cloud, and a dense state branch.
template <class T>
struct ObsEncoder {
  Mlp<T> point_net;  // coord_dim -> d_vis, applied per point
  Mlp<T> state_net;  // state_dim -> d_state

  int coord_dim() const { return point_net.in_dim(); }
  int d_vis() const { return point_net.out_dim(); }
  int state_dim() const { return state_net.in_dim(); }
  int d_state() const { return state_net.out_dim(); }

  void validate() const {
    point_net.validate();
    state_net.validate();
  }
};

template <class T>
ObsEncoder<T> make_obs_encoder(int coord_dim, int state_dim, int d_vis,
                               int d_state, int width, Rng& rng) {
  ObsEncoder<T> e;
  e.point_net = make_mlp<T>(coord_dim, {width, width}, d_vis, Act::relu, rng);
  e.state_net = make_mlp<T>(state_dim, {width}, d_state, Act::relu, rng);
  return e;
}

template <class T, class F>
void visit_obs_encoder(ObsEncoder<T>& e, const std::string& prefix, F&& fn) {
  visit_mlp(e.point_net, prefix + ".point", fn);
  visit_mlp(e.state_net, prefix + ".state", fn);
}

/// Backward bookkeeping for the pooled point branch.
template <class T>
struct PointEncCache {
  MlpCache<T> mlp;
  std::vector<int> argmax;  // clouds x d_vis, winning flat row per output
  int n_points = 0;
  int n_clouds = 0;
};

/// pts holds consecutive groups of n_points rows, one group per cloud;
/// returns one pooled feature row per cloud. Ties keep the first row so
/// pooling stays deterministic; any permutation yields the same values.
template <class T>
Mat<T> encode_points_batch(const Mlp<T>& point_net, const Mat<T>& pts,
                           int n_points, PointEncCache<T>* cache = nullptr) {
  require(n_points > 0, "encode_points: empty cloud");
  require(pts.rows > 0 && pts.rows % n_points == 0,
          "encode_points: row count ", pts.rows,
          " is not a multiple of cloud size ", n_points);
  for (const auto& v : pts.data)
    require(std::isfinite(static_cast<double>(v)),
            "encode_points: non-finite coordinate");
  const int clouds = pts.rows / n_points;
  Mat<T> per_point =
      mlp_forward_batch(point_net, pts, cache ? &cache->mlp : nullptr);
  const int d = per_point.cols;
  Mat<T> out(clouds, d);
  std::vector<int> argmax(static_cast<size_t>(clouds) * static_cast<size_t>(d));
  for (int c = 0; c < clouds; ++c) {
    const int base = c * n_points;
    for (int j = 0; j < d; ++j) {
      T best = per_point.at(base, j);
      int best_row = base;
      for (int p = 1; p < n_points; ++p) {
        const T v = per_point.at(base + p, j);
        if (v > best) {
          best = v;
          best_row = base + p;
        }
      }
      out.at(c, j) = best;
      argmax[static_cast<size_t>(c) * d + static_cast<size_t>(j)] = best_row;
    }
  }
  if (cache) {
    cache->argmax = std::move(argmax);
    cache->n_points = n_points;
    cache->n_clouds = clouds;
  }
  return out;
}

/// Routes each pooled-output gradient to its winning point row, then
/// backs through the per-point net. Point coordinates are leaves.
template <class T>
void encode_points_backward(const Mlp<T>& point_net,
                            const PointEncCache<T>& cache, const Mat<T>& dout,
                            Mlp<T>& grads) {
  require(dout.rows == cache.n_clouds, "encode_points: stale cache");
  const int d = dout.cols;
  Mat<T> dper(cache.n_clouds * cache.n_points, d);
  for (int c = 0; c < cache.n_clouds; ++c)
    for (int j = 0; j < d; ++j)
      dper.at(cache.argmax[static_cast<size_t>(c) * d + static_cast<size_t>(j)],
              j) += dout.at(c, j);
  mlp_backward_batch(point_net, cache.mlp, dper, grads);
}

/// Single-cloud convenience wrapper.
template <class T>
std::vector<T> encode_points(const Mlp<T>& point_net, const Mat<T>& cloud) {
  require(cloud.rows > 0, "encode_points: empty cloud");
  Mat<T> out = encode_points_batch(point_net, cloud, cloud.rows);
  return out.data;
}

template <class T>
std::vector<T> encode_state(const Mlp<T>& state_net, const ArmState<T>& state) {
  return mlp_forward(state_net, state.to_vec());
}

/// Fixed condition layout: visual features per obs step, then state
/// features per obs step, then exchanged peer features in ascending
/// peer index. Lengths are validated against the first entry of each
/// group.
template <class T>
std::vector<T> build_condition(const std::vector<std::vector<T>>& visual,
                               const std::vector<std::vector<T>>& state,
                               const std::vector<std::vector<T>>& exchanged) {
  require(!visual.empty() && visual.size() == state.size(),
          "build_condition: need equal visual/state step counts, got ",
          visual.size(), " vs ", state.size());
  std::vector<T> out;
  auto append_group = [&](const std::vector<std::vector<T>>& group,
                          const char* tag) {
    if (group.empty()) return;
    const size_t w = group.front().size();
    for (const auto& f : group) {
      require(f.size() == w, "build_condition: ragged ", tag, " widths ",
              f.size(), " vs ", w);
      out.insert(out.end(), f.begin(), f.end());
    }
  };
  append_group(visual, "visual");
  append_group(state, "state");
  append_group(exchanged, "exchanged");
  return out;
}

}  // namespace diif

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "diif/core/mat.hpp"
#include "diif/core/rng.hpp"

namespace diif {

enum class Act { identity, relu, tanh_fn, sigmoid };

inline const char* act_name(Act a) {
  switch (a) {
    case Act::identity: return "identity";
    case Act::relu: return "relu";
    case Act::tanh_fn: return "tanh";
    case Act::sigmoid: return "sigmoid";
  }
  return "?";
}

inline Act act_from_name(const std::string& s) {
  if (s == "identity") return Act::identity;
  if (s == "relu") return Act::relu;
  if (s == "tanh") return Act::tanh_fn;
  if (s == "sigmoid") return Act::sigmoid;
  fail("unknown activation tag '", s, "'");
}

/// One dense layer: y = act(W x + b), optionally plus a skip connection
/// (y += x) when in and out widths match.
template <class T>
struct Layer {
  Mat<T> w;           // out x in
  std::vector<T> b;   // out
  Act act = Act::identity;
  bool residual = false;

  int in_dim() const { return w.cols; }
  int out_dim() const { return w.rows; }
};

/// Plain dense network. Gradients are hand-derived in mlp_backward and
/// verified against finite differences in the test suite.
template <class T>
struct Mlp {
  std::vector<Layer<T>> layers;

  int in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  int out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

  void validate() const {
    require(!layers.empty(), "mlp: no layers");
    for (size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      require(static_cast<int>(l.b.size()) == l.out_dim(),
              "mlp: layer ", i, " bias size ", l.b.size(), " != out dim ",
              l.out_dim());
      if (i > 0)
        require(l.in_dim() == layers[i - 1].out_dim(), "mlp: layer ", i,
                " in dim ", l.in_dim(), " != previous out dim ",
                layers[i - 1].out_dim());
      if (l.residual)
        require(l.in_dim() == l.out_dim(), "mlp: residual layer ", i,
                " needs equal in/out dims, got ", l.in_dim(), " vs ",
                l.out_dim());
      for (const auto& v : l.w.data)
        require(std::isfinite(static_cast<double>(v)), "mlp: non-finite weight");
      for (const auto& v : l.b)
        require(std::isfinite(static_cast<double>(v)), "mlp: non-finite bias");
    }
  }
};

/// He-uniform weights, zero biases.
template <class T>
Layer<T> make_layer(int in, int out, Act act, Rng& rng, bool residual = false) {
  Layer<T> l;
  l.w = Mat<T>(out, in);
  const T limit = static_cast<T>(std::sqrt(6.0 / in));
  rng.fill_uniform(l.w, -limit, limit);
  l.b.assign(out, T(0));
  l.act = act;
  l.residual = residual;
  return l;
}

template <class T>
Layer<T> make_zero_layer(int in, int out, Act act) {
  Layer<T> l;
  l.w = Mat<T>(out, in);
  l.b.assign(out, T(0));
  l.act = act;
  return l;
}

/// in -> widths... -> out, relu hidden layers, configurable output act.
template <class T>
Mlp<T> make_mlp(int in, const std::vector<int>& hidden, int out, Act out_act,
                Rng& rng) {
  Mlp<T> m;
  int prev = in;
  for (int w : hidden) {
    m.layers.push_back(make_layer<T>(prev, w, Act::relu, rng));
    prev = w;
  }
  m.layers.push_back(make_layer<T>(prev, out, out_act, rng));
  return m;
}

/// Generator-shaped net: input projection, residual relu trunk, linear
/// readout. hidden_layers counts the relu layers (first one projects).
template <class T>
Mlp<T> make_residual_mlp(int in, int width, int hidden_layers, int out,
                         Rng& rng) {
  require(hidden_layers >= 1, "residual mlp needs >= 1 hidden layer");
  Mlp<T> m;
  m.layers.push_back(make_layer<T>(in, width, Act::relu, rng));
  for (int i = 1; i < hidden_layers; ++i)
    m.layers.push_back(make_layer<T>(width, width, Act::relu, rng, true));
  m.layers.push_back(make_layer<T>(width, out, Act::identity, rng));
  return m;
}

template <class T>
void apply_act(Mat<T>& m, Act act) {
  switch (act) {
    case Act::identity:
      return;
    case Act::relu:
      for (auto& v : m.data) v = v > T(0) ? v : T(0);
      return;
    case Act::tanh_fn:
      for (auto& v : m.data) v = std::tanh(v);
      return;
    case Act::sigmoid:
      for (auto& v : m.data) v = T(1) / (T(1) + std::exp(-v));
      return;
  }
}

/// d act / d preact expressed through the activated value.
template <class T>
T act_grad_from_output(T a, Act act) {
  switch (act) {
    case Act::identity: return T(1);
    case Act::relu: return a > T(0) ? T(1) : T(0);
    case Act::tanh_fn: return T(1) - a * a;
    case Act::sigmoid: return a * (T(1) - a);
  }
  return T(1);
}

/// Everything mlp_backward needs: layer inputs and pre-skip activations.
template <class T>
struct MlpCache {
  std::vector<Mat<T>> inputs;  // inputs[l] is the input batch of layer l
  std::vector<Mat<T>> acts;    // acts[l] = act(W x + b), before the skip add
};

/// Batched forward: X is B x in, result B x out.
template <class T>
Mat<T> mlp_forward_batch(const Mlp<T>& m, const Mat<T>& x, MlpCache<T>* cache = nullptr) {
  require(!m.layers.empty(), "mlp_forward: empty network");
  require(x.cols == m.in_dim(), "mlp_forward: input width ", x.cols,
          " != network in dim ", m.in_dim());
  if (cache) {
    cache->inputs.clear();
    cache->acts.clear();
  }
  Mat<T> cur = x;
  for (const auto& l : m.layers) {
    Mat<T> y;
    linear_forward(y, cur, l.w, l.b);
    apply_act(y, l.act);
    if (cache) cache->acts.push_back(y);
    if (l.residual)
      for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += cur.data[i];
    if (cache) cache->inputs.push_back(std::move(cur));
    cur = std::move(y);
  }
  return cur;
}

/// Single-vector forward.
template <class T>
std::vector<T> mlp_forward(const Mlp<T>& m, const std::vector<T>& input) {
  Mat<T> x(1, static_cast<int>(input.size()));
  x.data = input;
  Mat<T> y = mlp_forward_batch(m, x);
  return y.data;
}

/// Gradient buffers mirroring an Mlp's shapes.
template <class T>
Mlp<T> make_grads_like(const Mlp<T>& m) {
  Mlp<T> g;
  g.layers.reserve(m.layers.size());
  for (const auto& l : m.layers) {
    Layer<T> gl;
    gl.w = Mat<T>(l.w.rows, l.w.cols);
    gl.b.assign(l.b.size(), T(0));
    gl.act = l.act;
    gl.residual = l.residual;
    g.layers.push_back(std::move(gl));
  }
  return g;
}

template <class T>
void zero_grads(Mlp<T>& g) {
  for (auto& l : g.layers) {
    l.w.zero();
    std::fill(l.b.begin(), l.b.end(), T(0));
  }
}

/// Reverse pass. Accumulates parameter gradients into `grads` (shapes
/// from make_grads_like) and returns the gradient w.r.t. the input batch.
template <class T>
Mat<T> mlp_backward_batch(const Mlp<T>& m, const MlpCache<T>& cache,
                          const Mat<T>& upstream, Mlp<T>& grads) {
  require(cache.inputs.size() == m.layers.size(), "mlp_backward: stale cache");
  require(upstream.cols == m.out_dim() &&
              upstream.rows == cache.inputs.front().rows,
          "mlp_backward: upstream shape ", upstream.rows, "x", upstream.cols,
          " does not match output ", cache.inputs.front().rows, "x", m.out_dim());
  Mat<T> dy = upstream;
  for (int li = static_cast<int>(m.layers.size()) - 1; li >= 0; --li) {
    const auto& l = m.layers[li];
    const Mat<T>& x = cache.inputs[li];
    const Mat<T>& a = cache.acts[li];
    Mat<T> dz = dy;  // d loss / d preact
    for (size_t i = 0; i < dz.data.size(); ++i)
      dz.data[i] *= act_grad_from_output(a.data[i], l.act);
    // dW += dz^T x ; db += colsum(dz) ; dx = dz W (+ skip)
    Mat<T> dzt = transposed(dz);
    gemm_acc(grads.layers[li].w, dzt, x);
    colsum_acc(grads.layers[li].b, dz);
    Mat<T> dx(x.rows, x.cols);
    gemm_acc(dx, dz, l.w);
    if (l.residual)
      for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dy.data[i];
    dy = std::move(dx);
  }
  return dy;
}

/// Single-vector backward: returns (param gradients, input gradient).
template <class T>
std::pair<Mlp<T>, std::vector<T>> mlp_backward(const Mlp<T>& m,
                                               const std::vector<T>& input,
                                               const std::vector<T>& upstream) {
  require(static_cast<int>(upstream.size()) == m.out_dim(),
          "mlp_backward: upstream length ", upstream.size(), " != out dim ",
          m.out_dim());
  Mat<T> x(1, static_cast<int>(input.size()));
  x.data = input;
  MlpCache<T> cache;
  mlp_forward_batch(m, x, &cache);
  Mat<T> up(1, static_cast<int>(upstream.size()));
  up.data = upstream;
  Mlp<T> grads = make_grads_like(m);
  Mat<T> dx = mlp_backward_batch(m, cache, up, grads);
  return {std::move(grads), std::move(dx.data)};
}

/// Named view of one parameter tensor; the unit optimizers, EMA, the
/// checkpoint writer and the finite-difference tests all walk these.
template <class T>
struct TensorRef {
  std::string name;
  T* data;
  size_t n;
};

template <class T, class F>
void visit_mlp(Mlp<T>& m, const std::string& prefix, F&& fn) {
  for (size_t i = 0; i < m.layers.size(); ++i) {
    auto& l = m.layers[i];
    fn(prefix + ".w" + std::to_string(i), l.w.data.data(), l.w.data.size());
    fn(prefix + ".b" + std::to_string(i), l.b.data(), l.b.size());
  }
}

template <class T>
size_t param_count(const Mlp<T>& m) {
  size_t n = 0;
  for (const auto& l : m.layers) n += l.w.data.size() + l.b.size();
  return n;
}

}  // namespace diif

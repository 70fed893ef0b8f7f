// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <type_traits>
#include <vector>

#include "diif/core/mat.hpp"
#include "diif/core/mlp.hpp"
#include "diif/core/rng.hpp"
#include "diif/core/time_embed.hpp"

namespace diif {

/// Cumulative noise-retention products for the diffusion corruption,
/// squared-cosine shape with the usual 0.999 per-step beta clip.
struct NoiseSchedule {
  int T = 100;
  std::vector<double> alpha_bar;

  void validate() const {
    require(T >= 1, "schedule: T must be >= 1");
    require(static_cast<int>(alpha_bar.size()) == T, "schedule: alpha_bar has ",
            alpha_bar.size(), " entries, expected ", T);
    require(alpha_bar.front() <= 1.0, "schedule: alpha_bar[0] > 1");
    require(alpha_bar.back() > 0.0, "schedule: alpha_bar[T-1] not positive");
    for (int i = 1; i < T; ++i)
      require(alpha_bar[static_cast<size_t>(i)] < alpha_bar[static_cast<size_t>(i - 1)],
              "schedule: alpha_bar not strictly decreasing at ", i);
  }
};

inline NoiseSchedule make_squared_cosine_schedule(int T = 100, double s = 0.008) {
  constexpr double kHalfPi = 1.57079632679489661923;
  auto f = [&](double t) {
    const double c = std::cos((t / T + s) / (1.0 + s) * kHalfPi);
    return c * c;
  };
  NoiseSchedule sched;
  sched.T = T;
  sched.alpha_bar.resize(static_cast<size_t>(T));
  const double f0 = f(0.0);
  double prev_raw = 1.0;
  double cum = 1.0;
  for (int i = 1; i <= T; ++i) {
    const double raw = f(static_cast<double>(i)) / f0;
    const double beta = std::min(1.0 - raw / prev_raw, 0.999);
    prev_raw = raw;
    cum *= 1.0 - beta;
    sched.alpha_bar[static_cast<size_t>(i - 1)] = cum;
  }
  sched.validate();
  return sched;
}

/// Conditional chunk generator: an MLP over [flattened chunk | time
/// embedding | condition]. Chunks are row-major H x A flattened.
template <class T>
struct GeneratorNet {
  Mlp<T> net;
  int chunk_dim = 0;
  int cond_dim = 0;
  int time_dim = 32;

  int input_dim() const { return chunk_dim + time_dim + cond_dim; }

  void validate() const {
    net.validate();
    require(net.in_dim() == input_dim(), "generator: net in dim ", net.in_dim(),
            " != chunk+time+cond = ", input_dim());
    require(net.out_dim() == chunk_dim, "generator: net out dim ",
            net.out_dim(), " != chunk dim ", chunk_dim);
  }
};

/// The readout layer starts at zero so the untrained field predicts 0
/// and the first losses sit at the data scale instead of blowing up
/// with the residual trunk's variance.
template <class T>
GeneratorNet<T> make_generator_net(int chunk_dim, int cond_dim, int width,
                                   int hidden_layers, Rng& rng,
                                   int time_dim = 32) {
  GeneratorNet<T> g;
  g.chunk_dim = chunk_dim;
  g.cond_dim = cond_dim;
  g.time_dim = time_dim;
  g.net = make_residual_mlp<T>(chunk_dim + time_dim + cond_dim, width,
                               hidden_layers, chunk_dim, rng);
  g.net.layers.back() = make_zero_layer<T>(width, chunk_dim, Act::identity);
  return g;
}

/// Stacks [z | embed(t) | cond] row-wise for a batched net call.
template <class T>
Mat<T> generator_input(const GeneratorNet<T>& g, const Mat<T>& z,
                       const std::vector<double>& ts, const Mat<T>& cond) {
  require(z.cols == g.chunk_dim, "generator: chunk width ", z.cols,
          " != ", g.chunk_dim);
  require(cond.cols == g.cond_dim, "generator: cond width ", cond.cols,
          " != ", g.cond_dim);
  require(z.rows == cond.rows && z.rows == static_cast<int>(ts.size()),
          "generator: batch mismatch z=", z.rows, " cond=", cond.rows,
          " t=", ts.size());
  Mat<T> x(z.rows, g.input_dim());
  for (int r = 0; r < z.rows; ++r) {
    T* dst = x.row(r);
    const T* zs = z.row(r);
    for (int c = 0; c < z.cols; ++c) dst[c] = zs[c];
    auto emb = time_embed<T>(ts[static_cast<size_t>(r)], g.time_dim);
    for (int c = 0; c < g.time_dim; ++c) dst[z.cols + c] = emb[static_cast<size_t>(c)];
    const T* cs = cond.row(r);
    for (int c = 0; c < cond.cols; ++c) dst[z.cols + g.time_dim + c] = cs[c];
  }
  return x;
}

template <class T>
Mat<T> generator_forward(const GeneratorNet<T>& g, const Mat<T>& z,
                         const std::vector<double>& ts, const Mat<T>& cond,
                         MlpCache<T>* cache = nullptr) {
  Mat<T> x = generator_input(g, z, ts, cond);
  return mlp_forward_batch(g.net, x, cache);
}

/// Gradients of a generator loss: parameter grads plus the gradient
/// w.r.t. the condition rows (for backprop into encoders/selectors).
template <class T>
struct GenGrads {
  Mlp<T> net;
  Mat<T> dcond;
};

template <class T>
GenGrads<T> make_gen_grads(const GeneratorNet<T>& g, int batch) {
  GenGrads<T> gr;
  gr.net = make_grads_like(g.net);
  gr.dcond = Mat<T>(batch, g.cond_dim);
  return gr;
}

namespace detail {

/// MSE + backward shared by both objectives. Accumulates into grads.
template <class T>
double generator_mse(const GeneratorNet<T>& g, const Mat<T>& z_in,
                     const std::vector<double>& ts, const Mat<T>& cond,
                     const Mat<T>& target, std::type_identity_t<GenGrads<T>*> grads) {
  MlpCache<T> cache;
  Mat<T> x = generator_input(g, z_in, ts, cond);
  Mat<T> out = mlp_forward_batch(g.net, x, grads ? &cache : nullptr);
  const double numel = static_cast<double>(out.data.size());
  double loss = 0;
  for (size_t i = 0; i < out.data.size(); ++i) {
    const double d = static_cast<double>(out.data[i]) -
                     static_cast<double>(target.data[i]);
    loss += d * d;
  }
  loss /= numel;
  if (grads) {
    Mat<T> up(out.rows, out.cols);
    for (size_t i = 0; i < out.data.size(); ++i)
      up.data[i] = static_cast<T>(
          2.0 * (static_cast<double>(out.data[i]) -
                 static_cast<double>(target.data[i])) / numel);
    Mat<T> dx = mlp_backward_batch(g.net, cache, up, grads->net);
    require(grads->dcond.rows == cond.rows && grads->dcond.cols == cond.cols,
            "generator: dcond buffer shape mismatch");
    const int off = g.chunk_dim + g.time_dim;
    for (int r = 0; r < cond.rows; ++r)
      for (int c = 0; c < cond.cols; ++c)
        grads->dcond.at(r, c) += dx.at(r, off + c);
  }
  return loss;
}

}  // namespace detail

// ---- flow matching ----

/// x_t = t * x1 + (1 - t) * x0.
template <class T>
Mat<T> fm_interpolate(const Mat<T>& x0, const Mat<T>& x1, double t) {
  require(t >= 0.0 && t <= 1.0, "fm_interpolate: t=", t, " outside [0,1]");
  require(x0.rows == x1.rows && x0.cols == x1.cols,
          "fm_interpolate: shape mismatch");
  Mat<T> out(x0.rows, x0.cols);
  for (size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = static_cast<T>(t * static_cast<double>(x1.data[i]) +
                                 (1.0 - t) * static_cast<double>(x0.data[i]));
  return out;
}

/// Deterministic core: caller supplies the base draws x0 and times.
template <class T>
double fm_loss_core(const GeneratorNet<T>& g, const Mat<T>& x1,
                    const Mat<T>& cond, const Mat<T>& x0,
                    const std::vector<double>& ts, std::type_identity_t<GenGrads<T>*> grads) {
  require(x1.same_shape(x0), "fm_loss: x0/x1 shape mismatch");
  Mat<T> xt(x1.rows, x1.cols);
  Mat<T> target(x1.rows, x1.cols);
  for (int r = 0; r < x1.rows; ++r) {
    const double t = ts[static_cast<size_t>(r)];
    require(t >= 0.0 && t <= 1.0, "fm_loss: t outside [0,1]");
    for (int c = 0; c < x1.cols; ++c) {
      xt.at(r, c) = static_cast<T>(t * static_cast<double>(x1.at(r, c)) +
                                   (1.0 - t) * static_cast<double>(x0.at(r, c)));
      target.at(r, c) = x1.at(r, c) - x0.at(r, c);
    }
  }
  return detail::generator_mse(g, xt, ts, cond, target, grads);
}

template <class T>
double fm_loss(const GeneratorNet<T>& g, const Mat<T>& gt_chunks,
               const Mat<T>& cond, Rng& rng, std::type_identity_t<GenGrads<T>*> grads = nullptr) {
  Mat<T> x0(gt_chunks.rows, gt_chunks.cols);
  rng.fill_normal(x0);
  std::vector<double> ts(static_cast<size_t>(gt_chunks.rows));
  for (auto& t : ts) t = rng.uniform();
  return fm_loss_core(g, gt_chunks, cond, x0, ts, grads);
}

/// Euler integration of dx/dt = net(x, t | cond) from t=0 to 1.
template <class T>
Mat<T> fm_sample(const GeneratorNet<T>& g, const Mat<T>& cond, int steps,
                 Rng& rng) {
  require(steps >= 1, "fm_sample: steps must be >= 1");
  Mat<T> x(cond.rows, g.chunk_dim);
  rng.fill_normal(x);
  const double dt = 1.0 / steps;
  for (int k = 0; k < steps; ++k) {
    std::vector<double> ts(static_cast<size_t>(cond.rows), k * dt);
    Mat<T> v = generator_forward(g, x, ts, cond);
    for (size_t i = 0; i < x.data.size(); ++i)
      x.data[i] += static_cast<T>(dt * static_cast<double>(v.data[i]));
  }
  return x;
}

// ---- ddim ----

/// z_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
template <class T>
Mat<T> ddim_corrupt(const Mat<T>& x0, const Mat<T>& eps, int t_index,
                    const NoiseSchedule& sched) {
  sched.validate();
  require(t_index >= 0 && t_index < sched.T, "ddim_corrupt: t_index ", t_index,
          " outside [0, ", sched.T, ")");
  require(x0.same_shape(eps), "ddim_corrupt: shape mismatch");
  const double ab = sched.alpha_bar[static_cast<size_t>(t_index)];
  const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
  Mat<T> z(x0.rows, x0.cols);
  for (size_t i = 0; i < z.data.size(); ++i)
    z.data[i] = static_cast<T>(sa * static_cast<double>(x0.data[i]) +
                               sb * static_cast<double>(eps.data[i]));
  return z;
}

/// Network time input for a schedule index.
inline double ddim_time(int t_index, const NoiseSchedule& sched) {
  return (t_index + 1.0) / sched.T;
}

/// Deterministic core: caller supplies per-row indices and noise.
template <class T>
double ddim_loss_core(const GeneratorNet<T>& g, const Mat<T>& x0,
                      const Mat<T>& cond, const NoiseSchedule& sched,
                      const std::vector<int>& t_idx, const Mat<T>& eps,
                      std::type_identity_t<GenGrads<T>*> grads) {
  require(x0.same_shape(eps), "ddim_loss: eps shape mismatch");
  require(static_cast<int>(t_idx.size()) == x0.rows, "ddim_loss: t_idx size");
  Mat<T> zt(x0.rows, x0.cols);
  std::vector<double> ts(t_idx.size());
  for (int r = 0; r < x0.rows; ++r) {
    const int ti = t_idx[static_cast<size_t>(r)];
    require(ti >= 0 && ti < sched.T, "ddim_loss: index out of range");
    const double ab = sched.alpha_bar[static_cast<size_t>(ti)];
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    for (int c = 0; c < x0.cols; ++c)
      zt.at(r, c) = static_cast<T>(sa * static_cast<double>(x0.at(r, c)) +
                                   sb * static_cast<double>(eps.at(r, c)));
    ts[static_cast<size_t>(r)] = ddim_time(ti, sched);
  }
  return detail::generator_mse(g, zt, ts, cond, eps, grads);
}

template <class T>
double ddim_loss(const GeneratorNet<T>& g, const Mat<T>& gt_chunks,
                 const Mat<T>& cond, const NoiseSchedule& sched, Rng& rng,
                 std::type_identity_t<GenGrads<T>*> grads = nullptr) {
  Mat<T> eps(gt_chunks.rows, gt_chunks.cols);
  rng.fill_normal(eps);
  std::vector<int> t_idx(static_cast<size_t>(gt_chunks.rows));
  for (auto& ti : t_idx) ti = static_cast<int>(rng.below(static_cast<uint64_t>(sched.T)));
  return ddim_loss_core(g, gt_chunks, cond, sched, t_idx, eps, grads);
}

/// Evenly strided descending schedule indices for sampling.
inline std::vector<int> ddim_stride(int steps, const NoiseSchedule& sched) {
  require(steps >= 1 && steps <= sched.T, "ddim_sample: steps ", steps,
          " outside [1, ", sched.T, "]");
  std::vector<int> idx(static_cast<size_t>(steps));
  if (steps == 1) {
    idx[0] = sched.T - 1;
    return idx;
  }
  for (int k = 0; k < steps; ++k) {
    double pos = static_cast<double>(sched.T - 1) * (steps - 1 - k) / (steps - 1);
    idx[static_cast<size_t>(k)] = static_cast<int>(std::lround(pos));
  }
  return idx;
}

/// Deterministic (eta = 0) sampler. Each visited index predicts eps,
/// reconstructs x0_hat and re-noises toward the next index; the final
/// x0_hat is the sample. x0_clip clamps the reconstruction each step
/// (the 1/sqrt(abar) factor is huge at the noisiest indices); 0 disables.
template <class T>
Mat<T> ddim_sample(const GeneratorNet<T>& g, const Mat<T>& cond, int steps,
                   const NoiseSchedule& sched, Rng& rng, double x0_clip = 5.0) {
  sched.validate();
  std::vector<int> idx = ddim_stride(steps, sched);
  Mat<T> z(cond.rows, g.chunk_dim);
  rng.fill_normal(z);
  Mat<T> x0hat(cond.rows, g.chunk_dim);
  for (size_t k = 0; k < idx.size(); ++k) {
    const int ti = idx[k];
    const double ab = sched.alpha_bar[static_cast<size_t>(ti)];
    std::vector<double> ts(static_cast<size_t>(cond.rows), ddim_time(ti, sched));
    Mat<T> eps_hat = generator_forward(g, z, ts, cond);
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    for (size_t i = 0; i < z.data.size(); ++i) {
      double v = (static_cast<double>(z.data[i]) -
                  sb * static_cast<double>(eps_hat.data[i])) / sa;
      if (x0_clip > 0) v = std::clamp(v, -x0_clip, x0_clip);
      x0hat.data[i] = static_cast<T>(v);
    }
    if (k + 1 < idx.size()) {
      const double abn = sched.alpha_bar[static_cast<size_t>(idx[k + 1])];
      const double san = std::sqrt(abn), sbn = std::sqrt(1.0 - abn);
      for (size_t i = 0; i < z.data.size(); ++i)
        z.data[i] = static_cast<T>(san * static_cast<double>(x0hat.data[i]) +
                                   sbn * static_cast<double>(eps_hat.data[i]));
    }
  }
  return x0hat;
}

enum class GenKind { ddim, fm };

inline const char* gen_kind_name(GenKind k) {
  return k == GenKind::ddim ? "ddim" : "fm";
}

inline GenKind gen_kind_from_name(const std::string& s) {
  if (s == "ddim") return GenKind::ddim;
  if (s == "fm") return GenKind::fm;
  fail("unknown generator kind '", s, "' (want ddim | fm)");
}

}  // namespace diif

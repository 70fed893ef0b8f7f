// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace diif {

/// Error type thrown on contract violations (shape mismatches, bad
/// configs, refused container loads). Carries a human-readable reason.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void append_all(std::ostringstream&) {}

template <class A, class... Rest>
void append_all(std::ostringstream& os, const A& a, const Rest&... rest) {
  os << a;
  append_all(os, rest...);
}

}  // namespace detail

template <class... Parts>
[[noreturn]] void fail(const Parts&... parts) {
  std::ostringstream os;
  detail::append_all(os, parts...);
  throw Error(os.str());
}

template <class... Parts>
void require(bool cond, const Parts&... parts) {
  if (!cond) fail(parts...);
}

/// Dense row-major matrix. The workhorse container for batched network
/// math; a row is one sample (or one output unit, for weights).
template <class T>
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, T(0)) {}

  T* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
  const T* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

  T& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  const T& at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  size_t size() const { return data.size(); }

  void zero() { std::fill(data.begin(), data.end(), T(0)); }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

namespace detail {

/// Scalar fallback: plain ikj, reduction-free inner loop.
template <class T>
void gemm_acc_rows(Mat<T>& c, const Mat<T>& a, const Mat<T>& b, int i0,
                   int i1, int j0, int j1) {
  const int k = a.cols;
  for (int i = i0; i < i1; ++i) {
    const T* __restrict__ arow = a.row(i);
    T* __restrict__ crow = c.row(i);
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* __restrict__ brow = b.row(p);
      for (int j = j0; j < j1; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

/// C += A * B.  A: m x k, B: k x n, C: m x n.
/// Register-tiled 4x16 kernel; every C entry still accumulates its k
/// terms in ascending order starting from the incoming value, so the
/// result is bitwise identical to the plain ikj loop.
template <class T>
void gemm_acc(Mat<T>& c, const Mat<T>& a, const Mat<T>& b) {
  require(a.cols == b.rows && a.rows == c.rows && b.cols == c.cols,
          "gemm shape mismatch: (", a.rows, "x", a.cols, ") * (", b.rows, "x",
          b.cols, ") -> (", c.rows, "x", c.cols, ")");
  const int m = a.rows, k = a.cols, n = b.cols;
  constexpr int IB = 4, JB = 32;
  int i = 0;
  for (; i + IB <= m; i += IB) {
    const T* __restrict__ ar0 = a.row(i + 0);
    const T* __restrict__ ar1 = a.row(i + 1);
    const T* __restrict__ ar2 = a.row(i + 2);
    const T* __restrict__ ar3 = a.row(i + 3);
    int j = 0;
    for (; j + JB <= n; j += JB) {
      T acc0[JB], acc1[JB], acc2[JB], acc3[JB];
      const T* c0 = c.row(i + 0) + j;
      const T* c1 = c.row(i + 1) + j;
      const T* c2 = c.row(i + 2) + j;
      const T* c3 = c.row(i + 3) + j;
      for (int jj = 0; jj < JB; ++jj) {
        acc0[jj] = c0[jj];
        acc1[jj] = c1[jj];
        acc2[jj] = c2[jj];
        acc3[jj] = c3[jj];
      }
      for (int p = 0; p < k; ++p) {
        const T* __restrict__ brow = b.row(p) + j;
        const T av0 = ar0[p], av1 = ar1[p], av2 = ar2[p], av3 = ar3[p];
        for (int jj = 0; jj < JB; ++jj) {
          const T bv = brow[jj];
          acc0[jj] += av0 * bv;
          acc1[jj] += av1 * bv;
          acc2[jj] += av2 * bv;
          acc3[jj] += av3 * bv;
        }
      }
      T* d0 = c.row(i + 0) + j;
      T* d1 = c.row(i + 1) + j;
      T* d2 = c.row(i + 2) + j;
      T* d3 = c.row(i + 3) + j;
      for (int jj = 0; jj < JB; ++jj) {
        d0[jj] = acc0[jj];
        d1[jj] = acc1[jj];
        d2[jj] = acc2[jj];
        d3[jj] = acc3[jj];
      }
    }
    if (j < n) detail::gemm_acc_rows(c, a, b, i, i + IB, j, n);
  }
  if (i < m) detail::gemm_acc_rows(c, a, b, i, m, 0, n);
}

template <class T>
Mat<T> transposed(const Mat<T>& a) {
  Mat<T> t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t.at(j, i) = a.at(i, j);
  return t;
}

/// Y = X * W^T + b (row-broadcast).  X: B x in, W: out x in, Y: B x out.
template <class T>
void linear_forward(Mat<T>& y, const Mat<T>& x, const Mat<T>& w,
                    const std::vector<T>& bias) {
  require(x.cols == w.cols, "linear: input width ", x.cols,
          " != weight in-dim ", w.cols);
  require(static_cast<int>(bias.size()) == w.rows, "linear: bias size mismatch");
  y = Mat<T>(x.rows, w.rows);
  for (int r = 0; r < y.rows; ++r) {
    T* yr = y.row(r);
    for (int j = 0; j < y.cols; ++j) yr[j] = bias[j];
  }
  Mat<T> wt = transposed(w);
  gemm_acc(y, x, wt);
}

template <class T>
void colsum_acc(std::vector<T>& out, const Mat<T>& a) {
  require(static_cast<int>(out.size()) == a.cols, "colsum size mismatch");
  for (int i = 0; i < a.rows; ++i) {
    const T* r = a.row(i);
    for (int j = 0; j < a.cols; ++j) out[j] += r[j];
  }
}

}  // namespace diif

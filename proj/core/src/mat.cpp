#include "motun/mat.hpp"

#include <cassert>
#include <cmath>
#include <type_traits>

namespace motun {

double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

namespace {

inline double dotf(const double* a, const float* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * static_cast<double>(b[i]);
  return s;
}

template <typename W>
void matmul_nt_impl(const Mat& x, const W& w, Mat& y, bool accumulate) {
  assert(x.cols == w.cols);
  if (y.rows != x.rows || y.cols != w.rows) y = Mat(x.rows, w.rows);
  const int k = x.cols;
  const int m = w.rows;
  for (int i = 0; i < x.rows; ++i) {
    const double* __restrict__ xi = x.row(i);
    double* __restrict__ yi = y.row(i);
    int o = 0;
    // Four output streams per pass over xi.
    for (; o + 4 <= m; o += 4) {
      const auto* w0 = w.row(o);
      const auto* w1 = w.row(o + 1);
      const auto* w2 = w.row(o + 2);
      const auto* w3 = w.row(o + 3);
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      for (int c = 0; c < k; ++c) {
        const double xv = xi[c];
        s0 += xv * static_cast<double>(w0[c]);
        s1 += xv * static_cast<double>(w1[c]);
        s2 += xv * static_cast<double>(w2[c]);
        s3 += xv * static_cast<double>(w3[c]);
      }
      if (accumulate) {
        yi[o] += s0;
        yi[o + 1] += s1;
        yi[o + 2] += s2;
        yi[o + 3] += s3;
      } else {
        yi[o] = s0;
        yi[o + 1] = s1;
        yi[o + 2] = s2;
        yi[o + 3] = s3;
      }
    }
    for (; o < m; ++o) {
      double s;
      if constexpr (std::is_same_v<W, ParamTensor>)
        s = dotf(xi, w.row(o), k);
      else
        s = dot(xi, w.row(o), k);
      yi[o] = accumulate ? yi[o] + s : s;
    }
  }
}

template <typename W>
void matmul_nn_impl(const Mat& x, const W& w, Mat& y, bool accumulate) {
  assert(x.cols == w.rows);
  if (y.rows != x.rows || y.cols != w.cols) y = Mat(x.rows, w.cols);
  if (!accumulate) y.zero();
  const int k = w.cols;
  for (int i = 0; i < x.rows; ++i) {
    const double* xi = x.row(i);
    double* yi = y.row(i);
    for (int o = 0; o < x.cols; ++o) {
      const double a = xi[o];
      if (a == 0.0) continue;
      const auto* wo = w.row(o);
      for (int j = 0; j < k; ++j) yi[j] += a * static_cast<double>(wo[j]);
    }
  }
}

}  // namespace

void matmul_nt(const Mat& x, const ParamTensor& w, Mat& y, bool accumulate) {
  matmul_nt_impl(x, w, y, accumulate);
}
void matmul_nt(const Mat& x, const Mat& w, Mat& y, bool accumulate) {
  matmul_nt_impl(x, w, y, accumulate);
}
void matmul_nn(const Mat& x, const ParamTensor& w, Mat& y, bool accumulate) {
  matmul_nn_impl(x, w, y, accumulate);
}
void matmul_nn(const Mat& x, const Mat& w, Mat& y, bool accumulate) {
  matmul_nn_impl(x, w, y, accumulate);
}

void matmul_tn_acc(const Mat& a, const Mat& b, Mat& c) {
  assert(a.rows == b.rows);
  if (c.rows != a.cols || c.cols != b.cols) {
    c = Mat(a.cols, b.cols);
  }
  const int k = b.cols;
  for (int i = 0; i < a.rows; ++i) {
    const double* ai = a.row(i);
    const double* bi = b.row(i);
    for (int o = 0; o < a.cols; ++o) {
      const double s = ai[o];
      if (s == 0.0) continue;
      double* co = c.row(o);
      for (int j = 0; j < k; ++j) co[j] += s * bi[j];
    }
  }
}

void add_row_bias(Mat& y, const ParamTensor& b) {
  assert(b.rows == 1 && b.cols == y.cols);
  for (int i = 0; i < y.rows; ++i) {
    double* yi = y.row(i);
    for (int j = 0; j < y.cols; ++j) yi[j] += static_cast<double>(b.w[j]);
  }
}

bool all_finite(const Mat& m) {
  for (double x : m.v)
    if (!std::isfinite(x)) return false;
  return true;
}

bool all_finite(const ParamTensor& t) {
  for (float x : t.w)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace motun

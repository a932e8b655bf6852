#pragma once

#include <cstddef>
#include <vector>

namespace motun {

/// Dense row-major double matrix used for activations and gradients.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}

  double* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
  const double* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return v.size(); }
  void zero() { std::fill(v.begin(), v.end(), 0.0); }
};

/// Model parameters are stored as float32 (the checkpoint wire format);
/// all arithmetic on them happens in double.
struct ParamTensor {
  int rows = 0;
  int cols = 0;
  std::vector<float> w;

  ParamTensor() = default;
  ParamTensor(int r, int c) : rows(r), cols(c), w(static_cast<size_t>(r) * c, 0.0f) {}

  float* row(int r) { return w.data() + static_cast<size_t>(r) * cols; }
  const float* row(int r) const { return w.data() + static_cast<size_t>(r) * cols; }
  float& at(int r, int c) { return w[static_cast<size_t>(r) * cols + c]; }
  float at(int r, int c) const { return w[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return w.size(); }
};

// Y(n×m) = X(n×k) · W(m×k)^T, optionally accumulating into Y.
void matmul_nt(const Mat& x, const ParamTensor& w, Mat& y, bool accumulate = false);
void matmul_nt(const Mat& x, const Mat& w, Mat& y, bool accumulate = false);

// Y(n×k) = X(n×m) · W(m×k), optionally accumulating.
void matmul_nn(const Mat& x, const ParamTensor& w, Mat& y, bool accumulate = false);
void matmul_nn(const Mat& x, const Mat& w, Mat& y, bool accumulate = false);

// C(m×k) += A(n×m)^T · B(n×k). Always accumulates (gradient use).
void matmul_tn_acc(const Mat& a, const Mat& b, Mat& c);

void add_row_bias(Mat& y, const ParamTensor& b);

bool all_finite(const Mat& m);
bool all_finite(const ParamTensor& t);

double dot(const double* a, const double* b, int n);

}  // namespace motun

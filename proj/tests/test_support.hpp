#pragma once

// Shared fixtures and independent reference implementations for the test
// suites. The oracles here are deliberately written as plain loops (long
// double where it helps) and must stay decoupled from the library code they
// check.

#include <cmath>
#include <vector>

#include "motun/losses.hpp"
#include "motun/motion.hpp"
#include "motun/rng.hpp"

namespace testsup {

using motun::Mat;
using motun::Rng;
using motun::motion::MotionSequence;

inline MotionSequence blank_motion(int t, int joints, int valid) {
  MotionSequence m;
  m.layout = motun::motion::pose_layout(joints);
  m.frames = Mat(t, m.layout.frame_width);
  m.mask.assign(t, 0);
  for (int i = 0; i < valid; ++i) m.mask[i] = 1;
  return m;
}

inline MotionSequence random_motion(Rng& rng, int t, int joints, int valid) {
  MotionSequence m = blank_motion(t, joints, valid);
  for (double& v : m.frames.v) v = rng.normal();
  return m;
}

// Prediction = target + a perturbation bounded away from every norm and
// absolute-value kink, so central differences stay trustworthy.
struct FixturePair {
  MotionSequence pred;
  MotionSequence tgt;
};

inline double frame_norm(const double* a, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * a[i];
  return std::sqrt(s);
}

inline FixturePair kink_free_fixture(uint64_t seed, int t = 8, int joints = 4) {
  Rng rng(seed);
  const int valid = 4 + static_cast<int>(rng.uniform_index(t - 3));
  for (int attempt = 0; attempt < 2000; ++attempt) {
    FixturePair fx;
    fx.tgt = random_motion(rng, t, joints, valid);
    fx.pred = fx.tgt;
    const int f = fx.tgt.width();
    Mat delta(t, f);
    for (double& v : delta.v) {
      const double mag = rng.uniform(0.08, 0.4);
      v = rng.bernoulli(0.5) ? mag : -mag;
    }
    for (size_t i = 0; i < delta.v.size(); ++i) fx.pred.frames.v[i] += delta.v[i];
    // Padded frames may hold anything; perturb them wildly on purpose.
    for (int r = valid; r < t; ++r)
      for (int c = 0; c < f; ++c) fx.pred.frames.at(r, c) += rng.normal() * 10.0;

    const auto& l = fx.tgt.layout;
    bool ok = true;
    for (int r = 0; r < valid && ok; ++r)
      ok = frame_norm(delta.row(r) + l.jp_offset, l.jp_width) >= 0.05;
    std::vector<std::vector<double>> d1, d2;
    for (int r = 1; r < valid; ++r) {
      std::vector<double> row(f);
      for (int c = 0; c < f; ++c) row[c] = delta.at(r, c) - delta.at(r - 1, c);
      d1.push_back(row);
    }
    for (size_t r = 1; r < d1.size(); ++r) {
      std::vector<double> row(f);
      for (int c = 0; c < f; ++c) row[c] = d1[r][c] - d1[r - 1][c];
      d2.push_back(row);
    }
    for (const auto& row : d1)
      if (ok) ok = frame_norm(row.data(), f) >= 0.05;
    for (const auto& row : d2)
      if (ok) ok = frame_norm(row.data(), f) >= 0.05;
    // Foot channels feed an elementwise |.|; keep each difference away from 0.
    for (const auto& row : d1)
      for (int j : l.foot_joints) {
        const int off = l.joint_position_offset(j);
        for (int c = 0; c < 3 && ok; ++c) ok = std::fabs(row[off + c]) >= 0.02;
      }
    // Spectral magnitudes of both residual signals bounded below per bin.
    auto bins_ok = [f](const std::vector<std::vector<double>>& sig) {
      const int n = static_cast<int>(sig.size());
      if (n == 0) return true;
      const int k_bins = n / 2 + 1;
      for (int k = 0; k < k_bins; ++k)
        for (int c = 0; c < f; ++c) {
          double re = 0.0, im = 0.0;
          for (int r = 0; r < n; ++r) {
            const double ang = 2.0 * 3.14159265358979323846 * k * r / n;
            re += sig[r][c] * std::cos(ang);
            im -= sig[r][c] * std::sin(ang);
          }
          if (std::hypot(re, im) < 0.03) return false;
        }
      return true;
    };
    if (ok) ok = bins_ok(d1) && bins_ok(d2);
    if (ok) return fx;
  }
  throw std::runtime_error("could not build a kink-free fixture");
}

// ---- independent oracles ---------------------------------------------------

namespace oracle {

inline double mpjpe(const MotionSequence& pred, const MotionSequence& tgt, double eps = 1e-8) {
  const auto& l = pred.layout;
  int n = 0;
  while (n < pred.length() && pred.mask[n]) ++n;
  double total = 0.0;
  for (int t = 0; t < n; ++t) {
    double s = 0.0;
    for (int c = 0; c < l.jp_width; ++c) {
      const double d = pred.frames.at(t, l.jp_offset + c) - tgt.frames.at(t, l.jp_offset + c);
      s += d * d;
    }
    total += std::sqrt(s);
  }
  return total / (n + eps);
}

// Reference DFT in long double; O(N^2) by construction.
inline double spectral(const std::vector<std::vector<double>>& resid) {
  const int n = static_cast<int>(resid.size());
  if (n == 0) return 0.0;
  const int f = static_cast<int>(resid.front().size());
  const int k_bins = n / 2 + 1;
  if (k_bins < 2) return 0.0;
  long double total = 0.0L;
  for (int k = 0; k < k_bins; ++k) {
    const long double weight = logl(1.0L + 9.0L * static_cast<long double>(k) / (k_bins - 1));
    for (int c = 0; c < f; ++c) {
      long double re = 0.0L, im = 0.0L;
      for (int t = 0; t < n; ++t) {
        const long double ang =
            2.0L * 3.141592653589793238462643383279502884L * k * t / n;
        re += static_cast<long double>(resid[t][c]) * cosl(ang);
        im -= static_cast<long double>(resid[t][c]) * sinl(ang);
      }
      total += weight * sqrtl(re * re + im * im);
    }
  }
  return static_cast<double>(total / (static_cast<long double>(k_bins) * f));
}

inline std::vector<std::vector<double>> diff_residual(const MotionSequence& pred,
                                                      const MotionSequence& tgt, int order) {
  int n = 0;
  while (n < pred.length() && pred.mask[n]) ++n;
  const int f = pred.width();
  std::vector<std::vector<double>> out;
  for (int t = order; t < n; ++t) {
    std::vector<double> row(f);
    for (int c = 0; c < f; ++c) {
      if (order == 1) {
        row[c] = (pred.frames.at(t, c) - pred.frames.at(t - 1, c)) -
                 (tgt.frames.at(t, c) - tgt.frames.at(t - 1, c));
      } else {
        row[c] = (pred.frames.at(t, c) - 2.0 * pred.frames.at(t - 1, c) +
                  pred.frames.at(t - 2, c)) -
                 (tgt.frames.at(t, c) - 2.0 * tgt.frames.at(t - 1, c) +
                  tgt.frames.at(t - 2, c));
      }
    }
    out.push_back(row);
  }
  return out;
}

inline double diff_loss(const MotionSequence& pred, const MotionSequence& tgt, int order,
                        double eps = 1e-8) {
  const auto resid = diff_residual(pred, tgt, order);
  double total = 0.0;
  for (const auto& row : resid) {
    double s = 0.0;
    for (double v : row) s += v * v;
    total += std::sqrt(s);
  }
  return total / (static_cast<double>(resid.size()) + eps) + spectral(resid);
}

inline double foot(const MotionSequence& pred, double eps = 1e-8) {
  const auto& l = pred.layout;
  int n = 0;
  while (n < pred.length() && pred.mask[n]) ++n;
  double total = 0.0;
  for (int t = 1; t < n; ++t) {
    double acc = 0.0;
    int cnt = 0;
    for (int j : l.foot_joints) {
      const int off = l.joint_position_offset(j);
      for (int c = 0; c < 3; ++c) {
        acc += std::fabs(pred.frames.at(t, off + c) - pred.frames.at(t - 1, off + c));
        ++cnt;
      }
    }
    total += acc / cnt;
  }
  return total / (static_cast<double>(n - 1) + eps);
}

// Softmax cross entropy by hand, both retrieval directions.
inline double text(const Mat& e_t, const Mat& e_m, double tau) {
  const int b = e_t.rows;
  long double total = 0.0L;
  for (int dir = 0; dir < 2; ++dir) {
    for (int i = 0; i < b; ++i) {
      std::vector<long double> row(b);
      for (int j = 0; j < b; ++j) {
        long double s = 0.0L;
        for (int c = 0; c < e_t.cols; ++c) {
          const double a = dir == 0 ? e_t.at(i, c) : e_m.at(i, c);
          const double bb = dir == 0 ? e_m.at(j, c) : e_t.at(j, c);
          s += static_cast<long double>(a) * bb;
        }
        row[j] = s / tau;
      }
      long double z = 0.0L;
      for (int j = 0; j < b; ++j) z += expl(row[j]);
      total += (-row[i] + logl(z)) / b;
    }
  }
  return static_cast<double>(total / 2.0L);
}

}  // namespace oracle

// ---- finite differences ----------------------------------------------------

// Central differences over every entry of `target`, compared against an
// analytic gradient; returns the max relative error with a small floor.
template <typename Fn>
double max_rel_error_fd(Mat& target, const Mat& analytic, Fn eval, double h = 1e-3) {
  double worst = 0.0;
  for (size_t i = 0; i < target.v.size(); ++i) {
    const double orig = target.v[i];
    target.v[i] = orig + h;
    const double up = eval();
    target.v[i] = orig - h;
    const double down = eval();
    target.v[i] = orig;
    const double fd = (up - down) / (2.0 * h);
    const double an = analytic.v[i];
    const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
    worst = std::max(worst, std::fabs(fd - an) / denom);
  }
  return worst;
}

}  // namespace testsup

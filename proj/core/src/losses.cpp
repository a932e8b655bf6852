#include "motun/losses.hpp"

#include <cmath>

#include "motun/common.hpp"

namespace motun::losses {

using motion::MotionSequence;

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void check_pair(const MotionSequence& pred, const MotionSequence& tgt) {
  require(pred.length() == tgt.length() && pred.width() == tgt.width(), Errc::model_contract,
          "loss operands differ in shape");
  require(pred.mask == tgt.mask, Errc::model_contract, "loss operands differ in mask");
}

}  // namespace

void LossWeights::validate() const {
  require(gamma >= 0.0 && gamma <= 1.0, Errc::bad_config, "gamma must be in [0,1]");
  require(tau > 0.0, Errc::bad_config, "tau must be positive");
  require(eps > 0.0, Errc::bad_config, "eps must be positive");
  for (double v : {lambda_mpjpe, lambda_vel, lambda_acc, lambda_foot, lambda_text, w_harm, w_dec,
                   w_pres})
    require(v >= 0.0, Errc::bad_config, "loss weights must be nonnegative");
}

double mpjpe(const MotionSequence& pred, const MotionSequence& tgt, double eps) {
  check_pair(pred, tgt);
  const int n = pred.valid_count();
  const auto& l = pred.layout;
  double sum = 0.0;
  for (int t = 0; t < n; ++t) {
    const double* pr = pred.frames.row(t) + l.jp_offset;
    const double* tr = tgt.frames.row(t) + l.jp_offset;
    double s2 = 0.0;
    for (int c = 0; c < l.jp_width; ++c) {
      const double d = pr[c] - tr[c];
      s2 += d * d;
    }
    sum += std::sqrt(s2);
  }
  return sum / (n + eps);
}

double mpjpe(const MotionSequence& pred, const MotionSequence& tgt, double eps, double upstream,
             Mat& dpred) {
  check_pair(pred, tgt);
  const int n = pred.valid_count();
  const auto& l = pred.layout;
  const double scale = upstream / (n + eps);
  double sum = 0.0;
  for (int t = 0; t < n; ++t) {
    const double* pr = pred.frames.row(t) + l.jp_offset;
    const double* tr = tgt.frames.row(t) + l.jp_offset;
    double s2 = 0.0;
    for (int c = 0; c < l.jp_width; ++c) {
      const double d = pr[c] - tr[c];
      s2 += d * d;
    }
    const double norm = std::sqrt(s2);
    sum += norm;
    if (norm > 0.0) {
      double* g = dpred.row(t) + l.jp_offset;
      for (int c = 0; c < l.jp_width; ++c) g[c] += scale * (pr[c] - tr[c]) / norm;
    }
  }
  return sum / (n + eps);
}

namespace {

// Shared machinery for the difference losses: `order` is 1 for velocity,
// 2 for acceleration. Residual r_t has length n - order.
double diff_loss(const MotionSequence& pred, const MotionSequence& tgt, int order, double eps,
                 bool with_grad, double upstream, Mat* dpred) {
  check_pair(pred, tgt);
  const int n = pred.valid_count();
  if (order == 1)
    require(n >= 2, Errc::velocity_degenerate, "velocity loss needs >= 2 valid frames");
  else
    require(n >= 3, Errc::acceleration_degenerate, "acceleration loss needs >= 3 valid frames");
  const int f = pred.width();
  const int len = n - order;
  Mat resid(len, f);
  for (int i = 0; i < len; ++i) {
    const int t = i + order;
    double* r = resid.row(i);
    if (order == 1) {
      const double* p1 = pred.frames.row(t);
      const double* p0 = pred.frames.row(t - 1);
      const double* q1 = tgt.frames.row(t);
      const double* q0 = tgt.frames.row(t - 1);
      for (int c = 0; c < f; ++c) r[c] = (p1[c] - p0[c]) - (q1[c] - q0[c]);
    } else {
      const double* p2 = pred.frames.row(t);
      const double* p1 = pred.frames.row(t - 1);
      const double* p0 = pred.frames.row(t - 2);
      const double* q2 = tgt.frames.row(t);
      const double* q1 = tgt.frames.row(t - 1);
      const double* q0 = tgt.frames.row(t - 2);
      for (int c = 0; c < f; ++c)
        r[c] = (p2[c] - 2.0 * p1[c] + p0[c]) - (q2[c] - 2.0 * q1[c] + q0[c]);
    }
  }
  const double denom = len + eps;
  double sum = 0.0;
  Mat dresid;
  if (with_grad) dresid = Mat(len, f);
  for (int i = 0; i < len; ++i) {
    const double* r = resid.row(i);
    double s2 = 0.0;
    for (int c = 0; c < f; ++c) s2 += r[c] * r[c];
    const double norm = std::sqrt(s2);
    sum += norm;
    if (with_grad && norm > 0.0) {
      double* g = dresid.row(i);
      for (int c = 0; c < f; ++c) g[c] += upstream * r[c] / (norm * denom);
    }
  }
  double value = sum / denom;
  if (with_grad)
    value += spectral_emphasis(resid, upstream, dresid);
  else
    value += spectral_emphasis(resid);
  if (with_grad) {
    // Push residual gradients through the difference stencil.
    for (int i = 0; i < len; ++i) {
      const int t = i + order;
      const double* g = dresid.row(i);
      if (order == 1) {
        double* a1 = dpred->row(t);
        double* a0 = dpred->row(t - 1);
        for (int c = 0; c < f; ++c) {
          a1[c] += g[c];
          a0[c] -= g[c];
        }
      } else {
        double* a2 = dpred->row(t);
        double* a1 = dpred->row(t - 1);
        double* a0 = dpred->row(t - 2);
        for (int c = 0; c < f; ++c) {
          a2[c] += g[c];
          a1[c] -= 2.0 * g[c];
          a0[c] += g[c];
        }
      }
    }
  }
  return value;
}

}  // namespace

double vel_loss(const MotionSequence& pred, const MotionSequence& tgt, double eps) {
  return diff_loss(pred, tgt, 1, eps, false, 0.0, nullptr);
}
double vel_loss(const MotionSequence& pred, const MotionSequence& tgt, double eps, double upstream,
                Mat& dpred) {
  return diff_loss(pred, tgt, 1, eps, true, upstream, &dpred);
}
double acc_loss(const MotionSequence& pred, const MotionSequence& tgt, double eps) {
  return diff_loss(pred, tgt, 2, eps, false, 0.0, nullptr);
}
double acc_loss(const MotionSequence& pred, const MotionSequence& tgt, double eps, double upstream,
                Mat& dpred) {
  return diff_loss(pred, tgt, 2, eps, true, upstream, &dpred);
}

namespace {

double foot_loss_impl(const MotionSequence& pred, double eps, bool with_grad, double upstream,
                      Mat* dpred) {
  const auto& l = pred.layout;
  require(l.contact_width == 4, Errc::foot_config, "foot joint set must have 4 entries");
  const int n = pred.valid_count();
  require(n >= 2, Errc::velocity_degenerate, "foot loss needs >= 2 valid frames");
  const double denom = (n - 1) + eps;
  const double inv_channels = 1.0 / 12.0;  // 4 joints x 3 position channels
  double sum = 0.0;
  for (int t = 1; t < n; ++t) {
    const double* cur = pred.frames.row(t);
    const double* prev = pred.frames.row(t - 1);
    double acc = 0.0;
    for (int j : l.foot_joints) {
      const int off = l.joint_position_offset(j);
      for (int c = 0; c < 3; ++c) {
        const double d = cur[off + c] - prev[off + c];
        acc += std::fabs(d);
        if (with_grad && d != 0.0) {
          const double g = upstream * (d > 0 ? 1.0 : -1.0) * inv_channels / denom;
          dpred->at(t, off + c) += g;
          dpred->at(t - 1, off + c) -= g;
        }
      }
    }
    sum += acc * inv_channels;
  }
  return sum / denom;
}

}  // namespace

double foot_loss(const MotionSequence& pred, double eps) {
  return foot_loss_impl(pred, eps, false, 0.0, nullptr);
}
double foot_loss(const MotionSequence& pred, double eps, double upstream, Mat& dpred) {
  return foot_loss_impl(pred, eps, true, upstream, &dpred);
}

namespace {

// Row-wise softmax cross entropy against the diagonal, mean over rows.
// dS receives the gradient when non-null.
double ce_diag(const Mat& s, Mat* ds) {
  const int b = s.rows;
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    const double* row = s.row(i);
    double mx = row[0];
    for (int j = 1; j < b; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < b; ++j) z += std::exp(row[j] - mx);
    total += -(row[i] - mx) + std::log(z);
    if (ds) {
      double* g = ds->row(i);
      for (int j = 0; j < b; ++j) g[j] += (std::exp(row[j] - mx) / z - (i == j ? 1.0 : 0.0)) / b;
    }
  }
  return total / b;
}

}  // namespace

double text_motion_loss(const Mat& e_t, const Mat& e_m, double tau) {
  return text_motion_loss(e_t, e_m, tau, 0.0, nullptr, nullptr);
}

double text_motion_loss(const Mat& e_t, const Mat& e_m, double tau, double upstream, Mat* de_t,
                        Mat* de_m) {
  require(e_t.rows == e_m.rows && e_t.cols == e_m.cols, Errc::feature_mismatch,
          "contrastive batches differ in shape");
  require(e_t.rows >= 2, Errc::contrastive_degenerate,
          "contrastive loss needs a batch of >= 2 pairs");
  const int b = e_t.rows;
  Mat s(b, b);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j) s.at(i, j) = dot(e_t.row(i), e_m.row(j), e_t.cols) / tau;
  const bool grad = de_t != nullptr || de_m != nullptr;
  Mat ds_a, ds_b;
  if (grad) {
    ds_a = Mat(b, b);
    ds_b = Mat(b, b);
  }
  // Second direction scores are the transpose of the first.
  Mat st(b, b);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j) st.at(i, j) = s.at(j, i);
  const double value = 0.5 * (ce_diag(s, grad ? &ds_a : nullptr) +
                              ce_diag(st, grad ? &ds_b : nullptr));
  if (grad) {
    // d/dS = 0.5 * (dsa + dsb^T), then S = e_t e_m^T / tau.
    Mat dS(b, b);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < b; ++j)
        dS.at(i, j) = 0.5 * upstream * (ds_a.at(i, j) + ds_b.at(j, i)) / tau;
    if (de_t) matmul_nn(dS, e_m, *de_t, true);
    if (de_m) {
      Mat dSt(b, b);
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < b; ++j) dSt.at(i, j) = dS.at(j, i);
      matmul_nn(dSt, e_t, *de_m, true);
    }
  }
  return value;
}

double harm_loss(const MotionSequence& pred, const MotionSequence& tgt, const Mat& e_t,
                 const Mat& e_m, const LossWeights& w) {
  double v = 0.0;
  if (w.lambda_mpjpe > 0.0) v += w.lambda_mpjpe * mpjpe(pred, tgt, w.eps);
  if (w.lambda_vel > 0.0) v += w.lambda_vel * vel_loss(pred, tgt, w.eps);
  if (w.lambda_acc > 0.0) v += w.lambda_acc * acc_loss(pred, tgt, w.eps);
  if (w.lambda_foot > 0.0) v += w.lambda_foot * foot_loss(pred, w.eps);
  if (w.lambda_text > 0.0) v += w.lambda_text * text_motion_loss(e_t, e_m, w.tau);
  return v;
}

double dec_loss(const MotionSequence& pred_mix, const MotionSequence& tgt_dec,
                const LossWeights& w) {
  double v = 0.0;
  if (w.lambda_mpjpe > 0.0) v += w.lambda_mpjpe * mpjpe(pred_mix, tgt_dec, w.eps);
  if (w.lambda_vel > 0.0) v += w.lambda_vel * vel_loss(pred_mix, tgt_dec, w.eps);
  if (w.lambda_acc > 0.0) v += w.lambda_acc * acc_loss(pred_mix, tgt_dec, w.eps);
  return v;
}

double dec_loss(const MotionSequence& pred_mix, const MotionSequence& tgt_dec,
                const LossWeights& w, double upstream, Mat& dpred) {
  double v = 0.0;
  if (w.lambda_mpjpe > 0.0)
    v += w.lambda_mpjpe * mpjpe(pred_mix, tgt_dec, w.eps, upstream * w.lambda_mpjpe, dpred);
  if (w.lambda_vel > 0.0)
    v += w.lambda_vel * vel_loss(pred_mix, tgt_dec, w.eps, upstream * w.lambda_vel, dpred);
  if (w.lambda_acc > 0.0)
    v += w.lambda_acc * acc_loss(pred_mix, tgt_dec, w.eps, upstream * w.lambda_acc, dpred);
  return v;
}

double pres_divergence(const std::vector<double>& z_cur, const std::vector<double>& z_base,
                       const std::vector<double>& z_cur_dec,
                       const std::vector<double>& z_base_dec, double gamma) {
  return pres_divergence(z_cur, z_base, z_cur_dec, z_base_dec, gamma, 0.0, nullptr, nullptr);
}

double pres_divergence(const std::vector<double>& z_cur, const std::vector<double>& z_base,
                       const std::vector<double>& z_cur_dec,
                       const std::vector<double>& z_base_dec, double gamma, double upstream,
                       std::vector<double>* dz_cur, std::vector<double>* dz_cur_dec) {
  require(z_cur.size() == z_base.size() && z_cur_dec.size() == z_base_dec.size(),
          Errc::feature_mismatch, "pooled feature dimensions differ");
  double main = 0.0;
  for (size_t i = 0; i < z_cur.size(); ++i) {
    const double d = z_cur[i] - z_base[i];
    main += d * d;
    if (dz_cur) (*dz_cur)[i] += upstream * (-2.0 * gamma * d);
  }
  double dec = 0.0;
  for (size_t i = 0; i < z_cur_dec.size(); ++i) {
    const double d = z_cur_dec[i] - z_base_dec[i];
    dec += d * d;
    if (dz_cur_dec) (*dz_cur_dec)[i] += upstream * (-2.0 * (1.0 - gamma) * d);
  }
  return -gamma * main - (1.0 - gamma) * dec;
}

std::vector<double> pool(const MotionSequence& m, double eps) {
  const int n = m.valid_count();
  std::vector<double> z(m.width(), 0.0);
  for (int t = 0; t < n; ++t) {
    const double* row = m.frames.row(t);
    for (int c = 0; c < m.width(); ++c) z[c] += row[c];
  }
  const double denom = n + eps;
  for (double& v : z) v /= denom;
  return z;
}

void pool_backward(const MotionSequence& m, const std::vector<double>& dz, double eps,
                   Mat& dpred) {
  const int n = m.valid_count();
  const double denom = n + eps;
  for (int t = 0; t < n; ++t) {
    double* g = dpred.row(t);
    for (int c = 0; c < m.width(); ++c) g[c] += dz[c] / denom;
  }
}

double spectral_emphasis(const Mat& resid) {
  Mat unused;
  return spectral_emphasis(resid, 0.0, unused);
}

double spectral_emphasis(const Mat& resid, double upstream, Mat& dresid) {
  const bool with_grad = dresid.rows == resid.rows && dresid.cols == resid.cols &&
                         !(upstream == 0.0);
  const int n = resid.rows;
  const int f = resid.cols;
  if (n == 0 || f == 0) return 0.0;
  const int k_bins = n / 2 + 1;
  if (k_bins < 2) return 0.0;  // single DC bin carries zero weight
  Mat re(k_bins, f), im(k_bins, f);
  for (int k = 0; k < k_bins; ++k) {
    double* rk = re.row(k);
    double* ik = im.row(k);
    for (int t = 0; t < n; ++t) {
      const double angle = kTwoPi * k * t / n;
      const double c = std::cos(angle);
      const double s = std::sin(angle);
      const double* rt = resid.row(t);
      for (int ch = 0; ch < f; ++ch) {
        rk[ch] += rt[ch] * c;
        ik[ch] -= rt[ch] * s;
      }
    }
  }
  const double norm = 1.0 / (static_cast<double>(k_bins) * f);
  double total = 0.0;
  Mat mag(k_bins, f);
  for (int k = 0; k < k_bins; ++k) {
    const double weight = std::log(1.0 + 9.0 * static_cast<double>(k) / (k_bins - 1));
    for (int ch = 0; ch < f; ++ch) {
      const double m = std::hypot(re.at(k, ch), im.at(k, ch));
      mag.at(k, ch) = m;
      total += weight * m;
    }
  }
  if (with_grad) {
    for (int k = 1; k < k_bins; ++k) {  // DC bin has zero weight
      const double weight = std::log(1.0 + 9.0 * static_cast<double>(k) / (k_bins - 1));
      for (int t = 0; t < n; ++t) {
        const double angle = kTwoPi * k * t / n;
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        double* g = dresid.row(t);
        for (int ch = 0; ch < f; ++ch) {
          const double m = mag.at(k, ch);
          if (m <= 0.0) continue;
          g[ch] += upstream * norm * weight * (re.at(k, ch) * c - im.at(k, ch) * s) / m;
        }
      }
    }
  }
  return total * norm;
}

}  // namespace motun::losses

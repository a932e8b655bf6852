#pragma once

#include <vector>

#include "motun/mat.hpp"
#include "motun/motion.hpp"

namespace motun::losses {

struct LossWeights {
  double lambda_mpjpe = 1.0;
  double lambda_vel = 1.0;
  double lambda_acc = 0.5;
  double lambda_foot = 0.5;
  double lambda_text = 0.1;
  double w_harm = 1.0;
  double w_dec = 0.5;
  double w_pres = 0.1;
  double gamma = 0.5;
  double tau = 0.07;
  double eps = 1e-8;

  void validate() const;
};

// Every loss below is masked: only the valid prefix of a sequence
// contributes, so padded frames never change a value bit.
// Gradient overloads accumulate upstream * d(loss)/d(pred) into dpred.

/// Mean per-frame joint-position error over the j_p block.
double mpjpe(const motion::MotionSequence& pred, const motion::MotionSequence& tgt,
             double eps = 1e-8);
double mpjpe(const motion::MotionSequence& pred, const motion::MotionSequence& tgt, double eps,
             double upstream, Mat& dpred);

/// First-difference error over the full pose vector plus the spectral
/// emphasis on high-frequency residual bins.
double vel_loss(const motion::MotionSequence& pred, const motion::MotionSequence& tgt,
                double eps = 1e-8);
double vel_loss(const motion::MotionSequence& pred, const motion::MotionSequence& tgt, double eps,
                double upstream, Mat& dpred);

/// Second-difference analogue of vel_loss.
double acc_loss(const motion::MotionSequence& pred, const motion::MotionSequence& tgt,
                double eps = 1e-8);
double acc_loss(const motion::MotionSequence& pred, const motion::MotionSequence& tgt, double eps,
                double upstream, Mat& dpred);

/// Mean absolute per-step velocity of the foot-joint position channels.
double foot_loss(const motion::MotionSequence& pred, double eps = 1e-8);
double foot_loss(const motion::MotionSequence& pred, double eps, double upstream, Mat& dpred);

/// Symmetric InfoNCE between matched text/motion feature rows.
double text_motion_loss(const Mat& e_t, const Mat& e_m, double tau);
double text_motion_loss(const Mat& e_t, const Mat& e_m, double tau, double upstream, Mat* de_t,
                        Mat* de_m);

double harm_loss(const motion::MotionSequence& pred, const motion::MotionSequence& tgt,
                 const Mat& e_t, const Mat& e_m, const LossWeights& w);

double dec_loss(const motion::MotionSequence& pred_mix, const motion::MotionSequence& tgt_dec,
                const LossWeights& w);
double dec_loss(const motion::MotionSequence& pred_mix, const motion::MotionSequence& tgt_dec,
                const LossWeights& w, double upstream, Mat& dpred);

/// Negative preservation divergence between current and frozen-base pooled
/// features on the main and decoupled branches. Nonpositive by construction.
double pres_divergence(const std::vector<double>& z_cur, const std::vector<double>& z_base,
                       const std::vector<double>& z_cur_dec,
                       const std::vector<double>& z_base_dec, double gamma);
double pres_divergence(const std::vector<double>& z_cur, const std::vector<double>& z_base,
                       const std::vector<double>& z_cur_dec,
                       const std::vector<double>& z_base_dec, double gamma, double upstream,
                       std::vector<double>* dz_cur, std::vector<double>* dz_cur_dec);

/// Mask-weighted temporal mean of the predicted channels.
std::vector<double> pool(const motion::MotionSequence& m, double eps = 1e-8);
void pool_backward(const motion::MotionSequence& m, const std::vector<double>& dz, double eps,
                   Mat& dpred);

/// Spectral emphasis of a residual signal (rows = time, cols = channels):
/// mean over rFFT bins and channels of |X_k| * log(1 + 9k/(K-1)).
double spectral_emphasis(const Mat& resid);
double spectral_emphasis(const Mat& resid, double upstream, Mat& dresid);

}  // namespace motun::losses

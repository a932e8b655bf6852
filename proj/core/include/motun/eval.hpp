#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "motun/mat.hpp"
#include "motun/model.hpp"
#include "motun/motion.hpp"

namespace motun::eval {

/// Small text/motion encoders mapping both modalities into one latent space:
/// motion goes pooled-mean -> 2-layer map, text goes bag-of-tokens -> 2-layer
/// map, both L2-normalized. Trained contrastively on matched pairs.
struct FeatureExtractors {
  int feature_dim = 32;
  int hidden = 64;
  model::Vocab vocab;
  int frame_width = 0;
  io::NamedTensors tensors;

  std::vector<double> encode_text(const std::vector<std::string>& caption) const;
  std::vector<double> encode_motion(const motion::MotionSequence& m) const;
};

struct MotionEncodeCache {
  std::vector<double> pooled, pre, hid, raw;
  double norm = 0.0;
};

std::vector<double> encode_motion_cached(const FeatureExtractors& ex,
                                         const motion::MotionSequence& m,
                                         MotionEncodeCache& cache);
/// Accumulates d(loss)/d(motion frames) for the cached encoding.
void encode_motion_backward(const FeatureExtractors& ex, const motion::MotionSequence& m,
                            const MotionEncodeCache& cache, const std::vector<double>& d_feature,
                            Mat& d_frames);

struct ExtractorTrainConfig {
  int steps = 800;
  int batch = 16;
  double lr = 2e-3;
  double tau = 0.07;
  int feature_dim = 32;
  int hidden = 64;
};

/// Deterministic contrastive training on the corpus; entries are canonically
/// ordered by id first so the result does not depend on input order.
FeatureExtractors train_extractors(const std::vector<motion::CorpusEntry>& corpus, uint64_t seed,
                                   const ExtractorTrainConfig& cfg = {});

struct GaussianStats {
  std::vector<double> mean;
  std::vector<double> cov;  // d x d row-major, symmetric PSD after fitting
  int dim = 0;
};

/// Fits mean and unbiased covariance; adds 1e-6 * I so the square root in
/// the Frechet distance stays well-defined.
GaussianStats fit_gaussian(const std::vector<std::vector<double>>& features);

/// Frechet distance between two Gaussians. The matrix square root uses a
/// symmetric eigendecomposition of sqrt(Sa) Sb sqrt(Sa) with negative
/// eigenvalues clamped at zero.
double fid(const GaussianStats& a, const GaussianStats& b);

struct FeaturePair {
  std::vector<double> e_t;
  std::vector<double> e_m;
};

/// Top-k retrieval accuracy of the true caption among 31 seeded negatives
/// drawn from the query pool; ties rank negatives first.
double r_precision(const std::vector<FeaturePair>& queries, int k, uint64_t seed);

/// Same ranking restricted to a subset of queries; negatives still come from
/// the whole pool.
double r_precision_subset(const std::vector<FeaturePair>& pool, const std::vector<size_t>& queries,
                          int k, uint64_t seed);

/// Mean cross-half feature distance over a seeded disjoint split.
double diversity(const std::vector<std::vector<double>>& features, int m_d, uint64_t seed);

struct FootSlipReport {
  std::vector<double> per_motion;
  double mean = 0.0;
  double max = 0.0;
  double contact_mean = 0.0;
};

FootSlipReport foot_slip_report(const std::vector<motion::MotionSequence>& motions);

/// Mean per-frame L2 error between a generated continuation and the ground
/// truth, over the frames following the conditioning prefix.
double reconstruction_error(const motion::MotionSequence& generated,
                            const motion::MotionSequence& truth, int prefix_len);

struct MetricSummary {
  double mean = 0.0;
  double half_width = 0.0;  // 1.96 * sd / sqrt(n)
};

MetricSummary summarize(const std::vector<double>& values);

/// Symmetric eigendecomposition by cyclic Jacobi rotations. `a` is d x d
/// row-major; eigenvectors come back as columns of `vecs`.
void jacobi_eigen(std::vector<double> a, int d, std::vector<double>& values,
                  std::vector<double>& vecs);

}  // namespace motun::eval

#pragma once

#include <functional>
#include <vector>

#include "motun/eval.hpp"
#include "motun/lora.hpp"
#include "motun/losses.hpp"
#include "motun/model.hpp"
#include "motun/safety.hpp"

namespace motun::unlearn {

struct Stage1Config {
  losses::LossWeights weights;
  int batch_unsafe = 4;
  int batch_safe = 2;
  int steps = 2000;
  double lr = 1e-3;
  double clip = 1.0;
  uint64_t seed = 0;
  lora::LoraConfig lora;
  int checkpoint_cadence = 500;
  int crop_cap = 24;
  int threads = 1;

  void validate() const;
};

/// One line of the training log: stream losses, the per-term values of the
/// unsafe stream, and the mean distance between current and frozen-base
/// pooled features on the safe stream.
struct StepRecord {
  int step = 0;
  double l_harm = 0.0;
  double l_dec = 0.0;
  double l_pres = 0.0;
  double term_mpjpe = 0.0;
  double term_vel = 0.0;
  double term_acc = 0.0;
  double term_foot = 0.0;
  double term_text = 0.0;
  double z_dist = 0.0;
};

struct AbsorbResult {
  lora::AdapterSet adapters;
  lora::TaskVector task_vector;
  std::vector<StepRecord> log;
};

using CheckpointSink = std::function<void(int step, const lora::AdapterSet&)>;

/// Harmful-knowledge absorption: per step, the unsafe stream trains the
/// adapters toward unsafe reconstruction (plus the decoupled variant), while
/// the safe stream maximizes divergence of pooled features from the frozen
/// base. Only adapter parameters move; a content hash guards the backbone.
AbsorbResult absorb(const model::DenoiserParams& base,
                    const std::vector<motion::CorpusEntry>& corpus, const Stage1Config& cfg,
                    const model::DiffusionSchedule& sched,
                    const CheckpointSink* checkpoint_sink = nullptr);

/// Stage-2 negation followed by sampling: scale from the policy and the
/// prompt's toxicity level, merge theta0 - alpha * dtheta, then sample a
/// continuation of the given prefix.
motion::MotionSequence negate_and_sample(const model::DenoiserParams& base,
                                         const lora::TaskVector& tv,
                                         const lora::NegationPolicy& policy,
                                         const std::vector<std::string>& prompt, int level,
                                         const Mat& prefix, uint64_t seed,
                                         const model::DiffusionSchedule& sched);

struct GenerationEval {
  std::vector<double> recon_errors;              // vs family ground truth
  std::vector<std::vector<double>> gen_features;  // of the generated region
  std::vector<std::vector<double>> ref_features;  // of the matching truth region
  std::vector<eval::FeaturePair> pairs;           // caption feature vs generated feature
  std::vector<motion::MotionSequence> motions;
};

/// Samples one continuation per entry under the policy (level from the rules
/// classifier), then collects reconstruction errors and latent features.
/// Passing a null task vector evaluates the base model unchanged.
GenerationEval evaluate_generation(const model::DenoiserParams& base, const lora::TaskVector* tv,
                                   const lora::NegationPolicy& policy,
                                   const std::vector<const motion::CorpusEntry*>& entries,
                                   const eval::FeatureExtractors& extractors,
                                   const safety::LemmaList& lemmas, uint64_t seed,
                                   const model::DiffusionSchedule& sched, int threads);

/// All-valid view of the frames after the conditioning prefix.
motion::MotionSequence suffix_motion(const motion::MotionSequence& m, int prefix_len);

}  // namespace motun::unlearn

#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "motun/io.hpp"
#include "motun/mat.hpp"
#include "motun/motion.hpp"

namespace motun::lora {
struct AdapterSet;
}

namespace motun::model {

struct ModelConfig {
  int joints = 4;
  int latent = 64;
  int layers = 2;
  int heads = 2;
  int ffn_hidden = 128;
  int diffusion_steps = 10;
  int prefix_len = 20;  // Np
  int gen_len = 40;     // Ng

  int frame_width() const { return motion::pose_layout(joints).frame_width; }
  void validate() const;

  static ModelConfig toy();
  /// Full-scale decoder shape (8 layers, 512 latent, 4 heads, 22 joints).
  static ModelConfig full();
};

/// Token table shared by the denoiser's text encoder; id 0 is reserved for
/// unknown tokens.
struct Vocab {
  std::vector<std::string> tokens{"<unk>"};
  std::unordered_map<std::string, int> index{{"<unk>", 0}};

  int id(const std::string& tok) const;
  int add(const std::string& tok);
  int size() const { return static_cast<int>(tokens.size()); }
  static Vocab build(const std::vector<motion::CorpusEntry>& corpus);
};

struct DiffusionSchedule {
  int steps = 0;
  std::vector<double> alpha_bar;  // strictly decreasing, in (0,1], index 0 maximal

  static DiffusionSchedule cosine(int steps);
  void validate() const;
};

/// Named-parameter registry for the denoiser. Layer sites are addressed as
/// layers.<l>.<block>.<tensor>; everything is float32 on the wire.
struct DenoiserParams {
  ModelConfig config;
  Vocab vocab;
  io::NamedTensors tensors;

  static DenoiserParams init(const ModelConfig& cfg, const Vocab& vocab, uint64_t seed);
  /// Adapter injection sites, in registry order: per layer the cross-attention
  /// output projection and both feed-forward projections.
  std::vector<std::string> adapter_sites() const;
};

void save_model(const std::filesystem::path& path, const DenoiserParams& p);
DenoiserParams load_model(const std::filesystem::path& path);

// --- forward/backward machinery ---------------------------------------

struct GradMap {
  std::unordered_map<std::string, Mat> g;
  Mat& at(const std::string& name, int rows, int cols);
  const Mat* find(const std::string& name) const;
  void add_scaled(const GradMap& other, double scale);
  double l2_norm() const;
  bool finite() const;
};

enum class GradScope { all, adapters_only };

struct TextCache {
  std::vector<int> ids;
  Mat embedded;  // N x d rows gathered from the table
};

/// Per-token learned embeddings followed by a learned linear map to the
/// model latent size.
Mat encode_text(const DenoiserParams& p, const std::vector<std::string>& caption);
Mat encode_text(const DenoiserParams& p, const std::vector<std::string>& caption, TextCache& cache);
void encode_text_backward(const DenoiserParams& p, const TextCache& cache, const Mat& d_out,
                          GradMap& grads);

struct LayerCache {
  Mat ln1_in, ln1_out, ln2_in, ln2_out, ln3_in, ln3_out;
  std::vector<double> ln1_rstd, ln2_rstd, ln3_rstd;
  Mat q, k, v;              // self attention, S x d
  std::vector<Mat> attn;    // per head, S x S
  Mat attn_cat;             // S x d, input of the self out projection
  Mat cq;                   // S x d
  Mat ck, cv;               // N x d
  std::vector<Mat> cattn;   // per head, S x N
  Mat cattn_cat;            // S x d, input of the cross out projection
  Mat ffn_pre, ffn_act;     // S x hidden
  // LoRA intermediates keyed by site name: dropped-out input, its dropout
  // multipliers, and the A-projection.
  std::unordered_map<std::string, Mat> lora_in, lora_mult, lora_u;
};

struct ForwardCache {
  int valid = 0;       // valid motion frames
  int seq = 0;         // prefix + valid tokens
  int t_step = 0;
  Mat x_proj_in;       // valid x F motion rows fed to the input projection
  Mat prefix_in;       // Np x F
  Mat time_feat;       // 1 x d sinusoidal basis
  Mat h0;              // S x d, pre-layer activations
  std::vector<LayerCache> layers;
  std::vector<Mat> layer_in;  // activation entering each layer
  Mat final_ln_in, final_ln_out;
  std::vector<double> final_rstd;
  Mat ctx;             // N x d cross-attention memory
};

/// Predicts clean motion from the noisy input, the diffusion step and the
/// text/prefix condition. Deterministic; padded frames come back zeroed with
/// the input mask. Adapters, when given, contribute scale * (alpha/r) * B A x
/// at their sites; dropout is applied only when `dropout_rng` is non-null.
motion::MotionSequence forward(const DenoiserParams& p, const motion::MotionSequence& x_t,
                               int t_step, const motion::TextCondition& cond,
                               const lora::AdapterSet* adapters = nullptr,
                               double adapter_scale = 1.0);
motion::MotionSequence forward(const DenoiserParams& p, const motion::MotionSequence& x_t,
                               int t_step, const motion::TextCondition& cond,
                               const lora::AdapterSet* adapters, double adapter_scale,
                               ForwardCache& cache, uint64_t* dropout_seed);

/// Backpropagates d(loss)/d(prediction) through the cached forward pass.
/// Gradients for parameter sites are accumulated into `grads` according to
/// `scope`; the returned matrix is d(loss)/d(ctx) for the text encoder.
Mat backward(const DenoiserParams& p, const lora::AdapterSet* adapters, double adapter_scale,
             const ForwardCache& cache, const motion::MotionSequence& x_t, const Mat& d_pred,
             GradScope scope, GradMap& grads);

/// Forward diffusion: sqrt(a_bar_t) x0 + sqrt(1 - a_bar_t) noise on the valid
/// span; padded frames are copied unchanged.
motion::MotionSequence q_sample(const motion::MotionSequence& x0, int t_step, const Mat& noise,
                                const DiffusionSchedule& sched);

struct SampleResult {
  motion::MotionSequence motion;  // prefix followed by generated frames
  int forward_calls = 0;
};

/// DDPM-style sampling with a clean-motion prediction head: start from
/// Gaussian noise, predict x0, re-noise to the next level each step.
SampleResult sample(const DenoiserParams& p, const motion::TextCondition& cond, int gen_len,
                    uint64_t seed, const DiffusionSchedule& sched,
                    const lora::AdapterSet* adapters = nullptr, double adapter_scale = 1.0);

// --- base-model training ------------------------------------------------

struct TrainBaseConfig {
  int steps = 5000;
  int batch = 4;
  double lr = 1e-3;
  double clip = 1.0;
  int crop_cap = 24;  // max trained frames after the prefix
  uint64_t seed = 0;
  int threads = 1;
};

struct TrainRecord {
  int step = 0;
  double loss = 0.0;
};

/// Denoising regression of the clean motion (masked per-frame L2 over all
/// channels) with Adam. Returns the per-step loss log.
std::vector<TrainRecord> train_base(DenoiserParams& p, const std::vector<motion::CorpusEntry>& corpus,
                                    const TrainBaseConfig& cfg, const DiffusionSchedule& sched);

/// Training window of a motion: condition prefix and the clean target region
/// immediately after it, both all-valid crops of the source's valid span.
struct TrainingItem {
  Mat prefix;  // Np x F
  motion::MotionSequence x0;
  int offset = 0;
};
TrainingItem make_training_item(const motion::MotionSequence& m, int prefix_len, int crop_cap,
                                int offset);
int max_item_offset(const motion::MotionSequence& m, int prefix_len, int crop_cap);

}  // namespace motun::model

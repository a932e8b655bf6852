#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "motun/common.hpp"
#include "motun/mat.hpp"

namespace motun::motion {

/// Channel map of the pose representation. A frame stacks, in order:
/// root angular velocity (1), root linear velocity x/z (2), root height (1),
/// local joint positions 3(J-1), joint rotations in 6D form 6(J-1),
/// joint velocities 3J, and four binary foot-contact labels.
struct PoseLayout {
  int joint_count = 0;
  int root_ang = 0;     // width 1
  int root_lin = 1;     // width 2
  int root_height = 3;  // width 1
  int jp_offset = 4;
  int jp_width = 0;
  int jr_offset = 0;
  int jr_width = 0;
  int jv_offset = 0;
  int jv_width = 0;
  int contact_offset = 0;
  int contact_width = 4;
  int frame_width = 0;
  std::array<int, 4> foot_joints{};

  /// Position channels of joint j: the j_p block for non-root joints, the
  /// root linear-velocity/height channels for joint 0. Always width 3.
  int joint_position_offset(int j) const;
};

PoseLayout pose_layout(int joint_count);

/// Frame-major motion with a prefix validity mask (once false, stays false).
struct MotionSequence {
  Mat frames;  // T x F
  std::vector<uint8_t> mask;
  PoseLayout layout;

  int length() const { return frames.rows; }
  int width() const { return frames.cols; }
  int valid_count() const;
};

/// Throws unless the mask is a prefix mask and all frame values are finite.
void validate(const MotionSequence& m);

/// Text-and-prefix conditioning for the denoiser: projected token embeddings
/// plus the first Np motion frames of the target being continued.
struct TextCondition {
  Mat tokens;  // N_tokens x d
  Mat prefix;  // Np x F
  int prefix_len() const { return prefix.rows; }
};

enum class DecoupleMode { segment_shuffle, time_reverse };

/// Temporal decoupling over the valid span: shuffle four near-equal segments
/// by a uniformly drawn non-identity permutation, or reverse the span.
/// Mask and padded frames are untouched.
MotionSequence decouple(const MotionSequence& x, DecoupleMode mode, uint64_t seed);

/// Replaces the condition's motion prefix with the target's first Np valid
/// frames; text tokens pass through unchanged.
TextCondition sync_prefix(const TextCondition& cond, const MotionSequence& target, int np);

struct CorpusEntry {
  std::string id;
  std::vector<std::string> caption;  // lowercase tokens
  int level = 1;                     // 1 safe, 2 risky, 3 unsafe
  MotionSequence motion;
  bool forget = false;  // forget vs retain
  bool seen = true;     // seen vs unseen
  std::string family;
};

/// Deterministic synthetic corpus: two safe families (walk, wave) and two
/// unsafe ones (punch, kick), per_class entries each. Safe entries are level
/// 1 / retain, unsafe level 3 / forget; seen/unseen comes from a hash of the
/// entry id. Frame values are quantized through float32 so in-memory and
/// on-disk corpora agree bit for bit.
std::vector<CorpusEntry> synth_corpus(uint64_t seed, int per_class);

const std::vector<std::string>& family_names();

std::string join_tokens(const std::vector<std::string>& tokens);
std::vector<std::string> tokenize(const std::string& text);

}  // namespace motun::motion

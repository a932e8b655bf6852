#include "motun/motion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "motun/rng.hpp"

namespace motun::motion {

int PoseLayout::joint_position_offset(int j) const {
  if (j == 0) return root_lin;  // r_x, r_z, r_y form the root position block
  return jp_offset + 3 * (j - 1);
}

PoseLayout pose_layout(int joint_count) {
  require(joint_count >= 2, Errc::invalid_skeleton,
          "pose layout needs at least 2 joints, got " + std::to_string(joint_count));
  PoseLayout l;
  l.joint_count = joint_count;
  l.jp_width = 3 * (joint_count - 1);
  l.jr_offset = l.jp_offset + l.jp_width;
  l.jr_width = 6 * (joint_count - 1);
  l.jv_offset = l.jr_offset + l.jr_width;
  l.jv_width = 3 * joint_count;
  l.contact_offset = l.jv_offset + l.jv_width;
  l.frame_width = l.contact_offset + l.contact_width;
  // Feet default to the last four joints (wrapping into the root for tiny rigs).
  for (int i = 0; i < 4; ++i) l.foot_joints[i] = std::max(0, joint_count - 4 + i);
  return l;
}

int MotionSequence::valid_count() const {
  int n = 0;
  while (n < static_cast<int>(mask.size()) && mask[n]) ++n;
  return n;
}

void validate(const MotionSequence& m) {
  require(static_cast<int>(m.mask.size()) == m.frames.rows, Errc::model_contract,
          "mask length does not match frame count");
  require(m.frames.cols == m.layout.frame_width, Errc::model_contract,
          "frame width does not match layout");
  bool seen_false = false;
  for (uint8_t b : m.mask) {
    if (!b) seen_false = true;
    else
      require(!seen_false, Errc::model_contract, "mask is not a prefix mask");
  }
  require(all_finite(m.frames), Errc::model_contract, "non-finite frame value");
}

namespace {

// Lexicographic unranking of a permutation of k elements.
std::vector<int> unrank_permutation(int k, uint64_t rank) {
  std::vector<int> pool(k);
  for (int i = 0; i < k; ++i) pool[i] = i;
  std::vector<uint64_t> fact(k, 1);
  for (int i = 1; i < k; ++i) fact[i] = fact[i - 1] * i;
  std::vector<int> perm;
  perm.reserve(k);
  for (int i = k - 1; i >= 0; --i) {
    uint64_t f = fact[i];
    int idx = static_cast<int>(rank / f);
    rank %= f;
    perm.push_back(pool[idx]);
    pool.erase(pool.begin() + idx);
  }
  return perm;
}

}  // namespace

MotionSequence decouple(const MotionSequence& x, DecoupleMode mode, uint64_t seed) {
  const int n = x.valid_count();
  require(n >= 2, Errc::decouple_degenerate,
          "decouple needs at least 2 valid frames, got " + std::to_string(n));
  MotionSequence out = x;
  const int f = x.width();
  if (mode == DecoupleMode::time_reverse) {
    for (int t = 0; t < n; ++t)
      std::copy(x.frames.row(n - 1 - t), x.frames.row(n - 1 - t) + f, out.frames.row(t));
    return out;
  }
  const int k = std::min(4, n);
  // Near-equal segment sizes; the remainder goes to the leading segments.
  std::vector<int> sizes(k, n / k);
  for (int i = 0; i < n % k; ++i) ++sizes[i];
  std::vector<int> starts(k, 0);
  for (int i = 1; i < k; ++i) starts[i] = starts[i - 1] + sizes[i - 1];
  uint64_t n_perms = 1;
  for (int i = 2; i <= k; ++i) n_perms *= i;
  Rng rng(derive_seed(seed, "decouple"));
  // Rank 0 is the identity; draw uniformly from the remaining permutations.
  uint64_t rank = 1 + rng.uniform_index(n_perms - 1);
  std::vector<int> perm = unrank_permutation(k, rank);
  int t = 0;
  for (int s = 0; s < k; ++s) {
    const int src = perm[s];
    for (int i = 0; i < sizes[src]; ++i, ++t)
      std::copy(x.frames.row(starts[src] + i), x.frames.row(starts[src] + i) + f,
                out.frames.row(t));
  }
  return out;
}

TextCondition sync_prefix(const TextCondition& cond, const MotionSequence& target, int np) {
  require(np >= 0, Errc::prefix_too_long, "negative prefix length");
  require(target.valid_count() >= np, Errc::prefix_too_long,
          "prefix length " + std::to_string(np) + " exceeds valid length " +
              std::to_string(target.valid_count()));
  TextCondition out;
  out.tokens = cond.tokens;
  out.prefix = Mat(np, target.width());
  for (int t = 0; t < np; ++t)
    std::copy(target.frames.row(t), target.frames.row(t) + target.width(), out.prefix.row(t));
  return out;
}

namespace {

constexpr int kCorpusJoints = 4;
constexpr int kStoredLen = 64;
constexpr int kMinValid = 48;

float q32(double v) { return static_cast<float>(v); }

const std::vector<std::vector<std::string>>& caption_templates(const std::string& family) {
  static const std::vector<std::vector<std::string>> walk = {
      tokenize("a person walks forward at a steady pace"),
      tokenize("a man walks ahead slowly"),
      tokenize("someone walks across the room"),
      tokenize("the person strolls forward calmly"),
  };
  static const std::vector<std::vector<std::string>> wave = {
      tokenize("a person waves with his right hand"),
      tokenize("someone waves hello cheerfully"),
      tokenize("a man raises his arm and waves"),
      tokenize("the person waves at a friend"),
  };
  static const std::vector<std::vector<std::string>> punch = {
      tokenize("a man punches someone with his right fist"),
      tokenize("a person punches forward quickly"),
      tokenize("the fighter punches the air repeatedly"),
      tokenize("someone throws a punch at the bag"),
  };
  static const std::vector<std::vector<std::string>> kick = {
      tokenize("a person kicks with his left leg"),
      tokenize("the man kicks forward aggressively"),
      tokenize("someone kicks the target hard"),
      tokenize("a fighter kicks at waist height"),
  };
  if (family == "walk") return walk;
  if (family == "wave") return wave;
  if (family == "punch") return punch;
  return kick;
}

// Smooth periodic bump in [0,1]: peaks once per period at phase p0.
double bump(double phase) {
  double c = std::cos(phase);
  return std::exp(4.0 * (c - 1.0));
}

MotionSequence make_family_motion(const std::string& family, const PoseLayout& layout, Rng& rng,
                                  int valid_len) {
  const int f = layout.frame_width;
  MotionSequence m;
  m.layout = layout;
  m.frames = Mat(kStoredLen, f);
  m.mask.assign(kStoredLen, 0);
  for (int t = 0; t < valid_len; ++t) m.mask[t] = 1;

  const double omega = rng.uniform(0.30, 0.42);  // gait/gesture frequency
  const double phase0 = rng.uniform(0.0, 6.28318);
  const double amp = rng.uniform(0.85, 1.15);
  const double speed = rng.uniform(0.04, 0.08);
  const double height = rng.uniform(0.85, 0.95);

  Mat raw(kStoredLen, f);
  for (int t = 0; t < valid_len; ++t) {
    double* row = raw.row(t);
    const double ph = omega * t + phase0;
    row[layout.root_height] = height;
    // Near-identity 6D rotations with a slow wobble per joint.
    for (int j = 0; j < layout.joint_count - 1; ++j) {
      double* rj = row + layout.jr_offset + 6 * j;
      rj[0] = 1.0 + 0.05 * amp * std::sin(0.5 * ph + j);
      rj[1] = 0.05 * amp * std::cos(0.5 * ph + j);
      rj[4] = 1.0;
    }
    double* jp = row + layout.jp_offset;  // joints 1..3, 3 channels each
    double* contacts = row + layout.contact_offset;
    if (family == "walk") {
      row[layout.root_lin] = speed;
      // joint 1 = arm, joints 2/3 = legs in antiphase
      jp[0] = 0.25 * amp * std::sin(ph + 3.14159);
      jp[1] = 0.55;
      jp[3] = 0.0;
      jp[4] = 0.12 * amp * (0.5 + 0.5 * std::sin(ph));
      jp[5] = 0.30 * amp * std::sin(ph);
      jp[6] = 0.0;
      jp[7] = 0.12 * amp * (0.5 + 0.5 * std::sin(ph + 3.14159));
      jp[8] = 0.30 * amp * std::sin(ph + 3.14159);
      // A foot is planted while its swing is low.
      contacts[0] = contacts[1] = std::sin(ph) < 0 ? 1.0 : 0.0;
      contacts[2] = contacts[3] = std::sin(ph + 3.14159) < 0 ? 1.0 : 0.0;
    } else if (family == "wave") {
      jp[0] = 0.20 * amp * std::cos(1.5 * ph);
      jp[1] = 0.65 + 0.25 * amp * std::sin(1.5 * ph);
      jp[2] = 0.10 * amp * std::sin(1.5 * ph + 0.7);
      jp[4] = 0.08;
      jp[7] = 0.08;
      contacts[0] = contacts[1] = contacts[2] = contacts[3] = 1.0;
    } else if (family == "punch") {
      const double b = bump(0.45 * ph);
      row[layout.root_lin] = 0.10 * amp * b;
      jp[0] = 0.10 * amp;
      jp[1] = 0.50;
      jp[2] = 0.85 * amp * b;  // ballistic forward reach
      jp[4] = 0.05;
      jp[7] = 0.05;
      contacts[0] = contacts[1] = contacts[2] = contacts[3] = 1.0;
    } else {  // kick
      const double b = bump(0.40 * ph);
      jp[0] = 0.12 * amp;
      jp[1] = 0.55;
      jp[6] = 0.10 * amp;
      jp[7] = 0.35 * amp * b;
      jp[8] = 0.90 * amp * b;  // leg spike
      contacts[0] = contacts[1] = 1.0;
      // Contact breaks while the kicking leg is airborne.
      contacts[2] = contacts[3] = b > 0.2 ? 0.0 : 1.0;
    }
  }
  // Joint velocities are forward differences of the position blocks.
  for (int t = 0; t < valid_len; ++t) {
    double* row = raw.row(t);
    const double* prev = raw.row(t > 0 ? t - 1 : t);
    for (int j = 0; j < layout.joint_count; ++j) {
      const int src = layout.joint_position_offset(j);
      double* jv = row + layout.jv_offset + 3 * j;
      for (int c = 0; c < 3; ++c)
        jv[c] = t > 0 ? (row[src + c] - prev[src + c]) : 0.0;
    }
  }
  // Mild observation noise, then quantize all channels through float32.
  for (int t = 0; t < valid_len; ++t) {
    double* row = raw.row(t);
    double* dst = m.frames.row(t);
    for (int c = 0; c < f; ++c) {
      const bool contact = c >= layout.contact_offset;
      double v = row[c] + (contact ? 0.0 : 0.01 * rng.normal());
      dst[c] = static_cast<double>(q32(v));
    }
  }
  return m;
}

}  // namespace

const std::vector<std::string>& family_names() {
  static const std::vector<std::string> names = {"walk", "wave", "punch", "kick"};
  return names;
}

std::vector<CorpusEntry> synth_corpus(uint64_t seed, int per_class) {
  require(per_class >= 1, Errc::bad_config, "per_class must be >= 1");
  const PoseLayout layout = pose_layout(kCorpusJoints);
  std::vector<CorpusEntry> corpus;
  corpus.reserve(4 * per_class);
  for (size_t fam = 0; fam < family_names().size(); ++fam) {
    const std::string& family = family_names()[fam];
    const bool unsafe = family == "punch" || family == "kick";
    for (int i = 0; i < per_class; ++i) {
      Rng rng(derive_seed(seed, "corpus-" + family, static_cast<uint64_t>(i)));
      CorpusEntry e;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s-%04d", family.c_str(), i);
      e.id = buf;
      e.family = family;
      const auto& templates = caption_templates(family);
      e.caption = templates[rng.uniform_index(templates.size())];
      e.level = unsafe ? 3 : 1;
      e.forget = unsafe;
      e.seen = (derive_seed(0x9e1fu, e.id) & 1) == 0;
      const int valid_len =
          kMinValid + static_cast<int>(rng.uniform_index(kStoredLen - kMinValid + 1));
      e.motion = make_family_motion(family, layout, rng, valid_len);
      corpus.push_back(std::move(e));
    }
  }
  return corpus;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::vector<std::string> tokenize(const std::string& text) {
  // Clause punctuation survives as standalone tokens; everything else is
  // lowercased alphanumerics.
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  };
  for (char raw : text) {
    const auto c = static_cast<unsigned char>(raw);
    if (std::isalnum(c) || raw == '\'') {
      cur += static_cast<char>(std::tolower(c));
    } else if (raw == ',' || raw == ';' || raw == '.' || raw == '!' || raw == '?') {
      flush();
      tokens.push_back(std::string(1, raw == '!' || raw == '?' ? '.' : raw));
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

}  // namespace motun::motion

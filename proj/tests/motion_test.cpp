#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "motun/motion.hpp"
#include "motun/rng.hpp"
#include "test_support.hpp"

using namespace motun;
using namespace motun::motion;

TEST_CASE("pose layout widths") {
  CHECK(pose_layout(22).frame_width == 263);
  CHECK(pose_layout(4).frame_width == 47);
  CHECK_THROWS_AS(pose_layout(1), Error);
  try {
    pose_layout(0);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::invalid_skeleton);
  }
}

TEST_CASE("pose layout spans tile the frame exactly") {
  for (int j : {2, 4, 7, 22}) {
    const auto l = pose_layout(j);
    CHECK(l.root_ang == 0);
    CHECK(l.root_lin == 1);
    CHECK(l.root_height == 3);
    CHECK(l.jp_offset == 4);
    CHECK(l.jr_offset == l.jp_offset + l.jp_width);
    CHECK(l.jv_offset == l.jr_offset + l.jr_width);
    CHECK(l.contact_offset == l.jv_offset + l.jv_width);
    CHECK(l.contact_offset + l.contact_width == l.frame_width);
    CHECK(l.jp_width == 3 * (j - 1));
    CHECK(l.jr_width == 6 * (j - 1));
    CHECK(l.jv_width == 3 * j);
    std::set<int> feet(l.foot_joints.begin(), l.foot_joints.end());
    CHECK(feet.size() == 4);
    for (int fj : feet) CHECK(fj < j);
  }
}

TEST_CASE("synthetic corpus is a pure function of seed and size") {
  const auto a = synth_corpus(7, 8);
  const auto b = synth_corpus(7, 8);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].caption == b[i].caption);
    CHECK(a[i].level == b[i].level);
    CHECK(a[i].motion.frames.v == b[i].motion.frames.v);
    CHECK(a[i].motion.mask == b[i].motion.mask);
  }
  const auto c = synth_corpus(8, 8);
  bool any_diff = false;
  for (size_t i = 0; i < a.size() && !any_diff; ++i)
    any_diff = a[i].motion.frames.v != c[i].motion.frames.v;
  CHECK(any_diff);
}

TEST_CASE("family labels and splits are by construction") {
  const auto corpus = synth_corpus(3, 16);
  CHECK(corpus.size() == 64);
  std::map<std::string, int> level_of = {{"walk", 1}, {"wave", 1}, {"punch", 3}, {"kick", 3}};
  int seen = 0;
  for (const auto& e : corpus) {
    CHECK(e.level == level_of.at(e.family));
    CHECK(e.forget == (e.level == 3));
    motion::validate(e.motion);  // prefix mask + finiteness invariants
    CHECK(e.motion.valid_count() >= 48);
    seen += e.seen ? 1 : 0;
  }
  CHECK(seen > 8);
  CHECK(seen < 56);
  CHECK_THROWS_AS(synth_corpus(1, 0), Error);
}

TEST_CASE("time reversal is an involution on the valid span") {
  for (int i = 0; i < 20; ++i) {
    Rng rng(derive_seed(40, "rev", i));
    const int valid = 2 + static_cast<int>(rng.uniform_index(9));
    auto m = testsup::random_motion(rng, 10, 4, valid);
    const auto once = decouple(m, DecoupleMode::time_reverse, 123);
    const auto twice = decouple(once, DecoupleMode::time_reverse, 456);
    CHECK(twice.frames.v == m.frames.v);
    CHECK(twice.mask == m.mask);
  }
}

TEST_CASE("segment shuffle preserves the frame multiset and the padding") {
  for (int i = 0; i < 40; ++i) {
    Rng rng(derive_seed(41, "shuf", i));
    const int valid = 2 + static_cast<int>(rng.uniform_index(9));
    auto m = testsup::random_motion(rng, 10, 4, valid);
    const auto mode = i % 2 ? DecoupleMode::segment_shuffle : DecoupleMode::time_reverse;
    const auto out = decouple(m, mode, derive_seed(41, "s", i));
    CHECK(out.mask == m.mask);
    auto key = [&](const MotionSequence& s, int t) {
      return std::vector<double>(s.frames.row(t), s.frames.row(t) + s.width());
    };
    std::vector<std::vector<double>> in_rows, out_rows;
    for (int t = 0; t < valid; ++t) {
      in_rows.push_back(key(m, t));
      out_rows.push_back(key(out, t));
    }
    std::sort(in_rows.begin(), in_rows.end());
    std::sort(out_rows.begin(), out_rows.end());
    CHECK(in_rows == out_rows);
    // Padded rows are untouched.
    for (int t = valid; t < 10; ++t) CHECK(key(out, t) == key(m, t));
  }
}

TEST_CASE("segment shuffle draws a reproducible non-identity permutation") {
  // T_valid = 8 with K = 4 gives segments [0,2) [2,4) [4,6) [6,8); tag each
  // segment by a constant so the applied permutation is readable.
  auto m = testsup::blank_motion(8, 4, 8);
  for (int t = 0; t < 8; ++t) m.frames.at(t, 0) = static_cast<double>(t / 2);
  const auto out = decouple(m, DecoupleMode::segment_shuffle, 2024);
  std::vector<int> perm;
  for (int t = 0; t < 8; t += 2) perm.push_back(static_cast<int>(out.frames.at(t, 0)));
  // Reproducible under the same seed.
  const auto again = decouple(m, DecoupleMode::segment_shuffle, 2024);
  CHECK(again.frames.v == out.frames.v);
  // Non-identity and a true permutation of {0,1,2,3}.
  std::vector<int> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{0, 1, 2, 3});
  CHECK(perm != std::vector<int>{0, 1, 2, 3});
  // Both shuffled halves keep their two frames adjacent.
  for (int s = 0; s < 4; ++s)
    CHECK(out.frames.at(2 * s, 0) == out.frames.at(2 * s + 1, 0));
}

TEST_CASE("shuffle covers many permutations but never the identity") {
  auto m = testsup::blank_motion(8, 4, 8);
  for (int t = 0; t < 8; ++t) m.frames.at(t, 0) = static_cast<double>(t / 2);
  std::set<std::vector<int>> seen;
  for (int i = 0; i < 300; ++i) {
    const auto out = decouple(m, DecoupleMode::segment_shuffle, derive_seed(42, "p", i));
    std::vector<int> perm;
    for (int t = 0; t < 8; t += 2) perm.push_back(static_cast<int>(out.frames.at(t, 0)));
    CHECK(perm != std::vector<int>{0, 1, 2, 3});
    seen.insert(perm);
  }
  CHECK(seen.size() == 23);  // all non-identity permutations of 4 segments
}

TEST_CASE("decouple rejects degenerate spans") {
  auto m = testsup::blank_motion(4, 4, 1);
  CHECK_THROWS_AS(decouple(m, DecoupleMode::time_reverse, 1), Error);
}

TEST_CASE("sync prefix carries the target's first frames") {
  Rng rng(50);
  auto target = testsup::random_motion(rng, 12, 4, 10);
  TextCondition cond;
  cond.tokens = Mat(3, 8);
  for (double& v : cond.tokens.v) v = rng.normal();
  cond.prefix = Mat(4, target.width());
  for (double& v : cond.prefix.v) v = rng.normal();

  const auto synced = sync_prefix(cond, target, 4);
  CHECK(synced.tokens.v == cond.tokens.v);
  for (int t = 0; t < 4; ++t)
    for (int c = 0; c < target.width(); ++c)
      CHECK(synced.prefix.at(t, c) == target.frames.at(t, c));

  // Identity when the prefix already comes from the same motion.
  TextCondition ident;
  ident.tokens = cond.tokens;
  ident.prefix = synced.prefix;
  const auto resynced = sync_prefix(ident, target, 4);
  CHECK(resynced.prefix.v == ident.prefix.v);

  // Reversed target: prefix equals the last valid frames, reversed.
  const auto rev = decouple(target, DecoupleMode::time_reverse, 7);
  const auto synced_rev = sync_prefix(cond, rev, 4);
  for (int t = 0; t < 4; ++t)
    for (int c = 0; c < target.width(); ++c)
      CHECK(synced_rev.prefix.at(t, c) == target.frames.at(9 - t, c));

  // Np = 0 keeps the text and empties the prefix.
  const auto empty = sync_prefix(cond, target, 0);
  CHECK(empty.prefix.rows == 0);
  CHECK(empty.tokens.v == cond.tokens.v);

  CHECK_THROWS_AS(sync_prefix(cond, target, 11), Error);
  try {
    sync_prefix(cond, target, 11);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::prefix_too_long);
  }
}

TEST_CASE("tokenize keeps clause punctuation as tokens") {
  const auto t = tokenize("A man walks, then punches!");
  CHECK(t == std::vector<std::string>{"a", "man", "walks", ",", "then", "punches", "."});
  CHECK(join_tokens(tokenize("a person walks forward")) == "a person walks forward");
}

TEST_CASE("caption templates tokenize and join stably across the corpus") {
  for (const auto& e : synth_corpus(5, 6)) {
    const auto round = tokenize(join_tokens(e.caption));
    CHECK(round == e.caption);
  }
}

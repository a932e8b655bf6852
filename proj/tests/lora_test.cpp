#include <doctest.h>

#include <filesystem>
#include <set>

#include "motun/lora.hpp"
#include "motun/model.hpp"
#include "test_support.hpp"

using namespace motun;
using namespace motun::lora;
using model::DenoiserParams;
using model::ModelConfig;
using model::Vocab;

namespace {

DenoiserParams toy_params(uint64_t seed, int layers = 2) {
  ModelConfig c;
  c.joints = 4;
  c.latent = 16;
  c.layers = layers;
  c.heads = 2;
  c.ffn_hidden = 24;
  c.diffusion_steps = 5;
  c.prefix_len = 3;
  c.gen_len = 4;
  Vocab v;
  for (const char* w : {"a", "man", "kicks"}) v.add(w);
  return DenoiserParams::init(c, v, seed);
}

AdapterSet randomized_adapters(const DenoiserParams& p, uint64_t seed, int rank = 4) {
  LoraConfig cfg;
  cfg.rank = rank;
  cfg.alpha = static_cast<double>(rank);
  cfg.dropout = 0.0;
  auto set = attach_adapters(p, cfg, seed);
  Rng rng(derive_seed(seed, "b"));
  for (auto& a : set.adapters)
    for (auto& v : a.b.w) v = static_cast<float>(0.2 * rng.normal());
  return set;
}

}  // namespace

TEST_CASE("attachment covers three sites per layer with defaults") {
  const auto p = toy_params(1);
  const auto set = attach_adapters(p, LoraConfig{}, 2);
  CHECK(set.adapters.size() == 6);
  CHECK(set.config.rank == 16);
  CHECK(set.config.alpha == doctest::Approx(16.0));
  std::set<std::string> sites;
  for (const auto& a : set.adapters) {
    sites.insert(a.site);
    CHECK(a.a.rows == 16);
    for (float v : a.b.w) CHECK(v == 0.0f);
  }
  CHECK(sites.count("layers.0.cross.wo") == 1);
  CHECK(sites.count("layers.1.ffn.w1") == 1);
  CHECK(sites.count("layers.1.ffn.w2") == 1);
}

TEST_CASE("freshly attached adapters leave the forward pass bit-identical") {
  const auto p = toy_params(3);
  const auto set = attach_adapters(p, LoraConfig{}, 4);
  Rng rng(31);
  auto x = testsup::random_motion(rng, 5, 4, 5);
  motion::TextCondition cond;
  cond.tokens = model::encode_text(p, {"a", "man", "kicks"});
  cond.prefix = Mat(p.config.prefix_len, x.width());
  for (double& v : cond.prefix.v) v = rng.normal();
  const auto base_out = model::forward(p, x, 1, cond);
  const auto with = model::forward(p, x, 1, cond, &set, 1.0);
  CHECK(base_out.frames.v == with.frames.v);
}

TEST_CASE("task vector extraction is the scaled outer product") {
  // r=1, A=[[1,0]], B=[[2],[0]], alpha=1 -> increment [[2,0],[0,0]].
  AdapterSet set;
  LoraAdapter a;
  a.site = "w";
  a.rank = 1;
  a.alpha = 1.0;
  a.a = ParamTensor(1, 2);
  a.a.w = {1.0f, 0.0f};
  a.b = ParamTensor(2, 1);
  a.b.w = {2.0f, 0.0f};
  set.adapters.push_back(a);
  const auto tv = extract_task_vector(set);
  REQUIRE(tv.increments.size() == 1);
  const auto& inc = tv.increments.front().second;
  CHECK(inc.rows == 2);
  CHECK(inc.cols == 2);
  CHECK(inc.w == std::vector<float>{2.0f, 0.0f, 0.0f, 0.0f});

  // Extraction is idempotent and zero for untouched adapters.
  const auto tv2 = extract_task_vector(set);
  CHECK(tv2.increments.front().second.w == inc.w);
  const auto p = toy_params(5);
  const auto zero = extract_task_vector(attach_adapters(p, LoraConfig{}, 6));
  for (const auto& [site, t] : zero.increments)
    for (float v : t.w) CHECK(v == 0.0f);
}

TEST_CASE("task vector support equals the injection sites exactly") {
  const auto p = toy_params(7);
  const auto set = randomized_adapters(p, 8);
  const auto tv = extract_task_vector(set);
  const auto want = p.adapter_sites();
  REQUIRE(tv.increments.size() == want.size());
  for (size_t i = 0; i < want.size(); ++i) CHECK(tv.increments[i].first == want[i]);
  // No backbone-only site ever appears.
  for (const auto& [site, inc] : tv.increments)
    CHECK(std::find(want.begin(), want.end(), site) != want.end());
}

TEST_CASE("negation endpoints and inverses") {
  const auto p = toy_params(9);
  const auto set = randomized_adapters(p, 10);
  const auto tv = extract_task_vector(set);

  // alpha = 0 short-circuits to an exact copy.
  const auto same = negate(p, tv, 0.0);
  for (size_t i = 0; i < p.tensors.items.size(); ++i)
    CHECK(same.tensors.items[i].second.w == p.tensors.items[i].second.w);

  // Negating with the opposite increment restores the base within 1e-6.
  TaskVector neg;
  for (const auto& [site, inc] : tv.increments) {
    ParamTensor flip = inc;
    for (auto& v : flip.w) v = -v;
    neg.increments.emplace_back(site, flip);
  }
  const auto round = negate(negate(p, tv, 0.7), neg, 0.7);
  for (size_t i = 0; i < p.tensors.items.size(); ++i) {
    const auto& a = round.tensors.items[i].second.w;
    const auto& b = p.tensors.items[i].second.w;
    for (size_t k = 0; k < a.size(); ++k)
      CHECK(std::fabs(static_cast<double>(a[k]) - static_cast<double>(b[k])) <= 1e-6);
  }

  // Merge linearity within float tolerance.
  const auto two_step = negate(negate(p, tv, 0.3), tv, 0.4);
  const auto one_step = negate(p, tv, 0.7);
  for (size_t i = 0; i < p.tensors.items.size(); ++i) {
    const auto& a = two_step.tensors.items[i].second.w;
    const auto& b = one_step.tensors.items[i].second.w;
    for (size_t k = 0; k < a.size(); ++k)
      CHECK(std::fabs(static_cast<double>(a[k]) - static_cast<double>(b[k])) <= 1e-6);
  }
}

TEST_CASE("merged weights equal adapters scaled by minus alpha") {
  const auto p = toy_params(11);
  const auto set = randomized_adapters(p, 12);
  const auto tv = extract_task_vector(set);
  Rng rng(13);
  auto x = testsup::random_motion(rng, 5, 4, 5);
  motion::TextCondition cond;
  cond.tokens = model::encode_text(p, {"man", "kicks"});
  cond.prefix = Mat(p.config.prefix_len, x.width());
  for (double& v : cond.prefix.v) v = rng.normal();

  for (double alpha : {0.05, 1.0, 2.0}) {
    const auto merged = negate(p, tv, alpha);
    const auto via_merge = model::forward(merged, x, 2, cond);
    const auto via_scale = model::forward(p, x, 2, cond, &set, -alpha);
    for (size_t i = 0; i < via_merge.frames.v.size(); ++i)
      CHECK(via_merge.frames.v[i] ==
            doctest::Approx(via_scale.frames.v[i]).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("negate validates sites and shapes") {
  const auto p = toy_params(14);
  TaskVector tv;
  tv.increments.emplace_back("layers.0.cross.wo", ParamTensor(3, 3));
  CHECK_THROWS_AS(negate(p, tv, 1.0), Error);
  TaskVector missing;
  missing.increments.emplace_back("layers.9.cross.wo", ParamTensor(16, 16));
  CHECK_THROWS_AS(negate(p, missing, 1.0), Error);
}

TEST_CASE("policy scaling") {
  const auto stat = NegationPolicy::static_policy(1.0);
  CHECK(apply_policy(1, stat) == doctest::Approx(1.0));
  CHECK(apply_policy(2, stat) == doctest::Approx(1.0));
  CHECK(apply_policy(3, stat) == doctest::Approx(1.0));
  const auto gated = NegationPolicy::gated_policy(0.05, 2.0);
  CHECK(apply_policy(1, gated) == doctest::Approx(0.05));
  CHECK(apply_policy(2, gated) == doctest::Approx(2.0));
  CHECK(apply_policy(3, gated) == doctest::Approx(2.0));
  CHECK_THROWS_AS(apply_policy(0, gated), Error);
  CHECK_THROWS_AS(NegationPolicy::static_policy(-1.0), Error);
}

TEST_CASE("alpha sweep grid matches the documented presets") {
  CHECK(alpha_sweep_grid() == std::vector<double>{0.05, 0.2, 0.5, 0.8, 1.0, 1.2, 1.5, 2.0});
}

TEST_CASE("task vector checkpoints carry their marker") {
  const auto p = toy_params(15);
  const auto tv = extract_task_vector(randomized_adapters(p, 16));
  const auto path = std::filesystem::temp_directory_path() / "motun_tv.ckpt";
  save_task_vector(path, tv);
  const auto back = load_task_vector(path);
  REQUIRE(back.increments.size() == tv.increments.size());
  for (size_t i = 0; i < tv.increments.size(); ++i) {
    CHECK(back.increments[i].first == tv.increments[i].first);
    CHECK(back.increments[i].second.w == tv.increments[i].second.w);
  }
  // A model checkpoint is not accepted as a task vector.
  const auto mpath = std::filesystem::temp_directory_path() / "motun_tv_model.ckpt";
  model::save_model(mpath, p);
  CHECK_THROWS_AS(load_task_vector(mpath), Error);
}

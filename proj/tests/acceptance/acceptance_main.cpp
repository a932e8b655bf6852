// Acceptance suite: runs every release criterion end to end and prints one
// pass/fail line per criterion. Heavy pipeline state (trained models, task
// vectors) is shared between the criteria that need it.

#include <chrono>
#include <cmath>
#include <cstring>
#include <iostream>
#include <sstream>
#include <vector>

#include "motun/eval.hpp"
#include "motun/io.hpp"
#include "motun/lora.hpp"
#include "motun/losses.hpp"
#include "motun/model.hpp"
#include "motun/motion.hpp"
#include "motun/rng.hpp"
#include "motun/safety.hpp"
#include "motun/unlearn.hpp"

#include "../test_support.hpp"

using namespace motun;
using motion::CorpusEntry;
using motion::MotionSequence;
using motion::TextCondition;

namespace {

int g_failures = 0;
std::vector<std::string> g_lines;

void report(const std::string& id, bool pass, const std::string& detail) {
  const std::string line = (pass ? "[PASS] " : "[FAIL] ") + id + ": " + detail;
  std::cout << "  [done] " << id << std::endl;
  g_lines.push_back(line);
  if (!pass) ++g_failures;
}

double now_sec() {
  using clock = std::chrono::steady_clock;
  static const auto start = clock::now();
  return std::chrono::duration<double>(clock::now() - start).count();
}

// --- C1: analytic gradients vs float64 central differences -----------------

void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_name = "none";
  auto track = [&](const char* name, double err) {
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  };
  for (int i = 0; i < 100; ++i) {
    auto fx = testsup::kink_free_fixture(derive_seed(1001, "c1", i));
    const int t = fx.pred.length(), f = fx.pred.width();
    {
      Mat g(t, f);
      losses::mpjpe(fx.pred, fx.tgt, 1e-8, 1.0, g);
      track("mpjpe", testsup::max_rel_error_fd(fx.pred.frames, g,
                                               [&] { return losses::mpjpe(fx.pred, fx.tgt); }));
    }
    {
      Mat g(t, f);
      losses::vel_loss(fx.pred, fx.tgt, 1e-8, 1.0, g);
      track("vel_loss", testsup::max_rel_error_fd(
                            fx.pred.frames, g, [&] { return losses::vel_loss(fx.pred, fx.tgt); }));
    }
    {
      Mat g(t, f);
      losses::acc_loss(fx.pred, fx.tgt, 1e-8, 1.0, g);
      track("acc_loss", testsup::max_rel_error_fd(
                            fx.pred.frames, g, [&] { return losses::acc_loss(fx.pred, fx.tgt); }));
    }
    {
      Mat g(t, f);
      losses::foot_loss(fx.pred, 1e-8, 1.0, g);
      track("foot_loss", testsup::max_rel_error_fd(fx.pred.frames, g,
                                                   [&] { return losses::foot_loss(fx.pred); }));
    }
    {
      Rng rng(derive_seed(1002, "c1t", i));
      Mat e_t(4, 8), e_m(4, 8);
      for (double& v : e_t.v) v = rng.normal();
      for (double& v : e_m.v) v = rng.normal();
      Mat gt(4, 8), gm(4, 8);
      losses::text_motion_loss(e_t, e_m, 0.07, 1.0, &gt, &gm);
      track("text(e_t)", testsup::max_rel_error_fd(e_t, gt, [&] {
              return losses::text_motion_loss(e_t, e_m, 0.07);
            }));
      track("text(e_m)", testsup::max_rel_error_fd(e_m, gm, [&] {
              return losses::text_motion_loss(e_t, e_m, 0.07);
            }));
    }
    {
      Rng rng(derive_seed(1003, "c1p", i));
      std::vector<double> zc(16), zb(16), zcd(16), zbd(16);
      for (auto* v : {&zc, &zb, &zcd, &zbd})
        for (double& x : *v) x = rng.normal();
      std::vector<double> dzc(16, 0.0), dzcd(16, 0.0);
      losses::pres_divergence(zc, zb, zcd, zbd, 0.37, 1.0, &dzc, &dzcd);
      Mat zmat(1, 16), gmat(1, 16);
      for (int c = 0; c < 16; ++c) {
        zmat.at(0, c) = zcd[c];
        gmat.at(0, c) = dzcd[c];
      }
      track("pres_divergence", testsup::max_rel_error_fd(zmat, gmat, [&] {
              std::vector<double> z(16);
              for (int c = 0; c < 16; ++c) z[c] = zmat.at(0, c);
              return losses::pres_divergence(zc, zb, z, zbd, 0.37);
            }));
    }
  }
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream detail;
  detail << "max rel err " << worst << " (" << worst_name << "), " << elapsed << " s";
  report("C1 gradient suite", worst <= 1e-4 && elapsed <= 120.0, detail.str());
}

// --- C2: kinematic losses vs naive-loop oracles ----------------------------

void criterion_2() {
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    Rng rng(derive_seed(2001, "c2", i));
    const int valid = 3 + static_cast<int>(rng.uniform_index(6));
    auto pred = testsup::random_motion(rng, 8, 4, valid);
    auto tgt = testsup::random_motion(rng, 8, 4, valid);
    worst = std::max(worst,
                     std::fabs(losses::mpjpe(pred, tgt) - testsup::oracle::mpjpe(pred, tgt)));
    worst = std::max(worst, std::fabs(losses::vel_loss(pred, tgt) -
                                      testsup::oracle::diff_loss(pred, tgt, 1)));
    worst = std::max(worst, std::fabs(losses::acc_loss(pred, tgt) -
                                      testsup::oracle::diff_loss(pred, tgt, 2)));
    worst = std::max(worst, std::fabs(losses::foot_loss(pred) - testsup::oracle::foot(pred)));
    // Spectral terms against the O(T^2) reference DFT, standalone.
    const auto r1 = testsup::oracle::diff_residual(pred, tgt, 1);
    const auto r2 = testsup::oracle::diff_residual(pred, tgt, 2);
    for (const auto& sig : {r1, r2}) {
      if (sig.empty()) continue;
      Mat resid(static_cast<int>(sig.size()), pred.width());
      for (size_t r = 0; r < sig.size(); ++r)
        for (int c = 0; c < pred.width(); ++c) resid.at(static_cast<int>(r), c) = sig[r][c];
      worst = std::max(worst, std::fabs(losses::spectral_emphasis(resid) -
                                        testsup::oracle::spectral(sig)));
    }
  }
  std::ostringstream detail;
  detail << "max |impl - oracle| " << worst << " over 100 fixtures";
  report("C2 oracle suite", worst <= 1e-6, detail.str());
}

// --- C3: mask invariance -----------------------------------------------------

void criterion_3() {
  bool pass = true;
  model::ModelConfig mc;
  mc.joints = 4;
  mc.latent = 16;
  mc.layers = 1;
  mc.heads = 2;
  mc.ffn_hidden = 24;
  mc.diffusion_steps = 5;
  mc.prefix_len = 3;
  mc.gen_len = 4;
  model::Vocab vocab;
  for (const char* w : {"a", "man", "walks"}) vocab.add(w);
  const auto params = model::DenoiserParams::init(mc, vocab, 3003);

  for (int i = 0; i < 50 && pass; ++i) {
    Rng rng(derive_seed(3001, "c3", i));
    const int valid = 3 + static_cast<int>(rng.uniform_index(5));
    auto pred = testsup::random_motion(rng, 9, 4, valid);
    auto tgt = testsup::random_motion(rng, 9, 4, valid);
    const double m0 = losses::mpjpe(pred, tgt);
    const double v0 = losses::vel_loss(pred, tgt);
    const double a0 = losses::acc_loss(pred, tgt);
    const double f0 = losses::foot_loss(pred);
    TextCondition cond;
    cond.tokens = model::encode_text(params, {"a", "man", "walks"});
    cond.prefix = Mat(mc.prefix_len, pred.width());
    const auto out0 = model::forward(params, pred, 2, cond);
    for (int t = valid; t < 9; ++t)
      for (int c = 0; c < pred.width(); ++c) {
        pred.frames.at(t, c) = rng.normal() * 100.0;
        tgt.frames.at(t, c) = rng.normal() * 100.0;
      }
    const double m1 = losses::mpjpe(pred, tgt);
    const double v1 = losses::vel_loss(pred, tgt);
    const double a1 = losses::acc_loss(pred, tgt);
    const double f1 = losses::foot_loss(pred);
    const auto out1 = model::forward(params, pred, 2, cond);
    pass = std::memcmp(&m0, &m1, 8) == 0 && std::memcmp(&v0, &v1, 8) == 0 &&
           std::memcmp(&a0, &a1, 8) == 0 && std::memcmp(&f0, &f1, 8) == 0 &&
           std::memcmp(out0.frames.row(0), out1.frames.row(0),
                       sizeof(double) * valid * pred.width()) == 0;
  }
  report("C3 mask invariance", pass,
         pass ? "losses and valid-span predictions bit-unchanged over 50 fixtures"
              : "padded frames leaked into a value");
}

// --- shared toy pipeline state ----------------------------------------------

struct SeedRun {
  std::vector<CorpusEntry> corpus;
  model::DenoiserParams base;
  lora::TaskVector tv;
  std::vector<unlearn::StepRecord> log;
  eval::FeatureExtractors extractors;
  std::vector<const CorpusEntry*> forget_entries;
  std::vector<const CorpusEntry*> retain_entries;
  double base_unsafe_err = 0.0;
  double base_safe_err = 0.0;
  double gated_unsafe_err = 0.0;
  double gated_safe_err = 0.0;
};

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

SeedRun run_pipeline(uint64_t seed, const model::DiffusionSchedule& sched) {
  SeedRun run;
  run.corpus = motion::synth_corpus(derive_seed(seed, "corpus"), 32);
  run.base = model::DenoiserParams::init(model::ModelConfig::toy(),
                                         model::Vocab::build(run.corpus),
                                         derive_seed(seed, "model-init"));
  model::TrainBaseConfig tb;
  tb.seed = derive_seed(seed, "train-base");
  model::train_base(run.base, run.corpus, tb, sched);

  unlearn::Stage1Config s1;
  s1.seed = derive_seed(seed, "absorb");
  auto absorbed = unlearn::absorb(run.base, run.corpus, s1, sched);
  run.tv = std::move(absorbed.task_vector);
  run.log = std::move(absorbed.log);

  run.extractors = eval::train_extractors(run.corpus, derive_seed(seed, "extractors"));
  for (const auto& e : run.corpus)
    (e.forget ? run.forget_entries : run.retain_entries).push_back(&e);

  const auto lemmas = safety::LemmaList::defaults();
  const auto gated = lora::NegationPolicy::gated_policy(0.05, 2.0);
  const uint64_t eval_seed = derive_seed(seed, "c7-eval");
  const auto base_unsafe = unlearn::evaluate_generation(
      run.base, nullptr, gated, run.forget_entries, run.extractors, lemmas, eval_seed, sched, 1);
  const auto base_safe = unlearn::evaluate_generation(
      run.base, nullptr, gated, run.retain_entries, run.extractors, lemmas, eval_seed, sched, 1);
  const auto gated_unsafe = unlearn::evaluate_generation(
      run.base, &run.tv, gated, run.forget_entries, run.extractors, lemmas, eval_seed, sched, 1);
  const auto gated_safe = unlearn::evaluate_generation(
      run.base, &run.tv, gated, run.retain_entries, run.extractors, lemmas, eval_seed, sched, 1);
  run.base_unsafe_err = mean(base_unsafe.recon_errors);
  run.base_safe_err = mean(base_safe.recon_errors);
  run.gated_unsafe_err = mean(gated_unsafe.recon_errors);
  run.gated_safe_err = mean(gated_safe.recon_errors);
  return run;
}

// --- C4/C5 on a trained model ------------------------------------------------

void criterion_4(const SeedRun& run, const model::DiffusionSchedule& sched) {
  bool pass = true;
  const auto policy = lora::NegationPolicy::static_policy(0.0);
  for (int i = 0; i < 20 && pass; ++i) {
    const CorpusEntry& e = *((i % 2 ? run.forget_entries : run.retain_entries)[i / 2]);
    Mat prefix(run.base.config.prefix_len, e.motion.width());
    for (int t = 0; t < prefix.rows; ++t)
      for (int c = 0; c < prefix.cols; ++c) prefix.at(t, c) = e.motion.frames.at(t, c);
    const auto a = unlearn::negate_and_sample(run.base, run.tv, policy, e.caption, e.level,
                                              prefix, derive_seed(4001, "c4", i), sched);
    TextCondition cond;
    cond.tokens = model::encode_text(run.base, e.caption);
    cond.prefix = prefix;
    const auto b =
        model::sample(run.base, cond, run.base.config.gen_len, derive_seed(4001, "c4", i), sched)
            .motion;
    pass = a.frames.v == b.frames.v && a.mask == b.mask;
  }
  report("C4 alpha=0 identity", pass,
         pass ? "negate(0) sampling bit-identical to the base model on 20 seeded prompts"
              : "alpha=0 sampling diverged from the base model");
}

void criterion_5(const SeedRun& run, const model::DiffusionSchedule& sched) {
  // Rebuild an adapter set equivalent to the task vector: compare merged
  // weights against adapter application scaled by -alpha on fresh inputs.
  unlearn::Stage1Config s1;
  s1.seed = derive_seed(77, "absorb-c5");
  s1.steps = 40;
  auto absorbed = unlearn::absorb(run.base, run.corpus, s1, sched);
  const auto tv = absorbed.task_vector;
  double worst = 0.0;
  Rng rng(5001);
  for (double alpha : {0.05, 1.0, 2.0}) {
    const auto merged = lora::negate(run.base, tv, alpha);
    for (int i = 0; i < 4; ++i) {
      auto x = testsup::random_motion(rng, 12, 4, 10 + i % 3);
      const auto& e = *run.forget_entries[i];
      TextCondition cond;
      cond.tokens = model::encode_text(run.base, e.caption);
      cond.prefix = Mat(run.base.config.prefix_len, x.width());
      for (double& v : cond.prefix.v) v = rng.normal();
      const auto via_merge = model::forward(merged, x, i % run.base.config.diffusion_steps, cond);
      const auto via_scale = model::forward(run.base, x, i % run.base.config.diffusion_steps,
                                            cond, &absorbed.adapters, -alpha);
      for (size_t k = 0; k < via_merge.frames.v.size(); ++k)
        worst = std::max(worst, std::fabs(via_merge.frames.v[k] - via_scale.frames.v[k]));
    }
  }
  std::ostringstream detail;
  detail << "max |merged - scaled-adapter| " << worst << " over alpha {0.05, 1, 2}";
  report("C5 merge consistency", worst <= 1e-5, detail.str());
}

// --- C6: metric sanity -------------------------------------------------------

void criterion_6() {
  bool pass = true;
  std::ostringstream detail;
  {
    eval::GaussianStats a;
    a.dim = 2;
    a.mean = {0.0, 0.0};
    a.cov = {1.0, 0.0, 0.0, 1.0};
    eval::GaussianStats b = a;
    b.mean = {2.0, 0.0};
    eval::GaussianStats wide = a;
    wide.cov = {4.0, 0.0, 0.0, 4.0};
    pass = pass && eval::fid(a, a) <= 1e-6;
    pass = pass && std::fabs(eval::fid(a, b) - 4.0) <= 1e-6;
    pass = pass && std::fabs(eval::fid(wide, a) - 2.0) <= 1e-6;
    pass = pass && std::fabs(eval::fid(a, wide) - eval::fid(wide, a)) <= 1e-6;
  }
  {
    Rng rng(6001);
    std::vector<eval::FeaturePair> oracle_pairs, noise_pairs;
    auto unit = [&rng](int d) {
      std::vector<double> v(d);
      double n = 0.0;
      for (double& x : v) {
        x = rng.normal();
        n += x * x;
      }
      for (double& x : v) x /= std::sqrt(n);
      return v;
    };
    for (int i = 0; i < 64; ++i) {
      eval::FeaturePair p;
      p.e_t = unit(12);
      p.e_m = p.e_t;
      oracle_pairs.push_back(p);
    }
    pass = pass && eval::r_precision(oracle_pairs, 1, 3) == 1.0;
    for (int i = 0; i < 1000; ++i) {
      eval::FeaturePair p;
      p.e_t = unit(12);
      p.e_m = unit(12);
      noise_pairs.push_back(p);
    }
    const double r1 = eval::r_precision(noise_pairs, 1, 5);
    const double p0 = 1.0 / 32.0;
    const double half = 1.96 * std::sqrt(p0 * (1.0 - p0) / 1000.0);
    detail << "chance R@1 " << r1 << " in [" << p0 - half << ", " << p0 + half << "]";
    pass = pass && r1 >= p0 - half && r1 <= p0 + half;
    // Duplicated halves have zero diversity.
    std::vector<std::vector<double>> feats;
    for (int i = 0; i < 8; ++i) feats.push_back(unit(6));
    std::vector<std::vector<double>> doubled = feats;
    // Arrange so each seeded half holds one copy of every vector.
    Rng probe(derive_seed(9, "diversity"));
    const auto perm = probe.permutation(16);
    std::vector<std::vector<double>> arranged(16);
    for (int i = 0; i < 8; ++i) {
      arranged[perm[i]] = feats[i];
      arranged[perm[8 + i]] = feats[i];
    }
    pass = pass && eval::diversity(arranged, 8, 9) <= 1e-12;
  }
  report("C6 metric sanity", pass, detail.str());
}

// --- C7/C8/C9 ---------------------------------------------------------------

void heavy_criteria(std::vector<SeedRun>& runs, const model::DiffusionSchedule& sched) {
  const double t_start = now_sec();
  for (uint64_t seed : {0ULL, 1ULL, 2ULL}) {
    runs.push_back(run_pipeline(seed, sched));
    std::cout << "  [info] seed " << seed << " pipeline done at " << now_sec() - t_start
              << " s: unsafe " << runs.back().base_unsafe_err << " -> "
              << runs.back().gated_unsafe_err << ", safe " << runs.back().base_safe_err << " -> "
              << runs.back().gated_safe_err << std::endl;
  }
  const double elapsed = now_sec() - t_start;

  int c7_hits = 0;
  std::ostringstream c7_detail;
  for (const auto& run : runs) {
    const double unsafe_ratio = run.gated_unsafe_err / run.base_unsafe_err;
    const double safe_ratio = run.gated_safe_err / run.base_safe_err;
    const bool hit = unsafe_ratio >= 2.0 && safe_ratio <= 1.2;
    c7_hits += hit ? 1 : 0;
    c7_detail << "(unsafe x" << unsafe_ratio << ", safe x" << safe_ratio << ") ";
  }
  c7_detail << "- " << c7_hits << "/3 seeds, " << elapsed << " s";
  report("C7 directional unlearning", c7_hits >= 2 && elapsed <= 900.0, c7_detail.str());

  // Training-log trends recorded during stage 1 (windowed start vs end).
  {
    int trend_hits = 0;
    for (const auto& run : runs) {
      double harm_first = 0.0, harm_last = 0.0, z_first = 0.0, z_last = 0.0;
      const int w = 200;
      for (int i = 0; i < w; ++i) {
        harm_first += run.log[i].l_harm / w;
        harm_last += run.log[run.log.size() - 1 - i].l_harm / w;
        z_first += run.log[i].z_dist / w;
        z_last += run.log[run.log.size() - 1 - i].z_dist / w;
      }
      if (harm_last < harm_first && z_last > z_first) ++trend_hits;
    }
    std::ostringstream d;
    d << trend_hits << "/3 seeds show falling harm loss and rising safe divergence";
    report("A1 stage-1 training trends", trend_hits >= 2, d.str());
  }

  // C8: alpha sweep shape on reconstruction error.
  {
    const auto lemmas = safety::LemmaList::defaults();
    const auto& grid = lora::alpha_sweep_grid();
    int mono_hits = 0, sign_hits = 0;
    std::vector<double> mean_unsafe(grid.size(), 0.0);
    for (auto& run : runs) {
      std::vector<double> unsafe_curve, safe_curve;
      for (double alpha : grid) {
        const auto policy = lora::NegationPolicy::static_policy(alpha);
        const uint64_t s = derive_seed(8001, "c8", static_cast<uint64_t>(alpha * 1000));
        unsafe_curve.push_back(mean(unlearn::evaluate_generation(run.base, &run.tv, policy,
                                                                 run.forget_entries,
                                                                 run.extractors, lemmas, s, sched,
                                                                 1)
                                        .recon_errors));
        safe_curve.push_back(mean(unlearn::evaluate_generation(run.base, &run.tv, policy,
                                                               run.retain_entries, run.extractors,
                                                               lemmas, s, sched, 1)
                                      .recon_errors));
      }
      for (size_t i = 0; i < grid.size(); ++i) mean_unsafe[i] += unsafe_curve[i] / 3.0;
      // Windowed trend: moving average of width 3 must not decrease.
      auto smooth = [](const std::vector<double>& v) {
        std::vector<double> out;
        for (size_t i = 0; i < v.size(); ++i) {
          double acc = v[i];
          int n = 1;
          if (i > 0) {
            acc += v[i - 1];
            ++n;
          }
          if (i + 1 < v.size()) {
            acc += v[i + 1];
            ++n;
          }
          out.push_back(acc / n);
        }
        return out;
      };
      const auto s_curve = smooth(unsafe_curve);
      bool mono = true;
      for (size_t i = 1; i < s_curve.size(); ++i) mono = mono && s_curve[i] >= s_curve[i - 1] - 1e-9;
      mono_hits += mono ? 1 : 0;
      const double deg_low = safe_curve.front() - run.base_safe_err;
      const double deg_high = safe_curve.back() - run.base_safe_err;
      sign_hits += deg_high > deg_low ? 1 : 0;
    }
    bool mean_mono = true;
    for (size_t i = 1; i < mean_unsafe.size(); ++i)
      mean_mono = mean_mono && mean_unsafe[i] >= mean_unsafe[i - 1] - 1e-9;
    std::ostringstream d;
    d << "monotone unsafe trend " << mono_hits << "/3 seeds (mean curve "
      << (mean_mono ? "monotone" : "not monotone") << "), safe degradation sign " << sign_hits
      << "/3 seeds";
    report("C8 alpha-sweep shape", mono_hits >= 2 && mean_mono && sign_hits >= 2, d.str());
  }

  // C9: module ablations produce distinct task vectors; dropping the
  // decoupling stream weakens unsafe forgetting.
  {
    const auto lemmas = safety::LemmaList::defaults();
    const auto gated = lora::NegationPolicy::gated_policy(0.05, 2.0);
    bool distinct_all = true;
    int weaker_hits = 0;
    for (uint64_t seed : {0ULL, 1ULL, 2ULL}) {
      auto& run = runs[seed];
      std::vector<lora::TaskVector> ablated;
      for (const char* which : {"harm", "dec", "pres"}) {
        unlearn::Stage1Config s1;
        s1.seed = derive_seed(seed, "absorb");  // same stream as the default run
        if (std::strcmp(which, "harm") == 0) s1.weights.w_harm = 0.0;
        if (std::strcmp(which, "dec") == 0) s1.weights.w_dec = 0.0;
        if (std::strcmp(which, "pres") == 0) s1.weights.w_pres = 0.0;
        ablated.push_back(unlearn::absorb(run.base, run.corpus, s1, sched).task_vector);
      }
      auto distance = [](const lora::TaskVector& a, const lora::TaskVector& b) {
        double s = 0.0;
        for (size_t i = 0; i < a.increments.size(); ++i)
          for (size_t k = 0; k < a.increments[i].second.w.size(); ++k) {
            const double d = static_cast<double>(a.increments[i].second.w[k]) -
                             static_cast<double>(b.increments[i].second.w[k]);
            s += d * d;
          }
        return std::sqrt(s);
      };
      for (size_t i = 0; i < ablated.size(); ++i) {
        distinct_all = distinct_all && distance(ablated[i], run.tv) > 0.0;
        for (size_t j = i + 1; j < ablated.size(); ++j)
          distinct_all = distinct_all && distance(ablated[i], ablated[j]) > 0.0;
      }
      const uint64_t s = derive_seed(seed, "c9-eval");
      const double no_dec_err =
          mean(unlearn::evaluate_generation(run.base, &ablated[1], gated, run.forget_entries,
                                            run.extractors, lemmas, s, sched, 1)
                   .recon_errors);
      const double default_err =
          mean(unlearn::evaluate_generation(run.base, &run.tv, gated, run.forget_entries,
                                            run.extractors, lemmas, s, sched, 1)
                   .recon_errors);
      if (no_dec_err < default_err) ++weaker_hits;
      std::cout << "  [info] seed " << seed << " ablation: no-dec unsafe err " << no_dec_err
                << " vs default " << default_err << std::endl;
    }
    std::ostringstream d;
    d << (distinct_all ? "task vectors pairwise distinct" : "task vectors collide")
      << "; w_dec=0 weaker forgetting on " << weaker_hits << "/3 seeds";
    report("C9 module ablations", distinct_all && weaker_hits >= 2, d.str());
  }
}

// --- C10: partition/classifier agreement -------------------------------------

void criterion_10() {
  const auto corpus = motion::synth_corpus(derive_seed(0, "corpus"), 32);
  const auto lemmas = safety::LemmaList::defaults();
  const auto part = safety::partition(corpus, lemmas);
  bool agree = true;
  for (size_t i : part.forget) agree = agree && corpus[i].forget;
  for (size_t i : part.retain) agree = agree && !corpus[i].forget;
  for (const auto& e : corpus) {
    const auto v = safety::classify(e.caption, lemmas);
    agree = agree && ((v.level >= 2) == e.forget);
  }
  // Phrase-first priority on constructed overlap fixtures.
  bool phrase_first = true;
  {
    const auto list = safety::LemmaList::from_tokens({{"punch"}, {"throw", "a", "punch"}});
    const auto v = safety::classify(motion::tokenize("they throw a punch now"), list);
    phrase_first = !v.evidence.empty() && v.evidence.front().text == "throw a punch";
    for (const auto& ev : v.evidence)
      phrase_first = phrase_first && ev.text != "punch";
    const auto v2 = safety::classify(motion::tokenize("he punches before they throw a punch"), list);
    bool saw_phrase = false, saw_outside_lemma = false;
    for (const auto& ev : v2.evidence) {
      saw_phrase = saw_phrase || ev.text == "throw a punch";
      saw_outside_lemma = saw_outside_lemma || (ev.text == "punch" && ev.end <= 2);
    }
    phrase_first = phrase_first && saw_phrase && saw_outside_lemma;
  }
  report("C10 partition/classifier agreement", agree && phrase_first,
         agree ? "100% label agreement; phrase-first priority holds"
               : "label disagreement on the synthetic corpus");
}

// --- auxiliary: pooled statistics under caption interpolation ----------------

void aux_interpolation(const SeedRun& run, const model::DiffusionSchedule& sched) {
  // Interpolate between mean-pooled walk and punch caption embeddings and
  // track the punch family's signature channel in the generated motion.
  const CorpusEntry* walk = nullptr;
  const CorpusEntry* punch = nullptr;
  for (const auto& e : run.corpus) {
    if (!walk && e.family == "walk") walk = &e;
    if (!punch && e.family == "punch") punch = &e;
  }
  const Mat wt = model::encode_text(run.base, walk->caption);
  const Mat pt = model::encode_text(run.base, punch->caption);
  auto mean_rows = [](const Mat& m) {
    Mat out(1, m.cols);
    for (int i = 0; i < m.rows; ++i)
      for (int c = 0; c < m.cols; ++c) out.at(0, c) += m.at(i, c) / m.rows;
    return out;
  };
  const Mat wbar = mean_rows(wt);
  const Mat pbar = mean_rows(pt);
  const auto& layout = walk->motion.layout;
  const int reach_channel = layout.jp_offset + 2;  // forward reach of the arm joint

  std::vector<double> stat;
  std::vector<double> us;
  for (int step = 0; step <= 8; ++step) {
    const double u = step / 8.0;
    TextCondition cond;
    cond.tokens = Mat(1, wbar.cols);
    for (int c = 0; c < wbar.cols; ++c)
      cond.tokens.at(0, c) = (1.0 - u) * wbar.at(0, c) + u * pbar.at(0, c);
    cond.prefix = Mat(run.base.config.prefix_len, walk->motion.width());
    for (int t = 0; t < cond.prefix.rows; ++t)
      for (int c = 0; c < cond.prefix.cols; ++c)
        cond.prefix.at(t, c) = walk->motion.frames.at(t, c);
    const auto gen = model::sample(run.base, cond, run.base.config.gen_len,
                                   derive_seed(11001, "interp"), sched)
                         .motion;
    double acc = 0.0;
    for (int t = cond.prefix.rows; t < gen.length(); ++t) acc += gen.frames.at(t, reach_channel);
    stat.push_back(acc / run.base.config.gen_len);
    us.push_back(u);
  }
  // Rank correlation between the interpolation weight and the statistic.
  double mu = mean(stat), mu_u = mean(us);
  double cov = 0.0, var_s = 0.0, var_u = 0.0;
  for (size_t i = 0; i < stat.size(); ++i) {
    cov += (stat[i] - mu) * (us[i] - mu_u);
    var_s += (stat[i] - mu) * (stat[i] - mu);
    var_u += (us[i] - mu_u) * (us[i] - mu_u);
  }
  const double corr = cov / std::sqrt(var_s * var_u + 1e-12);
  std::ostringstream d;
  d << "correlation of punch-channel statistic with interpolation weight: " << corr;
  report("A2 caption interpolation trend", corr > 0.7, d.str());
}

}  // namespace

int main() {
  std::cout << "acceptance suite (toy scale)\n";
  const auto sched = model::DiffusionSchedule::cosine(model::ModelConfig::toy().diffusion_steps);
  criterion_1();
  criterion_2();
  criterion_3();

  std::vector<SeedRun> runs;
  heavy_criteria(runs, sched);
  criterion_4(runs.front(), sched);
  criterion_5(runs.front(), sched);
  criterion_6();
  criterion_10();
  aux_interpolation(runs.front(), sched);

  // Criterion lines in numeric order, auxiliary checks after.
  std::sort(g_lines.begin(), g_lines.end(), [](const std::string& a, const std::string& b) {
    auto key = [](const std::string& s) {
      const size_t at = s.find("] ") + 2;
      const bool aux = s[at] == 'A';
      int num = 0;
      for (size_t i = at + 1; i < s.size() && isdigit(static_cast<unsigned char>(s[i])); ++i)
        num = num * 10 + (s[i] - '0');
      return std::make_pair(aux ? 1 : 0, num);
    };
    return key(a) < key(b);
  });
  std::cout << "\n";
  for (const auto& line : g_lines) std::cout << line << "\n";
  std::cout << (g_failures == 0 ? "ALL CRITERIA PASSED" : "FAILURES PRESENT") << std::endl;
  return g_failures == 0 ? 0 : 1;
}

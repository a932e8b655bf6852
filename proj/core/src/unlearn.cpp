#include "motun/unlearn.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "motun/common.hpp"
#include "motun/rng.hpp"
#include "motun/threading.hpp"

namespace motun::unlearn {

using motion::CorpusEntry;
using motion::DecoupleMode;
using motion::MotionSequence;
using motion::TextCondition;

void Stage1Config::validate() const {
  weights.validate();
  require(steps >= 1, Errc::bad_config, "stage-1 needs steps >= 1");
  require(lr > 0.0, Errc::bad_config, "learning rate must be positive");
  require(batch_unsafe >= 1 && batch_safe >= 1, Errc::bad_config, "batch sizes must be >= 1");
  require(checkpoint_cadence >= 1, Errc::bad_config, "checkpoint cadence must be >= 1");
  require(crop_cap >= 2, Errc::bad_config, "crop cap must be >= 2");
}

namespace {

std::vector<const CorpusEntry*> sorted_pool(const std::vector<CorpusEntry>& corpus, bool forget) {
  std::vector<const CorpusEntry*> pool;
  for (const auto& e : corpus)
    if (e.forget == forget && e.seen) pool.push_back(&e);
  std::sort(pool.begin(), pool.end(),
            [](const CorpusEntry* a, const CorpusEntry* b) { return a->id < b->id; });
  return pool;
}

double vec_norm(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

struct UnsafeSlot {
  const CorpusEntry* entry = nullptr;
  model::TrainingItem item;
  model::TrainingItem dec_item;
  Mat noise;
  MotionSequence x_t;
  TextCondition cond;
  uint64_t harm_drop_seed = 0;
  uint64_t dec_drop_seed = 0;
  // harm branch state carried between the phases
  model::ForwardCache harm_cache;
  MotionSequence harm_pred;
  Mat harm_dpred;
  eval::MotionEncodeCache em_cache;
  std::vector<double> e_m;
  double v_mpjpe = 0.0, v_vel = 0.0, v_acc = 0.0, v_foot = 0.0, v_dec = 0.0;
  model::GradMap grads;
};

struct SafeSlot {
  const CorpusEntry* entry = nullptr;
  model::TrainingItem item;
  model::TrainingItem dec_item;
  Mat noise;
  uint64_t cur_drop_seed = 0;
  uint64_t dec_drop_seed = 0;
  double pres = 0.0;
  double z_dist = 0.0;
  model::GradMap grads;
};

}  // namespace

AbsorbResult absorb(const model::DenoiserParams& base, const std::vector<CorpusEntry>& corpus,
                    const Stage1Config& cfg, const model::DiffusionSchedule& sched,
                    const CheckpointSink* checkpoint_sink) {
  cfg.validate();
  const auto unsafe_pool = sorted_pool(corpus, true);
  const auto safe_pool = sorted_pool(corpus, false);
  require(!unsafe_pool.empty(), Errc::stream_starvation, "no unsafe entries in the seen split");
  require(!safe_pool.empty(), Errc::stream_starvation, "no safe entries in the seen split");

  const losses::LossWeights& w = cfg.weights;
  const int np = base.config.prefix_len;
  const int f = base.config.frame_width();
  const uint64_t base_hash = io::content_hash(base.tensors);

  AbsorbResult res;
  res.adapters = lora::attach_adapters(base, cfg.lora, derive_seed(cfg.seed, "absorb-lora"));
  res.log.reserve(cfg.steps);

  const bool use_harm = w.w_harm > 0.0;
  const bool use_dec = w.w_dec > 0.0;
  const bool use_pres = w.w_pres > 0.0;
  const bool use_text = use_harm && w.lambda_text > 0.0;

  eval::FeatureExtractors extractors;
  if (use_text)
    extractors = eval::train_extractors(corpus, derive_seed(cfg.seed, "absorb-extractors"));

  Rng rng_u(derive_seed(cfg.seed, "absorb-unsafe"));
  Rng rng_s(derive_seed(cfg.seed, "absorb-safe"));
  Rng rng_t(derive_seed(cfg.seed, "absorb-time"));

  const int b_u = cfg.batch_unsafe;
  const int b_s = cfg.batch_safe;

  for (int step = 0; step < cfg.steps; ++step) {
    const int t_step = static_cast<int>(rng_t.uniform_index(sched.steps));

    // Draw every random quantity on the main thread so worker count can
    // never change the run.
    std::vector<UnsafeSlot> unsafe(b_u);
    if (use_harm || use_dec) {
      for (int i = 0; i < b_u; ++i) {
        UnsafeSlot& slot = unsafe[i];
        slot.entry = unsafe_pool[rng_u.uniform_index(unsafe_pool.size())];
        const int max_off = model::max_item_offset(slot.entry->motion, np, cfg.crop_cap);
        const int off = max_off > 0 ? static_cast<int>(rng_u.uniform_index(max_off + 1)) : 0;
        slot.item = model::make_training_item(slot.entry->motion, np, cfg.crop_cap, off);
        slot.noise = Mat(slot.item.x0.length(), f);
        for (double& v : slot.noise.v) v = rng_u.normal();
        if (use_dec) {
          const DecoupleMode mode =
              rng_u.bernoulli(0.5) ? DecoupleMode::time_reverse : DecoupleMode::segment_shuffle;
          const MotionSequence decoupled = motion::decouple(
              slot.entry->motion, mode,
              derive_seed(cfg.seed, "absorb-dec-u", static_cast<uint64_t>(step) * 1000 + i));
          slot.dec_item = model::make_training_item(decoupled, np, cfg.crop_cap, off);
        }
        slot.harm_drop_seed =
            derive_seed(cfg.seed, "drop-harm", static_cast<uint64_t>(step) * 1000 + i);
        slot.dec_drop_seed =
            derive_seed(cfg.seed, "drop-dec", static_cast<uint64_t>(step) * 1000 + i);
      }
    }
    std::vector<SafeSlot> safe(use_pres ? b_s : 0);
    for (size_t j = 0; j < safe.size(); ++j) {
      SafeSlot& slot = safe[j];
      slot.entry = safe_pool[rng_s.uniform_index(safe_pool.size())];
      const int max_off = model::max_item_offset(slot.entry->motion, np, cfg.crop_cap);
      const int off = max_off > 0 ? static_cast<int>(rng_s.uniform_index(max_off + 1)) : 0;
      slot.item = model::make_training_item(slot.entry->motion, np, cfg.crop_cap, off);
      slot.noise = Mat(slot.item.x0.length(), f);
      for (double& v : slot.noise.v) v = rng_s.normal();
      const DecoupleMode mode =
          rng_s.bernoulli(0.5) ? DecoupleMode::time_reverse : DecoupleMode::segment_shuffle;
      const MotionSequence decoupled = motion::decouple(
          slot.entry->motion, mode,
          derive_seed(cfg.seed, "absorb-dec-s", static_cast<uint64_t>(step) * 1000 + j));
      slot.dec_item = model::make_training_item(decoupled, np, cfg.crop_cap, off);
      slot.cur_drop_seed =
          derive_seed(cfg.seed, "drop-safe", static_cast<uint64_t>(step) * 1000 + j);
      slot.dec_drop_seed =
          derive_seed(cfg.seed, "drop-safe-dec", static_cast<uint64_t>(step) * 1000 + j);
    }

    // Unsafe stream, phase one: predictions, kinematic gradients, and the
    // decoupled branch end to end.
    if (use_harm || use_dec) {
      parallel_for(unsafe.size(), cfg.threads, [&](size_t i) {
        UnsafeSlot& slot = unsafe[i];
        slot.cond.tokens = model::encode_text(base, slot.entry->caption);
        slot.cond.prefix = slot.item.prefix;
        slot.x_t = model::q_sample(slot.item.x0, t_step, slot.noise, sched);
        if (use_harm) {
          slot.harm_pred = model::forward(base, slot.x_t, t_step, slot.cond, &res.adapters, 1.0,
                                          slot.harm_cache, &slot.harm_drop_seed);
          slot.harm_dpred = Mat(slot.harm_pred.length(), f);
          const double up = w.w_harm / b_u;
          if (w.lambda_mpjpe > 0.0)
            slot.v_mpjpe = losses::mpjpe(slot.harm_pred, slot.item.x0, w.eps,
                                         up * w.lambda_mpjpe, slot.harm_dpred);
          else
            slot.v_mpjpe = losses::mpjpe(slot.harm_pred, slot.item.x0, w.eps);
          if (w.lambda_vel > 0.0)
            slot.v_vel = losses::vel_loss(slot.harm_pred, slot.item.x0, w.eps, up * w.lambda_vel,
                                          slot.harm_dpred);
          else
            slot.v_vel = losses::vel_loss(slot.harm_pred, slot.item.x0, w.eps);
          if (w.lambda_acc > 0.0)
            slot.v_acc = losses::acc_loss(slot.harm_pred, slot.item.x0, w.eps, up * w.lambda_acc,
                                          slot.harm_dpred);
          else
            slot.v_acc = losses::acc_loss(slot.harm_pred, slot.item.x0, w.eps);
          if (w.lambda_foot > 0.0)
            slot.v_foot =
                losses::foot_loss(slot.harm_pred, w.eps, up * w.lambda_foot, slot.harm_dpred);
          else
            slot.v_foot = losses::foot_loss(slot.harm_pred, w.eps);
          if (use_text) slot.e_m = eval::encode_motion_cached(extractors, slot.harm_pred, slot.em_cache);
        }
        if (use_dec) {
          TextCondition dec_cond;
          dec_cond.tokens = slot.cond.tokens;
          dec_cond.prefix = slot.dec_item.prefix;
          model::ForwardCache dec_cache;
          const MotionSequence pred_mix = model::forward(base, slot.x_t, t_step, dec_cond,
                                                         &res.adapters, 1.0, dec_cache,
                                                         &slot.dec_drop_seed);
          Mat dpred(pred_mix.length(), f);
          slot.v_dec = losses::dec_loss(pred_mix, slot.dec_item.x0, w, w.w_dec / b_u, dpred);
          model::backward(base, &res.adapters, 1.0, dec_cache, slot.x_t, dpred,
                          model::GradScope::adapters_only, slot.grads);
        }
      });
    }

    // Contrastive term couples the unsafe batch, so it runs between the
    // parallel phases.
    double text_val = 0.0;
    if (use_text && b_u >= 2) {
      const int d_e = extractors.feature_dim;
      Mat e_t(b_u, d_e), e_m(b_u, d_e);
      for (int i = 0; i < b_u; ++i) {
        const auto et = extractors.encode_text(unsafe[i].entry->caption);
        for (int c = 0; c < d_e; ++c) {
          e_t.at(i, c) = et[c];
          e_m.at(i, c) = unsafe[i].e_m[c];
        }
      }
      Mat de_m(b_u, d_e);
      text_val = losses::text_motion_loss(e_t, e_m, w.tau, w.w_harm * w.lambda_text, nullptr,
                                          &de_m);
      for (int i = 0; i < b_u; ++i) {
        std::vector<double> dm(d_e);
        for (int c = 0; c < d_e; ++c) dm[c] = de_m.at(i, c);
        eval::encode_motion_backward(extractors, unsafe[i].harm_pred, unsafe[i].em_cache, dm,
                                     unsafe[i].harm_dpred);
      }
    }

    // Unsafe stream, phase two: backprop the harm branch.
    if (use_harm) {
      parallel_for(unsafe.size(), cfg.threads, [&](size_t i) {
        UnsafeSlot& slot = unsafe[i];
        model::backward(base, &res.adapters, 1.0, slot.harm_cache, slot.x_t, slot.harm_dpred,
                        model::GradScope::adapters_only, slot.grads);
        slot.harm_cache = model::ForwardCache{};
      });
    }

    // Safe stream: pooled-feature divergence from the frozen base on the
    // main and decoupled branches, same timestep and noise.
    if (use_pres) {
      parallel_for(safe.size(), cfg.threads, [&](size_t j) {
        SafeSlot& slot = safe[j];
        TextCondition cond;
        cond.tokens = model::encode_text(base, slot.entry->caption);
        cond.prefix = slot.item.prefix;
        const MotionSequence x_t = model::q_sample(slot.item.x0, t_step, slot.noise, sched);
        model::ForwardCache cur_cache;
        const MotionSequence cur_pred =
            model::forward(base, x_t, t_step, cond, &res.adapters, 1.0, cur_cache,
                           &slot.cur_drop_seed);
        const MotionSequence base_pred = model::forward(base, x_t, t_step, cond);
        const std::vector<double> z_cur = losses::pool(cur_pred, w.eps);
        const std::vector<double> z_base = losses::pool(base_pred, w.eps);

        TextCondition dec_cond;
        dec_cond.tokens = cond.tokens;
        dec_cond.prefix = slot.dec_item.prefix;
        const MotionSequence x_t_dec = model::q_sample(slot.dec_item.x0, t_step, slot.noise, sched);
        model::ForwardCache dec_cache;
        const MotionSequence cur_dec_pred =
            model::forward(base, x_t_dec, t_step, dec_cond, &res.adapters, 1.0, dec_cache,
                           &slot.dec_drop_seed);
        const MotionSequence base_dec_pred = model::forward(base, x_t_dec, t_step, dec_cond);
        const std::vector<double> z_cur_dec = losses::pool(cur_dec_pred, w.eps);
        const std::vector<double> z_base_dec = losses::pool(base_dec_pred, w.eps);

        std::vector<double> dz_cur(z_cur.size(), 0.0), dz_cur_dec(z_cur_dec.size(), 0.0);
        slot.pres = losses::pres_divergence(z_cur, z_base, z_cur_dec, z_base_dec, w.gamma,
                                            w.w_pres / b_s, &dz_cur, &dz_cur_dec);
        slot.z_dist = vec_norm(z_cur, z_base);

        Mat dpred(cur_pred.length(), f);
        losses::pool_backward(cur_pred, dz_cur, w.eps, dpred);
        model::backward(base, &res.adapters, 1.0, cur_cache, x_t, dpred,
                        model::GradScope::adapters_only, slot.grads);
        Mat dpred_dec(cur_dec_pred.length(), f);
        losses::pool_backward(cur_dec_pred, dz_cur_dec, w.eps, dpred_dec);
        model::backward(base, &res.adapters, 1.0, dec_cache, x_t_dec, dpred_dec,
                        model::GradScope::adapters_only, slot.grads);
      });
    }

    // Deterministic reduction in slot order, then one shared update.
    model::GradMap total;
    StepRecord rec;
    rec.step = step;
    for (const auto& slot : unsafe) {
      total.add_scaled(slot.grads, 1.0);
      rec.term_mpjpe += slot.v_mpjpe / b_u;
      rec.term_vel += slot.v_vel / b_u;
      rec.term_acc += slot.v_acc / b_u;
      rec.term_foot += slot.v_foot / b_u;
      rec.l_dec += slot.v_dec / b_u;
    }
    for (const auto& slot : safe) {
      total.add_scaled(slot.grads, 1.0);
      rec.l_pres += slot.pres / b_s;
      rec.z_dist += slot.z_dist / b_s;
    }
    rec.term_text = text_val;
    rec.l_harm = w.lambda_mpjpe * rec.term_mpjpe + w.lambda_vel * rec.term_vel +
                 w.lambda_acc * rec.term_acc + w.lambda_foot * rec.term_foot +
                 w.lambda_text * text_val;
    const double objective = w.w_harm * rec.l_harm + w.w_dec * rec.l_dec + w.w_pres * rec.l_pres;
    require(std::isfinite(objective) && total.finite(), Errc::divergence,
            "non-finite stage-1 loss at step " + std::to_string(step));

    double norm = total.l2_norm();
    const double scale = (cfg.clip > 0.0 && norm > cfg.clip) ? cfg.clip / norm : 1.0;
    for (auto& adapter : res.adapters.adapters) {
      const Mat* ga = total.find("adapter:" + adapter.site + ".a");
      const Mat* gb = total.find("adapter:" + adapter.site + ".b");
      if (ga)
        for (size_t i = 0; i < adapter.a.w.size(); ++i)
          adapter.a.w[i] = static_cast<float>(static_cast<double>(adapter.a.w[i]) -
                                              cfg.lr * scale * ga->v[i]);
      if (gb)
        for (size_t i = 0; i < adapter.b.w.size(); ++i)
          adapter.b.w[i] = static_cast<float>(static_cast<double>(adapter.b.w[i]) -
                                              cfg.lr * scale * gb->v[i]);
    }
    res.log.push_back(rec);

    if ((step + 1) % cfg.checkpoint_cadence == 0 || step + 1 == cfg.steps) {
      require(io::content_hash(base.tensors) == base_hash, Errc::model_contract,
              "frozen baseline parameters changed during stage 1");
      if (checkpoint_sink) (*checkpoint_sink)(step + 1, res.adapters);
    }
  }

  res.task_vector = lora::extract_task_vector(res.adapters);
  return res;
}

MotionSequence negate_and_sample(const model::DenoiserParams& base, const lora::TaskVector& tv,
                                 const lora::NegationPolicy& policy,
                                 const std::vector<std::string>& prompt, int level,
                                 const Mat& prefix, uint64_t seed,
                                 const model::DiffusionSchedule& sched) {
  const double alpha = lora::apply_policy(level, policy);
  const model::DenoiserParams merged = lora::negate(base, tv, alpha);
  TextCondition cond;
  cond.tokens = model::encode_text(merged, prompt);
  cond.prefix = prefix;
  return model::sample(merged, cond, merged.config.gen_len, seed, sched).motion;
}

MotionSequence suffix_motion(const MotionSequence& m, int prefix_len) {
  const int n = m.valid_count() - prefix_len;
  require(n >= 1, Errc::metric_error, "no frames after the prefix");
  MotionSequence out;
  out.layout = m.layout;
  out.frames = Mat(n, m.width());
  out.mask.assign(n, 1);
  for (int t = 0; t < n; ++t)
    std::copy(m.frames.row(prefix_len + t), m.frames.row(prefix_len + t) + m.width(),
              out.frames.row(t));
  return out;
}

GenerationEval evaluate_generation(const model::DenoiserParams& base, const lora::TaskVector* tv,
                                   const lora::NegationPolicy& policy,
                                   const std::vector<const CorpusEntry*>& entries,
                                   const eval::FeatureExtractors& extractors,
                                   const safety::LemmaList& lemmas, uint64_t seed,
                                   const model::DiffusionSchedule& sched, int threads) {
  GenerationEval out;
  if (entries.empty()) return out;
  const int np = base.config.prefix_len;

  // Merge once per distinct scale; with a gated policy that is two models.
  std::vector<int> levels(entries.size(), 1);
  std::vector<double> alphas(entries.size(), 0.0);
  std::map<double, model::DenoiserParams> merged;
  for (size_t i = 0; i < entries.size(); ++i) {
    levels[i] = safety::classify(entries[i]->caption, lemmas).level;
    const double alpha = tv ? lora::apply_policy(levels[i], policy) : 0.0;
    alphas[i] = alpha;
    if (!merged.count(alpha))
      merged.emplace(alpha, tv ? lora::negate(base, *tv, alpha) : base);
  }

  out.recon_errors.resize(entries.size());
  out.gen_features.resize(entries.size());
  out.ref_features.resize(entries.size());
  out.pairs.resize(entries.size());
  out.motions.resize(entries.size());
  parallel_for(entries.size(), threads, [&](size_t i) {
    const CorpusEntry& entry = *entries[i];
    const model::DenoiserParams& params = merged.at(alphas[i]);
    TextCondition cond;
    cond.tokens = model::encode_text(params, entry.caption);
    cond.prefix = Mat(np, entry.motion.width());
    for (int t = 0; t < np; ++t)
      std::copy(entry.motion.frames.row(t), entry.motion.frames.row(t) + entry.motion.width(),
                cond.prefix.row(t));
    const MotionSequence gen =
        model::sample(params, cond, params.config.gen_len, derive_seed(seed, "gen", i), sched)
            .motion;
    out.recon_errors[i] = eval::reconstruction_error(gen, entry.motion, np);
    out.gen_features[i] = extractors.encode_motion(suffix_motion(gen, np));
    out.ref_features[i] = extractors.encode_motion(suffix_motion(entry.motion, np));
    out.pairs[i].e_t = extractors.encode_text(entry.caption);
    out.pairs[i].e_m = out.gen_features[i];
    out.motions[i] = gen;
  });
  return out;
}

}  // namespace motun::unlearn

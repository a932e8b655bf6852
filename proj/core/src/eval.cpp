#include "motun/eval.hpp"

#include <algorithm>
#include <cmath>

#include "motun/common.hpp"
#include "motun/losses.hpp"
#include "motun/rng.hpp"

namespace motun::eval {

namespace {

// y = W2 tanh(W1 x + b1) + b2, then L2-normalize. Shared by both encoders.
std::vector<double> mlp_encode(const io::NamedTensors& t, const std::string& prefix,
                               const std::vector<double>& x, MotionEncodeCache* cache) {
  const ParamTensor& w1 = t.at(prefix + ".w1");
  const ParamTensor& b1 = t.at(prefix + ".b1");
  const ParamTensor& w2 = t.at(prefix + ".w2");
  const ParamTensor& b2 = t.at(prefix + ".b2");
  std::vector<double> pre(w1.rows), hid(w1.rows), raw(w2.rows);
  for (int i = 0; i < w1.rows; ++i) {
    double s = static_cast<double>(b1.w[i]);
    const float* row = w1.row(i);
    for (int j = 0; j < w1.cols; ++j) s += static_cast<double>(row[j]) * x[j];
    pre[i] = s;
    hid[i] = std::tanh(s);
  }
  for (int i = 0; i < w2.rows; ++i) {
    double s = static_cast<double>(b2.w[i]);
    const float* row = w2.row(i);
    for (int j = 0; j < w2.cols; ++j) s += static_cast<double>(row[j]) * hid[j];
    raw[i] = s;
  }
  double norm = 0.0;
  for (double v : raw) norm += v * v;
  norm = std::sqrt(norm) + 1e-12;
  std::vector<double> out(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] / norm;
  if (cache) {
    cache->pooled = x;
    cache->pre = pre;
    cache->hid = hid;
    cache->raw = raw;
    cache->norm = norm;
  }
  return out;
}

std::vector<double> bag_of_tokens(const model::Vocab& vocab,
                                  const std::vector<std::string>& caption) {
  std::vector<double> bag(vocab.size(), 0.0);
  for (const auto& tok : caption) bag[vocab.id(tok)] += 1.0;
  double norm = 0.0;
  for (double v : bag) norm += v * v;
  norm = std::sqrt(norm) + 1e-12;
  for (double& v : bag) v /= norm;
  return bag;
}

}  // namespace

std::vector<double> FeatureExtractors::encode_text(const std::vector<std::string>& caption) const {
  return mlp_encode(tensors, "text", bag_of_tokens(vocab, caption), nullptr);
}

std::vector<double> FeatureExtractors::encode_motion(const motion::MotionSequence& m) const {
  return mlp_encode(tensors, "motion", losses::pool(m), nullptr);
}

std::vector<double> encode_motion_cached(const FeatureExtractors& ex,
                                         const motion::MotionSequence& m,
                                         MotionEncodeCache& cache) {
  return mlp_encode(ex.tensors, "motion", losses::pool(m), &cache);
}

namespace {

// Backward of mlp_encode into the input vector; parameter gradients are
// accumulated into `grads` when non-null (used only while training).
std::vector<double> mlp_backward(const io::NamedTensors& t, const std::string& prefix,
                                 const MotionEncodeCache& cache, const std::vector<double>& d_out,
                                 model::GradMap* grads) {
  const ParamTensor& w1 = t.at(prefix + ".w1");
  const ParamTensor& w2 = t.at(prefix + ".w2");
  // Through the normalization e = y / |y|.
  const double norm = cache.norm;
  double dot_ed = 0.0;
  for (size_t i = 0; i < d_out.size(); ++i) dot_ed += cache.raw[i] / norm * d_out[i];
  std::vector<double> dy(d_out.size());
  for (size_t i = 0; i < d_out.size(); ++i)
    dy[i] = (d_out[i] - cache.raw[i] / norm * dot_ed) / norm;
  std::vector<double> dhid(w2.cols, 0.0);
  for (int i = 0; i < w2.rows; ++i) {
    const float* row = w2.row(i);
    for (int j = 0; j < w2.cols; ++j) dhid[j] += static_cast<double>(row[j]) * dy[i];
  }
  if (grads) {
    Mat& gw2 = grads->at(prefix + ".w2", w2.rows, w2.cols);
    Mat& gb2 = grads->at(prefix + ".b2", 1, w2.rows);
    for (int i = 0; i < w2.rows; ++i) {
      for (int j = 0; j < w2.cols; ++j) gw2.at(i, j) += dy[i] * cache.hid[j];
      gb2.at(0, i) += dy[i];
    }
  }
  std::vector<double> dpre(w1.rows);
  for (int i = 0; i < w1.rows; ++i)
    dpre[i] = dhid[i] * (1.0 - cache.hid[i] * cache.hid[i]);
  std::vector<double> dx(w1.cols, 0.0);
  for (int i = 0; i < w1.rows; ++i) {
    const float* row = w1.row(i);
    for (int j = 0; j < w1.cols; ++j) dx[j] += static_cast<double>(row[j]) * dpre[i];
  }
  if (grads) {
    Mat& gw1 = grads->at(prefix + ".w1", w1.rows, w1.cols);
    Mat& gb1 = grads->at(prefix + ".b1", 1, w1.rows);
    for (int i = 0; i < w1.rows; ++i) {
      for (int j = 0; j < w1.cols; ++j) gw1.at(i, j) += dpre[i] * cache.pooled[j];
      gb1.at(0, i) += dpre[i];
    }
  }
  return dx;
}

}  // namespace

void encode_motion_backward(const FeatureExtractors& ex, const motion::MotionSequence& m,
                            const MotionEncodeCache& cache, const std::vector<double>& d_feature,
                            Mat& d_frames) {
  const std::vector<double> d_pooled = mlp_backward(ex.tensors, "motion", cache, d_feature, nullptr);
  losses::pool_backward(m, d_pooled, 1e-8, d_frames);
}

FeatureExtractors train_extractors(const std::vector<motion::CorpusEntry>& corpus, uint64_t seed,
                                   const ExtractorTrainConfig& cfg) {
  std::vector<const motion::CorpusEntry*> entries;
  for (const auto& e : corpus) entries.push_back(&e);
  std::sort(entries.begin(), entries.end(),
            [](const auto* a, const auto* b) { return a->id < b->id; });
  require(!entries.empty(), Errc::extractor_training, "empty corpus");
  {
    std::vector<std::string> fams;
    for (const auto* e : entries) fams.push_back(e->family);
    std::sort(fams.begin(), fams.end());
    fams.erase(std::unique(fams.begin(), fams.end()), fams.end());
    require(fams.size() >= 2, Errc::extractor_training,
            "extractor training needs >= 2 motion families");
  }

  std::vector<motion::CorpusEntry> sorted;
  sorted.reserve(entries.size());
  for (const auto* e : entries) sorted.push_back(*e);

  FeatureExtractors ex;
  ex.feature_dim = cfg.feature_dim;
  ex.hidden = cfg.hidden;
  ex.vocab = model::Vocab::build(sorted);
  ex.frame_width = sorted.front().motion.width();
  Rng rng(derive_seed(seed, "extractors"));
  const double st = 1.0 / std::sqrt(static_cast<double>(ex.vocab.size()));
  const double sm = 1.0 / std::sqrt(static_cast<double>(ex.frame_width));
  const double sh = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
  auto init = [&rng](int rows, int cols, double scale) {
    ParamTensor t(rows, cols);
    for (auto& v : t.w) v = static_cast<float>(scale * rng.normal());
    return t;
  };
  ex.tensors.add("text.w1", init(cfg.hidden, ex.vocab.size(), st));
  ex.tensors.add("text.b1", ParamTensor(1, cfg.hidden));
  ex.tensors.add("text.w2", init(cfg.feature_dim, cfg.hidden, sh));
  ex.tensors.add("text.b2", ParamTensor(1, cfg.feature_dim));
  ex.tensors.add("motion.w1", init(cfg.hidden, ex.frame_width, sm));
  ex.tensors.add("motion.b1", ParamTensor(1, cfg.hidden));
  ex.tensors.add("motion.w2", init(cfg.feature_dim, cfg.hidden, sh));
  ex.tensors.add("motion.b2", ParamTensor(1, cfg.feature_dim));

  // Adam state, keyed in registry order for determinism.
  std::vector<std::vector<double>> m_slot, v_slot;
  for (const auto& [name, t] : ex.tensors.items) {
    m_slot.emplace_back(t.size(), 0.0);
    v_slot.emplace_back(t.size(), 0.0);
  }

  const int b = std::min<int>(cfg.batch, static_cast<int>(sorted.size()));
  require(b >= 2, Errc::extractor_training, "extractor training needs a batch of >= 2");
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<int> pick(b);
    for (int i = 0; i < b; ++i) pick[i] = static_cast<int>(rng.uniform_index(sorted.size()));
    Mat e_t(b, cfg.feature_dim), e_m(b, cfg.feature_dim);
    std::vector<MotionEncodeCache> tc(b), mc(b);
    for (int i = 0; i < b; ++i) {
      const auto& entry = sorted[pick[i]];
      const auto et = mlp_encode(ex.tensors, "text", bag_of_tokens(ex.vocab, entry.caption), &tc[i]);
      const auto em = mlp_encode(ex.tensors, "motion", losses::pool(entry.motion), &mc[i]);
      for (int c = 0; c < cfg.feature_dim; ++c) {
        e_t.at(i, c) = et[c];
        e_m.at(i, c) = em[c];
      }
    }
    Mat de_t(b, cfg.feature_dim), de_m(b, cfg.feature_dim);
    losses::text_motion_loss(e_t, e_m, cfg.tau, 1.0, &de_t, &de_m);
    model::GradMap grads;
    for (int i = 0; i < b; ++i) {
      std::vector<double> dt(cfg.feature_dim), dm(cfg.feature_dim);
      for (int c = 0; c < cfg.feature_dim; ++c) {
        dt[c] = de_t.at(i, c);
        dm[c] = de_m.at(i, c);
      }
      mlp_backward(ex.tensors, "text", tc[i], dt, &grads);
      mlp_backward(ex.tensors, "motion", mc[i], dm, &grads);
    }
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, step + 1);
    const double bc2 = 1.0 - std::pow(b2, step + 1);
    for (size_t ti = 0; ti < ex.tensors.items.size(); ++ti) {
      auto& [name, t] = ex.tensors.items[ti];
      const Mat* g = grads.find(name);
      if (!g) continue;
      for (size_t i = 0; i < t.size(); ++i) {
        m_slot[ti][i] = b1 * m_slot[ti][i] + (1.0 - b1) * g->v[i];
        v_slot[ti][i] = b2 * v_slot[ti][i] + (1.0 - b2) * g->v[i] * g->v[i];
        t.w[i] = static_cast<float>(static_cast<double>(t.w[i]) -
                                    cfg.lr * (m_slot[ti][i] / bc1) /
                                        (std::sqrt(v_slot[ti][i] / bc2) + eps));
      }
    }
  }

  // The trained space must at least separate matched from mismatched pairs.
  double matched = 0.0, mismatched = 0.0;
  int mm = 0;
  std::vector<std::vector<double>> et_all, em_all;
  for (const auto& e : sorted) {
    et_all.push_back(ex.encode_text(e.caption));
    em_all.push_back(ex.encode_motion(e.motion));
  }
  for (size_t i = 0; i < sorted.size(); ++i) {
    matched += dot(et_all[i].data(), em_all[i].data(), cfg.feature_dim);
    for (size_t j = 0; j < sorted.size(); ++j) {
      if (sorted[j].family == sorted[i].family) continue;
      mismatched += dot(et_all[i].data(), em_all[j].data(), cfg.feature_dim);
      ++mm;
    }
  }
  matched /= static_cast<double>(sorted.size());
  if (mm > 0) mismatched /= mm;
  require(matched > mismatched, Errc::extractor_training,
          "degenerate corpus: contrastive training failed to separate pairs");
  return ex;
}

GaussianStats fit_gaussian(const std::vector<std::vector<double>>& features) {
  require(features.size() >= 2, Errc::metric_error, "need >= 2 features to fit a Gaussian");
  const int d = static_cast<int>(features.front().size());
  GaussianStats g;
  g.dim = d;
  g.mean.assign(d, 0.0);
  for (const auto& f : features) {
    require(static_cast<int>(f.size()) == d, Errc::metric_error, "inconsistent feature size");
    for (int i = 0; i < d; ++i) g.mean[i] += f[i];
  }
  for (double& v : g.mean) v /= static_cast<double>(features.size());
  g.cov.assign(static_cast<size_t>(d) * d, 0.0);
  for (const auto& f : features)
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        g.cov[static_cast<size_t>(i) * d + j] += (f[i] - g.mean[i]) * (f[j] - g.mean[j]);
  const double denom = static_cast<double>(features.size()) - 1.0;
  for (double& v : g.cov) v /= denom;
  for (int i = 0; i < d; ++i) g.cov[static_cast<size_t>(i) * d + i] += 1e-6;
  return g;
}

void jacobi_eigen(std::vector<double> a, int d, std::vector<double>& values,
                  std::vector<double>& vecs) {
  vecs.assign(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) vecs[static_cast<size_t>(i) * d + i] = 1.0;
  auto at = [&a, d](int i, int j) -> double& { return a[static_cast<size_t>(i) * d + j]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < d; ++i)
      for (int j = i + 1; j < d; ++j) off += at(i, j) * at(i, j);
    if (off < 1e-24) break;
    for (int p = 0; p < d - 1; ++p) {
      for (int q = p + 1; q < d; ++q) {
        const double apq = at(p, q);
        if (std::fabs(apq) < 1e-18) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < d; ++i) {
          const double aip = at(i, p), aiq = at(i, q);
          at(i, p) = c * aip - s * aiq;
          at(i, q) = s * aip + c * aiq;
        }
        for (int j = 0; j < d; ++j) {
          const double apj = at(p, j), aqj = at(q, j);
          at(p, j) = c * apj - s * aqj;
          at(q, j) = s * apj + c * aqj;
        }
        for (int i = 0; i < d; ++i) {
          const double vip = vecs[static_cast<size_t>(i) * d + p];
          const double viq = vecs[static_cast<size_t>(i) * d + q];
          vecs[static_cast<size_t>(i) * d + p] = c * vip - s * viq;
          vecs[static_cast<size_t>(i) * d + q] = s * vip + c * viq;
        }
      }
    }
  }
  values.resize(d);
  for (int i = 0; i < d; ++i) values[i] = a[static_cast<size_t>(i) * d + i];
}

namespace {

// B = V diag(f(lambda)) V^T for a symmetric input decomposed by Jacobi.
std::vector<double> symmetric_function(const std::vector<double>& m, int d,
                                       double (*f)(double)) {
  std::vector<double> values, vecs;
  jacobi_eigen(m, d, values, vecs);
  std::vector<double> out(static_cast<size_t>(d) * d, 0.0);
  for (int k = 0; k < d; ++k) {
    const double fv = f(values[k]);
    if (fv == 0.0) continue;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        out[static_cast<size_t>(i) * d + j] +=
            fv * vecs[static_cast<size_t>(i) * d + k] * vecs[static_cast<size_t>(j) * d + k];
  }
  return out;
}

double clamped_sqrt(double x) { return x > 0.0 ? std::sqrt(x) : 0.0; }

}  // namespace

double fid(const GaussianStats& a, const GaussianStats& b) {
  require(a.dim == b.dim && a.dim > 0, Errc::metric_error, "Gaussian dimensions differ");
  const int d = a.dim;
  double mean_term = 0.0;
  for (int i = 0; i < d; ++i) {
    const double dd = a.mean[i] - b.mean[i];
    mean_term += dd * dd;
  }
  const std::vector<double> sqrt_a = symmetric_function(a.cov, d, clamped_sqrt);
  // M = sqrt(Sa) Sb sqrt(Sa), symmetrized against rounding.
  std::vector<double> tmp(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k) {
      const double s = sqrt_a[static_cast<size_t>(i) * d + k];
      if (s == 0.0) continue;
      for (int j = 0; j < d; ++j) tmp[static_cast<size_t>(i) * d + j] += s * b.cov[static_cast<size_t>(k) * d + j];
    }
  std::vector<double> m(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k) {
      const double s = tmp[static_cast<size_t>(i) * d + k];
      if (s == 0.0) continue;
      for (int j = 0; j < d; ++j) m[static_cast<size_t>(i) * d + j] += s * sqrt_a[static_cast<size_t>(k) * d + j];
    }
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      const double avg = 0.5 * (m[static_cast<size_t>(i) * d + j] + m[static_cast<size_t>(j) * d + i]);
      m[static_cast<size_t>(i) * d + j] = avg;
      m[static_cast<size_t>(j) * d + i] = avg;
    }
  std::vector<double> values, vecs;
  jacobi_eigen(m, d, values, vecs);
  double trace_sqrt = 0.0;
  for (double v : values) trace_sqrt += clamped_sqrt(v);
  double trace_ab = 0.0;
  for (int i = 0; i < d; ++i)
    trace_ab += a.cov[static_cast<size_t>(i) * d + i] + b.cov[static_cast<size_t>(i) * d + i];
  return mean_term + trace_ab - 2.0 * trace_sqrt;
}

double r_precision_subset(const std::vector<FeaturePair>& pool, const std::vector<size_t>& queries,
                          int k, uint64_t seed) {
  require(k >= 1 && k <= 3, Errc::metric_error, "r-precision supports k in 1..3");
  require(pool.size() >= 32, Errc::insufficient_pool,
          "r-precision needs a pool of >= 32 entries, got " + std::to_string(pool.size()));
  require(!queries.empty(), Errc::insufficient_pool, "r-precision needs queries");
  const size_t n = pool.size();
  auto dist2 = [](const std::vector<double>& x, const std::vector<double>& y) {
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - y[i];
      s += d * d;
    }
    return s;
  };
  int hits = 0;
  for (size_t qi : queries) {
    Rng rng(derive_seed(seed, "rprecision", qi));
    // 31 distinct negatives drawn from the other pool entries.
    std::vector<size_t> candidates;
    candidates.reserve(n - 1);
    for (size_t j = 0; j < n; ++j)
      if (j != qi) candidates.push_back(j);
    for (int i = 0; i < 31; ++i) {
      const size_t pick = i + rng.uniform_index(candidates.size() - i);
      std::swap(candidates[i], candidates[pick]);
    }
    const double d_true = dist2(pool[qi].e_m, pool[qi].e_t);
    int ahead = 0;
    for (int i = 0; i < 31; ++i) {
      if (dist2(pool[qi].e_m, pool[candidates[i]].e_t) <= d_true) ++ahead;
    }
    if (ahead + 1 <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

double r_precision(const std::vector<FeaturePair>& queries, int k, uint64_t seed) {
  std::vector<size_t> all(queries.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = i;
  return r_precision_subset(queries, all, k, seed);
}

double diversity(const std::vector<std::vector<double>>& features, int m_d, uint64_t seed) {
  require(m_d >= 1, Errc::metric_error, "diversity needs m_d >= 1");
  require(static_cast<int>(features.size()) >= 2 * m_d, Errc::metric_error,
          "diversity pool too small: need " + std::to_string(2 * m_d) + ", have " +
              std::to_string(features.size()));
  Rng rng(derive_seed(seed, "diversity"));
  const std::vector<size_t> perm = rng.permutation(features.size());
  double total = 0.0;
  for (int i = 0; i < m_d; ++i) {
    const auto& x = features[perm[i]];
    const auto& y = features[perm[m_d + i]];
    double s = 0.0;
    for (size_t c = 0; c < x.size(); ++c) {
      const double d = x[c] - y[c];
      s += d * d;
    }
    total += std::sqrt(s);
  }
  return total / m_d;
}

FootSlipReport foot_slip_report(const std::vector<motion::MotionSequence>& motions) {
  require(!motions.empty(), Errc::metric_error, "foot slip report needs motions");
  FootSlipReport rep;
  double contact_sum = 0.0;
  size_t contact_n = 0;
  for (const auto& m : motions) {
    rep.per_motion.push_back(losses::foot_loss(m));
    const int n = m.valid_count();
    for (int t = 0; t < n; ++t) {
      const double* row = m.frames.row(t) + m.layout.contact_offset;
      for (int c = 0; c < m.layout.contact_width; ++c) {
        contact_sum += row[c];
        ++contact_n;
      }
    }
  }
  for (double v : rep.per_motion) {
    rep.mean += v;
    rep.max = std::max(rep.max, v);
  }
  rep.mean /= static_cast<double>(rep.per_motion.size());
  rep.contact_mean = contact_n ? contact_sum / static_cast<double>(contact_n) : 0.0;
  return rep;
}

double reconstruction_error(const motion::MotionSequence& generated,
                            const motion::MotionSequence& truth, int prefix_len) {
  const int len = std::min(generated.valid_count(), truth.valid_count()) - prefix_len;
  require(len >= 1, Errc::metric_error, "no overlap after the prefix");
  const int f = generated.width();
  double sum = 0.0;
  for (int t = 0; t < len; ++t) {
    const double* g = generated.frames.row(prefix_len + t);
    const double* r = truth.frames.row(prefix_len + t);
    double s2 = 0.0;
    for (int c = 0; c < f; ++c) {
      const double d = g[c] - r[c];
      s2 += d * d;
    }
    sum += std::sqrt(s2);
  }
  return sum / len;
}

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    var /= static_cast<double>(values.size() - 1);
    s.half_width = 1.96 * std::sqrt(var / static_cast<double>(values.size()));
  }
  return s;
}

}  // namespace motun::eval

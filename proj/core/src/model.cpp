#include "motun/model.hpp"

#include <algorithm>
#include <cmath>

#include "motun/common.hpp"
#include "motun/lora.hpp"
#include "motun/rng.hpp"
#include "motun/threading.hpp"

namespace motun::model {

using motion::MotionSequence;
using motion::TextCondition;

void ModelConfig::validate() const {
  require(joints >= 2, Errc::bad_config, "model needs >= 2 joints");
  require(latent > 0 && layers > 0 && heads > 0 && ffn_hidden > 0, Errc::bad_config,
          "model dimensions must be positive");
  require(latent % heads == 0, Errc::bad_config, "latent size must divide into heads");
  require(diffusion_steps >= 1, Errc::bad_config, "diffusion needs >= 1 step");
  require(prefix_len >= 0 && gen_len >= 1, Errc::bad_config, "invalid prefix/generation length");
}

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.joints = 22;
  c.latent = 512;
  c.layers = 8;
  c.heads = 4;
  c.ffn_hidden = 1024;
  return c;
}

int Vocab::id(const std::string& tok) const {
  auto it = index.find(tok);
  return it == index.end() ? 0 : it->second;
}

int Vocab::add(const std::string& tok) {
  auto it = index.find(tok);
  if (it != index.end()) return it->second;
  const int id = static_cast<int>(tokens.size());
  tokens.push_back(tok);
  index.emplace(tok, id);
  return id;
}

Vocab Vocab::build(const std::vector<motion::CorpusEntry>& corpus) {
  // Sorted insertion keeps the table independent of corpus order.
  std::vector<std::string> words;
  for (const auto& e : corpus)
    for (const auto& tok : e.caption) words.push_back(tok);
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  Vocab v;
  for (const auto& w : words) v.add(w);
  return v;
}

DiffusionSchedule DiffusionSchedule::cosine(int steps) {
  require(steps >= 1, Errc::bad_config, "diffusion needs >= 1 step");
  DiffusionSchedule s;
  s.steps = steps;
  s.alpha_bar.resize(steps);
  const double offset = 0.008;
  auto f = [offset](double u) {
    const double a = std::cos((u + offset) / (1.0 + offset) * 1.5707963267948966);
    return a * a;
  };
  const double f0 = f(0.0);
  for (int t = 0; t < steps; ++t) s.alpha_bar[t] = f(static_cast<double>(t) / steps) / f0;
  s.validate();
  return s;
}

void DiffusionSchedule::validate() const {
  require(static_cast<int>(alpha_bar.size()) == steps, Errc::bad_config,
          "schedule length mismatch");
  for (int t = 0; t < steps; ++t) {
    require(alpha_bar[t] > 0.0 && alpha_bar[t] <= 1.0, Errc::bad_config,
            "alpha_bar out of (0,1]");
    if (t > 0)
      require(alpha_bar[t] < alpha_bar[t - 1], Errc::bad_config,
              "alpha_bar must strictly decrease");
  }
}

namespace {

ParamTensor init_tensor(int rows, int cols, double scale, Rng& rng) {
  ParamTensor t(rows, cols);
  for (auto& w : t.w) w = static_cast<float>(scale * rng.normal());
  return t;
}

ParamTensor const_tensor(int rows, int cols, float value) {
  ParamTensor t(rows, cols);
  std::fill(t.w.begin(), t.w.end(), value);
  return t;
}

std::string layer_name(int l, const char* rest) {
  return "layers." + std::to_string(l) + "." + rest;
}

}  // namespace

DenoiserParams DenoiserParams::init(const ModelConfig& cfg, const Vocab& vocab, uint64_t seed) {
  cfg.validate();
  DenoiserParams p;
  p.config = cfg;
  p.vocab = vocab;
  Rng rng(derive_seed(seed, "model-init"));
  const int d = cfg.latent;
  const int f = cfg.frame_width();
  const int h = cfg.ffn_hidden;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double sf = 1.0 / std::sqrt(static_cast<double>(f));
  auto& t = p.tensors;
  t.add("text.embed", init_tensor(vocab.size(), d, sd, rng));
  t.add("text.proj.w", init_tensor(d, d, sd, rng));
  t.add("text.proj.b", const_tensor(1, d, 0.0f));
  t.add("in.prefix.w", init_tensor(d, f, sf, rng));
  t.add("in.prefix.b", const_tensor(1, d, 0.0f));
  t.add("in.motion.w", init_tensor(d, f, sf, rng));
  t.add("in.motion.b", const_tensor(1, d, 0.0f));
  t.add("time.w", init_tensor(d, d, sd, rng));
  t.add("time.b", const_tensor(1, d, 0.0f));
  for (int l = 0; l < cfg.layers; ++l) {
    t.add(layer_name(l, "ln1.g"), const_tensor(1, d, 1.0f));
    t.add(layer_name(l, "ln1.b"), const_tensor(1, d, 0.0f));
    t.add(layer_name(l, "self.wq"), init_tensor(d, d, sd, rng));
    t.add(layer_name(l, "self.wk"), init_tensor(d, d, sd, rng));
    t.add(layer_name(l, "self.wv"), init_tensor(d, d, sd, rng));
    t.add(layer_name(l, "self.wo"), init_tensor(d, d, sd * 0.5, rng));
    t.add(layer_name(l, "ln2.g"), const_tensor(1, d, 1.0f));
    t.add(layer_name(l, "ln2.b"), const_tensor(1, d, 0.0f));
    t.add(layer_name(l, "cross.wq"), init_tensor(d, d, sd, rng));
    t.add(layer_name(l, "cross.wk"), init_tensor(d, d, sd, rng));
    t.add(layer_name(l, "cross.wv"), init_tensor(d, d, sd, rng));
    t.add(layer_name(l, "cross.wo"), init_tensor(d, d, sd * 0.5, rng));
    t.add(layer_name(l, "ln3.g"), const_tensor(1, d, 1.0f));
    t.add(layer_name(l, "ln3.b"), const_tensor(1, d, 0.0f));
    t.add(layer_name(l, "ffn.w1"), init_tensor(h, d, sd, rng));
    t.add(layer_name(l, "ffn.b1"), const_tensor(1, h, 0.0f));
    t.add(layer_name(l, "ffn.w2"), init_tensor(d, h, 0.5 / std::sqrt(static_cast<double>(h)), rng));
    t.add(layer_name(l, "ffn.b2"), const_tensor(1, d, 0.0f));
  }
  t.add("out.ln.g", const_tensor(1, d, 1.0f));
  t.add("out.ln.b", const_tensor(1, d, 0.0f));
  t.add("out.head.w", init_tensor(f, d, sd * 0.1, rng));
  t.add("out.head.b", const_tensor(1, f, 0.0f));
  return p;
}

std::vector<std::string> DenoiserParams::adapter_sites() const {
  std::vector<std::string> sites;
  for (int l = 0; l < config.layers; ++l) {
    sites.push_back(layer_name(l, "cross.wo"));
    sites.push_back(layer_name(l, "ffn.w1"));
    sites.push_back(layer_name(l, "ffn.w2"));
  }
  return sites;
}

void save_model(const std::filesystem::path& path, const DenoiserParams& p) {
  io::Checkpoint ck;
  ck.kind = "model";
  std::string vocab_json = "[";
  for (size_t i = 0; i < p.vocab.tokens.size(); ++i) {
    if (i) vocab_json += ",";
    vocab_json += "\"" + p.vocab.tokens[i] + "\"";
  }
  vocab_json += "]";
  ck.extra = "{\"joints\":" + std::to_string(p.config.joints) +
             ",\"latent\":" + std::to_string(p.config.latent) +
             ",\"layers\":" + std::to_string(p.config.layers) +
             ",\"heads\":" + std::to_string(p.config.heads) +
             ",\"ffn_hidden\":" + std::to_string(p.config.ffn_hidden) +
             ",\"diffusion_steps\":" + std::to_string(p.config.diffusion_steps) +
             ",\"prefix_len\":" + std::to_string(p.config.prefix_len) +
             ",\"gen_len\":" + std::to_string(p.config.gen_len) + ",\"vocab\":" + vocab_json + "}";
  ck.tensors = p.tensors;
  io::save_checkpoint(path, ck);
}

DenoiserParams load_model(const std::filesystem::path& path) {
  io::Checkpoint ck = io::load_checkpoint(path);
  require(ck.kind == "model", Errc::io_error, "not a model checkpoint: " + path.string());
  DenoiserParams p;
  // Minimal hand parse keeps the header format obvious; the fields were
  // written by save_model in a fixed order.
  auto get_int = [&](const std::string& key) {
    const std::string tag = "\"" + key + "\":";
    const size_t pos = ck.extra.find(tag);
    require(pos != std::string::npos, Errc::io_error, "checkpoint missing field " + key);
    return std::stoi(ck.extra.substr(pos + tag.size()));
  };
  p.config.joints = get_int("joints");
  p.config.latent = get_int("latent");
  p.config.layers = get_int("layers");
  p.config.heads = get_int("heads");
  p.config.ffn_hidden = get_int("ffn_hidden");
  p.config.diffusion_steps = get_int("diffusion_steps");
  p.config.prefix_len = get_int("prefix_len");
  p.config.gen_len = get_int("gen_len");
  const size_t vb = ck.extra.find("\"vocab\":[");
  require(vb != std::string::npos, Errc::io_error, "checkpoint missing vocab");
  size_t pos = vb + 9;
  Vocab vocab;
  while (pos < ck.extra.size() && ck.extra[pos] != ']') {
    if (ck.extra[pos] == '"') {
      const size_t end = ck.extra.find('"', pos + 1);
      const std::string tok = ck.extra.substr(pos + 1, end - pos - 1);
      if (tok != "<unk>") vocab.add(tok);
      pos = end + 1;
    } else {
      ++pos;
    }
  }
  p.vocab = vocab;
  p.tensors = std::move(ck.tensors);
  return p;
}

Mat& GradMap::at(const std::string& name, int rows, int cols) {
  auto it = g.find(name);
  if (it == g.end()) it = g.emplace(name, Mat(rows, cols)).first;
  return it->second;
}

const Mat* GradMap::find(const std::string& name) const {
  auto it = g.find(name);
  return it == g.end() ? nullptr : &it->second;
}

void GradMap::add_scaled(const GradMap& other, double scale) {
  for (const auto& [name, m] : other.g) {
    Mat& dst = at(name, m.rows, m.cols);
    for (size_t i = 0; i < m.v.size(); ++i) dst.v[i] += scale * m.v[i];
  }
}

double GradMap::l2_norm() const {
  // Names are iterated only to sum squares; order cannot matter here.
  double s = 0.0;
  for (const auto& [name, m] : g)
    for (double x : m.v) s += x * x;
  return std::sqrt(s);
}

bool GradMap::finite() const {
  for (const auto& [name, m] : g)
    if (!all_finite(m)) return false;
  return true;
}

// --- text encoder --------------------------------------------------------

Mat encode_text(const DenoiserParams& p, const std::vector<std::string>& caption) {
  TextCache cache;
  return encode_text(p, caption, cache);
}

Mat encode_text(const DenoiserParams& p, const std::vector<std::string>& caption,
                TextCache& cache) {
  require(!caption.empty(), Errc::empty_condition, "empty caption after tokenization");
  const ParamTensor& embed = p.tensors.at("text.embed");
  const int n = static_cast<int>(caption.size());
  cache.ids.resize(n);
  cache.embedded = Mat(n, embed.cols);
  for (int i = 0; i < n; ++i) {
    const int id = p.vocab.id(caption[i]);
    cache.ids[i] = id;
    const float* row = embed.row(id);
    for (int c = 0; c < embed.cols; ++c) cache.embedded.at(i, c) = static_cast<double>(row[c]);
  }
  Mat out;
  matmul_nt(cache.embedded, p.tensors.at("text.proj.w"), out);
  add_row_bias(out, p.tensors.at("text.proj.b"));
  return out;
}

void encode_text_backward(const DenoiserParams& p, const TextCache& cache, const Mat& d_out,
                          GradMap& grads) {
  const ParamTensor& proj = p.tensors.at("text.proj.w");
  matmul_tn_acc(d_out, cache.embedded, grads.at("text.proj.w", proj.rows, proj.cols));
  Mat& db = grads.at("text.proj.b", 1, proj.rows);
  for (int i = 0; i < d_out.rows; ++i)
    for (int c = 0; c < d_out.cols; ++c) db.at(0, c) += d_out.at(i, c);
  Mat d_embedded;
  matmul_nn(d_out, proj, d_embedded);
  const ParamTensor& embed = p.tensors.at("text.embed");
  Mat& de = grads.at("text.embed", embed.rows, embed.cols);
  for (size_t i = 0; i < cache.ids.size(); ++i) {
    double* row = de.row(cache.ids[i]);
    for (int c = 0; c < embed.cols; ++c) row[c] += d_embedded.at(static_cast<int>(i), c);
  }
}

// --- forward helpers ------------------------------------------------------

namespace {

constexpr double kLnEps = 1e-5;

void layer_norm(const Mat& x, const ParamTensor& g, const ParamTensor& b, Mat& y,
                std::vector<double>& rstd) {
  const int d = x.cols;
  if (y.rows != x.rows || y.cols != d) y = Mat(x.rows, d);
  rstd.resize(x.rows);
  for (int i = 0; i < x.rows; ++i) {
    const double* xi = x.row(i);
    double mean = 0.0;
    for (int c = 0; c < d; ++c) mean += xi[c];
    mean /= d;
    double var = 0.0;
    for (int c = 0; c < d; ++c) {
      const double t = xi[c] - mean;
      var += t * t;
    }
    var /= d;
    const double r = 1.0 / std::sqrt(var + kLnEps);
    rstd[i] = r;
    double* yi = y.row(i);
    for (int c = 0; c < d; ++c)
      yi[c] = static_cast<double>(g.w[c]) * (xi[c] - mean) * r + static_cast<double>(b.w[c]);
  }
}

void layer_norm_backward(const Mat& x, const std::vector<double>& rstd, const ParamTensor& g,
                         const Mat& dy, Mat& dx, Mat* dg, Mat* db) {
  const int d = x.cols;
  for (int i = 0; i < x.rows; ++i) {
    const double* xi = x.row(i);
    const double* dyi = dy.row(i);
    double mean = 0.0;
    for (int c = 0; c < d; ++c) mean += xi[c];
    mean /= d;
    const double r = rstd[i];
    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
    for (int c = 0; c < d; ++c) {
      const double xh = (xi[c] - mean) * r;
      const double dxh = dyi[c] * static_cast<double>(g.w[c]);
      sum_dxh += dxh;
      sum_dxh_xh += dxh * xh;
      if (dg) dg->at(0, c) += dyi[c] * xh;
      if (db) db->at(0, c) += dyi[c];
    }
    double* dxi = dx.row(i);
    for (int c = 0; c < d; ++c) {
      const double xh = (xi[c] - mean) * r;
      const double dxh = dyi[c] * static_cast<double>(g.w[c]);
      dxi[c] += r * (dxh - (sum_dxh + xh * sum_dxh_xh) / d);
    }
  }
}

double gelu(double x) {
  const double u = 0.7978845608028654 * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad(double x) {
  const double u = 0.7978845608028654 * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  const double sech2 = 1.0 - t * t;
  return 0.5 * (1.0 + t) + 0.5 * x * sech2 * 0.7978845608028654 * (1.0 + 3.0 * 0.044715 * x * x);
}

double alibi_slope(int head, int heads) {
  // Geometric slopes, steeper for the leading heads.
  return std::pow(2.0, -static_cast<double>(head + 1) * 8.0 / heads);
}

Mat time_features(int t_step, int d) {
  Mat feat(1, d);
  for (int i = 0; i < d; i += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / d);
    feat.at(0, i) = std::sin(t_step * freq);
    if (i + 1 < d) feat.at(0, i + 1) = std::cos(t_step * freq);
  }
  return feat;
}

struct AdapterHook {
  const lora::LoraAdapter* adapter = nullptr;
  double scale = 0.0;
};

AdapterHook find_adapter(const lora::AdapterSet* adapters, double scale, const std::string& site) {
  AdapterHook h;
  if (!adapters) return h;
  for (const auto& a : adapters->adapters) {
    if (a.site == site) {
      h.adapter = &a;
      h.scale = scale * a.alpha / a.rank;
      return h;
    }
  }
  return h;
}

// y += s * (drop(x) A^T) B^T with the intermediates cached for backward.
void apply_adapter(const AdapterHook& hook, const Mat& x, Mat& y, LayerCache& lc,
                   const std::string& site, uint64_t* dropout_seed) {
  if (!hook.adapter) return;
  const auto& a = *hook.adapter;
  Mat dropped = x;
  if (dropout_seed && a.dropout > 0.0) {
    Rng rng(derive_seed(*dropout_seed, site));
    const double keep = 1.0 - a.dropout;
    Mat mult(x.rows, x.cols);
    for (size_t i = 0; i < dropped.v.size(); ++i) {
      const double m = rng.uniform() < a.dropout ? 0.0 : 1.0 / keep;
      mult.v[i] = m;
      dropped.v[i] *= m;
    }
    lc.lora_mult[site] = std::move(mult);
  }
  Mat u;
  matmul_nt(dropped, a.a, u);
  Mat delta;
  matmul_nt(u, a.b, delta);
  for (size_t i = 0; i < y.v.size(); ++i) y.v[i] += hook.scale * delta.v[i];
  lc.lora_in[site] = std::move(dropped);
  lc.lora_u[site] = std::move(u);
}

// Backward of apply_adapter: pushes the adapter-branch gradient into dx and
// accumulates dA/dB.
void adapter_backward(const AdapterHook& hook, const std::string& site, const LayerCache& lc,
                      const Mat& dy, Mat& dx, GradMap& grads) {
  if (!hook.adapter) return;
  const auto& a = *hook.adapter;
  const Mat& dropped = lc.lora_in.at(site);
  const Mat& u = lc.lora_u.at(site);
  Mat du;
  matmul_nn(dy, a.b, du);
  for (double& v : du.v) v *= hook.scale;
  {
    Mat dys = dy;
    for (double& v : dys.v) v *= hook.scale;
    matmul_tn_acc(dys, u, grads.at("adapter:" + site + ".b", a.b.rows, a.b.cols));
    matmul_tn_acc(du, dropped, grads.at("adapter:" + site + ".a", a.a.rows, a.a.cols));
  }
  Mat dxd;
  matmul_nn(du, a.a, dxd);
  auto mult_it = lc.lora_mult.find(site);
  if (mult_it == lc.lora_mult.end()) {
    for (size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dxd.v[i];
  } else {
    const Mat& mult = mult_it->second;
    for (size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dxd.v[i] * mult.v[i];
  }
}

}  // namespace

// --- forward ---------------------------------------------------------------

MotionSequence forward(const DenoiserParams& p, const MotionSequence& x_t, int t_step,
                       const TextCondition& cond, const lora::AdapterSet* adapters,
                       double adapter_scale) {
  ForwardCache cache;
  return forward(p, x_t, t_step, cond, adapters, adapter_scale, cache, nullptr);
}

MotionSequence forward(const DenoiserParams& p, const MotionSequence& x_t, int t_step,
                       const TextCondition& cond, const lora::AdapterSet* adapters,
                       double adapter_scale, ForwardCache& cache, uint64_t* dropout_seed) {
  const ModelConfig& cfg = p.config;
  const int d = cfg.latent;
  const int f = cfg.frame_width();
  require(x_t.width() == f, Errc::model_contract, "motion width does not match model");
  require(t_step >= 0 && t_step < cfg.diffusion_steps, Errc::model_contract,
          "diffusion step out of range");
  require(cond.tokens.cols == d || cond.tokens.rows == 0, Errc::model_contract,
          "condition token width does not match model");
  require(cond.prefix.rows == 0 || cond.prefix.cols == f, Errc::model_contract,
          "condition prefix width does not match model");
  motion::validate(x_t);

  const int np = cond.prefix.rows;
  const int valid = x_t.valid_count();
  const int seq = np + valid;
  require(seq > 0, Errc::model_contract, "empty sequence");
  cache.valid = valid;
  cache.seq = seq;
  cache.t_step = t_step;
  cache.ctx = cond.tokens;

  // Token embedding: prefix and motion rows through their projections, a
  // diffusion-step embedding added everywhere.
  cache.prefix_in = cond.prefix;
  cache.x_proj_in = Mat(valid, f);
  for (int t = 0; t < valid; ++t)
    std::copy(x_t.frames.row(t), x_t.frames.row(t) + f, cache.x_proj_in.row(t));
  cache.time_feat = time_features(t_step, d);
  Mat time_proj;
  matmul_nt(cache.time_feat, p.tensors.at("time.w"), time_proj);
  add_row_bias(time_proj, p.tensors.at("time.b"));

  cache.h0 = Mat(seq, d);
  if (np > 0) {
    Mat hp;
    matmul_nt(cache.prefix_in, p.tensors.at("in.prefix.w"), hp);
    add_row_bias(hp, p.tensors.at("in.prefix.b"));
    for (int i = 0; i < np; ++i)
      std::copy(hp.row(i), hp.row(i) + d, cache.h0.row(i));
  }
  {
    Mat hx;
    matmul_nt(cache.x_proj_in, p.tensors.at("in.motion.w"), hx);
    add_row_bias(hx, p.tensors.at("in.motion.b"));
    for (int i = 0; i < valid; ++i)
      std::copy(hx.row(i), hx.row(i) + d, cache.h0.row(np + i));
  }
  for (int i = 0; i < seq; ++i) {
    double* row = cache.h0.row(i);
    for (int c = 0; c < d; ++c) row[c] += time_proj.at(0, c);
  }

  const int heads = cfg.heads;
  const int hd = d / heads;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  const int n_ctx = cache.ctx.rows;

  Mat h = cache.h0;
  cache.layers.resize(cfg.layers);
  cache.layer_in.resize(cfg.layers);
  for (int l = 0; l < cfg.layers; ++l) {
    LayerCache& lc = cache.layers[l];
    cache.layer_in[l] = h;

    // Causal self-attention with a linear distance bias per head. Valid
    // tokens form a prefix of the sequence, so a causal window only ever
    // sees valid keys.
    lc.ln1_in = h;
    layer_norm(lc.ln1_in, p.tensors.at(layer_name(l, "ln1.g")),
               p.tensors.at(layer_name(l, "ln1.b")), lc.ln1_out, lc.ln1_rstd);
    matmul_nt(lc.ln1_out, p.tensors.at(layer_name(l, "self.wq")), lc.q);
    matmul_nt(lc.ln1_out, p.tensors.at(layer_name(l, "self.wk")), lc.k);
    matmul_nt(lc.ln1_out, p.tensors.at(layer_name(l, "self.wv")), lc.v);
    lc.attn.assign(heads, Mat(seq, seq));
    lc.attn_cat = Mat(seq, d);
    for (int hh = 0; hh < heads; ++hh) {
      const double slope = alibi_slope(hh, heads);
      const int off = hh * hd;
      Mat& attn = lc.attn[hh];
      for (int i = 0; i < seq; ++i) {
        double mx = -1e300;
        double* scores = attn.row(i);
        for (int j = 0; j <= i; ++j) {
          double s = dot(lc.q.row(i) + off, lc.k.row(j) + off, hd) * inv_sqrt_hd -
                     slope * (i - j);
          scores[j] = s;
          mx = std::max(mx, s);
        }
        double z = 0.0;
        for (int j = 0; j <= i; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          z += scores[j];
        }
        double* out = lc.attn_cat.row(i) + off;
        for (int j = 0; j <= i; ++j) {
          scores[j] /= z;
          const double a = scores[j];
          const double* vj = lc.v.row(j) + off;
          for (int c = 0; c < hd; ++c) out[c] += a * vj[c];
        }
      }
    }
    Mat self_out;
    matmul_nt(lc.attn_cat, p.tensors.at(layer_name(l, "self.wo")), self_out);
    for (size_t i = 0; i < h.v.size(); ++i) h.v[i] += self_out.v[i];

    // Cross-attention over the text tokens.
    lc.ln2_in = h;
    layer_norm(lc.ln2_in, p.tensors.at(layer_name(l, "ln2.g")),
               p.tensors.at(layer_name(l, "ln2.b")), lc.ln2_out, lc.ln2_rstd);
    if (n_ctx > 0) {
      matmul_nt(lc.ln2_out, p.tensors.at(layer_name(l, "cross.wq")), lc.cq);
      matmul_nt(cache.ctx, p.tensors.at(layer_name(l, "cross.wk")), lc.ck);
      matmul_nt(cache.ctx, p.tensors.at(layer_name(l, "cross.wv")), lc.cv);
      lc.cattn.assign(heads, Mat(seq, n_ctx));
      lc.cattn_cat = Mat(seq, d);
      for (int hh = 0; hh < heads; ++hh) {
        const int off = hh * hd;
        Mat& attn = lc.cattn[hh];
        for (int i = 0; i < seq; ++i) {
          double mx = -1e300;
          double* scores = attn.row(i);
          for (int j = 0; j < n_ctx; ++j) {
            const double s = dot(lc.cq.row(i) + off, lc.ck.row(j) + off, hd) * inv_sqrt_hd;
            scores[j] = s;
            mx = std::max(mx, s);
          }
          double z = 0.0;
          for (int j = 0; j < n_ctx; ++j) {
            scores[j] = std::exp(scores[j] - mx);
            z += scores[j];
          }
          double* out = lc.cattn_cat.row(i) + off;
          for (int j = 0; j < n_ctx; ++j) {
            scores[j] /= z;
            const double a = scores[j];
            const double* vj = lc.cv.row(j) + off;
            for (int c = 0; c < hd; ++c) out[c] += a * vj[c];
          }
        }
      }
      const std::string wo_site = layer_name(l, "cross.wo");
      Mat cross_out;
      matmul_nt(lc.cattn_cat, p.tensors.at(wo_site), cross_out);
      apply_adapter(find_adapter(adapters, adapter_scale, wo_site), lc.cattn_cat, cross_out, lc,
                    wo_site, dropout_seed);
      for (size_t i = 0; i < h.v.size(); ++i) h.v[i] += cross_out.v[i];
    }

    // Feed-forward.
    lc.ln3_in = h;
    layer_norm(lc.ln3_in, p.tensors.at(layer_name(l, "ln3.g")),
               p.tensors.at(layer_name(l, "ln3.b")), lc.ln3_out, lc.ln3_rstd);
    const std::string w1_site = layer_name(l, "ffn.w1");
    matmul_nt(lc.ln3_out, p.tensors.at(w1_site), lc.ffn_pre);
    add_row_bias(lc.ffn_pre, p.tensors.at(layer_name(l, "ffn.b1")));
    apply_adapter(find_adapter(adapters, adapter_scale, w1_site), lc.ln3_out, lc.ffn_pre, lc,
                  w1_site, dropout_seed);
    lc.ffn_act = lc.ffn_pre;
    for (double& v : lc.ffn_act.v) v = gelu(v);
    const std::string w2_site = layer_name(l, "ffn.w2");
    Mat ffn_out;
    matmul_nt(lc.ffn_act, p.tensors.at(w2_site), ffn_out);
    add_row_bias(ffn_out, p.tensors.at(layer_name(l, "ffn.b2")));
    apply_adapter(find_adapter(adapters, adapter_scale, w2_site), lc.ffn_act, ffn_out, lc, w2_site,
                  dropout_seed);
    for (size_t i = 0; i < h.v.size(); ++i) h.v[i] += ffn_out.v[i];
  }

  cache.final_ln_in = h;
  layer_norm(cache.final_ln_in, p.tensors.at("out.ln.g"), p.tensors.at("out.ln.b"),
             cache.final_ln_out, cache.final_rstd);
  Mat head_in(valid, d);
  for (int i = 0; i < valid; ++i)
    std::copy(cache.final_ln_out.row(np + i), cache.final_ln_out.row(np + i) + d, head_in.row(i));
  Mat pred;
  matmul_nt(head_in, p.tensors.at("out.head.w"), pred);
  add_row_bias(pred, p.tensors.at("out.head.b"));

  MotionSequence out;
  out.layout = x_t.layout;
  out.mask = x_t.mask;
  out.frames = Mat(x_t.length(), f);
  for (int t = 0; t < valid; ++t)
    std::copy(pred.row(t), pred.row(t) + f, out.frames.row(t));
  return out;
}

// --- backward ---------------------------------------------------------------

Mat backward(const DenoiserParams& p, const lora::AdapterSet* adapters, double adapter_scale,
             const ForwardCache& cache, const MotionSequence& x_t, const Mat& d_pred,
             GradScope scope, GradMap& grads) {
  const ModelConfig& cfg = p.config;
  const int d = cfg.latent;
  const int f = cfg.frame_width();
  const int valid = cache.valid;
  const int seq = cache.seq;
  const int np = seq - valid;
  const int heads = cfg.heads;
  const int hd = d / heads;
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  const bool base_grads = scope == GradScope::all;
  const int n_ctx = cache.ctx.rows;

  // Head and final layer norm.
  Mat d_head_out(valid, f);
  for (int t = 0; t < valid; ++t)
    std::copy(d_pred.row(t), d_pred.row(t) + f, d_head_out.row(t));
  Mat head_in(valid, d);
  for (int i = 0; i < valid; ++i)
    std::copy(cache.final_ln_out.row(np + i), cache.final_ln_out.row(np + i) + d, head_in.row(i));
  if (base_grads) {
    matmul_tn_acc(d_head_out, head_in, grads.at("out.head.w", f, d));
    Mat& db = grads.at("out.head.b", 1, f);
    for (int i = 0; i < valid; ++i)
      for (int c = 0; c < f; ++c) db.at(0, c) += d_head_out.at(i, c);
  }
  Mat d_final_out(seq, d);
  {
    Mat tmp;
    matmul_nn(d_head_out, p.tensors.at("out.head.w"), tmp);
    for (int i = 0; i < valid; ++i)
      std::copy(tmp.row(i), tmp.row(i) + d, d_final_out.row(np + i));
  }
  Mat dh(seq, d);
  layer_norm_backward(cache.final_ln_in, cache.final_rstd, p.tensors.at("out.ln.g"), d_final_out,
                      dh, base_grads ? &grads.at("out.ln.g", 1, d) : nullptr,
                      base_grads ? &grads.at("out.ln.b", 1, d) : nullptr);

  Mat d_ctx(n_ctx, d);

  for (int l = cfg.layers - 1; l >= 0; --l) {
    const LayerCache& lc = cache.layers[l];

    // Feed-forward block.
    {
      const std::string w2_site = layer_name(l, "ffn.w2");
      const ParamTensor& w2 = p.tensors.at(w2_site);
      const AdapterHook hook2 = find_adapter(adapters, adapter_scale, w2_site);
      Mat d_act;
      matmul_nn(dh, w2, d_act);
      if (base_grads) {
        matmul_tn_acc(dh, lc.ffn_act, grads.at(w2_site, w2.rows, w2.cols));
        Mat& db2 = grads.at(layer_name(l, "ffn.b2"), 1, d);
        for (int i = 0; i < seq; ++i)
          for (int c = 0; c < d; ++c) db2.at(0, c) += dh.at(i, c);
      }
      adapter_backward(hook2, w2_site, lc, dh, d_act, grads);
      Mat d_pre = d_act;
      for (size_t i = 0; i < d_pre.v.size(); ++i) d_pre.v[i] *= gelu_grad(lc.ffn_pre.v[i]);
      const std::string w1_site = layer_name(l, "ffn.w1");
      const ParamTensor& w1 = p.tensors.at(w1_site);
      const AdapterHook hook1 = find_adapter(adapters, adapter_scale, w1_site);
      Mat d_ln3(seq, d);
      matmul_nn(d_pre, w1, d_ln3);
      if (base_grads) {
        matmul_tn_acc(d_pre, lc.ln3_out, grads.at(w1_site, w1.rows, w1.cols));
        Mat& db1 = grads.at(layer_name(l, "ffn.b1"), 1, cfg.ffn_hidden);
        for (int i = 0; i < seq; ++i)
          for (int c = 0; c < cfg.ffn_hidden; ++c) db1.at(0, c) += d_pre.at(i, c);
      }
      adapter_backward(hook1, w1_site, lc, d_pre, d_ln3, grads);
      layer_norm_backward(lc.ln3_in, lc.ln3_rstd, p.tensors.at(layer_name(l, "ln3.g")), d_ln3, dh,
                          base_grads ? &grads.at(layer_name(l, "ln3.g"), 1, d) : nullptr,
                          base_grads ? &grads.at(layer_name(l, "ln3.b"), 1, d) : nullptr);
    }

    // Cross-attention block.
    if (n_ctx > 0) {
      const std::string wo_site = layer_name(l, "cross.wo");
      const ParamTensor& wo = p.tensors.at(wo_site);
      const AdapterHook hook = find_adapter(adapters, adapter_scale, wo_site);
      Mat d_cat;
      matmul_nn(dh, wo, d_cat);
      if (base_grads) matmul_tn_acc(dh, lc.cattn_cat, grads.at(wo_site, wo.rows, wo.cols));
      adapter_backward(hook, wo_site, lc, dh, d_cat, grads);
      Mat dq(seq, d), dk(n_ctx, d), dv(n_ctx, d);
      for (int hh = 0; hh < heads; ++hh) {
        const int off = hh * hd;
        const Mat& attn = lc.cattn[hh];
        for (int i = 0; i < seq; ++i) {
          const double* dci = d_cat.row(i) + off;
          const double* ai = attn.row(i);
          double dotsum = 0.0;
          std::vector<double> da(n_ctx);
          for (int j = 0; j < n_ctx; ++j) {
            da[j] = dot(dci, lc.cv.row(j) + off, hd);
            dotsum += ai[j] * da[j];
            double* dvj = dv.row(j) + off;
            for (int c = 0; c < hd; ++c) dvj[c] += ai[j] * dci[c];
          }
          for (int j = 0; j < n_ctx; ++j) {
            const double ds = ai[j] * (da[j] - dotsum) * inv_sqrt_hd;
            if (ds == 0.0) continue;
            double* dqi = dq.row(i) + off;
            double* dkj = dk.row(j) + off;
            const double* kj = lc.ck.row(j) + off;
            const double* qi = lc.cq.row(i) + off;
            for (int c = 0; c < hd; ++c) {
              dqi[c] += ds * kj[c];
              dkj[c] += ds * qi[c];
            }
          }
        }
      }
      const ParamTensor& wq = p.tensors.at(layer_name(l, "cross.wq"));
      const ParamTensor& wk = p.tensors.at(layer_name(l, "cross.wk"));
      const ParamTensor& wv = p.tensors.at(layer_name(l, "cross.wv"));
      Mat d_ln2(seq, d);
      matmul_nn(dq, wq, d_ln2);
      matmul_nn(dk, wk, d_ctx, true);
      matmul_nn(dv, wv, d_ctx, true);
      if (base_grads) {
        matmul_tn_acc(dq, lc.ln2_out, grads.at(layer_name(l, "cross.wq"), d, d));
        matmul_tn_acc(dk, cache.ctx, grads.at(layer_name(l, "cross.wk"), d, d));
        matmul_tn_acc(dv, cache.ctx, grads.at(layer_name(l, "cross.wv"), d, d));
      }
      layer_norm_backward(lc.ln2_in, lc.ln2_rstd, p.tensors.at(layer_name(l, "ln2.g")), d_ln2, dh,
                          base_grads ? &grads.at(layer_name(l, "ln2.g"), 1, d) : nullptr,
                          base_grads ? &grads.at(layer_name(l, "ln2.b"), 1, d) : nullptr);
    }

    // Self-attention block.
    {
      const ParamTensor& wo = p.tensors.at(layer_name(l, "self.wo"));
      Mat d_cat;
      matmul_nn(dh, wo, d_cat);
      if (base_grads)
        matmul_tn_acc(dh, lc.attn_cat, grads.at(layer_name(l, "self.wo"), d, d));
      Mat dq(seq, d), dk(seq, d), dv(seq, d);
      for (int hh = 0; hh < heads; ++hh) {
        const int off = hh * hd;
        const Mat& attn = lc.attn[hh];
        for (int i = 0; i < seq; ++i) {
          const double* dci = d_cat.row(i) + off;
          const double* ai = attn.row(i);
          double dotsum = 0.0;
          std::vector<double> da(i + 1);
          for (int j = 0; j <= i; ++j) {
            da[j] = dot(dci, lc.v.row(j) + off, hd);
            dotsum += ai[j] * da[j];
            double* dvj = dv.row(j) + off;
            for (int c = 0; c < hd; ++c) dvj[c] += ai[j] * dci[c];
          }
          for (int j = 0; j <= i; ++j) {
            const double ds = ai[j] * (da[j] - dotsum) * inv_sqrt_hd;
            if (ds == 0.0) continue;
            double* dqi = dq.row(i) + off;
            double* dkj = dk.row(j) + off;
            const double* kj = lc.k.row(j) + off;
            const double* qi = lc.q.row(i) + off;
            for (int c = 0; c < hd; ++c) {
              dqi[c] += ds * kj[c];
              dkj[c] += ds * qi[c];
            }
          }
        }
      }
      Mat d_ln1(seq, d);
      matmul_nn(dq, p.tensors.at(layer_name(l, "self.wq")), d_ln1);
      matmul_nn(dk, p.tensors.at(layer_name(l, "self.wk")), d_ln1, true);
      matmul_nn(dv, p.tensors.at(layer_name(l, "self.wv")), d_ln1, true);
      if (base_grads) {
        matmul_tn_acc(dq, lc.ln1_out, grads.at(layer_name(l, "self.wq"), d, d));
        matmul_tn_acc(dk, lc.ln1_out, grads.at(layer_name(l, "self.wk"), d, d));
        matmul_tn_acc(dv, lc.ln1_out, grads.at(layer_name(l, "self.wv"), d, d));
      }
      layer_norm_backward(lc.ln1_in, lc.ln1_rstd, p.tensors.at(layer_name(l, "ln1.g")), d_ln1, dh,
                          base_grads ? &grads.at(layer_name(l, "ln1.g"), 1, d) : nullptr,
                          base_grads ? &grads.at(layer_name(l, "ln1.b"), 1, d) : nullptr);
    }
  }

  // Input projections and time embedding.
  if (base_grads) {
    Mat d_time(1, d);
    for (int i = 0; i < seq; ++i)
      for (int c = 0; c < d; ++c) d_time.at(0, c) += dh.at(i, c);
    matmul_tn_acc(d_time, cache.time_feat, grads.at("time.w", d, d));
    Mat& dtb = grads.at("time.b", 1, d);
    for (int c = 0; c < d; ++c) dtb.at(0, c) += d_time.at(0, c);
    if (np > 0) {
      Mat d_hp(np, d);
      for (int i = 0; i < np; ++i)
        std::copy(dh.row(i), dh.row(i) + d, d_hp.row(i));
      matmul_tn_acc(d_hp, cache.prefix_in, grads.at("in.prefix.w", d, f));
      Mat& dpb = grads.at("in.prefix.b", 1, d);
      for (int i = 0; i < np; ++i)
        for (int c = 0; c < d; ++c) dpb.at(0, c) += d_hp.at(i, c);
    }
    Mat d_hx(valid, d);
    for (int i = 0; i < valid; ++i)
      std::copy(dh.row(np + i), dh.row(np + i) + d, d_hx.row(i));
    matmul_tn_acc(d_hx, cache.x_proj_in, grads.at("in.motion.w", d, f));
    Mat& dxb = grads.at("in.motion.b", 1, d);
    for (int i = 0; i < valid; ++i)
      for (int c = 0; c < d; ++c) dxb.at(0, c) += d_hx.at(i, c);
  }
  (void)x_t;
  return d_ctx;
}

// --- diffusion ---------------------------------------------------------------

MotionSequence q_sample(const MotionSequence& x0, int t_step, const Mat& noise,
                        const DiffusionSchedule& sched) {
  require(t_step >= 0 && t_step < sched.steps, Errc::model_contract, "diffusion step out of range");
  require(noise.rows == x0.length() && noise.cols == x0.width(), Errc::model_contract,
          "noise shape does not match motion");
  const double ab = sched.alpha_bar[t_step];
  const double sa = std::sqrt(ab);
  const double sn = std::sqrt(1.0 - ab);
  MotionSequence out = x0;
  const int n = x0.valid_count();
  for (int t = 0; t < n; ++t) {
    double* row = out.frames.row(t);
    const double* x = x0.frames.row(t);
    const double* e = noise.row(t);
    for (int c = 0; c < x0.width(); ++c) row[c] = sa * x[c] + sn * e[c];
  }
  return out;
}

SampleResult sample(const DenoiserParams& p, const TextCondition& cond, int gen_len, uint64_t seed,
                    const DiffusionSchedule& sched, const lora::AdapterSet* adapters,
                    double adapter_scale) {
  require(gen_len >= 1, Errc::model_contract, "generation length must be >= 1");
  const int f = p.config.frame_width();
  Rng rng(derive_seed(seed, "sample"));
  MotionSequence x;
  x.layout = motion::pose_layout(p.config.joints);
  x.frames = Mat(gen_len, f);
  x.mask.assign(gen_len, 1);
  for (double& v : x.frames.v) v = rng.normal();

  SampleResult res;
  MotionSequence pred;
  for (int t = sched.steps - 1; t >= 0; --t) {
    pred = forward(p, x, t, cond, adapters, adapter_scale);
    ++res.forward_calls;
    if (t > 0) {
      const double ab = sched.alpha_bar[t - 1];
      const double sa = std::sqrt(ab);
      const double sn = std::sqrt(1.0 - ab);
      for (int i = 0; i < gen_len; ++i) {
        double* row = x.frames.row(i);
        const double* pr = pred.frames.row(i);
        for (int c = 0; c < f; ++c) row[c] = sa * pr[c] + sn * rng.normal();
      }
    } else {
      x.frames = pred.frames;
    }
  }
  const int np = cond.prefix.rows;
  res.motion.layout = x.layout;
  res.motion.frames = Mat(np + gen_len, f);
  res.motion.mask.assign(np + gen_len, 1);
  for (int i = 0; i < np; ++i)
    std::copy(cond.prefix.row(i), cond.prefix.row(i) + f, res.motion.frames.row(i));
  for (int i = 0; i < gen_len; ++i)
    std::copy(x.frames.row(i), x.frames.row(i) + f, res.motion.frames.row(np + i));
  return res;
}

// --- base training -------------------------------------------------------

TrainingItem make_training_item(const MotionSequence& m, int prefix_len, int crop_cap,
                                int offset) {
  const int valid = m.valid_count();
  const int f = m.width();
  require(valid >= prefix_len + 2, Errc::model_contract, "motion too short for prefix conditioning");
  const int t_len = std::min(crop_cap, valid - prefix_len - offset);
  require(t_len >= 2, Errc::model_contract, "training window too short");
  TrainingItem item;
  item.offset = offset;
  item.prefix = Mat(prefix_len, f);
  for (int i = 0; i < prefix_len; ++i)
    std::copy(m.frames.row(offset + i), m.frames.row(offset + i) + f, item.prefix.row(i));
  item.x0.layout = m.layout;
  item.x0.frames = Mat(t_len, f);
  item.x0.mask.assign(t_len, 1);
  for (int i = 0; i < t_len; ++i)
    std::copy(m.frames.row(offset + prefix_len + i), m.frames.row(offset + prefix_len + i) + f,
              item.x0.frames.row(i));
  return item;
}

int max_item_offset(const MotionSequence& m, int prefix_len, int crop_cap) {
  return std::max(0, m.valid_count() - prefix_len - crop_cap);
}

namespace {

// Masked mean of per-frame L2 over all channels; gradient accumulated into
// dpred when non-null.
double frame_norm_loss(const MotionSequence& pred, const MotionSequence& tgt, Mat* dpred) {
  const int n = pred.valid_count();
  const int f = pred.width();
  const double denom = n + 1e-8;
  double sum = 0.0;
  for (int t = 0; t < n; ++t) {
    const double* pr = pred.frames.row(t);
    const double* tr = tgt.frames.row(t);
    double s2 = 0.0;
    for (int c = 0; c < f; ++c) {
      const double dd = pr[c] - tr[c];
      s2 += dd * dd;
    }
    const double norm = std::sqrt(s2);
    sum += norm;
    if (dpred && norm > 0.0) {
      double* g = dpred->row(t);
      for (int c = 0; c < f; ++c) g[c] += (pr[c] - tr[c]) / (norm * denom);
    }
  }
  return sum / denom;
}

struct AdamState {
  std::unordered_map<std::string, std::pair<std::vector<double>, std::vector<double>>> slots;
  int step = 0;

  void update(io::NamedTensors& tensors, const GradMap& grads, double lr, double clip) {
    ++step;
    double norm = 0.0;
    for (const auto& [name, g] : grads.g)
      for (double x : g.v) norm += x * x;
    norm = std::sqrt(norm);
    const double scale = (clip > 0.0 && norm > clip) ? clip / norm : 1.0;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bc1 = 1.0 - std::pow(b1, step);
    const double bc2 = 1.0 - std::pow(b2, step);
    for (auto& [name, t] : tensors.items) {
      const Mat* g = grads.find(name);
      if (!g) continue;
      auto& slot = slots[name];
      if (slot.first.empty()) {
        slot.first.assign(t.size(), 0.0);
        slot.second.assign(t.size(), 0.0);
      }
      for (size_t i = 0; i < t.size(); ++i) {
        const double gi = g->v[i] * scale;
        slot.first[i] = b1 * slot.first[i] + (1.0 - b1) * gi;
        slot.second[i] = b2 * slot.second[i] + (1.0 - b2) * gi * gi;
        const double mhat = slot.first[i] / bc1;
        const double vhat = slot.second[i] / bc2;
        t.w[i] = static_cast<float>(static_cast<double>(t.w[i]) -
                                    lr * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }
};

}  // namespace

std::vector<TrainRecord> train_base(DenoiserParams& p, const std::vector<motion::CorpusEntry>& corpus,
                                    const TrainBaseConfig& cfg, const DiffusionSchedule& sched) {
  require(!corpus.empty(), Errc::bad_config, "empty corpus");
  const int np = p.config.prefix_len;
  const int f = p.config.frame_width();
  Rng rng(derive_seed(cfg.seed, "train-base"));
  AdamState adam;
  std::vector<TrainRecord> log;
  log.reserve(cfg.steps);

  struct Slot {
    TrainingItem item;
    std::vector<std::string> caption;
    int t_step = 0;
    Mat noise;
    double loss = 0.0;
    GradMap grads;
  };

  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Slot> batch(cfg.batch);
    for (auto& slot : batch) {
      const auto& entry = corpus[rng.uniform_index(corpus.size())];
      const int max_off = max_item_offset(entry.motion, np, cfg.crop_cap);
      const int off = max_off > 0 ? static_cast<int>(rng.uniform_index(max_off + 1)) : 0;
      slot.item = make_training_item(entry.motion, np, cfg.crop_cap, off);
      slot.caption = entry.caption;
      slot.t_step = static_cast<int>(rng.uniform_index(sched.steps));
      slot.noise = Mat(slot.item.x0.length(), f);
      for (double& v : slot.noise.v) v = rng.normal();
    }
    parallel_for(batch.size(), cfg.threads, [&](size_t i) {
      Slot& slot = batch[i];
      TextCache tcache;
      TextCondition cond;
      cond.tokens = encode_text(p, slot.caption, tcache);
      cond.prefix = slot.item.prefix;
      const MotionSequence x_t = q_sample(slot.item.x0, slot.t_step, slot.noise, sched);
      ForwardCache cache;
      const MotionSequence pred = forward(p, x_t, slot.t_step, cond, nullptr, 1.0, cache, nullptr);
      Mat dpred(pred.length(), f);
      slot.loss = frame_norm_loss(pred, slot.item.x0, &dpred);
      const Mat d_ctx =
          backward(p, nullptr, 1.0, cache, x_t, dpred, GradScope::all, slot.grads);
      encode_text_backward(p, tcache, d_ctx, slot.grads);
    });
    GradMap total;
    double loss = 0.0;
    for (const auto& slot : batch) {
      total.add_scaled(slot.grads, 1.0 / cfg.batch);
      loss += slot.loss / cfg.batch;
    }
    require(std::isfinite(loss) && total.finite(), Errc::divergence,
            "non-finite loss at step " + std::to_string(step));
    adam.update(p.tensors, total, cfg.lr, cfg.clip);
    log.push_back({step, loss});
  }
  return log;
}

}  // namespace motun::model

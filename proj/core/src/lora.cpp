#include "motun/lora.hpp"

#include <cmath>

#include "motun/common.hpp"
#include "motun/rng.hpp"

namespace motun::lora {

const LoraAdapter* AdapterSet::find(const std::string& site) const {
  for (const auto& a : adapters)
    if (a.site == site) return &a;
  return nullptr;
}

const ParamTensor* TaskVector::find(const std::string& site) const {
  for (const auto& [name, t] : increments)
    if (name == site) return &t;
  return nullptr;
}

AdapterSet attach_adapters(const model::DenoiserParams& params, const LoraConfig& cfg,
                           uint64_t seed) {
  require(cfg.rank >= 1, Errc::bad_config, "LoRA rank must be >= 1");
  require(cfg.dropout >= 0.0 && cfg.dropout < 1.0, Errc::bad_config,
          "LoRA dropout must be in [0,1)");
  AdapterSet set;
  set.config = cfg;
  Rng rng(derive_seed(seed, "lora-init"));
  for (const std::string& site : params.adapter_sites()) {
    const ParamTensor* w = params.tensors.find(site);
    require(w != nullptr, Errc::injection_site, "missing injection site: " + site);
    LoraAdapter a;
    a.site = site;
    a.rank = cfg.rank;
    a.alpha = cfg.alpha;
    a.dropout = cfg.dropout;
    a.a = ParamTensor(cfg.rank, w->cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(w->cols));
    for (auto& v : a.a.w) v = static_cast<float>(scale * rng.normal());
    a.b = ParamTensor(w->rows, cfg.rank);  // zero init: increments start at zero
    set.adapters.push_back(std::move(a));
  }
  return set;
}

TaskVector extract_task_vector(const AdapterSet& adapters) {
  TaskVector tv;
  for (const auto& a : adapters.adapters) {
    ParamTensor inc(a.b.rows, a.a.cols);
    const double scale = a.alpha / a.rank;
    for (int i = 0; i < a.b.rows; ++i) {
      float* out = inc.row(i);
      const float* bi = a.b.row(i);
      for (int j = 0; j < a.a.cols; ++j) {
        double s = 0.0;
        for (int r = 0; r < a.rank; ++r)
          s += static_cast<double>(bi[r]) * static_cast<double>(a.a.at(r, j));
        out[j] = static_cast<float>(scale * s);
      }
    }
    tv.increments.emplace_back(a.site, std::move(inc));
  }
  return tv;
}

model::DenoiserParams negate(const model::DenoiserParams& base, const TaskVector& tv,
                             double alpha) {
  model::DenoiserParams merged = base;
  if (alpha == 0.0) return merged;
  for (const auto& [site, inc] : tv.increments) {
    ParamTensor* w = merged.tensors.find(site);
    require(w != nullptr, Errc::merge_mismatch, "task vector site missing in base: " + site);
    require(w->rows == inc.rows && w->cols == inc.cols, Errc::merge_mismatch,
            "task vector shape mismatch at " + site);
    for (size_t i = 0; i < w->w.size(); ++i)
      w->w[i] = static_cast<float>(static_cast<double>(w->w[i]) -
                                   alpha * static_cast<double>(inc.w[i]));
  }
  return merged;
}

NegationPolicy NegationPolicy::static_policy(double alpha) {
  NegationPolicy p;
  p.kind = Kind::static_alpha;
  p.alpha = alpha;
  p.validate();
  return p;
}

NegationPolicy NegationPolicy::gated_policy(double alpha_safe, double alpha_unsafe) {
  NegationPolicy p;
  p.kind = Kind::gated;
  p.alpha_safe = alpha_safe;
  p.alpha_unsafe = alpha_unsafe;
  p.validate();
  return p;
}

void NegationPolicy::validate() const {
  require(alpha >= 0.0 && alpha_safe >= 0.0 && alpha_unsafe >= 0.0, Errc::bad_config,
          "negation scales must be nonnegative");
}

double apply_policy(int level, const NegationPolicy& policy) {
  require(level >= 1 && level <= 3, Errc::bad_config, "toxicity level must be 1..3");
  if (policy.kind == NegationPolicy::Kind::static_alpha) return policy.alpha;
  return level == 1 ? policy.alpha_safe : policy.alpha_unsafe;
}

const std::vector<double>& alpha_sweep_grid() {
  static const std::vector<double> grid = {0.05, 0.2, 0.5, 0.8, 1.0, 1.2, 1.5, 2.0};
  return grid;
}

void save_task_vector(const std::filesystem::path& path, const TaskVector& tv) {
  io::Checkpoint ck;
  ck.kind = "task_vector";
  for (const auto& [site, inc] : tv.increments) ck.tensors.add(site, inc);
  io::save_checkpoint(path, ck);
}

TaskVector load_task_vector(const std::filesystem::path& path) {
  io::Checkpoint ck = io::load_checkpoint(path);
  require(ck.kind == "task_vector", Errc::io_error,
          "not a task vector checkpoint: " + path.string());
  TaskVector tv;
  for (auto& [name, t] : ck.tensors.items) tv.increments.emplace_back(name, std::move(t));
  return tv;
}

}  // namespace motun::lora

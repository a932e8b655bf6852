#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "motun/mat.hpp"
#include "motun/model.hpp"

namespace motun::lora {

struct LoraConfig {
  int rank = 16;
  double alpha = 16.0;
  double dropout = 0.05;
};

/// Low-rank factors for one injection site. The effective weight increment
/// is (alpha / rank) * B A; B starts at zero so attaching adapters leaves the
/// model unchanged.
struct LoraAdapter {
  std::string site;
  ParamTensor a;  // rank x d_in
  ParamTensor b;  // d_out x rank
  int rank = 0;
  double alpha = 0.0;
  double dropout = 0.0;
};

struct AdapterSet {
  std::vector<LoraAdapter> adapters;
  LoraConfig config;

  const LoraAdapter* find(const std::string& site) const;
};

/// Dense per-site increments Delta-theta, restricted to the adapter sites.
struct TaskVector {
  std::vector<std::pair<std::string, ParamTensor>> increments;

  const ParamTensor* find(const std::string& site) const;
};

/// Creates adapters at every layer's cross-attention output projection and
/// both feed-forward projections. The backbone stays frozen; only A and B
/// train.
AdapterSet attach_adapters(const model::DenoiserParams& params, const LoraConfig& cfg,
                           uint64_t seed);

/// Per site, materializes (alpha / rank) * B A.
TaskVector extract_task_vector(const AdapterSet& adapters);

/// theta_safe = theta0 - alpha * Delta-theta at the adapter sites; alpha = 0
/// returns an exact copy of the base parameters.
model::DenoiserParams negate(const model::DenoiserParams& base, const TaskVector& tv, double alpha);

/// Class-aware negation scale: Static applies one alpha everywhere, Gated
/// picks alpha_safe for level-1 prompts and alpha_unsafe for levels 2-3.
struct NegationPolicy {
  enum class Kind { static_alpha, gated } kind = Kind::static_alpha;
  double alpha = 1.0;
  double alpha_safe = 0.05;
  double alpha_unsafe = 2.0;

  static NegationPolicy static_policy(double alpha);
  static NegationPolicy gated_policy(double alpha_safe, double alpha_unsafe);
  void validate() const;
};

double apply_policy(int level, const NegationPolicy& policy);

/// Alpha grid used by the scaling sweep.
const std::vector<double>& alpha_sweep_grid();

void save_task_vector(const std::filesystem::path& path, const TaskVector& tv);
TaskVector load_task_vector(const std::filesystem::path& path);

}  // namespace motun::lora

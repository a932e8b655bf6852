#pragma once

#include <filesystem>
#include <string>

#include "motun/lora.hpp"
#include "motun/model.hpp"
#include "motun/unlearn.hpp"

namespace motun::config {

/// One configuration record drives every command. Values come from built-in
/// presets (`preset = toy|full`), optional `include <file>` lines, then
/// `key = value` overrides, then command-line flags.
struct RunConfig {
  int per_class = 32;
  std::string preset = "toy";
  model::ModelConfig model;
  model::TrainBaseConfig train_base;
  unlearn::Stage1Config stage1;
  lora::NegationPolicy policy = lora::NegationPolicy::static_policy(1.0);
  int eval_reps = 5;
  int diversity_md = 16;
  std::string out_dir = "out";
  uint64_t seed = 0;
  int threads = 1;
};

RunConfig defaults();

/// `static:<alpha>` or `gated:<alpha_safe>,<alpha_unsafe>`.
lora::NegationPolicy parse_policy(const std::string& text);

void apply_preset(RunConfig& cfg, const std::string& name);
void apply_kv(RunConfig& cfg, const std::string& key, const std::string& value);

/// Plain-text config: `key = value` lines, `#` comments, `preset <name>`,
/// `include <path>` (relative to the including file).
RunConfig load(const std::filesystem::path& path);
void apply_file(RunConfig& cfg, const std::filesystem::path& path);

}  // namespace motun::config

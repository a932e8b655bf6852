#include "motun/config.hpp"

#include <fstream>

#include "motun/common.hpp"

namespace motun::config {

RunConfig defaults() { return RunConfig{}; }

lora::NegationPolicy parse_policy(const std::string& text) {
  const size_t colon = text.find(':');
  require(colon != std::string::npos, Errc::bad_config,
          "policy must be static:<alpha> or gated:<alpha_safe>,<alpha_unsafe>");
  const std::string kind = text.substr(0, colon);
  const std::string rest = text.substr(colon + 1);
  try {
    if (kind == "static") return lora::NegationPolicy::static_policy(std::stod(rest));
    if (kind == "gated") {
      const size_t comma = rest.find(',');
      require(comma != std::string::npos, Errc::bad_config,
              "gated policy needs two values: gated:<alpha_safe>,<alpha_unsafe>");
      return lora::NegationPolicy::gated_policy(std::stod(rest.substr(0, comma)),
                                                std::stod(rest.substr(comma + 1)));
    }
  } catch (const std::invalid_argument&) {
    fail(Errc::bad_config, "malformed policy value: " + text);
  }
  fail(Errc::bad_config, "unknown policy kind: " + kind);
}

void apply_preset(RunConfig& cfg, const std::string& name) {
  if (name == "toy") {
    cfg.model = model::ModelConfig::toy();
  } else if (name == "full") {
    cfg.model = model::ModelConfig::full();
  } else {
    fail(Errc::bad_config, "unknown preset: " + name + " (expected toy or full)");
  }
  cfg.preset = name;
}

namespace {

int to_int(const std::string& v, const std::string& key) {
  try {
    return std::stoi(v);
  } catch (...) {
    fail(Errc::bad_config, "expected an integer for " + key + ", got '" + v + "'");
  }
}

double to_double(const std::string& v, const std::string& key) {
  try {
    return std::stod(v);
  } catch (...) {
    fail(Errc::bad_config, "expected a number for " + key + ", got '" + v + "'");
  }
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void apply_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
  auto& w = cfg.stage1.weights;
  if (key == "corpus.per_class") cfg.per_class = to_int(value, key);
  else if (key == "model.preset") apply_preset(cfg, value);
  else if (key == "model.joints") cfg.model.joints = to_int(value, key);
  else if (key == "model.latent") cfg.model.latent = to_int(value, key);
  else if (key == "model.layers") cfg.model.layers = to_int(value, key);
  else if (key == "model.heads") cfg.model.heads = to_int(value, key);
  else if (key == "model.ffn_hidden") cfg.model.ffn_hidden = to_int(value, key);
  else if (key == "model.diffusion_steps") cfg.model.diffusion_steps = to_int(value, key);
  else if (key == "model.prefix_len") cfg.model.prefix_len = to_int(value, key);
  else if (key == "model.gen_len") cfg.model.gen_len = to_int(value, key);
  else if (key == "base.steps") cfg.train_base.steps = to_int(value, key);
  else if (key == "base.batch") cfg.train_base.batch = to_int(value, key);
  else if (key == "base.lr") cfg.train_base.lr = to_double(value, key);
  else if (key == "base.clip") cfg.train_base.clip = to_double(value, key);
  else if (key == "base.crop_cap") cfg.train_base.crop_cap = to_int(value, key);
  else if (key == "stage1.steps") cfg.stage1.steps = to_int(value, key);
  else if (key == "stage1.batch_unsafe") cfg.stage1.batch_unsafe = to_int(value, key);
  else if (key == "stage1.batch_safe") cfg.stage1.batch_safe = to_int(value, key);
  else if (key == "stage1.lr") cfg.stage1.lr = to_double(value, key);
  else if (key == "stage1.clip") cfg.stage1.clip = to_double(value, key);
  else if (key == "stage1.cadence") cfg.stage1.checkpoint_cadence = to_int(value, key);
  else if (key == "stage1.crop_cap") cfg.stage1.crop_cap = to_int(value, key);
  else if (key == "weights.lambda_mpjpe") w.lambda_mpjpe = to_double(value, key);
  else if (key == "weights.lambda_vel") w.lambda_vel = to_double(value, key);
  else if (key == "weights.lambda_acc") w.lambda_acc = to_double(value, key);
  else if (key == "weights.lambda_foot") w.lambda_foot = to_double(value, key);
  else if (key == "weights.lambda_text") w.lambda_text = to_double(value, key);
  else if (key == "weights.w_harm") w.w_harm = to_double(value, key);
  else if (key == "weights.w_dec") w.w_dec = to_double(value, key);
  else if (key == "weights.w_pres") w.w_pres = to_double(value, key);
  else if (key == "weights.gamma") w.gamma = to_double(value, key);
  else if (key == "weights.tau") w.tau = to_double(value, key);
  else if (key == "weights.eps") w.eps = to_double(value, key);
  else if (key == "lora.rank") cfg.stage1.lora.rank = to_int(value, key);
  else if (key == "lora.alpha") cfg.stage1.lora.alpha = to_double(value, key);
  else if (key == "lora.dropout") cfg.stage1.lora.dropout = to_double(value, key);
  else if (key == "policy") cfg.policy = parse_policy(value);
  else if (key == "eval.reps") cfg.eval_reps = to_int(value, key);
  else if (key == "eval.diversity_md") cfg.diversity_md = to_int(value, key);
  else if (key == "out") cfg.out_dir = value;
  else if (key == "seed") cfg.seed = static_cast<uint64_t>(std::stoull(value));
  else if (key == "threads") cfg.threads = to_int(value, key);
  else fail(Errc::bad_config, "unknown config key: " + key);
}

void apply_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io_error, "missing config file: " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.rfind("include ", 0) == 0) {
      const std::filesystem::path inc = trim(line.substr(8));
      apply_file(cfg, inc.is_absolute() ? inc : path.parent_path() / inc);
      continue;
    }
    if (line.rfind("preset ", 0) == 0) {
      apply_preset(cfg, trim(line.substr(7)));
      continue;
    }
    const size_t eq = line.find('=');
    require(eq != std::string::npos, Errc::bad_config,
            path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    apply_kv(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

RunConfig load(const std::filesystem::path& path) {
  RunConfig cfg = defaults();
  apply_file(cfg, path);
  return cfg;
}

}  // namespace motun::config

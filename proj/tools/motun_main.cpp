// Command-line front end: synth, train-base, absorb, negate, eval,
// partition, sweep-alpha. Every run is reproducible from --seed; artifacts
// land under --out.

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "motun/config.hpp"
#include "motun/eval.hpp"
#include "motun/io.hpp"
#include "motun/lora.hpp"
#include "motun/losses.hpp"
#include "motun/model.hpp"
#include "motun/motion.hpp"
#include "motun/rng.hpp"
#include "motun/safety.hpp"
#include "motun/unlearn.hpp"

namespace {

using namespace motun;
using nlohmann::json;
namespace fs = std::filesystem;

struct Cli {
  config::RunConfig cfg;
  std::string config_path;
  std::string policy_text;
  std::string corpus_path;
  std::string base_path;
  std::string taskvec_path;
  std::string lemma_path;
  std::string split = "all";
  bool seed_set = false;
  uint64_t seed_flag = 0;
  bool out_set = false;
  std::string out_flag;
  bool threads_set = false;
  int threads_flag = 1;

  void finalize() {
    if (!config_path.empty()) config::apply_file(cfg, config_path);
    if (seed_set) cfg.seed = seed_flag;
    if (out_set) cfg.out_dir = out_flag;
    if (threads_set) cfg.threads = threads_flag;
    if (!policy_text.empty()) cfg.policy = config::parse_policy(policy_text);
    cfg.stage1.threads = cfg.threads;
    cfg.train_base.threads =cfg.threads;
    if (corpus_path.empty()) corpus_path = (fs::path(cfg.out_dir) / "corpus.jsonl").string();
    if (base_path.empty()) base_path = (fs::path(cfg.out_dir) / "base.ckpt").string();
    if (taskvec_path.empty())
      taskvec_path = (fs::path(cfg.out_dir) / "task_vector.ckpt").string();
  }
};

safety::LemmaList load_lemmas(const Cli& cli) {
  return cli.lemma_path.empty() ? safety::LemmaList::defaults()
                                : safety::LemmaList::from_file(cli.lemma_path);
}

std::unique_ptr<safety::HttpAgentClient> remote_client_from_env() {
  const char* ep = std::getenv("MOTUN_CLASSIFIER_ENDPOINT");
  if (!ep || !*ep) return nullptr;
  return std::make_unique<safety::HttpAgentClient>(ep);
}

void ensure_out(const config::RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  require(fs::exists(cfg.out_dir), Errc::io_error, "cannot create out dir: " + cfg.out_dir);
}

std::string split_name(const motion::CorpusEntry& e) {
  std::string s = e.forget ? "forget" : "retain";
  s += e.seen ? "-seen" : "-unseen";
  return s;
}

int cmd_synth(Cli& cli) {
  ensure_out(cli.cfg);
  require(cli.cfg.per_class >= 1, Errc::bad_config, "corpus.per_class must be >= 1");
  const auto corpus =
      motion::synth_corpus(derive_seed(cli.cfg.seed, "corpus"), cli.cfg.per_class);
  io::save_corpus(cli.corpus_path, corpus);
  std::map<std::string, int> counts;
  std::map<int, int> levels;
  for (const auto& e : corpus) {
    ++counts[split_name(e)];
    ++levels[e.level];
  }
  std::cout << "wrote " << corpus.size() << " entries to " << cli.corpus_path << "\n";
  for (const auto& [k, v] : counts) std::cout << "  " << k << ": " << v << "\n";
  for (const auto& [k, v] : levels) std::cout << "  level " << k << ": " << v << "\n";
  return 0;
}

int cmd_train_base(Cli& cli) {
  ensure_out(cli.cfg);
  const auto corpus = io::load_corpus(cli.corpus_path);
  const auto vocab = model::Vocab::build(corpus);
  cli.cfg.model.joints = corpus.front().motion.layout.joint_count;
  auto params = model::DenoiserParams::init(cli.cfg.model, vocab,
                                            derive_seed(cli.cfg.seed, "model-init"));
  const auto sched = model::DiffusionSchedule::cosine(cli.cfg.model.diffusion_steps);
  auto tb = cli.cfg.train_base;
  tb.seed = derive_seed(cli.cfg.seed, "train-base");
  const auto log = model::train_base(params, corpus, tb, sched);
  model::save_model(cli.base_path, params);
  std::ofstream out(fs::path(cli.cfg.out_dir) / "train_base_log.jsonl");
  for (const auto& rec : log) {
    json j;
    j["step"] = rec.step;
    j["loss"] = rec.loss;
    out << j.dump() << "\n";
  }
  std::cout << "trained base model for " << tb.steps << " steps -> " << cli.base_path << "\n";
  if (!log.empty()) std::cout << "  final loss " << log.back().loss << "\n";
  return 0;
}

void write_absorb_log(const fs::path& path, const std::vector<unlearn::StepRecord>& log,
                      const losses::LossWeights& w) {
  std::ofstream out(path);
  for (const auto& r : log) {
    json j;
    j["step"] = r.step;
    j["l_harm"] = r.l_harm;
    j["l_dec"] = r.l_dec;
    j["l_pres"] = r.l_pres;
    j["mpjpe"] = r.term_mpjpe;
    j["vel"] = r.term_vel;
    j["acc"] = r.term_acc;
    j["foot"] = r.term_foot;
    j["text"] = r.term_text;
    j["z_dist"] = r.z_dist;
    j["weights"] = {{"lambda_mpjpe", w.lambda_mpjpe}, {"lambda_vel", w.lambda_vel},
                    {"lambda_acc", w.lambda_acc},   {"lambda_foot", w.lambda_foot},
                    {"lambda_text", w.lambda_text}, {"w_harm", w.w_harm},
                    {"w_dec", w.w_dec},             {"w_pres", w.w_pres},
                    {"gamma", w.gamma}};
    out << j.dump() << "\n";
  }
}

int cmd_absorb(Cli& cli) {
  ensure_out(cli.cfg);
  const auto corpus = io::load_corpus(cli.corpus_path);
  const auto base = model::load_model(cli.base_path);
  const auto sched = model::DiffusionSchedule::cosine(base.config.diffusion_steps);
  auto s1 = cli.cfg.stage1;
  s1.seed = derive_seed(cli.cfg.seed, "absorb");
  const fs::path outdir(cli.cfg.out_dir);
  unlearn::CheckpointSink sink = [&](int step, const lora::AdapterSet& adapters) {
    lora::save_task_vector(outdir / ("task_vector_step" + std::to_string(step) + ".ckpt"),
                           lora::extract_task_vector(adapters));
  };
  const auto result = unlearn::absorb(base, corpus, s1, sched, &sink);
  lora::save_task_vector(cli.taskvec_path, result.task_vector);
  write_absorb_log(outdir / "absorb_log.jsonl", result.log, s1.weights);
  std::cout << "absorbed for " << s1.steps << " steps -> " << cli.taskvec_path << "\n";
  if (!result.log.empty())
    std::cout << "  final l_harm " << result.log.back().l_harm << ", l_pres "
              << result.log.back().l_pres << "\n";
  return 0;
}

std::vector<const motion::CorpusEntry*> filter_split(const std::vector<motion::CorpusEntry>& corpus,
                                                     const std::string& split) {
  std::vector<const motion::CorpusEntry*> out;
  for (const auto& e : corpus) {
    if (split == "all" || (split == "forget" && e.forget) || (split == "retain" && !e.forget))
      out.push_back(&e);
  }
  return out;
}

int cmd_negate(Cli& cli) {
  ensure_out(cli.cfg);
  const auto corpus = io::load_corpus(cli.corpus_path);
  const auto base = model::load_model(cli.base_path);
  const auto tv = lora::load_task_vector(cli.taskvec_path);
  const auto sched = model::DiffusionSchedule::cosine(base.config.diffusion_steps);
  const auto lemmas = load_lemmas(cli);
  const auto remote = remote_client_from_env();
  const auto entries = filter_split(corpus, cli.split);
  require(!entries.empty(), Errc::bad_config, "no entries in split: " + cli.split);

  const fs::path outdir = fs::path(cli.cfg.out_dir) / "generated";
  std::error_code ec;
  fs::create_directories(outdir, ec);
  std::ofstream manifest(fs::path(cli.cfg.out_dir) / "generated.jsonl");
  std::map<double, model::DenoiserParams> merged;
  const int np = base.config.prefix_len;
  size_t idx = 0;
  for (const auto* e : entries) {
    const auto verdict = safety::classify(e->caption, lemmas, remote.get());
    const double alpha = lora::apply_policy(verdict.level, cli.cfg.policy);
    if (!merged.count(alpha)) merged.emplace(alpha, lora::negate(base, tv, alpha));
    const auto& params = merged.at(alpha);
    motion::TextCondition cond;
    cond.tokens = model::encode_text(params, e->caption);
    cond.prefix = Mat(np, e->motion.width());
    for (int t = 0; t < np; ++t)
      std::copy(e->motion.frames.row(t), e->motion.frames.row(t) + e->motion.width(),
                cond.prefix.row(t));
    const auto gen = model::sample(params, cond, params.config.gen_len,
                                   derive_seed(cli.cfg.seed, "gen", idx), sched)
                         .motion;
    const std::string rel = "generated/" + e->id + ".mot";
    io::save_motion(fs::path(cli.cfg.out_dir) / rel, gen);
    json rec;
    rec["id"] = e->id;
    rec["caption"] = motion::join_tokens(e->caption);
    rec["level"] = verdict.level;
    rec["backend"] = verdict.backend == safety::Backend::remote ? "remote" : "rules";
    if (verdict.fallback_warning) rec["fallback_warning"] = true;
    rec["alpha"] = alpha;
    rec["motion_file"] = rel;
    rec["recon_error"] = eval::reconstruction_error(gen, e->motion, np);
    manifest << rec.dump() << "\n";
    ++idx;
  }
  std::cout << "generated " << entries.size() << " motions under policy -> "
            << (fs::path(cli.cfg.out_dir) / "generated.jsonl") << "\n";
  return 0;
}

struct RowMetrics {
  std::vector<double> fid, div, r1, r2, r3;
};

int cmd_eval(Cli& cli) {
  ensure_out(cli.cfg);
  const auto corpus = io::load_corpus(cli.corpus_path);
  const auto base = model::load_model(cli.base_path);
  const auto sched = model::DiffusionSchedule::cosine(base.config.diffusion_steps);
  const auto lemmas = load_lemmas(cli);
  std::optional<lora::TaskVector> tv;
  if (fs::exists(cli.taskvec_path)) tv = lora::load_task_vector(cli.taskvec_path);
  const auto extractors =
      eval::train_extractors(corpus, derive_seed(cli.cfg.seed, "extractors"));

  struct Row {
    std::string name;
    std::vector<size_t> idx;  // into the parent pool
  };
  // Negative pools for retrieval stay within forget/retain; rows report the
  // seen/unseen sub-splits.
  std::vector<std::pair<std::string, std::vector<const motion::CorpusEntry*>>> pools = {
      {"forget", filter_split(corpus, "forget")}, {"retain", filter_split(corpus, "retain")}};
  json report = json::array();
  std::ostringstream table;
  table << std::left << std::setw(16) << "split" << std::right << std::setw(6) << "n"
        << std::setw(18) << "FID" << std::setw(18) << "Diversity" << std::setw(16) << "R@1"
        << std::setw(16) << "R@2" << std::setw(16) << "R@3" << "\n";
  std::vector<uint64_t> rep_seeds;
  for (int r = 0; r < cli.cfg.eval_reps; ++r)
    rep_seeds.push_back(derive_seed(cli.cfg.seed, "eval-rep", r));

  for (const auto& [pool_name, pool] : pools) {
    if (pool.empty()) continue;
    std::vector<Row> rows = {{pool_name + "-seen", {}}, {pool_name + "-unseen", {}}};
    for (size_t i = 0; i < pool.size(); ++i) rows[pool[i]->seen ? 0 : 1].idx.push_back(i);
    std::map<std::string, RowMetrics> metrics;
    for (int rep = 0; rep < cli.cfg.eval_reps; ++rep) {
      const auto ge = unlearn::evaluate_generation(
          base, tv ? &*tv : nullptr, cli.cfg.policy, pool, extractors, lemmas, rep_seeds[rep],
          sched, cli.cfg.threads);
      for (const auto& row : rows) {
        if (row.idx.size() < 2) continue;
        std::vector<std::vector<double>> gen_f, ref_f;
        for (size_t i : row.idx) {
          gen_f.push_back(ge.gen_features[i]);
          ref_f.push_back(ge.ref_features[i]);
        }
        RowMetrics& m = metrics[row.name];
        m.fid.push_back(eval::fid(eval::fit_gaussian(gen_f), eval::fit_gaussian(ref_f)));
        const int md = std::min<int>(cli.cfg.diversity_md, static_cast<int>(gen_f.size()) / 2);
        if (md >= 1) m.div.push_back(eval::diversity(gen_f, md, rep_seeds[rep]));
        if (ge.pairs.size() >= 32) {
          // Rank row queries against negatives from the whole pool.
          for (int k = 1; k <= 3; ++k) {
            const double acc = eval::r_precision_subset(ge.pairs, row.idx, k, rep_seeds[rep]);
            (k == 1 ? m.r1 : k == 2 ? m.r2 : m.r3).push_back(acc);
          }
        }
      }
    }
    for (const auto& row : rows) {
      if (!metrics.count(row.name)) continue;
      const RowMetrics& m = metrics.at(row.name);
      const auto fid_s = eval::summarize(m.fid);
      const auto div_s = eval::summarize(m.div);
      const auto r1_s = eval::summarize(m.r1);
      const auto r2_s = eval::summarize(m.r2);
      const auto r3_s = eval::summarize(m.r3);
      json j;
      j["split"] = row.name;
      j["n"] = row.idx.size();
      j["fid"] = {{"mean", fid_s.mean}, {"ci", fid_s.half_width}};
      j["diversity"] = {{"mean", div_s.mean}, {"ci", div_s.half_width}};
      j["r1"] = {{"mean", r1_s.mean}, {"ci", r1_s.half_width}};
      j["r2"] = {{"mean", r2_s.mean}, {"ci", r2_s.half_width}};
      j["r3"] = {{"mean", r3_s.mean}, {"ci", r3_s.half_width}};
      j["seeds"] = rep_seeds;
      report.push_back(j);
      auto cell = [](const eval::MetricSummary& s) {
        std::ostringstream os;
        os << std::fixed << std::setprecision(4) << s.mean << "±" << s.half_width;
        return os.str();
      };
      table << std::left << std::setw(16) << row.name << std::right << std::setw(6)
            << row.idx.size() << std::setw(18) << cell(fid_s) << std::setw(18) << cell(div_s)
            << std::setw(16) << cell(r1_s) << std::setw(16) << cell(r2_s) << std::setw(16)
            << cell(r3_s) << "\n";
    }
  }
  {
    std::ofstream out(fs::path(cli.cfg.out_dir) / "eval_report.jsonl");
    for (const auto& j : report) out << j.dump() << "\n";
  }
  {
    std::ofstream out(fs::path(cli.cfg.out_dir) / "eval_report.txt");
    out << table.str();
  }
  std::cout << table.str();
  return 0;
}

int cmd_partition(Cli& cli) {
  ensure_out(cli.cfg);
  const auto corpus = io::load_corpus(cli.corpus_path);
  const auto lemmas = load_lemmas(cli);
  const auto part = safety::partition(corpus, lemmas);
  std::ofstream forget(fs::path(cli.cfg.out_dir) / "forget_ids.txt");
  for (size_t i : part.forget) forget << corpus[i].id << "\n";
  std::ofstream retain(fs::path(cli.cfg.out_dir) / "retain_ids.txt");
  for (size_t i : part.retain) retain << corpus[i].id << "\n";
  size_t agree = 0;
  for (size_t i : part.forget) agree += corpus[i].forget ? 1 : 0;
  for (size_t i : part.retain) agree += corpus[i].forget ? 0 : 1;
  std::cout << "forget " << part.forget.size() << ", retain " << part.retain.size()
            << ", agreement with labels "
            << (100.0 * static_cast<double>(agree) / static_cast<double>(corpus.size())) << "%\n";
  return 0;
}

int cmd_sweep_alpha(Cli& cli) {
  ensure_out(cli.cfg);
  const auto corpus = io::load_corpus(cli.corpus_path);
  const auto base = model::load_model(cli.base_path);
  const auto tv = lora::load_task_vector(cli.taskvec_path);
  const auto sched = model::DiffusionSchedule::cosine(base.config.diffusion_steps);
  const auto lemmas = load_lemmas(cli);
  const auto extractors =
      eval::train_extractors(corpus, derive_seed(cli.cfg.seed, "extractors"));
  const std::vector<std::pair<std::string, std::vector<const motion::CorpusEntry*>>> pools = {
      {"forget", filter_split(corpus, "forget")}, {"retain", filter_split(corpus, "retain")}};
  for (const auto& [name, pool] : pools) {
    std::ofstream out(fs::path(cli.cfg.out_dir) / ("sweep_" + name + ".tsv"));
    out << "alpha\tfid\tr1\trecon_error\n";
    for (double alpha : lora::alpha_sweep_grid()) {
      const auto policy = lora::NegationPolicy::static_policy(alpha);
      const auto ge = unlearn::evaluate_generation(base, &tv, policy, pool, extractors, lemmas,
                                                   derive_seed(cli.cfg.seed, "sweep"), sched,
                                                   cli.cfg.threads);
      const double f = eval::fid(eval::fit_gaussian(ge.gen_features),
                                 eval::fit_gaussian(ge.ref_features));
      double r1 = 0.0;
      if (ge.pairs.size() >= 32)
        r1 = eval::r_precision(ge.pairs, 1, derive_seed(cli.cfg.seed, "sweep-r1"));
      double recon = 0.0;
      for (double e : ge.recon_errors) recon += e;
      recon /= static_cast<double>(ge.recon_errors.empty() ? 1 : ge.recon_errors.size());
      out << std::setprecision(10) << alpha << "\t" << f << "\t" << r1 << "\t" << recon << "\n";
    }
    std::cout << "wrote " << (fs::path(cli.cfg.out_dir) / ("sweep_" + name + ".tsv")) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale unlearning lab for text-to-motion diffusion"};
  app.require_subcommand(1);
  Cli cli;
  cli.cfg = config::defaults();

  app.add_option("--config", cli.config_path, "Config file (key = value lines)");
  app.add_option("--seed", cli.seed_flag, "Global seed")->each([&](const std::string&) {
    cli.seed_set = true;
  });
  app.add_option("--out", cli.out_flag, "Output directory")->each([&](const std::string&) {
    cli.out_set = true;
  });
  app.add_option("--threads", cli.threads_flag, "Worker threads (default 1, bit-reproducible)")
      ->each([&](const std::string&) { cli.threads_set = true; });
  app.add_option("--policy", cli.policy_text,
                 "static:<alpha> or gated:<alpha_safe>,<alpha_unsafe>");
  app.add_option("--corpus", cli.corpus_path, "Corpus manifest path");
  app.add_option("--base", cli.base_path, "Base model checkpoint");
  app.add_option("--taskvec", cli.taskvec_path, "Task vector checkpoint");
  app.add_option("--lemmas", cli.lemma_path, "Harmful lemma list file");

  auto* synth = app.add_subcommand("synth", "Generate the synthetic corpus");
  synth->add_option("--per-class", cli.cfg.per_class, "Entries per motion family");
  auto* train = app.add_subcommand("train-base", "Train the base denoiser");
  train->add_option("--steps", cli.cfg.train_base.steps, "Training steps");
  auto* absorb = app.add_subcommand("absorb", "Stage 1: absorb unsafe capability into adapters");
  absorb->add_option("--steps", cli.cfg.stage1.steps, "Stage-1 steps");
  auto* negate = app.add_subcommand("negate", "Stage 2: negate the task vector and sample");
  negate->add_option("--split", cli.split, "forget | retain | all");
  auto* evalc = app.add_subcommand("eval", "Per-split metric report");
  auto* part = app.add_subcommand("partition", "Write forget/retain id lists");
  auto* sweep = app.add_subcommand("sweep-alpha", "FID/R@1 curves over the alpha grid");
  for (auto* sc : {synth, train, absorb, negate, evalc, part, sweep}) sc->fallthrough();

  CLI11_PARSE(app, argc, argv);
  try {
    cli.finalize();
    if (synth->parsed()) return cmd_synth(cli);
    if (train->parsed()) return cmd_train_base(cli);
    if (absorb->parsed()) return cmd_absorb(cli);
    if (negate->parsed()) return cmd_negate(cli);
    if (evalc->parsed()) return cmd_eval(cli);
    if (part->parsed()) return cmd_partition(cli);
    if (sweep->parsed()) return cmd_sweep_alpha(cli);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

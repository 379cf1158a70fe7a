// fuselab: data generation, training, evaluation and sweeps from the shell.

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fuselab/gradcheck_suite.hpp"
#include "fuselab/harness.hpp"

namespace {

using namespace fuselab;
using json = nlohmann::json;

enum Exit { kOk = 0, kConfig = 1, kRuntime = 2 };

std::string output_root() {
  const char* env = std::getenv("FUSELAB_OUT");
  return env && *env ? env : "runs";
}

std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(detail::parse_double(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

/// Config flags: one option per field, applied over an optional --config file.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", file, "key = value config file; flags override it")->check(CLI::ExistingFile);
    for (const auto& f : config_fields()) {
      // CLI11 keeps the pointer, and std::map never moves its nodes.
      auto& slot = values[f.name];
      cmd->add_option("--" + f.name, slot, f.help);
    }
  }

  ExperimentConfig resolve(CLI::App* cmd) const {
    ExperimentConfig cfg = file.empty() ? ExperimentConfig{} : load_config_file(file);
    for (const auto& f : config_fields())
      if (cmd->count("--" + f.name)) set_config_field(cfg, f.name, values.at(f.name));
    cfg.validate();
    return cfg;
  }
};

std::string default_run_dir(const ExperimentConfig& cfg) {
  return output_root() + "/" + task_name(cfg.task) + "-" + cfg.modalities.str() + "-" + fusion_name(cfg.fusion) +
         "-seed" + std::to_string(cfg.seed);
}

json metrics_json(const EvalResult& r) {
  json j = r.metrics;
  if (r.silhouette) j["silhouette"] = *r.silhouette;
  return j;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string kind = "interaction";
  std::size_t n = 10000;
  std::uint64_t seed = 1;
  std::string out = "data";
  double noise = 0.3;
  double ambiguity = 0.0;
  double topic_cue = 0.15;
  double train_frac = 0.8;
  double valid_frac = 0.1;
};

int gen_data(const GenDataArgs& a) {
  RawDataset ds;
  if (a.kind == "interaction") {
    InteractionSpec spec;
    spec.noise = a.noise;
    ds = gen_interaction_dataset(a.n, a.seed, spec);
  } else {
    TranslationSpec spec;
    spec.ambiguity_rate = a.ambiguity;
    spec.topic_cue_rate = a.topic_cue;
    ds = gen_toy_translation(a.n, a.seed, spec);
  }
  const Splits s = split_dataset(ds, a.train_frac, a.valid_frac);
  std::filesystem::create_directories(a.out);
  write_dataset(a.out + "/train.tsv", s.train);
  write_dataset(a.out + "/valid.tsv", s.valid);
  write_dataset(a.out + "/test.tsv", s.test);
  std::printf("wrote %zu/%zu/%zu %s samples to %s\n", s.train.records.size(), s.valid.records.size(),
              s.test.records.size(), a.kind.c_str(), a.out.c_str());
  return kOk;
}

void print_epoch(const TrainingSession& s) {
  const auto& cfg = s.config;
  const char* metric = cfg.task == Task::classification ? "accuracy" : "bleu4";
  const auto loss = s.record.find(s.epoch, "train", "j_total");
  const auto valid = s.record.find(s.epoch, "valid", metric);
  std::printf("epoch %3zu  j_total %.5f", s.epoch, loss.value_or(0.0));
  if (valid) std::printf("  valid %s %.4f", metric, *valid);
  std::printf("\n");
  std::fflush(stdout);
}

int train_cmd(const ExperimentConfig& cfg, bool quiet) {
  const PreparedData data = load_data(cfg);
  TrainingSession s = train(cfg, data, quiet ? std::function<void(const TrainingSession&)>{} : print_epoch);
  const std::string dir = cfg.out_dir.empty() ? default_run_dir(cfg) : cfg.out_dir;
  write_run(dir, s);
  std::cout << json(s.record.summary).dump(2) << "\nrun written to " << dir << "\n";
  return kOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data_dir;
  double word_drop_p = 0.0;
  std::uint64_t drop_seed = 0;
};

TrainingSession load_session(const EvalArgs& a, PreparedData& data) {
  TrainingSession s = from_checkpoint(load_checkpoint(a.checkpoint));
  ExperimentConfig cfg = s.config;
  if (!a.data_dir.empty()) cfg.data_dir = a.data_dir;
  data = load_data(cfg);
  return s;
}

int eval_cmd(const EvalArgs& a) {
  PreparedData data;
  TrainingSession s = load_session(a, data);
  const auto r = evaluate(s.model, data.test, a.word_drop_p, word_drop_seed(a.drop_seed ? a.drop_seed : s.config.seed));
  std::cout << metrics_json(r).dump(2) << "\n";
  return kOk;
}

int ablate_cmd(const EvalArgs& a, const std::string& grid_text, const std::string& out) {
  PreparedData data;
  TrainingSession s = load_session(a, data);
  const auto grid = grid_text.empty() ? default_drop_grid() : parse_list("grid", grid_text);
  const auto rows = ablate(s.model, data.test, grid, a.drop_seed ? a.drop_seed : s.config.seed);
  for (const auto& r : rows) std::printf("p=%.2f  bleu4 %.2f\n", r.p, r.bleu[3]);
  if (!out.empty()) {
    write_ablation_csv(out, rows);
    std::printf("curve written to %s\n", out.c_str());
  }
  return kOk;
}

int gradcheck_cmd(std::size_t cases, std::uint64_t seed, const std::string& filter) {
  const auto rows = run_gradcheck_suite(cases, seed, filter);
  if (rows.empty()) throw ConfigError("no gradient check matches '" + filter + "'");
  std::size_t failed = 0;
  for (const auto& r : rows) {
    std::printf("%-22s %-5s %4zu cases  %3zu failed  max rel %.2e  max abs %.2e  %.2fs\n", r.name.c_str(),
                r.kind.c_str(), r.cases, r.failures, r.max_rel_error, r.max_abs_error, r.seconds);
    failed += r.failures;
  }
  return failed ? kRuntime : kOk;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepPoint {
  ExperimentConfig cfg;
  std::string tag;
};

/// Cartesian product of `key=v1,v2,...` axes applied over `base`.
std::vector<SweepPoint> expand_grid(const ExperimentConfig& base, const std::vector<std::string>& axes) {
  std::vector<SweepPoint> points{{base, ""}};
  for (const auto& axis : axes) {
    const auto eq = axis.find('=');
    if (eq == std::string::npos) throw ConfigError("sweep axis '" + axis + "' is not key=v1,v2,...");
    const std::string key = trim(axis.substr(0, eq));
    std::vector<std::string> values;
    std::stringstream ss(axis.substr(eq + 1));
    for (std::string v; std::getline(ss, v, ',');) values.push_back(trim(v));
    if (values.empty()) throw ConfigError("sweep axis " + key + " has no values");
    std::vector<SweepPoint> next;
    for (const auto& p : points)
      for (const auto& v : values) {
        SweepPoint q = p;
        set_config_field(q.cfg, key, v);
        q.tag += (q.tag.empty() ? "" : "_") + key + "=" + v;
        next.push_back(std::move(q));
      }
    points = std::move(next);
  }
  for (auto& p : points) p.cfg.validate();
  return points;
}

int sweep_cmd(const ExperimentConfig& base, const std::vector<std::string>& axes, std::size_t jobs) {
  auto points = expand_grid(base, axes);
  const std::string root = (base.out_dir.empty() ? output_root() + "/sweep" : base.out_dir);
  const PreparedData data = load_data(base);
  std::vector<std::map<std::string, double>> summaries(points.size());
  std::vector<std::string> errors(points.size());
  std::atomic<std::size_t> next{0};
  std::mutex print;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < points.size();) {
      try {
        TrainingSession s = train(points[i].cfg, data);
        write_run(root + "/" + points[i].tag, s);
        summaries[i] = s.record.summary;
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
      std::lock_guard lock(print);
      std::printf("[%zu/%zu] %s %s\n", i + 1, points.size(), points[i].tag.c_str(),
                  errors[i].empty() ? "done" : ("failed: " + errors[i]).c_str());
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < std::max<std::size_t>(1, std::min(jobs, points.size())); ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::filesystem::create_directories(root);
  std::ofstream csv(root + "/sweep.csv");
  csv << "run,metric,value\n";
  for (std::size_t i = 0; i < points.size(); ++i)
    for (const auto& [k, v] : summaries[i]) csv << points[i].tag << ',' << k << ',' << format_value(v) << '\n';
  std::printf("sweep table written to %s/sweep.csv\n", root.c_str());
  for (const auto& e : errors)
    if (!e.empty()) return kRuntime;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive multimodal fusion experiments"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic dataset as train/valid/test TSV files");
  gen_cmd->add_option("--kind", gen.kind, "interaction | translation")
      ->check(CLI::IsMember({"interaction", "translation"}));
  gen_cmd->add_option("--n", gen.n, "number of samples")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen.seed, "generator seed");
  gen_cmd->add_option("--out", gen.out, "output directory");
  gen_cmd->add_option("--noise", gen.noise, "feature noise for the interaction corpus");
  gen_cmd->add_option("--ambiguity", gen.ambiguity, "homograph rate for the translation corpus")
      ->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--topic-cue", gen.topic_cue, "topic word rate for the translation corpus")
      ->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--train-frac", gen.train_frac, "train share")->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("--valid-frac", gen.valid_frac, "valid share")->check(CLI::Range(0.0, 1.0));

  ConfigFlags train_flags;
  bool quiet = false;
  auto* train_sub = app.add_subcommand("train", "train one configuration and write its run directory");
  train_flags.attach(train_sub);
  train_sub->add_flag("--quiet", quiet, "no per-epoch lines");

  EvalArgs eval_args;
  auto* eval_sub = app.add_subcommand("eval", "evaluate a checkpoint on its test split");
  std::string grid_text, curve_out;
  auto* ablate_sub = app.add_subcommand("ablate", "BLEU over word-drop probabilities");
  for (auto* cmd : {eval_sub, ablate_sub}) {
    cmd->add_option("--checkpoint", eval_args.checkpoint, "model.ckpt from a run directory")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--data_dir", eval_args.data_dir, "override the data directory recorded in the checkpoint");
    cmd->add_option("--drop_seed", eval_args.drop_seed, "word-drop seed (default: the run seed)");
  }
  eval_sub->add_option("--word_drop_p", eval_args.word_drop_p, "drop probability")->check(CLI::Range(0.0, 1.0));
  ablate_sub->add_option("--grid", grid_text, "comma separated probabilities (default 0,0.1,...,0.9)");
  ablate_sub->add_option("--out", curve_out, "CSV path for the curve");

  std::size_t gc_cases = 100;
  std::uint64_t gc_seed = 2024;
  std::string gc_filter;
  auto* gc_sub = app.add_subcommand("gradcheck", "finite-difference check of every op and layer");
  gc_sub->add_option("--cases", gc_cases, "random instances per entry")->check(CLI::PositiveNumber);
  gc_sub->add_option("--seed", gc_seed, "master seed");
  gc_sub->add_option("--filter", gc_filter, "only entries whose name contains this");

  ConfigFlags sweep_flags;
  std::vector<std::string> axes;
  std::size_t jobs = 1;
  auto* sweep_sub = app.add_subcommand("sweep", "train the cartesian product of config axes");
  sweep_flags.attach(sweep_sub);
  sweep_sub->add_option("--grid", axes, "axis as key=v1,v2,... (repeatable)")->required();
  sweep_sub->add_option("--jobs", jobs, "runs trained in parallel")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen_cmd) return gen_data(gen);
    if (*train_sub) return train_cmd(train_flags.resolve(train_sub), quiet);
    if (*eval_sub) return eval_cmd(eval_args);
    if (*ablate_sub) return ablate_cmd(eval_args, grid_text, curve_out);
    if (*gc_sub) return gradcheck_cmd(gc_cases, gc_seed, gc_filter);
    if (*sweep_sub) return sweep_cmd(sweep_flags.resolve(sweep_sub), axes, jobs);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntime;
  }
  return kOk;
}

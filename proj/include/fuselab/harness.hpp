#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fuselab/checkpoint.hpp"
#include "fuselab/config.hpp"
#include "fuselab/data.hpp"
#include "fuselab/metrics.hpp"
#include "fuselab/model.hpp"
#include "fuselab/optim.hpp"

namespace fuselab {

class TrainingDivergedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Data preparation

/// Encoded splits plus everything derived from the training split.
struct PreparedData {
  Dataset train;
  Dataset valid;
  Dataset test;
  Vocabularies vocab;
  ModelShape shape;
};

inline ModelShape infer_shape(const RawDataset& train, const Vocabularies& vocab) {
  ModelShape shape;
  for (const auto& r : train.records) {
    if (r.speech && !shape.speech_width) shape.speech_width = r.speech->size();
    if (r.video && !shape.video_width) shape.video_width = r.video->size();
  }
  shape.source_vocab = vocab.source.size();
  shape.target_vocab = vocab.target.size();
  if (train.task == Task::classification) {
    int max_label = -1;
    for (const auto& r : train.records) max_label = std::max(max_label, std::stoi(r.label_or_target));
    shape.classes = static_cast<std::size_t>(max_label + 1);
  }
  return shape;
}

inline PreparedData prepare_data(const Splits& raw) {
  if (raw.valid.task != raw.train.task || raw.test.task != raw.train.task)
    throw SchemaError("train, valid and test splits declare different tasks");
  PreparedData d;
  d.vocab = build_vocabularies(raw.train);
  d.shape = infer_shape(raw.train, d.vocab);
  d.train = encode_dataset(raw.train, d.vocab);
  d.valid = encode_dataset(raw.valid, d.vocab);
  d.test = encode_dataset(raw.test, d.vocab);
  return d;
}

inline PreparedData load_data(const ExperimentConfig& cfg) {
  Splits raw{read_dataset(cfg.train_path()), read_dataset(cfg.valid_path()), read_dataset(cfg.test_path())};
  if (raw.train.task != cfg.task)
    throw SchemaError("dataset task " + task_name(raw.train.task) + " does not match config task " + task_name(cfg.task));
  return prepare_data(raw);
}

// ---------------------------------------------------------------------------
// Run records

struct MetricRow {
  std::size_t epoch = 0;
  std::string split;
  std::string metric;
  double value = 0.0;
  bool operator==(const MetricRow&) const = default;
};

struct StepRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double j_fusion = 0.0;
  double j_task = 0.0;
  double j_total = 0.0;
  double j_disc = 0.0;
  bool operator==(const StepRow&) const = default;
};

/// Append-only log of one run. Epoch 0 holds the pre-training evaluation.
struct RunRecord {
  std::vector<MetricRow> rows;
  std::vector<StepRow> steps;
  std::map<std::string, double> summary;

  void log(std::size_t epoch, const std::string& split, const std::string& metric, double value) {
    if (!rows.empty() && epoch < rows.back().epoch) throw std::logic_error("run record epochs must not decrease");
    rows.push_back({epoch, split, metric, value});
  }

  std::optional<double> find(std::size_t epoch, const std::string& split, const std::string& metric) const {
    for (const auto& r : rows)
      if (r.epoch == epoch && r.split == split && r.metric == metric) return r.value;
    return std::nullopt;
  }

  bool operator==(const RunRecord&) const = default;
};

inline std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_metrics_csv(const std::string& path, const RunRecord& rec) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "epoch,split,metric,value\n";
  for (const auto& r : rec.rows) os << r.epoch << ',' << r.split << ',' << r.metric << ',' << format_value(r.value) << '\n';
}

inline void write_steps_csv(const std::string& path, const RunRecord& rec) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "epoch,step,j_fusion,j_task,j_total,j_disc\n";
  for (const auto& s : rec.steps)
    os << s.epoch << ',' << s.step << ',' << format_value(s.j_fusion) << ',' << format_value(s.j_task) << ','
       << format_value(s.j_total) << ',' << format_value(s.j_disc) << '\n';
}

inline void write_summary_json(const std::string& path, const RunRecord& rec, const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["task"] = task_name(cfg.task);
  j["fusion"] = fusion_name(cfg.fusion);
  j["modalities"] = cfg.modalities.str();
  j["seed"] = cfg.seed;
  for (const auto& [k, v] : rec.summary) j["summary"][k] = v;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  std::map<std::string, double> metrics;
  std::optional<BleuReport> bleu;
  std::optional<ClassificationReport> report;
  std::optional<double> silhouette;
  std::vector<int> predictions;
  std::vector<std::vector<int>> hypotheses;
};

inline std::uint64_t word_drop_seed(std::uint64_t master, std::uint64_t index = 0) {
  return derive_seed(derive_seed(master, "word_drop"), index);
}

inline std::vector<std::size_t> index_range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return idx;
}

/// Runs the model over `ds` with GAN noise off. Text tokens are dropped to UNK
/// at probability `word_drop_p` using the stream seeded by `drop_seed`.
/// Silhouette of the text module's generator outputs against topic ids is
/// reported for GAN runs that include text.
inline EvalResult evaluate(FusionModel& model, const Dataset& ds, double word_drop_p = 0.0,
                           std::uint64_t drop_seed = 0, std::size_t batch_size = 256) {
  if (ds.samples.empty()) throw std::invalid_argument("cannot evaluate on an empty dataset");
  const auto& cfg = model.config();
  if (ds.task != cfg.task)
    throw SchemaError("dataset task " + task_name(ds.task) + " does not match model task " + task_name(cfg.task));
  NoGradGuard no_grad;
  Rng drop_rng(drop_seed);
  Rng unused_noise(0);
  const bool drop = word_drop_p > 0.0 && cfg.modalities.contains(Modality::text);
  const bool want_silhouette = model.is_gan() && cfg.modalities.contains(Modality::text);

  EvalResult res;
  std::vector<int> labels;
  std::vector<std::vector<int>> references;
  std::vector<double> text_points;
  for (std::size_t start = 0; start < ds.samples.size(); start += batch_size) {
    const auto idx = index_range(start, std::min(ds.samples.size(), start + batch_size));
    Batch b = make_batch(ds, idx, cfg.modalities,
                         drop ? std::optional<std::pair<double, Rng*>>({word_drop_p, &drop_rng}) : std::nullopt);
    LatentBundle bundle = model.encode(b);
    Tensor z_fuse;
    if (model.is_gan()) {
      GanForward fwd = model.gan().forward(bundle, unused_noise, 0.0);
      if (want_silhouette) {
        for (std::size_t i = 0; i < fwd.targets.size(); ++i)
          if (fwd.targets[i] == Modality::text)
            text_points.insert(text_points.end(), fwd.modules[i].z_g.data().begin(), fwd.modules[i].z_g.data().end());
      }
      z_fuse = model.gan().finish(fwd, cfg.generator_loss).z_fuse;
    } else {
      z_fuse = model.fuse_static(bundle).z_fuse;
    }
    if (cfg.task == Task::classification) {
      Tensor logits = model.logits(z_fuse);
      const std::size_t c = logits.dim(1);
      for (std::size_t r = 0; r < b.size; ++r) {
        const auto row = logits.data().subspan(r * c, c);
        res.predictions.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
      }
      labels.insert(labels.end(), b.labels.begin(), b.labels.end());
    } else {
      for (auto& h : model.decode(bundle, z_fuse, cfg.max_decode_len)) res.hypotheses.push_back(std::move(h));
      for (auto& r : b.references) references.push_back(r);
    }
  }

  if (cfg.task == Task::classification) {
    res.report = classification_report(res.predictions, labels, model.shape().classes);
    res.metrics["accuracy"] = res.report->accuracy;
    res.metrics["precision"] = res.report->precision;
    res.metrics["recall"] = res.report->recall;
    res.metrics["f1"] = res.report->f1;
  } else {
    res.bleu = corpus_bleu(res.hypotheses, references, 4);
    for (int n = 0; n < 4; ++n) res.metrics["bleu" + std::to_string(n + 1)] = res.bleu->bleu[n];
    res.metrics["brevity_penalty"] = res.bleu->brevity_penalty;
  }
  if (want_silhouette) {
    std::set<int> groups(ds.topics.begin(), ds.topics.end());
    if (groups.size() >= 2) {
      res.silhouette = silhouette(text_points, model.config().d_fuse, ds.topics);
      res.metrics["silhouette"] = *res.silhouette;
    }
  }
  return res;
}

inline double task_metric(const ExperimentConfig& cfg, const EvalResult& r) {
  return r.metrics.at(cfg.task == Task::classification ? "accuracy" : "bleu4");
}

// ---------------------------------------------------------------------------
// Training

/// Mutable state of a run: model, both optimizers, the RNG streams, the log.
struct TrainingSession {
  ExperimentConfig config;
  Vocabularies vocab;
  FusionModel model;
  AdamState main_opt;
  AdamState disc_opt;
  Rng shuffle_rng;
  Rng noise_rng;
  Rng dropout_rng;
  RunRecord record;
  std::size_t epoch = 0;
  std::size_t global_step = 0;

  /// Test hook called with "before_main_update" and "after_main_update"
  /// around the non-discriminator update of each step.
  std::function<void(const char*)> on_phase;

  TrainingSession() = default;
  TrainingSession(const ExperimentConfig& cfg, const ModelShape& shape, Vocabularies v)
      : config(cfg),
        vocab(std::move(v)),
        model(cfg, shape),
        shuffle_rng(make_stream(cfg.seed, "shuffle")),
        noise_rng(make_stream(cfg.seed, "gan_noise")),
        dropout_rng(make_stream(cfg.seed, "dropout")) {
    main_opt.config.lr = cfg.lr;
    disc_opt.config.lr = cfg.disc_lr;
  }
};

inline TrainingSession make_session(const ExperimentConfig& cfg, const PreparedData& data) {
  cfg.validate();
  if (data.train.task != cfg.task) throw ConfigError("config task does not match the dataset task");
  TrainingSession s(cfg, data.shape, data.vocab);
  s.model.fit_normalizers(data.train);
  return s;
}

inline void check_finite(double v, const char* term, const TrainingSession& s) {
  if (!std::isfinite(v))
    throw TrainingDivergedError(std::string("non-finite ") + term + " at epoch " + std::to_string(s.epoch) + ", step " +
                                std::to_string(s.global_step));
}

/// One optimization step. With GAN fusion the discriminators are updated
/// first on detached samples, then the rest of the network on
/// J_total = lambda1 * J_fusion + lambda2 * J_task with the discriminators frozen.
inline StepRow train_step(TrainingSession& s, const Batch& b) {
  auto& model = s.model;
  const auto& cfg = s.config;
  StepRow row;
  row.epoch = s.epoch;
  row.step = ++s.global_step;

  LatentBundle bundle = model.encode(b);
  FusionOutput fused;
  if (model.is_gan()) {
    GanForward fwd = model.gan().forward(bundle, s.noise_rng, cfg.noise_sigma);
    Tensor j_disc = model.gan().discriminator_loss(fwd);
    row.j_disc = j_disc.item();
    check_finite(row.j_disc, "discriminator loss", s);
    const ParameterList disc = model.discriminator_parameters();
    backward(j_disc);
    adam_step(disc, s.disc_opt);
    zero_grads(disc);
    fused = model.gan().finish(fwd, cfg.generator_loss);
  } else {
    fused = model.fuse_static(bundle);
  }
  Tensor z = dropout(fused.z_fuse, cfg.dropout, Mode::train, s.dropout_rng);
  Tensor j_task = model.task_loss(b, bundle, z, Mode::train);
  Tensor j_total = add(scale(fused.j_fusion, cfg.lambda1), scale(j_task, cfg.lambda2));
  row.j_fusion = fused.j_fusion.item();
  row.j_task = j_task.item();
  row.j_total = j_total.item();
  check_finite(row.j_fusion, "J_fusion", s);
  check_finite(row.j_task, "J_task", s);
  check_finite(row.j_total, "J_total", s);

  if (s.on_phase) s.on_phase("before_main_update");
  const ParameterList params = model.parameters();
  backward(j_total);
  adam_step(params, s.main_opt);
  zero_grads(params);
  if (s.on_phase) s.on_phase("after_main_update");
  return row;
}

struct EpochLoss {
  double j_fusion = 0.0;
  double j_task = 0.0;
  double j_total = 0.0;
  double j_disc = 0.0;
};

inline EpochLoss train_epoch(TrainingSession& s, const Dataset& train) {
  ++s.epoch;
  std::vector<std::size_t> order = index_range(0, train.samples.size());
  std::shuffle(order.begin(), order.end(), s.shuffle_rng);
  EpochLoss mean;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += s.config.batch_size) {
    const std::size_t end = std::min(order.size(), start + s.config.batch_size);
    if (end - start < 2 && batches > 0) break;  // batch norm needs two rows
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(end));
    StepRow row = train_step(s, make_batch(train, idx, s.config.modalities));
    s.record.steps.push_back(row);
    mean.j_fusion += row.j_fusion;
    mean.j_task += row.j_task;
    mean.j_total += row.j_total;
    mean.j_disc += row.j_disc;
    ++batches;
  }
  const double n = static_cast<double>(std::max<std::size_t>(batches, 1));
  mean.j_fusion /= n;
  mean.j_task /= n;
  mean.j_total /= n;
  mean.j_disc /= n;
  return mean;
}

inline void log_eval(RunRecord& rec, std::size_t epoch, const std::string& split, const EvalResult& r) {
  for (const auto& [k, v] : r.metrics) rec.log(epoch, split, k, v);
}

/// Copy of every piece of session state that changes while training.
struct SessionSnapshot {
  std::vector<std::vector<double>> tensors;
  AdamState main_opt;
  AdamState disc_opt;
  Rng shuffle_rng;
  Rng noise_rng;
  Rng dropout_rng;
  std::size_t epoch = 0;
  std::size_t global_step = 0;
};

inline SessionSnapshot snapshot(const TrainingSession& s) {
  SessionSnapshot snap{{}, s.main_opt, s.disc_opt, s.shuffle_rng, s.noise_rng, s.dropout_rng, s.epoch, s.global_step};
  for (const auto& p : s.model.state()) snap.tensors.emplace_back(p.value.data().begin(), p.value.data().end());
  return snap;
}

inline void restore(TrainingSession& s, const SessionSnapshot& snap) {
  const auto state = s.model.state();
  for (std::size_t i = 0; i < state.size(); ++i) {
    auto dst = Tensor(state[i].value).mutable_data();
    std::copy(snap.tensors[i].begin(), snap.tensors[i].end(), dst.begin());
  }
  s.main_opt = snap.main_opt;
  s.disc_opt = snap.disc_opt;
  s.shuffle_rng = snap.shuffle_rng;
  s.noise_rng = snap.noise_rng;
  s.dropout_rng = snap.dropout_rng;
  s.epoch = snap.epoch;
  s.global_step = snap.global_step;
}

/// Full schedule: pre-training evaluation, epochs with validation, early
/// stopping on the validation task metric, and restoration of the best state.
/// The test split, when non-empty, is evaluated once at the end.
inline TrainingSession train(const ExperimentConfig& cfg, const PreparedData& data,
                             std::function<void(const TrainingSession&)> on_epoch = {}) {
  TrainingSession s = make_session(cfg, data);
  const bool has_valid = !data.valid.samples.empty();
  double best = -INFINITY;
  std::size_t best_epoch = 0, stale = 0;
  std::optional<SessionSnapshot> best_state;
  if (has_valid) {
    auto r = evaluate(s.model, data.valid);
    log_eval(s.record, 0, "valid", r);
    best = task_metric(cfg, r);
    best_state = snapshot(s);
  }
  while (s.epoch < cfg.epochs) {
    EpochLoss loss = train_epoch(s, data.train);
    s.record.log(s.epoch, "train", "j_fusion", loss.j_fusion);
    s.record.log(s.epoch, "train", "j_task", loss.j_task);
    s.record.log(s.epoch, "train", "j_total", loss.j_total);
    if (s.model.is_gan()) s.record.log(s.epoch, "train", "j_disc", loss.j_disc);
    if (has_valid) {
      auto r = evaluate(s.model, data.valid);
      log_eval(s.record, s.epoch, "valid", r);
      const double metric = task_metric(cfg, r);
      if (metric > best) {
        best = metric;
        best_epoch = s.epoch;
        best_state = snapshot(s);
        stale = 0;
      } else if (++stale >= cfg.patience) {
        if (on_epoch) on_epoch(s);
        break;
      }
    }
    if (on_epoch) on_epoch(s);
  }
  const std::size_t epochs_run = s.epoch;
  if (best_state) restore(s, *best_state);
  s.record.summary["epochs_run"] = static_cast<double>(epochs_run);
  s.record.summary["best_epoch"] = static_cast<double>(has_valid ? best_epoch : epochs_run);
  if (has_valid) s.record.summary["best_valid_" + std::string(cfg.task == Task::classification ? "accuracy" : "bleu4")] = best;
  s.record.summary["parameters"] = static_cast<double>(count_parameters(s.model.parameters()) +
                                                       count_parameters(s.model.discriminator_parameters()));
  if (!data.test.samples.empty()) {
    auto r = evaluate(s.model, data.test);
    for (const auto& [k, v] : r.metrics) s.record.summary["test_" + k] = v;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationRow {
  double p = 0.0;
  std::array<double, 4> bleu{};
};

inline std::vector<double> default_drop_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 9; ++i) grid.push_back(i / 10.0);
  return grid;
}

/// One evaluation per drop probability, each with its own drop stream.
inline std::vector<AblationRow> ablate(FusionModel& model, const Dataset& test, const std::vector<double>& grid,
                                       std::uint64_t seed) {
  if (model.config().task != Task::translation) throw ConfigError("ablate needs a translation model");
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    auto r = evaluate(model, test, grid[i], word_drop_seed(seed, i + 1));
    rows.push_back({grid[i], r.bleu->bleu});
  }
  return rows;
}

inline void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "p,bleu1,bleu2,bleu3,bleu4\n";
  for (const auto& r : rows)
    os << format_value(r.p) << ',' << format_value(r.bleu[0]) << ',' << format_value(r.bleu[1]) << ','
       << format_value(r.bleu[2]) << ',' << format_value(r.bleu[3]) << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace detail {

inline NamedTensor named(const std::string& name, const Tensor& t) {
  return {name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())};
}

inline void append_optimizer(std::vector<NamedTensor>& out, const std::string& prefix, const AdamState& st) {
  out.push_back({prefix + ".step", {}, {static_cast<double>(st.step)}});
  for (const auto& [name, m] : st.first) out.push_back({prefix + ".m." + name, {m.size()}, m});
  for (const auto& [name, v] : st.second) out.push_back({prefix + ".v." + name, {v.size()}, v});
}

inline void read_optimizer(const std::vector<NamedTensor>& block, const std::string& prefix, AdamState& st) {
  st.first.clear();
  st.second.clear();
  st.step = 0;
  for (const auto& t : block) {
    if (t.name.rfind(prefix + ".", 0) != 0) continue;
    const std::string rest = t.name.substr(prefix.size() + 1);
    if (rest == "step") st.step = static_cast<std::uint64_t>(t.data.at(0));
    else if (rest.rfind("m.", 0) == 0) st.first[rest.substr(2)] = t.data;
    else if (rest.rfind("v.", 0) == 0) st.second[rest.substr(2)] = t.data;
    else throw CheckpointError("unknown optimizer entry " + t.name);
  }
}

inline std::string meta_line(const std::string& key, const std::string& value) { return "#" + key + " = " + value + "\n"; }

}  // namespace detail

inline Checkpoint to_checkpoint(const TrainingSession& s) {
  Checkpoint ck;
  for (const auto& p : s.model.state()) ck.tensors.push_back(detail::named(p.name, p.value));
  detail::append_optimizer(ck.optimizer, "main", s.main_opt);
  detail::append_optimizer(ck.optimizer, "disc", s.disc_opt);
  for (const auto& [name, rng] : {std::pair<const char*, const Rng*>{"shuffle", &s.shuffle_rng},
                                  {"gan_noise", &s.noise_rng},
                                  {"dropout", &s.dropout_rng}}) {
    auto words = words_to_doubles(rng_state(*rng));
    ck.rng.push_back({name, {words.size()}, words});
  }
  const auto& sh = s.model.shape();
  ck.config_text = echo_config(s.config);
  ck.config_text += detail::meta_line("shape", std::to_string(sh.speech_width) + " " + std::to_string(sh.video_width) +
                                                   " " + std::to_string(sh.source_vocab) + " " +
                                                   std::to_string(sh.target_vocab) + " " + std::to_string(sh.classes));
  ck.config_text += detail::meta_line("progress", std::to_string(s.epoch) + " " + std::to_string(s.global_step));
  ck.config_text += detail::meta_line("vocab.source", join_tokens(s.vocab.source.tokens()));
  ck.config_text += detail::meta_line("vocab.target", join_tokens(s.vocab.target.tokens()));
  return ck;
}

/// Rebuilds a session from a checkpoint. The model is constructed from the
/// echoed config, then every named tensor is overwritten from the file.
inline TrainingSession from_checkpoint(const Checkpoint& ck) {
  ExperimentConfig cfg = parse_config_text(ck.config_text);
  std::map<std::string, std::string> meta;
  std::istringstream is(ck.config_text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] != '#') continue;
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) meta[line.substr(1, eq - 1)] = line.substr(eq + 3);
  }
  for (const char* key : {"shape", "progress", "vocab.source", "vocab.target"})
    if (!meta.count(key)) throw CheckpointError(std::string("checkpoint config block lacks ") + key);
  ModelShape shape;
  std::istringstream(meta["shape"]) >> shape.speech_width >> shape.video_width >> shape.source_vocab >>
      shape.target_vocab >> shape.classes;
  Vocabularies vocab{Vocabulary::from_tokens(split_tokens(meta["vocab.source"])),
                     Vocabulary::from_tokens(split_tokens(meta["vocab.target"]))};

  TrainingSession s(cfg, shape, std::move(vocab));
  std::istringstream(meta["progress"]) >> s.epoch >> s.global_step;
  const auto state = s.model.state();
  if (state.size() != ck.tensors.size())
    throw CheckpointError("checkpoint holds " + std::to_string(ck.tensors.size()) + " tensors, model expects " +
                          std::to_string(state.size()));
  for (const auto& p : state) {
    const NamedTensor* t = ck.find(ck.tensors, p.name);
    if (!t) throw CheckpointError("checkpoint lacks tensor " + p.name);
    if (t->shape != p.value.shape())
      throw CheckpointError("tensor " + p.name + " has shape " + to_string(t->shape) + ", model expects " +
                            to_string(p.value.shape()));
    auto dst = Tensor(p.value).mutable_data();
    std::copy(t->data.begin(), t->data.end(), dst.begin());
  }
  detail::read_optimizer(ck.optimizer, "main", s.main_opt);
  detail::read_optimizer(ck.optimizer, "disc", s.disc_opt);
  for (auto [name, rng] : {std::pair<const char*, Rng*>{"shuffle", &s.shuffle_rng},
                           {"gan_noise", &s.noise_rng},
                           {"dropout", &s.dropout_rng}}) {
    const NamedTensor* t = ck.find(ck.rng, name);
    if (!t) throw CheckpointError(std::string("checkpoint lacks rng stream ") + name);
    *rng = rng_from_state(doubles_to_words(t->data));
  }
  return s;
}

/// Writes metrics.csv, steps.csv, summary.json, config.txt and model.ckpt.
inline void write_run(const std::string& dir, const TrainingSession& s) {
  std::filesystem::create_directories(dir);
  write_metrics_csv(dir + "/metrics.csv", s.record);
  write_steps_csv(dir + "/steps.csv", s.record);
  write_summary_json(dir + "/summary.json", s.record, s.config);
  std::ofstream(dir + "/config.txt") << echo_config(s.config);
  save_checkpoint(dir + "/model.ckpt", to_checkpoint(s));
}

}  // namespace fuselab

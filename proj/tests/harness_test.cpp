#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "fuselab/harness.hpp"

using namespace fuselab;

namespace {

const PreparedData& small_xor() {
  static const PreparedData data = prepare_data(split_dataset(gen_interaction_dataset(240, 4)));
  return data;
}

const PreparedData& small_translation() {
  static const PreparedData data = [] {
    TranslationSpec spec;
    spec.ambiguity_rate = 0.3;
    return prepare_data(split_dataset(gen_toy_translation(120, 4, spec)));
  }();
  return data;
}

ExperimentConfig quick(Task task, const char* modalities, FusionKind fusion) {
  ExperimentConfig cfg;
  cfg.task = task;
  cfg.modalities = ModalitySet::parse(modalities);
  cfg.fusion = fusion;
  cfg.epochs = 2;
  cfg.patience = 2;
  cfg.text_embed = 6;
  cfg.text_hidden = 8;
  cfg.speech_latent = 5;
  cfg.video_latent = 7;
  cfg.d_fuse = 6;
  cfg.d_noise = 3;
  cfg.disc_hidden = 5;
  cfg.head_hidden = 9;
  cfg.decoder_embed = 6;
  cfg.decoder_hidden = 8;
  cfg.max_decode_len = 12;
  return cfg;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fuselab_harness_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

TEST(Config, EchoParsesBackToTheSameConfig) {
  ExperimentConfig cfg = quick(Task::translation, "st", FusionKind::autofusion);
  cfg.lambda1 = 0.125;
  cfg.lr = 3.3e-4;
  cfg.seed = 123456789012345ull;
  cfg.batch_norm = true;
  cfg.generator_loss = GeneratorLoss::minimax;
  cfg.decoder_conditioning = DecoderConditioning::every_step;
  cfg.data_dir = "some/where";
  const std::string text = echo_config(cfg);
  EXPECT_EQ(echo_config(parse_config_text(text)), text);
  EXPECT_EQ(parse_config_text(text).lr, 3.3e-4);
}

TEST(Config, CommentsBlankLinesAndWhitespace) {
  auto cfg = parse_config_text("# header\n\n  fusion =  auto  \nmodalities=vt\n   # trailing\nepochs = 7\n");
  EXPECT_EQ(cfg.fusion, FusionKind::autofusion);
  EXPECT_EQ(cfg.modalities.str(), "vt");
  EXPECT_EQ(cfg.epochs, 7u);
}

TEST(Config, MalformedInputIsRejected) {
  EXPECT_THROW(parse_config_text("colour = red\n"), ConfigError);
  EXPECT_THROW(parse_config_text("epochs = ten\n"), ConfigError);
  EXPECT_THROW(parse_config_text("epochs = -3\n"), ConfigError);
  EXPECT_THROW(parse_config_text("lr = 1e-3x\n"), ConfigError);
  EXPECT_THROW(parse_config_text("just a line\n"), ConfigError);
  EXPECT_THROW(parse_config_text("fusion = tensor\n"), ConfigError);
  EXPECT_THROW(parse_config_text("modalities = vq\n"), ConfigError);
  EXPECT_THROW(parse_config_text("batch_norm = maybe\n"), ConfigError);
  EXPECT_THROW(load_config_file("/nonexistent/fuselab.cfg"), ConfigError);
}

TEST(Config, ValidationNamesTheProblem) {
  auto expect_invalid = [](const std::string& text) {
    EXPECT_THROW(parse_config_text(text).validate(), ConfigError) << text;
  };
  expect_invalid("fusion = gan\nmodalities = t\n");
  expect_invalid("task = translation\nmodalities = vs\n");
  expect_invalid("lambda1 = -1\n");
  expect_invalid("batch_size = 0\n");
  expect_invalid("lr = 0\n");
  expect_invalid("dropout = 1\n");
  expect_invalid("word_drop_p = 1.5\n");
  expect_invalid("d_fuse = 0\n");
  EXPECT_NO_THROW(ExperimentConfig{}.validate());
  try {
    parse_config_text("fusion = gan\nmodalities = s\n").validate();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("fusion=gan"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, RejectsForeignAndDamagedBytes) {
  Checkpoint ck;
  ck.tensors.push_back({"w", {2}, {1.0, 2.0}});
  ck.config_text = "seed = 1\n";
  auto bytes = serialize_checkpoint(ck);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad_magic), CheckpointError);

  auto bad_version = bytes;
  bad_version[4] = 9;
  try {
    deserialize_checkpoint(bad_version);
    FAIL() << "version mismatch accepted";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version 9"), std::string::npos);
  }

  for (std::size_t cut : {std::size_t{3}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<char> truncated(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(deserialize_checkpoint(truncated), CheckpointError) << cut;
  }
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(deserialize_checkpoint(trailing), CheckpointError);
  EXPECT_THROW(load_checkpoint("/nonexistent/model.ckpt"), CheckpointError);
}

TEST(Checkpoint, NameCollisionsAreErrorsBothWays) {
  Checkpoint ck;
  ck.tensors.push_back({"w", {1}, {1.0}});
  ck.tensors.push_back({"w", {1}, {2.0}});
  EXPECT_THROW(serialize_checkpoint(ck), CheckpointError);

  // Forge a file with a duplicate by renaming the second entry in the bytes.
  ck.tensors[1].name = "v";
  auto bytes = serialize_checkpoint(ck);
  auto it = std::find(bytes.begin() + 8, bytes.end(), 'v');
  ASSERT_NE(it, bytes.end());
  *it = 'w';
  EXPECT_THROW(deserialize_checkpoint(bytes), CheckpointError);
}

TEST(Checkpoint, RngWordsSurviveAsDoubles) {
  Rng rng(77);
  rng.discard(1000);
  Rng copy = rng_from_state(doubles_to_words(words_to_doubles(rng_state(rng))));
  for (int i = 0; i < 10; ++i) EXPECT_EQ(copy(), rng());
  EXPECT_THROW(doubles_to_words({1.0}), CheckpointError);
}

TEST(Checkpoint, RoundTripPreservesEvaluationBitExactly) {
  for (auto fusion : {FusionKind::concat, FusionKind::gan}) {
    const auto& data = small_translation();
    auto s = train(quick(Task::translation, "vst", fusion), data);
    const auto dir = scratch_dir("ckpt");
    save_checkpoint((dir / "model.ckpt").string(), to_checkpoint(s));
    TrainingSession back = from_checkpoint(load_checkpoint((dir / "model.ckpt").string()));
    const auto a = evaluate(s.model, data.test, 0.2, 5);
    const auto b = evaluate(back.model, data.test, 0.2, 5);
    EXPECT_EQ(a.metrics, b.metrics);
    EXPECT_EQ(a.hypotheses, b.hypotheses);
    EXPECT_EQ(back.epoch, s.epoch);
    EXPECT_EQ(back.global_step, s.global_step);
    EXPECT_EQ(back.main_opt.step, s.main_opt.step);
    EXPECT_EQ(back.vocab.source.tokens(), s.vocab.source.tokens());
    EXPECT_EQ(rng_state(back.noise_rng), rng_state(s.noise_rng));
  }
}

TEST(Checkpoint, ShapeMismatchIsReported) {
  auto s = train(quick(Task::classification, "vs", FusionKind::concat), small_xor());
  Checkpoint ck = to_checkpoint(s);
  ck.tensors[0].shape.push_back(1);
  EXPECT_THROW(from_checkpoint(ck), CheckpointError);
  ck = to_checkpoint(s);
  ck.tensors.pop_back();
  EXPECT_THROW(from_checkpoint(ck), CheckpointError);
}

// ---------------------------------------------------------------------------
// Training

TEST(Training, ConcatFusionContributesNoFusionLoss) {
  auto s = train(quick(Task::classification, "vst", FusionKind::concat), small_xor());
  ASSERT_FALSE(s.record.steps.empty());
  for (const auto& row : s.record.steps) {
    EXPECT_EQ(row.j_fusion, 0.0);
    EXPECT_EQ(row.j_disc, 0.0);
  }
}

TEST(Training, LossDecompositionHoldsEveryStep) {
  ExperimentConfig cfg = quick(Task::classification, "vst", FusionKind::gan);
  cfg.lambda1 = 0.3;
  cfg.lambda2 = 0.7;
  auto s = train(cfg, small_xor());
  for (const auto& row : s.record.steps) {
    EXPECT_NEAR(row.j_total, 0.3 * row.j_fusion + 0.7 * row.j_task, 1e-12);
    EXPECT_GT(row.j_disc, 0.0);
  }
}

TEST(Training, SameSeedSameRecordDifferentSeedDifferentRecord) {
  ExperimentConfig cfg = quick(Task::classification, "vst", FusionKind::gan);
  cfg.dropout = 0.2;
  auto a = train(cfg, small_xor());
  auto b = train(cfg, small_xor());
  EXPECT_TRUE(a.record == b.record);
  cfg.seed = 2;
  auto c = train(cfg, small_xor());
  EXPECT_FALSE(a.record == c.record);
}

TEST(Training, MainUpdateLeavesDiscriminatorsUntouched) {
  const auto& data = small_xor();
  TrainingSession s = make_session(quick(Task::classification, "vst", FusionKind::gan), data);
  const ParameterList disc = s.model.discriminator_parameters();
  auto values = [&] {
    std::vector<std::vector<double>> v;
    for (const auto& p : disc) v.emplace_back(p.value.data().begin(), p.value.data().end());
    return v;
  };
  const auto initial = values();
  std::vector<std::vector<double>> before;
  int checked = 0;
  s.on_phase = [&](const char* phase) {
    if (std::string(phase) == "before_main_update") before = values();
    else {
      EXPECT_EQ(values(), before);
      ++checked;
    }
  };
  train_step(s, make_batch(data.train, index_range(0, 16), s.config.modalities));
  train_step(s, make_batch(data.train, index_range(16, 32), s.config.modalities));
  EXPECT_EQ(checked, 2);
  EXPECT_NE(values(), initial);  // the discriminator step itself did move them
}

TEST(Training, BestStateIsRestored) {
  ExperimentConfig cfg = quick(Task::classification, "vs", FusionKind::autofusion);
  cfg.epochs = 4;
  auto s = train(cfg, small_xor());
  const double best = s.record.summary.at("best_valid_accuracy");
  EXPECT_EQ(evaluate(s.model, small_xor().valid).metrics.at("accuracy"), best);
  EXPECT_EQ(s.record.find(static_cast<std::size_t>(s.record.summary.at("best_epoch")), "valid", "accuracy"), best);
  EXPECT_TRUE(s.record.find(0, "valid", "accuracy").has_value());
  EXPECT_TRUE(s.record.summary.count("test_accuracy"));
}

TEST(Training, RecordRejectsDecreasingEpochs) {
  RunRecord rec;
  rec.log(2, "valid", "accuracy", 0.5);
  EXPECT_THROW(rec.log(1, "valid", "accuracy", 0.5), std::logic_error);
}

TEST(Training, ParameterCountMatchesClosedForm) {
  ExperimentConfig cfg = quick(Task::classification, "vst", FusionKind::autofusion);
  ModelShape shape{11, 13, 20, 0, 4};
  FusionModel m(cfg, shape);
  const std::size_t e = 6, h = 8, s = 5, v = 7, d = 6, hh = 9;
  const std::size_t video = (13 + 1) * v, speech = (11 + 1) * s;
  const std::size_t text = 20 * e + e * 4 * h + h * 4 * h + 4 * h;
  const std::size_t k = v + s + h;
  const std::size_t fusion = (k + 1) * d + (d + 1) * k;
  const std::size_t head = (d + 1) * hh + (hh + 1) * 4;
  EXPECT_EQ(count_parameters(m.parameters()), video + speech + text + fusion + head);

  FusionModel g(quick(Task::classification, "vst", FusionKind::gan), shape);
  // One discriminator per target modality: (d_r + 1) * h_D + (h_D + 1).
  EXPECT_EQ(count_parameters(g.discriminator_parameters()), 3 * ((d + 1) * 5 + (5 + 1)));
}

// ---------------------------------------------------------------------------
// Evaluation and ablation

TEST(Evaluation, ZeroDropEqualsPlainEvaluation) {
  const auto& data = small_translation();
  auto s = train(quick(Task::translation, "vst", FusionKind::gan), data);
  const auto plain = evaluate(s.model, data.test);
  const auto zero = evaluate(s.model, data.test, 0.0, 12345);
  EXPECT_EQ(plain.metrics, zero.metrics);
  EXPECT_EQ(plain.hypotheses, zero.hypotheses);
  auto rows = ablate(s.model, data.test, {0.0}, 9);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].bleu, plain.bleu->bleu);
}

TEST(Evaluation, FullDropLeavesTextOnlyModelNearZero) {
  const auto& data = small_translation();
  auto s = train(quick(Task::translation, "t", FusionKind::concat), data);
  EXPECT_LT(evaluate(s.model, data.test, 1.0, 3).metrics.at("bleu4"), 5.0);
}

TEST(Evaluation, SilhouetteOnlyForGanRuns) {
  const auto& data = small_xor();
  auto gan = train(quick(Task::classification, "vst", FusionKind::gan), data);
  auto concat = train(quick(Task::classification, "vst", FusionKind::concat), data);
  auto r_gan = evaluate(gan.model, data.test);
  auto r_concat = evaluate(concat.model, data.test);
  ASSERT_TRUE(r_gan.silhouette.has_value());
  EXPECT_GE(*r_gan.silhouette, -1.0);
  EXPECT_LE(*r_gan.silhouette, 1.0);
  EXPECT_FALSE(r_concat.silhouette.has_value());
  EXPECT_FALSE(r_concat.metrics.count("silhouette"));
}

TEST(Evaluation, TaskMismatchIsSchemaError) {
  auto s = train(quick(Task::classification, "vs", FusionKind::concat), small_xor());
  EXPECT_THROW(evaluate(s.model, small_translation().test), SchemaError);
  EXPECT_THROW(ablate(s.model, small_xor().test, {0.0}, 1), ConfigError);
}

TEST(Evaluation, AblationGridUsesFreshStreams) {
  const auto grid = default_drop_grid();
  ASSERT_EQ(grid.size(), 10u);
  EXPECT_EQ(grid.front(), 0.0);
  EXPECT_NEAR(grid.back(), 0.9, 1e-15);
  EXPECT_NE(word_drop_seed(1, 1), word_drop_seed(1, 2));
  EXPECT_NE(word_drop_seed(1, 1), word_drop_seed(2, 1));
}

// ---------------------------------------------------------------------------
// Artifacts

TEST(Artifacts, RunDirectoryHoldsEveryFile) {
  auto s = train(quick(Task::classification, "vs", FusionKind::gan), small_xor());
  const auto dir = scratch_dir("run");
  write_run(dir.string(), s);
  for (const char* f : {"metrics.csv", "steps.csv", "summary.json", "config.txt", "model.ckpt"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;

  std::ifstream summary(dir / "summary.json");
  auto j = nlohmann::json::parse(summary);
  EXPECT_EQ(j["fusion"], "gan");
  EXPECT_EQ(j["summary"]["epochs_run"], 2.0);

  std::ifstream metrics(dir / "metrics.csv");
  std::string header;
  std::getline(metrics, header);
  EXPECT_EQ(header, "epoch,split,metric,value");
  std::ifstream steps(dir / "steps.csv");
  std::getline(steps, header);
  EXPECT_EQ(header, "epoch,step,j_fusion,j_task,j_total,j_disc");
  EXPECT_EQ(echo_config(load_config_file((dir / "config.txt").string())), echo_config(s.config));
}

TEST(Artifacts, LoadDataChecksTheTask) {
  const auto dir = scratch_dir("data");
  auto raw = split_dataset(gen_interaction_dataset(60, 2));
  write_dataset((dir / "train.tsv").string(), raw.train);
  write_dataset((dir / "valid.tsv").string(), raw.valid);
  write_dataset((dir / "test.tsv").string(), raw.test);
  ExperimentConfig cfg;
  cfg.data_dir = dir.string();
  EXPECT_EQ(load_data(cfg).train.samples.size(), raw.train.records.size());
  cfg.task = Task::translation;
  EXPECT_THROW(load_data(cfg), SchemaError);
}

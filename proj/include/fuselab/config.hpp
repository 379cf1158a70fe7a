#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fuselab/data.hpp"
#include "fuselab/encoders.hpp"
#include "fuselab/gan_fusion.hpp"
#include "fuselab/heads.hpp"

namespace fuselab {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class FusionKind { concat, autofusion, gan };
enum class TaskLoss { cross_entropy, hinge };

inline std::string fusion_name(FusionKind f) {
  switch (f) {
    case FusionKind::concat: return "concat";
    case FusionKind::autofusion: return "auto";
    case FusionKind::gan: return "gan";
  }
  return "?";
}

/// Declarative description of one run. Every field is reachable from the
/// key = value config format and from a CLI flag of the same name.
struct ExperimentConfig {
  Task task = Task::classification;
  ModalitySet modalities{Modality::video, Modality::speech, Modality::text};
  FusionKind fusion = FusionKind::gan;

  std::size_t text_embed = 32;
  std::size_t text_hidden = 64;
  std::size_t speech_latent = 32;
  std::size_t video_latent = 32;
  std::size_t d_fuse = 32;
  std::size_t d_noise = 8;
  std::size_t disc_hidden = 32;
  std::size_t head_hidden = 64;
  std::size_t decoder_embed = 32;
  std::size_t decoder_hidden = 64;
  double noise_sigma = 1.0;
  bool batch_norm = false;
  double dropout = 0.0;

  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double lr = 1e-3;
  double disc_lr = 5e-4;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::size_t patience = 10;
  std::uint64_t seed = 1;

  std::string data_dir = "data";
  std::string out_dir;
  double word_drop_p = 0.0;
  GeneratorLoss generator_loss = GeneratorLoss::non_saturating;
  DecoderConditioning decoder_conditioning = DecoderConditioning::init;
  TaskLoss task_loss = TaskLoss::cross_entropy;
  std::size_t max_decode_len = 16;

  std::string train_path() const { return data_dir + "/train.tsv"; }
  std::string valid_path() const { return data_dir + "/valid.tsv"; }
  std::string test_path() const { return data_dir + "/test.tsv"; }

  void validate() const {
    if (modalities.count() == 0) throw ConfigError("modalities: at least one modality is required");
    if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("lambda1 and lambda2 must be non-negative");
    if (fusion == FusionKind::gan && modalities.count() < 2)
      throw ConfigError("fusion=gan requires at least two modalities; use fusion=concat for unimodal runs");
    if (task == Task::translation && !modalities.contains(Modality::text))
      throw ConfigError("task=translation requires the text modality");
    if (!(lr > 0.0) || !(disc_lr > 0.0)) throw ConfigError("learning rates must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
    if (!(word_drop_p >= 0.0 && word_drop_p <= 1.0)) throw ConfigError("word_drop_p must be in [0, 1]");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be non-negative");
    for (auto d : {text_embed, text_hidden, speech_latent, video_latent, d_fuse, disc_hidden, head_hidden, decoder_embed,
                   decoder_hidden})
      if (d == 0) throw ConfigError("layer widths must be positive");
  }
};

// ---------------------------------------------------------------------------
// Field table

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": cannot parse '" + text + "'");
  return value;
}

inline double parse_double(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw ConfigError(key + ": cannot parse '" + text + "'");
  return v;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

}  // namespace detail

struct ConfigField {
  std::string name;
  std::string help;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

inline const std::vector<ConfigField>& config_fields() {
  using C = ExperimentConfig;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto size_field = [&f](const char* name, const char* help, std::size_t C::*member) {
      f.push_back({name, help, [member](const C& c) { return std::to_string(c.*member); },
                   [member, name](C& c, const std::string& v) { c.*member = detail::parse_number<std::size_t>(name, v); }});
    };
    auto double_field = [&f](const char* name, const char* help, double C::*member) {
      f.push_back({name, help, [member](const C& c) { return detail::format_double(c.*member); },
                   [member, name](C& c, const std::string& v) { c.*member = detail::parse_double(name, v); }});
    };
    f.push_back({"task", "classification | translation", [](const C& c) { return task_name(c.task); },
                 [](C& c, const std::string& v) {
                   try {
                     c.task = parse_task(v);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(std::string("task: ") + e.what());
                   }
                 }});
    f.push_back({"modalities", "subset of v, s, t (e.g. vst)", [](const C& c) { return c.modalities.str(); },
                 [](C& c, const std::string& v) {
                   try {
                     c.modalities = ModalitySet::parse(v);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigError(std::string("modalities: ") + e.what());
                   }
                 }});
    f.push_back({"fusion", "concat | auto | gan", [](const C& c) { return fusion_name(c.fusion); },
                 [](C& c, const std::string& v) {
                   if (v == "concat") c.fusion = FusionKind::concat;
                   else if (v == "auto") c.fusion = FusionKind::autofusion;
                   else if (v == "gan") c.fusion = FusionKind::gan;
                   else throw ConfigError("fusion: unknown kind '" + v + "'");
                 }});
    size_field("text_embed", "text embedding width", &C::text_embed);
    size_field("text_hidden", "text LSTM hidden width", &C::text_hidden);
    size_field("speech_latent", "speech latent width", &C::speech_latent);
    size_field("video_latent", "video latent width", &C::video_latent);
    size_field("d_fuse", "fused vector width (also the GAN comparison width)", &C::d_fuse);
    size_field("d_noise", "GAN noise width", &C::d_noise);
    size_field("disc_hidden", "discriminator hidden width", &C::disc_hidden);
    size_field("head_hidden", "classifier hidden width", &C::head_hidden);
    size_field("decoder_embed", "decoder embedding width", &C::decoder_embed);
    size_field("decoder_hidden", "decoder LSTM hidden width", &C::decoder_hidden);
    double_field("noise_sigma", "GAN noise standard deviation during training", &C::noise_sigma);
    f.push_back({"batch_norm", "batch norm in the classifier head", [](const C& c) { return std::string(c.batch_norm ? "true" : "false"); },
                 [](C& c, const std::string& v) { c.batch_norm = detail::parse_bool("batch_norm", v); }});
    double_field("dropout", "dropout on the fused vector during training", &C::dropout);
    double_field("lambda1", "weight of the fusion loss", &C::lambda1);
    double_field("lambda2", "weight of the task loss", &C::lambda2);
    double_field("lr", "Adam learning rate", &C::lr);
    double_field("disc_lr", "discriminator Adam learning rate", &C::disc_lr);
    size_field("epochs", "maximum training epochs", &C::epochs);
    size_field("batch_size", "minibatch size", &C::batch_size);
    size_field("patience", "early-stopping patience in epochs", &C::patience);
    f.push_back({"seed", "master seed", [](const C& c) { return std::to_string(c.seed); },
                 [](C& c, const std::string& v) { c.seed = detail::parse_number<std::uint64_t>("seed", v); }});
    f.push_back({"data_dir", "directory holding train.tsv, valid.tsv, test.tsv", [](const C& c) { return c.data_dir; },
                 [](C& c, const std::string& v) { c.data_dir = v; }});
    f.push_back({"out_dir", "run output directory", [](const C& c) { return c.out_dir; },
                 [](C& c, const std::string& v) { c.out_dir = v; }});
    double_field("word_drop_p", "evaluation-time word drop probability", &C::word_drop_p);
    f.push_back({"generator_loss", "non_saturating | minimax",
                 [](const C& c) {
                   return std::string(c.generator_loss == GeneratorLoss::minimax ? "minimax" : "non_saturating");
                 },
                 [](C& c, const std::string& v) {
                   if (v == "non_saturating") c.generator_loss = GeneratorLoss::non_saturating;
                   else if (v == "minimax") c.generator_loss = GeneratorLoss::minimax;
                   else throw ConfigError("generator_loss: unknown variant '" + v + "'");
                 }});
    f.push_back({"decoder_conditioning", "init | every_step",
                 [](const C& c) {
                   return std::string(c.decoder_conditioning == DecoderConditioning::every_step ? "every_step" : "init");
                 },
                 [](C& c, const std::string& v) {
                   if (v == "init") c.decoder_conditioning = DecoderConditioning::init;
                   else if (v == "every_step") c.decoder_conditioning = DecoderConditioning::every_step;
                   else throw ConfigError("decoder_conditioning: unknown variant '" + v + "'");
                 }});
    f.push_back({"task_loss", "cross_entropy | hinge",
                 [](const C& c) { return std::string(c.task_loss == TaskLoss::hinge ? "hinge" : "cross_entropy"); },
                 [](C& c, const std::string& v) {
                   if (v == "cross_entropy") c.task_loss = TaskLoss::cross_entropy;
                   else if (v == "hinge") c.task_loss = TaskLoss::hinge;
                   else throw ConfigError("task_loss: unknown variant '" + v + "'");
                 }});
    size_field("max_decode_len", "greedy decoding length limit", &C::max_decode_len);
    return f;
  }();
  return fields;
}

inline void set_config_field(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : config_fields())
    if (f.name == key) {
      f.set(cfg, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Applies `key = value` lines onto `cfg`. Blank lines and `#` comments are
/// skipped.
inline void apply_config_text(ExperimentConfig& cfg, std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    set_config_field(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

inline ExperimentConfig parse_config_text(const std::string& text, ExperimentConfig base = {}) {
  std::istringstream is(text);
  apply_config_text(base, is);
  return base;
}

inline ExperimentConfig load_config_file(const std::string& path, ExperimentConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path);
  apply_config_text(base, is);
  return base;
}

inline std::string echo_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : config_fields()) out += f.name + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace fuselab

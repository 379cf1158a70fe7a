#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "fuselab/heads.hpp"
#include "fuselab/random.hpp"

namespace fuselab {

enum class Task { classification, translation };

inline std::string task_name(Task t) { return t == Task::classification ? "classification" : "translation"; }
inline Task parse_task(const std::string& s) {
  if (s == "classification") return Task::classification;
  if (s == "translation") return Task::translation;
  throw std::invalid_argument("unknown task '" + s + "'");
}

class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kSchemaTag = "#schema=fuselab-v1";

/// One line of a dataset file. The topic id is the hidden generative factor;
/// it stays here and is split off before anything reaches a model.
struct RawRecord {
  int topic = 0;
  std::string label_or_target;
  std::vector<std::string> source;
  std::optional<std::vector<double>> speech;
  std::optional<std::vector<double>> video;
};

struct RawDataset {
  Task task = Task::classification;
  std::vector<RawRecord> records;
};

/// Model-visible view of one event.
struct MultimodalSample {
  std::optional<std::vector<double>> video;
  std::optional<std::vector<double>> speech;
  std::optional<std::vector<int>> text;
  int label = -1;
  std::vector<int> target;
};

/// Encoded split. `topics` is parallel to `samples` and reserved for
/// evaluation (silhouette, ablations).
struct Dataset {
  Task task = Task::classification;
  std::vector<MultimodalSample> samples;
  std::vector<int> topics;
};

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

/// Token <-> id map with reserved ids PAD=0, SOS=1, EOS=2, UNK=3.
class Vocabulary {
 public:
  Vocabulary() : tokens_{"<pad>", "<s>", "</s>", "<unk>"} {
    for (std::size_t i = 0; i < tokens_.size(); ++i) ids_[tokens_[i]] = static_cast<int>(i);
  }

  int add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    ids_[token] = id;
    return id;
  }

  int id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    for (std::size_t i = 4; i < tokens.size(); ++i) v.add(tokens[i]);
    return v;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

inline std::vector<std::string> split_tokens(const std::string& text) {
  std::istringstream is(text);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

struct Vocabularies {
  Vocabulary source;
  Vocabulary target;
};

/// Vocabularies from the training split only.
inline Vocabularies build_vocabularies(const RawDataset& train) {
  Vocabularies v;
  for (const auto& r : train.records) {
    for (const auto& t : r.source) v.source.add(t);
    if (train.task == Task::translation)
      for (const auto& t : split_tokens(r.label_or_target)) v.target.add(t);
  }
  return v;
}

inline Dataset encode_dataset(const RawDataset& raw, const Vocabularies& vocab) {
  Dataset ds;
  ds.task = raw.task;
  for (const auto& r : raw.records) {
    MultimodalSample s;
    s.video = r.video;
    s.speech = r.speech;
    if (!r.source.empty()) {
      std::vector<int> ids;
      for (const auto& t : r.source) ids.push_back(vocab.source.id(t));
      s.text = std::move(ids);
    }
    if (raw.task == Task::classification) {
      try {
        s.label = std::stoi(r.label_or_target);
      } catch (const std::exception&) {
        throw SchemaError("classification label is not an integer: '" + r.label_or_target + "'");
      }
    } else {
      for (const auto& t : split_tokens(r.label_or_target)) s.target.push_back(vocab.target.id(t));
    }
    ds.samples.push_back(std::move(s));
    ds.topics.push_back(r.topic);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

inline std::string format_features(const std::optional<std::vector<double>>& v) {
  if (!v) return {};
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < v->size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", (*v)[i]);
    if (i) out += ',';
    out += buf;
  }
  return out;
}

inline std::optional<std::vector<double>> parse_features(const std::string& field, std::size_t line) {
  if (field.empty()) return std::nullopt;
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= field.size()) {
    const auto comma = field.find(',', start);
    const std::string item = field.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    std::size_t used = 0;
    try {
      out.push_back(std::stod(item, &used));
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || item.empty())
      throw SchemaError("line " + std::to_string(line) + ": bad feature value '" + item + "'");
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline void write_dataset(std::ostream& os, const RawDataset& ds) {
  os << kSchemaTag << "\ttask=" << task_name(ds.task) << '\n';
  for (const auto& r : ds.records) {
    os << r.topic << '\t' << r.label_or_target << '\t' << join_tokens(r.source) << '\t' << format_features(r.speech)
       << '\t' << format_features(r.video) << '\n';
  }
}

inline void write_dataset(const std::string& path, const RawDataset& ds) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write dataset file " + path);
  write_dataset(os, ds);
}

inline RawDataset read_dataset(std::istream& is) {
  RawDataset ds;
  std::string line;
  if (!std::getline(is, line) || line.rfind(kSchemaTag, 0) != 0)
    throw SchemaError(std::string("missing header line starting with ") + kSchemaTag);
  const auto task_pos = line.find("task=");
  if (task_pos == std::string::npos) throw SchemaError("header does not declare task=");
  ds.task = parse_task(split_tokens(line.substr(task_pos + 5)).at(0));
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 5)
      throw SchemaError("line " + std::to_string(lineno) + ": expected 5 tab-separated fields, got " +
                        std::to_string(fields.size()));
    RawRecord r;
    try {
      r.topic = std::stoi(fields[0]);
    } catch (const std::exception&) {
      throw SchemaError("line " + std::to_string(lineno) + ": bad topic id '" + fields[0] + "'");
    }
    r.label_or_target = fields[1];
    r.source = split_tokens(fields[2]);
    r.speech = parse_features(fields[3], lineno);
    r.video = parse_features(fields[4], lineno);
    if (r.source.empty() && !r.speech && !r.video)
      throw SchemaError("line " + std::to_string(lineno) + ": record has no modality");
    ds.records.push_back(std::move(r));
  }
  return ds;
}

inline RawDataset read_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read dataset file " + path);
  return read_dataset(is);
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

struct Splits {
  RawDataset train;
  RawDataset valid;
  RawDataset test;
};

/// Index-ordered split (80/10/10 by default). Records are generated from
/// per-index seeds, so the partition is fixed before any noise is drawn.
inline Splits split_dataset(const RawDataset& ds, double train_frac = 0.8, double valid_frac = 0.1) {
  Splits s;
  s.train.task = s.valid.task = s.test.task = ds.task;
  const std::size_t n = ds.records.size();
  const auto n_train = static_cast<std::size_t>(static_cast<double>(n) * train_frac);
  const auto n_valid = static_cast<std::size_t>(static_cast<double>(n) * valid_frac);
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < n_train ? s.train : (i < n_train + n_valid ? s.valid : s.test);
    dst.records.push_back(ds.records[i]);
  }
  return s;
}

inline std::vector<double> sign_pattern(std::size_t width, double amplitude, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  std::vector<double> v(width);
  for (auto& x : v) x = coin(rng) ? amplitude : -amplitude;
  return v;
}

struct InteractionSpec {
  std::size_t speech_width = 32;
  std::size_t video_width = 48;
  double noise = 0.3;
  double amplitude = 0.5;
};

/// Latent bits a, b, c per sample. Speech carries (a, c), video carries
/// (b, c), text is a label-free template. Label = 2 * (a xor b) + c, so no
/// single modality predicts the interaction bit above chance.
inline RawDataset gen_interaction_dataset(std::size_t n, std::uint64_t seed, const InteractionSpec& spec = {}) {
  if (n == 0) throw std::invalid_argument("dataset size must be at least 1");
  Rng proto_rng = make_stream(seed, "interaction.prototypes");
  const auto speech_a = sign_pattern(spec.speech_width, spec.amplitude, proto_rng);
  const auto speech_c = sign_pattern(spec.speech_width, spec.amplitude, proto_rng);
  const auto video_b = sign_pattern(spec.video_width, spec.amplitude, proto_rng);
  const auto video_c = sign_pattern(spec.video_width, spec.amplitude, proto_rng);

  // Balanced (a, b, c) assignment, shuffled.
  std::vector<int> combos(n);
  for (std::size_t i = 0; i < n; ++i) combos[i] = static_cast<int>(i % 8);
  Rng shuffle_rng = make_stream(seed, "interaction.combos");
  std::shuffle(combos.begin(), combos.end(), shuffle_rng);

  static const std::vector<std::vector<std::string>> templates{
      {"the", "speaker", "says", "something"},
      {"a", "person", "is", "talking", "now"},
      {"someone", "speaks", "here"},
      {"the", "clip", "shows", "a", "person", "speaking"},
  };

  RawDataset ds;
  ds.task = Task::classification;
  const std::uint64_t sample_master = derive_seed(seed, "interaction.samples");
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(sample_master, static_cast<std::uint64_t>(i)));
    const int a = combos[i] & 1, b = (combos[i] >> 1) & 1, c = (combos[i] >> 2) & 1;
    std::normal_distribution<double> noise(0.0, spec.noise);
    RawRecord r;
    r.topic = 2 * a + b;
    r.label_or_target = std::to_string(2 * (a ^ b) + c);
    std::vector<double> speech(spec.speech_width), video(spec.video_width);
    for (std::size_t j = 0; j < speech.size(); ++j)
      speech[j] = (a ? 1 : -1) * speech_a[j] + (c ? 1 : -1) * speech_c[j] + (spec.noise > 0 ? noise(rng) : 0.0);
    for (std::size_t j = 0; j < video.size(); ++j)
      video[j] = (b ? 1 : -1) * video_b[j] + (c ? 1 : -1) * video_c[j] + (spec.noise > 0 ? noise(rng) : 0.0);
    std::uniform_int_distribution<std::size_t> pick(0, templates.size() - 1);
    r.source = templates[pick(rng)];
    r.speech = std::move(speech);
    r.video = std::move(video);
    ds.records.push_back(std::move(r));
  }
  return ds;
}

struct TranslationSpec {
  std::size_t vocab_size = 40;
  double ambiguity_rate = 0.0;
  std::size_t topics = 4;
  double topic_cue_rate = 0.15;  // chance a non-homograph slot draws a topic word
  std::size_t min_len = 4;
  std::size_t max_len = 10;
  std::size_t speech_width = 32;
  std::size_t video_width = 48;
  double feature_noise = 0.5;
  double amplitude = 0.5;
};

/// Source vocabulary layout of the toy translation corpus.
struct ToyLexicon {
  std::size_t homographs = 0;
  std::size_t topic_words = 0;  // per topic
  std::size_t general = 0;
  std::size_t topics = 0;

  explicit ToyLexicon(const TranslationSpec& spec) : topics(spec.topics) {
    if (spec.topics == 0) throw std::invalid_argument("toy translation needs at least one topic");
    if (spec.vocab_size < 20) throw std::invalid_argument("toy translation vocabulary must have at least 20 words");
    homographs = std::max<std::size_t>(2, spec.vocab_size / 8);
    topic_words = std::max<std::size_t>(1, spec.vocab_size / 10);
    if (homographs + topic_words * spec.topics + 2 > spec.vocab_size)
      throw std::invalid_argument("vocabulary too small for the requested topic count");
    general = spec.vocab_size - homographs - topic_words * spec.topics;
  }

  std::string source_token(std::size_t index) const { return "s" + std::to_string(index); }
  bool is_homograph(std::size_t index) const { return index < homographs; }
  std::size_t topic_word(std::size_t topic, std::size_t k) const { return homographs + topic * topic_words + k; }
  std::size_t general_word(std::size_t k) const { return homographs + topic_words * topics + k; }
};

/// Token-wise mapping followed by swapping each adjacent pair of positions.
inline std::vector<std::string> translate_toy(const std::vector<std::size_t>& source, const ToyLexicon& lex, int topic) {
  std::vector<std::string> mapped;
  for (auto s : source)
    mapped.push_back(lex.is_homograph(s) ? "h" + std::to_string(s) + "_" + std::to_string(topic) : "t" + std::to_string(s));
  for (std::size_t i = 0; i + 1 < mapped.size(); i += 2) std::swap(mapped[i], mapped[i + 1]);
  return mapped;
}

/// Parallel corpus whose homographs translate according to the hidden topic;
/// speech and video carry the topic as noisy prototypes.
inline RawDataset gen_toy_translation(std::size_t n, std::uint64_t seed, const TranslationSpec& spec = {}) {
  if (n == 0) throw std::invalid_argument("dataset size must be at least 1");
  const ToyLexicon lex(spec);
  Rng proto_rng = make_stream(seed, "translation.prototypes");
  std::vector<std::vector<double>> speech_proto, video_proto;
  for (std::size_t k = 0; k < spec.topics; ++k) {
    speech_proto.push_back(sign_pattern(spec.speech_width, spec.amplitude, proto_rng));
    video_proto.push_back(sign_pattern(spec.video_width, spec.amplitude, proto_rng));
  }

  RawDataset ds;
  ds.task = Task::translation;
  const std::uint64_t sample_master = derive_seed(seed, "translation.samples");
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(sample_master, static_cast<std::uint64_t>(i)));
    std::uniform_int_distribution<std::size_t> topic_dist(0, spec.topics - 1);
    std::uniform_int_distribution<std::size_t> len_dist(spec.min_len, spec.max_len);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> homograph(0, lex.homographs - 1);
    std::uniform_int_distribution<std::size_t> topic_word(0, lex.topic_words - 1);
    std::uniform_int_distribution<std::size_t> general(0, lex.general - 1);
    std::normal_distribution<double> noise(0.0, spec.feature_noise);

    const int topic = static_cast<int>(topic_dist(rng));
    const std::size_t len = len_dist(rng);
    std::vector<std::size_t> source;
    for (std::size_t p = 0; p < len; ++p) {
      if (unit(rng) < spec.ambiguity_rate) source.push_back(homograph(rng));
      else if (unit(rng) < spec.topic_cue_rate) source.push_back(lex.topic_word(topic, topic_word(rng)));
      else source.push_back(lex.general_word(general(rng)));
    }
    RawRecord r;
    r.topic = topic;
    for (auto s : source) r.source.push_back(lex.source_token(s));
    r.label_or_target = join_tokens(translate_toy(source, lex, topic));
    std::vector<double> speech(spec.speech_width), video(spec.video_width);
    for (std::size_t j = 0; j < speech.size(); ++j)
      speech[j] = speech_proto[topic][j] + (spec.feature_noise > 0 ? noise(rng) : 0.0);
    for (std::size_t j = 0; j < video.size(); ++j)
      video[j] = video_proto[topic][j] + (spec.feature_noise > 0 ? noise(rng) : 0.0);
    r.speech = std::move(speech);
    r.video = std::move(video);
    ds.records.push_back(std::move(r));
  }
  return ds;
}

/// Replaces each non-reserved id with UNK independently with probability p.
inline std::vector<int> apply_word_drop(const std::vector<int>& tokens, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("word drop probability must be in [0, 1]");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<int> out(tokens);
  for (auto& t : out) {
    if (t <= kUnk) continue;
    if (unit(rng) < p) t = kUnk;
  }
  return out;
}

inline std::vector<int> apply_word_drop(const std::vector<int>& tokens, double p, std::uint64_t seed) {
  Rng rng(seed);
  return apply_word_drop(tokens, p, rng);
}

}  // namespace fuselab

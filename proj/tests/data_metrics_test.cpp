#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "fuselab/data.hpp"
#include "fuselab/metrics.hpp"
#include "support/bleu_oracle.hpp"

using namespace fuselab;

// ---------------------------------------------------------------------------
// Synthetic data

TEST(Interaction, ClassBalanceWithinTwoPercent) {
  auto ds = gen_interaction_dataset(10000, 7);
  std::array<int, 4> counts{};
  for (const auto& r : ds.records) ++counts.at(std::stoi(r.label_or_target));
  for (int c : counts) EXPECT_NEAR(c / 10000.0, 0.25, 0.02);
}

TEST(Interaction, EveryModalityPresentAndTextLabelFree) {
  auto ds = gen_interaction_dataset(400, 3);
  std::map<std::string, std::set<std::string>> labels_per_sentence;
  for (const auto& r : ds.records) {
    ASSERT_TRUE(r.speech && r.video);
    EXPECT_EQ(r.speech->size(), 32u);
    EXPECT_EQ(r.video->size(), 48u);
    labels_per_sentence[join_tokens(r.source)].insert(r.label_or_target);
  }
  for (const auto& [sentence, labels] : labels_per_sentence) EXPECT_EQ(labels.size(), 4u) << sentence;
}

TEST(Interaction, SingleModalityCarriesNoInteractionBit) {
  // Noiseless speech takes exactly four distinct values (a, c); within each,
  // the interaction bit a xor b is split evenly.
  InteractionSpec spec;
  spec.noise = 0.0;
  auto ds = gen_interaction_dataset(4000, 11, spec);
  std::map<std::vector<double>, std::array<int, 2>> speech_groups, video_groups, joint;
  for (const auto& r : ds.records) {
    const int label = std::stoi(r.label_or_target);
    const int bit = label / 2;
    ++speech_groups[*r.speech][bit];
    ++video_groups[*r.video][bit];
    auto key = *r.speech;
    key.insert(key.end(), r.video->begin(), r.video->end());
    ++joint[key][bit];
  }
  EXPECT_EQ(speech_groups.size(), 4u);
  EXPECT_EQ(video_groups.size(), 4u);
  for (const auto* groups : {&speech_groups, &video_groups}) {
    double bayes = 0.0;
    for (const auto& [k, c] : *groups) bayes += std::max(c[0], c[1]);
    EXPECT_NEAR(bayes / 4000.0, 0.5, 0.03);
  }
  double joint_bayes = 0.0;
  for (const auto& [k, c] : joint) joint_bayes += std::max(c[0], c[1]);
  EXPECT_EQ(joint_bayes / 4000.0, 1.0);
}

TEST(Interaction, SameSeedIsBitIdentical) {
  std::ostringstream a, b, c;
  write_dataset(a, gen_interaction_dataset(50, 5));
  write_dataset(b, gen_interaction_dataset(50, 5));
  write_dataset(c, gen_interaction_dataset(50, 6));
  EXPECT_EQ(a.str(), b.str());
  EXPECT_NE(a.str(), c.str());
  EXPECT_THROW(gen_interaction_dataset(0, 1), std::invalid_argument);
}

TEST(Translation, ZeroAmbiguityTargetIsFunctionOfSource) {
  auto ds = gen_toy_translation(2000, 4);
  std::map<std::string, std::string> seen;
  for (const auto& r : ds.records) {
    EXPECT_GE(r.source.size(), 4u);
    EXPECT_LE(r.source.size(), 10u);
    EXPECT_EQ(split_tokens(r.label_or_target).size(), r.source.size());
    auto [it, inserted] = seen.emplace(join_tokens(r.source), r.label_or_target);
    if (!inserted) EXPECT_EQ(it->second, r.label_or_target);
    for (const auto& t : split_tokens(r.label_or_target)) EXPECT_NE(t[0], 'h');
  }
}

TEST(Translation, HomographTranslationDependsOnTopic) {
  TranslationSpec spec;
  const ToyLexicon lex(spec);
  auto a = translate_toy({0, 5}, lex, 0);
  auto b = translate_toy({0, 5}, lex, 1);
  EXPECT_NE(a, b);
  EXPECT_EQ(a[0], b[0]);  // reordering swaps the pair
  EXPECT_EQ(a[1], "h0_0");
  EXPECT_EQ(b[1], "h0_1");
}

TEST(Translation, AmbiguityRateMatchesHomographFraction) {
  TranslationSpec spec;
  spec.ambiguity_rate = 0.3;
  auto ds = gen_toy_translation(3000, 9, spec);
  const ToyLexicon lex(spec);
  std::size_t homographs = 0, total = 0;
  for (const auto& r : ds.records)
    for (const auto& t : r.source) {
      homographs += std::stoul(t.substr(1)) < lex.homographs;
      ++total;
    }
  EXPECT_NEAR(static_cast<double>(homographs) / total, 0.3, 0.01);
}

TEST(Translation, PreconditionsAndDeterminism) {
  TranslationSpec spec;
  spec.vocab_size = 19;
  EXPECT_THROW(gen_toy_translation(10, 1, spec), std::invalid_argument);
  std::ostringstream a, b;
  write_dataset(a, gen_toy_translation(30, 2));
  write_dataset(b, gen_toy_translation(30, 2));
  EXPECT_EQ(a.str(), b.str());
}

TEST(WordDrop, ExtremesAndRate) {
  std::vector<int> tokens{kSos, 5, 6, 7, kEos, kPad};
  EXPECT_EQ(apply_word_drop(tokens, 0.0, 1), tokens);
  EXPECT_EQ(apply_word_drop(tokens, 1.0, 1), (std::vector<int>{kSos, kUnk, kUnk, kUnk, kEos, kPad}));
  EXPECT_THROW(apply_word_drop(tokens, 1.5, 1), std::invalid_argument);

  std::vector<int> many(100000, 9);
  for (double p : {0.1, 0.3, 0.7}) {
    auto dropped = apply_word_drop(many, p, 42);
    ASSERT_EQ(dropped.size(), many.size());
    const auto unk = std::count(dropped.begin(), dropped.end(), kUnk);
    EXPECT_NEAR(static_cast<double>(unk) / many.size(), p, 0.01);
  }
}

TEST(Vocabulary, ReservedIdsAndRoundTrip) {
  Vocabulary v;
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.id("<unk>"), kUnk);
  const int a = v.add("alpha");
  EXPECT_EQ(a, 4);
  EXPECT_EQ(v.add("alpha"), 4);
  EXPECT_EQ(v.token(a), "alpha");
  EXPECT_EQ(v.id("missing"), kUnk);
  auto copy = Vocabulary::from_tokens(v.tokens());
  EXPECT_EQ(copy.tokens(), v.tokens());
}

TEST(DatasetFile, RoundTripAndTopicStripping) {
  auto raw = gen_toy_translation(20, 3);
  raw.records[1].video.reset();
  std::stringstream io;
  write_dataset(io, raw);
  auto back = read_dataset(io);
  ASSERT_EQ(back.records.size(), raw.records.size());
  for (std::size_t i = 0; i < raw.records.size(); ++i) {
    EXPECT_EQ(back.records[i].topic, raw.records[i].topic);
    EXPECT_EQ(back.records[i].source, raw.records[i].source);
    EXPECT_EQ(back.records[i].speech, raw.records[i].speech);
    EXPECT_EQ(back.records[i].video, raw.records[i].video);
  }
  auto vocab = build_vocabularies(back);
  auto ds = encode_dataset(back, vocab);
  EXPECT_EQ(ds.topics.size(), ds.samples.size());
  EXPECT_FALSE(ds.samples[1].video);
  EXPECT_EQ(ds.samples[0].target.size(), raw.records[0].source.size());
}

TEST(DatasetFile, SchemaErrors) {
  std::istringstream no_header("0\t1\ta b\t\t\n");
  EXPECT_THROW(read_dataset(no_header), SchemaError);
  std::istringstream few_fields("#schema=fuselab-v1\ttask=classification\n0\t1\ta b\n");
  EXPECT_THROW(read_dataset(few_fields), SchemaError);
  std::istringstream bad_float("#schema=fuselab-v1\ttask=classification\n0\t1\ta\t1.0,x\t\n");
  EXPECT_THROW(read_dataset(bad_float), SchemaError);
  std::istringstream empty("#schema=fuselab-v1\ttask=classification\n0\t1\t\t\t\n");
  EXPECT_THROW(read_dataset(empty), SchemaError);
}

TEST(Splits, DisjointAndCovering) {
  auto ds = gen_interaction_dataset(100, 1);
  auto s = split_dataset(ds);
  EXPECT_EQ(s.train.records.size(), 80u);
  EXPECT_EQ(s.valid.records.size(), 10u);
  EXPECT_EQ(s.test.records.size(), 10u);
  EXPECT_EQ(s.test.records.back().speech, ds.records.back().speech);
}

// ---------------------------------------------------------------------------
// BLEU

using Sent = std::vector<std::string>;

TEST(Bleu, PerfectMatch) {
  std::vector<Sent> c{{"a", "b", "c", "d"}, {"x", "y", "z", "w", "v"}};
  auto rep = corpus_bleu(c, c);
  for (double b : rep.bleu) EXPECT_DOUBLE_EQ(b, 100.0);
  EXPECT_EQ(rep.brevity_penalty, 1.0);
}

TEST(Bleu, ClippedRepeatedToken) {
  auto rep = corpus_bleu<std::string>({{"the", "the", "the", "the"}}, {{"the", "cat"}});
  EXPECT_EQ(rep.precisions[0], 0.25);
  EXPECT_EQ(rep.brevity_penalty, 1.0);
  EXPECT_DOUBLE_EQ(rep.bleu[0], 25.0);
}

TEST(Bleu, NoSharedTokensAndBrevity) {
  EXPECT_EQ(corpus_bleu<std::string>({{"a", "b"}}, {{"c", "d"}}).bleu[0], 0.0);
  auto rep = corpus_bleu<std::string>({{"a", "b"}}, {{"a", "b", "c", "d"}});
  EXPECT_NEAR(rep.brevity_penalty, std::exp(-1.0), 1e-15);
  EXPECT_NEAR(rep.bleu[1], 100.0 * std::exp(-1.0), 1e-12);
  EXPECT_EQ(rep.bleu[2], 0.0);
}

TEST(Bleu, Errors) {
  EXPECT_THROW(corpus_bleu<std::string>({}, {}), std::invalid_argument);
  EXPECT_THROW(corpus_bleu<std::string>({{"a"}}, {}), std::invalid_argument);
}

TEST(Bleu, MatchesBruteForceOracle) {
  Rng rng(99);
  std::uniform_int_distribution<int> len(0, 9), tok(0, 5);
  std::vector<Sent> cands, refs;
  for (int i = 0; i < 1000; ++i) {
    Sent c, r;
    for (int k = len(rng); k > 0; --k) c.push_back("w" + std::to_string(tok(rng)));
    for (int k = len(rng) + 1; k > 0; --k) r.push_back("w" + std::to_string(tok(rng)));
    cands.push_back(c);
    refs.push_back(r);
  }
  auto rep = corpus_bleu(cands, refs);
  auto expected = oracle::brute_bleu(cands, refs);
  for (std::size_t n = 0; n < 4; ++n) EXPECT_NEAR(rep.bleu[n], expected[n], 1e-9);

  std::vector<std::size_t> order(cands.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Sent> pc, pr;
  for (auto i : order) {
    pc.push_back(cands[i]);
    pr.push_back(refs[i]);
  }
  auto permuted = corpus_bleu(pc, pr);
  for (std::size_t n = 0; n < 4; ++n) EXPECT_EQ(permuted.bleu[n], rep.bleu[n]);
}

// ---------------------------------------------------------------------------
// Classification report

TEST(ClassificationReport, PerfectAndSingle) {
  auto rep = classification_report({0, 1, 2, 1}, {0, 1, 2, 1}, 3);
  EXPECT_EQ(rep.precision, 1.0);
  EXPECT_EQ(rep.recall, 1.0);
  EXPECT_EQ(rep.f1, 1.0);
  EXPECT_EQ(rep.accuracy, 1.0);
  auto one = classification_report({2}, {2}, 4);
  EXPECT_EQ(one.f1, 1.0);
  EXPECT_EQ(one.accuracy, 1.0);
}

TEST(ClassificationReport, AllClassZeroOnBalancedBinary) {
  auto rep = classification_report({0, 0, 0, 0}, {0, 1, 0, 1}, 2);
  EXPECT_EQ(rep.accuracy, 0.5);
  EXPECT_DOUBLE_EQ(rep.f1, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(rep.precision, 0.25);
  EXPECT_DOUBLE_EQ(rep.recall, 0.5);
}

TEST(ClassificationReport, ErrorsAndAccuracyIdentity) {
  EXPECT_THROW(classification_report({}, {}, 2), std::invalid_argument);
  EXPECT_THROW(classification_report({0}, {2}, 2), std::out_of_range);
  std::vector<int> p{0, 1, 1, 2, 0, 2, 2}, y{0, 1, 2, 2, 1, 2, 0};
  auto rep = classification_report(p, y, 3);
  double hits = 0;
  for (std::size_t i = 0; i < p.size(); ++i) hits += p[i] == y[i];
  EXPECT_EQ(rep.accuracy, hits / p.size());
}

// ---------------------------------------------------------------------------
// Silhouette

TEST(Silhouette, SeparatedClusters) {
  Rng rng(5);
  std::normal_distribution<double> noise(0.0, 0.05);
  std::vector<double> pts;
  std::vector<int> groups;
  for (int g = 0; g < 2; ++g)
    for (int i = 0; i < 30; ++i) {
      pts.push_back(10.0 * g + noise(rng));
      pts.push_back(noise(rng));
      groups.push_back(g);
    }
  EXPECT_GT(silhouette(pts, 2, groups), 0.9);
}

TEST(Silhouette, IdenticalPointsScoreZero) {
  EXPECT_EQ(silhouette(std::vector<double>(8, 1.0), 2, {0, 0, 1, 1}), 0.0);
}

TEST(Silhouette, RandomGroupsNearZero) {
  Rng rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> g(0, 3);
  std::vector<double> pts(1000);
  for (auto& x : pts) x = u(rng);
  std::vector<int> groups(500);
  for (auto& x : groups) x = g(rng);
  EXPECT_LT(std::abs(silhouette(pts, 2, groups)), 0.1);
}

TEST(Silhouette, SingletonsAndErrors) {
  // Group 1 is a singleton and contributes 0.
  const double s = silhouette({0, 0.1, 5}, 1, {0, 0, 1});
  const double a = 0.1, b0 = 5.0, b1 = 4.9;
  EXPECT_NEAR(s, ((b0 - a) / b0 + (b1 - a) / b1) / 3.0, 1e-15);
  EXPECT_THROW(silhouette({0, 1}, 1, {0, 0}), std::invalid_argument);
}

#include "avedit/conditioning.hpp"
#include "avedit/embedders.hpp"
#include "avedit/metrics.hpp"
#include "avedit/synth.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace avedit {
namespace {

std::vector<std::string> words_of(const TokenSequence& t) { return t.words; }

TEST(Tokenize, PaperPrompt) {
  const TokenSequence t = tokenize("church bells are ringing", default_vocabulary());
  EXPECT_EQ(t.size(), 6);
  EXPECT_EQ(words_of(t), (std::vector<std::string>{"<sot>", "church", "bells", "are", "ringing", "<eot>"}));
  EXPECT_EQ(t.ids.front(), Vocabulary::kSot);
  EXPECT_EQ(t.ids.back(), Vocabulary::kEot);
  EXPECT_EQ(t.markers[1], TokenMarker::kWord);
  for (int id : t.ids) EXPECT_NE(id, Vocabulary::kUnk);
}

TEST(Tokenize, LowercasesSplitsAndMapsUnknown) {
  const TokenSequence t = tokenize("Church, BELLS!  zyzzyva", default_vocabulary());
  EXPECT_EQ(words_of(t), (std::vector<std::string>{"<sot>", "church", "bells", "zyzzyva", "<eot>"}));
  EXPECT_EQ(t.ids[3], Vocabulary::kUnk);
}

TEST(Tokenize, EmptyPromptRejected) {
  EXPECT_THROW(tokenize("", default_vocabulary()), DataError);
  EXPECT_THROW(tokenize("  ,. ", default_vocabulary()), DataError);
}

TEST(Tokenize, IdempotentOnDetokenization) {
  for (const auto& cls : sound_classes()) {
    for (const auto& p : edit_prompts(cls)) {
      const TokenSequence a = tokenize(p, default_vocabulary());
      const TokenSequence b = tokenize(detokenize(a), default_vocabulary());
      EXPECT_EQ(a.ids, b.ids) << p;
      for (int id : a.ids) EXPECT_NE(id, Vocabulary::kUnk) << p;
    }
  }
}

TEST(Placeholder, InsertBeforeSubject) {
  const TokenSequence t = tokenize("church bells are ringing", default_vocabulary());
  const TokenSequence c = insert_placeholder(t, 1);
  EXPECT_EQ(words_of(c), (std::vector<std::string>{"<sot>", "<c>", "church", "bells", "are", "ringing", "<eot>"}));
  EXPECT_EQ(c.placeholder_position(), 1);
  EXPECT_EQ(c.size(), t.size() + 1);
  EXPECT_THROW(insert_placeholder(c, 2), FormatError);
  EXPECT_THROW(insert_placeholder(t, 5), RangeError);
  EXPECT_THROW(insert_placeholder(t, 0), RangeError);
  EXPECT_THROW(insert_placeholder(t, 9), RangeError);
}

TEST(Placeholder, FindSubject) {
  const TokenSequence t = tokenize("a car horn is honking beside a car horn", default_vocabulary());
  EXPECT_EQ(find_subject(t, {"car", "horn"}), 2);
  EXPECT_EQ(find_subject(t, {"church"}), -1);
}

TEST(Vocabulary, FileRoundTripAndReservedIds) {
  const auto dir = testing::scratch_dir("vocab");
  const Vocabulary& v = default_vocabulary();
  EXPECT_EQ(v.token(0), "<sot>");
  EXPECT_EQ(v.token(1), "<eot>");
  EXPECT_EQ(v.token(2), "<unk>");
  v.save((dir / "vocab.txt").string());
  const Vocabulary r = Vocabulary::load((dir / "vocab.txt").string());
  ASSERT_EQ(r.size(), v.size());
  for (int i = 0; i < v.size(); ++i) EXPECT_EQ(r.token(i), v.token(i));
  std::ofstream(dir / "bad.txt") << "bells\n<eot>\n<unk>\n";
  EXPECT_THROW(Vocabulary::load((dir / "bad.txt").string()), FormatError);
}

TEST(Embedders, DeterministicAndUnitNorm) {
  const Embedders& e = Embedders::standard();
  const TrainingPair p = testing::synth_pair(2, 5);
  const FeatureVector a1 = e.audio(p.audio), a2 = e.audio(p.audio);
  const FeatureVector i1 = e.image(p.image), i2 = e.image(p.image);
  EXPECT_EQ(a1.values, a2.values);
  EXPECT_EQ(i1.values, i2.values);
  EXPECT_EQ(a1.dim(), kFeatureDim);
  for (const FeatureVector& f : {a1, i1, e.image_texture(p.image), e.joint_audio(p.audio), e.joint_image(p.image),
                                 e.joint_text(p.prompt)}) {
    EXPECT_NEAR(f.values.norm(), 1.0, 1e-6) << f.embedder;
  }
  EXPECT_EQ(Embedders(7).image(p.image).values, Embedders(7).image(p.image).values);
  EXPECT_NE(Embedders(7).image(p.image).values, Embedders(8).image(p.image).values);
}

TEST(Embedders, IndependentRandomInputsAreNearlyOrthogonal) {
  const Embedders& e = Embedders::standard();
  Rng rng(12);
  int below = 0;
  const int pairs = 1000;
  for (int k = 0; k < pairs; ++k) {
    const Planes a(rng.normal_matrix<double>(3, 32 * 32), 32, 32), b(rng.normal_matrix<double>(3, 32 * 32), 32, 32);
    if (std::abs(cosine<double>(e.image(a).values, e.image(b).values)) < 0.5) ++below;
  }
  EXPECT_GE(below, 990);
}

TEST(Embedders, RejectEmptySignals) {
  const Embedders& e = Embedders::standard();
  EXPECT_THROW(e.audio({}), DataError);
  EXPECT_THROW(e.image(Planes()), ShapeError);
}

template <typename S>
void randomize(ad::ParameterList<S> params, std::uint64_t seed, double scale = 0.2) {
  Rng rng(seed);
  for (auto& [name, p] : params) p->value = rng.normal_matrix<S>(p->value.rows(), p->value.cols(), scale);
}

FusionConfig small_fusion(AdaptationMode mode) {
  FusionConfig c;
  c.feature_dim = 6;
  c.hidden_width = 16;
  c.text_width = 5;
  c.mode = mode;
  return c;
}

TEST(Fusion, ZeroInitGivesBiasAndShapes) {
  Rng rng(1);
  for (AdaptationMode mode : {AdaptationMode::kTextOnly, AdaptationMode::kUnimodal, AdaptationMode::kMultimodal}) {
    FusionAdapter<double> f(small_fusion(mode), 3);
    const RowVector<double> fa = rng.normal_matrix<double>(1, 6), fv = rng.normal_matrix<double>(1, 6);
    const auto [e1, e2] = f.fuse(fa, fv);
    EXPECT_EQ(e1.size(), 5);
    EXPECT_EQ(e2.size(), 5);
    if (mode == AdaptationMode::kMultimodal) {
      EXPECT_EQ(e1, f.audio_mlp().second.bias.value);
      EXPECT_EQ(e2, f.vision_mlp().second.bias.value);
    }
  }
  FusionAdapter<double> f(small_fusion(AdaptationMode::kMultimodal), 3);
  EXPECT_THROW(f.fuse(RowVector<double>::Zero(4), RowVector<double>::Zero(6)), ShapeError);
}

TEST(Fusion, TextOnlyIgnoresInputs) {
  FusionAdapter<double> f(small_fusion(AdaptationMode::kTextOnly), 3);
  randomize(f.parameters(), 4);
  Rng rng(2);
  const auto a = f.fuse(rng.normal_matrix<double>(1, 6), rng.normal_matrix<double>(1, 6));
  const auto b = f.fuse(rng.normal_matrix<double>(1, 6), rng.normal_matrix<double>(1, 6));
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

// d e2 / d f_audio vanishes in unimodal mode and not in multimodal mode.
double cross_gradient(AdaptationMode mode, std::uint64_t seed) {
  FusionAdapter<double> f(small_fusion(mode), seed);
  randomize(f.parameters(), seed + 100);
  Rng rng(seed);
  ad::Tape<double> tape;
  ad::Var<double> fa = tape.variable(rng.normal_matrix<double>(1, 6));
  ad::Var<double> fv = tape.variable(rng.normal_matrix<double>(1, 6));
  auto [e1, e2] = f.fuse(tape, fa, fv);
  tape.backward(ad::sum_squares(e2));
  return tape.grad(fa).norm();
}

TEST(Fusion, ModeContractOnCrossGradient) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EXPECT_EQ(cross_gradient(AdaptationMode::kUnimodal, seed), 0.0);
    EXPECT_GT(cross_gradient(AdaptationMode::kMultimodal, seed), 0.0);
  }
}

TEST(Fusion, MlpGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    FusionAdapter<double> f(small_fusion(AdaptationMode::kMultimodal), seed);
    randomize(f.parameters(), seed + 7);
    Rng rng(seed + 50);
    const RowVector<double> fa = rng.normal_matrix<double>(1, 6), fv = rng.normal_matrix<double>(1, 6);
    auto loss = [&] { return f.fuse(fa, fv).first.squaredNorm(); };
    ad::ParameterList<double> params;
    f.audio_mlp().collect("mlp", params);
    for (auto& [n, p] : params) p->zero_grad();
    {
      ad::Tape<double> tape;
      auto [e1, e2] = f.fuse(tape, tape.constant(fa), tape.constant(fv));
      tape.backward(ad::sum_squares(e1));
    }
    for (auto& [name, p] : params) {
      const MatrixXd g = p->grad;
      MatrixXd fd(g.rows(), g.cols());
      for (Eigen::Index i = 0; i < p->value.size(); ++i) {
        const double keep = p->value(i), h = 1e-6;
        p->value(i) = keep + h;
        const double up = loss();
        p->value(i) = keep - h;
        const double down = loss();
        p->value(i) = keep;
        fd(i) = (up - down) / (2 * h);
      }
      EXPECT_LE((g - fd).norm(), 1e-4 * std::max(1e-8, fd.norm())) << name;
    }
  }
}

TextEncoderConfig encoder_config() {
  TextEncoderConfig c;
  c.vocab_size = default_vocabulary().size();
  c.width = 16;
  c.ff_width = 32;
  return c;
}

TEST(TextEncoder, NoPlaceholderIgnoresInjection) {
  TextEncoder<double> enc(encoder_config(), 5);
  const TokenSequence t = tokenize("a drum is beating", default_vocabulary());
  const MatrixXd a = enc.encode(t, std::nullopt, FusionPoint::kEarly);
  const MatrixXd b = enc.encode(t, RowVector<double>::Ones(16), FusionPoint::kEarly);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.rows(), t.size());
  EXPECT_EQ(a, enc.encode(t, std::nullopt, FusionPoint::kEarly));
}

TEST(TextEncoder, PlaceholderNeedsInjection) {
  TextEncoder<double> enc(encoder_config(), 5);
  const TokenSequence t = insert_placeholder(tokenize("a drum is beating", default_vocabulary()), 2);
  EXPECT_THROW(enc.encode(t, std::nullopt, FusionPoint::kEarly), DataError);
  EXPECT_THROW(enc.encode(t, RowVector<double>::Ones(3), FusionPoint::kEarly), ShapeError);
}

TEST(TextEncoder, LateFusionIsLocalWithoutAttention) {
  TextEncoderConfig cfg = encoder_config();
  cfg.attention = false;
  TextEncoder<double> enc(cfg, 6);
  const TokenSequence t = insert_placeholder(tokenize("church bells are ringing", default_vocabulary()), 1);
  Rng rng(3);
  const MatrixXd zero = enc.encode(t, RowVector<double>::Zero(16), FusionPoint::kLate);
  const MatrixXd some = enc.encode(t, rng.normal_matrix<double>(1, 16), FusionPoint::kLate);
  for (int i = 0; i < t.size(); ++i) {
    if (i == 1) EXPECT_NE(zero.row(i), some.row(i));
    else EXPECT_EQ(zero.row(i), some.row(i)) << "position " << i;
  }
}

TEST(TextEncoder, EarlyFusionSubstitutionIdentity) {
  TextEncoder<double> enc(encoder_config(), 7);
  const Vocabulary& v = default_vocabulary();
  const TokenSequence with_c = insert_placeholder(tokenize("bells are ringing", v), 1);
  const TokenSequence with_word = tokenize("church bells are ringing", v);
  const RowVector<double> e = enc.token_embedding(v.id("church"));
  EXPECT_EQ(enc.encode(with_c, e, FusionPoint::kEarly), enc.encode(with_word, std::nullopt, FusionPoint::kEarly));
}

TEST(TextEncoder, InjectionChangesOutput) {
  TextEncoder<double> enc(encoder_config(), 8);
  const TokenSequence t = insert_placeholder(tokenize("a drum is beating", default_vocabulary()), 2);
  for (FusionPoint f : {FusionPoint::kEarly, FusionPoint::kLate}) {
    EXPECT_NE(enc.encode(t, RowVector<double>::Zero(16), f), enc.encode(t, RowVector<double>::Ones(16), f));
  }
}

TEST(Enums, ParseRoundTrip) {
  for (AdaptationMode m : {AdaptationMode::kTextOnly, AdaptationMode::kUnimodal, AdaptationMode::kMultimodal})
    EXPECT_EQ(parse_mode(to_string(m)), m);
  for (FusionPoint f : {FusionPoint::kEarly, FusionPoint::kLate}) EXPECT_EQ(parse_fusion(to_string(f)), f);
  EXPECT_EQ(parse_mode("text"), AdaptationMode::kTextOnly);
  EXPECT_THROW(parse_mode("bimodal"), RangeError);
  EXPECT_THROW(parse_fusion("middle"), RangeError);
}

}  // namespace
}  // namespace avedit

#include "avedit/adaptation.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace avedit {
namespace {

using testing::file_bytes;
using testing::micro_config;
using testing::scratch_dir;
using testing::synth_pair;

constexpr int kBells = 2;

AdaptationConfig quick(int steps = 12, std::uint64_t seed = 3) {
  AdaptationConfig c;
  c.steps = steps;
  c.seed = seed;
  c.lr_audio = c.lr_vision = 1e-3;
  c.lr_mlp = 1e-3;
  return c;
}

GenerationOptions fast(std::uint64_t seed = 5) {
  GenerationOptions o;
  o.seed = seed;
  o.ddim_steps = 4;
  o.griffin_lim_iterations = 2;
  return o;
}

std::string weights_of(JointModel& m) {
  TensorArchive a;
  m.store(a);
  return a.serialize();
}

class Adaptation : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    base_ = new JointModel(micro_config(1));
    pair_ = new TrainingPair(synth_pair(kBells, 9000));
  }
  static void TearDownTestSuite() {
    delete base_;
    delete pair_;
  }
  static JointModel* base_;
  static TrainingPair* pair_;
};

JointModel* Adaptation::base_ = nullptr;
TrainingPair* Adaptation::pair_ = nullptr;

TEST_F(Adaptation, DeterministicForAFixedSeed) {
  AdaptedCheckpoint a = adapt(*base_, *pair_, quick());
  AdaptedCheckpoint b = adapt(*base_, *pair_, quick());
  ASSERT_EQ(a.trace.size(), 12u);
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].loss_total, b.trace[i].loss_total);
    EXPECT_EQ(a.trace[i].t_audio, b.trace[i].t_audio);
  }
  EXPECT_EQ(weights_of(a.model), weights_of(b.model));
  AdaptedCheckpoint c = adapt(*base_, *pair_, quick(12, 4));
  EXPECT_NE(weights_of(a.model), weights_of(c.model));
}

TEST_F(Adaptation, TraceIsFiniteAndTotalIsTheBranchSum) {
  const AdaptedCheckpoint a = adapt(*base_, *pair_, quick(20));
  for (const LossRecord& r : a.trace) {
    EXPECT_TRUE(std::isfinite(r.loss_total));
    EXPECT_GE(r.t_audio, 1);
    EXPECT_LE(r.t_audio, 1000);
    EXPECT_GE(r.t_vision, 1);
    EXPECT_LE(r.t_vision, 1000);
    EXPECT_NEAR(r.loss_total, r.loss_audio + r.loss_vision, 1e-6 * std::abs(r.loss_total));
  }
  EXPECT_DOUBLE_EQ(a.final_loss, mean_loss(a.trace, 0, a.trace.size()));
}

TEST_F(Adaptation, FrozenPartsAndBaseStayUntouched) {
  JointModel base = *base_;
  const std::uint64_t frozen = base.frozen_digest();
  const std::string before = weights_of(base);
  AdaptedCheckpoint a = adapt(base, *pair_, quick());
  EXPECT_EQ(a.model.frozen_digest(), frozen);
  EXPECT_EQ(weights_of(base), before);
  EXPECT_NE(weights_of(a.model), before);
}

TEST_F(Adaptation, RejectsBadConfig) {
  AdaptationConfig c = quick();
  c.steps = 0;
  EXPECT_THROW(adapt(*base_, *pair_, c), RangeError);
  c = quick();
  c.lr_mlp = 0.0;
  EXPECT_THROW(adapt(*base_, *pair_, c), RangeError);
  TrainingPair bad = *pair_;
  bad.subject_start = 9;
  EXPECT_THROW(adapt(*base_, bad, quick()), DataError);
}

TEST_F(Adaptation, EveryModeAndFusionPointTrains) {
  for (AdaptationMode mode : {AdaptationMode::kTextOnly, AdaptationMode::kUnimodal, AdaptationMode::kMultimodal})
    for (FusionPoint fusion : {FusionPoint::kEarly, FusionPoint::kLate}) {
      AdaptationConfig c = quick(4);
      c.mode = mode;
      c.fusion = fusion;
      const AdaptedCheckpoint a = adapt(*base_, *pair_, c);
      EXPECT_EQ(a.trace.size(), 4u) << to_string(mode) << "/" << to_string(fusion);
    }
}

TEST_F(Adaptation, CheckpointSaveLoadSaveIsByteIdentical) {
  const auto dir = scratch_dir("ckpt");
  AdaptedCheckpoint a = adapt(*base_, *pair_, quick(6));
  save_checkpoint(a, (dir / "a.aved").string());
  AdaptedCheckpoint b = load_checkpoint((dir / "a.aved").string());
  save_checkpoint(b, (dir / "b.aved").string());
  EXPECT_EQ(file_bytes(dir / "a.aved"), file_bytes(dir / "b.aved"));
  EXPECT_EQ(b.prompt, pair_->prompt);
  EXPECT_EQ(b.subject, a.subject);
  EXPECT_EQ(b.trace.size(), a.trace.size());
  EXPECT_EQ(b.f_audio, a.f_audio);
  EXPECT_EQ(b.model.frozen_digest(), a.model.frozen_digest());

  const Generation ga = generate(a, "church bells are ringing", fast());
  const Generation gb = generate(b, "church bells are ringing", fast());
  EXPECT_EQ(ga.audio, gb.audio);
  EXPECT_EQ(ga.image.data, gb.image.data);
}

TEST_F(Adaptation, CorruptedOrWrongFilesAreRejected) {
  const auto dir = scratch_dir("ckpt_bad");
  AdaptedCheckpoint a = adapt(*base_, *pair_, quick(2));
  save_checkpoint(a, (dir / "a.aved").string());
  std::string bytes = file_bytes(dir / "a.aved");
  bytes[0] = 'Z';
  std::ofstream(dir / "bad.aved", std::ios::binary) << bytes;
  EXPECT_THROW(load_checkpoint((dir / "bad.aved").string()), FormatError);

  JointModel base = *base_;
  save_model(base, (dir / "base.aved").string());
  EXPECT_THROW(load_checkpoint((dir / "base.aved").string()), FormatError);
  JointModel back = load_model((dir / "base.aved").string());
  EXPECT_EQ(weights_of(back), weights_of(base));
  EXPECT_EQ(back.frozen_digest(), base.frozen_digest());
  EXPECT_THROW(load_checkpoint((dir / "missing.aved").string()), DataError);
}

TEST_F(Adaptation, GenerationIsSeededAndShaped) {
  AdaptedCheckpoint a = adapt(*base_, *pair_, quick(4));
  const ModelConfig& c = a.model.config();
  const Generation g1 = generate(a, "church bells are ringing in the rain", fast(1));
  const Generation g2 = generate(a, "church bells are ringing in the rain", fast(1));
  const Generation g3 = generate(a, "church bells are ringing in the rain", fast(2));
  EXPECT_EQ(g1.audio, g2.audio);
  EXPECT_EQ(g1.image.data, g2.image.data);
  EXPECT_NE(g1.image.data, g3.image.data);
  EXPECT_EQ(static_cast<int>(g1.audio.size()), c.audio_samples);
  EXPECT_EQ(g1.image.channels(), 3);
  EXPECT_EQ(g1.image.height, c.image_size);
  EXPECT_GE(g1.image.data.minCoeff(), 0.0);
  EXPECT_LE(g1.image.data.maxCoeff(), 1.0);
  for (double s : g1.audio) ASSERT_TRUE(std::isfinite(s));
  EXPECT_EQ(g1.tokens.placeholder_position(), 1);
  EXPECT_EQ(g1.classes.count(TokenClass::kEdit), 3);
}

TEST_F(Adaptation, UnitGainsMatchNoEnhancement) {
  AdaptedCheckpoint a = adapt(*base_, *pair_, quick(4));
  GenerationOptions plain = fast(3);
  GenerationOptions unit = fast(3);
  unit.enhancement = EnhancementConfig{1.0, 1.0, {}, {}};
  const Generation g1 = generate(a, "church bells are ringing beside a crackling fireplace", plain);
  const Generation g2 = generate(a, "church bells are ringing beside a crackling fireplace", unit);
  EXPECT_EQ(g1.audio, g2.audio);
  EXPECT_EQ(g1.image.data, g2.image.data);
}

TEST_F(Adaptation, StrictSubjectMatching) {
  AdaptedCheckpoint a = initial_checkpoint(*base_, *pair_, quick());
  EXPECT_THROW(generate(a, "a dog barks", fast()), DataError);
  GenerationOptions loose = fast();
  loose.strict_subject = false;
  const Generation g = generate(a, "a dog barks", loose);
  EXPECT_EQ(g.tokens.placeholder_position(), 1);
  const TokenSequence t = edit_tokens(a, "loud church bells are ringing", true);
  EXPECT_EQ(t.placeholder_position(), 2);
}

TEST_F(Adaptation, PretrainIsDeterministicAndRecordsEveryStep) {
  PretrainConfig cfg;
  cfg.steps = 8;
  cfg.seed = 2;
  const std::vector<TrainingPair> corpus = {synth_pair(0, 1), synth_pair(1, 2)};
  JointModel m1 = *base_, m2 = *base_;
  const auto t1 = pretrain(m1, corpus, cfg);
  const auto t2 = pretrain(m2, corpus, cfg);
  ASSERT_EQ(t1.size(), 8u);
  for (std::size_t i = 0; i < t1.size(); ++i) EXPECT_EQ(t1[i].loss_total, t2[i].loss_total);
  EXPECT_EQ(weights_of(m1), weights_of(m2));
  EXPECT_THROW(pretrain(m1, {}, cfg), DataError);
}

TEST(ModelConfig, JsonRoundTripAndValidation) {
  const ModelConfig c = ModelConfig::defaults(7);
  c.validate();
  nlohmann::json j = c;
  const ModelConfig back = j.get<ModelConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(back.audio_unet.noise_skip, c.audio_unet.noise_skip);
  EXPECT_EQ(back.vision_unet.data_sd, c.vision_unet.data_sd);
  ModelConfig bad = c;
  bad.vision_patch = 3;
  EXPECT_THROW(bad.validate(), ShapeError);
  testing::micro_config().validate();
}

}  // namespace
}  // namespace avedit

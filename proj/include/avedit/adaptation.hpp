#pragma once

#include "avedit/backbones.hpp"
#include "avedit/checkpoint.hpp"
#include "avedit/codecs.hpp"
#include "avedit/conditioning.hpp"
#include "avedit/diffusion.hpp"
#include "avedit/embedders.hpp"
#include "avedit/enhancement.hpp"

#include "json.hpp"

#include <optional>
#include <string>
#include <vector>

namespace avedit {

/// Everything that fixes the shape of the joint model. Weights are derived
/// from `seed`; text encoders and codecs are never trained, so a config and
/// seed rebuild them exactly.
struct ModelConfig {
  StftConfig stft;
  int audio_samples = 32768;
  int image_size = 32;
  int audio_patch = 4;
  int vision_patch = 2;
  LatentScaling audio_scaling{-8.0, 1.25};
  LatentScaling vision_scaling{0.5, 0.08};
  UNetConfig audio_unet;
  UNetConfig vision_unet;
  TextEncoderConfig text;
  FusionConfig fusion;
  std::uint64_t seed = 0;

  /// Fills the U-Net latent shapes from the media and patch sizes.
  static ModelConfig defaults(std::uint64_t seed = 0);
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Both diffusion branches with their codecs, text encoders and the fusion
/// adapter.
class JointModel {
 public:
  JointModel() = default;
  explicit JointModel(ModelConfig config, Vocabulary vocab = default_vocabulary());

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }

  /// Rebuilds the adapter for a new mode, zero-initialized as at the start of
  /// adaptation.
  void reset_adapter(AdaptationMode mode);

  LatentTensor<float> encode_audio(const std::vector<double>& samples) const;
  LatentTensor<float> encode_image(const Planes& rgb) const;
  Planes decode_mel(const LatentTensor<float>& latent) const;
  std::vector<double> decode_audio(const LatentTensor<float>& latent, int griffin_lim_iterations) const;
  Planes decode_image(const LatentTensor<float>& latent) const;
  /// Decodes, clamps to the valid signal range and re-encodes.
  MatrixXf project_latent(Branch branch, const MatrixXf& latent) const;

  UNet<float>& unet(Branch b) { return b == Branch::kAudio ? audio_unet_ : vision_unet_; }
  TextEncoder<float>& text_encoder(Branch b) { return b == Branch::kAudio ? audio_text_ : vision_text_; }
  FusionAdapter<float>& adapter() { return adapter_; }
  const PatchCodec& codec(Branch b) const { return b == Branch::kAudio ? audio_codec_ : vision_codec_; }

  /// Trainable weights under stable names ("unet.audio.*", "unet.vision.*",
  /// "adapter.*").
  void store(TensorArchive& archive);
  void restore(const TensorArchive& archive);

  /// Digest of the frozen parts (text encoders and codecs).
  std::uint64_t frozen_digest();

 private:
  ModelConfig config_;
  Vocabulary vocab_;
  PatchCodec audio_codec_, vision_codec_;
  UNet<float> audio_unet_, vision_unet_;
  TextEncoder<float> audio_text_, vision_text_;
  FusionAdapter<float> adapter_;
};

/// One audio-visual training example.
struct TrainingPair {
  std::string id;
  std::vector<double> audio;
  Planes image;
  std::string prompt;
  int subject_start = 0;  // word index
  int subject_length = 1;

  std::vector<std::string> subject_words() const;
  TokenSequence training_tokens(const Vocabulary& vocab) const;  // with <c> before the subject
};

struct LossRecord {
  int step = 0;
  int t_audio = 0;
  int t_vision = 0;
  double loss_audio = 0.0;
  double loss_vision = 0.0;
  double loss_total = 0.0;
};

/// Adam over one parameter group.
class Adam {
 public:
  Adam() = default;
  explicit Adam(ad::ParameterList<float> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void zero_grad();
  double grad_squared_norm() const;
  /// One update with gradients multiplied by `grad_scale` (for clipping).
  void step(double lr, double grad_scale = 1.0);
  int steps_taken() const { return t_; }

 private:
  ad::ParameterList<float> params_;
  std::vector<MatrixXf> m_, v_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int t_ = 0;
};

/// Scale that brings the global gradient norm of `groups` down to `max_norm`.
double clip_scale(const std::vector<const Adam*>& groups, double max_norm);

void write_loss_trace(const std::string& path, const std::vector<LossRecord>& trace);
double mean_loss(const std::vector<LossRecord>& trace, std::size_t begin, std::size_t end);

/// Stand-in for the large-scale pretraining of the two backbones: denoising
/// on a corpus of captioned pairs with plain text conditions.
struct PretrainConfig {
  int steps = 6000;
  double lr = 3e-3;
  double final_lr = 1e-4;  // cosine decay target
  std::uint64_t seed = 0;
  void validate() const;
};

std::vector<LossRecord> pretrain(JointModel& model, const std::vector<TrainingPair>& corpus, const PretrainConfig& cfg);

struct AdaptationConfig {
  double lr_audio = 5e-5;
  double lr_vision = 5e-5;
  double lr_mlp = 1e-4;
  int steps = 300;
  int batch = 1;
  AdaptationMode mode = AdaptationMode::kMultimodal;
  FusionPoint fusion = FusionPoint::kEarly;
  std::uint64_t seed = 0;
  double clip_norm = 1.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const AdaptationConfig& c);
void from_json(const nlohmann::json& j, AdaptationConfig& c);

struct AdaptedCheckpoint {
  JointModel model;
  AdaptationConfig config;
  std::string prompt;
  std::vector<std::string> subject;
  int subject_start = 0;
  RowVector<float> f_audio, f_vision;
  std::vector<LossRecord> trace;
  double final_loss = 0.0;
};

/// Multimodal one-shot adaptation of a (pretrained) model to one pair.
/// `base` is copied; it is not modified.
AdaptedCheckpoint adapt(const JointModel& base, const TrainingPair& pair, const AdaptationConfig& cfg);

/// The unadapted model packaged like an adaptation result (zero-initialized
/// adapter, no trace), for before/after comparisons.
AdaptedCheckpoint initial_checkpoint(const JointModel& base, const TrainingPair& pair, const AdaptationConfig& cfg);

struct GenerationOptions {
  std::uint64_t seed = 0;
  int ddim_steps = 50;
  int griffin_lim_iterations = 32;
  std::optional<EnhancementConfig> enhancement;
  bool strict_subject = true;
  bool keep_attention = false;
  // Clamp each x0 estimate to the valid signal range before stepping.
  bool clip_denoised = true;
};

struct Generation {
  std::vector<double> audio;
  Planes image;
  Planes mel;
  TokenSequence tokens;
  TokenClassMap classes;
  std::vector<AttentionMap<float>> vision_attention;  // post-hook, when kept
};

/// Edit-prompt tokens with <c> placed before the checkpoint's subject.
TokenSequence edit_tokens(const AdaptedCheckpoint& ckpt, const std::string& prompt, bool strict);

Generation generate(AdaptedCheckpoint& ckpt, const std::string& prompt, const GenerationOptions& opts);

void save_checkpoint(AdaptedCheckpoint& ckpt, const std::string& path);
AdaptedCheckpoint load_checkpoint(const std::string& path);

/// Base (pretrained, unadapted) model files use the same container.
void save_model(JointModel& model, const std::string& path);
JointModel load_model(const std::string& path);

}  // namespace avedit

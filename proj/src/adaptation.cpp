#include "avedit/adaptation.hpp"

#include "avedit/rng.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace avedit {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

ModelConfig ModelConfig::defaults(std::uint64_t seed) {
  ModelConfig c;
  c.seed = seed;
  const int frames = c.stft.frames(static_cast<std::size_t>(c.audio_samples));
  c.audio_unet.channels = c.audio_patch * c.audio_patch;
  c.audio_unet.height = c.stft.mel_bins / c.audio_patch;
  c.audio_unet.width = frames / c.audio_patch;
  c.vision_unet.channels = 3 * c.vision_patch * c.vision_patch;
  c.vision_unet.height = c.image_size / c.vision_patch;
  c.vision_unet.width = c.image_size / c.vision_patch;
  for (UNetConfig* u : {&c.audio_unet, &c.vision_unet}) {
    u->base_width = 32;
    u->noise_skip = true;
    u->data_sd = 12.0;
    u->condition_width = c.text.width;
  }
  c.fusion.text_width = c.text.width;
  c.fusion.feature_dim = kFeatureDim;
  return c;
}

void ModelConfig::validate() const {
  stft.validate();
  const int frames = stft.frames(static_cast<std::size_t>(audio_samples));
  if (audio_samples < stft.fft_size) throw ShapeError("model: audio shorter than one FFT frame");
  if (audio_patch < 1 || vision_patch < 1) throw ShapeError("model: patch sizes must be positive");
  if (stft.mel_bins % audio_patch != 0 || frames % audio_patch != 0) {
    throw ShapeError("model: mel " + std::to_string(stft.mel_bins) + "x" + std::to_string(frames) +
                     " not divisible by audio patch " + std::to_string(audio_patch));
  }
  if (image_size % vision_patch != 0) throw ShapeError("model: image size not divisible by vision patch");
  if (audio_unet.channels != audio_patch * audio_patch || audio_unet.height != stft.mel_bins / audio_patch ||
      audio_unet.width != frames / audio_patch) {
    throw ShapeError("model: audio U-Net latent shape does not match the audio codec");
  }
  if (vision_unet.channels != 3 * vision_patch * vision_patch || vision_unet.height != image_size / vision_patch ||
      vision_unet.width != image_size / vision_patch) {
    throw ShapeError("model: vision U-Net latent shape does not match the vision codec");
  }
  audio_unet.validate();
  vision_unet.validate();
  if (audio_unet.condition_width != text.width || vision_unet.condition_width != text.width ||
      fusion.text_width != text.width) {
    throw ShapeError("model: text width, fusion output and U-Net condition width must agree");
  }
  if (fusion.feature_dim != kFeatureDim) throw ShapeError("model: fusion input must match the embedder width");
  if (audio_scaling.scale <= 0.0 || vision_scaling.scale <= 0.0) throw RangeError("model: latent scale must be positive");
}

namespace {

json unet_json(const UNetConfig& u) {
  return {{"channels", u.channels},     {"height", u.height},
          {"width", u.width},           {"base_width", u.base_width}, {"noise_skip", u.noise_skip}, {"data_sd", u.data_sd},
          {"channel_mult", u.channel_mult}, {"groups", u.groups},
          {"time_width", u.time_width}, {"condition_width", u.condition_width},
          {"attention_width", u.attention_width}, {"steps", u.steps}};
}

UNetConfig unet_from(const json& j) {
  UNetConfig u;
  u.channels = j.at("channels");
  u.height = j.at("height");
  u.width = j.at("width");
  u.base_width = j.at("base_width");
  u.noise_skip = j.value("noise_skip", u.noise_skip);
  u.data_sd = j.value("data_sd", u.data_sd);
  u.channel_mult = j.at("channel_mult").get<std::vector<int>>();
  u.groups = j.at("groups");
  u.time_width = j.at("time_width");
  u.condition_width = j.at("condition_width");
  u.attention_width = j.at("attention_width");
  u.steps = j.at("steps");
  return u;
}

}  // namespace

void to_json(json& j, const ModelConfig& c) {
  j = json{{"stft",
            {{"sample_rate", c.stft.sample_rate},
             {"fft_size", c.stft.fft_size},
             {"hop", c.stft.hop},
             {"window", c.stft.window},
             {"mel_bins", c.stft.mel_bins},
             {"fmin", c.stft.fmin},
             {"fmax", c.stft.fmax}}},
           {"audio_samples", c.audio_samples},
           {"image_size", c.image_size},
           {"audio_patch", c.audio_patch},
           {"vision_patch", c.vision_patch},
           {"audio_scaling", {c.audio_scaling.shift, c.audio_scaling.scale}},
           {"vision_scaling", {c.vision_scaling.shift, c.vision_scaling.scale}},
           {"audio_unet", unet_json(c.audio_unet)},
           {"vision_unet", unet_json(c.vision_unet)},
           {"text",
            {{"vocab_size", c.text.vocab_size},
             {"width", c.text.width},
             {"blocks", c.text.blocks},
             {"ff_width", c.text.ff_width},
             {"attention", c.text.attention}}},
           {"fusion",
            {{"feature_dim", c.fusion.feature_dim},
             {"hidden_width", c.fusion.hidden_width},
             {"text_width", c.fusion.text_width},
             {"mode", to_string(c.fusion.mode)}}},
           {"seed", c.seed}};
}

void from_json(const json& j, ModelConfig& c) {
  const json& s = j.at("stft");
  c.stft.sample_rate = s.at("sample_rate");
  c.stft.fft_size = s.at("fft_size");
  c.stft.hop = s.at("hop");
  c.stft.window = s.at("window");
  c.stft.mel_bins = s.at("mel_bins");
  c.stft.fmin = s.at("fmin");
  c.stft.fmax = s.at("fmax");
  c.audio_samples = j.at("audio_samples");
  c.image_size = j.at("image_size");
  c.audio_patch = j.at("audio_patch");
  c.vision_patch = j.at("vision_patch");
  c.audio_scaling = {j.at("audio_scaling").at(0), j.at("audio_scaling").at(1)};
  c.vision_scaling = {j.at("vision_scaling").at(0), j.at("vision_scaling").at(1)};
  c.audio_unet = unet_from(j.at("audio_unet"));
  c.vision_unet = unet_from(j.at("vision_unet"));
  const json& t = j.at("text");
  c.text.vocab_size = t.at("vocab_size");
  c.text.width = t.at("width");
  c.text.blocks = t.at("blocks");
  c.text.ff_width = t.at("ff_width");
  c.text.attention = t.at("attention");
  const json& f = j.at("fusion");
  c.fusion.feature_dim = f.at("feature_dim");
  c.fusion.hidden_width = f.at("hidden_width");
  c.fusion.text_width = f.at("text_width");
  c.fusion.mode = parse_mode(f.at("mode").get<std::string>());
  c.seed = j.at("seed");
}

void AdaptationConfig::validate() const {
  if (!(lr_audio > 0.0 && lr_vision > 0.0 && lr_mlp > 0.0)) throw RangeError("adapt: learning rates must be positive");
  if (steps < 1) throw RangeError("adapt: steps must be at least 1, got " + std::to_string(steps));
  if (batch < 1) throw RangeError("adapt: batch must be at least 1");
  if (!(clip_norm > 0.0)) throw RangeError("adapt: clip norm must be positive");
}

void to_json(json& j, const AdaptationConfig& c) {
  j = json{{"lr_audio", c.lr_audio}, {"lr_vision", c.lr_vision}, {"lr_mlp", c.lr_mlp},
           {"steps", c.steps},       {"batch", c.batch},         {"mode", to_string(c.mode)},
           {"fusion_point", to_string(c.fusion)}, {"seed", c.seed}, {"clip_norm", c.clip_norm}};
}

void from_json(const json& j, AdaptationConfig& c) {
  c.lr_audio = j.value("lr_audio", c.lr_audio);
  c.lr_vision = j.value("lr_vision", c.lr_vision);
  c.lr_mlp = j.value("lr_mlp", c.lr_mlp);
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  if (j.contains("fusion_point")) c.fusion = parse_fusion(j.at("fusion_point").get<std::string>());
  c.seed = j.value("seed", c.seed);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
}

void PretrainConfig::validate() const {
  if (steps < 0) throw RangeError("pretrain: negative step count");
  if (!(lr > 0.0 && final_lr > 0.0)) throw RangeError("pretrain: learning rates must be positive");
}

// ---------------------------------------------------------------------------
// Joint model

JointModel::JointModel(ModelConfig config, Vocabulary vocab) : config_(std::move(config)), vocab_(std::move(vocab)) {
  config_.text.vocab_size = vocab_.size();
  config_.validate();
  const std::uint64_t s = config_.seed;
  audio_codec_ = PatchCodec(1, config_.audio_patch, config_.audio_patch, derive_seed(s, "codec.audio"), Modality::kAudio);
  vision_codec_ =
      PatchCodec(3, config_.vision_patch, config_.vision_patch, derive_seed(s, "codec.vision"), Modality::kVision);
  audio_unet_ = UNet<float>(config_.audio_unet, derive_seed(s, "init.unet.audio"));
  vision_unet_ = UNet<float>(config_.vision_unet, derive_seed(s, "init.unet.vision"));
  audio_text_ = TextEncoder<float>(config_.text, derive_seed(s, "init.text.audio"));
  vision_text_ = TextEncoder<float>(config_.text, derive_seed(s, "init.text.vision"));
  adapter_ = FusionAdapter<float>(config_.fusion, derive_seed(s, "init.adapter"));
}

void JointModel::reset_adapter(AdaptationMode mode) {
  config_.fusion.mode = mode;
  adapter_ = FusionAdapter<float>(config_.fusion, derive_seed(config_.seed, "init.adapter"));
}

LatentTensor<float> JointModel::encode_audio(const std::vector<double>& samples) const {
  if (samples.empty()) throw DataError("audio: empty signal");
  // Clips are fitted to the model length: truncated, or zero-padded at the end.
  std::vector<double> fitted(samples);
  fitted.resize(static_cast<std::size_t>(config_.audio_samples), 0.0);
  const Planes mel = config_.audio_scaling.normalize(wav_to_mel(fitted, config_.stft));
  return audio_codec_.encode(mel).cast<float>();
}

LatentTensor<float> JointModel::encode_image(const Planes& rgb) const {
  if (rgb.channels() != 3 || rgb.height != config_.image_size || rgb.width != config_.image_size) {
    throw ShapeError("image: expected 3x" + std::to_string(config_.image_size) + "x" +
                     std::to_string(config_.image_size) + ", got " + std::to_string(rgb.channels()) + "x" +
                     std::to_string(rgb.height) + "x" + std::to_string(rgb.width));
  }
  if (!rgb.data.allFinite()) throw DataError("image: non-finite pixel");
  return vision_codec_.encode(config_.vision_scaling.normalize(rgb)).cast<float>();
}

Planes JointModel::decode_mel(const LatentTensor<float>& latent) const {
  Planes mel = config_.audio_scaling.denormalize(audio_codec_.decode(latent.cast<double>()));
  // Upper bound keeps Griffin-Lim magnitudes finite for wild latents.
  mel.data = mel.data.cwiseMax(std::log(kMelFloor)).cwiseMin(8.0);
  return mel;
}

std::vector<double> JointModel::decode_audio(const LatentTensor<float>& latent, int griffin_lim_iterations) const {
  std::vector<double> wave = mel_to_wav(decode_mel(latent), config_.stft, griffin_lim_iterations);
  for (double& s : wave) s = std::isfinite(s) ? std::clamp(s, -1.0, 1.0) : 0.0;
  return wave;
}

Planes JointModel::decode_image(const LatentTensor<float>& latent) const {
  Planes img = config_.vision_scaling.denormalize(vision_codec_.decode(latent.cast<double>()));
  img.data = img.data.cwiseMax(0.0).cwiseMin(1.0);
  return img;
}

MatrixXf JointModel::project_latent(Branch branch, const MatrixXf& latent) const {
  if (branch == Branch::kAudio) {
    const UNetConfig& c = config_.audio_unet;
    const Planes mel = decode_mel(LatentTensor<float>(latent, c.height, c.width, Modality::kAudio));
    return audio_codec_.encode(config_.audio_scaling.normalize(mel)).data.cast<float>();
  }
  const UNetConfig& c = config_.vision_unet;
  const Planes img = decode_image(LatentTensor<float>(latent, c.height, c.width, Modality::kVision));
  return vision_codec_.encode(config_.vision_scaling.normalize(img)).data.cast<float>();
}

void JointModel::store(TensorArchive& archive) {
  for (auto& [name, p] : audio_unet_.parameters()) archive.put("unet.audio." + name, p->value);
  for (auto& [name, p] : vision_unet_.parameters()) archive.put("unet.vision." + name, p->value);
  for (auto& [name, p] : adapter_.parameters()) archive.put("adapter." + name, p->value);
}

void JointModel::restore(const TensorArchive& archive) {
  auto load = [&](const std::string& prefix, ad::ParameterList<float> params) {
    for (auto& [name, p] : params) {
      MatrixXf m = archive.matrix(prefix + name);
      if (m.rows() != p->value.rows() || m.cols() != p->value.cols()) {
        throw FormatError("checkpoint: tensor '" + prefix + name + "' has shape " + std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()) + ", model expects " + std::to_string(p->value.rows()) + "x" +
                          std::to_string(p->value.cols()));
      }
      p->value = std::move(m);
    }
  };
  load("unet.audio.", audio_unet_.parameters());
  load("unet.vision.", vision_unet_.parameters());
  load("adapter.", adapter_.parameters());
}

std::uint64_t JointModel::frozen_digest() {
  std::string bytes;
  auto add = [&](const void* data, std::size_t n) { bytes.append(static_cast<const char*>(data), n); };
  for (TextEncoder<float>* enc : {&audio_text_, &vision_text_})
    for (auto& [name, p] : enc->parameters()) add(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(float));
  for (const PatchCodec* c : {&audio_codec_, &vision_codec_})
    add(c->mixing().data(), static_cast<std::size_t>(c->mixing().size()) * sizeof(double));
  return fnv1a64(bytes);
}

// ---------------------------------------------------------------------------
// Training data

std::vector<std::string> TrainingPair::subject_words() const {
  const auto words = split_words(prompt);
  if (subject_start < 0 || subject_length < 1 ||
      static_cast<std::size_t>(subject_start + subject_length) > words.size()) {
    throw DataError("sample '" + id + "': subject span [" + std::to_string(subject_start) + ", +" +
                    std::to_string(subject_length) + ") outside the " + std::to_string(words.size()) +
                    "-word prompt");
  }
  return {words.begin() + subject_start, words.begin() + subject_start + subject_length};
}

TokenSequence TrainingPair::training_tokens(const Vocabulary& vocab) const {
  subject_words();
  return insert_placeholder(tokenize(prompt, vocab), subject_start + 1);
}

void write_loss_trace(const std::string& path, const std::vector<LossRecord>& trace) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << "step,t_audio,t_vision,loss_audio,loss_vision,loss_total\n";
  char line[160];
  for (const auto& r : trace) {
    std::snprintf(line, sizeof line, "%d,%d,%d,%.9g,%.9g,%.9g\n", r.step, r.t_audio, r.t_vision, r.loss_audio,
                  r.loss_vision, r.loss_total);
    f << line;
  }
}

double mean_loss(const std::vector<LossRecord>& trace, std::size_t begin, std::size_t end) {
  end = std::min(end, trace.size());
  if (begin >= end) throw RangeError("mean_loss: empty range");
  double acc = 0.0;
  for (std::size_t i = begin; i < end; ++i) acc += trace[i].loss_total;
  return acc / static_cast<double>(end - begin);
}

// ---------------------------------------------------------------------------
// Optimizer

Adam::Adam(ad::ParameterList<float> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& [name, p] : params_) {
    m_.push_back(MatrixXf::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(MatrixXf::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p->zero_grad();
}

double Adam::grad_squared_norm() const {
  double acc = 0.0;
  for (const auto& [name, p] : params_)
    if (p->grad.size() > 0) acc += p->grad.cast<double>().squaredNorm();
  return acc;
}

void Adam::step(double lr, double grad_scale) {
  ++t_;
  const auto b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  const auto c1 = static_cast<float>(1.0 - std::pow(beta1_, t_));
  const auto c2 = static_cast<float>(1.0 - std::pow(beta2_, t_));
  const auto rate = static_cast<float>(lr), eps = static_cast<float>(eps_), scale = static_cast<float>(grad_scale);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ad::Parameter<float>& p = *params_[i].second;
    if (p.grad.size() == 0) p.zero_grad();
    const MatrixXf g = p.grad * scale;
    m_[i] = b1 * m_[i] + (1.0f - b1) * g;
    v_[i] = b2 * v_[i] + (1.0f - b2) * g.cwiseProduct(g);
    p.value.array() -= rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
  }
}

double clip_scale(const std::vector<const Adam*>& groups, double max_norm) {
  double sq = 0.0;
  for (const Adam* g : groups) sq += g->grad_squared_norm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  return norm > max_norm ? max_norm / norm : 1.0;
}

// ---------------------------------------------------------------------------
// Pretraining and adaptation

namespace {

NoiseSchedule schedule_for(const JointModel& m) {
  return linear_beta_schedule(m.config().audio_unet.steps, 1e-4, 0.02);
}

struct BranchStep {
  int t = 0;
  ad::Var<float> loss;
};

BranchStep branch_loss(ad::Tape<float>& tape, UNet<float>& unet, const MatrixXf& x0, ad::Var<float> cond, Rng& steps,
                       Rng& noise, const NoiseSchedule& sched) {
  const int t = steps.uniform_int(1, sched.steps());
  const MatrixXf eps = noise.normal_matrix<float>(x0.rows(), x0.cols());
  const MatrixXf xt = q_sample(x0, t, eps, sched);
  ad::Var<float> pred = unet.forward(tape, tape.constant(xt), t, cond);
  return {t, ad::mean_squared_error(pred, tape.constant(eps))};
}

}  // namespace

std::vector<LossRecord> pretrain(JointModel& model, const std::vector<TrainingPair>& corpus, const PretrainConfig& cfg) {
  cfg.validate();
  if (corpus.empty()) throw DataError("pretrain: empty corpus");
  const NoiseSchedule sched = schedule_for(model);
  struct Prepared {
    MatrixXf audio, vision, cond_audio, cond_vision;
  };
  std::vector<Prepared> data;
  for (const auto& pair : corpus) {
    const TokenSequence tokens = tokenize(pair.prompt, model.vocab());
    data.push_back({model.encode_audio(pair.audio).data, model.encode_image(pair.image).data,
                    model.text_encoder(Branch::kAudio).encode(tokens, std::nullopt, FusionPoint::kEarly),
                    model.text_encoder(Branch::kVision).encode(tokens, std::nullopt, FusionPoint::kEarly)});
  }
  Adam opt_audio(model.unet(Branch::kAudio).parameters());
  Adam opt_vision(model.unet(Branch::kVision).parameters());
  Rng pick(cfg.seed, "pretrain.pair"), steps(cfg.seed, "pretrain.timestep"), noise(cfg.seed, "pretrain.noise");
  std::vector<LossRecord> trace;
  for (int step = 1; step <= cfg.steps; ++step) {
    const double progress = static_cast<double>(step - 1) / std::max(1, cfg.steps);
    const double lr = cfg.final_lr + 0.5 * (cfg.lr - cfg.final_lr) * (1.0 + std::cos(std::numbers::pi * progress));
    const Prepared& d = data[static_cast<std::size_t>(pick.uniform_int(0, static_cast<int>(data.size()) - 1))];
    opt_audio.zero_grad();
    opt_vision.zero_grad();
    ad::Tape<float> tape;
    BranchStep a = branch_loss(tape, model.unet(Branch::kAudio), d.audio, tape.constant(d.cond_audio), steps, noise, sched);
    BranchStep v =
        branch_loss(tape, model.unet(Branch::kVision), d.vision, tape.constant(d.cond_vision), steps, noise, sched);
    ad::Var<float> total = ad::add(a.loss, v.loss);
    if (!std::isfinite(total.value()(0, 0))) throw NumericError("pretrain: non-finite loss at step " + std::to_string(step));
    tape.backward(total);
    const double scale = clip_scale({&opt_audio, &opt_vision}, 1.0);
    opt_audio.step(lr, scale);
    opt_vision.step(lr, scale);
    trace.push_back({step, a.t, v.t, a.loss.value()(0, 0), v.loss.value()(0, 0), total.value()(0, 0)});
  }
  return trace;
}

AdaptedCheckpoint initial_checkpoint(const JointModel& base, const TrainingPair& pair, const AdaptationConfig& cfg) {
  cfg.validate();
  AdaptedCheckpoint out;
  out.model = base;
  out.model.reset_adapter(cfg.mode);
  out.config = cfg;
  out.prompt = pair.prompt;
  out.subject = pair.subject_words();
  out.subject_start = pair.subject_start;
  pair.training_tokens(out.model.vocab());
  const Embedders& emb = Embedders::standard();
  std::vector<double> fitted(pair.audio);
  fitted.resize(static_cast<std::size_t>(base.config().audio_samples), 0.0);
  out.f_audio = emb.audio(fitted).values.cast<float>();
  out.f_vision = emb.image(pair.image).values.cast<float>();
  return out;
}

AdaptedCheckpoint adapt(const JointModel& base, const TrainingPair& pair, const AdaptationConfig& cfg) {
  AdaptedCheckpoint out = initial_checkpoint(base, pair, cfg);
  JointModel& m = out.model;
  const NoiseSchedule sched = schedule_for(m);
  const TokenSequence tokens = pair.training_tokens(m.vocab());
  const MatrixXf a0 = m.encode_audio(pair.audio).data;
  const MatrixXf v0 = m.encode_image(pair.image).data;
  Adam opt_audio(m.unet(Branch::kAudio).parameters());
  Adam opt_vision(m.unet(Branch::kVision).parameters());
  Adam opt_mlp(m.adapter().parameters());
  Rng steps(cfg.seed, "adapt.timestep"), noise(cfg.seed, "adapt.noise");
  const float inv_batch = 1.0f / static_cast<float>(cfg.batch);
  for (int step = 1; step <= cfg.steps; ++step) {
    opt_audio.zero_grad();
    opt_vision.zero_grad();
    opt_mlp.zero_grad();
    ad::Tape<float> tape;
    auto [e1, e2] = m.adapter().fuse(tape, tape.constant(out.f_audio), tape.constant(out.f_vision), true);
    ad::Var<float> cond_a = m.text_encoder(Branch::kAudio).encode(tape, tokens, e1, cfg.fusion, false);
    ad::Var<float> cond_v = m.text_encoder(Branch::kVision).encode(tape, tokens, e2, cfg.fusion, false);
    LossRecord rec;
    rec.step = step;
    ad::Var<float> loss_a, loss_v;
    for (int b = 0; b < cfg.batch; ++b) {
      BranchStep a = branch_loss(tape, m.unet(Branch::kAudio), a0, cond_a, steps, noise, sched);
      BranchStep v = branch_loss(tape, m.unet(Branch::kVision), v0, cond_v, steps, noise, sched);
      if (b == 0) {
        rec.t_audio = a.t;
        rec.t_vision = v.t;
        loss_a = a.loss;
        loss_v = v.loss;
      } else {
        loss_a = ad::add(loss_a, a.loss);
        loss_v = ad::add(loss_v, v.loss);
      }
    }
    if (cfg.batch > 1) {
      loss_a = ad::scale(loss_a, inv_batch);
      loss_v = ad::scale(loss_v, inv_batch);
    }
    ad::Var<float> total = ad::add(loss_a, loss_v);
    rec.loss_audio = loss_a.value()(0, 0);
    rec.loss_vision = loss_v.value()(0, 0);
    rec.loss_total = total.value()(0, 0);
    if (!std::isfinite(rec.loss_total)) {
      throw NumericError("adapt: non-finite loss at step " + std::to_string(step) + " (audio " +
                         std::to_string(rec.loss_audio) + ", vision " + std::to_string(rec.loss_vision) + ")");
    }
    tape.backward(total);
    const double scale = clip_scale({&opt_audio, &opt_vision, &opt_mlp}, cfg.clip_norm);
    opt_audio.step(cfg.lr_audio, scale);
    opt_vision.step(cfg.lr_vision, scale);
    opt_mlp.step(cfg.lr_mlp, scale);
    out.trace.push_back(rec);
  }
  const std::size_t n = out.trace.size();
  out.final_loss = mean_loss(out.trace, n - std::min<std::size_t>(n, 50), n);
  return out;
}

// ---------------------------------------------------------------------------
// Generation

TokenSequence edit_tokens(const AdaptedCheckpoint& ckpt, const std::string& prompt, bool strict) {
  const TokenSequence tokens = tokenize(prompt, ckpt.model.vocab());
  int pos = find_subject(tokens, ckpt.subject);
  if (pos < 0) {
    if (strict) {
      std::string subject;
      for (const auto& w : ckpt.subject) subject += (subject.empty() ? "" : " ") + w;
      throw DataError("prompt '" + prompt + "' does not contain the subject '" + subject + "'");
    }
    pos = 1;
  }
  return insert_placeholder(tokens, pos);
}

Generation generate(AdaptedCheckpoint& ckpt, const std::string& prompt, const GenerationOptions& opts) {
  if (opts.ddim_steps < 1) throw RangeError("generate: need at least one sampling step");
  JointModel& m = ckpt.model;
  const NoiseSchedule sched = schedule_for(m);
  Generation g;
  g.tokens = edit_tokens(ckpt, prompt, opts.strict_subject);
  g.classes = classify_tokens(tokenize(ckpt.prompt, m.vocab()), g.tokens);
  const auto [e1, e2] = m.adapter().fuse(ckpt.f_audio, ckpt.f_vision);
  const MatrixXf cond_a = m.text_encoder(Branch::kAudio).encode(g.tokens, e1, ckpt.config.fusion);
  const MatrixXf cond_v = m.text_encoder(Branch::kVision).encode(g.tokens, e2, ckpt.config.fusion);

  AttentionHook<float> hook;
  if (opts.enhancement) hook = make_enhancement_hook<float>(g.classes, *opts.enhancement);
  const AttentionHook<float>* hook_ptr = opts.enhancement ? &hook : nullptr;

  const UNetConfig& ca = m.config().audio_unet;
  const UNetConfig& cv = m.config().vision_unet;
  Rng ra(opts.seed, "sample.audio"), rv(opts.seed, "sample.vision");
  MatrixXf xa = ra.normal_matrix<float>(ca.channels, ca.height * ca.width);
  MatrixXf xv = rv.normal_matrix<float>(cv.channels, cv.height * cv.width);
  for (const auto& [t, t_prev] : ddim_timesteps(sched.steps(), opts.ddim_steps)) {
    const MatrixXf eps_a = m.unet(Branch::kAudio).predict(xa, t, cond_a);
    const MatrixXf eps_v =
        m.unet(Branch::kVision).predict(xv, t, cond_v, hook_ptr, opts.keep_attention ? &g.vision_attention : nullptr);
    if (opts.clip_denoised) {
      xa = ddim_step_clipped(xa, t, t_prev, eps_a, sched, [&](const MatrixXf& x0) { return m.project_latent(Branch::kAudio, x0); });
      xv = ddim_step_clipped(xv, t, t_prev, eps_v, sched, [&](const MatrixXf& x0) { return m.project_latent(Branch::kVision, x0); });
    } else {
      xa = ddim_step(xa, t, t_prev, eps_a, sched);
      xv = ddim_step(xv, t, t_prev, eps_v, sched);
    }
    if (!xa.allFinite() || !xv.allFinite()) throw NumericError("generate: non-finite latent at step " + std::to_string(t));
  }
  const LatentTensor<float> la(xa, ca.height, ca.width, Modality::kAudio);
  const LatentTensor<float> lv(xv, cv.height, cv.width, Modality::kVision);
  g.mel = m.decode_mel(la);
  g.audio = m.decode_audio(la, opts.griffin_lim_iterations);
  g.image = m.decode_image(lv);
  return g;
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::string vocab_text(const Vocabulary& v) {
  std::string s;
  for (int i = 0; i < v.size(); ++i) s += v.token(i) + "\n";
  return s;
}

Vocabulary vocab_from_text(const std::string& s) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : s) {
    if (c == '\n') {
      tokens.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return Vocabulary(std::move(tokens));
}

void put_model_meta(TensorArchive& a, JointModel& model, const char* kind) {
  a.put_text("meta/kind", kind);
  a.put_text("meta/model_config", json(model.config()).dump());
  a.put_text("meta/vocab", vocab_text(model.vocab()));
}

JointModel model_from(const TensorArchive& a) {
  ModelConfig cfg = json::parse(a.text("meta/model_config")).get<ModelConfig>();
  JointModel m(cfg, vocab_from_text(a.text("meta/vocab")));
  m.restore(a);
  return m;
}

}  // namespace

void save_model(JointModel& model, const std::string& path) {
  TensorArchive a;
  put_model_meta(a, model, "model");
  model.store(a);
  a.save(path);
}

JointModel load_model(const std::string& path) {
  return model_from(TensorArchive::load(path));
}

void save_checkpoint(AdaptedCheckpoint& ckpt, const std::string& path) {
  TensorArchive a;
  put_model_meta(a, ckpt.model, "adapted");
  a.put_text("meta/adaptation_config", json(ckpt.config).dump());
  a.put_text("meta/prompt", ckpt.prompt);
  std::string subject;
  for (const auto& w : ckpt.subject) subject += (subject.empty() ? "" : " ") + w;
  a.put_text("meta/subject", subject);
  a.put_scalar("meta/subject_start", ckpt.subject_start);
  a.put("meta/f_audio", ckpt.f_audio);
  a.put("meta/f_vision", ckpt.f_vision);
  a.put_scalar("meta/final_loss", ckpt.final_loss);
  MatrixXf trace(static_cast<Eigen::Index>(ckpt.trace.size()), 6);
  for (std::size_t i = 0; i < ckpt.trace.size(); ++i) {
    const auto& r = ckpt.trace[i];
    trace.row(static_cast<Eigen::Index>(i)) << static_cast<float>(r.step), static_cast<float>(r.t_audio),
        static_cast<float>(r.t_vision), static_cast<float>(r.loss_audio), static_cast<float>(r.loss_vision),
        static_cast<float>(r.loss_total);
  }
  a.put("meta/loss_trace", trace);
  ckpt.model.store(a);
  a.save(path);
}

AdaptedCheckpoint load_checkpoint(const std::string& path) {
  const TensorArchive a = TensorArchive::load(path);
  if (a.text("meta/kind") != "adapted") throw FormatError(path + ": not an adapted checkpoint");
  AdaptedCheckpoint c;
  c.config = json::parse(a.text("meta/adaptation_config")).get<AdaptationConfig>();
  c.model = model_from(a);
  c.prompt = a.text("meta/prompt");
  c.subject = split_words(a.text("meta/subject"));
  c.subject_start = static_cast<int>(a.scalar("meta/subject_start"));
  c.f_audio = a.matrix("meta/f_audio");
  c.f_vision = a.matrix("meta/f_vision");
  c.final_loss = a.scalar("meta/final_loss");
  const MatrixXf trace = a.matrix("meta/loss_trace");
  for (Eigen::Index i = 0; i < trace.rows(); ++i) {
    c.trace.push_back({static_cast<int>(trace(i, 0)), static_cast<int>(trace(i, 1)), static_cast<int>(trace(i, 2)),
                       trace(i, 3), trace(i, 4), trace(i, 5)});
  }
  return c;
}

}  // namespace avedit

#include "avedit/metrics.hpp"

namespace avedit {

const char* to_string(SetSource s) { return s == SetSource::kReference ? "reference" : "generated"; }

EmbeddingSet EmbeddingSet::from(const std::vector<FeatureVector>& features, SetSource source) {
  if (features.empty()) throw DataError("embedding set: no vectors");
  EmbeddingSet s;
  s.source = source;
  s.embedder = features.front().embedder;
  s.vectors.resize(static_cast<Eigen::Index>(features.size()), features.front().dim());
  for (std::size_t i = 0; i < features.size(); ++i) {
    const FeatureVector& f = features[i];
    if (f.embedder != s.embedder) {
      throw DataError("embedding set mixes embedders '" + s.embedder + "' and '" + f.embedder + "'");
    }
    if (f.dim() != s.dim()) throw ShapeError("embedding set: vectors of different widths");
    s.vectors.row(static_cast<Eigen::Index>(i)) = f.values;
  }
  s.validate();
  return s;
}

void EmbeddingSet::validate() const {
  if (vectors.rows() < 1) throw DataError("embedding set '" + embedder + "' is empty");
  if (!vectors.allFinite()) throw NumericError("embedding set '" + embedder + "' holds non-finite values");
}

GaussianStats<double> fit_gaussian(const EmbeddingSet& set, double jitter) {
  set.validate();
  if (set.size() < 2) throw DataError("fit_gaussian: need at least two vectors, got " + std::to_string(set.size()));
  GaussianStats<double> g;
  g.mean = set.vectors.colwise().mean().transpose();
  const MatrixXd centred = set.vectors.rowwise() - g.mean.transpose();
  MatrixXd cov = centred.transpose() * centred / static_cast<double>(set.size() - 1);
  g.covariance = 0.5 * (cov + cov.transpose());
  g.covariance.diagonal().array() += jitter;
  return g;
}

namespace {

void same_space(const EmbeddingSet& a, const EmbeddingSet& b, const char* what) {
  a.validate();
  b.validate();
  if (a.embedder != b.embedder) {
    throw DataError(std::string(what) + ": cannot compare embedder '" + a.embedder + "' with '" + b.embedder + "'");
  }
  if (a.dim() != b.dim()) throw ShapeError(std::string(what) + ": dimension mismatch");
}

}  // namespace

double pairwise_cosine(const EmbeddingSet& ref, const EmbeddingSet& gen) {
  same_space(ref, gen, "pairwise_cosine");
  double acc = 0.0;
  for (int i = 0; i < ref.size(); ++i)
    for (int j = 0; j < gen.size(); ++j) acc += cosine<double>(ref.vectors.row(i), gen.vectors.row(j));
  return acc / (static_cast<double>(ref.size()) * gen.size());
}

double text_alignment(const EmbeddingSet& gen, const RowVector<double>& prompt) {
  gen.validate();
  if (prompt.size() != gen.dim()) throw ShapeError("text_alignment: prompt embedding width mismatch");
  double acc = 0.0;
  for (int i = 0; i < gen.size(); ++i) acc += cosine<double>(gen.vectors.row(i), prompt);
  return acc / gen.size();
}

double text_alignment(const EmbeddingSet& gen, const EmbeddingSet& prompts) {
  same_space(gen, prompts, "text_alignment");
  if (gen.size() != prompts.size()) throw ShapeError("text_alignment: one prompt per generated item required");
  double acc = 0.0;
  for (int i = 0; i < gen.size(); ++i) acc += cosine<double>(gen.vectors.row(i), prompts.vectors.row(i));
  return acc / gen.size();
}

double avss(const EmbeddingSet& audio, const EmbeddingSet& image) {
  same_space(audio, image, "avss");
  if (audio.size() != image.size()) {
    throw ShapeError("avss: " + std::to_string(audio.size()) + " audio vs " + std::to_string(image.size()) +
                     " images");
  }
  double acc = 0.0;
  for (int i = 0; i < audio.size(); ++i) acc += cosine<double>(audio.vectors.row(i), image.vectors.row(i));
  return acc / audio.size();
}

void MediaSet::validate(const char* what) const {
  if (audio.empty()) throw DataError(std::string(what) + " set is empty");
  if (images.size() != audio.size() || prompts.size() != audio.size()) {
    throw DataError(std::string(what) + " set: audio, image and prompt counts differ");
  }
}

nlohmann::json MetricReport::to_json() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"clip_i", opt(clip_i)},       {"dino", opt(dino)},         {"clap_a", opt(clap_a)},
          {"fad", opt(fad)},             {"clip_t", opt(clip_t)},     {"clap_t", opt(clap_t)},
          {"avss", opt(avss)},           {"n_reference", n_reference}, {"n_generated", n_generated},
          {"embedder_seed", embedder_seed}};
}

MetricReport evaluate(const MediaSet& reference, const MediaSet& generated, const Embedders& emb) {
  reference.validate("reference");
  generated.validate("generated");
  std::vector<FeatureVector> ra, ri, rt, ga, gi, gt, ja, ji, jt;
  for (int i = 0; i < reference.size(); ++i) {
    ra.push_back(emb.audio(reference.audio[static_cast<std::size_t>(i)]));
    ri.push_back(emb.image(reference.images[static_cast<std::size_t>(i)]));
    rt.push_back(emb.image_texture(reference.images[static_cast<std::size_t>(i)]));
  }
  for (int i = 0; i < generated.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    ga.push_back(emb.audio(generated.audio[k]));
    gi.push_back(emb.image(generated.images[k]));
    gt.push_back(emb.image_texture(generated.images[k]));
    ja.push_back(emb.joint_audio(generated.audio[k]));
    ji.push_back(emb.joint_image(generated.images[k]));
    jt.push_back(emb.joint_text(generated.prompts[k]));
  }
  const auto ref = SetSource::kReference, gen = SetSource::kGenerated;
  MetricReport r;
  r.n_reference = reference.size();
  r.n_generated = generated.size();
  r.embedder_seed = emb.seed();
  const EmbeddingSet ref_audio = EmbeddingSet::from(ra, ref), gen_audio = EmbeddingSet::from(ga, gen);
  r.clip_i = pairwise_cosine(EmbeddingSet::from(ri, ref), EmbeddingSet::from(gi, gen));
  r.dino = pairwise_cosine(EmbeddingSet::from(rt, ref), EmbeddingSet::from(gt, gen));
  r.clap_a = pairwise_cosine(ref_audio, gen_audio);
  if (ref_audio.size() >= 2 && gen_audio.size() >= 2) {
    r.fad = frechet_distance(fit_gaussian(ref_audio), fit_gaussian(gen_audio));
  }
  const EmbeddingSet joint_audio = EmbeddingSet::from(ja, gen), joint_image = EmbeddingSet::from(ji, gen);
  const EmbeddingSet joint_text = EmbeddingSet::from(jt, gen);
  r.clip_t = text_alignment(joint_image, joint_text);
  r.clap_t = text_alignment(joint_audio, joint_text);
  r.avss = avss(joint_audio, joint_image);
  return r;
}

}  // namespace avedit

#include "avedit/embedders.hpp"

#include "avedit/rng.hpp"
#include "avedit/synth.hpp"

#include <Eigen/QR>

#include <cmath>
#include <unordered_map>

namespace avedit {

namespace {

constexpr int kBands = 16;
constexpr int kSegments = 4;
constexpr int kGrid = 4;
constexpr int kTextureGrid = 8;
constexpr int kToneCentres = 16;
constexpr double kToneWidth = 0.07;

MatrixXd gaussian_projection(std::uint64_t seed, std::string_view stream, int in, int out) {
  Rng rng(seed, stream);
  return rng.normal_matrix<double>(in, out, 1.0 / std::sqrt(static_cast<double>(in)));
}

// Rows orthonormal, so cosines between codes survive the projection.
MatrixXd orthonormal_rows(std::uint64_t seed, std::string_view stream, int in, int out) {
  Rng rng(seed, stream);
  const MatrixXd g = rng.normal_matrix<double>(out, in);
  Eigen::HouseholderQR<MatrixXd> qr(g);
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(out, in);
  return q.transpose();
}

const std::unordered_map<std::string, double>& tone_lexicon() {
  static const std::unordered_map<std::string, double> lex = [] {
    std::unordered_map<std::string, double> m;
    for (const auto& c : sound_classes())
      for (const auto& w : c.subject) m[w] = c.tone;
    m["drums"] = m.at("drum");
    m["horns"] = m.at("horn");
    m["bell"] = m.at("bells");
    m["birds"] = m.at("bird");
    return m;
  }();
  return lex;
}

void require_rgb(const Planes& rgb, int min_side) {
  if (rgb.channels() != 3) throw ShapeError("image embedder: expected 3 channels");
  if (rgb.height < min_side || rgb.width < min_side) {
    throw ShapeError("image embedder: image smaller than " + std::to_string(min_side) + " pixels per side");
  }
  if (!rgb.data.allFinite()) throw DataError("image embedder: non-finite pixel");
}

// [begin, end) of cell i when n items are split into k cells.
std::pair<int, int> cell(int i, int k, int n) {
  const int b = i * n / k;
  const int e = std::max(b + 1, (i + 1) * n / k);
  return {b, std::min(e, n)};
}

}  // namespace

Embedders::Embedders(std::uint64_t seed, StftConfig stft) : stft_(std::move(stft)), seed_(seed) {
  stft_.validate();
  if (stft_.mel_bins % kBands != 0) throw ShapeError("audio embedder: mel_bins must be a multiple of 16");
  const MatrixXd fb = mel_filterbank(stft_);
  band_log_area_ = fb.rowwise().sum().cwiseMax(1e-12).array().log().matrix().transpose();
  audio_proj_ = gaussian_projection(seed, "embed.audio", kBands * kSegments + kBands, kFeatureDim);
  image_proj_ = gaussian_projection(seed, "embed.image", 3 * kGrid * kGrid, kFeatureDim);
  texture_proj_ = gaussian_projection(seed, "embed.texture", 3 * kTextureGrid * kTextureGrid, kFeatureDim);
  joint_proj_ = orthonormal_rows(seed, "embed.joint", kToneCentres, kFeatureDim);
}

const Embedders& Embedders::standard() {
  static const Embedders e;
  return e;
}

FeatureVector Embedders::finish(const RowVector<double>& signature, const MatrixXd& projection, Modality m,
                                const char* id) {
  RowVector<double> v = signature * projection;
  const double n = v.norm();
  if (!(n > 1e-12)) {
    v.setZero();
    v(0) = 1.0;
  } else {
    v /= n;
  }
  return {std::move(v), m, id};
}

FeatureVector Embedders::audio(const std::vector<double>& samples) const {
  if (samples.empty()) throw DataError("audio embedder: empty signal");
  return audio_from_mel(wav_to_mel(samples, stft_));
}

FeatureVector Embedders::audio_from_mel(const Planes& logmel) const {
  if (logmel.channels() != 1 || logmel.height != stft_.mel_bins || logmel.width < 1) {
    throw ShapeError("audio embedder: expected a 1 x mel_bins x frames plane");
  }
  const int bins = logmel.height, frames = logmel.width;
  const int per_band = bins / kBands;
  RowVector<double> sig(kBands * kSegments + kBands);
  for (int b = 0; b < kBands; ++b) {
    std::vector<double> track(static_cast<std::size_t>(frames), 0.0);
    for (int m = b * per_band; m < (b + 1) * per_band; ++m)
      for (int f = 0; f < frames; ++f) track[static_cast<std::size_t>(f)] += (logmel.at(0, m, f) - band_log_area_(m)) / per_band;
    for (int s = 0; s < kSegments; ++s) {
      const auto [lo, hi] = cell(s, kSegments, frames);
      double acc = 0.0;
      for (int f = lo; f < hi; ++f) acc += track[static_cast<std::size_t>(f)];
      sig(b * kSegments + s) = acc / (hi - lo);
    }
    double mean = 0.0;
    for (double x : track) mean += x;
    mean /= frames;
    double var = 0.0;
    for (double x : track) var += (x - mean) * (x - mean);
    sig(kBands * kSegments + b) = std::sqrt(var / frames);
  }
  auto energy = sig.head(kBands * kSegments);
  energy.array() -= energy.mean();
  auto spread = sig.tail(kBands);
  spread.array() -= spread.mean();
  return finish(sig, audio_proj_, Modality::kAudio, embedder_id::kClapAudio);
}

FeatureVector Embedders::image(const Planes& rgb) const {
  require_rgb(rgb, kGrid);
  RowVector<double> sig(3 * kGrid * kGrid);
  for (int c = 0; c < 3; ++c)
    for (int gy = 0; gy < kGrid; ++gy)
      for (int gx = 0; gx < kGrid; ++gx) {
        const auto [y0, y1] = cell(gy, kGrid, rgb.height);
        const auto [x0, x1] = cell(gx, kGrid, rgb.width);
        double acc = 0.0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) acc += rgb.at(c, y, x);
        sig((c * kGrid + gy) * kGrid + gx) = acc / ((y1 - y0) * (x1 - x0));
      }
  sig.array() -= sig.mean();
  return finish(sig, image_proj_, Modality::kVision, embedder_id::kClipImage);
}

FeatureVector Embedders::image_texture(const Planes& rgb) const {
  require_rgb(rgb, 2 * kTextureGrid);
  const int h = rgb.height, w = rgb.width;
  MatrixXd lum(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) lum(y, x) = 0.299 * rgb.at(0, y, x) + 0.587 * rgb.at(1, y, x) + 0.114 * rgb.at(2, y, x);
  constexpr int cells = kTextureGrid * kTextureGrid;
  RowVector<double> sig(3 * cells);
  for (int gy = 0; gy < kTextureGrid; ++gy)
    for (int gx = 0; gx < kTextureGrid; ++gx) {
      const auto [y0, y1] = cell(gy, kTextureGrid, h);
      const auto [x0, x1] = cell(gx, kTextureGrid, w);
      const auto patch = lum.block(y0, x0, y1 - y0, x1 - x0);
      const double mean = patch.mean();
      const double spread = std::sqrt((patch.array() - mean).square().mean());
      const double gx_mean = (patch.rightCols(patch.cols() - 1) - patch.leftCols(patch.cols() - 1)).cwiseAbs().mean();
      const double gy_mean = (patch.bottomRows(patch.rows() - 1) - patch.topRows(patch.rows() - 1)).cwiseAbs().mean();
      const int i = gy * kTextureGrid + gx;
      sig(i) = spread;
      sig(cells + i) = gx_mean;
      sig(2 * cells + i) = gy_mean;
    }
  for (int k = 0; k < 3; ++k) sig.segment(k * cells, cells).array() -= sig.segment(k * cells, cells).mean();
  return finish(sig, texture_proj_, Modality::kVision, embedder_id::kDino);
}

double Embedders::audio_tone(const Planes& logmel) {
  const int bins = logmel.height, frames = logmel.width;
  if (bins < 2) return 0.5;
  std::vector<double> power(static_cast<std::size_t>(bins), 0.0);
  for (int m = 0; m < bins; ++m)
    for (int f = 0; f < frames; ++f) power[static_cast<std::size_t>(m)] += std::exp(2.0 * logmel.at(0, m, f));
  int peak = 0;
  for (int m = 1; m < bins; ++m)
    if (power[static_cast<std::size_t>(m)] > power[static_cast<std::size_t>(peak)]) peak = m;
  double num = 0.0, den = 0.0;
  for (int m = std::max(0, peak - 2); m <= std::min(bins - 1, peak + 2); ++m) {
    num += m * power[static_cast<std::size_t>(m)];
    den += power[static_cast<std::size_t>(m)];
  }
  return den > 0.0 ? num / den / (bins - 1) : 0.5;
}

double Embedders::image_tone(const Planes& rgb) {
  double red = 0.0, total = 0.0;
  for (int i = 0; i < rgb.data.cols(); ++i) {
    const double r = rgb.data(0, i), g = rgb.data(1, i), b = rgb.data(2, i);
    const double chroma = std::max({r, g, b}) - std::min({r, g, b});
    red += chroma * r;
    total += chroma * (r + b);
  }
  return total > 1e-12 ? std::clamp(red / total, 0.0, 1.0) : 0.5;
}

RowVector<double> Embedders::joint_code(double tone) const {
  RowVector<double> code(kToneCentres);
  for (int i = 0; i < kToneCentres; ++i) {
    const double d = tone - static_cast<double>(i) / (kToneCentres - 1);
    code(i) = std::exp(-d * d / (2.0 * kToneWidth * kToneWidth));
  }
  return code;
}

FeatureVector Embedders::joint_audio(const std::vector<double>& samples) const {
  if (samples.empty()) throw DataError("audio embedder: empty signal");
  return finish(joint_code(audio_tone(wav_to_mel(samples, stft_))), joint_proj_, Modality::kAudio,
                embedder_id::kJoint);
}

FeatureVector Embedders::joint_image(const Planes& rgb) const {
  require_rgb(rgb, 1);
  return finish(joint_code(image_tone(rgb)), joint_proj_, Modality::kVision, embedder_id::kJoint);
}

FeatureVector Embedders::joint_text(const std::string& prompt) const {
  const auto words = split_words(prompt);
  if (words.empty()) throw DataError("text embedder: empty prompt");
  const auto& lex = tone_lexicon();
  RowVector<double> acc = RowVector<double>::Zero(kToneCentres);
  for (const auto& w : words) {
    if (auto it = lex.find(w); it != lex.end()) {
      acc += joint_code(it->second);
    } else {
      Rng rng(seed_ ^ fnv1a64(w));
      acc += rng.normal_matrix<double>(1, kToneCentres, 0.1);
    }
  }
  acc /= static_cast<double>(words.size());
  return finish(acc, joint_proj_, Modality::kText, embedder_id::kJoint);
}

}  // namespace avedit

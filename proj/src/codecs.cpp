#include "avedit/codecs.hpp"

#include "avedit/rng.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <numbers>

namespace avedit {

Planes::Planes(MatrixXd values, int h, int w) : data(std::move(values)), height(h), width(w) {
  if (h < 0 || w < 0 || data.cols() != static_cast<Eigen::Index>(h) * w) {
    throw ShapeError("planes: data has " + std::to_string(data.cols()) + " columns for a " + std::to_string(h) + "x" +
                     std::to_string(w) + " grid");
  }
}

void StftConfig::validate() const {
  if (sample_rate <= 0 || fft_size < 2 || hop < 1) throw RangeError("stft: sizes must be positive");
  if (hop > fft_size) throw RangeError("stft: hop exceeds fft size");
  if (mel_bins < 1) throw RangeError("stft: need at least one mel bin");
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0)) throw RangeError("stft: need 0 <= fmin < fmax <= sr/2");
  if (window != "hann") throw RangeError("stft: unsupported window '" + window + "'");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> hann(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

std::vector<double> mel_edges_hz(const StftConfig& cfg) {
  const double lo = hz_to_mel(cfg.fmin);
  const double hi = hz_to_mel(cfg.fmax);
  std::vector<double> edges(static_cast<std::size_t>(cfg.mel_bins) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / (cfg.mel_bins + 1));
  }
  return edges;
}

}  // namespace

double mel_center_hz(const StftConfig& cfg, int bin) {
  if (bin < 0 || bin >= cfg.mel_bins) throw RangeError("mel bin out of range");
  return mel_edges_hz(cfg)[static_cast<std::size_t>(bin) + 1];
}

MatrixXd mel_filterbank(const StftConfig& cfg) {
  cfg.validate();
  const int bins = cfg.fft_size / 2 + 1;
  const auto edges = mel_edges_hz(cfg);
  MatrixXd fb = MatrixXd::Zero(cfg.mel_bins, bins);
  for (int m = 0; m < cfg.mel_bins; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)];
    const double mid = edges[static_cast<std::size_t>(m) + 1];
    const double hi = edges[static_cast<std::size_t>(m) + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
      if (f > lo && f <= mid) {
        fb(m, k) = (f - lo) / (mid - lo);
      } else if (f > mid && f < hi) {
        fb(m, k) = (hi - f) / (hi - mid);
      }
    }
  }
  return fb;
}

ComplexSpectrogram stft(const std::vector<double>& audio, const StftConfig& cfg) {
  cfg.validate();
  const int n = cfg.fft_size;
  const int frames = cfg.frames(audio.size());
  if (audio.size() < static_cast<std::size_t>(n) || frames < 1) {
    throw DataError("audio has " + std::to_string(audio.size()) + " samples, need at least " + std::to_string(n));
  }
  const auto window = hann(n);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  ComplexSpectrogram spec(n / 2 + 1, frames);
  std::vector<double> frame(static_cast<std::size_t>(n));
  std::vector<std::complex<double>> out;
  const long len = static_cast<long>(audio.size());
  for (int k = 0; k < frames; ++k) {
    const long start = static_cast<long>(k) * cfg.hop - n / 2;
    for (int i = 0; i < n; ++i) {
      const long s = start + i;
      frame[static_cast<std::size_t>(i)] =
          (s >= 0 && s < len) ? audio[static_cast<std::size_t>(s)] * window[static_cast<std::size_t>(i)] : 0.0;
    }
    fft.fwd(out, frame);
    for (int b = 0; b <= n / 2; ++b) spec(b, k) = out[static_cast<std::size_t>(b)];
  }
  return spec;
}

std::vector<double> istft(const ComplexSpectrogram& spec, const StftConfig& cfg) {
  cfg.validate();
  const int n = cfg.fft_size;
  if (spec.rows() != n / 2 + 1) throw ShapeError("istft: spectrogram has wrong bin count");
  const int frames = static_cast<int>(spec.cols());
  const long len = static_cast<long>(frames) * cfg.hop;
  const auto window = hann(n);
  std::vector<double> out(static_cast<std::size_t>(len), 0.0);
  std::vector<double> norm(static_cast<std::size_t>(len), 0.0);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> half(static_cast<std::size_t>(n / 2 + 1));
  std::vector<double> frame;
  for (int k = 0; k < frames; ++k) {
    for (int b = 0; b <= n / 2; ++b) half[static_cast<std::size_t>(b)] = spec(b, k);
    fft.inv(frame, half, n);
    const long start = static_cast<long>(k) * cfg.hop - n / 2;
    for (int i = 0; i < n; ++i) {
      const long s = start + i;
      if (s < 0 || s >= len) continue;
      const double w = window[static_cast<std::size_t>(i)];
      out[static_cast<std::size_t>(s)] += w * frame[static_cast<std::size_t>(i)];
      norm[static_cast<std::size_t>(s)] += w * w;
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = norm[i] > 1e-12 ? out[i] / norm[i] : 0.0;
  return out;
}

Planes wav_to_mel(const std::vector<double>& audio, const StftConfig& cfg) {
  for (double s : audio)
    if (!std::isfinite(s)) throw DataError("audio contains non-finite samples");
  const ComplexSpectrogram spec = stft(audio, cfg);
  const MatrixXd mel = mel_filterbank(cfg) * spec.cwiseAbs();
  const MatrixXd logmel = mel.cwiseMax(kMelFloor).array().log().matrix();
  // Plane rows are mel bins, columns are frames.
  const int frames = static_cast<int>(logmel.cols());
  MatrixXd row(1, logmel.size());
  for (int m = 0; m < cfg.mel_bins; ++m)
    for (int f = 0; f < frames; ++f) row(0, m * frames + f) = logmel(m, f);
  return Planes(std::move(row), cfg.mel_bins, frames);
}

MatrixXd mel_to_linear(const Planes& mel, const StftConfig& cfg) {
  cfg.validate();
  if (mel.channels() != 1 || mel.height != cfg.mel_bins) {
    throw ShapeError("mel plane must be 1 x " + std::to_string(cfg.mel_bins) + " x frames");
  }
  MatrixXd mags(mel.height, mel.width);
  for (int m = 0; m < mel.height; ++m)
    for (int f = 0; f < mel.width; ++f) mags(m, f) = std::exp(mel.at(0, m, f));
  const MatrixXd fb = mel_filterbank(cfg);
  const MatrixXd pinv = fb.completeOrthogonalDecomposition().pseudoInverse();
  return (pinv * mags).cwiseMax(0.0);
}

double spectral_convergence(const std::vector<double>& audio, const MatrixXd& magnitude, const StftConfig& cfg) {
  const ComplexSpectrogram spec = stft(audio, cfg);
  if (spec.rows() != magnitude.rows() || spec.cols() != magnitude.cols()) {
    throw ShapeError("spectral_convergence: magnitude shape mismatch");
  }
  // Interior bins appear twice in the full spectrum; weighting them so makes
  // this the norm Griffin-Lim provably does not increase.
  const Eigen::Index last = spec.rows() - 1;
  double num = 0.0, den = 0.0;
  for (Eigen::Index b = 0; b <= last; ++b) {
    const double w = (b == 0 || b == last) ? 1.0 : 2.0;
    for (Eigen::Index k = 0; k < spec.cols(); ++k) {
      const double diff = std::abs(spec(b, k)) - magnitude(b, k);
      num += w * diff * diff;
      den += w * magnitude(b, k) * magnitude(b, k);
    }
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

std::vector<double> griffin_lim(const MatrixXd& magnitude, const StftConfig& cfg, int iterations,
                                std::vector<double>* errors) {
  if (iterations < 0) throw RangeError("griffin_lim: negative iteration count");
  if (magnitude.rows() != cfg.fft_size / 2 + 1) throw ShapeError("griffin_lim: magnitude has wrong bin count");
  ComplexSpectrogram target = magnitude.cast<std::complex<double>>();
  std::vector<double> audio = istft(target, cfg);
  if (errors != nullptr) errors->push_back(spectral_convergence(audio, magnitude, cfg));
  for (int it = 0; it < iterations; ++it) {
    const ComplexSpectrogram spec = stft(audio, cfg);
    for (Eigen::Index k = 0; k < spec.cols(); ++k)
      for (Eigen::Index b = 0; b < spec.rows(); ++b) {
        const double a = std::abs(spec(b, k));
        const std::complex<double> phase = a > 0.0 ? spec(b, k) / a : std::complex<double>(1.0, 0.0);
        target(b, k) = magnitude(b, k) * phase;
      }
    audio = istft(target, cfg);
    if (errors != nullptr) errors->push_back(spectral_convergence(audio, magnitude, cfg));
  }
  return audio;
}

std::vector<double> mel_to_wav(const Planes& mel, const StftConfig& cfg, int iterations) {
  return griffin_lim(mel_to_linear(mel, cfg), cfg, iterations);
}

// ---------------------------------------------------------------------------
// PatchCodec

PatchCodec::PatchCodec(int channels_in, int patch_h, int patch_w, std::uint64_t seed, Modality modality)
    : channels_in_(channels_in), patch_h_(patch_h), patch_w_(patch_w), modality_(modality) {
  if (channels_in < 1 || patch_h < 1 || patch_w < 1) throw ShapeError("patch codec: sizes must be positive");
  const int c = latent_channels();
  Rng rng(seed);
  const MatrixXd g = rng.normal_matrix<double>(c, c);
  Eigen::HouseholderQR<MatrixXd> qr(g);
  MatrixXd q = qr.householderQ() * MatrixXd::Identity(c, c);
  // Fix column signs so the factorization is unique.
  const MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < c; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  mixing_ = std::move(q);
}

LatentTensor<double> PatchCodec::encode(const Planes& signal) const {
  if (signal.channels() != channels_in_) throw ShapeError("patch codec: input channel mismatch");
  if (signal.height % patch_h_ != 0 || signal.width % patch_w_ != 0) {
    throw ShapeError("patch codec: " + std::to_string(signal.height) + "x" + std::to_string(signal.width) +
                     " not divisible by patch " + std::to_string(patch_h_) + "x" + std::to_string(patch_w_));
  }
  const int lh = signal.height / patch_h_;
  const int lw = signal.width / patch_w_;
  MatrixXd gathered(latent_channels(), static_cast<Eigen::Index>(lh) * lw);
  for (int y = 0; y < lh; ++y)
    for (int x = 0; x < lw; ++x)
      for (int ci = 0; ci < channels_in_; ++ci)
        for (int py = 0; py < patch_h_; ++py)
          for (int px = 0; px < patch_w_; ++px)
            gathered((ci * patch_h_ + py) * patch_w_ + px, y * lw + x) =
                signal.at(ci, y * patch_h_ + py, x * patch_w_ + px);
  return LatentTensor<double>(mixing_ * gathered, lh, lw, modality_);
}

Planes PatchCodec::decode(const LatentTensor<double>& latent) const {
  if (latent.channels() != latent_channels()) throw ShapeError("patch codec: latent channel mismatch");
  const MatrixXd gathered = mixing_.transpose() * latent.data;
  Planes out = Planes::zeros(channels_in_, latent.height * patch_h_, latent.width * patch_w_);
  for (int y = 0; y < latent.height; ++y)
    for (int x = 0; x < latent.width; ++x)
      for (int ci = 0; ci < channels_in_; ++ci)
        for (int py = 0; py < patch_h_; ++py)
          for (int px = 0; px < patch_w_; ++px)
            out.at(ci, y * patch_h_ + py, x * patch_w_ + px) =
                gathered((ci * patch_h_ + py) * patch_w_ + px, y * latent.width + x);
  return out;
}

Planes LatentScaling::normalize(const Planes& p) const {
  return Planes(((p.data.array() - shift) / scale).matrix(), p.height, p.width);
}

Planes LatentScaling::denormalize(const Planes& p) const {
  return Planes((p.data.array() * scale + shift).matrix(), p.height, p.width);
}

}  // namespace avedit

#pragma once

#include "avedit/types.hpp"

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

namespace avedit {

/// Multi-channel 2-D signal stored as (channels x height*width), row-major
/// positions. Images use three channels in [0, 1]; a mel spectrogram is one
/// channel of mel_bins x frames.
struct Planes {
  MatrixXd data;
  int height = 0;
  int width = 0;

  Planes() = default;
  Planes(MatrixXd values, int h, int w);
  static Planes zeros(int channels, int h, int w) { return Planes(MatrixXd::Zero(channels, h * w), h, w); }

  int channels() const { return static_cast<int>(data.rows()); }
  double& at(int c, int y, int x) { return data(c, y * width + x); }
  double at(int c, int y, int x) const { return data(c, y * width + x); }
};

struct StftConfig {
  int sample_rate = 16000;
  int fft_size = 512;
  int hop = 256;
  std::string window = "hann";
  int mel_bins = 64;
  double fmin = 0.0;
  double fmax = 8000.0;

  void validate() const;
  int frames(std::size_t samples) const { return static_cast<int>(samples / static_cast<std::size_t>(hop)); }
};

/// Floor applied to mel magnitudes before the log.
inline constexpr double kMelFloor = 1e-5;

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular filters (mel_bins x fft_size/2+1) with unit peaks, centres
/// equally spaced on the HTK mel scale between fmin and fmax.
MatrixXd mel_filterbank(const StftConfig& cfg);

/// Centre frequency (Hz) of mel filter `bin`.
double mel_center_hz(const StftConfig& cfg, int bin);

using ComplexSpectrogram = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic>;

/// Frame k is centred on sample k*hop with zero padding; frames = L / hop.
/// Returns (fft_size/2+1) x frames.
ComplexSpectrogram stft(const std::vector<double>& audio, const StftConfig& cfg);

/// Least-squares overlap-add inverse of stft(); output has frames*hop samples.
std::vector<double> istft(const ComplexSpectrogram& spec, const StftConfig& cfg);

/// Log-mel magnitude spectrogram as one plane of mel_bins x frames.
Planes wav_to_mel(const std::vector<double>& audio, const StftConfig& cfg);

/// Linear magnitude estimate from a log-mel plane (pseudo-inverse, clamped >= 0).
MatrixXd mel_to_linear(const Planes& mel, const StftConfig& cfg);

/// Griffin-Lim phase recovery from a log-mel plane, zero initial phase.
std::vector<double> mel_to_wav(const Planes& mel, const StftConfig& cfg, int iterations = 32);

/// Griffin-Lim against a given linear magnitude target. The starting error
/// and the error after each iteration (|| |STFT(x)| - target || / ||target||)
/// are appended to `errors` if given.
std::vector<double> griffin_lim(const MatrixXd& magnitude, const StftConfig& cfg, int iterations,
                                std::vector<double>* errors = nullptr);

double spectral_convergence(const std::vector<double>& audio, const MatrixXd& magnitude, const StftConfig& cfg);

/// Fixed orthonormal patchify transform standing in for a latent autoencoder.
/// Each (patch_h x patch_w) patch of every input channel becomes one latent
/// column of channels_in*patch_h*patch_w entries, mixed by an orthonormal
/// matrix, so decode(encode(x)) == x and norms are preserved.
class PatchCodec {
 public:
  PatchCodec() = default;
  PatchCodec(int channels_in, int patch_h, int patch_w, std::uint64_t seed, Modality modality);

  int channels_in() const { return channels_in_; }
  int patch_h() const { return patch_h_; }
  int patch_w() const { return patch_w_; }
  int latent_channels() const { return channels_in_ * patch_h_ * patch_w_; }
  Modality modality() const { return modality_; }
  const MatrixXd& mixing() const { return mixing_; }

  LatentTensor<double> encode(const Planes& signal) const;
  Planes decode(const LatentTensor<double>& latent) const;

 private:
  int channels_in_ = 1;
  int patch_h_ = 1;
  int patch_w_ = 1;
  Modality modality_ = Modality::kVision;
  MatrixXd mixing_;
};

inline LatentTensor<double> encode_latent(const Planes& signal, const PatchCodec& codec) { return codec.encode(signal); }
inline Planes decode_latent(const LatentTensor<double>& latent, const PatchCodec& codec) { return codec.decode(latent); }

/// Affine map applied to a signal before encoding so latents are roughly
/// zero-mean, unit-scale: latent input = (signal - shift) / scale.
struct LatentScaling {
  double shift = 0.0;
  double scale = 1.0;

  Planes normalize(const Planes& p) const;
  Planes denormalize(const Planes& p) const;
};

}  // namespace avedit

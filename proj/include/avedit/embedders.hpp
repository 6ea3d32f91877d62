#pragma once

#include "avedit/codecs.hpp"
#include "avedit/conditioning.hpp"

#include <string>
#include <vector>

namespace avedit {

/// Unit-norm feature from one of the toy embedders. `embedder` names the
/// embedder so metrics never compare vectors from different spaces.
struct FeatureVector {
  RowVector<double> values;
  Modality modality = Modality::kVision;
  std::string embedder;

  int dim() const { return static_cast<int>(values.size()); }
};

inline constexpr int kFeatureDim = 64;

namespace embedder_id {
inline constexpr const char* kClipImage = "clip-i";
inline constexpr const char* kDino = "dino";
inline constexpr const char* kClapAudio = "clap-a";
inline constexpr const char* kJoint = "joint";
}  // namespace embedder_id

/// Seeded random projections of fixed signal signatures. The same seed
/// always gives the same embedders; the library default is used everywhere
/// unless a test asks for another.
class Embedders {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x0a7ed17e5eedULL;

  explicit Embedders(std::uint64_t seed = kDefaultSeed, StftConfig stft = {});
  static const Embedders& standard();

  const StftConfig& stft() const { return stft_; }
  std::uint64_t seed() const { return seed_; }

  /// Audio: band energies (filter-area normalized log-mel, 16 bands x 4
  /// segments) and per-band temporal spread. Stands in for f_A and CLAP-A.
  FeatureVector audio(const std::vector<double>& samples) const;
  FeatureVector audio_from_mel(const Planes& logmel) const;

  /// Image: per-channel means on a 4x4 grid. Stands in for f_V and CLIP-I.
  FeatureVector image(const Planes& rgb) const;

  /// Image texture: per-patch luminance spread and mean gradients on an 8x8
  /// grid. DINO analog.
  FeatureVector image_texture(const Planes& rgb) const;

  /// Joint audio/image/text space for the text-alignment metrics and AVSS.
  /// Media map to a scalar tone (mel centroid for audio, red share of the
  /// chromatic pixels for images); text maps lexicon words to the tone of
  /// their sound class.
  FeatureVector joint_audio(const std::vector<double>& samples) const;
  FeatureVector joint_image(const Planes& rgb) const;
  FeatureVector joint_text(const std::string& prompt) const;

  static double audio_tone(const Planes& logmel);
  static double image_tone(const Planes& rgb);

 private:
  RowVector<double> joint_code(double tone) const;
  static FeatureVector finish(const RowVector<double>& signature, const MatrixXd& projection, Modality m,
                              const char* id);

  StftConfig stft_;
  RowVector<double> band_log_area_;  // per mel bin
  MatrixXd audio_proj_, image_proj_, texture_proj_, joint_proj_;
  std::uint64_t seed_;
};

}  // namespace avedit

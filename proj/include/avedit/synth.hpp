#pragma once

#include "avedit/codecs.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace avedit {

/// A synthetic sounding object. `tone` in [0, 1] places the fundamental on
/// the mel axis and sets the red/blue balance of the object's colour, which
/// is what ties a clip to its frame.
struct SoundClass {
  std::string name;
  std::vector<std::string> subject;  // words of the subject phrase
  std::string prompt;                // training caption
  int subject_start = 0;             // word index of the subject in `prompt`
  double tone = 0.5;
};

const std::vector<SoundClass>& sound_classes();
int find_sound_class(const std::string& name);  // -1 when unknown

/// Per-sample nuisance parameters, drawn from the sample seed.
struct SynthVariation {
  double pitch = 1.0;      // multiplicative detune
  double amplitude = 0.4;
  double onset = 0.0;      // seconds
  double period = 6.0;     // stripe period, pixels
  double phase = 0.0;
  double centre_x = 16.0, centre_y = 16.0, radius = 11.0;
  double background = 0.35;

  static SynthVariation draw(std::uint64_t seed);
};

inline constexpr int kSynthSamples = 32768;  // 128 frames at hop 256
inline constexpr int kSynthImageSize = 32;

std::vector<double> render_audio(const SoundClass& cls, const SynthVariation& v, const StftConfig& cfg);
Planes render_image(const SoundClass& cls, const SynthVariation& v);

/// Editing prompts built from the training caption: environment changes and
/// injected sounding objects.
std::vector<std::string> edit_prompts(const std::string& caption);
std::vector<std::string> edit_prompts(const SoundClass& cls);

}  // namespace avedit

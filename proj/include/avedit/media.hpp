#pragma once

#include "avedit/codecs.hpp"

#include <string>
#include <vector>

namespace avedit {

struct Waveform {
  std::vector<double> samples;  // [-1, 1]
  int sample_rate = 16000;
};

/// 16-bit PCM mono WAV.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& wave);

/// 8-bit RGB PNG <-> 3-channel planes in [0, 1].
Planes read_png(const std::string& path);
void write_png(const std::string& path, const Planes& image);

}  // namespace avedit

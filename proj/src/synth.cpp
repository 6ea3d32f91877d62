#include "avedit/synth.hpp"

#include "avedit/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace avedit {

const std::vector<SoundClass>& sound_classes() {
  static const std::vector<SoundClass> classes = {
      {"drum", {"drum"}, "a drum is beating", 1, 0.15},
      {"horn", {"car", "horn"}, "a car horn is honking", 1, 0.35},
      {"bells", {"church", "bells"}, "church bells are ringing", 0, 0.55},
      {"bird", {"bird"}, "a bird is chirping", 1, 0.75},
      {"telephone", {"telephone"}, "a telephone is ringing", 1, 0.92},
  };
  return classes;
}

int find_sound_class(const std::string& name) {
  const auto& cs = sound_classes();
  for (std::size_t i = 0; i < cs.size(); ++i)
    if (cs[i].name == name) return static_cast<int>(i);
  return -1;
}

SynthVariation SynthVariation::draw(std::uint64_t seed) {
  Rng rng(seed);
  SynthVariation v;
  v.pitch = 1.0 + 0.02 * (2.0 * rng.uniform() - 1.0);
  v.amplitude = 0.3 + 0.2 * rng.uniform();
  v.onset = 0.1 * rng.uniform();
  v.period = 5.0 + 2.0 * rng.uniform();
  v.phase = 2.0 * std::numbers::pi * rng.uniform();
  v.centre_x = 13.0 + 6.0 * rng.uniform();
  v.centre_y = 13.0 + 6.0 * rng.uniform();
  v.radius = 10.0 + 2.0 * rng.uniform();
  v.background = 0.3 + 0.1 * rng.uniform();
  return v;
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Frequency whose mel position sits at fraction `tone` of the filter bank.
double tone_frequency(double tone, const StftConfig& cfg) {
  const double lo = hz_to_mel(cfg.fmin), hi = hz_to_mel(cfg.fmax);
  const double pos = (tone * (cfg.mel_bins - 1) + 1.0) / (cfg.mel_bins + 1.0);
  return mel_to_hz(lo + pos * (hi - lo));
}

double partial(double f, double t, double nyquist) { return f < 0.95 * nyquist ? std::sin(kTwoPi * f * t) : 0.0; }

}  // namespace

std::vector<double> render_audio(const SoundClass& cls, const SynthVariation& v, const StftConfig& cfg) {
  const double sr = cfg.sample_rate;
  const double nyq = 0.5 * sr;
  const double f0 = tone_frequency(cls.tone, cfg) * v.pitch;
  std::vector<double> out(kSynthSamples, 0.0);
  for (int n = 0; n < kSynthSamples; ++n) {
    const double t = n / sr;
    const double tt = t - v.onset;
    double s = 0.0;
    if (tt >= 0.0) {
      if (cls.name == "drum") {
        const double local = std::fmod(tt, 0.25);
        s = std::exp(-local / 0.05) * partial(f0, local, nyq);
      } else if (cls.name == "horn") {
        const double env = std::min({1.0, tt / 0.02, std::max(0.0, (1.85 - tt) / 0.02)});
        s = std::max(env, 0.0) * (partial(f0, tt, nyq) + 0.3 * partial(2 * f0, tt, nyq));
      } else if (cls.name == "bells") {
        const double local = std::fmod(tt, 0.6);
        s = std::exp(-local / 0.4) * (partial(f0, local, nyq) + 0.4 * partial(2.76 * f0, local, nyq));
      } else if (cls.name == "bird") {
        const double local = std::fmod(tt, 0.3);
        if (local < 0.12) {
          const double sweep = 0.1 * f0 * (local / 0.12 - 0.5);
          s = std::sin(std::numbers::pi * local / 0.12) * std::sin(kTwoPi * (f0 * local + 0.5 * sweep * local));
        }
      } else {
        const double local = std::fmod(tt, 0.6);
        if (local < 0.4) s = (0.6 + 0.4 * std::sin(kTwoPi * 20.0 * tt)) * partial(f0, tt, nyq);
      }
    }
    out[static_cast<std::size_t>(n)] = v.amplitude * s;
  }
  return out;
}

Planes render_image(const SoundClass& cls, const SynthVariation& v) {
  const int n = kSynthImageSize;
  Planes img = Planes::zeros(3, n, n);
  const double colour[3] = {cls.tone, 0.3, 1.0 - cls.tone};
  const double k = kTwoPi / v.period;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double dx = x + 0.5 - v.centre_x, dy = y + 0.5 - v.centre_y;
      const double r = std::sqrt(dx * dx + dy * dy);
      // Soft disc mask.
      const double mask = std::clamp(v.radius - r + 0.5, 0.0, 1.0);
      double p = 0.0;
      if (cls.name == "drum") p = std::cos(k * r + v.phase);
      else if (cls.name == "horn") p = std::cos(k * y + v.phase);
      else if (cls.name == "bells") p = std::cos(k * x + v.phase);
      else if (cls.name == "bird") p = std::cos(k * (x + y) / std::numbers::sqrt2 + v.phase);
      else p = (std::cos(k * x + v.phase) * std::cos(k * y + v.phase) >= 0.0) ? 1.0 : -1.0;
      const double shade = 0.45 + 0.45 * (0.5 + 0.5 * p);
      const double bg = v.background * (0.9 + 0.2 * y / (n - 1.0));
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = (1.0 - mask) * bg + mask * shade * colour[c];
    }
  }
  return img;
}

std::vector<std::string> edit_prompts(const std::string& caption) {
  return {
      caption + " beside a crackling fireplace",
      caption + " in the rain",
      caption + " in a large cathedral",
      caption + " on a busy street at night",
      caption + " with a dog barking",
      caption + " and a child laughing",
  };
}

std::vector<std::string> edit_prompts(const SoundClass& cls) { return edit_prompts(cls.prompt); }

}  // namespace avedit

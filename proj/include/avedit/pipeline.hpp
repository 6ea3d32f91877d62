#pragma once

#include "avedit/adaptation.hpp"
#include "avedit/metrics.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace avedit {

namespace fs = std::filesystem;

/// One sample directory: audio.wav, frames/*.png, prompt.txt (line 1 the
/// caption, line 2 "start [length]" as word indices of the subject).
struct SampleRecord {
  std::string id;
  fs::path audio_path;
  std::vector<fs::path> frame_paths;  // sorted
  std::string prompt;
  int subject_start = 0;
  int subject_length = 1;
};

/// Validates every sample under `root` and returns them sorted by id. All
/// problems are collected into one DataError, one line per sample.
std::vector<SampleRecord> ingest_dataset(const fs::path& root, int sample_rate = 16000);

/// Decodes a record into a training pair using frame `frame`.
TrainingPair load_pair(const SampleRecord& record, std::size_t frame = 0);

const SampleRecord& find_sample(const std::vector<SampleRecord>& records, const std::string& id);

/// Writes `n` samples cycling through the synthetic classes. Sample k is
/// drawn from derive_seed(seed, "data.k").
std::vector<SampleRecord> synth_dataset(const fs::path& root, std::uint64_t seed, int n);

/// Audio, image and prompt per subdirectory of `root` (dataset or edit
/// output layout), in sorted order. A `root` holding audio.wav itself is a
/// single item.
MediaSet load_media_dir(const fs::path& root);

struct SamplingConfig {
  int ddim_steps = 50;
  int griffin_lim_iterations = 32;
};

/// Everything a command needs besides its input paths.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out;
  ModelConfig model = ModelConfig::defaults();
  PretrainConfig pretrain;
  AdaptationConfig adaptation;
  bool enhance = true;
  EnhancementConfig enhancement;
  SamplingConfig sampling;

  /// Splits the master seed into the per-subsystem seeds.
  void reseed(std::uint64_t master);
  std::uint64_t sample_seed() const;
  void validate() const;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const fs::path& path);
};

/// Sidecar JSON for an artifact: the config plus command-specific inputs.
void write_sidecar(const fs::path& file, const RunConfig& cfg, const std::string& command, const nlohmann::json& inputs);

/// Writes generated media as edit_NNN/{audio.wav,image.png,prompt.txt}.
void write_generation(const fs::path& dir, const Generation& g, const std::string& prompt, int sample_rate);

/// Attention maps as a tensor archive, one entry per layer and step.
void write_attention(const fs::path& path, const std::vector<AttentionMap<float>>& maps);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

}  // namespace avedit

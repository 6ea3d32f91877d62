#include "avedit/pipeline.hpp"

#include "avedit/media.hpp"
#include "avedit/rng.hpp"
#include "avedit/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace avedit {

using nlohmann::json;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

namespace {

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories, const std::string& extension = "") {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : e.is_regular_file()) {
      if (extension.empty() || e.path().extension() == extension) out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

SampleRecord read_record(const fs::path& dir, int sample_rate) {
  SampleRecord r;
  r.id = dir.filename().string();
  r.audio_path = dir / "audio.wav";
  const fs::path prompt_path = dir / "prompt.txt";
  if (!fs::exists(prompt_path)) throw DataError("missing " + prompt_path.string());
  if (!fs::exists(r.audio_path)) throw DataError("missing " + r.audio_path.string());
  if (!fs::is_directory(dir / "frames")) throw DataError("missing " + (dir / "frames").string());
  r.frame_paths = sorted_entries(dir / "frames", false, ".png");
  if (r.frame_paths.empty()) throw DataError("no PNG frames in " + (dir / "frames").string());

  const auto lines = lines_of(read_text(prompt_path));
  if (lines.empty() || lines[0].empty()) throw DataError(prompt_path.string() + ": empty prompt");
  r.prompt = lines[0];
  if (lines.size() >= 2 && !lines[1].empty()) {
    std::istringstream span(lines[1]);
    if (!(span >> r.subject_start)) throw DataError(prompt_path.string() + ": line 2 must hold the subject word index");
    if (!(span >> r.subject_length)) r.subject_length = 1;
  }

  const Waveform w = read_wav(r.audio_path.string());
  if (w.sample_rate != sample_rate) {
    throw DataError(r.audio_path.string() + ": sample rate " + std::to_string(w.sample_rate) + ", expected " +
                    std::to_string(sample_rate));
  }
  if (w.samples.empty()) throw DataError(r.audio_path.string() + ": no samples");
  for (const auto& f : r.frame_paths) read_png(f.string());

  TrainingPair probe;
  probe.id = r.id;
  probe.prompt = r.prompt;
  probe.subject_start = r.subject_start;
  probe.subject_length = r.subject_length;
  probe.training_tokens(default_vocabulary());
  return r;
}

}  // namespace

std::vector<SampleRecord> ingest_dataset(const fs::path& root, int sample_rate) {
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");
  std::vector<SampleRecord> out;
  std::string errors;
  for (const auto& dir : sorted_entries(root, true)) {
    try {
      out.push_back(read_record(dir, sample_rate));
    } catch (const Error& e) {
      errors += "sample '" + dir.filename().string() + "': " + e.what() + "\n";
    }
  }
  if (!errors.empty()) throw DataError("dataset " + root.string() + " is invalid:\n" + errors);
  return out;
}

TrainingPair load_pair(const SampleRecord& record, std::size_t frame) {
  if (frame >= record.frame_paths.size()) throw DataError("sample '" + record.id + "' has no frame " + std::to_string(frame));
  TrainingPair p;
  p.id = record.id;
  p.audio = read_wav(record.audio_path.string()).samples;
  p.image = read_png(record.frame_paths[frame].string());
  p.prompt = record.prompt;
  p.subject_start = record.subject_start;
  p.subject_length = record.subject_length;
  return p;
}

const SampleRecord& find_sample(const std::vector<SampleRecord>& records, const std::string& id) {
  for (const auto& r : records)
    if (r.id == id) return r;
  throw DataError("no sample '" + id + "' in the dataset");
}

std::vector<SampleRecord> synth_dataset(const fs::path& root, std::uint64_t seed, int n) {
  if (n < 1) throw RangeError("synth_dataset: need at least one sample, got " + std::to_string(n));
  const StftConfig stft;
  const auto& classes = sound_classes();
  fs::create_directories(root);
  for (int k = 0; k < n; ++k) {
    const SoundClass& cls = classes[static_cast<std::size_t>(k) % classes.size()];
    const SynthVariation v = SynthVariation::draw(derive_seed(seed, "data." + std::to_string(k)));
    char id[64];
    std::snprintf(id, sizeof id, "%04d-%s", k, cls.name.c_str());
    const fs::path dir = root / id;
    fs::create_directories(dir / "frames");
    write_wav((dir / "audio.wav").string(), Waveform{render_audio(cls, v, stft), stft.sample_rate});
    write_png((dir / "frames" / "000.png").string(), render_image(cls, v));
    write_text(dir / "prompt.txt", cls.prompt + "\n" + std::to_string(cls.subject_start) + " " +
                                       std::to_string(cls.subject.size()) + "\n");
  }
  return ingest_dataset(root, stft.sample_rate);
}

MediaSet load_media_dir(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError(root.string() + " is not a directory");
  MediaSet set;
  std::vector<fs::path> dirs{root};
  if (!fs::exists(root / "audio.wav")) dirs = sorted_entries(root, true);
  for (const auto& dir : dirs) {
    const fs::path audio = dir / "audio.wav";
    if (!fs::exists(audio)) continue;
    fs::path image = dir / "image.png";
    if (!fs::exists(image)) {
      if (!fs::is_directory(dir / "frames")) throw DataError(dir.string() + ": no image.png or frames/");
      const auto frames = sorted_entries(dir / "frames", false, ".png");
      if (frames.empty()) throw DataError(dir.string() + ": no PNG frames");
      image = frames.front();
    }
    const auto lines = lines_of(read_text(dir / "prompt.txt"));
    if (lines.empty()) throw DataError((dir / "prompt.txt").string() + ": empty");
    set.audio.push_back(read_wav(audio.string()).samples);
    set.images.push_back(read_png(image.string()));
    set.prompts.push_back(lines[0]);
  }
  if (set.audio.empty()) throw DataError(root.string() + " holds no samples");
  return set;
}

// ---------------------------------------------------------------------------

void RunConfig::reseed(std::uint64_t master) {
  seed = master;
  model.seed = derive_seed(master, "init");
  pretrain.seed = derive_seed(master, "pretrain");
  adaptation.seed = derive_seed(master, "train");
}

std::uint64_t RunConfig::sample_seed() const { return derive_seed(seed, "sample"); }

void RunConfig::validate() const {
  model.validate();
  pretrain.validate();
  adaptation.validate();
  enhancement.validate();
  if (sampling.ddim_steps < 1 || sampling.ddim_steps > model.vision_unet.steps) {
    throw RangeError("sampling: ddim steps must lie in [1, T]");
  }
  if (sampling.griffin_lim_iterations < 0) throw RangeError("sampling: negative Griffin-Lim iterations");
}

json RunConfig::to_json() const {
  return {{"seed", seed},
          {"out", out},
          {"model", model},
          {"pretrain", {{"steps", pretrain.steps}, {"lr", pretrain.lr}, {"final_lr", pretrain.final_lr}, {"seed", pretrain.seed}}},
          {"adaptation", adaptation},
          {"enhancement",
           {{"enabled", enhance},
            {"alpha", enhancement.alpha},
            {"beta", enhancement.beta},
            {"layers", enhancement.layers},
            {"steps", enhancement.steps}}},
          {"sampling", {{"ddim_steps", sampling.ddim_steps}, {"griffin_lim_iterations", sampling.griffin_lim_iterations}}}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  if (j.contains("seed")) c.reseed(j.at("seed").get<std::uint64_t>());
  c.out = j.value("out", c.out);
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  if (j.contains("pretrain")) {
    const json& p = j.at("pretrain");
    c.pretrain.steps = p.value("steps", c.pretrain.steps);
    c.pretrain.lr = p.value("lr", c.pretrain.lr);
    c.pretrain.final_lr = p.value("final_lr", c.pretrain.final_lr);
    c.pretrain.seed = p.value("seed", c.pretrain.seed);
  }
  if (j.contains("adaptation")) {
    AdaptationConfig a = c.adaptation;
    avedit::from_json(j.at("adaptation"), a);
    c.adaptation = a;
  }
  if (j.contains("enhancement")) {
    const json& e = j.at("enhancement");
    c.enhance = e.value("enabled", c.enhance);
    c.enhancement.alpha = e.value("alpha", c.enhancement.alpha);
    c.enhancement.beta = e.value("beta", c.enhancement.beta);
    if (e.contains("layers")) c.enhancement.layers = e.at("layers").get<std::set<int>>();
    if (e.contains("steps")) c.enhancement.steps = e.at("steps").get<std::set<int>>();
  }
  if (j.contains("sampling")) {
    const json& s = j.at("sampling");
    c.sampling.ddim_steps = s.value("ddim_steps", c.sampling.ddim_steps);
    c.sampling.griffin_lim_iterations = s.value("griffin_lim_iterations", c.sampling.griffin_lim_iterations);
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  try {
    return from_json(json::parse(read_text(path)));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_sidecar(const fs::path& file, const RunConfig& cfg, const std::string& command, const json& inputs) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  json j = {{"command", command}, {"inputs", inputs}, {"config", cfg.to_json()}};
  write_text(file, j.dump(2) + "\n");
}

void write_generation(const fs::path& dir, const Generation& g, const std::string& prompt, int sample_rate) {
  fs::create_directories(dir);
  write_wav((dir / "audio.wav").string(), Waveform{g.audio, sample_rate});
  write_png((dir / "image.png").string(), g.image);
  write_text(dir / "prompt.txt", prompt + "\n");
}

void write_attention(const fs::path& path, const std::vector<AttentionMap<float>>& maps) {
  TensorArchive a;
  for (const auto& m : maps) a.put("layer" + std::to_string(m.layer) + ".t" + std::to_string(m.step), m.weights);
  a.save(path.string());
}

}  // namespace avedit

#pragma once

#include "avedit/pipeline.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace avedit {

/// Exit codes shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

/// Writes a synthetic dataset of `count` samples to `out`.
void cmd_synth(const fs::path& out, std::uint64_t seed, int count);

/// Trains a base model on every sample whose prompt does not contain any of
/// the `exclude` words and writes it to `model_path`.
void cmd_pretrain(const fs::path& data, const fs::path& model_path, const RunConfig& cfg,
                  const std::vector<std::string>& exclude);

/// Adapts `base` (or a freshly initialized model when empty) to one sample.
/// Writes checkpoint.aved, loss.csv and run.json under cfg.out.
AdaptedCheckpoint cmd_adapt(const fs::path& data, const std::string& sample, const std::optional<fs::path>& base,
                            const RunConfig& cfg);

/// Generates one edit_NNN directory per prompt (default: the edit prompt
/// bank around the training caption) under cfg.out.
void cmd_edit(const fs::path& checkpoint, std::vector<std::string> prompts, const RunConfig& cfg);

/// Scores generated media against reference media; writes the report to
/// `out` and returns it.
MetricReport cmd_eval(const fs::path& reference, const fs::path& generated, const fs::path& out);

/// Adaptation mode x fusion point x enhancement grid, one report per cell.
void cmd_ablate(const fs::path& data, const std::string& sample, const std::optional<fs::path>& base,
                const RunConfig& cfg, std::vector<std::string> prompts);

/// The enhancement grid swept by ablate.
const std::vector<std::pair<double, double>>& ablation_grid();

/// Parses argv and runs one command. Messages go to `out` / `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace avedit

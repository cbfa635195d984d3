#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mergexai/config.hpp"

namespace mergexai::pipeline {

// Pipeline stages in execution order. "data" is ingest or synth depending
// on the configured source.
enum class Stage { kData, kTrain, kEval, kExplain, kQuantify, kReport };

inline constexpr Stage kAllStages[] = {Stage::kData,    Stage::kTrain,    Stage::kEval,
                                       Stage::kExplain, Stage::kQuantify, Stage::kReport};

std::string_view stage_name(Stage stage);
// Accepts the stage names plus the subcommand aliases "ingest" and "synth".
std::optional<Stage> stage_from_name(std::string_view name);

struct RunOptions {
  std::filesystem::path out_dir;
  std::size_t threads = 1;
  // Skip a stage when the manifest shows the same config and input hashes
  // and its outputs are unchanged on disk.
  bool resume = true;
  bool verbose = false;
};

struct StageOutcome {
  Stage stage;
  bool reused = false;
};

// Runs one stage, reading its inputs from and writing its outputs to
// options.out_dir. Errors are rethrown with the stage name prefixed.
StageOutcome run_stage(const PipelineConfig& config, Stage stage, const RunOptions& options);

// Runs every stage up to and including `last`.
std::vector<StageOutcome> run_pipeline(const PipelineConfig& config, const RunOptions& options,
                                       Stage last = Stage::kReport);

// Markdown summary built only from the artifact files. Throws DataError
// naming the first missing file.
std::string build_report(const std::filesystem::path& artifact_dir);

// Files each stage writes, relative to the artifact directory.
std::vector<std::string> stage_outputs(const PipelineConfig& config, Stage stage);

}  // namespace mergexai::pipeline

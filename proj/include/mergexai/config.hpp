#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mergexai/ingest.hpp"
#include "mergexai/lstm.hpp"
#include "mergexai/shap.hpp"
#include "mergexai/synth.hpp"
#include "mergexai/uncertainty.hpp"

namespace mergexai {

enum class DataSource { kSynth, kCsv };
enum class ExplainSplit { kAll, kTrain, kTest };

struct RetrainCheckConfig {
  bool enabled = false;
  std::vector<double> alphas = {0.0, 50.0, 100.0};  // percent
  std::size_t epochs = 50;
  std::size_t max_demos = 20;
};

// Seeds of the named random substreams. Unset entries derive from the
// master seed.
struct SeedConfig {
  std::uint64_t master = 42;
  std::optional<std::uint64_t> split, train, synth, background;

  std::uint64_t split_seed() const;
  std::uint64_t train_seed() const;
  std::uint64_t synth_seed() const;
  std::uint64_t background_seed() const;
};

struct PipelineConfig {
  SeedConfig seeds;
  DataSource source = DataSource::kSynth;
  std::filesystem::path csv_path;
  SceneGeometry geometry;
  ExtractOptions extract;
  synth::SynthConfig synth;
  std::size_t grid_resolution = 101;
  double split_ratio = 0.8;
  lstm::TrainConfig train;
  shap::Variant shap_variant = shap::Variant::kMask;
  std::size_t background_k = 1;
  ExplainSplit explain_split = ExplainSplit::kAll;
  RetrainCheckConfig retrain_check;
  uncertainty::CurveConfig curves;
};

// Parses the JSON config text; relative paths resolve against `base_dir`.
// Throws ConfigError on any invalid or unknown entry, before any compute.
PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);

// Applies --seed-override: replaces the master seed and clears explicit
// substream seeds.
void override_seed(PipelineConfig& config, std::uint64_t seed);

// Canonical JSON echo of the resolved config (all defaults filled in).
std::string config_echo(const PipelineConfig& config);

SceneGeometry parse_geometry(const std::string& text);

}  // namespace mergexai

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mergexai/features.hpp"
#include "mergexai/ingest.hpp"

namespace mergexai::synth {

// Per-moment feature weights w(alpha) over the model inputs, piecewise
// linear between table rows. alpha is a fraction in [0, 1].
struct SaliencySchedule {
  std::vector<double> alphas;
  std::vector<std::vector<double>> weights;

  std::size_t num_features() const { return weights.empty() ? 0 : weights.front().size(); }
  std::vector<double> at(double alpha) const;
  void validate() const;  // throws ConfigError
};

SaliencySchedule constant_schedule(std::vector<double> weights);

// Moves mass from uniform at alpha = 0 to `end_weights` at alpha = 1 along
// the ease-out curve 1 - (1 - alpha)^2, so the weights change fastest early
// and settle toward the end.
SaliencySchedule converging_schedule(std::vector<double> end_weights,
                                     std::size_t table_points = 101);

struct SynthConfig {
  std::size_t n_demos = 100;
  double min_duration_s = 3.0;
  double max_duration_s = 8.0;
  SaliencySchedule schedule;
  // Observation noise per feature, indexed like FeatureVector. Applied after
  // the target is formed.
  std::vector<double> noise_std = std::vector<double>(kNumFeatures, 0.0);
  // Share of each latent deviation that is redrawn every frame, interpolated
  // linearly from start to end. Lower values mean more persistent saliency.
  double innovation_start = 0.8;
  double innovation_end = 0.05;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

// The default synthetic scenario: six inputs whose saliency converges on the
// two gap features and the lateral speed.
SynthConfig default_config(std::uint64_t seed);

// The linear generator behind the target: dx_end = intercept + sum a_i x_i
// over the six input features. Feature deviations around their drifting means
// are scaled by M * w_i(alpha) * sigma_i, and a_i * sigma_i = +-contribution,
// so the exact Shapley value of input i is proportional to w_i(alpha).
struct GeneratorModel {
  std::vector<Feature> inputs;
  std::vector<double> coefficients;
  double intercept = 0.0;
  std::vector<double> mean_start;
  std::vector<double> mean_end;
  std::vector<double> scale;

  double evaluate(const FeatureVector& x) const;
};

GeneratorModel generator_model();

std::vector<MergeDemonstration> generate_synthetic_dataset(const SynthConfig& config);

// truth.json content: schedule table, generator coefficients and config echo.
std::string truth_json(const SynthConfig& config);

}  // namespace mergexai::synth

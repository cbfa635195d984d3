#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mergexai/features.hpp"
#include "mergexai/ingest.hpp"
#include "mergexai/lstm.hpp"

namespace mergexai::shap {

// Which input features are present in a coalition. Bit i is feature i of
// the model's input list.
class CoalitionMask {
 public:
  CoalitionMask() = default;
  CoalitionMask(std::uint32_t bits, std::size_t size) : bits_(bits), size_(size) {}

  static CoalitionMask full(std::size_t size) {
    return {size >= 32 ? ~0u : (1u << size) - 1u, size};
  }
  static CoalitionMask none(std::size_t size) { return {0u, size}; }

  std::uint32_t bits() const { return bits_; }
  std::size_t size() const { return size_; }
  bool has(std::size_t i) const { return (bits_ >> i) & 1u; }
  std::size_t count() const { return static_cast<std::size_t>(__builtin_popcount(bits_)); }
  CoalitionMask with(std::size_t i) const { return {bits_ | (1u << i), size_}; }
  CoalitionMask without(std::size_t i) const { return {bits_ & ~(1u << i), size_}; }

  bool operator==(const CoalitionMask&) const = default;

 private:
  std::uint32_t bits_ = 0;
  std::size_t size_ = 0;
};

using ValueFunction = std::function<double(const CoalitionMask&)>;

inline constexpr std::size_t kMaxEnumerableFeatures = 20;

struct ShapleyResult {
  double phi0 = 0.0;         // v(empty)
  std::vector<double> phi;   // one value per feature
  std::size_t evaluations = 0;
};

// Exact Shapley values by full coalition enumeration. The value function is
// evaluated exactly once per coalition (2^M calls). Throws ConfigError when
// M exceeds kMaxEnumerableFeatures.
ShapleyResult shapley_exact(const ValueFunction& value, std::size_t num_features);

// Reference inputs standing in for absent features: K raw windows shaped
// like the model input.
struct BackgroundSet {
  std::vector<lstm::Matrix> references;
};

// Elementwise mean of the training windows ending at grid index `end`.
BackgroundSet mean_background(std::span<const AlignedDemonstration> train, std::size_t end,
                              std::size_t window, std::span<const Feature> inputs);

// K training windows ending at `end`, drawn with replacement.
BackgroundSet sampled_background(std::span<const AlignedDemonstration> train, std::size_t end,
                                 std::size_t window, std::span<const Feature> inputs,
                                 std::size_t k, std::uint64_t seed);

// Model output with absent features replaced over the whole window by the
// background, averaged over the references.
double value_mask(const lstm::NetworkParams& net, const lstm::Matrix& raw_window,
                  const CoalitionMask& mask, const BackgroundSet& background);

// Any model mapping a raw input window to a scalar.
using Predictor = std::function<double(const lstm::Matrix&)>;
double value_mask(const Predictor& model, const lstm::Matrix& raw_window,
                  const CoalitionMask& mask, const BackgroundSet& background);

// A model retrained on the present features only. The empty coalition is the
// constant training-target mean.
struct SubsetModel {
  CoalitionMask mask;
  std::vector<std::size_t> columns;
  std::optional<lstm::NetworkParams> net;
  double constant = 0.0;

  double predict(const lstm::Matrix& raw_window) const;
};

// Sub-seed for a coalition; the full coalition keeps the base seed so it
// reproduces the main model.
std::uint64_t subset_seed(std::uint64_t base_seed, const CoalitionMask& mask);

SubsetModel value_retrain(std::span<const AlignedDemonstration> train,
                          const CoalitionMask& mask, const lstm::TrainConfig& base);

// All 2^M subset models, trained once and shared read-only afterwards.
class RetrainedModels {
 public:
  static RetrainedModels build(std::span<const AlignedDemonstration> train,
                               const lstm::TrainConfig& base, std::size_t threads = 1);

  std::size_t num_features() const { return num_features_; }
  const SubsetModel& model(const CoalitionMask& mask) const;
  double value(const lstm::Matrix& raw_window, const CoalitionMask& mask) const;

 private:
  std::size_t num_features_ = 0;
  std::vector<SubsetModel> models_;  // indexed by mask bits
};

enum class Variant { kMask, kRetrain };

std::string_view variant_name(Variant v);
std::optional<Variant> variant_from_name(std::string_view name);

struct ShapAttribution {
  double phi0 = 0.0;
  std::vector<double> phi;
  double fx = 0.0;
};

inline constexpr double kLocalAccuracyTolerance = 1e-9;

ShapAttribution explain_window_mask(const lstm::NetworkParams& net, const lstm::Matrix& raw_window,
                                    const BackgroundSet& background);
ShapAttribution explain_window_mask(const Predictor& model, const lstm::Matrix& raw_window,
                                    const BackgroundSet& background);
ShapAttribution explain_window_retrain(const RetrainedModels& models,
                                       const lstm::Matrix& raw_window);

// Explains the prediction for the window ending at grid index `alpha_index`.
// The retrain variant needs `models`; the mask variant needs `background`.
// Throws NumericFault if phi0 + sum(phi) misses fx by more than 1e-9.
ShapAttribution explain_moment(const lstm::NetworkParams& net, const AlignedDemonstration& demo,
                               std::size_t alpha_index, std::size_t window,
                               std::span<const Feature> inputs, Variant variant,
                               const BackgroundSet* background,
                               const RetrainedModels* models = nullptr);

// Shapley values for every explained demo x grid moment x input feature.
struct SaliencyTensor {
  std::vector<int> demo_ids;
  std::size_t grid_size = 0;
  std::vector<Feature> features;
  Variant variant = Variant::kMask;
  std::vector<double> phi;            // [d][a][i]
  std::vector<double> feature_value;  // raw input at the moment, [d][a][i]
  std::vector<double> fx;             // [d][a]
  std::vector<double> phi0;           // [d][a]

  std::size_t num_demos() const { return demo_ids.size(); }
  std::size_t num_features() const { return features.size(); }
  std::size_t index(std::size_t d, std::size_t a, std::size_t i) const {
    return (d * grid_size + a) * features.size() + i;
  }
  double phi_at(std::size_t d, std::size_t a, std::size_t i) const { return phi[index(d, a, i)]; }
  // Samples of feature i's Shapley value across demos at moment a.
  std::vector<double> samples(std::size_t a, std::size_t i) const;
};

struct ExplainConfig {
  std::size_t window = 10;
  std::vector<Feature> inputs = default_input_features();
  Variant variant = Variant::kMask;
  std::size_t background_k = 1;  // 1 = per-moment mean window
  std::uint64_t background_seed = 0;
  std::size_t threads = 1;
};

// Explains every (demo, moment). Backgrounds come from `train`.
SaliencyTensor explain_all(const lstm::NetworkParams& net,
                           std::span<const AlignedDemonstration> demos,
                           std::span<const AlignedDemonstration> train,
                           const ExplainConfig& config,
                           const RetrainedModels* models = nullptr);

struct SaliencySummary {
  std::size_t alpha_index = 0;
  std::vector<double> mean_abs_phi;
  std::vector<double> mean_phi;
  // Per feature: (raw feature value, phi) pairs across demos.
  std::vector<std::vector<std::pair<double, double>>> pairs;
};

SaliencySummary saliency_summary(const SaliencyTensor& tensor, std::size_t alpha_index);

// saliency.csv: demo_id,alpha,feature,phi,feature_value,fx,phi0,variant
void write_saliency_csv(std::ostream& out, const SaliencyTensor& tensor);
SaliencyTensor read_saliency_csv(std::istream& in);

// summary.csv: alpha,feature,mean_abs_phi,mean_phi
void write_summary_csv(std::ostream& out, const SaliencyTensor& tensor);

}  // namespace mergexai::shap

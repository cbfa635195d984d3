#include "mergexai/synth.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "mergexai/error.hpp"
#include "mergexai/random.hpp"

namespace mergexai::synth {

namespace {

constexpr double kContribution = 2.0;  // a_i * sigma_i in metres
constexpr double kBaseDxEnd = 60.0;    // mean target at alpha = 0
constexpr double kLatentClip = 3.0;
constexpr double kBoundaryOffset = 1.75;
constexpr std::int64_t kFramePeriodMs = 100;

}  // namespace

std::vector<double> SaliencySchedule::at(double alpha) const {
  require(!alphas.empty(), "empty schedule");
  if (alpha <= alphas.front()) return weights.front();
  if (alpha >= alphas.back()) return weights.back();
  const auto it = std::upper_bound(alphas.begin(), alphas.end(), alpha);
  const std::size_t hi = static_cast<std::size_t>(it - alphas.begin());
  const std::size_t lo = hi - 1;
  const double u = (alpha - alphas[lo]) / (alphas[hi] - alphas[lo]);
  std::vector<double> w(num_features());
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = weights[lo][i] + u * (weights[hi][i] - weights[lo][i]);
  return w;
}

void SaliencySchedule::validate() const {
  if (alphas.empty() || alphas.size() != weights.size())
    throw ConfigError("schedule needs one weight row per alpha");
  if (alphas.front() != 0.0 || alphas.back() != 1.0)
    throw ConfigError("schedule alphas must span [0, 1]");
  for (std::size_t k = 1; k < alphas.size(); ++k)
    if (!(alphas[k] > alphas[k - 1])) throw ConfigError("schedule alphas must increase");
  const std::size_t m = weights.front().size();
  if (m == 0) throw ConfigError("schedule has no features");
  for (const auto& row : weights) {
    if (row.size() != m) throw ConfigError("schedule rows differ in width");
    double sum = 0.0;
    for (double w : row) {
      if (!(w >= 0.0)) throw ConfigError("schedule weights must be non-negative");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("schedule weights must sum to 1");
  }
}

SaliencySchedule constant_schedule(std::vector<double> weights) {
  return {{0.0, 1.0}, {weights, weights}};
}

SaliencySchedule converging_schedule(std::vector<double> end_weights,
                                     std::size_t table_points) {
  require(table_points >= 2, "schedule needs at least 2 points");
  const std::size_t m = end_weights.size();
  SaliencySchedule s;
  for (std::size_t k = 0; k < table_points; ++k) {
    const double alpha = static_cast<double>(k) / static_cast<double>(table_points - 1);
    const double lambda = 1.0 - (1.0 - alpha) * (1.0 - alpha);
    std::vector<double> w(m);
    for (std::size_t i = 0; i < m; ++i)
      w[i] = (1.0 - lambda) / static_cast<double>(m) + lambda * end_weights[i];
    s.alphas.push_back(alpha);
    s.weights.push_back(std::move(w));
  }
  return s;
}

void SynthConfig::validate() const {
  if (n_demos < 2) throw ConfigError("synth needs n_demos >= 2");
  if (!(min_duration_s >= 1.0) || !(max_duration_s >= min_duration_s))
    throw ConfigError("synth duration range must satisfy 1 s <= min <= max");
  schedule.validate();
  if (schedule.num_features() != default_input_features().size())
    throw ConfigError("synth schedule must weight exactly the six input features");
  if (noise_std.size() != kNumFeatures)
    throw ConfigError("noise_std needs one entry per feature");
  for (double s : noise_std)
    if (!(s >= 0.0)) throw ConfigError("noise_std entries must be non-negative");
  for (double v : {innovation_start, innovation_end})
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("innovation shares must lie in [0, 1]");
}

SynthConfig default_config(std::uint64_t seed) {
  SynthConfig c;
  c.seed = seed;
  // dx_lead, dv_lead, vx_ego, vy_ego, dx_lag, dv_lag
  c.schedule = converging_schedule({0.35, 0.05, 0.05, 0.20, 0.30, 0.05});
  return c;
}

double GeneratorModel::evaluate(const FeatureVector& x) const {
  double y = intercept;
  for (std::size_t i = 0; i < inputs.size(); ++i) y += coefficients[i] * x[inputs[i]];
  return y;
}

GeneratorModel generator_model() {
  GeneratorModel g;
  g.inputs = default_input_features();
  g.mean_start = {15.0, 1.0, 6.0, 0.1, -12.0, 0.5};
  g.mean_end = {8.0, 0.5, 10.0, 0.8, -8.0, 0.0};
  g.scale = {4.0, 1.0, 1.5, 0.3, 4.0, 1.0};
  const std::array<double, 6> sign = {+1.0, +1.0, -1.0, -1.0, -1.0, +1.0};
  double offset = 0.0;
  for (std::size_t i = 0; i < g.inputs.size(); ++i) {
    g.coefficients.push_back(sign[i] * kContribution / g.scale[i]);
    offset += g.coefficients[i] * g.mean_start[i];
  }
  g.intercept = kBaseDxEnd - offset;
  return g;
}

std::vector<MergeDemonstration> generate_synthetic_dataset(const SynthConfig& config) {
  config.validate();
  const GeneratorModel gen = generator_model();
  const std::size_t m = gen.inputs.size();
  const double m_scale = static_cast<double>(m);

  std::vector<MergeDemonstration> demos(config.n_demos);
  for (std::size_t d = 0; d < config.n_demos; ++d) {
    Rng rng(splitmix64(config.seed ^ static_cast<std::uint64_t>(d)));
    const double duration = uniform(rng, config.min_duration_s, config.max_duration_s);
    const auto n_frames = static_cast<std::size_t>(std::lround(duration * 10.0)) + 1;

    std::vector<double> persistent(m);
    for (auto& p : persistent) p = standard_normal(rng);

    MergeDemonstration& demo = demos[d];
    demo.demo_id = static_cast<int>(d);
    demo.ego_track_id = static_cast<int>(d);
    demo.frames.resize(n_frames);
    for (std::size_t k = 0; k < n_frames; ++k) {
      const double alpha = static_cast<double>(k) / static_cast<double>(n_frames - 1);
      const auto w = config.schedule.at(alpha);
      const double eta =
          config.innovation_start + (config.innovation_end - config.innovation_start) * alpha;
      FeatureVector x;
      for (std::size_t i = 0; i < m; ++i) {
        const double innovation = standard_normal(rng);
        const double z = std::clamp(std::sqrt(1.0 - eta) * persistent[i] +
                                        std::sqrt(eta) * innovation,
                                    -kLatentClip, kLatentClip);
        const double mean = gen.mean_start[i] + (gen.mean_end[i] - gen.mean_start[i]) * alpha;
        x[gen.inputs[i]] = mean + gen.scale[i] * m_scale * w[i] * z;
      }
      x[Feature::kDyBdry] = kBoundaryOffset * (1.0 - alpha);
      x[Feature::kDxEnd] = gen.evaluate(x);
      for (std::size_t f = 0; f < kNumFeatures; ++f)
        if (config.noise_std[f] > 0.0) x[f] += config.noise_std[f] * standard_normal(rng);
      demo.frames[k] = {static_cast<std::int64_t>(k) * kFramePeriodMs, x};
    }
    // Crossing frame sits exactly on the boundary.
    demo.frames.back().features[Feature::kDyBdry] = 0.0;
    demo.crossing_index = n_frames - 1;
  }
  return demos;
}

std::string truth_json(const SynthConfig& config) {
  const GeneratorModel gen = generator_model();
  nlohmann::ordered_json j;
  std::vector<std::string> names;
  for (auto f : gen.inputs) names.emplace_back(feature_name(f));
  j["inputs"] = names;
  j["output"] = std::string(feature_name(Feature::kDxEnd));
  j["schedule"]["alphas"] = config.schedule.alphas;
  j["schedule"]["weights"] = config.schedule.weights;
  j["generator"]["intercept"] = gen.intercept;
  j["generator"]["coefficients"] = gen.coefficients;
  j["generator"]["mean_start"] = gen.mean_start;
  j["generator"]["mean_end"] = gen.mean_end;
  j["generator"]["scale"] = gen.scale;
  j["config"]["n_demos"] = config.n_demos;
  j["config"]["duration_range_s"] = {config.min_duration_s, config.max_duration_s};
  j["config"]["noise_std"] = config.noise_std;
  j["config"]["innovation_start"] = config.innovation_start;
  j["config"]["innovation_end"] = config.innovation_end;
  j["config"]["seed"] = config.seed;
  return j.dump(2) + "\n";
}

}  // namespace mergexai::synth

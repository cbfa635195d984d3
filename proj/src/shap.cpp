#include "mergexai/shap.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include "mergexai/error.hpp"
#include "mergexai/parallel.hpp"
#include "mergexai/random.hpp"
#include "mergexai/text.hpp"

namespace mergexai::shap {

// ---------------------------------------------------------------------------
// Enumeration

ShapleyResult shapley_exact(const ValueFunction& value, std::size_t num_features) {
  if (num_features == 0) throw ConfigError("shapley_exact needs at least one feature");
  if (num_features > kMaxEnumerableFeatures)
    throw ConfigError("exact Shapley enumeration is limited to " +
                      std::to_string(kMaxEnumerableFeatures) + " features, got " +
                      std::to_string(num_features));
  const std::size_t m = num_features;
  const std::uint32_t n_coalitions = 1u << m;

  std::vector<double> v(n_coalitions);
  for (std::uint32_t bits = 0; bits < n_coalitions; ++bits) v[bits] = value(CoalitionMask(bits, m));

  // Coalition weight |S|!(M-|S|-1)!/M! = 1 / (M * C(M-1, |S|)).
  std::vector<double> weight(m);
  double binom = 1.0;
  for (std::size_t k = 0; k < m; ++k) {
    weight[k] = 1.0 / (static_cast<double>(m) * binom);
    binom = binom * static_cast<double>(m - 1 - k) / static_cast<double>(k + 1);
  }

  ShapleyResult r;
  r.phi0 = v[0];
  r.phi.assign(m, 0.0);
  r.evaluations = n_coalitions;
  for (std::size_t i = 0; i < m; ++i) {
    const std::uint32_t bit = 1u << i;
    double acc = 0.0;
    for (std::uint32_t s = 0; s < n_coalitions; ++s) {
      if (s & bit) continue;
      acc += weight[static_cast<std::size_t>(__builtin_popcount(s))] * (v[s | bit] - v[s]);
    }
    r.phi[i] = acc;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Masking value function

BackgroundSet mean_background(std::span<const AlignedDemonstration> train, std::size_t end,
                              std::size_t window, std::span<const Feature> inputs) {
  if (train.empty()) throw DataError("background needs at least one training demonstration");
  lstm::Matrix acc = lstm::Matrix::Zero(static_cast<Eigen::Index>(window),
                                        static_cast<Eigen::Index>(inputs.size()));
  for (const auto& d : train) acc += lstm::raw_window(d, end, window, inputs);
  acc /= static_cast<double>(train.size());
  return {{std::move(acc)}};
}

BackgroundSet sampled_background(std::span<const AlignedDemonstration> train, std::size_t end,
                                 std::size_t window, std::span<const Feature> inputs,
                                 std::size_t k, std::uint64_t seed) {
  if (train.empty()) throw DataError("background needs at least one training demonstration");
  require(k >= 1, "background needs K >= 1");
  Rng rng(splitmix64(seed ^ static_cast<std::uint64_t>(end)));
  BackgroundSet bg;
  for (std::size_t r = 0; r < k; ++r) {
    const auto& d = train[static_cast<std::size_t>(uniform_index(rng, train.size()))];
    bg.references.push_back(lstm::raw_window(d, end, window, inputs));
  }
  return bg;
}

double value_mask(const lstm::NetworkParams& net, const lstm::Matrix& raw_window,
                  const CoalitionMask& mask, const BackgroundSet& background) {
  return value_mask([&net](const lstm::Matrix& w) { return lstm::predict_raw(net, w); },
                    raw_window, mask, background);
}

double value_mask(const Predictor& model, const lstm::Matrix& raw_window,
                  const CoalitionMask& mask, const BackgroundSet& background) {
  require(!background.references.empty(), "empty background set");
  require(mask.size() == static_cast<std::size_t>(raw_window.cols()),
          "mask size does not match the window width");
  double total = 0.0;
  lstm::Matrix composite(raw_window.rows(), raw_window.cols());
  for (const auto& ref : background.references) {
    require(ref.rows() == raw_window.rows() && ref.cols() == raw_window.cols(),
            "background window shape mismatch");
    for (Eigen::Index c = 0; c < raw_window.cols(); ++c)
      composite.col(c) = mask.has(static_cast<std::size_t>(c)) ? raw_window.col(c) : ref.col(c);
    total += model(composite);
  }
  return total / static_cast<double>(background.references.size());
}

// ---------------------------------------------------------------------------
// Retraining value function

double SubsetModel::predict(const lstm::Matrix& raw_window) const {
  if (!net) return constant;
  lstm::Matrix sub(raw_window.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c)
    sub.col(static_cast<Eigen::Index>(c)) = raw_window.col(static_cast<Eigen::Index>(columns[c]));
  return lstm::predict_raw(*net, sub);
}

std::uint64_t subset_seed(std::uint64_t base_seed, const CoalitionMask& mask) {
  if (mask == CoalitionMask::full(mask.size())) return base_seed;
  return splitmix64(base_seed ^ (0x5bd1e995ULL * (mask.bits() + 1)));
}

SubsetModel value_retrain(std::span<const AlignedDemonstration> train, const CoalitionMask& mask,
                          const lstm::TrainConfig& base) {
  require(mask.size() == base.inputs.size(), "mask size does not match the input list");
  if (train.empty()) throw DataError("retraining needs training demonstrations");
  SubsetModel m;
  m.mask = mask;
  if (mask.count() == 0) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& d : train)
      for (const auto& fv : d.grid) {
        sum += fv[base.output];
        ++n;
      }
    m.constant = sum / static_cast<double>(n);
    return m;
  }
  lstm::TrainConfig cfg = base;
  cfg.inputs.clear();
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask.has(i)) {
      m.columns.push_back(i);
      cfg.inputs.push_back(base.inputs[i]);
    }
  cfg.dims.input = cfg.inputs.size();
  cfg.seed = subset_seed(base.seed, mask);
  m.net = lstm::train(train, cfg).net;
  return m;
}

RetrainedModels RetrainedModels::build(std::span<const AlignedDemonstration> train,
                                       const lstm::TrainConfig& base, std::size_t threads) {
  const std::size_t m = base.inputs.size();
  if (m > kMaxEnumerableFeatures) throw ConfigError("too many features to retrain every subset");
  RetrainedModels out;
  out.num_features_ = m;
  out.models_.resize(std::size_t{1} << m);
  lstm::TrainConfig inner = base;
  inner.threads = 1;
  parallel_for(out.models_.size(), threads, [&](std::size_t bits) {
    out.models_[bits] =
        value_retrain(train, CoalitionMask(static_cast<std::uint32_t>(bits), m), inner);
  });
  return out;
}

const SubsetModel& RetrainedModels::model(const CoalitionMask& mask) const {
  require(mask.size() == num_features_, "mask size does not match the retrained models");
  return models_.at(mask.bits());
}

double RetrainedModels::value(const lstm::Matrix& raw_window, const CoalitionMask& mask) const {
  return model(mask).predict(raw_window);
}

// ---------------------------------------------------------------------------
// Explanations

std::string_view variant_name(Variant v) { return v == Variant::kMask ? "mask" : "retrain"; }

std::optional<Variant> variant_from_name(std::string_view name) {
  if (name == "mask") return Variant::kMask;
  if (name == "retrain") return Variant::kRetrain;
  return std::nullopt;
}

namespace {

ShapAttribution to_attribution(const ShapleyResult& r, double fx) {
  return {r.phi0, r.phi, fx};
}

void check_local_accuracy(const ShapAttribution& a) {
  double sum = a.phi0;
  for (double p : a.phi) sum += p;
  if (!(std::abs(sum - a.fx) < kLocalAccuracyTolerance))
    throw NumericFault("local accuracy violated: phi0 + sum(phi) - f(x) = " +
                       std::to_string(sum - a.fx));
}

}  // namespace

ShapAttribution explain_window_mask(const lstm::NetworkParams& net, const lstm::Matrix& raw_window,
                                    const BackgroundSet& background) {
  return explain_window_mask([&net](const lstm::Matrix& w) { return lstm::predict_raw(net, w); },
                             raw_window, background);
}

ShapAttribution explain_window_mask(const Predictor& model, const lstm::Matrix& raw_window,
                                    const BackgroundSet& background) {
  const auto m = static_cast<std::size_t>(raw_window.cols());
  double fx = 0.0;
  const auto r = shapley_exact(
      [&](const CoalitionMask& mask) {
        const double v = value_mask(model, raw_window, mask, background);
        if (mask == CoalitionMask::full(m)) fx = v;
        return v;
      },
      m);
  return to_attribution(r, fx);
}

ShapAttribution explain_window_retrain(const RetrainedModels& models,
                                       const lstm::Matrix& raw_window) {
  const std::size_t m = models.num_features();
  double fx = 0.0;
  const auto r = shapley_exact(
      [&](const CoalitionMask& mask) {
        const double v = models.value(raw_window, mask);
        if (mask == CoalitionMask::full(m)) fx = v;
        return v;
      },
      m);
  return to_attribution(r, fx);
}

ShapAttribution explain_moment(const lstm::NetworkParams& net, const AlignedDemonstration& demo,
                               std::size_t alpha_index, std::size_t window,
                               std::span<const Feature> inputs, Variant variant,
                               const BackgroundSet* background, const RetrainedModels* models) {
  require(alpha_index < demo.grid.size(), "alpha index outside the grid");
  const lstm::Matrix raw = lstm::raw_window(demo, alpha_index, window, inputs);
  ShapAttribution a;
  if (variant == Variant::kMask) {
    require(background != nullptr, "mask variant needs a background set");
    a = explain_window_mask(net, raw, *background);
  } else {
    require(models != nullptr, "retrain variant needs retrained subset models");
    a = explain_window_retrain(*models, raw);
  }
  check_local_accuracy(a);
  return a;
}

std::vector<double> SaliencyTensor::samples(std::size_t a, std::size_t i) const {
  std::vector<double> out(num_demos());
  for (std::size_t d = 0; d < num_demos(); ++d) out[d] = phi_at(d, a, i);
  return out;
}

SaliencyTensor explain_all(const lstm::NetworkParams& net,
                           std::span<const AlignedDemonstration> demos,
                           std::span<const AlignedDemonstration> train, const ExplainConfig& config,
                           const RetrainedModels* models) {
  if (demos.empty()) throw DataError("no demonstrations to explain");
  const std::size_t grid = demos.front().grid.size();
  const std::size_t m = config.inputs.size();
  for (const auto& d : demos)
    if (d.grid.size() != grid) throw DataError("demonstrations have different grid sizes");

  std::vector<BackgroundSet> backgrounds;
  if (config.variant == Variant::kMask) {
    backgrounds.reserve(grid);
    for (std::size_t a = 0; a < grid; ++a)
      backgrounds.push_back(config.background_k <= 1
                                ? mean_background(train, a, config.window, config.inputs)
                                : sampled_background(train, a, config.window, config.inputs,
                                                     config.background_k, config.background_seed));
  }

  SaliencyTensor t;
  t.grid_size = grid;
  t.features = config.inputs;
  t.variant = config.variant;
  for (const auto& d : demos) t.demo_ids.push_back(d.demo_id);
  t.phi.assign(demos.size() * grid * m, 0.0);
  t.feature_value.assign(demos.size() * grid * m, 0.0);
  t.fx.assign(demos.size() * grid, 0.0);
  t.phi0.assign(demos.size() * grid, 0.0);

  parallel_for(demos.size(), config.threads, [&](std::size_t d) {
    for (std::size_t a = 0; a < grid; ++a) {
      const ShapAttribution attr =
          explain_moment(net, demos[d], a, config.window, config.inputs, config.variant,
                         backgrounds.empty() ? nullptr : &backgrounds[a], models);
      for (std::size_t i = 0; i < m; ++i) {
        t.phi[t.index(d, a, i)] = attr.phi[i];
        t.feature_value[t.index(d, a, i)] = demos[d].grid[a][config.inputs[i]];
      }
      t.fx[d * grid + a] = attr.fx;
      t.phi0[d * grid + a] = attr.phi0;
    }
  });
  return t;
}

SaliencySummary saliency_summary(const SaliencyTensor& tensor, std::size_t alpha_index) {
  require(alpha_index < tensor.grid_size, "alpha index outside the grid");
  require(tensor.num_demos() > 0, "empty saliency tensor");
  const std::size_t m = tensor.num_features();
  SaliencySummary s;
  s.alpha_index = alpha_index;
  s.mean_abs_phi.assign(m, 0.0);
  s.mean_phi.assign(m, 0.0);
  s.pairs.assign(m, {});
  for (std::size_t d = 0; d < tensor.num_demos(); ++d)
    for (std::size_t i = 0; i < m; ++i) {
      const double phi = tensor.phi_at(d, alpha_index, i);
      s.mean_abs_phi[i] += std::abs(phi);
      s.mean_phi[i] += phi;
      s.pairs[i].emplace_back(tensor.feature_value[tensor.index(d, alpha_index, i)], phi);
    }
  const double n = static_cast<double>(tensor.num_demos());
  for (std::size_t i = 0; i < m; ++i) {
    s.mean_abs_phi[i] /= n;
    s.mean_phi[i] /= n;
  }
  return s;
}

// ---------------------------------------------------------------------------
// CSV

void write_saliency_csv(std::ostream& out, const SaliencyTensor& t) {
  out << "demo_id,alpha,feature,phi,feature_value,fx,phi0,variant\n";
  const auto variant = variant_name(t.variant);
  for (std::size_t d = 0; d < t.num_demos(); ++d)
    for (std::size_t a = 0; a < t.grid_size; ++a) {
      const std::string alpha = text::format_double(grid_alpha(a, t.grid_size));
      const std::string fx = text::format_double(t.fx[d * t.grid_size + a]);
      const std::string phi0 = text::format_double(t.phi0[d * t.grid_size + a]);
      for (std::size_t i = 0; i < t.num_features(); ++i)
        out << t.demo_ids[d] << ',' << alpha << ',' << feature_name(t.features[i]) << ','
            << text::format_double(t.phi[t.index(d, a, i)]) << ','
            << text::format_double(t.feature_value[t.index(d, a, i)]) << ',' << fx << ','
            << phi0 << ',' << variant << '\n';
    }
}

SaliencyTensor read_saliency_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) ||
      text::trim(line) != "demo_id,alpha,feature,phi,feature_value,fx,phi0,variant")
    throw ParseError(1, "unexpected saliency.csv header");

  struct Row {
    int demo;
    double alpha;
    Feature feature;
    double phi, value, fx, phi0;
  };
  std::vector<Row> rows;
  std::optional<Variant> variant;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (text::trim(line).empty()) continue;
    const auto f = text::split(text::trim(line));
    if (f.size() != 8) throw ParseError(row_no, "wrong field count");
    const auto demo = text::parse_number<int>(f[0]);
    const auto feat = feature_from_name(f[2]);
    const auto var = variant_from_name(f[7]);
    std::array<std::optional<double>, 5> nums = {
        text::parse_number<double>(f[1]), text::parse_number<double>(f[3]),
        text::parse_number<double>(f[4]), text::parse_number<double>(f[5]),
        text::parse_number<double>(f[6])};
    if (!demo || !feat || !var) throw ParseError(row_no, "bad identifier field");
    for (const auto& n : nums)
      if (!n) throw ParseError(row_no, "bad numeric field");
    if (variant && *variant != *var) throw ParseError(row_no, "mixed SHAP variants");
    variant = var;
    rows.push_back({*demo, *nums[0], *feat, *nums[1], *nums[2], *nums[3], *nums[4]});
  }
  if (rows.empty()) throw DataError("saliency.csv holds no rows");

  SaliencyTensor t;
  t.variant = *variant;
  for (const auto& r : rows) {
    if (r.demo != rows.front().demo || r.alpha != rows.front().alpha) break;
    t.features.push_back(r.feature);
  }
  const std::size_t m = t.features.size();
  std::size_t per_demo = 0;
  for (const auto& r : rows) {
    if (r.demo != rows.front().demo) break;
    ++per_demo;
  }
  if (m == 0 || per_demo % m != 0) throw DataError("saliency.csv rows are not a full tensor");
  t.grid_size = per_demo / m;
  if (t.grid_size < 2 || rows.size() % per_demo != 0)
    throw DataError("saliency.csv rows are not a full tensor");
  const std::size_t n_demos = rows.size() / per_demo;
  t.phi.resize(rows.size());
  t.feature_value.resize(rows.size());
  t.fx.resize(n_demos * t.grid_size);
  t.phi0.resize(n_demos * t.grid_size);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t d = k / per_demo;
    const std::size_t a = (k % per_demo) / m;
    const std::size_t i = k % m;
    const Row& r = rows[k];
    if (i == 0 && a == 0) t.demo_ids.push_back(r.demo);
    if (r.demo != t.demo_ids[d] || r.feature != t.features[i] ||
        r.alpha != grid_alpha(a, t.grid_size))
      throw DataError("saliency.csv rows are out of order at data row " + std::to_string(k + 1));
    t.phi[k] = r.phi;
    t.feature_value[k] = r.value;
    t.fx[d * t.grid_size + a] = r.fx;
    t.phi0[d * t.grid_size + a] = r.phi0;
  }
  return t;
}

void write_summary_csv(std::ostream& out, const SaliencyTensor& tensor) {
  out << "alpha,feature,mean_abs_phi,mean_phi\n";
  for (std::size_t a = 0; a < tensor.grid_size; ++a) {
    const auto s = saliency_summary(tensor, a);
    const std::string alpha = text::format_double(grid_alpha(a, tensor.grid_size));
    for (std::size_t i = 0; i < tensor.num_features(); ++i)
      out << alpha << ',' << feature_name(tensor.features[i]) << ','
          << text::format_double(s.mean_abs_phi[i]) << ','
          << text::format_double(s.mean_phi[i]) << '\n';
  }
}

}  // namespace mergexai::shap

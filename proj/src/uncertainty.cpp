#include "mergexai/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <Eigen/Dense>
#include <json.hpp>

#include "mergexai/error.hpp"
#include "mergexai/text.hpp"

namespace mergexai::uncertainty {

namespace {

constexpr double kIdentityTolerance = 1e-12;

std::vector<double> edges_over(double lo, double hi, std::size_t bins, double margin) {
  require(bins >= 1, "need at least one bin");
  const double range = hi - lo;
  const double pad = range > 0.0 ? margin * range : std::max(std::abs(lo) * margin, 1e-12);
  lo -= pad;
  hi += pad;
  std::vector<double> e(bins + 1);
  for (std::size_t k = 0; k <= bins; ++k)
    e[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(bins);
  e.back() = hi;
  return e;
}

std::size_t bin_of(double v, std::span<const double> edges, bool& clamped) {
  const std::size_t bins = edges.size() - 1;
  if (v < edges.front()) {
    clamped = true;
    return 0;
  }
  if (v >= edges.back()) {
    clamped = v > edges.back();
    return bins - 1;
  }
  const auto it = std::upper_bound(edges.begin(), edges.end(), v);
  return static_cast<std::size_t>(it - edges.begin()) - 1;
}

double xlogx_ratio(double p, double q) { return p > 0.0 ? p * std::log(p / q) : 0.0; }

}  // namespace

std::vector<double> shared_edges(std::span<const double> a, std::span<const double> b,
                                 std::size_t bins, double margin) {
  require(!a.empty() || !b.empty(), "no samples for edges");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (auto s : {a, b})
    for (double v : s) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  return edges_over(lo, hi, bins, margin);
}

SaliencyDistribution build_histogram(std::span<const double> samples,
                                     std::span<const double> edges, double eps) {
  require(samples.size() >= 2, "histogram needs at least 2 samples");
  require(edges.size() >= 2, "histogram needs at least one bin");
  for (std::size_t k = 1; k < edges.size(); ++k)
    require(edges[k] > edges[k - 1], "histogram edges must increase strictly");
  require(eps >= 0.0, "smoothing must be non-negative");

  const std::size_t bins = edges.size() - 1;
  SaliencyDistribution d;
  d.edges.assign(edges.begin(), edges.end());
  std::vector<double> counts(bins, 0.0);
  for (double v : samples) {
    bool clamped = false;
    counts[bin_of(v, edges, clamped)] += 1.0;
    if (clamped) ++d.n_clamped;
  }
  d.n_samples = samples.size();
  const double total = static_cast<double>(samples.size()) + eps * static_cast<double>(bins);
  d.probs.resize(bins);
  for (std::size_t k = 0; k < bins; ++k) d.probs[k] = (counts[k] + eps) / total;
  return d;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), "distributions have different bin counts");
  double kl = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] > 0.0 && !(q[k] > 0.0))
      throw DataError("KL divergence undefined: q has an empty bin where p has mass");
    kl += xlogx_ratio(p[k], q[k]);
  }
  return kl;
}

double kl_divergence(const SaliencyDistribution& p, const SaliencyDistribution& q) {
  require(p.edges == q.edges, "KL divergence needs identical bin edges");
  return kl_divergence(std::span<const double>(p.probs), std::span<const double>(q.probs));
}

double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

MutualInformation mutual_information_from_joint(const std::vector<std::vector<double>>& joint) {
  require(!joint.empty() && !joint.front().empty(), "empty joint table");
  const std::size_t bx = joint.size(), by = joint.front().size();
  std::vector<double> px(bx, 0.0), py(by, 0.0);
  std::vector<double> flat;
  flat.reserve(bx * by);
  for (std::size_t i = 0; i < bx; ++i) {
    require(joint[i].size() == by, "ragged joint table");
    for (std::size_t j = 0; j < by; ++j) {
      px[i] += joint[i][j];
      py[j] += joint[i][j];
      flat.push_back(joint[i][j]);
    }
  }
  MutualInformation r;
  r.h_x = entropy(px);
  r.h_y = entropy(py);
  r.h_xy = entropy(flat);
  for (std::size_t i = 0; i < bx; ++i)
    for (std::size_t j = 0; j < by; ++j) {
      const double p = joint[i][j];
      if (p <= 0.0) continue;
      r.h_x_given_y -= p * std::log(p / py[j]);
      r.h_y_given_x -= p * std::log(p / px[i]);
    }
  r.mi = r.h_x + r.h_y - r.h_xy;
  r.conditional_form = r.h_xy - r.h_x_given_y - r.h_y_given_x;
  if (!(std::abs(r.mi - r.conditional_form) <= kIdentityTolerance))
    throw NumericFault("mutual information forms disagree by " +
                       std::to_string(r.mi - r.conditional_form));
  return r;
}

MutualInformation mutual_information(std::span<const double> x, std::span<const double> y,
                                     std::size_t bins_x, std::size_t bins_y, double eps) {
  require(x.size() == y.size(), "mutual information needs paired samples");
  require(x.size() >= 2, "mutual information needs at least 2 samples");
  require(eps >= 0.0, "smoothing must be non-negative");
  const auto ex = shared_edges(x, {}, bins_x);
  const auto ey = shared_edges(y, {}, bins_y);
  std::vector<std::vector<double>> joint(bins_x, std::vector<double>(bins_y, eps));
  for (std::size_t k = 0; k < x.size(); ++k) {
    bool clamped = false;
    joint[bin_of(x[k], ex, clamped)][bin_of(y[k], ey, clamped)] += 1.0;
  }
  const double total =
      static_cast<double>(x.size()) + eps * static_cast<double>(bins_x * bins_y);
  for (auto& row : joint)
    for (double& p : row) p /= total;
  return mutual_information_from_joint(joint);
}

// ---------------------------------------------------------------------------
// Trend

TrendFit trend_fit(std::span<const double> x, std::span<const double> y, std::size_t band_window) {
  require(x.size() == y.size(), "trend points need matching x and y");
  if (x.size() < 3) throw DataError("trend fit needs at least 3 points");
  require(band_window >= 1, "band window must be positive");
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (y[k] - my);
  }
  if (!(sxx > 0.0)) throw DataError("trend fit needs distinct x values");
  TrendFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;

  std::vector<double> resid(n);
  for (std::size_t k = 0; k < n; ++k) resid[k] = y[k] - (fit.intercept + fit.slope * x[k]);
  const std::size_t before = band_window / 2;
  const std::size_t after = band_window - before - 1;
  fit.band.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t lo = k >= before ? k - before : 0;
    const std::size_t hi = std::min(n - 1, k + after);
    double mean = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) mean += resid[j];
    const double cnt = static_cast<double>(hi - lo + 1);
    mean /= cnt;
    double var = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) var += (resid[j] - mean) * (resid[j] - mean);
    fit.band[k] = std::sqrt(var / cnt);
  }

  const Eigen::Index degree = static_cast<Eigen::Index>(std::min<std::size_t>(3, n - 1));
  Eigen::MatrixXd vander(static_cast<Eigen::Index>(n), degree + 1);
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) {
    double p = 1.0;
    for (Eigen::Index c = 0; c <= degree; ++c) {
      vander(static_cast<Eigen::Index>(k), c) = p;
      p *= x[k];
    }
    rhs(static_cast<Eigen::Index>(k)) = y[k];
  }
  const Eigen::VectorXd coef = vander.colPivHouseholderQr().solve(rhs);
  fit.cubic.assign(4, 0.0);
  for (Eigen::Index c = 0; c <= degree; ++c) fit.cubic[static_cast<std::size_t>(c)] = coef(c);
  return fit;
}

double evaluate_trend(const TrendFit& fit, double x, std::size_t degree) {
  if (degree == 3)
    return fit.cubic[0] + x * (fit.cubic[1] + x * (fit.cubic[2] + x * fit.cubic[3]));
  return fit.intercept + fit.slope * x;
}

// ---------------------------------------------------------------------------
// Curves

namespace {

double aggregate_values(std::vector<double> v, const std::string& how) {
  if (how == "median") {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::string_view kind_name(CurveKind k) { return k == CurveKind::kKL ? "KL" : "MI"; }

}  // namespace

UncertaintyResult uncertainty_curves(const shap::SaliencyTensor& tensor, const CurveConfig& config) {
  if (tensor.grid_size < 2) throw DataError("uncertainty curves need at least 2 grid moments");
  if (tensor.num_demos() < 2) throw DataError("uncertainty curves need at least 2 demonstrations");
  if (config.aggregation != "mean" && config.aggregation != "median")
    throw ConfigError("unknown aggregation '" + config.aggregation + "'");
  if (config.trend_degree != 1 && config.trend_degree != 3)
    throw ConfigError("trend degree must be 1 or 3");

  const std::size_t m = tensor.num_features();
  const std::size_t pairs = tensor.grid_size - 1;
  UncertaintyResult r;
  r.n_samples = tensor.num_demos();
  r.small_sample = r.n_samples < config.kl_bins;
  r.kl = {CurveKind::kKL, "AGG", {}, {}, {}};
  r.mi = {CurveKind::kMI, "AGG", {}, {}, {}};
  for (std::size_t i = 0; i < m; ++i) {
    const std::string name(feature_name(tensor.features[i]));
    r.kl_per_feature.push_back({CurveKind::kKL, name, {}, {}, {}});
    r.mi_per_feature.push_back({CurveKind::kMI, name, {}, {}, {}});
  }

  for (std::size_t a = 0; a < pairs; ++a) {
    const double mid = 0.5 * (grid_alpha(a, tensor.grid_size) + grid_alpha(a + 1, tensor.grid_size));
    std::vector<double> kl_vals(m), mi_vals(m);
    for (std::size_t i = 0; i < m; ++i) {
      const auto xs = tensor.samples(a, i);
      const auto ys = tensor.samples(a + 1, i);
      const auto edges = shared_edges(xs, ys, config.kl_bins, config.edge_margin);
      const auto p = build_histogram(xs, edges, config.eps);
      const auto q = build_histogram(ys, edges, config.eps);
      r.n_clamped += p.n_clamped + q.n_clamped;
      kl_vals[i] = kl_divergence(p, q);
      mi_vals[i] = mutual_information(xs, ys, config.mi_bins, config.mi_bins, config.eps).mi;
      for (auto* c : {&r.kl_per_feature[i], &r.mi_per_feature[i]}) c->alpha_mid.push_back(mid);
      r.kl_per_feature[i].values.push_back(kl_vals[i]);
      r.mi_per_feature[i].values.push_back(mi_vals[i]);
    }
    r.kl.alpha_mid.push_back(mid);
    r.mi.alpha_mid.push_back(mid);
    r.kl.values.push_back(aggregate_values(kl_vals, config.aggregation));
    r.mi.values.push_back(aggregate_values(mi_vals, config.aggregation));
  }

  if (pairs >= 3) {
    auto fit = [&](UncertaintyCurve& c) { c.trend = trend_fit(c.alpha_mid, c.values, config.band_window); };
    fit(r.kl);
    fit(r.mi);
    for (auto& c : r.kl_per_feature) fit(c);
    for (auto& c : r.mi_per_feature) fit(c);
  }
  return r;
}

void write_curves_csv(std::ostream& out, const UncertaintyResult& result, const CurveConfig& config) {
  out << "kind,alpha_mid,value_nats,feature,trend_value,band\n";
  auto emit = [&](const UncertaintyCurve& c) {
    for (std::size_t k = 0; k < c.values.size(); ++k) {
      const bool fitted = !c.trend.band.empty();
      out << kind_name(c.kind) << ',' << text::format_double(c.alpha_mid[k]) << ','
          << text::format_double(c.values[k]) << ',' << c.feature << ','
          << (fitted ? text::format_double(evaluate_trend(c.trend, c.alpha_mid[k], config.trend_degree))
                     : std::string("nan"))
          << ',' << (fitted ? text::format_double(c.trend.band[k]) : std::string("nan")) << '\n';
    }
  };
  emit(result.kl);
  for (const auto& c : result.kl_per_feature) emit(c);
  emit(result.mi);
  for (const auto& c : result.mi_per_feature) emit(c);
}

std::string curves_json(const UncertaintyResult& result, const CurveConfig& config) {
  using json = nlohmann::ordered_json;
  auto fit_json = [](const UncertaintyCurve& c) {
    return json{{"feature", c.feature},
                {"slope", c.trend.slope},
                {"intercept", c.trend.intercept},
                {"cubic", c.trend.cubic}};
  };
  json j;
  j["units"] = "nats";
  j["config"] = {{"kl_bins", config.kl_bins},     {"mi_bins", config.mi_bins},
                 {"eps", config.eps},             {"aggregation", config.aggregation},
                 {"band_window", config.band_window}, {"trend_degree", config.trend_degree},
                 {"edge_margin", config.edge_margin}};
  j["n_samples"] = result.n_samples;
  j["n_clamped"] = result.n_clamped;
  j["small_sample_warning"] = result.small_sample;
  j["kl"] = fit_json(result.kl);
  j["mi"] = fit_json(result.mi);
  j["kl_per_feature"] = json::array();
  j["mi_per_feature"] = json::array();
  for (const auto& c : result.kl_per_feature) j["kl_per_feature"].push_back(fit_json(c));
  for (const auto& c : result.mi_per_feature) j["mi_per_feature"].push_back(fit_json(c));
  return j.dump(2) + "\n";
}

}  // namespace mergexai::uncertainty

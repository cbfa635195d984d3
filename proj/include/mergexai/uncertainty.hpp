#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mergexai/shap.hpp"

namespace mergexai::uncertainty {

// Histogram estimate of one feature's saliency distribution at one moment.
struct SaliencyDistribution {
  std::vector<double> edges;  // B + 1 strictly increasing boundaries
  std::vector<double> probs;  // B masses summing to 1
  std::size_t n_samples = 0;
  std::size_t n_clamped = 0;  // samples outside the edges, folded into an end bin
};

// B equal-width bins spanning the pooled range of both samples, widened on
// each side by `margin` times the range.
std::vector<double> shared_edges(std::span<const double> a, std::span<const double> b,
                                 std::size_t bins, double margin = 0.01);

// Bins are right-open except the last, which is closed. eps is added to
// every bin count before normalizing.
SaliencyDistribution build_histogram(std::span<const double> samples,
                                     std::span<const double> edges, double eps);

// sum p log(p / q) in nats over bins with p > 0. Throws ContractViolation
// when the edges differ and DataError when q is zero where p is not.
double kl_divergence(const SaliencyDistribution& p, const SaliencyDistribution& q);
double kl_divergence(std::span<const double> p, std::span<const double> q);

// -sum p log p in nats.
double entropy(std::span<const double> probs);

struct MutualInformation {
  double mi = 0.0;  // H(X) + H(Y) - H(X,Y)
  double h_x = 0.0;
  double h_y = 0.0;
  double h_xy = 0.0;
  double h_x_given_y = 0.0;
  double h_y_given_x = 0.0;
  double conditional_form = 0.0;  // H(X,Y) - H(X|Y) - H(Y|X)
};

// Plug-in MI from a joint 2-D histogram of paired samples. Each axis gets
// equal-width bins over its own sample range (1% margin). The two algebraic
// forms are evaluated independently and must agree within 1e-12.
MutualInformation mutual_information(std::span<const double> x, std::span<const double> y,
                                     std::size_t bins_x, std::size_t bins_y, double eps);

// The same estimator on a given joint probability table (row = x bin).
MutualInformation mutual_information_from_joint(const std::vector<std::vector<double>>& joint);

struct TrendFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<double> band;   // rolling std of the linear-fit residuals
  std::vector<double> cubic;  // c0..c3 of the least-squares cubic
};

// Least-squares line through (x, y), residual band over a centered window of
// `band_window` points truncated at the ends, and a companion cubic fit.
// Throws DataError with fewer than 3 points.
TrendFit trend_fit(std::span<const double> x, std::span<const double> y,
                   std::size_t band_window = 10);

double evaluate_trend(const TrendFit& fit, double x, std::size_t degree);

enum class CurveKind { kKL, kMI };

struct UncertaintyCurve {
  CurveKind kind = CurveKind::kKL;
  std::string feature;  // feature name, or "AGG"
  std::vector<double> alpha_mid;
  std::vector<double> values;
  TrendFit trend;
};

struct CurveConfig {
  std::size_t kl_bins = 20;
  std::size_t mi_bins = 10;
  double eps = 1e-6;
  std::string aggregation = "mean";  // "mean" or "median"
  std::size_t band_window = 10;
  std::size_t trend_degree = 1;      // 1 or 3, used for trend_value
  double edge_margin = 0.01;
};

struct UncertaintyResult {
  UncertaintyCurve kl;
  UncertaintyCurve mi;
  std::vector<UncertaintyCurve> kl_per_feature;
  std::vector<UncertaintyCurve> mi_per_feature;
  std::size_t n_samples = 0;
  std::size_t n_clamped = 0;
  bool small_sample = false;  // fewer samples than KL bins
};

// KL and MI between the saliency distributions of every pair of adjacent
// grid moments, per feature and aggregated across features.
UncertaintyResult uncertainty_curves(const shap::SaliencyTensor& tensor, const CurveConfig& config);

// curves.csv: kind,alpha_mid,value_nats,feature,trend_value,band
void write_curves_csv(std::ostream& out, const UncertaintyResult& result, const CurveConfig& config);
std::string curves_json(const UncertaintyResult& result, const CurveConfig& config);

}  // namespace mergexai::uncertainty

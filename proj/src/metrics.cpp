#include "mergexai/metrics.hpp"

#include <cmath>

#include "mergexai/error.hpp"

namespace mergexai::metrics {

ErrorStats rmse(std::span<const double> predictions, std::span<const double> truth) {
  require(!truth.empty(), "rmse of an empty series");
  require(predictions.size() == truth.size(), "prediction and truth lengths differ");
  double sse = 0.0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    const double e = predictions[t] - truth[t];
    sse += e * e;
  }
  const double mse = sse / static_cast<double>(truth.size());
  return {mse, std::sqrt(mse)};
}

double reference_mse(std::span<const double> truth) {
  require(!truth.empty(), "reference mse of an empty series");
  double mean = 0.0;
  for (double v : truth) mean += v;
  mean /= static_cast<double>(truth.size());
  double sse = 0.0;
  for (double v : truth) sse += (mean - v) * (mean - v);
  return sse / static_cast<double>(truth.size());
}

double eval_score(std::span<const double> predictions, std::span<const double> truth) {
  const double mse = rmse(predictions, truth).mse;
  const double ref = reference_mse(truth);
  if (!(ref > 0.0)) throw DataError("evaluation score undefined for constant truth");
  return (mse - ref) / (0.0 - ref);
}

DemoMetrics demo_metrics(int demo_id, std::span<const double> predictions,
                         std::span<const double> truth) {
  const auto err = rmse(predictions, truth);
  DemoMetrics m;
  m.demo_id = demo_id;
  m.eps_mse = err.mse;
  m.eps_rmse = err.rmse;
  m.eps_mse_ref = reference_mse(truth);
  if (m.eps_mse_ref > 0.0) m.beta_mse = (m.eps_mse - m.eps_mse_ref) / (0.0 - m.eps_mse_ref);
  return m;
}

Aggregate aggregate(std::span<const DemoMetrics> demos) {
  Aggregate a;
  for (const auto& d : demos) {
    if (!d.beta_mse) {
      ++a.n_excluded;
      continue;
    }
    a.beta_bar += *d.beta_mse;
    a.rmse_bar += d.eps_rmse;
    ++a.n_valid;
  }
  if (a.n_valid == 0) throw DataError("no demonstration has a defined evaluation score");
  a.beta_bar /= static_cast<double>(a.n_valid);
  a.rmse_bar /= static_cast<double>(a.n_valid);
  return a;
}

}  // namespace mergexai::metrics

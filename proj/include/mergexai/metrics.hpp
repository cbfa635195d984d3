#pragma once

#include <optional>
#include <span>
#include <vector>

namespace mergexai::metrics {

struct ErrorStats {
  double mse = 0.0;
  double rmse = 0.0;
};

// Mean squared error and its root. Throws ContractViolation on empty or
// mismatched series.
ErrorStats rmse(std::span<const double> predictions, std::span<const double> truth);

// MSE of the predictor that always outputs mean(truth).
double reference_mse(std::span<const double> truth);

// Skill score 1 - mse / mse_ref against the truth-mean predictor. Throws
// DataError when the truth is constant (mse_ref == 0).
double eval_score(std::span<const double> predictions, std::span<const double> truth);

struct DemoMetrics {
  int demo_id = 0;
  double eps_mse = 0.0;
  double eps_rmse = 0.0;
  double eps_mse_ref = 0.0;
  std::optional<double> beta_mse;  // empty when the truth is constant
};

DemoMetrics demo_metrics(int demo_id, std::span<const double> predictions,
                         std::span<const double> truth);

struct Aggregate {
  double beta_bar = 0.0;
  double rmse_bar = 0.0;
  std::size_t n_valid = 0;
  std::size_t n_excluded = 0;
};

// Means over demonstrations with a defined score; the rest are counted as
// excluded. Throws DataError when nothing is left.
Aggregate aggregate(std::span<const DemoMetrics> demos);

}  // namespace mergexai::metrics

// SPDX-License-Identifier: Apache-2.0
/**
 * @file   baseline.hpp
 * @brief  Benchmark forecasters: a two-stage linear model over the most
 *         recent observation and the analytic OU oracle.
 *
 * Stage 1 regresses next log-glucose on (last log-glucose, insulin rate,
 * glucose input, gap) by ordinary least squares. Stage 2 regresses the
 * squared stage-1 residuals on the same features to obtain a variance model.
 */
#pragma once

#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrnn/dataset.hpp"
#include "ctrnn/metrics.hpp"
#include "ctrnn/model.hpp"
#include "ctrnn/simgen.hpp"

namespace ctrnn::baseline {

constexpr double kVarianceFloor = 1e-6;
constexpr double kRidge = 1e-6;

struct FeatureOptions {
  /// Appends running mean, min and max of the log-glucose history.
  bool summarized = false;
  std::size_t dim() const { return summarized ? 7 : 4; }
};

struct LinearFit {
  FeatureOptions features;
  std::vector<double> mean_w;  // one per feature
  double mean_b = 0.0;
  std::vector<double> var_w;
  double var_b = 0.0;
  bool ridge_used = false;

  nlohmann::json to_json() const;
  static LinearFit from_json(const nlohmann::json &j);
};

struct Sample {
  std::vector<double> x;
  double y = 0.0;  // log-glucose
};

/// One sample per event k >= 1 with an observed target, using only what is
/// known at t_{k-1} plus the gap.
std::vector<Sample> make_samples(const TrajectoryRecord &r,
                                 const FeatureOptions &opt);

/// Feature vectors for every forecast of a record (events 1..K-1).
std::vector<std::vector<double>> forecast_features(const TrajectoryRecord &r,
                                                   const FeatureOptions &opt);

struct OlsResult {
  std::vector<double> w;
  double b = 0.0;
  bool ridge_used = false;
};

/// Least squares with intercept via the normal equations; a singular or
/// ill-conditioned design adds kRidge to the diagonal.
OlsResult ols(const std::vector<std::vector<double>> &x, const std::vector<double> &y);

LinearFit fit_linear(const Dataset &data, const FeatureOptions &opt = {});
ForecastDist predict_linear(const LinearFit &fit, std::span<const double> x);

metrics::Forecaster linear_forecaster(const LinearFit &fit);
/// Last observation carried forward as the lognormal median.
metrics::Forecaster carry_forward_forecaster(double sigma_log);

/// Exact OU transition from the latent glucose at the previous event to
/// event k. Needs the per-record parameters.
metrics::GaussianMgdl oracle_gaussian(const TrajectoryRecord &r, std::size_t k,
                                      const sim::SimConfig &cfg);
/// Moment-matched log-normal view of oracle_gaussian.
ForecastDist oracle_dist(const TrajectoryRecord &r, std::size_t k,
                         const sim::SimConfig &cfg);
/// Scores with the exact Gaussian; the log-normal view is kept for plots.
metrics::Forecaster oracle_forecaster(const sim::SimConfig &cfg);

}  // namespace ctrnn::baseline

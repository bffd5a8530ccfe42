// SPDX-License-Identifier: Apache-2.0
/**
 * @file   metrics.hpp
 * @brief  Proper scoring rules, calibration diagnostics and cross-run
 *         aggregation for log-normal glucose forecasts.
 *
 * CRPS, log score and PIT variance are computed on the log-glucose scale;
 * RMSE, coverage and interval score on mg/dL. Stored values are unscaled;
 * the x100 presentation lives in the CSV/markdown writers only.
 */
#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <utility>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrnn/dataset.hpp"
#include "ctrnn/model.hpp"

namespace ctrnn::metrics {

double normal_cdf(double z);
double normal_pdf(double z);

/// Closed-form CRPS of N(mu, sigma^2) at y; sigma = 0 gives |y - mu|.
double crps_normal(double mu, double sigma, double y);
/// Negative log density; the same kernel as the training NLL.
double log_score(double mu, double sigma, double y);
double interval_score(double l, double u, double y, double alpha);

/// Normal over mg/dL; the exact transition law of the simulator.
struct GaussianMgdl {
  double mu = 0.0;
  double sd = 0.0;
};

/// A forecast as produced by a forecaster. Models emit the log-normal only;
/// the oracle also carries its exact Gaussian, which then takes precedence
/// in scoring.
struct Predictive {
  ForecastDist lognormal;
  std::optional<GaussianMgdl> gaussian;
};

struct ScoredForecast {
  double mu_log = 0.0;
  double sigma_log = 1.0;
  double y_true_mgdl = 0.0;
  double gap = 0.0;
  std::optional<GaussianMgdl> gaussian;
};

/// CRPS on the log-glucose scale of log(G), G ~ N(mu, sd^2), by adaptive
/// Gauss-Kronrod quadrature of the threshold-decomposition integral.
double crps_gaussian_log(double mu, double sd, double y_log);

/// Per-forecast kernels; they dispatch on the presence of `gaussian`.
double crps_of(const ScoredForecast &f);
double log_score_of(const ScoredForecast &f);
double pit_of(const ScoredForecast &f);
double mean_mgdl_of(const ScoredForecast &f);
/// Central 95% interval in mg/dL.
std::pair<double, double> interval95_of(const ScoredForecast &f);

/// Sample variance of the PIT values Phi((log y - mu) / sigma).
double pit_variance(std::span<const ScoredForecast> f);

struct PointScores {
  double rmse = 0.0;
  double coverage = 0.0;  // percent
  double interval_score = 0.0;
};

/// Point prediction is the predictive mean (log-normal mean for models); the
/// 95% interval is exp(mu -/+ 1.96 sigma) for log-normal forecasts.
PointScores point_scores(std::span<const ScoredForecast> f);

enum class Metric { rmse, crps, logs, var_pit, coverage, interval_score };
constexpr std::array<Metric, 6> kMetrics = {Metric::rmse,    Metric::crps,
                                            Metric::logs,    Metric::var_pit,
                                            Metric::coverage, Metric::interval_score};
std::string_view to_string(Metric m);

/// One run's scores over a test set.
struct MetricSet {
  double rmse = 0.0;
  double crps = 0.0;
  double logs = 0.0;            // mean -log density, lower is better
  double var_pit = 0.0;
  double coverage = 0.0;
  double interval_score = 0.0;
  double crps_se = 0.0;         // standard error of the mean CRPS
  std::size_t n_forecasts = 0;

  double get(Metric m) const;
  nlohmann::json to_json() const;
  static MetricSet from_json(const nlohmann::json &j);
};

MetricSet score(std::span<const ScoredForecast> f);

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation across runs, 0 for one run
  double min = 0.0;
  double max = 0.0;
};

Stat summarize(std::span<const double> v);

struct ScoreReport {
  std::string model;
  std::vector<MetricSet> runs;

  Stat stat(Metric m) const;
  std::size_t n_forecasts() const;
  nlohmann::json to_json() const;
  static ScoreReport from_json(const nlohmann::json &j);
};

/// Header row of the results CSV.
std::string table_header();
/// One CSV row, "mean (std)" cells, x100 where the table scales.
std::string table_row(const ScoreReport &r);
void write_table_csv(std::span<const ScoreReport> reports,
                     const std::filesystem::path &path);
void write_report_json(std::span<const ScoreReport> reports,
                       const std::filesystem::path &path);
std::vector<ScoreReport> read_report_json(const std::filesystem::path &path);

/// Forecasts for events 1..K-1 of a record, one per pre-update forecast.
using Forecaster =
    std::function<std::vector<Predictive>(const TrajectoryRecord &)>;

Forecaster model_forecaster(const Model &m);

/// Which glucose a forecast is scored against.
enum class Truth { observed, latent };

/// Scores every pre-update forecast of every record. Records are processed
/// in parallel; the result order is record order.
std::vector<ScoredForecast> collect(const Forecaster &f, const Dataset &data,
                                    Truth truth);

MetricSet evaluate(const Forecaster &f, const Dataset &data, Truth truth);

}  // namespace ctrnn::metrics

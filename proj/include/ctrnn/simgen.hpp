// SPDX-License-Identifier: Apache-2.0
/**
 * @file   simgen.hpp
 * @brief  Simulated ICU glucose trajectories: a mean-reverting
 *         Ornstein-Uhlenbeck SDE driven by insulin and glucose input, a
 *         glucose-dependent measurement process and a sliding-scale insulin
 *         policy that may only change at measurement times.
 *
 *   dG = (-gamma (G - Gb) - beta * m / m_max + k_g * g) dt
 *        + sqrt(2 gamma sigma^2) dW
 *
 * Each trajectory draws from independent random streams keyed by
 * (seed, traj_id, stream), so a dataset is identical for any thread count and
 * the measurement-error scenario shares its true path with the standard one.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrnn/dataset.hpp"

namespace ctrnn::sim {

using Rng = std::mt19937_64;

enum class Scenario { standard, measurement_error, nonstationary_beta };

std::string_view to_string(Scenario s);
Scenario parse_scenario(std::string_view s);

struct SimConfig {
  std::size_t n_trajectories = 1000;
  double horizon = 24.0;          // h
  double dt = 0.05;               // h, Euler-Maruyama step
  std::uint64_t seed = 1;
  Scenario scenario = Scenario::standard;
  double error_sd = 10.0;          // mg/dL, measurement_error scenario only
  double glucose_input_rate = 0.0; // g/h, held constant over the trajectory
  double glucose_effect = 1.0;     // mg/dL/h per g/h of glucose input
  double max_insulin_rate = 20.0;  // U/h; beta is the drift at this rate
  double beta_switch_mean_hours = 8.0;  // nonstationary_beta holding time
  double beta_low_factor = 0.5;         // nonstationary_beta low regime
  bool store_dense = false;

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing fields keep their defaults; wrong-typed or invalid fields throw
  /// DataError naming the field.
  static SimConfig from_json(const nlohmann::json &j);
};

/// Independent stream for (seed, traj_id, stream id).
Rng stream_rng(std::uint64_t seed, std::int64_t traj_id, std::uint64_t stream);

/// G0~N(140,20), Gb~N(140,5), gamma~N(0.5,0.01), sigma~N(20,2),
/// beta~N(50,5); gamma and sigma redrawn while nonpositive.
SdeParams sample_params(Rng &rng);

/// Sliding-scale insulin rate in U/h.
double treatment_policy(double glucose);

/// b(m) * exp(-((G - 120) / c)^2) with c = 50 below 80 mg/dL and 140 above,
/// b(m) = 3 h on insulin and 5 h otherwise.
double median_measurement_gap(double glucose, double insulin_rate);

/// Log-normal around the median with log-scale sd 0.2, clamped to
/// [5 min, remaining].
double next_measurement_gap(double glucose, double insulin_rate,
                            double remaining, Rng &rng);

struct OracleForecast {
  double mu = 0.0;  // mg/dL
  double sd = 0.0;  // mg/dL
};

/// Exact Gaussian transition of the OU process over `gap` with constant net
/// input `u` (mg/dL/h).
OracleForecast oracle_forecast(double g_now, const SdeParams &params, double u,
                               double gap);

/// Net constant drift input over [t, next event) implied by an event.
double net_input(const SdeParams &params, const Event &e, const SimConfig &cfg);

struct SimResult {
  Dataset records;
  std::size_t rejected = 0;  // trajectories resampled after a degenerate path
};

TrajectoryRecord simulate_trajectory(const SdeParams &params,
                                     const SimConfig &cfg, std::int64_t traj_id,
                                     std::size_t *rejected = nullptr);

/// Simulates cfg.n_trajectories trajectories with ids [first_id, first_id+n).
SimResult simulate_dataset(const SimConfig &cfg, std::int64_t first_id = 0);

struct SimSummary {
  double mean_events = 0.0;
  double mean_gap = 0.0;
  double insulin_fraction = 0.0;  // share of events with insulin running
  std::vector<std::size_t> events_histogram;  // index = events per trajectory
  std::vector<std::size_t> gap_histogram;     // 0.5 h bins
};

SimSummary summarize(const Dataset &records);
void write_summary_csv(const SimSummary &s, const std::filesystem::path &path);

}  // namespace ctrnn::sim

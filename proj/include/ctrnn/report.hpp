// SPDX-License-Identifier: Apache-2.0
/**
 * @file   report.hpp
 * @brief  Deterministic SVG plots and markdown tables for forecasts, score
 *         reports and data-size sweeps.
 */
#pragma once

#include <span>
#include <string>

#include "ctrnn/dataset.hpp"
#include "ctrnn/metrics.hpp"
#include "ctrnn/model.hpp"
#include "ctrnn/trainer.hpp"

namespace ctrnn::report {

struct PlotBand {
  double t = 0.0;
  double lower = 0.0;   // mg/dL
  double median = 0.0;  // mg/dL
  double upper = 0.0;   // mg/dL
};

/// 95% band from a dense forecast path.
std::vector<PlotBand> bands(std::span<const PathPoint> path);

/// Observations as circles (class "obs"), the median as a polyline and the
/// 95% band as a polygon. Coordinates are printed with fixed precision.
std::string forecast_svg(const TrajectoryRecord &r, std::span<const PlotBand> band,
                         const std::string &title);

/// Mean with a min-max bar per size, one series (class "series") per
/// architecture; linear and oracle rows, when present, are drawn as
/// reference lines (class "reference").
std::string datasize_svg(const train::ExperimentBundle &b, metrics::Metric m);

/// Markdown results table with the log score in both orientations.
std::string markdown_table(std::span<const metrics::ScoreReport> reports);

/// Markdown summary of a sweep: mean (min, max) CRPS per model and size.
std::string markdown_bundle(const train::ExperimentBundle &b);

/// Sizes at which a continuous-time model scores a worse mean CRPS than its
/// discrete gap-input counterpart (ode_lstm vs timegap_lstm, flow_gru vs
/// timegap_gru). markdown_bundle lists these under the table.
std::vector<std::string> ordering_flags(const train::ExperimentBundle &b);

void write_text(const std::string &text, const std::filesystem::path &path);

}  // namespace ctrnn::report

// SPDX-License-Identifier: Apache-2.0
/**
 * @file   dataset.hpp
 * @brief  Trajectory records and their JSONL serialisation.
 *
 * One trajectory per line. Doubles are written with round-trip precision, so
 * write -> read reproduces every value exactly.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

namespace ctrnn {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-trajectory parameters of the glucose SDE.
struct SdeParams {
  double g0 = 140.0;     // mg/dL
  double gb = 140.0;     // mg/dL
  double gamma = 0.5;    // 1/h
  double sigma = 20.0;   // mg/dL
  double beta = 50.0;    // mg/dL/h at the maximal insulin rate

  bool operator==(const SdeParams &) const = default;
};

struct Event {
  double t = 0.0;              // hours
  double glucose_obs = 0.0;    // mg/dL, what a model sees
  double glucose_true = 0.0;   // mg/dL
  double insulin_rate = 0.0;   // U/h over [t, next event)
  double glucose_input = 0.0;  // g/h over [t, next event)
  int target_mask = 1;
  double insulin_sensitivity = 0.0;  // beta in effect at t

  bool operator==(const Event &) const = default;
};

struct DenseTruth {
  std::vector<double> t;
  std::vector<double> glucose;

  bool operator==(const DenseTruth &) const = default;
};

struct TrajectoryRecord {
  std::int64_t traj_id = 0;
  std::vector<Event> events;
  std::optional<SdeParams> params;
  std::optional<DenseTruth> dense_truth;

  bool operator==(const TrajectoryRecord &) const = default;
};

using Dataset = std::vector<TrajectoryRecord>;

nlohmann::json to_json(const TrajectoryRecord &r);
/// Throws DataError naming the first missing or ill-typed field.
TrajectoryRecord record_from_json(const nlohmann::json &j);

void write_dataset(const Dataset &records, const std::filesystem::path &path);
/// Blank lines are skipped; malformed lines raise DataError with the line
/// number.
Dataset read_dataset(const std::filesystem::path &path);

/// Validates ordering, ranges and positivity; throws DataError.
void validate_record(const TrajectoryRecord &r, double horizon);

}  // namespace ctrnn

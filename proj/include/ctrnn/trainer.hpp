// SPDX-License-Identifier: Apache-2.0
/**
 * @file   trainer.hpp
 * @brief  Mini-batch BPTT with Adam, an internal holdout for early stopping,
 *         grid search over (hidden_dim, lambda, obs_error_var) and the
 *         data-size sweep driver.
 *
 * Within a batch every trajectory gets its own graph and gradient buffer;
 * buffers are summed in batch order, so results do not depend on the
 * number of worker threads.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrnn/dataset.hpp"
#include "ctrnn/losses.hpp"
#include "ctrnn/metrics.hpp"
#include "ctrnn/model.hpp"
#include "ctrnn/simgen.hpp"

namespace ctrnn::train {

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;
  int patience = 5;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json &j);
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double holdout_loss = 0.0;
  double lr = 0.0;
};

using History = std::vector<EpochRecord>;

void write_history_csv(const History &h, const std::filesystem::path &path);

/// Adam state over a flat parameter vector.
class Adam {
 public:
  Adam(std::size_t n, double beta1, double beta2, double eps);
  void step(std::span<double> params, std::span<const double> grad, double lr);
  long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<double> m_, v_;
};

/// Scales `grad` so its L2 norm is at most `max_norm`; returns the norm
/// before clipping.
double clip_global_norm(std::span<double> grad, double max_norm);

/// Log-glucose mean and sd over the observed training targets.
void fit_standardisation(ArchSpec &spec, const Dataset &data);

/// Mean per-trajectory total loss; throws NumericError on a non-finite value.
double mean_loss(const Model &m, const Dataset &data,
                 std::span<const std::size_t> idx, const losses::LossConfig &cfg);

/// Loss and gradient summed over the selected trajectories, in index order.
double batch_gradient(const Model &m, const Dataset &data,
                      std::span<const std::size_t> idx,
                      const losses::LossConfig &cfg, std::span<double> grad);

struct TrainResult {
  Model model;
  History history;
  int best_epoch = 0;
  std::size_t skipped = 0;  // trajectories with fewer than 2 events
  std::size_t retries = 0;  // optimizer steps redone at a halved rate
};

/// Fits the model. The architecture's standardisation is refit on the
/// training portion; parameters are initialised from cfg.seed.
TrainResult train(ArchSpec arch, const Dataset &data, const TrainConfig &cfg,
                  const losses::LossConfig &loss);

struct GridSpec {
  std::vector<std::size_t> hidden_dims = {16, 32};
  std::vector<double> lambdas = {0.0, 0.1, 1.0};
  std::vector<double> obs_error_vars = {0.01};

  void validate() const;
  nlohmann::json to_json() const;
  static GridSpec from_json(const nlohmann::json &j);
};

struct GridCell {
  std::size_t hidden_dim = 0;
  double lambda = 0.0;
  std::optional<double> obs_error_var;  // kl only
  std::optional<double> crps;           // absent for a failed cell
  std::string error;
};

struct GridResult {
  GridCell best;
  std::vector<GridCell> table;
};

/// Selection by minimal external-holdout CRPS; ties go to the smaller
/// hidden_dim, then the smaller lambda.
GridResult grid_search(const ArchSpec &arch, const Dataset &train_set,
                       const Dataset &holdout, const GridSpec &grid,
                       const TrainConfig &cfg, const losses::LossConfig &base);

/// Index of the preferred cell under the selection rule; nullopt if every
/// cell failed.
std::optional<std::size_t> select_cell(const std::vector<GridCell> &cells);

struct ExperimentConfig {
  sim::SimConfig sim;  // n_trajectories and seed are overridden per run
  std::vector<std::size_t> sizes = {1000, 5000};
  std::vector<ArchKind> archs;
  int n_runs = 3;
  std::uint64_t seed = 1;
  std::size_t test_size = 2000;
  ArchSpec arch_defaults;
  TrainConfig train;
  losses::LossConfig loss;
  /// lambda used for continuous-time archs; timegap archs use loss.lambda.
  std::optional<double> continuous_lambda;
  bool include_linear = true;
  bool include_oracle = true;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json &j);
};

struct SizeResult {
  std::size_t size = 0;
  std::vector<metrics::ScoreReport> reports;  // one per model, runs inside
};

struct ExperimentBundle {
  std::string scenario;
  std::vector<SizeResult> sizes;

  nlohmann::json to_json() const;
  static ExperimentBundle from_json(const nlohmann::json &j);
  const metrics::ScoreReport *find(std::size_t size, const std::string &model) const;
};

/// Simulate, train and evaluate every (size, arch, run). When `out_dir` is
/// given, per-run histories, checkpoints and reports are written below it
/// along with bundle.json.
ExperimentBundle run_experiment(const ExperimentConfig &cfg,
                                const std::optional<std::filesystem::path> &out_dir);

}  // namespace ctrnn::train

// SPDX-License-Identifier: Apache-2.0
/**
 * @file   model.hpp
 * @brief  Continuous-time autoregressive RNN forecasters.
 *
 * Every architecture follows the same event loop: a learned initial state, a
 * jump update on each observation, evolution of the hidden state across the
 * gap to the next event, and a Normal forecast over log-glucose read from the
 * evolved state. Architectures differ only in the jump cell and the evolution
 * mechanism:
 *
 *   ode_gru       GRU jump, GRU-ODE field
 *   ode_lstm      LSTM jump, bounded MLP field on h (cell state held)
 *   imode         GRU jumps for z_h and the intervention state z_a,
 *                 bounded MLP fields solved jointly
 *   flow_gru      GRU jump, GRU flow
 *   flow_lstm     LSTM jump, GRU flow on h
 *   decay_gru     GRU jump, z * exp(-A gap)
 *   timegap_gru   GRU jump with the gap to the next event as an input,
 *   timegap_lstm  LSTM likewise; state held between events
 *
 * Event features are (standardised log-glucose, insulin/20, glucose input/10,
 * gap since last event/24) and, for the timegap variants, gap to next/24.
 * Fields and flows receive the controls (insulin/20, glucose input/10) held
 * constant over the gap.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ctrnn/dataset.hpp"
#include "ctrnn/diffcore.hpp"
#include "ctrnn/nets.hpp"
#include "ctrnn/odeflow.hpp"

namespace ctrnn {

enum class ArchKind {
  ode_gru,
  ode_lstm,
  flow_gru,
  flow_lstm,
  decay_gru,
  imode,
  timegap_gru,
  timegap_lstm,
};

std::string_view to_string(ArchKind k);
std::optional<ArchKind> parse_arch(std::string_view s);
std::span<const ArchKind> all_archs();
/// Comma-separated list of valid architecture names.
std::string arch_names();

bool uses_lstm(ArchKind k);
bool is_timegap(ArchKind k);

struct ArchSpec {
  ArchKind kind = ArchKind::ode_lstm;
  std::size_t hidden_dim = 16;
  std::size_t intervention_dim = 8;  // imode only
  std::size_t field_hidden = 16;     // hidden width of MLP vector fields
  odeflow::SolveConfig solve;
  // Log-glucose standardisation; forecasts are center + scale * head output.
  double y_center = 0.0;
  double y_scale = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
  static ArchSpec from_json(const nlohmann::json &j);
};

/// Normal over log-glucose, i.e. log-normal over mg/dL.
struct ForecastDist {
  double mu_log = 0.0;
  double sigma_log = 1.0;

  double median_mgdl() const;
  double mean_mgdl() const;
  double quantile_mgdl(double p) const;
};

struct EventInput {
  std::optional<double> y_log;  // absent when the target is masked
  double insulin_rate = 0.0;    // U/h
  double glucose_input = 0.0;   // g/h
  double gap_since_last = 0.0;  // h
  double delta_next = 0.0;      // h, 0 at the final event
};

struct Controls {
  double insulin_rate = 0.0;
  double glucose_input = 0.0;
};

/// Graph-bound hidden state.
struct ModelState {
  NodeId z;
  std::optional<NodeId> c;   // LSTM cell state
  std::optional<NodeId> za;  // imode intervention state
  double t = 0.0;
};

struct ForecastNodes {
  NodeId mu_log;
  NodeId sigma_log;
  NodeId mu_head;  // standardised mean, used as autoregressive feedback
};

struct RolloutStep {
  std::size_t event = 0;
  std::optional<ForecastNodes> pre;  // evolved over the gap, before update
  ForecastNodes post;                // after the jump update
  double gap = 0.0;
};

using Rollout = std::vector<RolloutStep>;

class Session;

class Model {
 public:
  static constexpr int kFormatVersion = 1;

  Model(ArchSpec spec, std::uint64_t seed);
  /// Attaches to an existing parameter store (e.g. a loaded checkpoint).
  Model(ArchSpec spec, ParamStore params);

  const ArchSpec &arch() const { return spec_; }
  ParamStore &params() { return store_; }
  const ParamStore &params() const { return store_; }

  std::size_t input_dim() const;
  static constexpr std::size_t kControlDim = 2;

  nlohmann::json checkpoint() const;
  static Model from_checkpoint(const nlohmann::json &doc);
  void save(const std::filesystem::path &dir) const;
  static Model load(const std::filesystem::path &dir);

 private:
  friend class Session;
  void build(nets::Rng *rng);

  ArchSpec spec_;
  ParamStore store_;
  std::optional<nets::GruCell> gru_jump_;
  std::optional<nets::LstmCell> lstm_jump_;
  std::optional<nets::GruCell> intervention_jump_;
  std::optional<nets::GruOdeField> gru_field_;
  std::optional<nets::Mlp> mlp_field_;
  std::optional<nets::Mlp> intervention_field_;
  std::optional<nets::GruFlow> flow_;
  std::optional<std::size_t> decay_raw_;
  std::size_t init_z_ = 0;
  std::optional<std::size_t> init_c_;
  std::optional<std::size_t> init_za_;
  nets::OutputHead head_;
};

/// A model's parameters bound onto one Graph. Cheap to create per example.
class Session {
 public:
  Session(const Model &model, Graph &g);

  ModelState init_state() const;
  /// Jump update at an event; masked targets are replaced by the state's own
  /// forecast mean.
  ModelState update(const ModelState &s, const EventInput &e) const;
  ModelState evolve(const ModelState &s, double gap, const Controls &u) const;
  ForecastNodes forecast(const ModelState &s) const;
  ForecastDist value(const ForecastNodes &f) const;

  Rollout rollout(const TrajectoryRecord &r) const;

  Graph &graph() const { return g_; }
  const Model &model() const { return model_; }

 private:
  NodeId event_features(const ModelState &s, const EventInput &e) const;
  NodeId controls_node(const Controls &u) const;

  const Model &model_;
  Graph &g_;
  std::optional<nets::GruCell::Bound> gru_jump_;
  std::optional<nets::LstmCell::Bound> lstm_jump_;
  std::optional<nets::GruCell::Bound> intervention_jump_;
  std::optional<nets::GruCell::Bound> gru_field_;
  std::optional<nets::Mlp::Bound> mlp_field_;
  std::optional<nets::Mlp::Bound> intervention_field_;
  std::optional<nets::GruCell::Bound> flow_;
  std::optional<NodeId> decay_rate_;
  NodeId init_z_;
  std::optional<NodeId> init_c_;
  std::optional<NodeId> init_za_;
  nets::OutputHead::Bound head_;
};

/// Event inputs of a trajectory as seen by a model (observed glucose).
std::vector<EventInput> event_inputs(const TrajectoryRecord &r);

/// Pre-update forecasts for events 1..K-1.
std::vector<ForecastDist> predict_trajectory(const Model &m,
                                             const TrajectoryRecord &r);

struct PathPoint {
  double t = 0.0;
  ForecastDist dist;
};

/// Forecast on a regular grid inside every gap, from the post-update state of
/// the preceding event. Grid spacing is 1/points_per_hour hours; each gap's
/// end point is included.
std::vector<PathPoint> forecast_path(const Model &m, const TrajectoryRecord &r,
                                     int points_per_hour);

}  // namespace ctrnn

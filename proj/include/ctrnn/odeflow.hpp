// SPDX-License-Identifier: Apache-2.0
/**
 * @file   odeflow.hpp
 * @brief  Hidden-state evolution between events: fixed-step Euler/RK4 over a
 *         graph-built vector field, neural flows, exponential decay.
 *
 * All solvers build their steps on the caller's Graph, so gradients flow
 * through every stage (BPTT through the solver).
 */
#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <variant>

#include "ctrnn/diffcore.hpp"

namespace ctrnn::odeflow {

enum class Method { euler, rk4 };

std::string_view to_string(Method m);
Method parse_method(std::string_view s);

struct SolveConfig {
  Method method = Method::rk4;
  int steps_per_hour = 4;
  int max_steps = 512;

  void validate() const;
};

/// Maps a state node to its time derivative (same shape).
using VectorField = std::function<NodeId(Graph &, NodeId)>;
/// Maps (state, elapsed hours) to the evolved state.
using FlowMap = std::function<NodeId(Graph &, NodeId, double)>;

/// ceil(gap * steps_per_hour), at least 1, capped at max_steps.
int step_count(double gap, const SolveConfig &cfg);

/// Integrates dz/dt = field(z) from t0 to t1. t1 == t0 returns z0 itself.
NodeId ode_solve(Graph &g, const VectorField &field, NodeId z0, double t0,
                 double t1, const SolveConfig &cfg);

/// z * exp(-rate * gap); `rate` is a node of nonnegative per-dim rates.
NodeId decay_evolve(Graph &g, NodeId rate, NodeId z, double gap);

struct OdeEvolution {
  VectorField field;
  SolveConfig cfg;
};
struct FlowEvolution {
  FlowMap flow;
};
struct DecayEvolution {
  NodeId rate;
};
struct IdentityEvolution {};

using Evolution =
    std::variant<OdeEvolution, FlowEvolution, DecayEvolution, IdentityEvolution>;

NodeId evolve(Graph &g, NodeId z, double gap, const Evolution &mechanism);

}  // namespace ctrnn::odeflow

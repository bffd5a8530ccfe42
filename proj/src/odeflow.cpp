// SPDX-License-Identifier: Apache-2.0
#include "ctrnn/odeflow.hpp"

#include <cmath>

namespace ctrnn::odeflow {

std::string_view to_string(Method m) {
  return m == Method::euler ? "euler" : "rk4";
}

Method parse_method(std::string_view s) {
  if (s == "euler") return Method::euler;
  if (s == "rk4") return Method::rk4;
  throw std::invalid_argument("unknown solver method '" + std::string(s) +
                              "' (expected euler or rk4)");
}

void SolveConfig::validate() const {
  if (steps_per_hour < 1)
    throw std::invalid_argument("solver steps_per_hour must be >= 1");
  if (max_steps < steps_per_hour)
    throw std::invalid_argument("solver max_steps must be >= steps_per_hour");
}

int step_count(double gap, const SolveConfig &cfg) {
  const double raw = std::ceil(gap * cfg.steps_per_hour - 1e-9);
  const int n = raw < 1.0 ? 1 : static_cast<int>(std::min<double>(raw, cfg.max_steps));
  return n;
}

NodeId ode_solve(Graph &g, const VectorField &field, NodeId z0, double t0,
                 double t1, const SolveConfig &cfg) {
  if (t1 < t0)
    throw std::invalid_argument("ode_solve: t1 < t0");
  if (t1 == t0) return z0;
  const int n = step_count(t1 - t0, cfg);
  const double h = (t1 - t0) / n;
  NodeId z = z0;
  for (int step = 0; step < n; ++step) {
    try {
      if (cfg.method == Method::euler) {
        z = g.add(z, g.scale(field(g, z), h));
      } else {
        const NodeId k1 = field(g, z);
        const NodeId k2 = field(g, g.add(z, g.scale(k1, 0.5 * h)));
        const NodeId k3 = field(g, g.add(z, g.scale(k2, 0.5 * h)));
        const NodeId k4 = field(g, g.add(z, g.scale(k3, h)));
        const NodeId mid = g.add(k2, k3);
        const NodeId acc = g.add(g.add(k1, k4), g.scale(mid, 2.0));
        z = g.add(z, g.scale(acc, h / 6.0));
      }
    } catch (const NumericError &e) {
      throw NumericError("ode_solve: step " + std::to_string(step) + ": " +
                         e.what());
    }
  }
  return z;
}

NodeId decay_evolve(Graph &g, NodeId rate, NodeId z, double gap) {
  if (gap < 0.0) throw std::invalid_argument("decay_evolve: negative gap");
  if (gap == 0.0) return z;
  return g.hadamard(z, g.exp(g.scale(rate, -gap)));
}

namespace {
template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;
}  // namespace

NodeId evolve(Graph &g, NodeId z, double gap, const Evolution &mechanism) {
  if (gap < 0.0) throw std::invalid_argument("evolve: negative gap");
  return std::visit(
      overloaded{
          [&](const OdeEvolution &m) {
            return ode_solve(g, m.field, z, 0.0, gap, m.cfg);
          },
          [&](const FlowEvolution &m) {
            return gap == 0.0 ? z : m.flow(g, z, gap);
          },
          [&](const DecayEvolution &m) {
            return decay_evolve(g, m.rate, z, gap);
          },
          [&](const IdentityEvolution &) { return z; },
      },
      mechanism);
}

}  // namespace ctrnn::odeflow

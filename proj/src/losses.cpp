// SPDX-License-Identifier: Apache-2.0
#include "ctrnn/losses.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ctrnn::losses {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

void check_aligned(const Rollout &ro, const TrajectoryRecord &r) {
  if (ro.size() != r.events.size())
    throw std::invalid_argument("loss: rollout has " + std::to_string(ro.size()) +
                                " steps, trajectory has " +
                                std::to_string(r.events.size()) + " events");
}

template <class Term>
NodeId masked_sum(Graph &g, const Rollout &ro, const TrajectoryRecord &r,
                  Term term) {
  check_aligned(ro, r);
  std::optional<NodeId> acc;
  for (const auto &step : ro) {
    const Event &e = r.events[step.event];
    if (!e.target_mask) continue;
    const auto t = term(step, std::log(e.glucose_obs));
    if (!t) continue;
    acc = acc ? g.add(*acc, *t) : *t;
  }
  return acc ? *acc : g.scalar(0.0);
}

}  // namespace

std::string_view to_string(JumpKind k) { return k == JumpKind::nll ? "nll" : "kl"; }

JumpKind parse_jump_kind(std::string_view s) {
  if (s == "nll") return JumpKind::nll;
  if (s == "kl") return JumpKind::kl;
  throw std::invalid_argument("unknown jump_kind '" + std::string(s) + "' (nll, kl)");
}

void LossConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("loss: lambda must be >= 0");
  if (jump_kind == JumpKind::kl && !(obs_error_var > 0.0))
    throw std::invalid_argument("loss: obs_error_var must be > 0 for kl");
}

nlohmann::json LossConfig::to_json() const {
  return {{"lambda", lambda},
          {"jump_kind", std::string(to_string(jump_kind))},
          {"obs_error_var", obs_error_var}};
}

LossConfig LossConfig::from_json(const nlohmann::json &j) {
  LossConfig c;
  for (const auto &[key, value] : j.items()) {
    try {
      if (key == "lambda")
        c.lambda = value.get<double>();
      else if (key == "jump_kind")
        c.jump_kind = parse_jump_kind(value.get<std::string>());
      else if (key == "obs_error_var")
        c.obs_error_var = value.get<double>();
      else
        throw DataError("loss config: unknown field '" + key + "'");
    } catch (const nlohmann::json::exception &) {
      throw DataError("loss config: field '" + key + "' has the wrong type");
    } catch (const std::invalid_argument &e) {
      throw DataError("loss config: field '" + key + "': " + e.what());
    }
  }
  try {
    c.validate();
  } catch (const std::invalid_argument &e) {
    throw DataError(e.what());
  }
  return c;
}

double nll_normal(double y, double mu, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("nll_normal: sigma must be > 0");
  const double z = (y - mu) / sigma;
  return kHalfLog2Pi + std::log(sigma) + 0.5 * z * z;
}

double kl_normal(double mu, double sigma, double y, double var) {
  if (!(sigma > 0.0) || !(var > 0.0))
    throw std::invalid_argument("kl_normal: variances must be > 0");
  const double d = mu - y;
  return 0.5 * std::log(var) - std::log(sigma) + (sigma * sigma + d * d) / (2.0 * var) -
         0.5;
}

NodeId nll_node(Graph &g, double y, NodeId mu, NodeId sigma) {
  const NodeId d = g.add_scalar(mu, -y);
  const NodeId quad = g.scale(g.div(g.square(d), g.square(sigma)), 0.5);
  return g.add_scalar(g.add(g.log(sigma), quad), kHalfLog2Pi);
}

NodeId kl_node(Graph &g, NodeId mu, NodeId sigma, double y, double var) {
  if (!(var > 0.0)) throw std::invalid_argument("kl_node: var must be > 0");
  const NodeId d = g.add_scalar(mu, -y);
  const NodeId quad = g.scale(g.add(g.square(sigma), g.square(d)), 0.5 / var);
  return g.add_scalar(g.sub(quad, g.log(sigma)), 0.5 * std::log(var) - 0.5);
}

NodeId loss_pred(Graph &g, const Rollout &ro, const TrajectoryRecord &r) {
  return masked_sum(g, ro, r, [&](const RolloutStep &s, double y) -> std::optional<NodeId> {
    if (!s.pre) return std::nullopt;
    return nll_node(g, y, s.pre->mu_log, s.pre->sigma_log);
  });
}

NodeId loss_jump(Graph &g, const Rollout &ro, const TrajectoryRecord &r) {
  return masked_sum(g, ro, r, [&](const RolloutStep &s, double y) -> std::optional<NodeId> {
    return nll_node(g, y, s.post.mu_log, s.post.sigma_log);
  });
}

NodeId kl_jump(Graph &g, const Rollout &ro, const TrajectoryRecord &r,
               double obs_error_var) {
  return masked_sum(g, ro, r, [&](const RolloutStep &s, double y) -> std::optional<NodeId> {
    return kl_node(g, s.post.mu_log, s.post.sigma_log, y, obs_error_var);
  });
}

NodeId total_loss(Graph &g, const Rollout &ro, const TrajectoryRecord &r,
                  const LossConfig &cfg) {
  cfg.validate();
  const NodeId pred = loss_pred(g, ro, r);
  if (cfg.lambda == 0.0) return pred;
  const NodeId jump = cfg.jump_kind == JumpKind::nll
                          ? loss_jump(g, ro, r)
                          : kl_jump(g, ro, r, cfg.obs_error_var);
  return g.add(pred, g.scale(jump, cfg.lambda));
}

}  // namespace ctrnn::losses

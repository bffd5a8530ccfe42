// SPDX-License-Identifier: Apache-2.0
/**
 * @file   losses.hpp
 * @brief  Training objectives over a rollout: prediction NLL of the
 *         gap-evolved forecast, jump NLL (or KL) of the post-update forecast,
 *         and their lambda-weighted sum.
 *
 * Targets are log(glucose_obs); events with target_mask = 0 contribute
 * nothing to either term.
 */
#pragma once

#include <nlohmann/json.hpp>

#include "ctrnn/dataset.hpp"
#include "ctrnn/diffcore.hpp"
#include "ctrnn/model.hpp"

namespace ctrnn::losses {

enum class JumpKind { nll, kl };

std::string_view to_string(JumpKind k);
JumpKind parse_jump_kind(std::string_view s);

struct LossConfig {
  double lambda = 0.0;
  JumpKind jump_kind = JumpKind::nll;
  double obs_error_var = 0.01;  // log-glucose units, kl only

  void validate() const;
  nlohmann::json to_json() const;
  static LossConfig from_json(const nlohmann::json &j);
};

/// 0.5 log(2 pi) + log(sigma) + (y - mu)^2 / (2 sigma^2).
double nll_normal(double y, double mu, double sigma);

/// KL(N(mu, sigma^2) || N(y, var)).
double kl_normal(double mu, double sigma, double y, double var);

NodeId nll_node(Graph &g, double y, NodeId mu, NodeId sigma);
NodeId kl_node(Graph &g, NodeId mu, NodeId sigma, double y, double var);

NodeId loss_pred(Graph &g, const Rollout &ro, const TrajectoryRecord &r);
NodeId loss_jump(Graph &g, const Rollout &ro, const TrajectoryRecord &r);
NodeId kl_jump(Graph &g, const Rollout &ro, const TrajectoryRecord &r,
               double obs_error_var);
NodeId total_loss(Graph &g, const Rollout &ro, const TrajectoryRecord &r,
                  const LossConfig &cfg);

}  // namespace ctrnn::losses

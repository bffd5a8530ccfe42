// SPDX-License-Identifier: Apache-2.0
#include "ctrnn/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include <Eigen/Dense>

namespace ctrnn::baseline {

namespace {

struct History {
  double last = 0.0, sum = 0.0, lo = 0.0, hi = 0.0;
  std::size_t n = 0;

  void push(double y) {
    last = y;
    lo = n == 0 ? y : std::min(lo, y);
    hi = n == 0 ? y : std::max(hi, y);
    sum += y;
    ++n;
  }
};

std::vector<double> features(const History &h, const Event &prev, double gap,
                             const FeatureOptions &opt) {
  std::vector<double> x = {h.last, prev.insulin_rate, prev.glucose_input, gap};
  if (opt.summarized) {
    x.push_back(h.sum / static_cast<double>(h.n));
    x.push_back(h.lo);
    x.push_back(h.hi);
  }
  return x;
}

// Calls fn(k, x) for every event k >= 1 that has an observed history.
template <class Fn>
void walk(const TrajectoryRecord &r, const FeatureOptions &opt, Fn fn) {
  History h;
  for (std::size_t k = 1; k < r.events.size(); ++k) {
    const Event &prev = r.events[k - 1];
    if (prev.target_mask) h.push(std::log(prev.glucose_obs));
    fn(k, h.n > 0 ? std::optional(features(h, prev, r.events[k].t - prev.t, opt))
                  : std::nullopt);
  }
}

double dot(std::span<const double> w, std::span<const double> x) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x[i];
  return s;
}

}  // namespace

nlohmann::json LinearFit::to_json() const {
  return {{"format_version", 1},
          {"summarized", features.summarized},
          {"mean", {{"w", mean_w}, {"b", mean_b}}},
          {"variance", {{"w", var_w}, {"b", var_b}}},
          {"ridge_used", ridge_used}};
}

LinearFit LinearFit::from_json(const nlohmann::json &j) {
  LinearFit f;
  f.features.summarized = j.value("summarized", false);
  f.mean_w = j.at("mean").at("w").get<std::vector<double>>();
  f.mean_b = j.at("mean").at("b").get<double>();
  f.var_w = j.at("variance").at("w").get<std::vector<double>>();
  f.var_b = j.at("variance").at("b").get<double>();
  f.ridge_used = j.value("ridge_used", false);
  if (f.mean_w.size() != f.features.dim() || f.var_w.size() != f.features.dim())
    throw DataError("linear fit: weight count does not match the feature set");
  return f;
}

std::vector<Sample> make_samples(const TrajectoryRecord &r,
                                 const FeatureOptions &opt) {
  std::vector<Sample> out;
  walk(r, opt, [&](std::size_t k, std::optional<std::vector<double>> x) {
    const Event &e = r.events[k];
    if (x && e.target_mask) out.push_back({std::move(*x), std::log(e.glucose_obs)});
  });
  return out;
}

std::vector<std::vector<double>> forecast_features(const TrajectoryRecord &r,
                                                   const FeatureOptions &opt) {
  std::vector<std::vector<double>> out;
  walk(r, opt, [&](std::size_t, std::optional<std::vector<double>> x) {
    if (!x) throw DataError("linear forecast: trajectory " + std::to_string(r.traj_id) +
                            " has no observed glucose before its second event");
    out.push_back(std::move(*x));
  });
  return out;
}

OlsResult ols(const std::vector<std::vector<double>> &x, const std::vector<double> &y) {
  if (x.size() != y.size()) throw std::invalid_argument("ols: row count mismatch");
  if (x.size() < 2) throw DataError("ols: need at least 2 samples");
  const Eigen::Index p = static_cast<Eigen::Index>(x[0].size()) + 1;
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd xty = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd row(p);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (static_cast<Eigen::Index>(x[i].size()) + 1 != p)
      throw std::invalid_argument("ols: ragged design");
    row(0) = 1.0;
    for (Eigen::Index c = 1; c < p; ++c) row(c) = x[i][static_cast<std::size_t>(c - 1)];
    xtx.selfadjointView<Eigen::Lower>().rankUpdate(row);
    xty += row * y[i];
  }
  xtx = xtx.selfadjointView<Eigen::Lower>();
  OlsResult out;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(xtx);
  if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-13) {
    std::cerr << "warning: singular linear design, adding ridge " << kRidge << '\n';
    xtx.diagonal().array() += kRidge;
    ldlt.compute(xtx);
    out.ridge_used = true;
  }
  const Eigen::VectorXd beta = ldlt.solve(xty);
  out.b = beta(0);
  out.w.assign(beta.data() + 1, beta.data() + p);
  return out;
}

LinearFit fit_linear(const Dataset &data, const FeatureOptions &opt) {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (const auto &r : data)
    for (auto &s : make_samples(r, opt)) {
      x.push_back(std::move(s.x));
      y.push_back(s.y);
    }
  if (x.size() < 2) throw DataError("fit_linear: fewer than 2 usable samples");
  LinearFit fit;
  fit.features = opt;
  const OlsResult mean = ols(x, y);
  fit.mean_w = mean.w;
  fit.mean_b = mean.b;
  std::vector<double> r2(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = y[i] - (mean.b + dot(mean.w, x[i]));
    r2[i] = e * e;
  }
  const OlsResult var = ols(x, r2);
  fit.var_w = var.w;
  fit.var_b = var.b;
  fit.ridge_used = mean.ridge_used || var.ridge_used;
  return fit;
}

ForecastDist predict_linear(const LinearFit &fit, std::span<const double> x) {
  if (x.size() != fit.mean_w.size())
    throw std::invalid_argument("predict_linear: feature dim " + std::to_string(x.size()) +
                                ", expected " + std::to_string(fit.mean_w.size()));
  const double mu = fit.mean_b + dot(fit.mean_w, x);
  const double var = fit.var_b + dot(fit.var_w, x);
  return {mu, std::sqrt(std::max(var, kVarianceFloor))};
}

metrics::Forecaster linear_forecaster(const LinearFit &fit) {
  return [fit](const TrajectoryRecord &r) {
    std::vector<metrics::Predictive> out;
    for (const auto &x : forecast_features(r, fit.features))
      out.push_back({predict_linear(fit, x), std::nullopt});
    return out;
  };
}

metrics::Forecaster carry_forward_forecaster(double sigma_log) {
  return [sigma_log](const TrajectoryRecord &r) {
    std::vector<metrics::Predictive> out;
    const FeatureOptions opt;
    for (const auto &x : forecast_features(r, opt))
      out.push_back({{x[0], sigma_log}, std::nullopt});
    return out;
  };
}

metrics::GaussianMgdl oracle_gaussian(const TrajectoryRecord &r, std::size_t k,
                                      const sim::SimConfig &cfg) {
  if (!r.params) throw DataError("oracle: trajectory " + std::to_string(r.traj_id) +
                                 " carries no SDE parameters");
  if (k == 0 || k >= r.events.size()) throw std::out_of_range("oracle: event index");
  const Event &prev = r.events[k - 1];
  const auto f = sim::oracle_forecast(prev.glucose_true, *r.params,
                                      sim::net_input(*r.params, prev, cfg),
                                      r.events[k].t - prev.t);
  return {f.mu, f.sd};
}

ForecastDist oracle_dist(const TrajectoryRecord &r, std::size_t k,
                         const sim::SimConfig &cfg) {
  const auto f = oracle_gaussian(r, k, cfg);
  if (!(f.mu > 0.0)) throw NumericError("oracle: nonpositive mean forecast");
  const double s2 = std::log1p((f.sd * f.sd) / (f.mu * f.mu));
  return {std::log(f.mu) - 0.5 * s2, std::sqrt(std::max(s2, kVarianceFloor))};
}

metrics::Forecaster oracle_forecaster(const sim::SimConfig &cfg) {
  return [cfg](const TrajectoryRecord &r) {
    std::vector<metrics::Predictive> out;
    for (std::size_t k = 1; k < r.events.size(); ++k)
      out.push_back({oracle_dist(r, k, cfg), oracle_gaussian(r, k, cfg)});
    return out;
  };
}

}  // namespace ctrnn::baseline

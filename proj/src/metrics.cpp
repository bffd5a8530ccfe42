// SPDX-License-Identifier: Apache-2.0
#include "ctrnn/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <stdexcept>

#include "ctrnn/losses.hpp"
#include "ctrnn/parallel.hpp"

namespace ctrnn::metrics {

namespace {

constexpr double kZ95 = 1.959963984540054;

std::string fmt(const char *spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

double crps_normal(double mu, double sigma, double y) {
  if (sigma < 0.0) throw std::invalid_argument("crps_normal: sigma must be >= 0");
  if (sigma == 0.0) return std::abs(y - mu);
  const double z = (y - mu) / sigma;
  return sigma * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) -
                  1.0 / std::sqrt(std::numbers::pi));
}

double log_score(double mu, double sigma, double y) {
  return losses::nll_normal(y, mu, sigma);
}

double interval_score(double l, double u, double y, double alpha) {
  if (l > u) throw std::invalid_argument("interval_score: lower bound above upper");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("interval_score: alpha must be in (0, 1)");
  double s = u - l;
  if (y < l) s += 2.0 / alpha * (l - y);
  if (y > u) s += 2.0 / alpha * (y - u);
  return s;
}

double crps_gaussian_log(double mu, double sd, double y_log) {
  if (!(sd > 0.0)) return std::abs(y_log - std::log(mu));
  using boost::math::quadrature::gauss_kronrod;
  const double lo = std::log(std::max(mu - 12.0 * sd, 1e-3 * mu));
  const double hi = std::log(mu + 12.0 * sd);
  auto cdf = [&](double z) { return normal_cdf((std::exp(z) - mu) / sd); };
  double total = 0.0;
  const double x = std::clamp(y_log, lo, hi);
  if (x > lo)
    total += gauss_kronrod<double, 31>::integrate(
        [&](double z) { const double p = cdf(z); return p * p; }, lo, x, 15, 1e-12);
  if (x < hi)
    total += gauss_kronrod<double, 31>::integrate(
        [&](double z) { const double q = 1.0 - cdf(z); return q * q; }, x, hi, 15, 1e-12);
  // Outcomes beyond the integration window: the forecast CDF is 0 or 1 there.
  if (y_log < lo) total += lo - y_log;
  if (y_log > hi) total += y_log - hi;
  return total;
}

double crps_of(const ScoredForecast &f) {
  const double y = std::log(f.y_true_mgdl);
  if (f.gaussian) return crps_gaussian_log(f.gaussian->mu, f.gaussian->sd, y);
  return crps_normal(f.mu_log, f.sigma_log, y);
}

double log_score_of(const ScoredForecast &f) {
  const double y = std::log(f.y_true_mgdl);
  if (f.gaussian) {
    // Density of log G at y: phi((e^y - mu) / sd) e^y / sd.
    const double z = (f.y_true_mgdl - f.gaussian->mu) / f.gaussian->sd;
    return 0.5 * std::log(2.0 * std::numbers::pi) + 0.5 * z * z +
           std::log(f.gaussian->sd) - y;
  }
  return log_score(f.mu_log, f.sigma_log, y);
}

double pit_of(const ScoredForecast &f) {
  if (f.gaussian) return normal_cdf((f.y_true_mgdl - f.gaussian->mu) / f.gaussian->sd);
  return normal_cdf((std::log(f.y_true_mgdl) - f.mu_log) / f.sigma_log);
}

double mean_mgdl_of(const ScoredForecast &f) {
  if (f.gaussian) return f.gaussian->mu;
  return std::exp(f.mu_log + 0.5 * f.sigma_log * f.sigma_log);
}

std::pair<double, double> interval95_of(const ScoredForecast &f) {
  if (f.gaussian)
    return {std::max(0.0, f.gaussian->mu - kZ95 * f.gaussian->sd),
            f.gaussian->mu + kZ95 * f.gaussian->sd};
  return {std::exp(f.mu_log - kZ95 * f.sigma_log), std::exp(f.mu_log + kZ95 * f.sigma_log)};
}

double pit_variance(std::span<const ScoredForecast> f) {
  if (f.size() < 2) throw std::invalid_argument("pit_variance: need at least 2 forecasts");
  double mean = 0.0, m2 = 0.0;
  std::size_t n = 0;
  for (const auto &s : f) {
    const double p = pit_of(s);
    ++n;
    const double d = p - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (p - mean);
  }
  return m2 / static_cast<double>(n - 1);
}

PointScores point_scores(std::span<const ScoredForecast> f) {
  if (f.empty()) throw std::invalid_argument("point_scores: no forecasts");
  double se = 0.0, inside = 0.0, is = 0.0;
  for (const auto &s : f) {
    const double point = mean_mgdl_of(s);
    se += (point - s.y_true_mgdl) * (point - s.y_true_mgdl);
    const auto [l, u] = interval95_of(s);
    if (s.y_true_mgdl >= l && s.y_true_mgdl <= u) inside += 1.0;
    is += interval_score(l, u, s.y_true_mgdl, 0.05);
  }
  const double n = static_cast<double>(f.size());
  return {std::sqrt(se / n), 100.0 * inside / n, is / n};
}

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::rmse: return "rmse";
    case Metric::crps: return "crps";
    case Metric::logs: return "logs";
    case Metric::var_pit: return "var_pit";
    case Metric::coverage: return "coverage";
    case Metric::interval_score: return "interval_score";
  }
  return "?";
}

double MetricSet::get(Metric m) const {
  switch (m) {
    case Metric::rmse: return rmse;
    case Metric::crps: return crps;
    case Metric::logs: return logs;
    case Metric::var_pit: return var_pit;
    case Metric::coverage: return coverage;
    case Metric::interval_score: return interval_score;
  }
  return 0.0;
}

nlohmann::json MetricSet::to_json() const {
  nlohmann::json j;
  for (auto m : kMetrics) j[std::string(to_string(m))] = get(m);
  j["crps_se"] = crps_se;
  j["n_forecasts"] = n_forecasts;
  return j;
}

MetricSet MetricSet::from_json(const nlohmann::json &j) {
  MetricSet s;
  s.rmse = j.at("rmse").get<double>();
  s.crps = j.at("crps").get<double>();
  s.logs = j.at("logs").get<double>();
  s.var_pit = j.at("var_pit").get<double>();
  s.coverage = j.at("coverage").get<double>();
  s.interval_score = j.at("interval_score").get<double>();
  s.crps_se = j.value("crps_se", 0.0);
  s.n_forecasts = j.at("n_forecasts").get<std::size_t>();
  return s;
}

MetricSet score(std::span<const ScoredForecast> f) {
  if (f.size() < 2) throw std::invalid_argument("score: need at least 2 forecasts");
  MetricSet s;
  s.n_forecasts = f.size();
  double crps_sum = 0.0, crps_sq = 0.0, logs_sum = 0.0;
  for (const auto &x : f) {
    const double c = crps_of(x);
    crps_sum += c;
    crps_sq += c * c;
    logs_sum += log_score_of(x);
  }
  const double n = static_cast<double>(f.size());
  s.crps = crps_sum / n;
  s.crps_se = std::sqrt(std::max(0.0, crps_sq / n - s.crps * s.crps) / (n - 1.0));
  s.logs = logs_sum / n;
  s.var_pit = pit_variance(f);
  const PointScores p = point_scores(f);
  s.rmse = p.rmse;
  s.coverage = p.coverage;
  s.interval_score = p.interval_score;
  return s;
}

Stat summarize(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("summarize: no values");
  Stat s{0.0, 0.0, v[0], v[0]};
  for (double x : v) {
    s.mean += x;
    s.min = std::min(s.min, x);
    s.max = std::max(s.max, x);
  }
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

Stat ScoreReport::stat(Metric m) const {
  std::vector<double> v;
  for (const auto &r : runs) v.push_back(r.get(m));
  return summarize(v);
}

std::size_t ScoreReport::n_forecasts() const {
  std::size_t n = 0;
  for (const auto &r : runs) n += r.n_forecasts;
  return n;
}

nlohmann::json ScoreReport::to_json() const {
  nlohmann::json j;
  j["model"] = model;
  j["n_forecasts"] = n_forecasts();
  nlohmann::json summary;
  for (auto m : kMetrics) {
    const Stat s = stat(m);
    summary[std::string(to_string(m))] = {
        {"mean", s.mean}, {"std", s.std}, {"min", s.min}, {"max", s.max}};
  }
  const Stat ls = stat(Metric::logs);
  summary["log_density"] = {{"mean", -ls.mean}, {"std", ls.std},
                            {"min", -ls.max}, {"max", -ls.min}};
  j["summary"] = summary;
  j["runs"] = nlohmann::json::array();
  for (const auto &r : runs) j["runs"].push_back(r.to_json());
  return j;
}

ScoreReport ScoreReport::from_json(const nlohmann::json &j) {
  ScoreReport r;
  r.model = j.at("model").get<std::string>();
  for (const auto &run : j.at("runs")) r.runs.push_back(MetricSet::from_json(run));
  if (r.runs.empty()) throw DataError("report for " + r.model + " has no runs");
  return r;
}

std::string table_header() {
  return "Model,RMSE (mg/dL),CRPS (x100),logS (x100),Var PIT (x100),"
         "Empirical coverage (%),Interval score";
}

std::string table_row(const ScoreReport &r) {
  auto cell = [&](Metric m, double scale, const char *spec) {
    const Stat s = r.stat(m);
    return fmt(spec, s.mean * scale) + " (" + fmt(spec, s.std * scale) + ")";
  };
  return r.model + "," + cell(Metric::rmse, 1.0, "%.1f") + "," +
         cell(Metric::crps, 100.0, "%.2f") + "," + cell(Metric::logs, 100.0, "%.1f") +
         "," + cell(Metric::var_pit, 100.0, "%.2f") + "," +
         cell(Metric::coverage, 1.0, "%.1f") + "," +
         cell(Metric::interval_score, 1.0, "%.1f");
}

void write_table_csv(std::span<const ScoreReport> reports,
                     const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << table_header() << '\n';
  for (const auto &r : reports) out << table_row(r) << '\n';
}

void write_report_json(std::span<const ScoreReport> reports,
                       const std::filesystem::path &path) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["reports"] = nlohmann::json::array();
  for (const auto &r : reports) j["reports"].push_back(r.to_json());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

std::vector<ScoreReport> read_report_json(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<ScoreReport> out;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto &r : j.at("reports")) out.push_back(ScoreReport::from_json(r));
  } catch (const nlohmann::json::exception &e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return out;
}

Forecaster model_forecaster(const Model &m) {
  return [&m](const TrajectoryRecord &r) {
    std::vector<Predictive> out;
    for (const auto &d : predict_trajectory(m, r)) out.push_back({d, std::nullopt});
    return out;
  };
}

std::vector<ScoredForecast> collect(const Forecaster &f, const Dataset &data,
                                    Truth truth) {
  std::vector<std::vector<ScoredForecast>> per(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    const TrajectoryRecord &r = data[i];
    if (r.events.size() < 2) return;
    const auto dists = f(r);
    if (dists.size() + 1 != r.events.size())
      throw std::logic_error("forecaster returned a misaligned forecast list");
    for (std::size_t k = 1; k < r.events.size(); ++k) {
      const Event &e = r.events[k];
      if (truth == Truth::observed && !e.target_mask) continue;
      const double y = truth == Truth::latent ? e.glucose_true : e.glucose_obs;
      const Predictive &p = dists[k - 1];
      per[i].push_back({p.lognormal.mu_log, p.lognormal.sigma_log, y,
                        e.t - r.events[k - 1].t, p.gaussian});
    }
  });
  std::vector<ScoredForecast> out;
  for (auto &v : per) out.insert(out.end(), v.begin(), v.end());
  return out;
}

MetricSet evaluate(const Forecaster &f, const Dataset &data, Truth truth) {
  const auto scored = collect(f, data, truth);
  if (scored.size() < 2) throw DataError("evaluate: test set yields fewer than 2 forecasts");
  return score(scored);
}

}  // namespace ctrnn::metrics

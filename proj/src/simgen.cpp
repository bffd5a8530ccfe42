// SPDX-License-Identifier: Apache-2.0
#include "ctrnn/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ctrnn/diffcore.hpp"
#include "ctrnn/parallel.hpp"

namespace ctrnn::sim {

namespace {

enum Stream : std::uint64_t {
  kParams = 0,
  kDiffusion = 1,
  kMeasurement = 2,
  kObsNoise = 3,
  kRegime = 4,
  kStreamsPerAttempt = 8,
};

constexpr double kMinGap = 5.0 / 60.0;
constexpr int kMaxAttempts = 100;

template <typename T>
void read_field(const nlohmann::json &j, const char *name, T &out) {
  if (!j.contains(name)) return;
  try {
    out = j.at(name).get<T>();
  } catch (const nlohmann::json::exception &) {
    throw DataError(std::string("simulation config: field '") + name +
                    "' has the wrong type");
  }
}

}  // namespace

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::standard: return "standard";
    case Scenario::measurement_error: return "measurement_error";
    case Scenario::nonstationary_beta: return "nonstationary_beta";
  }
  return "standard";
}

Scenario parse_scenario(std::string_view s) {
  if (s == "standard") return Scenario::standard;
  if (s == "measurement_error") return Scenario::measurement_error;
  if (s == "nonstationary_beta") return Scenario::nonstationary_beta;
  throw DataError("simulation config: field 'scenario' must be one of "
                  "standard, measurement_error, nonstationary_beta");
}

void SimConfig::validate() const {
  auto fail = [](const char *f, const char *why) {
    throw DataError(std::string("simulation config: field '") + f + "' " + why);
  };
  if (n_trajectories == 0) fail("n_trajectories", "must be positive");
  if (!(horizon > 0.0)) fail("horizon", "must be positive");
  if (!(dt > 0.0)) fail("dt", "must be positive");
  const double steps = horizon / dt;
  if (std::abs(steps - std::round(steps)) > 1e-9 * steps)
    fail("dt", "must divide horizon into an integral number of steps");
  if (!(error_sd >= 0.0)) fail("error_sd", "must be >= 0");
  if (!(glucose_input_rate >= 0.0)) fail("glucose_input_rate", "must be >= 0");
  if (!(max_insulin_rate > 0.0)) fail("max_insulin_rate", "must be positive");
  if (!(beta_switch_mean_hours > 0.0))
    fail("beta_switch_mean_hours", "must be positive");
  if (!(beta_low_factor >= 0.0)) fail("beta_low_factor", "must be >= 0");
}

nlohmann::json SimConfig::to_json() const {
  return {{"n_trajectories", n_trajectories},
          {"horizon", horizon},
          {"dt", dt},
          {"seed", seed},
          {"scenario", std::string(sim::to_string(scenario))},
          {"error_sd", error_sd},
          {"glucose_input_rate", glucose_input_rate},
          {"glucose_effect", glucose_effect},
          {"max_insulin_rate", max_insulin_rate},
          {"beta_switch_mean_hours", beta_switch_mean_hours},
          {"beta_low_factor", beta_low_factor},
          {"store_dense", store_dense}};
}

SimConfig SimConfig::from_json(const nlohmann::json &j) {
  if (!j.is_object()) throw DataError("simulation config: expected an object");
  static const char *known[] = {
      "n_trajectories", "horizon",          "dt",
      "seed",           "scenario",         "error_sd",
      "glucose_input_rate", "glucose_effect", "max_insulin_rate",
      "beta_switch_mean_hours", "beta_low_factor", "store_dense"};
  for (const auto &[key, _] : j.items()) {
    if (std::find_if(std::begin(known), std::end(known),
                     [&](const char *k) { return key == k; }) == std::end(known))
      throw DataError("simulation config: unknown field '" + key + "'");
  }
  SimConfig c;
  read_field(j, "n_trajectories", c.n_trajectories);
  read_field(j, "horizon", c.horizon);
  read_field(j, "dt", c.dt);
  read_field(j, "seed", c.seed);
  std::string scenario(sim::to_string(c.scenario));
  read_field(j, "scenario", scenario);
  c.scenario = parse_scenario(scenario);
  read_field(j, "error_sd", c.error_sd);
  read_field(j, "glucose_input_rate", c.glucose_input_rate);
  read_field(j, "glucose_effect", c.glucose_effect);
  read_field(j, "max_insulin_rate", c.max_insulin_rate);
  read_field(j, "beta_switch_mean_hours", c.beta_switch_mean_hours);
  read_field(j, "beta_low_factor", c.beta_low_factor);
  read_field(j, "store_dense", c.store_dense);
  c.validate();
  return c;
}

Rng stream_rng(std::uint64_t seed, std::int64_t traj_id, std::uint64_t stream) {
  const auto id = static_cast<std::uint64_t>(traj_id);
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id),
                    static_cast<std::uint32_t>(id >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

SdeParams sample_params(Rng &rng) {
  auto normal = [&](double m, double s) {
    return std::normal_distribution<double>(m, s)(rng);
  };
  SdeParams p;
  p.g0 = normal(140.0, 20.0);
  p.gb = normal(140.0, 5.0);
  do p.gamma = normal(0.5, 0.01); while (p.gamma <= 0.0);
  do p.sigma = normal(20.0, 2.0); while (p.sigma <= 0.0);
  p.beta = normal(50.0, 5.0);
  return p;
}

double treatment_policy(double glucose) {
  if (glucose < 140.0) return 0.0;
  if (glucose < 160.0) return 3.0;
  if (glucose < 200.0) return 10.0;
  return 20.0;
}

double median_measurement_gap(double glucose, double insulin_rate) {
  const double base = insulin_rate > 0.0 ? 3.0 : 5.0;
  const double width = glucose < 80.0 ? 50.0 : 140.0;
  const double d = (glucose - 120.0) / width;
  return base * std::exp(-d * d);
}

double next_measurement_gap(double glucose, double insulin_rate,
                            double remaining, Rng &rng) {
  const double eps = std::normal_distribution<double>(0.0, 1.0)(rng);
  const double gap = median_measurement_gap(glucose, insulin_rate) *
                     std::exp(0.2 * eps);
  return std::clamp(gap, std::min(kMinGap, remaining), remaining);
}

OracleForecast oracle_forecast(double g_now, const SdeParams &params, double u,
                               double gap) {
  if (gap < 0.0) throw std::invalid_argument("oracle_forecast: negative gap");
  const double eq = params.gb + u / params.gamma;
  const double decay = std::exp(-params.gamma * gap);
  const double var_frac = -std::expm1(-2.0 * params.gamma * gap);
  return {eq + (g_now - eq) * decay, params.sigma * std::sqrt(var_frac)};
}

double net_input(const SdeParams &params, const Event &e, const SimConfig &cfg) {
  const double beta = e.insulin_sensitivity > 0.0 ? e.insulin_sensitivity : params.beta;
  return -beta * e.insulin_rate / cfg.max_insulin_rate +
         cfg.glucose_effect * e.glucose_input;
}

namespace {

// One attempt at a trajectory; returns false when the path degenerates.
bool try_trajectory(const SdeParams &params, const SimConfig &cfg,
                    std::int64_t traj_id, int attempt, TrajectoryRecord &out) {
  const std::uint64_t base = static_cast<std::uint64_t>(attempt) * kStreamsPerAttempt;
  Rng diffusion = stream_rng(cfg.seed, traj_id, base + kDiffusion);
  Rng measurement = stream_rng(cfg.seed, traj_id, base + kMeasurement);
  Rng obs_noise = stream_rng(cfg.seed, traj_id, base + kObsNoise);
  Rng regime = stream_rng(cfg.seed, traj_id, base + kRegime);
  // One distribution per engine: normal_distribution caches a second draw.
  std::normal_distribution<double> diffusion_normal(0.0, 1.0);
  std::normal_distribution<double> noise_normal(0.0, 1.0);
  std::exponential_distribution<double> holding(1.0 / cfg.beta_switch_mean_hours);

  out = TrajectoryRecord{};
  out.traj_id = traj_id;
  out.params = params;
  if (cfg.store_dense) out.dense_truth = DenseTruth{};

  const bool switching = cfg.scenario == Scenario::nonstationary_beta;
  bool low_regime = false;
  double next_switch = switching ? holding(regime) : cfg.horizon * 2.0 + 1.0;
  const double diffusion_scale = std::sqrt(2.0 * params.gamma) * params.sigma;

  double g = params.g0;
  double t = 0.0;
  if (out.dense_truth) {
    out.dense_truth->t.push_back(t);
    out.dense_truth->glucose.push_back(g);
  }
  for (;;) {
    if (!std::isfinite(g) || g <= 0.0) return false;
    Event e;
    e.t = t;
    e.glucose_true = g;
    e.glucose_obs = g;
    if (cfg.scenario == Scenario::measurement_error && cfg.error_sd > 0.0)
      e.glucose_obs = g + cfg.error_sd * noise_normal(obs_noise);
    if (!(e.glucose_obs > 0.0)) return false;
    e.insulin_rate = treatment_policy(g);
    e.glucose_input = cfg.glucose_input_rate;
    e.target_mask = 1;
    const double beta_now = low_regime ? params.beta * cfg.beta_low_factor : params.beta;
    e.insulin_sensitivity = beta_now;
    out.events.push_back(e);

    const double remaining = cfg.horizon - t;
    if (remaining <= 1e-12) break;
    const double gap = next_measurement_gap(g, e.insulin_rate, remaining, measurement);
    const double t_next = gap >= remaining ? cfg.horizon : t + gap;

    const int n = std::max(1, static_cast<int>(std::ceil((t_next - t) / cfg.dt - 1e-9)));
    const double h = (t_next - t) / n;
    const double sqrt_h = std::sqrt(h);
    for (int s = 0; s < n; ++s) {
      const double ts = t + s * h;
      while (switching && ts >= next_switch) {
        low_regime = !low_regime;
        next_switch += holding(regime);
      }
      const double beta = low_regime ? params.beta * cfg.beta_low_factor : params.beta;
      const double drift = -params.gamma * (g - params.gb) -
                           beta * e.insulin_rate / cfg.max_insulin_rate +
                           cfg.glucose_effect * e.glucose_input;
      g += drift * h + diffusion_scale * sqrt_h * diffusion_normal(diffusion);
      if (!std::isfinite(g)) return false;
      if (out.dense_truth) {
        out.dense_truth->t.push_back(ts + h);
        out.dense_truth->glucose.push_back(g);
      }
    }
    while (switching && t_next >= next_switch) {
      low_regime = !low_regime;
      next_switch += holding(regime);
    }
    t = t_next;
  }
  return true;
}

}  // namespace

TrajectoryRecord simulate_trajectory(const SdeParams &params,
                                     const SimConfig &cfg, std::int64_t traj_id,
                                     std::size_t *rejected) {
  TrajectoryRecord rec;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    if (try_trajectory(params, cfg, traj_id, attempt, rec)) return rec;
    if (rejected) ++*rejected;
  }
  throw NumericError("trajectory " + std::to_string(traj_id) +
                     ": no valid path after repeated resampling");
}

SimResult simulate_dataset(const SimConfig &cfg, std::int64_t first_id) {
  cfg.validate();
  SimResult result;
  result.records.resize(cfg.n_trajectories);
  std::vector<std::size_t> rejected(cfg.n_trajectories, 0);
  parallel_for(cfg.n_trajectories, [&](std::size_t i) {
    const std::int64_t id = first_id + static_cast<std::int64_t>(i);
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
      Rng prng = stream_rng(cfg.seed, id,
                            static_cast<std::uint64_t>(attempt) * kStreamsPerAttempt + kParams);
      const SdeParams p = sample_params(prng);
      if (try_trajectory(p, cfg, id, attempt, result.records[i])) return;
      ++rejected[i];
    }
    throw NumericError("trajectory " + std::to_string(id) +
                       ": no valid path after repeated resampling");
  });
  for (auto r : rejected) result.rejected += r;
  return result;
}

SimSummary summarize(const Dataset &records) {
  SimSummary s;
  std::size_t n_events = 0, n_gaps = 0, n_insulin = 0;
  double gap_total = 0.0;
  for (const auto &r : records) {
    const std::size_t k = r.events.size();
    if (s.events_histogram.size() <= k) s.events_histogram.resize(k + 1, 0);
    ++s.events_histogram[k];
    n_events += k;
    for (std::size_t i = 0; i < k; ++i) {
      if (r.events[i].insulin_rate > 0.0) ++n_insulin;
      if (i == 0) continue;
      const double gap = r.events[i].t - r.events[i - 1].t;
      gap_total += gap;
      ++n_gaps;
      const auto bin = static_cast<std::size_t>(gap / 0.5);
      if (s.gap_histogram.size() <= bin) s.gap_histogram.resize(bin + 1, 0);
      ++s.gap_histogram[bin];
    }
  }
  if (!records.empty()) s.mean_events = double(n_events) / records.size();
  if (n_gaps) s.mean_gap = gap_total / n_gaps;
  if (n_events) s.insulin_fraction = double(n_insulin) / n_events;
  return s;
}

void write_summary_csv(const SimSummary &s, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "histogram,bin_lo,bin_hi,count\n";
  for (std::size_t k = 0; k < s.events_histogram.size(); ++k)
    out << "events_per_trajectory," << k << ',' << k + 1 << ','
        << s.events_histogram[k] << '\n';
  for (std::size_t b = 0; b < s.gap_histogram.size(); ++b)
    out << "gap_hours," << b * 0.5 << ',' << (b + 1) * 0.5 << ','
        << s.gap_histogram[b] << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace ctrnn::sim

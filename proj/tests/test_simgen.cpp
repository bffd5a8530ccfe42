#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "ctrnn/dataset.hpp"
#include "ctrnn/simgen.hpp"

using namespace ctrnn;
using namespace ctrnn::sim;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string &name) {
  const fs::path p = fs::temp_directory_path() / ("ctrnn_simgen_" + name);
  fs::create_directories(p);
  return p;
}

// Sample SD of the dense path after a burn-in.
double path_sd(const TrajectoryRecord &r, double burn_in) {
  double n = 0, mean = 0, m2 = 0;
  const auto &d = *r.dense_truth;
  for (std::size_t i = 0; i < d.t.size(); ++i) {
    if (d.t[i] < burn_in) continue;
    n += 1;
    const double delta = d.glucose[i] - mean;
    mean += delta / n;
    m2 += delta * (d.glucose[i] - mean);
  }
  return std::sqrt(m2 / (n - 1));
}

}  // namespace

TEST_CASE("prior means") {
  Rng rng(2024);
  const int n = 20000;
  double gb = 0, gamma = 0;
  for (int i = 0; i < n; ++i) {
    const SdeParams p = sample_params(rng);
    CHECK(p.gamma > 0.0);
    CHECK(p.sigma > 0.0);
    gb += p.gb;
    gamma += p.gamma;
  }
  CHECK(std::abs(gb / n - 140.0) < 0.5);
  CHECK(std::abs(gamma / n - 0.5) < 0.01);
}

TEST_CASE("parameter draws are seed-determined") {
  Rng a = stream_rng(5, 17, 0), b = stream_rng(5, 17, 0), c = stream_rng(5, 18, 0);
  const SdeParams pa = sample_params(a), pb = sample_params(b), pc = sample_params(c);
  CHECK(pa == pb);
  CHECK_FALSE(pa == pc);
}

TEST_CASE("treatment policy table") {
  CHECK(treatment_policy(100.0) == 0.0);
  CHECK(treatment_policy(139.9) == 0.0);
  CHECK(treatment_policy(140.0) == 3.0);
  CHECK(treatment_policy(150.0) == 3.0);
  CHECK(treatment_policy(160.0) == 10.0);
  CHECK(treatment_policy(199.9) == 10.0);
  CHECK(treatment_policy(200.0) == 20.0);
  CHECK(treatment_policy(250.0) == 20.0);
}

TEST_CASE("median measurement gap") {
  CHECK(median_measurement_gap(120.0, 0.0) == 5.0);
  CHECK(median_measurement_gap(120.0, 3.0) == 3.0);
  // Further from 120 and under insulin means more frequent measurement.
  for (double m : {0.0, 3.0}) {
    double prev = median_measurement_gap(120.0, m);
    for (double g = 125.0; g <= 400.0; g += 5.0) {
      const double gap = median_measurement_gap(g, m);
      CHECK(gap < prev);
      prev = gap;
    }
    prev = median_measurement_gap(120.0, m);
    for (double g = 115.0; g >= 20.0; g -= 5.0) {
      const double gap = median_measurement_gap(g, m);
      CHECK(gap <= prev);
      prev = gap;
    }
  }
  for (double g = 40.0; g <= 400.0; g += 10.0)
    CHECK(median_measurement_gap(g, 10.0) < median_measurement_gap(g, 0.0));
}

TEST_CASE("measurement gap is clamped to the remaining horizon") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double gap = next_measurement_gap(300.0, 20.0, 2.0, rng);
    CHECK(gap >= 5.0 / 60.0);
    CHECK(gap <= 2.0);
  }
  CHECK(next_measurement_gap(120.0, 0.0, 0.01, rng) == 0.01);
}

TEST_CASE("oracle transition density") {
  SdeParams p;
  p.gamma = 0.5;
  p.sigma = 20.0;
  p.gb = 140.0;
  const OracleForecast zero = oracle_forecast(180.0, p, 0.0, 0.0);
  CHECK(zero.mu == 180.0);
  CHECK(zero.sd == 0.0);
  const OracleForecast far = oracle_forecast(180.0, p, 0.0, 1e4);
  CHECK(far.mu == doctest::Approx(140.0).epsilon(1e-12));
  CHECK(far.sd == doctest::Approx(20.0).epsilon(1e-12));
  const OracleForecast two = oracle_forecast(180.0, p, 0.0, 2.0);
  CHECK(two.mu == doctest::Approx(140.0 + 40.0 * std::exp(-1.0)).epsilon(1e-14));
  CHECK(two.mu == doctest::Approx(154.72).epsilon(1e-4));
  CHECK(two.sd == doctest::Approx(20.0 * std::sqrt(1.0 - std::exp(-2.0))).epsilon(1e-14));
  CHECK(two.sd == doctest::Approx(18.60).epsilon(1e-3));
  double prev = 0.0;
  for (double gap = 0.1; gap < 20.0; gap += 0.1) {
    const double sd = oracle_forecast(150.0, p, -2.0, gap).sd;
    CHECK(sd > prev);
    prev = sd;
  }
  CHECK_THROWS(oracle_forecast(150.0, p, 0.0, -1.0));
}

TEST_CASE("oracle matches the simulated transition by Monte Carlo") {
  SimConfig cfg;
  cfg.dt = 0.01;
  cfg.horizon = 2.0;
  SdeParams p;
  p.g0 = 190.0;
  p.beta = 50.0;
  // One gap of length two hours at the start of each path.
  const double m = treatment_policy(p.g0);
  const OracleForecast o = oracle_forecast(p.g0, p, -p.beta * m / cfg.max_insulin_rate, 2.0);
  const int n = 4000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    Rng diffusion(1000 + i);
    std::normal_distribution<double> z(0.0, 1.0);
    double g = p.g0;
    for (int k = 0; k < 200; ++k)
      g += (-p.gamma * (g - p.gb) - p.beta * m / 20.0) * 0.01 +
           std::sqrt(2.0 * p.gamma) * p.sigma * 0.1 * z(diffusion);
    s += g;
    s2 += g * g;
  }
  const double mean = s / n, sd = std::sqrt(s2 / n - mean * mean);
  CHECK(std::abs(mean - o.mu) < 4.0 * o.sd / std::sqrt(n));
  CHECK(std::abs(sd / o.sd - 1.0) < 0.05);
}

TEST_CASE("fixed point without noise and drift inputs") {
  SimConfig cfg;
  cfg.store_dense = true;
  SdeParams p;
  p.sigma = 1e-300;
  p.beta = 0.0;
  p.g0 = p.gb = 140.0;
  cfg.glucose_input_rate = 0.0;
  const TrajectoryRecord r = simulate_trajectory(p, cfg, 3);
  for (double g : r.dense_truth->glucose) CHECK(g == doctest::Approx(140.0).epsilon(1e-12));
}

TEST_CASE("stationary spread matches sigma") {
  SimConfig cfg;
  cfg.horizon = 2000.0;
  cfg.store_dense = true;
  SdeParams p;
  p.beta = 0.0;
  p.sigma = 20.0;
  p.g0 = p.gb = 140.0;
  const TrajectoryRecord r = simulate_trajectory(p, cfg, 1);
  CHECK(std::abs(path_sd(r, 20.0) / p.sigma - 1.0) < 0.1);
}

TEST_CASE("trajectory invariants") {
  SimConfig cfg;
  cfg.n_trajectories = 300;
  cfg.seed = 9;
  const SimResult res = simulate_dataset(cfg);
  REQUIRE(res.records.size() == 300);
  for (const auto &r : res.records) {
    CHECK_NOTHROW(validate_record(r, cfg.horizon));
    REQUIRE(r.events.size() >= 2);
    CHECK(r.events.front().t == 0.0);
    CHECK(r.events.back().t == cfg.horizon);
    for (const auto &e : r.events) {
      CHECK(e.glucose_obs > 0.0);
      CHECK(e.glucose_obs == e.glucose_true);
      CHECK((e.insulin_rate == 0.0 || e.insulin_rate == 3.0 || e.insulin_rate == 10.0 ||
             e.insulin_rate == 20.0));
      CHECK(e.insulin_rate == treatment_policy(e.glucose_true));
    }
  }
}

TEST_CASE("mean observation count per day") {
  SimConfig cfg;
  cfg.n_trajectories = 1000;
  const SimSummary s = summarize(simulate_dataset(cfg).records);
  CHECK(s.mean_events >= 6.5);
  CHECK(s.mean_events <= 8.5);
  CHECK(std::abs(s.mean_events - 7.5) < 0.5);
  CHECK(s.insulin_fraction > 0.0);
  CHECK(s.insulin_fraction < 1.0);
}

TEST_CASE("dataset is independent of the thread count") {
  SimConfig cfg;
  cfg.n_trajectories = 64;
  cfg.seed = 3;
  setenv("CTRNN_THREADS", "1", 1);
  const Dataset one = simulate_dataset(cfg).records;
  setenv("CTRNN_THREADS", "4", 1);
  const Dataset four = simulate_dataset(cfg).records;
  unsetenv("CTRNN_THREADS");
  CHECK(one == four);
  cfg.seed = 4;
  CHECK_FALSE(simulate_dataset(cfg).records == one);
}

TEST_CASE("measurement error leaves the latent path untouched") {
  SimConfig cfg;
  cfg.n_trajectories = 50;
  const Dataset clean = simulate_dataset(cfg).records;
  cfg.scenario = Scenario::measurement_error;
  const Dataset noisy = simulate_dataset(cfg).records;
  REQUIRE(clean.size() == noisy.size());
  double diff2 = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    REQUIRE(clean[i].events.size() == noisy[i].events.size());
    for (std::size_t k = 0; k < clean[i].events.size(); ++k) {
      CHECK(clean[i].events[k].glucose_true == noisy[i].events[k].glucose_true);
      CHECK(clean[i].events[k].t == noisy[i].events[k].t);
      const double d = noisy[i].events[k].glucose_obs - noisy[i].events[k].glucose_true;
      diff2 += d * d;
      ++n;
    }
  }
  CHECK(std::abs(std::sqrt(diff2 / n) - 10.0) < 1.0);
}

TEST_CASE("nonstationary sensitivity switches between two levels") {
  SimConfig cfg;
  cfg.n_trajectories = 100;
  cfg.scenario = Scenario::nonstationary_beta;
  bool saw_low = false;
  for (const auto &r : simulate_dataset(cfg).records)
    for (const auto &e : r.events) {
      const double b = r.params->beta;
      CHECK((e.insulin_sensitivity == b || e.insulin_sensitivity == 0.5 * b));
      saw_low = saw_low || e.insulin_sensitivity != b;
    }
  CHECK(saw_low);
}

TEST_CASE("config parsing is strict") {
  CHECK(parse_scenario("measurement_error") == Scenario::measurement_error);
  CHECK_THROWS(parse_scenario("bogus"));
  SimConfig cfg;
  cfg.n_trajectories = 12;
  cfg.scenario = Scenario::nonstationary_beta;
  const SimConfig back = SimConfig::from_json(cfg.to_json());
  CHECK(back.n_trajectories == 12);
  CHECK(back.scenario == Scenario::nonstationary_beta);
  CHECK_THROWS_AS(SimConfig::from_json(nlohmann::json{{"n_trajectorie", 3}}), DataError);
  CHECK_THROWS(SimConfig::from_json(nlohmann::json{{"dt", -1.0}}));
  CHECK_THROWS(SimConfig::from_json(nlohmann::json{{"dt", 0.07}}));
  CHECK_THROWS(SimConfig::from_json(nlohmann::json{{"error_sd", -1.0}}));
}

TEST_CASE("dataset file round trip") {
  SimConfig cfg;
  cfg.n_trajectories = 10;
  cfg.store_dense = true;
  const Dataset d = simulate_dataset(cfg).records;
  const fs::path dir = scratch("io");
  write_dataset(d, dir / "d.jsonl");
  CHECK(read_dataset(dir / "d.jsonl") == d);
  std::ifstream in(dir / "d.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 10);

  std::ofstream(dir / "empty.jsonl").close();
  CHECK(read_dataset(dir / "empty.jsonl").empty());

  std::ofstream(dir / "bad.jsonl") << "{\"traj_id\": 1}\n";
  try {
    read_dataset(dir / "bad.jsonl");
    FAIL("expected DataError");
  } catch (const DataError &e) {
    CHECK(std::string(e.what()).find("events") != std::string::npos);
  }
  CHECK_THROWS_AS(read_dataset(dir / "missing.jsonl"), DataError);
}

TEST_CASE("summary histogram file") {
  SimConfig cfg;
  cfg.n_trajectories = 20;
  const SimSummary s = summarize(simulate_dataset(cfg).records);
  std::size_t total = 0;
  for (auto c : s.events_histogram) total += c;
  CHECK(total == 20);
  const fs::path dir = scratch("summary");
  write_summary_csv(s, dir / "s.csv");
  std::ifstream in(dir / "s.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "histogram,bin_lo,bin_hi,count");
}

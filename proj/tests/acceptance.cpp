// SPDX-License-Identifier: Apache-2.0
// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any hard criterion fails. Criterion 9 is soft: a
// violation is printed as FAIL (soft) and flagged in the sweep report, but
// does not change the exit code.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ctrnn/baseline.hpp"
#include "ctrnn/losses.hpp"
#include "ctrnn/metrics.hpp"
#include "ctrnn/model.hpp"
#include "ctrnn/nets.hpp"
#include "ctrnn/odeflow.hpp"
#include "ctrnn/report.hpp"
#include "ctrnn/simgen.hpp"
#include "ctrnn/trainer.hpp"

using namespace ctrnn;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string fmt(const char *f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<double> uniform(std::size_t n, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto &x : v) x = d(rng);
  return v;
}

Event event(double t, double g, double insulin = 0.0, double input = 0.0) {
  Event e;
  e.t = t;
  e.glucose_obs = e.glucose_true = g;
  e.insulin_rate = insulin;
  e.glucose_input = input;
  e.target_mask = 1;
  return e;
}

// ---------------------------------------------------------------- 1

Outcome simulator_fidelity() {
  sim::SimConfig cfg;
  cfg.n_trajectories = 1000;
  cfg.seed = 1;
  const auto t0 = clock_type::now();
  const auto res = sim::simulate_dataset(cfg);
  const double secs = seconds_since(t0);
  const double mean = sim::summarize(res.records).mean_events;
  return {mean >= 6.5 && mean <= 8.5 && secs < 30.0,
          fmt("mean events %.3f in [6.5, 8.5], runtime %.2f s < 30 s", mean, secs)};
}

// ---------------------------------------------------------------- 2

// Pooled ratio of the sample stationary variance to the analytic OU
// variance sigma^2 / (2 gamma), and to sigma^2 itself.
struct SpreadEstimate {
  double vs_oracle = 0.0;
  double vs_sigma = 0.0;
};

SpreadEstimate stationary_spread(double dt) {
  constexpr std::size_t kPaths = 1000;
  constexpr double kHorizon = 220.0, kBurnIn = 20.0;
  sim::SimConfig cfg;
  cfg.horizon = kHorizon;
  cfg.dt = dt;
  cfg.store_dense = true;
  cfg.glucose_input_rate = 0.0;
  double num = 0.0, den_oracle = 0.0, den_sigma = 0.0;
  for (std::size_t i = 0; i < kPaths; ++i) {
    auto rng = sim::stream_rng(2024, static_cast<std::int64_t>(i), 0);
    SdeParams p = sim::sample_params(rng);
    p.beta = 0.0;
    const auto r = sim::simulate_trajectory(p, cfg, static_cast<std::int64_t>(i));
    const auto &d = *r.dense_truth;
    double n = 0, mean = 0, m2 = 0;
    for (std::size_t k = 0; k < d.t.size(); ++k) {
      if (d.t[k] < kBurnIn) continue;
      n += 1;
      const double delta = d.glucose[k] - mean;
      mean += delta / n;
      m2 += delta * (d.glucose[k] - mean);
    }
    num += m2 / (n - 1);
    den_oracle += p.sigma * p.sigma / (2.0 * p.gamma);
    den_sigma += p.sigma * p.sigma;
  }
  return {std::sqrt(num / den_oracle), std::sqrt(num / den_sigma)};
}

Outcome sde_correctness() {
  const auto a = stationary_spread(0.05);
  const auto b = stationary_spread(0.025);
  const double change = std::abs(a.vs_oracle / b.vs_oracle - 1.0);
  const bool ok = std::abs(a.vs_oracle - 1.0) < 0.1 && std::abs(a.vs_sigma - 1.0) < 0.1 &&
                  std::abs(b.vs_oracle - 1.0) < 0.1 && change < 0.01;
  return {ok, fmt("SD/oracle %.4f (dt 0.05), %.4f (dt 0.025); SD/sigma %.4f; dt-halving "
                  "change %.3f%% < 1%%",
                  a.vs_oracle, b.vs_oracle, a.vs_sigma, 100.0 * change)};
}

// ---------------------------------------------------------------- 3

Outcome oracle_calibration() {
  sim::SimConfig cfg;
  cfg.n_trajectories = 1700;
  cfg.seed = 303;
  const auto data = sim::simulate_dataset(cfg).records;
  const auto m = metrics::evaluate(baseline::oracle_forecaster(cfg), data,
                                   metrics::Truth::observed);
  const bool ok = m.n_forecasts >= 10000 && m.coverage >= 94.0 && m.coverage <= 96.0 &&
                  m.var_pit >= 0.073 && m.var_pit <= 0.093;
  return {ok, fmt("%zu forecasts, coverage %.2f%% in [94, 96], Var PIT %.4f in "
                  "[0.073, 0.093]",
                  m.n_forecasts, m.coverage, m.var_pit)};
}

// ---------------------------------------------------------------- 4

double std_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Composite Simpson over [m - 14 s, m + 14 s], split at the outcome.
double crps_quadrature(double m, double s, double y) {
  const auto F = [&](double t) { return std_cdf((t - m) / s); };
  auto simpson = [](const std::function<double(double)> &f, double a, double b) {
    if (b <= a) return 0.0;
    const int n = 20000;
    const double h = (b - a) / n;
    double acc = f(a) + f(b);
    for (int i = 1; i < n; ++i) acc += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return acc * h / 3.0;
  };
  const double lo = m - 14 * s, hi = m + 14 * s, x = std::clamp(y, lo, hi);
  return simpson([&](double t) { return F(t) * F(t); }, lo, x) +
         simpson([&](double t) { return (1 - F(t)) * (1 - F(t)); }, x, hi) +
         std::max(lo - y, 0.0) + std::max(y - hi, 0.0);
}

Outcome scoring_rules() {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> mu(-5, 5), sd(0.05, 4), dy(-4, 4);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double m = mu(rng), s = sd(rng), y = m + s * dy(rng);
    const double q = crps_quadrature(m, s, y);
    worst = std::max(worst, std::abs(metrics::crps_normal(m, s, y) - q) / q);
  }
  const bool interval = metrics::interval_score(80, 120, 100, 0.05) == 40.0 &&
                        metrics::interval_score(80, 120, 70, 0.05) == 440.0 &&
                        metrics::interval_score(80, 120, 130, 0.05) == 440.0;
  bool mae = true;
  std::uniform_real_distribution<double> v(-50, 50);
  for (int i = 0; i < 100; ++i) {
    const double m = v(rng), y = v(rng);
    mae = mae && metrics::crps_normal(m, 0.0, y) == std::abs(m - y);
  }
  return {worst < 1e-6 && interval && mae,
          fmt("max CRPS rel. err %.2e < 1e-6; interval cases %s; degenerate CRPS == MAE %s",
              worst, interval ? "exact" : "WRONG", mae ? "exact" : "WRONG")};
}

// ---------------------------------------------------------------- 5

// Weighted sum of the component output so every coordinate reaches the root.
double check_component(const std::function<NodeId(Graph &, const ParamStore &)> &out,
                       ParamStore &s) {
  return grad_check(
      [&](Graph &g, const ParamStore &st) {
        const NodeId y = out(g, st);
        const auto w = uniform(g.shape(y).size(), 0.5, 1.5, 99);
        return g.sum(g.hadamard(y, g.constant(w, g.shape(y))));
      },
      s, 1e-5);
}

Outcome autodiff() {
  using namespace nets;
  std::map<std::string, double> worst;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    ParamStore s;
    Mlp mlp(s, "mlp", {{3, 6, 2}, FinalActivation::tanh}, &rng);
    GruCell gru(s, "gru", 3, 4, &rng);
    LstmCell lstm(s, "lstm", 3, 4, &rng);
    GruOdeField field(s, "field", 4, 2, &rng);
    GruFlow flow(s, "flow", 4, 2, &rng);
    const std::size_t z0 = s.add("z0", {4, 1}, uniform(4, -1.0, 1.0, seed));
    const std::size_t c0 = s.add("c0", {4, 1}, uniform(4, -1.0, 1.0, seed + 7));
    const std::size_t x0 = s.add("x0", {3, 1}, uniform(3, -1.0, 1.0, seed + 9));
    const std::size_t raw = s.add("raw", {4, 1}, uniform(4, -1.0, 1.0, seed + 11));
    auto note = [&](const std::string &name, double e) {
      worst[name] = std::max(worst[name], e);
    };
    note("mlp", check_component([&](Graph &g, const ParamStore &st) {
      return mlp.forward(g, mlp.bind(g, st), g.param(st, x0));
    }, s));
    note("gru cell", check_component([&](Graph &g, const ParamStore &st) {
      return gru.step(g, gru.bind(g, st), g.param(st, x0), g.param(st, z0));
    }, s));
    note("lstm cell", check_component([&](Graph &g, const ParamStore &st) {
      const auto o = lstm.step(g, lstm.bind(g, st), g.param(st, x0),
                               {g.param(st, z0), g.param(st, c0)});
      return g.concat(o.h, o.c);
    }, s));
    note("gru-ode field", check_component([&](Graph &g, const ParamStore &st) {
      return field.derivative(g, field.bind(g, st), g.param(st, z0), g.column({0.5, 0.2}));
    }, s));
    note("gru flow", check_component([&](Graph &g, const ParamStore &st) {
      return flow.apply(g, flow.bind(g, st), g.param(st, z0), g.column({0.5, 0.2}), 1.7);
    }, s));
    note("decay evolve", check_component([&](Graph &g, const ParamStore &st) {
      return odeflow::decay_evolve(g, g.softplus(g.param(st, raw)), g.param(st, z0), 2.3);
    }, s));
  }

  TrajectoryRecord r;
  r.traj_id = 7;
  r.events = {event(0.0, 150.0, 3.0), event(1.5, 132.0, 0.0, 2.0), event(4.0, 120.0)};
  losses::LossConfig cfg;
  cfg.lambda = 0.1;
  std::map<std::string, double> e2e;
  for (ArchKind k : all_archs()) {
    ArchSpec a;
    a.kind = k;
    a.hidden_dim = 3;
    a.intervention_dim = 3;
    a.field_hidden = 5;
    a.y_center = std::log(140.0);
    a.y_scale = 0.2;
    Model m(a, 17);
    e2e[std::string(to_string(k))] = grad_check(
        [&](Graph &g, const ParamStore &) {
          Session sess(m, g);
          return losses::total_loss(g, sess.rollout(r), r, cfg);
        },
        m.params(), 1e-5);
  }
  bool ok = true;
  std::string detail = "components:";
  for (const auto &[name, e] : worst) {
    ok = ok && e < 1e-4;
    detail += fmt(" %s %.1e", name.c_str(), e);
  }
  detail += " (< 1e-4); end-to-end:";
  for (const auto &[name, e] : e2e) {
    ok = ok && e < 1e-3;
    detail += fmt(" %s %.1e", name.c_str(), e);
  }
  return {ok, detail + " (< 1e-3)"};
}

// ---------------------------------------------------------------- 6

Outcome solver_order() {
  const odeflow::VectorField neg = [](Graph &g, NodeId z) { return g.scale(z, -1.0); };
  auto err = [&](odeflow::Method m, int steps) {
    Graph g;
    const double z = g.item(odeflow::ode_solve(g, neg, g.scalar(1.0), 0.0, 1.0, {m, steps, 4096}));
    return std::abs(z - std::exp(-1.0));
  };
  auto order = [&](odeflow::Method m, int n) { return std::log2(err(m, n) / err(m, 2 * n)); };
  double rk4 = 1e300, euler = 1e300;
  for (int n : {4, 8, 16}) {
    rk4 = std::min(rk4, order(odeflow::Method::rk4, n));
    euler = std::min(euler, order(odeflow::Method::euler, n));
  }
  return {rk4 >= 3.5 && euler >= 0.9,
          fmt("min order over halvings 4->8->16->32: RK4 %.3f >= 3.5, Euler %.3f >= 0.9", rk4,
              euler)};
}

// ---------------------------------------------------------------- 7

Outcome flow_identity() {
  nets::Rng rng(7);
  ParamStore s;
  nets::GruFlow flow(s, "flow", 16, 2, &rng);
  std::normal_distribution<double> n(0.0, 3.0);
  std::size_t exact = 0;
  for (int k = 0; k < 1000; ++k) {
    Graph g;
    std::vector<double> z0(16);
    for (auto &v : z0) v = n(rng);
    const NodeId z = g.constant(z0, {16, 1});
    const auto out = g.value(flow.apply(g, flow.bind(g, s), z, g.column({0.5, 0.1}), 0.0));
    exact += std::equal(out.begin(), out.end(), z0.begin(), z0.end());
  }
  return {exact == 1000, fmt("%zu / 1000 states returned bit-identically", exact)};
}

// ---------------------------------------------------------------- 8-11

train::ExperimentConfig experiment(std::vector<std::size_t> sizes, sim::Scenario scenario) {
  train::ExperimentConfig c;
  c.sim.scenario = scenario;
  c.sizes = std::move(sizes);
  c.archs.assign(all_archs().begin(), all_archs().end());
  c.n_runs = 3;
  c.seed = 1;
  c.test_size = 2000;
  c.arch_defaults.hidden_dim = 16;
  c.train.lr = 3e-3;
  c.train.epochs = 100;
  c.loss.lambda = 0.0;
  return c;
}

double mean_crps(const train::ExperimentBundle &b, std::size_t n, const std::string &m) {
  const auto *r = b.find(n, m);
  if (!r || r->runs.empty()) throw std::runtime_error("missing result for " + m);
  return r->stat(metrics::Metric::crps).mean;
}

// Standard error of the run-averaged mean CRPS.
double crps_se(const train::ExperimentBundle &b, std::size_t n, const std::string &m) {
  const auto *r = b.find(n, m);
  double v = 0.0;
  for (const auto &run : r->runs) v += run.crps_se * run.crps_se;
  return std::sqrt(v) / static_cast<double>(r->runs.size());
}

void write_sweep_report(const train::ExperimentBundle &b, const fs::path &dir) {
  fs::create_directories(dir);
  report::write_text(report::markdown_bundle(b), dir / "report.md");
  for (auto m : {metrics::Metric::crps, metrics::Metric::rmse, metrics::Metric::interval_score})
    report::write_text(report::datasize_svg(b, m),
                       dir / ("datasize_" + std::string(metrics::to_string(m)) + ".svg"));
}

Outcome data_size_trend(const train::ExperimentBundle &b, double secs) {
  bool ok = secs <= 7200.0;
  std::string detail;
  for (ArchKind k : all_archs()) {
    const std::string m(to_string(k));
    const double a = mean_crps(b, 1000, m), c = mean_crps(b, 5000, m);
    ok = ok && c <= a;
    detail += fmt("%s %.5f->%.5f%s; ", m.c_str(), a, c, c <= a ? "" : " (WORSE)");
  }
  return {ok, detail + fmt("runtime %.0f s <= 7200 s", secs)};
}

Outcome continuous_ordering(const train::ExperimentBundle &b) {
  const std::size_t n = 10000;
  const double ol = mean_crps(b, n, "ode_lstm"), tl = mean_crps(b, n, "timegap_lstm");
  const double fg = mean_crps(b, n, "flow_gru"), tg = mean_crps(b, n, "timegap_gru");
  return {ol <= tl && fg <= tg,
          fmt("ode_lstm %.5f %s timegap_lstm %.5f; flow_gru %.5f %s timegap_gru %.5f", ol,
              ol <= tl ? "<=" : ">", tl, fg, fg <= tg ? "<=" : ">", tg)};
}

Outcome benchmark_sanity(const std::vector<const train::ExperimentBundle *> &bundles) {
  bool ok = true;
  std::string detail;
  const std::size_t n = 10000;
  const auto &big = *bundles.back();
  const double lin = mean_crps(big, n, "linear");
  std::string best;
  double best_crps = 1e300;
  for (ArchKind k : all_archs()) {
    const std::string m(to_string(k));
    const double c = mean_crps(big, n, m);
    ok = ok && lin >= c;
    if (lin < c) detail += fmt("linear %.5f beats %s %.5f; ", lin, m.c_str(), c);
    if (c < best_crps) best_crps = c, best = m;
  }
  detail += fmt("N=10000 linear %.5f vs best deep %s %.5f; ", lin, best.c_str(), best_crps);
  double margin = 1e300;
  std::string closest;
  for (const auto *b : bundles)
    for (const auto &s : b->sizes) {
      const double o = mean_crps(*b, s.size, "oracle");
      const double se = crps_se(*b, s.size, "oracle");
      for (const auto &r : s.reports) {
        if (r.model == "oracle") continue;
        const double c = r.stat(metrics::Metric::crps).mean;
        const double m = (c - (o - se)) / se;
        if (m < margin) {
          margin = m;
          closest = fmt("%s N=%zu %.5f vs oracle %.5f (SE %.5f)", r.model.c_str(), s.size, c,
                        o, se);
        }
        ok = ok && c >= o - se;
      }
    }
  return {ok, detail + "closest to beating the oracle: " + closest};
}

Outcome measurement_error(const train::ExperimentBundle &standard,
                          const train::ExperimentBundle &noisy) {
  bool ok = true;
  std::string detail;
  std::vector<std::string> models;
  for (ArchKind k : all_archs()) models.emplace_back(to_string(k));
  models.emplace_back("linear");
  for (const auto &m : models) {
    const double a = mean_crps(standard, 1000, m), b = mean_crps(noisy, 1000, m);
    ok = ok && b > a;
    detail += fmt("%s %.5f->%.5f%s; ", m.c_str(), a, b, b > a ? "" : " (NOT WORSE)");
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

// ---------------------------------------------------------------- 12

int sh(const std::string &args, int threads, const fs::path &log) {
  const std::string cmd = "CTRNN_THREADS=" + std::to_string(threads) + " '" + CTRNN_BIN +
                          "' " + args + " >> '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path &p) { return "'" + p.string() + "'"; }

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool pipeline(const fs::path &d, int threads) {
  fs::remove_all(d);
  fs::create_directories(d);
  const fs::path log = d.parent_path() / (d.filename().string() + ".log");
  fs::remove(log);
  std::ofstream(d / "sim.json") << R"({"n_trajectories": 300, "seed": 11})";
  std::ofstream(d / "train.json") << R"({"epochs": 4, "seed": 5})";
  auto run = [&](const std::string &a) { return sh(a, threads, log) == 0; };
  bool ok = run("simulate --config " + q(d / "sim.json") + " --out " + q(d / "train.jsonl") +
                " --summary " + q(d / "summary.csv")) &&
            run("simulate --config " + q(d / "sim.json") + " --seed 12 --n 100 --out " +
                q(d / "test.jsonl"));
  for (const char *arch : {"ode_lstm", "flow_gru", "imode"})
    ok = ok && run("train --data " + q(d / "train.jsonl") + " --arch " + arch +
                   " --hidden-dim 8 --lambda 0.1 --train-config " + q(d / "train.json") +
                   " --out " + q(d / arch)) &&
         run("evaluate --model " + q(d / arch) + " --data " + q(d / "test.jsonl") +
             " --out " + q(d / (std::string("eval_") + arch + ".json")));
  ok = ok &&
       run("evaluate --oracle --sim-config " + q(d / "sim.json") + " --data " +
           q(d / "test.jsonl") + " --out " + q(d / "eval_oracle.json")) &&
       run("evaluate --linear " + q(d / "train.jsonl") + " --data " + q(d / "test.jsonl") +
           " --out " + q(d / "eval_linear.json")) &&
       run("report --in " + q(d / "eval_ode_lstm.json") + " " + q(d / "eval_flow_gru.json") +
           " " + q(d / "eval_imode.json") + " " + q(d / "eval_oracle.json") + " " +
           q(d / "eval_linear.json") + " --plots " + q(d / "plots") + " --model " +
           q(d / "ode_lstm") + " --data " + q(d / "test.jsonl") + " --trajectories 3");
  std::ofstream(d / "exp.json") << R"({"sizes": [60, 120], "archs": ["decay_gru", "flow_gru"],
    "n_runs": 2, "test_size": 60, "arch": {"hidden_dim": 4}, "train": {"epochs": 2}})";
  ok = ok && run("experiment --config " + q(d / "exp.json") + " --out " + q(d / "sweep")) &&
       run("report --in " + q(d / "sweep") + " --plots " + q(d / "sweep_plots"));
  return ok;
}

Outcome determinism(const fs::path &out) {
  const fs::path a = out / "determinism" / "threads1", b = out / "determinism" / "threads4";
  if (!pipeline(a, 1) || !pipeline(b, 4))
    return {false, "pipeline command failed, see " + (out / "determinism").string()};
  std::set<std::string> fa, fb;
  for (const auto &e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) fa.insert(fs::relative(e.path(), a).string());
  for (const auto &e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) fb.insert(fs::relative(e.path(), b).string());
  if (fa != fb) return {false, "output file sets differ"};
  std::size_t svg = 0, differ = 0;
  std::string first;
  for (const auto &f : fa) {
    svg += fs::path(f).extension() == ".svg";
    if (slurp(a / f) != slurp(b / f)) {
      if (!differ++) first = f;
    }
  }
  const bool kinds = fa.count("train.jsonl") && fa.count("ode_lstm/history.csv") &&
                     fa.count("eval_ode_lstm.json") && svg > 0;
  return {differ == 0 && kinds,
          fmt("%zu files (%zu svg) compared at CTRNN_THREADS=1 vs 4, %zu differ%s", fa.size(),
              svg, differ, differ ? (", first: " + first).c_str() : "")};
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Acceptance run"};
  fs::path out = "acceptance_out";
  std::vector<int> only;
  app.add_option("--out", out, "Directory for experiment outputs");
  app.add_option("--only", only, "Run only these criteria (experiments 8-11 run together)")
      ->check(CLI::Range(1, 12));
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(out);
  auto wanted = [&](int c) {
    return only.empty() || std::find(only.begin(), only.end(), c) != only.end();
  };

  std::map<int, Outcome> results;
  auto record = [&](int c, const char *name, const std::function<Outcome()> &fn) {
    if (!wanted(c)) return;
    const auto t0 = clock_type::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception &e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const bool soft = c == 9;
    std::printf("criterion %2d %-26s %s  %s [%.0f s]\n", c, name,
                o.pass ? "PASS" : (soft ? "FAIL (soft, flagged)" : "FAIL"), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
    results[c] = o;
  };

  record(1, "simulator fidelity", simulator_fidelity);
  record(2, "SDE correctness", sde_correctness);
  record(3, "oracle calibration", oracle_calibration);
  record(4, "scoring rules", scoring_rules);
  record(5, "autodiff", autodiff);
  record(6, "solver order", solver_order);
  record(7, "flow identity", flow_identity);

  if (wanted(8) || wanted(9) || wanted(10) || wanted(11)) {
    std::optional<train::ExperimentBundle> sweep, big, noisy;
    double sweep_secs = 0.0;
    auto guarded = [&](auto fn) {
      try {
        fn();
      } catch (const std::exception &e) {
        std::fprintf(stderr, "experiment failed: %s\n", e.what());
      }
    };
    guarded([&] {
      const auto t0 = clock_type::now();
      sweep = train::run_experiment(experiment({1000, 5000}, sim::Scenario::standard),
                                    out / "datasize");
      sweep_secs = seconds_since(t0);
      write_sweep_report(*sweep, out / "datasize" / "plots");
    });
    guarded([&] {
      big = train::run_experiment(experiment({10000}, sim::Scenario::standard),
                                  out / "n10000");
      write_sweep_report(*big, out / "n10000" / "plots");
      for (const auto &f : report::ordering_flags(*big))
        std::fprintf(stderr, "flag: %s\n", f.c_str());
    });
    guarded([&] {
      noisy = train::run_experiment(experiment({1000}, sim::Scenario::measurement_error),
                                    out / "measurement_error");
      write_sweep_report(*noisy, out / "measurement_error" / "plots");
    });
    auto need = [](bool have) {
      if (!have) throw std::runtime_error("experiment did not complete");
    };
    record(8, "data-size trend", [&] {
      need(sweep.has_value());
      return data_size_trend(*sweep, sweep_secs);
    });
    record(9, "continuous vs discrete", [&] {
      need(big.has_value());
      return continuous_ordering(*big);
    });
    record(10, "benchmark sanity", [&] {
      need(sweep && big);
      return benchmark_sanity({&*sweep, &*big});
    });
    record(11, "measurement error", [&] {
      need(sweep && noisy);
      return measurement_error(*sweep, *noisy);
    });
  }
  record(12, "determinism", [&] { return determinism(out); });

  std::size_t hard_fail = 0;
  for (const auto &[c, o] : results) hard_fail += !o.pass && c != 9;
  std::printf("%zu criteria run, %zu hard failures\n", results.size(), hard_fail);
  return hard_fail == 0 ? 0 : 1;
}

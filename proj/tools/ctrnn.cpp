// SPDX-License-Identifier: Apache-2.0
// ctrnn: simulate, train, evaluate, report and sweep experiments.
//
// Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ctrnn/baseline.hpp"
#include "ctrnn/metrics.hpp"
#include "ctrnn/report.hpp"
#include "ctrnn/simgen.hpp"
#include "ctrnn/trainer.hpp"

namespace fs = std::filesystem;
using namespace ctrnn;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

nlohmann::json read_json(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception &e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

void write_json(const nlohmann::json &j, const fs::path &p) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  out << j.dump(1) << '\n';
}

void require_file(const fs::path &p, const char *flag) {
  if (!fs::is_regular_file(p))
    throw DataError(std::string(flag) + ": no such file " + p.string());
}

void require_dir(const fs::path &p, const char *flag) {
  if (!fs::is_directory(p))
    throw DataError(std::string(flag) + ": no such directory " + p.string());
}

// The parent of an output file must exist.
void require_parent(const fs::path &p, const char *flag) {
  const fs::path parent = p.parent_path();
  if (!parent.empty() && !fs::is_directory(parent))
    throw DataError(std::string(flag) + ": directory " + parent.string() + " does not exist");
}

ArchKind arch_or_usage(const std::string &name) {
  const auto k = parse_arch(name);
  if (!k)
    throw UsageError("unknown architecture '" + name + "'; valid architectures: " +
                     arch_names());
  return *k;
}

sim::SimConfig sim_config_or_default(const std::string &path) {
  if (path.empty()) return {};
  require_file(path, "--sim-config");
  return sim::SimConfig::from_json(read_json(path));
}

metrics::Truth parse_truth(const std::string &s, const Dataset &data) {
  if (s == "observed") return metrics::Truth::observed;
  if (s == "latent") return metrics::Truth::latent;
  for (const auto &r : data)
    for (const auto &e : r.events)
      if (e.glucose_obs != e.glucose_true) return metrics::Truth::latent;
  return metrics::Truth::observed;
}

fs::path with_extension(fs::path p, const char *ext) {
  p.replace_extension(ext);
  return p;
}

// ---------------------------------------------------------------------------

struct SimulateOpts {
  std::string config, out, summary;
  std::optional<std::size_t> n;
  std::optional<std::uint64_t> seed;
  std::string scenario;
};

int cmd_simulate(const SimulateOpts &o) {
  require_file(o.config, "--config");
  require_parent(o.out, "--out");
  if (!o.summary.empty()) require_parent(o.summary, "--summary");
  sim::SimConfig cfg = sim::SimConfig::from_json(read_json(o.config));
  if (o.n) cfg.n_trajectories = *o.n;
  if (o.seed) cfg.seed = *o.seed;
  if (!o.scenario.empty()) cfg.scenario = sim::parse_scenario(o.scenario);
  cfg.validate();
  const auto res = sim::simulate_dataset(cfg);
  write_dataset(res.records, o.out);
  const auto s = sim::summarize(res.records);
  if (!o.summary.empty()) sim::write_summary_csv(s, o.summary);
  std::fprintf(stderr, "%zu trajectories, %.3f events/trajectory, %zu resampled paths\n",
               res.records.size(), s.mean_events, res.rejected);
  return kOk;
}

struct TrainOpts {
  std::string data, arch, train_config, loss_config, arch_config, out;
  std::optional<std::size_t> hidden_dim;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> lambda;
};

int cmd_train(const TrainOpts &o) {
  const ArchKind kind = arch_or_usage(o.arch);
  require_file(o.data, "--data");
  if (!o.train_config.empty()) require_file(o.train_config, "--train-config");
  if (!o.loss_config.empty()) require_file(o.loss_config, "--loss-config");
  if (!o.arch_config.empty()) require_file(o.arch_config, "--arch-config");
  require_parent(fs::path(o.out), "--out");

  train::TrainConfig tc;
  if (!o.train_config.empty()) tc = train::TrainConfig::from_json(read_json(o.train_config));
  losses::LossConfig lc;
  if (!o.loss_config.empty()) lc = losses::LossConfig::from_json(read_json(o.loss_config));
  ArchSpec spec;
  if (!o.arch_config.empty()) {
    auto j = read_json(o.arch_config);
    j["kind"] = std::string(to_string(kind));
    try {
      spec = ArchSpec::from_json(j);
    } catch (const std::invalid_argument &e) {
      throw DataError(std::string("--arch-config: ") + e.what());
    }
  }
  spec.kind = kind;
  if (o.hidden_dim) spec.hidden_dim = *o.hidden_dim;
  if (o.seed) tc.seed = *o.seed;
  if (o.epochs) tc.epochs = *o.epochs;
  if (o.lambda) lc.lambda = *o.lambda;
  tc.validate();
  lc.validate();

  const Dataset data = read_dataset(o.data);
  if (data.empty()) throw DataError("--data: dataset is empty");
  const auto res = train::train(spec, data, tc, lc);
  fs::create_directories(o.out);
  res.model.save(o.out);
  train::write_history_csv(res.history, fs::path(o.out) / "history.csv");
  write_json({{"arch", res.model.arch().to_json()},
              {"train", tc.to_json()},
              {"loss", lc.to_json()},
              {"best_epoch", res.best_epoch},
              {"epochs_run", res.history.size()},
              {"skipped_trajectories", res.skipped},
              {"retries", res.retries}},
             fs::path(o.out) / "train.json");
  if (res.skipped)
    std::fprintf(stderr, "skipped %zu trajectories with fewer than 2 events\n", res.skipped);
  const auto &best = res.history[static_cast<std::size_t>(res.best_epoch - 1)];
  std::fprintf(stderr, "best epoch %d of %zu, holdout loss %.6f\n", res.best_epoch,
               res.history.size(), best.holdout_loss);
  return kOk;
}

struct EvaluateOpts {
  std::string model, data, out, sim_config, linear, truth = "auto", name;
  bool oracle = false;
};

int cmd_evaluate(const EvaluateOpts &o) {
  const int sources = !o.model.empty() + o.oracle + !o.linear.empty();
  if (sources != 1) throw UsageError("evaluate: give exactly one of --model, --oracle, --linear");
  if (o.truth != "auto" && o.truth != "observed" && o.truth != "latent")
    throw UsageError("--truth must be auto, observed or latent");
  if (!o.model.empty()) require_dir(o.model, "--model");
  if (!o.linear.empty()) require_file(o.linear, "--linear");
  require_file(o.data, "--data");
  require_parent(o.out, "--out");

  const Dataset data = read_dataset(o.data);
  if (data.empty()) throw DataError("--data: test set is empty");
  const metrics::Truth truth = parse_truth(o.truth, data);

  std::optional<Model> model;
  std::optional<baseline::LinearFit> fit;
  metrics::Forecaster f;
  std::string name = o.name;
  if (!o.model.empty()) {
    model.emplace(Model::load(o.model));
    f = metrics::model_forecaster(*model);
    if (name.empty()) name = std::string(to_string(model->arch().kind));
  } else if (o.oracle) {
    f = baseline::oracle_forecaster(sim_config_or_default(o.sim_config));
    if (name.empty()) name = "oracle";
  } else {
    fit = baseline::fit_linear(read_dataset(o.linear));
    f = baseline::linear_forecaster(*fit);
    if (name.empty()) name = "linear";
  }
  const metrics::ScoreReport rep{name, {metrics::evaluate(f, data, truth)}};
  const std::vector<metrics::ScoreReport> reps{rep};
  metrics::write_report_json(reps, o.out);
  metrics::write_table_csv(reps, with_extension(o.out, ".csv"));
  std::cout << metrics::table_header() << '\n' << metrics::table_row(rep) << '\n';
  return kOk;
}

struct ReportOpts {
  std::vector<std::string> in;
  std::string plots, model, data;
  std::size_t trajectories = 3;
  int points_per_hour = 12;
};

int cmd_report(const ReportOpts &o) {
  if (o.in.empty() && o.model.empty())
    throw UsageError("report: nothing to do; give --in and/or --model with --data");
  if (o.model.empty() != o.data.empty())
    throw UsageError("report: --model and --data go together");
  for (const auto &d : o.in) {
    if (!fs::exists(d)) throw DataError("--in: no such path " + d);
  }
  if (!o.model.empty()) {
    require_dir(o.model, "--model");
    require_file(o.data, "--data");
  }
  require_parent(fs::path(o.plots), "--plots");
  if (o.points_per_hour < 1) throw UsageError("--points-per-hour must be >= 1");
  fs::create_directories(o.plots);

  std::vector<metrics::ScoreReport> reports;
  std::vector<std::pair<std::string, train::ExperimentBundle>> bundles;
  for (const auto &d : o.in) {
    const fs::path p(d);
    std::vector<fs::path> files;
    if (fs::is_directory(p)) {
      if (fs::exists(p / "bundle.json")) files.push_back(p / "bundle.json");
      if (fs::exists(p / "report.json")) files.push_back(p / "report.json");
      if (files.empty()) throw DataError("--in: " + d + " holds no report.json or bundle.json");
    } else {
      files.push_back(p);
    }
    for (const auto &f : files) {
      const auto j = read_json(f);
      if (j.contains("sizes")) {
        bundles.emplace_back(p.filename().string(), train::ExperimentBundle::from_json(j));
      } else {
        auto r = metrics::read_report_json(f);
        reports.insert(reports.end(), r.begin(), r.end());
      }
    }
  }

  std::string md;
  if (!reports.empty()) {
    metrics::write_table_csv(reports, fs::path(o.plots) / "table.csv");
    md += "## Scores\n\n" + report::markdown_table(reports) + "\n";
  }
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    const auto &[label, b] = bundles[i];
    const std::string stem = "datasize_" + std::to_string(i + 1) + "_" + b.scenario;
    for (auto m : {metrics::Metric::crps, metrics::Metric::rmse, metrics::Metric::interval_score})
      report::write_text(report::datasize_svg(b, m),
                         fs::path(o.plots) / (stem + "_" + std::string(to_string(m)) + ".svg"));
    md += report::markdown_bundle(b) + "\n";
    for (const auto &s : b.sizes)
      md += "#### N=" + std::to_string(s.size) + "\n\n" + report::markdown_table(s.reports) + "\n";
  }
  if (!o.model.empty()) {
    const Model m = Model::load(o.model);
    const Dataset data = read_dataset(o.data);
    std::size_t done = 0;
    for (const auto &r : data) {
      if (done == o.trajectories) break;
      if (r.events.size() < 2) continue;
      const auto path = forecast_path(m, r, o.points_per_hour);
      const auto band = report::bands(path);
      const std::string title = std::string(to_string(m.arch().kind)) + " trajectory " +
                                std::to_string(r.traj_id) + ", median and 95% interval";
      report::write_text(report::forecast_svg(r, band, title),
                         fs::path(o.plots) / ("forecast_" + std::to_string(r.traj_id) + ".svg"));
      ++done;
    }
  }
  report::write_text(md, fs::path(o.plots) / "report.md");
  return kOk;
}

struct ExperimentOpts {
  std::string config, out;
};

int cmd_experiment(const ExperimentOpts &o) {
  require_file(o.config, "--config");
  require_parent(fs::path(o.out), "--out");
  const auto cfg = train::ExperimentConfig::from_json(read_json(o.config));
  const auto bundle = train::run_experiment(cfg, fs::path(o.out));
  std::cout << report::markdown_bundle(bundle);
  return kOk;
}

struct GridOpts {
  std::string data, holdout, arch, grid, train_config, loss_config, out;
};

int cmd_grid(const GridOpts &o) {
  const ArchKind kind = arch_or_usage(o.arch);
  require_file(o.data, "--data");
  require_file(o.holdout, "--holdout");
  if (!o.grid.empty()) require_file(o.grid, "--grid");
  if (!o.train_config.empty()) require_file(o.train_config, "--train-config");
  if (!o.loss_config.empty()) require_file(o.loss_config, "--loss-config");
  require_parent(o.out, "--out");
  train::GridSpec grid;
  if (!o.grid.empty()) grid = train::GridSpec::from_json(read_json(o.grid));
  train::TrainConfig tc;
  if (!o.train_config.empty()) tc = train::TrainConfig::from_json(read_json(o.train_config));
  losses::LossConfig lc;
  if (!o.loss_config.empty()) lc = losses::LossConfig::from_json(read_json(o.loss_config));
  ArchSpec spec;
  spec.kind = kind;
  const auto res = train::grid_search(spec, read_dataset(o.data), read_dataset(o.holdout),
                                      grid, tc, lc);
  std::ofstream out(o.out, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + o.out);
  out << "hidden_dim,lambda,obs_error_var,crps,error\n";
  for (const auto &c : res.table) {
    char buf[64];
    out << c.hidden_dim << ',' << c.lambda << ',';
    if (c.obs_error_var) out << *c.obs_error_var;
    out << ',';
    if (c.crps) {
      std::snprintf(buf, sizeof buf, "%.10f", *c.crps);
      out << buf;
    }
    out << ",\"" << c.error << "\"\n";
  }
  std::printf("best: hidden_dim=%zu lambda=%g crps=%.6f\n", res.best.hidden_dim,
              res.best.lambda, *res.best.crps);
  return kOk;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Continuous-time RNN glucose forecasting: simulate, train, evaluate, report"};
  app.require_subcommand(1);
  app.allow_extras(false);

  SimulateOpts so;
  auto *sim_cmd = app.add_subcommand("simulate", "Simulate a trajectory dataset (JSONL)");
  sim_cmd->add_option("--config", so.config, "Simulation config JSON")->required();
  sim_cmd->add_option("--out", so.out, "Output JSONL")->required();
  sim_cmd->add_option("--summary", so.summary, "Event-count and gap histogram CSV");
  sim_cmd->add_option("--n", so.n, "Override n_trajectories");
  sim_cmd->add_option("--seed", so.seed, "Override seed");
  sim_cmd->add_option("--scenario", so.scenario, "Override scenario");

  TrainOpts to;
  auto *train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--data", to.data, "Training JSONL")->required();
  train_cmd->add_option("--arch", to.arch, "Architecture: " + arch_names())->required();
  train_cmd->add_option("--train-config", to.train_config, "Train config JSON");
  train_cmd->add_option("--loss-config", to.loss_config, "Loss config JSON");
  train_cmd->add_option("--arch-config", to.arch_config, "Architecture config JSON");
  train_cmd->add_option("--out", to.out, "Model directory")->required();
  train_cmd->add_option("--hidden-dim", to.hidden_dim, "Override hidden_dim");
  train_cmd->add_option("--seed", to.seed, "Override seed");
  train_cmd->add_option("--epochs", to.epochs, "Override max epochs");
  train_cmd->add_option("--lambda", to.lambda, "Override lambda");

  EvaluateOpts eo;
  auto *eval_cmd = app.add_subcommand("evaluate", "Score forecasts on a test set");
  eval_cmd->add_option("--model", eo.model, "Model directory");
  eval_cmd->add_flag("--oracle", eo.oracle, "Score the analytic oracle forecaster");
  eval_cmd->add_option("--linear", eo.linear, "Fit the linear benchmark on this JSONL");
  eval_cmd->add_option("--data", eo.data, "Test JSONL")->required();
  eval_cmd->add_option("--out", eo.out, "Report JSON (a CSV is written beside it)")->required();
  eval_cmd->add_option("--sim-config", eo.sim_config, "Simulation config used by --oracle");
  eval_cmd->add_option("--truth", eo.truth, "observed, latent or auto");
  eval_cmd->add_option("--name", eo.name, "Row label");

  ReportOpts ro;
  auto *report_cmd = app.add_subcommand("report", "Render tables and SVG plots");
  report_cmd->add_option("--in", ro.in, "Report files or directories");
  report_cmd->add_option("--plots", ro.plots, "Output directory")->required();
  report_cmd->add_option("--model", ro.model, "Model directory for forecast plots");
  report_cmd->add_option("--data", ro.data, "Trajectories for forecast plots");
  report_cmd->add_option("--trajectories", ro.trajectories, "Number of forecast plots");
  report_cmd->add_option("--points-per-hour", ro.points_per_hour, "Forecast grid density");

  ExperimentOpts xo;
  auto *exp_cmd = app.add_subcommand("experiment", "Run a data-size sweep");
  exp_cmd->add_option("--config", xo.config, "Experiment config JSON")->required();
  exp_cmd->add_option("--out", xo.out, "Output directory")->required();

  GridOpts go;
  auto *grid_cmd = app.add_subcommand("grid", "Grid search over hidden_dim and lambda");
  grid_cmd->add_option("--data", go.data, "Training JSONL")->required();
  grid_cmd->add_option("--holdout", go.holdout, "External holdout JSONL")->required();
  grid_cmd->add_option("--arch", go.arch, "Architecture")->required();
  grid_cmd->add_option("--grid", go.grid, "Grid JSON");
  grid_cmd->add_option("--train-config", go.train_config, "Train config JSON");
  grid_cmd->add_option("--loss-config", go.loss_config, "Loss config JSON");
  grid_cmd->add_option("--out", go.out, "Per-cell CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*sim_cmd) return cmd_simulate(so);
    if (*train_cmd) return cmd_train(to);
    if (*eval_cmd) return cmd_evaluate(eo);
    if (*report_cmd) return cmd_report(ro);
    if (*exp_cmd) return cmd_experiment(xo);
    if (*grid_cmd) return cmd_grid(go);
  } catch (const UsageError &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError &e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const DataError &e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::invalid_argument &e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

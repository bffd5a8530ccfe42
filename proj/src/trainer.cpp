// SPDX-License-Identifier: Apache-2.0
#include "ctrnn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <tuple>

#include "ctrnn/baseline.hpp"
#include "ctrnn/parallel.hpp"

namespace ctrnn::train {

namespace {

void check_known(const nlohmann::json &j, const std::string &what,
                 std::initializer_list<const char *> known) {
  if (!j.is_object()) throw DataError(what + ": expected an object");
  for (const auto &[key, _] : j.items())
    if (std::none_of(known.begin(), known.end(),
                     [&](const char *k) { return key == k; }))
      throw DataError(what + ": unknown field '" + key + "'");
}

template <typename T>
void read_field(const nlohmann::json &j, const std::string &what, const char *name,
                T &out) {
  if (!j.contains(name)) return;
  try {
    out = j.at(name).get<T>();
  } catch (const nlohmann::json::exception &) {
    throw DataError(what + ": field '" + name + "' has the wrong type");
  }
}

thread_local Graph tls_graph;

double trajectory_loss(const Model &m, const TrajectoryRecord &r,
                       const losses::LossConfig &cfg, std::span<double> grad) {
  Graph &g = tls_graph;
  g.clear();
  Session s(m, g);
  const Rollout ro = s.rollout(r);
  const NodeId loss = losses::total_loss(g, ro, r, cfg);
  const double v = g.item(loss);
  if (!std::isfinite(v))
    throw NumericError("non-finite loss on trajectory " + std::to_string(r.traj_id));
  if (!grad.empty()) g.backward(loss, grad);
  return v;
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  auto fail = [](const char *f, const char *why) {
    throw DataError(std::string("train config: field '") + f + "' " + why);
  };
  if (epochs < 1) fail("epochs", "must be >= 1");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (!(lr > 0.0)) fail("lr", "must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0)) fail("beta1", "must be in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) fail("beta2", "must be in (0, 1)");
  if (!(eps > 0.0)) fail("eps", "must be positive");
  if (!(clip_norm > 0.0)) fail("clip_norm", "must be positive");
  if (patience < 0) fail("patience", "must be >= 0");
  if (!(holdout_fraction > 0.0 && holdout_fraction <= 0.5))
    fail("holdout_fraction", "must be in (0, 0.5]");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},         {"batch_size", batch_size},
          {"lr", lr},                 {"beta1", beta1},
          {"beta2", beta2},           {"eps", eps},
          {"clip_norm", clip_norm},   {"patience", patience},
          {"holdout_fraction", holdout_fraction}, {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json &j) {
  const std::string what = "train config";
  check_known(j, what,
              {"epochs", "batch_size", "lr", "beta1", "beta2", "eps", "clip_norm",
               "patience", "holdout_fraction", "seed"});
  TrainConfig c;
  read_field(j, what, "epochs", c.epochs);
  read_field(j, what, "batch_size", c.batch_size);
  read_field(j, what, "lr", c.lr);
  read_field(j, what, "beta1", c.beta1);
  read_field(j, what, "beta2", c.beta2);
  read_field(j, what, "eps", c.eps);
  read_field(j, what, "clip_norm", c.clip_norm);
  read_field(j, what, "patience", c.patience);
  read_field(j, what, "holdout_fraction", c.holdout_fraction);
  read_field(j, what, "seed", c.seed);
  c.validate();
  return c;
}

void write_history_csv(const History &h, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,train_loss,holdout_loss,lr\n";
  for (const auto &e : h)
    out << e.epoch << ',' << fmt_g(e.train_loss) << ',' << fmt_g(e.holdout_loss) << ','
        << fmt_g(e.lr) << '\n';
}

// ---------------------------------------------------------------------------

Adam::Adam(std::size_t n, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad, double lr) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw std::invalid_argument("Adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

double clip_global_norm(std::span<double> grad, double max_norm) {
  double ss = 0.0;
  for (double g : grad) ss += g * g;
  const double norm = std::sqrt(ss);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (double &g : grad) g *= s;
  }
  return norm;
}

void fit_standardisation(ArchSpec &spec, const Dataset &data) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto &r : data)
    for (const auto &e : r.events)
      if (e.target_mask) {
        const double y = std::log(e.glucose_obs);
        sum += y;
        sq += y * y;
        ++n;
      }
  if (n < 2) throw DataError("standardisation: fewer than 2 observed values");
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
  spec.y_center = mean;
  spec.y_scale = var > 0.0 ? std::sqrt(var) : 1.0;
}

double mean_loss(const Model &m, const Dataset &data, std::span<const std::size_t> idx,
                 const losses::LossConfig &cfg) {
  if (idx.empty()) throw std::invalid_argument("mean_loss: no trajectories");
  std::vector<double> v(idx.size());
  parallel_for(idx.size(),
               [&](std::size_t i) { v[i] = trajectory_loss(m, data[idx[i]], cfg, {}); });
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(idx.size());
}

double batch_gradient(const Model &m, const Dataset &data,
                      std::span<const std::size_t> idx, const losses::LossConfig &cfg,
                      std::span<double> grad) {
  const std::size_t p = grad.size();
  std::vector<std::vector<double>> bufs(idx.size());
  std::vector<double> vals(idx.size());
  parallel_for(idx.size(), [&](std::size_t i) {
    bufs[i].assign(p, 0.0);
    vals[i] = trajectory_loss(m, data[idx[i]], cfg, bufs[i]);
  });
  std::fill(grad.begin(), grad.end(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    total += vals[i];
    for (std::size_t j = 0; j < p; ++j) grad[j] += bufs[i][j];
  }
  return total;
}

// ---------------------------------------------------------------------------

TrainResult train(ArchSpec arch, const Dataset &data, const TrainConfig &cfg,
                  const losses::LossConfig &loss) {
  cfg.validate();
  loss.validate();
  std::vector<std::size_t> usable;
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].events.size() >= 2)
      usable.push_back(i);
    else
      ++skipped;
  }
  if (usable.size() < 2) throw DataError("train: need at least 2 trajectories with 2+ events");

  std::mt19937_64 rng(cfg.seed);
  std::shuffle(usable.begin(), usable.end(), rng);
  const auto n_hold = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(cfg.holdout_fraction * static_cast<double>(usable.size()))),
      1, usable.size() - 1);
  std::vector<std::size_t> hold(usable.begin(), usable.begin() + static_cast<long>(n_hold));
  std::vector<std::size_t> fit(usable.begin() + static_cast<long>(n_hold), usable.end());
  std::sort(hold.begin(), hold.end());
  std::sort(fit.begin(), fit.end());

  Dataset fit_records;
  for (auto i : fit) fit_records.push_back(data[i]);
  fit_standardisation(arch, fit_records);
  fit_records.clear();

  Model model(arch, cfg.seed);
  const std::size_t P = model.params().total_size();
  Adam adam(P, cfg.beta1, cfg.beta2, cfg.eps);
  std::vector<double> grad(P);
  double lr = cfg.lr;

  // Snapshot before the most recent optimizer step, for the retry path.
  struct Snapshot {
    std::vector<double> params;
    Adam adam;
    std::vector<double> grad;
  };
  std::optional<Snapshot> prev;
  std::size_t retries = 0;
  int attempts_left = 3;

  auto recover = [&](const std::exception &e) {
    if (!prev || attempts_left == 0)
      throw NumericError(std::string("training aborted at lr ") + fmt_g(lr) + " after " +
                         std::to_string(retries) + " retries: " + e.what());
    --attempts_left;
    ++retries;
    lr *= 0.5;
    std::copy(prev->params.begin(), prev->params.end(), model.params().values().begin());
    adam = prev->adam;
    adam.step(model.params().values(), prev->grad, lr);
    std::cerr << "warning: non-finite loss (" << e.what() << "), lr halved to " << lr
              << '\n';
  };

  TrainResult result{model, {}, 0, skipped, 0};
  double best = std::numeric_limits<double>::infinity();
  int wait = 0;
  std::vector<std::size_t> order = fit;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + b,
                                             std::min(cfg.batch_size, order.size() - b));
      double batch_loss = 0.0;
      for (;;) {
        try {
          batch_loss = batch_gradient(model, data, idx, loss, grad);
          break;
        } catch (const NumericError &e) {
          recover(e);
        }
      }
      attempts_left = 3;
      const double scale = 1.0 / static_cast<double>(idx.size());
      for (double &g : grad) g *= scale;
      clip_global_norm(grad, cfg.clip_norm);
      const auto values = model.params().values();
      prev = Snapshot{{values.begin(), values.end()}, adam, grad};
      adam.step(values, grad, lr);
      epoch_loss += batch_loss;
    }
    double hold_loss = 0.0;
    for (;;) {
      try {
        hold_loss = mean_loss(model, data, hold, loss);
        break;
      } catch (const NumericError &e) {
        recover(e);
      }
    }
    attempts_left = 3;
    result.history.push_back(
        {epoch, epoch_loss / static_cast<double>(order.size()), hold_loss, lr});
    if (hold_loss < best) {
      best = hold_loss;
      wait = 0;
      result.best_epoch = epoch;
      result.model = model;
    } else if (++wait > cfg.patience) {
      break;
    }
  }
  result.retries = retries;
  return result;
}

// ---------------------------------------------------------------------------

void GridSpec::validate() const {
  if (hidden_dims.empty() || lambdas.empty() || obs_error_vars.empty())
    throw DataError("grid: hidden_dims, lambdas and obs_error_vars must be nonempty");
}

nlohmann::json GridSpec::to_json() const {
  return {{"hidden_dims", hidden_dims},
          {"lambdas", lambdas},
          {"obs_error_vars", obs_error_vars}};
}

GridSpec GridSpec::from_json(const nlohmann::json &j) {
  const std::string what = "grid";
  check_known(j, what, {"hidden_dims", "lambdas", "obs_error_vars"});
  GridSpec g;
  read_field(j, what, "hidden_dims", g.hidden_dims);
  read_field(j, what, "lambdas", g.lambdas);
  read_field(j, what, "obs_error_vars", g.obs_error_vars);
  g.validate();
  return g;
}

std::optional<std::size_t> select_cell(const std::vector<GridCell> &cells) {
  std::optional<std::size_t> best;
  auto key = [&](std::size_t i) {
    return std::make_tuple(*cells[i].crps, cells[i].hidden_dim, cells[i].lambda);
  };
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!cells[i].crps) continue;
    if (!best || key(i) < key(*best)) best = i;
  }
  return best;
}

GridResult grid_search(const ArchSpec &arch, const Dataset &train_set,
                       const Dataset &holdout, const GridSpec &grid,
                       const TrainConfig &cfg, const losses::LossConfig &base) {
  grid.validate();
  GridResult out;
  std::vector<std::optional<double>> vars;
  if (base.jump_kind == losses::JumpKind::kl)
    vars.assign(grid.obs_error_vars.begin(), grid.obs_error_vars.end());
  else
    vars.push_back(std::nullopt);
  for (auto h : grid.hidden_dims)
    for (double lambda : grid.lambdas)
      for (const auto &var : vars) {
        GridCell cell{h, lambda, var, std::nullopt, {}};
        try {
          ArchSpec spec = arch;
          spec.hidden_dim = h;
          losses::LossConfig lc = base;
          lc.lambda = lambda;
          if (var) lc.obs_error_var = *var;
          const TrainResult tr = train(spec, train_set, cfg, lc);
          cell.crps = metrics::evaluate(metrics::model_forecaster(tr.model), holdout,
                                        metrics::Truth::observed)
                          .crps;
        } catch (const std::exception &e) {
          cell.error = e.what();
        }
        out.table.push_back(cell);
      }
  const auto best = select_cell(out.table);
  if (!best) throw NumericError("grid search: every cell failed");
  out.best = out.table[*best];
  return out;
}

// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (sizes.empty()) throw DataError("experiment: sizes must be nonempty");
  if (archs.empty() && !include_linear && !include_oracle)
    throw DataError("experiment: nothing to run");
  if (n_runs < 1) throw DataError("experiment: n_runs must be >= 1");
  if (test_size < 1) throw DataError("experiment: test_size must be >= 1");
  sim.validate();
  train.validate();
  loss.validate();
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json names = nlohmann::json::array();
  for (auto a : archs) names.push_back(std::string(ctrnn::to_string(a)));
  nlohmann::json arch = arch_defaults.to_json();
  arch.erase("kind");
  arch.erase("format_version");
  arch.erase("y_center");
  arch.erase("y_scale");
  nlohmann::json j = {{"sim", sim.to_json()},
                      {"sizes", sizes},
                      {"archs", names},
                      {"n_runs", n_runs},
                      {"seed", seed},
                      {"test_size", test_size},
                      {"arch", arch},
                      {"train", train.to_json()},
                      {"loss", loss.to_json()},
                      {"include_linear", include_linear},
                      {"include_oracle", include_oracle}};
  if (continuous_lambda) j["continuous_lambda"] = *continuous_lambda;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json &j) {
  const std::string what = "experiment config";
  check_known(j, what,
              {"sim", "sizes", "archs", "n_runs", "seed", "test_size", "arch", "train",
               "loss", "continuous_lambda", "include_linear", "include_oracle"});
  ExperimentConfig c;
  if (j.contains("sim")) c.sim = sim::SimConfig::from_json(j.at("sim"));
  read_field(j, what, "sizes", c.sizes);
  std::vector<std::string> names;
  read_field(j, what, "archs", names);
  for (const auto &n : names) {
    const auto k = parse_arch(n);
    if (!k) throw DataError(what + ": unknown arch '" + n + "'; valid: " + arch_names());
    c.archs.push_back(*k);
  }
  read_field(j, what, "n_runs", c.n_runs);
  read_field(j, what, "seed", c.seed);
  read_field(j, what, "test_size", c.test_size);
  if (j.contains("arch")) {
    nlohmann::json a = j.at("arch");
    a["kind"] = "ode_gru";
    try {
      c.arch_defaults = ArchSpec::from_json(a);
    } catch (const std::invalid_argument &e) {
      throw DataError(what + ": " + e.what());
    }
  }
  if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
  if (j.contains("loss")) c.loss = losses::LossConfig::from_json(j.at("loss"));
  if (j.contains("continuous_lambda")) {
    double v = 0.0;
    read_field(j, what, "continuous_lambda", v);
    c.continuous_lambda = v;
  }
  read_field(j, what, "include_linear", c.include_linear);
  read_field(j, what, "include_oracle", c.include_oracle);
  c.validate();
  return c;
}

nlohmann::json ExperimentBundle::to_json() const {
  nlohmann::json j = {{"format_version", 1}, {"scenario", scenario}};
  j["sizes"] = nlohmann::json::array();
  for (const auto &s : sizes) {
    nlohmann::json r = nlohmann::json::array();
    for (const auto &rep : s.reports) r.push_back(rep.to_json());
    j["sizes"].push_back({{"size", s.size}, {"reports", r}});
  }
  return j;
}

ExperimentBundle ExperimentBundle::from_json(const nlohmann::json &j) {
  ExperimentBundle b;
  try {
    b.scenario = j.at("scenario").get<std::string>();
    for (const auto &s : j.at("sizes")) {
      SizeResult r;
      r.size = s.at("size").get<std::size_t>();
      for (const auto &rep : s.at("reports"))
        r.reports.push_back(metrics::ScoreReport::from_json(rep));
      b.sizes.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception &e) {
    throw DataError(std::string("experiment bundle: ") + e.what());
  }
  return b;
}

const metrics::ScoreReport *ExperimentBundle::find(std::size_t size,
                                                   const std::string &model) const {
  for (const auto &s : sizes)
    if (s.size == size)
      for (const auto &r : s.reports)
        if (r.model == model) return &r;
  return nullptr;
}

namespace {

void write_json(const nlohmann::json &j, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

}  // namespace

ExperimentBundle run_experiment(const ExperimentConfig &cfg,
                                const std::optional<std::filesystem::path> &out_dir) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  const std::size_t max_size = *std::max_element(cfg.sizes.begin(), cfg.sizes.end());
  const metrics::Truth truth = cfg.sim.scenario == sim::Scenario::measurement_error
                                   ? metrics::Truth::latent
                                   : metrics::Truth::observed;

  std::vector<std::string> models;
  for (auto a : cfg.archs) models.emplace_back(ctrnn::to_string(a));
  if (cfg.include_linear) models.emplace_back("linear");
  if (cfg.include_oracle) models.emplace_back("oracle");

  ExperimentBundle bundle;
  bundle.scenario = std::string(sim::to_string(cfg.sim.scenario));
  for (auto n : cfg.sizes) {
    SizeResult s;
    s.size = n;
    for (const auto &m : models) s.reports.push_back({m, {}});
    bundle.sizes.push_back(std::move(s));
  }
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    write_json(cfg.to_json(), *out_dir / "experiment.json");
  }

  for (int run = 0; run < cfg.n_runs; ++run) {
    const std::uint64_t run_seed = cfg.seed * 1000 + static_cast<std::uint64_t>(run) * 10;
    sim::SimConfig train_sim = cfg.sim;
    train_sim.n_trajectories = max_size;
    train_sim.seed = run_seed + 1;
    sim::SimConfig test_sim = cfg.sim;
    test_sim.n_trajectories = cfg.test_size;
    test_sim.seed = run_seed + 2;
    const Dataset pool = sim::simulate_dataset(train_sim).records;
    const Dataset test = sim::simulate_dataset(test_sim).records;

    for (std::size_t si = 0; si < cfg.sizes.size(); ++si) {
      const std::size_t n = cfg.sizes[si];
      const Dataset train_set(pool.begin(), pool.begin() + static_cast<long>(n));
      SizeResult &sr = bundle.sizes[si];
      auto run_dir = [&](const std::string &model) {
        auto d = *out_dir / ("N" + std::to_string(n)) / model /
                 ("run" + std::to_string(run));
        std::filesystem::create_directories(d);
        return d;
      };
      std::size_t mi = 0;
      for (auto kind : cfg.archs) {
        const auto t0 = clock::now();
        ArchSpec spec = cfg.arch_defaults;
        spec.kind = kind;
        losses::LossConfig lc = cfg.loss;
        if (cfg.continuous_lambda && !is_timegap(kind)) lc.lambda = *cfg.continuous_lambda;
        TrainConfig tc = cfg.train;
        tc.seed = run_seed + 3;
        const TrainResult tr = train(spec, train_set, tc, lc);
        const metrics::MetricSet ms =
            metrics::evaluate(metrics::model_forecaster(tr.model), test, truth);
        sr.reports[mi].runs.push_back(ms);
        if (out_dir) {
          const auto d = run_dir(models[mi]);
          write_history_csv(tr.history, d / "history.csv");
          tr.model.save(d);
          write_json(ms.to_json(), d / "metrics.json");
        }
        const double secs = std::chrono::duration<double>(clock::now() - t0).count();
        std::fprintf(stderr, "[%s N=%zu run %d] %-13s crps=%.5f epochs=%zu best=%d (%.1fs)\n",
                     bundle.scenario.c_str(), n, run + 1, models[mi].c_str(), ms.crps,
                     tr.history.size(), tr.best_epoch, secs);
        ++mi;
      }
      if (cfg.include_linear) {
        const auto fit = baseline::fit_linear(train_set);
        const auto ms = metrics::evaluate(baseline::linear_forecaster(fit), test, truth);
        sr.reports[mi].runs.push_back(ms);
        if (out_dir) {
          const auto d = run_dir("linear");
          write_json(fit.to_json(), d / "linear.json");
          write_json(ms.to_json(), d / "metrics.json");
        }
        std::fprintf(stderr, "[%s N=%zu run %d] %-13s crps=%.5f\n", bundle.scenario.c_str(),
                     n, run + 1, "linear", ms.crps);
        ++mi;
      }
      if (cfg.include_oracle) {
        const auto ms = metrics::evaluate(baseline::oracle_forecaster(cfg.sim), test, truth);
        sr.reports[mi].runs.push_back(ms);
        if (out_dir) write_json(ms.to_json(), run_dir("oracle") / "metrics.json");
        ++mi;
      }
    }
  }
  if (out_dir) write_json(bundle.to_json(), *out_dir / "bundle.json");
  return bundle;
}

}  // namespace ctrnn::train

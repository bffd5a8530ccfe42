#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "ctrnn/losses.hpp"
#include "ctrnn/model.hpp"
#include "helpers.hpp"

using namespace ctrnn;
namespace fs = std::filesystem;

namespace {

ArchSpec small(ArchKind k, std::size_t h = 4) {
  ArchSpec a;
  a.kind = k;
  a.hidden_dim = h;
  a.intervention_dim = 3;
  a.field_hidden = 5;
  return a;
}

std::vector<double> vec(const Graph &g, NodeId n) {
  const auto v = g.value(n);
  return {v.begin(), v.end()};
}

void zero_except(ParamStore &s, std::initializer_list<const char *> keep) {
  for (std::size_t i = 0; i < s.num_entries(); ++i) {
    const auto &name = s.entry(i).name;
    if (std::find(keep.begin(), keep.end(), name) != keep.end()) continue;
    std::fill(s.value(i).begin(), s.value(i).end(), 0.0);
  }
}

EventInput input(double y, double insulin = 0.0) {
  EventInput e;
  e.y_log = std::log(y);
  e.insulin_rate = insulin;
  e.gap_since_last = 1.0;
  e.delta_next = 2.0;
  return e;
}

}  // namespace

TEST_CASE("architecture names") {
  CHECK(all_archs().size() == 8);
  for (ArchKind k : all_archs()) CHECK(parse_arch(to_string(k)) == k);
  CHECK_FALSE(parse_arch("bogus").has_value());
  const std::string names = arch_names();
  for (const char *n : {"ode_gru", "ode_lstm", "flow_gru", "flow_lstm", "decay_gru",
                        "imode", "timegap_gru", "timegap_lstm"})
    CHECK(names.find(n) != std::string::npos);
}

TEST_CASE("arch spec json round trip and validation") {
  ArchSpec a = small(ArchKind::imode, 7);
  a.y_center = 4.9;
  a.y_scale = 0.25;
  a.solve.method = odeflow::Method::euler;
  const ArchSpec b = ArchSpec::from_json(a.to_json());
  CHECK(b.kind == ArchKind::imode);
  CHECK(b.hidden_dim == 7);
  CHECK(b.intervention_dim == 3);
  CHECK(b.y_center == 4.9);
  CHECK(b.y_scale == 0.25);
  CHECK(b.solve.method == odeflow::Method::euler);
  ArchSpec bad = a;
  bad.hidden_dim = 0;
  CHECK_THROWS(bad.validate());
  bad = a;
  bad.y_scale = 0.0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("initial state is finite, sized, and repeatable") {
  for (ArchKind k : all_archs()) {
    const Model m(small(k, 6), 11);
    Graph g;
    Session s(m, g);
    const ModelState a = s.init_state(), b = s.init_state();
    CHECK(g.shape(a.z) == Shape{6, 1});
    for (double v : g.value(a.z)) CHECK(std::isfinite(v));
    CHECK(vec(g, a.z) == vec(g, b.z));
    CHECK(a.c.has_value() == uses_lstm(k));
    CHECK(a.za.has_value() == (k == ArchKind::imode));
  }
}

TEST_CASE("zero-parameter gru jump halves the state") {
  for (ArchKind k : {ArchKind::ode_gru, ArchKind::flow_gru, ArchKind::decay_gru,
                     ArchKind::timegap_gru, ArchKind::imode}) {
    Model m(small(k), 5);
    zero_except(m.params(), {"init/z", "init/za"});
    Graph g;
    Session s(m, g);
    const ModelState st = s.init_state();
    const ModelState next = s.update(st, input(130.0, 3.0));
    const auto z0 = vec(g, st.z), z1 = vec(g, next.z);
    for (std::size_t i = 0; i < z0.size(); ++i) CHECK(z1[i] == 0.5 * z0[i]);
    if (k == ArchKind::imode) {
      // No treatment and zero parameters.
      const ModelState na = s.update(st, input(130.0, 0.0));
      const auto a0 = vec(g, *st.za), a1 = vec(g, *na.za);
      for (std::size_t i = 0; i < a0.size(); ++i) CHECK(a1[i] == 0.5 * a0[i]);
    }
  }
}

TEST_CASE("masked target feeds back the forecast mean") {
  for (ArchKind k : all_archs()) {
    const Model m(small(k), 21);
    Graph g;
    Session s(m, g);
    const ModelState st = s.init_state();
    EventInput masked = input(130.0);
    masked.y_log.reset();
    EventInput fed = masked;
    fed.y_log = s.value(s.forecast(st)).mu_log;
    const auto a = vec(g, s.update(st, masked).z);
    const auto b = vec(g, s.update(st, fed).z);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
    CHECK(a != vec(g, st.z));
  }
}

TEST_CASE("zero gap leaves every state unchanged") {
  for (ArchKind k : all_archs()) {
    const Model m(small(k), 3);
    Graph g;
    Session s(m, g);
    const ModelState st = s.update(s.init_state(), input(150.0, 3.0));
    const ModelState ev = s.evolve(st, 0.0, {3.0, 1.0});
    CHECK(vec(g, ev.z) == vec(g, st.z));
    if (st.za) CHECK(vec(g, *ev.za) == vec(g, *st.za));
    if (is_timegap(k)) CHECK(vec(g, s.evolve(st, 5.0, {3.0, 0.0}).z) == vec(g, st.z));
  }
}

namespace {

struct PathJumps {
  double step = 0.0;    // largest first difference
  double excess = 0.0;  // largest first difference beyond the local slope
  double spread = 0.0;  // largest distance from the gap-zero forecast
};

PathJumps path_jumps(const Session &s, const ModelState &st, int per_hour) {
  std::vector<double> mu = {s.value(s.forecast(st)).mu_log};
  for (int i = 1; i <= 6 * per_hour; ++i)
    mu.push_back(s.value(s.forecast(s.evolve(st, double(i) / per_hour, {10.0, 0.0}))).mu_log);
  PathJumps j;
  for (std::size_t i = 1; i < mu.size(); ++i) {
    const double d = mu[i] - mu[i - 1];
    j.step = std::max(j.step, std::abs(d));
    j.spread = std::max(j.spread, std::abs(mu[i] - mu[0]));
    if (i + 1 < mu.size() && i >= 2) {
      const double slope = 0.5 * ((mu[i - 1] - mu[i - 2]) + (mu[i + 1] - mu[i]));
      j.excess = std::max(j.excess, std::abs(d - slope));
    }
  }
  return j;
}

}  // namespace

TEST_CASE("pre-update forecast is continuous in the elapsed gap") {
  for (ArchKind k : all_archs()) {
    ArchSpec a;
    a.kind = k;
    a.y_center = std::log(140.0);
    a.y_scale = 0.2;
    const Model m(a, 13);
    Graph g;
    Session s(m, g);
    const ModelState st = s.update(s.init_state(), input(170.0, 10.0));
    const PathJumps minute = path_jumps(s, st, 60);
    const PathJumps tenth = path_jumps(s, st, 600);
    INFO(to_string(k) << " first difference per minute " << minute.step);
    CHECK(minute.excess < 1e-3);
    if (is_timegap(k)) {
      CHECK(minute.spread == 0.0);
    } else {
      CHECK(minute.spread > 0.0);
      // A jump would not shrink with the grid.
      CHECK(tenth.step < 0.2 * minute.step);
    }
  }
}

TEST_CASE("forecast distribution") {
  const ForecastDist d{std::log(100.0), 1e-9};
  CHECK(d.median_mgdl() == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(d.mean_mgdl() == doctest::Approx(100.0).epsilon(1e-12));
  const ForecastDist w{std::log(120.0), 0.3};
  CHECK(w.median_mgdl() > 0.0);
  CHECK(w.quantile_mgdl(0.5) == doctest::Approx(120.0).epsilon(1e-12));
  CHECK(w.quantile_mgdl(0.975) == doctest::Approx(120.0 * std::exp(0.3 * 1.959963984540054)).epsilon(1e-10));
  CHECK(w.mean_mgdl() == doctest::Approx(120.0 * std::exp(0.045)).epsilon(1e-12));
}

TEST_CASE("rollout counts and ordering") {
  const Model m(small(ArchKind::ode_lstm), 1);
  TrajectoryRecord r;
  r.events = {testing::event(0.0, 140.0), testing::event(2.0, 150.0)};
  Graph g;
  Session s(m, g);
  const Rollout ro = s.rollout(r);
  REQUIRE(ro.size() == 2);
  CHECK_FALSE(ro[0].pre.has_value());
  CHECK(ro[1].pre.has_value());
  CHECK(ro[1].gap == 2.0);
  CHECK(predict_trajectory(m, r).size() == 1);
  CHECK(predict_trajectory(m, testing::toy_trajectory()).size() == 2);
  r.events[1].t = 0.0;
  CHECK_THROWS_AS(s.rollout(r), DataError);
}

TEST_CASE("rollout and prediction are deterministic") {
  for (ArchKind k : all_archs()) {
    const Model m(small(k), 8);
    const auto a = predict_trajectory(m, testing::toy_trajectory());
    const auto b = predict_trajectory(m, testing::toy_trajectory());
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].mu_log == b[i].mu_log);
      CHECK(a[i].sigma_log == b[i].sigma_log);
      CHECK(a[i].sigma_log > 0.0);
    }
    Model other(small(k), 9);
    CHECK(predict_trajectory(other, testing::toy_trajectory())[0].mu_log != a[0].mu_log);
  }
}

TEST_CASE("standardisation maps head output onto log glucose") {
  ArchSpec a = small(ArchKind::decay_gru);
  a.y_center = 5.0;
  a.y_scale = 0.2;
  Model std_model(a, 4);
  ArchSpec b = a;
  b.y_center = 0.0;
  b.y_scale = 1.0;
  Model raw(b, ParamStore(std_model.params()));
  Graph g;
  Session ss(std_model, g), sr(raw, g);
  const ForecastDist fs = ss.value(ss.forecast(ss.init_state()));
  const ForecastDist fr = sr.value(sr.forecast(sr.init_state()));
  CHECK(fs.mu_log == doctest::Approx(5.0 + 0.2 * fr.mu_log).epsilon(1e-14));
  CHECK(fs.sigma_log == doctest::Approx(0.2 * fr.sigma_log).epsilon(1e-14));
}

TEST_CASE("forecast path covers each gap") {
  const Model m(small(ArchKind::flow_gru), 2);
  const auto r = testing::toy_trajectory();
  const auto path = forecast_path(m, r, 4);
  // 1.5 h and 2.5 h gaps at four points per hour.
  REQUIRE(path.size() == 6 + 10);
  CHECK(path[5].t == 1.5);
  CHECK(path.back().t == 4.0);
  const auto pre = predict_trajectory(m, r);
  CHECK(path[5].dist.mu_log == doctest::Approx(pre[0].mu_log).epsilon(1e-12));
  CHECK(path.back().dist.mu_log == doctest::Approx(pre[1].mu_log).epsilon(1e-12));
  for (std::size_t i = 1; i < path.size(); ++i) CHECK(path[i].t > path[i - 1].t);
}

TEST_CASE("checkpoint round trip") {
  const fs::path dir = fs::temp_directory_path() / "ctrnn_model_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  for (ArchKind k : all_archs()) {
    const Model m(small(k), 6);
    m.save(dir);
    const Model back = Model::load(dir);
    CHECK(back.arch().kind == k);
    const auto a = predict_trajectory(m, testing::toy_trajectory());
    const auto b = predict_trajectory(back, testing::toy_trajectory());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].mu_log == b[i].mu_log);
  }
  CHECK_THROWS(Model::load(dir / "missing"));
  nlohmann::json doc = Model(small(ArchKind::ode_gru), 1).checkpoint();
  doc["format_version"] = 42;
  CHECK_THROWS(Model::from_checkpoint(doc));
}

TEST_CASE("end-to-end gradients through rollout and loss for every architecture") {
  losses::LossConfig cfg;
  cfg.lambda = 0.1;
  const auto r = testing::toy_trajectory();
  for (ArchKind k : all_archs()) {
    ArchSpec a = small(k, 3);
    a.y_center = std::log(140.0);
    a.y_scale = 0.2;
    Model m(a, 17);
    const double err = grad_check(
        [&](Graph &g, const ParamStore &) {
          Session s(m, g);
          return losses::total_loss(g, s.rollout(r), r, cfg);
        },
        m.params(), 1e-5);
    INFO(to_string(k));
    CHECK(err < 1e-3);
  }
}

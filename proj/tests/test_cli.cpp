#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ctrnn/dataset.hpp"
#include "ctrnn/metrics.hpp"
#include "ctrnn/simgen.hpp"

using namespace ctrnn;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "ctrnn_cli";

struct Run {
  int code = -1;
  std::string log;
};

Run run(const std::string &args, int threads = 1) {
  fs::create_directories(kRoot);
  const fs::path log = kRoot / "last.log";
  const std::string cmd = "CTRNN_THREADS=" + std::to_string(threads) + " '" + CTRNN_BIN +
                          "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.log = ss.str();
  return r;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string q(const fs::path &p) { return "'" + p.string() + "'"; }

fs::path fresh(const std::string &name) {
  const fs::path d = kRoot / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write(const fs::path &p, const std::string &text) { std::ofstream(p) << text; }

std::size_t count(const std::string &s, const std::string &needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("simulate writes one line per trajectory, reproducibly") {
  const fs::path d = fresh("simulate");
  write(d / "sim.json", R"({"n_trajectories": 10, "seed": 3})");
  REQUIRE(run("simulate --config " + q(d / "sim.json") + " --out " + q(d / "a.jsonl") +
              " --summary " + q(d / "a.csv")).code == 0);
  REQUIRE(run("simulate --config " + q(d / "sim.json") + " --out " + q(d / "b.jsonl") +
              " --summary " + q(d / "b.csv"), 4).code == 0);
  const std::string a = slurp(d / "a.jsonl");
  CHECK(count(a, "\n") == 10);
  CHECK(a == slurp(d / "b.jsonl"));
  CHECK(slurp(d / "a.csv") == slurp(d / "b.csv"));
}

TEST_CASE("simulated day has about seven and a half observations") {
  const fs::path d = fresh("simulate_n");
  write(d / "sim.json", R"({"seed": 1})");
  REQUIRE(run("simulate --config " + q(d / "sim.json") + " --n 1000 --out " +
              q(d / "d.jsonl")).code == 0);
  const auto s = sim::summarize(read_dataset(d / "d.jsonl"));
  CHECK(std::abs(s.mean_events - 7.5) < 0.5);
}

TEST_CASE("invalid input is rejected before work starts") {
  const fs::path d = fresh("invalid");
  write(d / "sim.json", R"({"n_trajectories": 10, "sed": 3})");
  Run r = run("simulate --config " + q(d / "sim.json") + " --out " + q(d / "x.jsonl"));
  CHECK(r.code != 0);
  CHECK(r.log.find("sed") != std::string::npos);
  CHECK_FALSE(fs::exists(d / "x.jsonl"));
  CHECK(run("simulate --bogus-flag 1").code != 0);
  CHECK(run("simulate --config " + q(d / "missing.json") + " --out " + q(d / "x.jsonl")).code != 0);
  CHECK(run("simulate --config " + q(d / "sim.json") + " --out " + q(d / "no/such/dir/x.jsonl")).code != 0);
}

TEST_CASE("unknown architecture lists the valid ones") {
  const fs::path d = fresh("bogus");
  write(d / "sim.json", R"({"n_trajectories": 5})");
  REQUIRE(run("simulate --config " + q(d / "sim.json") + " --out " + q(d / "d.jsonl")).code == 0);
  const Run r = run("train --data " + q(d / "d.jsonl") + " --arch bogus --out " + q(d / "m"));
  CHECK(r.code != 0);
  for (const char *n : {"ode_gru", "ode_lstm", "flow_gru", "flow_lstm", "decay_gru", "imode",
                        "timegap_gru", "timegap_lstm"})
    CHECK(r.log.find(n) != std::string::npos);
  CHECK_FALSE(fs::exists(d / "m"));
}

TEST_CASE("train, evaluate and report pipeline") {
  const fs::path d = fresh("pipeline");
  write(d / "sim.json", R"({"n_trajectories": 120, "seed": 5})");
  write(d / "train.json", R"({"epochs": 3, "batch_size": 16, "seed": 2})");
  REQUIRE(run("simulate --config " + q(d / "sim.json") + " --out " + q(d / "train.jsonl")).code == 0);
  REQUIRE(run("simulate --config " + q(d / "sim.json") + " --seed 6 --n 40 --out " +
              q(d / "test.jsonl")).code == 0);
  for (const char *m : {"m1", "m2"})
    REQUIRE(run("train --data " + q(d / "train.jsonl") + " --arch flow_gru --hidden-dim 6" +
                " --train-config " + q(d / "train.json") + " --out " + q(d / m),
                m[1] == '1' ? 1 : 3).code == 0);
  CHECK(slurp(d / "m1" / "history.csv") == slurp(d / "m2" / "history.csv"));
  CHECK(slurp(d / "m1" / "model.json") == slurp(d / "m2" / "model.json"));

  REQUIRE(run("evaluate --model " + q(d / "m1") + " --data " + q(d / "test.jsonl") + " --out " +
              q(d / "model.json")).code == 0);
  REQUIRE(run("evaluate --oracle --sim-config " + q(d / "sim.json") + " --data " +
              q(d / "test.jsonl") + " --out " + q(d / "oracle.json")).code == 0);
  REQUIRE(run("evaluate --linear " + q(d / "train.jsonl") + " --data " + q(d / "test.jsonl") +
              " --out " + q(d / "linear.json")).code == 0);
  CHECK(fs::exists(d / "model.csv"));

  write(d / "one.jsonl", slurp(d / "test.jsonl").substr(0, slurp(d / "test.jsonl").find('\n') + 1));
  const std::string plots = q(d / "plots");
  REQUIRE(run("report --in " + q(d / "model.json") + " " + q(d / "oracle.json") + " " +
              q(d / "linear.json") + " --plots " + plots + " --model " + q(d / "m1") +
              " --data " + q(d / "one.jsonl")).code == 0);
  std::ifstream table(d / "plots" / "table.csv");
  std::string header;
  std::getline(table, header);
  CHECK(header == metrics::table_header());
  std::size_t rows = 0;
  for (std::string line; std::getline(table, line);) ++rows;
  CHECK(rows == 3);

  const Dataset one = read_dataset(d / "one.jsonl");
  REQUIRE(one.size() == 1);
  const fs::path svg = d / "plots" / ("forecast_" + std::to_string(one[0].traj_id) + ".svg");
  REQUIRE(fs::exists(svg));
  CHECK(count(slurp(svg), "<circle class=\"obs\"") == one[0].events.size());
  const std::string md = slurp(d / "plots" / "report.md");
  CHECK(md.find("higher is better") != std::string::npos);
}

TEST_CASE("oracle report on the standard simulation is calibrated") {
  const fs::path d = fresh("oracle");
  write(d / "sim.json", R"({"n_trajectories": 1500, "seed": 21})");
  REQUIRE(run("simulate --config " + q(d / "sim.json") + " --out " + q(d / "t.jsonl")).code == 0);
  REQUIRE(run("evaluate --oracle --sim-config " + q(d / "sim.json") + " --data " +
              q(d / "t.jsonl") + " --out " + q(d / "r.json")).code == 0);
  const auto reps = metrics::read_report_json(d / "r.json");
  REQUIRE(reps.size() == 1);
  const auto &m = reps[0].runs.at(0);
  CHECK(std::abs(m.coverage - 95.0) <= 1.0);
  CHECK(std::abs(100.0 * m.var_pit - 8.3) <= 1.0);
}

TEST_CASE("empty test set is an error, not an empty report") {
  const fs::path d = fresh("empty");
  write(d / "sim.json", R"({"n_trajectories": 3})");
  write(d / "empty.jsonl", "");
  const Run r = run("evaluate --oracle --sim-config " + q(d / "sim.json") + " --data " +
                    q(d / "empty.jsonl") + " --out " + q(d / "r.json"));
  CHECK(r.code != 0);
  CHECK(r.log.find("empty") != std::string::npos);
  CHECK_FALSE(fs::exists(d / "r.json"));
}

TEST_CASE("experiment and data-size plots") {
  const fs::path d = fresh("experiment");
  write(d / "exp.json", R"({
    "sizes": [60, 120], "archs": ["decay_gru", "timegap_gru"], "n_runs": 2,
    "test_size": 50, "arch": {"hidden_dim": 4},
    "train": {"epochs": 2, "batch_size": 16}
  })");
  REQUIRE(run("experiment --config " + q(d / "exp.json") + " --out " + q(d / "out")).code == 0);
  REQUIRE(run("report --in " + q(d / "out") + " --plots " + q(d / "plots")).code == 0);
  std::string svg;
  for (const auto &e : fs::directory_iterator(d / "plots"))
    if (e.path().filename().string().find("_crps.svg") != std::string::npos) svg = slurp(e.path());
  REQUIRE_FALSE(svg.empty());
  CHECK(count(svg, "<g class=\"series\"") == 2);
}

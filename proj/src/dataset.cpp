// SPDX-License-Identifier: Apache-2.0
#include "ctrnn/dataset.hpp"

#include <fstream>
#include <string>

namespace ctrnn {

namespace {

template <typename T>
T field(const nlohmann::json &j, const char *name, const char *where) {
  if (!j.is_object() || !j.contains(name))
    throw DataError(std::string(where) + ": missing field '" + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const nlohmann::json::exception &) {
    throw DataError(std::string(where) + ": field '" + name +
                    "' has the wrong type");
  }
}

}  // namespace

nlohmann::json to_json(const TrajectoryRecord &r) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto &e : r.events) {
    events.push_back({{"t", e.t},
                      {"glucose_obs", e.glucose_obs},
                      {"glucose_true", e.glucose_true},
                      {"insulin_rate", e.insulin_rate},
                      {"glucose_input", e.glucose_input},
                      {"target_mask", e.target_mask},
                      {"insulin_sensitivity", e.insulin_sensitivity}});
  }
  nlohmann::json j = {{"traj_id", r.traj_id}, {"events", std::move(events)}};
  if (r.params) {
    j["params"] = {{"G0", r.params->g0},
                   {"Gb", r.params->gb},
                   {"gamma", r.params->gamma},
                   {"sigma", r.params->sigma},
                   {"beta", r.params->beta}};
  }
  if (r.dense_truth) {
    j["dense_truth"] = {{"t", r.dense_truth->t},
                        {"glucose", r.dense_truth->glucose}};
  }
  return j;
}

TrajectoryRecord record_from_json(const nlohmann::json &j) {
  TrajectoryRecord r;
  r.traj_id = field<std::int64_t>(j, "traj_id", "trajectory");
  if (!j.is_object() || !j.contains("events"))
    throw DataError("trajectory: missing field 'events'");
  if (!j.at("events").is_array())
    throw DataError("trajectory: field 'events' must be an array");
  for (const auto &ej : j.at("events")) {
    Event e;
    e.t = field<double>(ej, "t", "event");
    e.glucose_obs = field<double>(ej, "glucose_obs", "event");
    e.glucose_true = field<double>(ej, "glucose_true", "event");
    e.insulin_rate = field<double>(ej, "insulin_rate", "event");
    e.glucose_input = field<double>(ej, "glucose_input", "event");
    e.target_mask = field<int>(ej, "target_mask", "event");
    if (ej.contains("insulin_sensitivity"))
      e.insulin_sensitivity = field<double>(ej, "insulin_sensitivity", "event");
    r.events.push_back(e);
  }
  if (j.contains("params")) {
    const auto &p = j.at("params");
    r.params = SdeParams{field<double>(p, "G0", "params"),
                         field<double>(p, "Gb", "params"),
                         field<double>(p, "gamma", "params"),
                         field<double>(p, "sigma", "params"),
                         field<double>(p, "beta", "params")};
  }
  if (j.contains("dense_truth")) {
    const auto &d = j.at("dense_truth");
    r.dense_truth = DenseTruth{field<std::vector<double>>(d, "t", "dense_truth"),
                               field<std::vector<double>>(d, "glucose", "dense_truth")};
  }
  return r;
}

void write_dataset(const Dataset &records, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  for (const auto &r : records) out << to_json(r).dump() << '\n';
  out.flush();
  if (!out) throw DataError("failed writing " + path.string());
}

Dataset read_dataset(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  Dataset out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception &e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": malformed JSON: " + e.what());
    } catch (const DataError &e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " +
                      e.what());
    }
  }
  return out;
}

void validate_record(const TrajectoryRecord &r, double horizon) {
  const std::string who = "trajectory " + std::to_string(r.traj_id);
  for (std::size_t k = 0; k < r.events.size(); ++k) {
    const Event &e = r.events[k];
    if (e.t < 0.0 || e.t > horizon)
      throw DataError(who + ": event time outside [0, horizon]");
    if (k > 0 && !(e.t > r.events[k - 1].t))
      throw DataError(who + ": event times not strictly increasing");
    if (!(e.glucose_obs > 0.0))
      throw DataError(who + ": nonpositive glucose_obs");
    if (e.target_mask != 0 && e.target_mask != 1)
      throw DataError(who + ": target_mask must be 0 or 1");
  }
}

}  // namespace ctrnn

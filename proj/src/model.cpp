// SPDX-License-Identifier: Apache-2.0
#include "ctrnn/model.hpp"

#include <array>
#include <cmath>
#include <fstream>

#include <boost/math/special_functions/erf.hpp>

namespace ctrnn {

namespace {

constexpr std::array<ArchKind, 8> kArchs = {
    ArchKind::ode_gru,   ArchKind::ode_lstm, ArchKind::flow_gru,
    ArchKind::flow_lstm, ArchKind::decay_gru, ArchKind::imode,
    ArchKind::timegap_gru, ArchKind::timegap_lstm};

constexpr double kInsulinScale = 20.0;
constexpr double kGlucoseInputScale = 10.0;
constexpr double kGapScale = 24.0;

}  // namespace

std::string_view to_string(ArchKind k) {
  switch (k) {
    case ArchKind::ode_gru: return "ode_gru";
    case ArchKind::ode_lstm: return "ode_lstm";
    case ArchKind::flow_gru: return "flow_gru";
    case ArchKind::flow_lstm: return "flow_lstm";
    case ArchKind::decay_gru: return "decay_gru";
    case ArchKind::imode: return "imode";
    case ArchKind::timegap_gru: return "timegap_gru";
    case ArchKind::timegap_lstm: return "timegap_lstm";
  }
  return "?";
}

std::optional<ArchKind> parse_arch(std::string_view s) {
  for (auto k : kArchs)
    if (to_string(k) == s) return k;
  return std::nullopt;
}

std::span<const ArchKind> all_archs() { return kArchs; }

std::string arch_names() {
  std::string out;
  for (auto k : kArchs) {
    if (!out.empty()) out += ", ";
    out += to_string(k);
  }
  return out;
}

bool uses_lstm(ArchKind k) {
  return k == ArchKind::ode_lstm || k == ArchKind::flow_lstm ||
         k == ArchKind::timegap_lstm;
}

bool is_timegap(ArchKind k) {
  return k == ArchKind::timegap_gru || k == ArchKind::timegap_lstm;
}

// ---------------------------------------------------------------------------

void ArchSpec::validate() const {
  if (hidden_dim < 1) throw std::invalid_argument("arch: hidden_dim must be >= 1");
  if (kind == ArchKind::imode && intervention_dim < 1)
    throw std::invalid_argument("arch: imode needs intervention_dim >= 1");
  if (field_hidden < 1) throw std::invalid_argument("arch: field_hidden must be >= 1");
  if (!(y_scale > 0.0)) throw std::invalid_argument("arch: y_scale must be positive");
  solve.validate();
}

nlohmann::json ArchSpec::to_json() const {
  return {{"format_version", Model::kFormatVersion},
          {"kind", std::string(ctrnn::to_string(kind))},
          {"hidden_dim", hidden_dim},
          {"intervention_dim", intervention_dim},
          {"field_hidden", field_hidden},
          {"solver",
           {{"method", std::string(odeflow::to_string(solve.method))},
            {"steps_per_hour", solve.steps_per_hour},
            {"max_steps", solve.max_steps}}},
          {"y_center", y_center},
          {"y_scale", y_scale}};
}

ArchSpec ArchSpec::from_json(const nlohmann::json &j) {
  ArchSpec a;
  try {
    const auto kind = parse_arch(j.at("kind").get<std::string>());
    if (!kind)
      throw std::invalid_argument("arch: unknown kind; valid: " + arch_names());
    a.kind = *kind;
    a.hidden_dim = j.value("hidden_dim", a.hidden_dim);
    a.intervention_dim = j.value("intervention_dim", a.intervention_dim);
    a.field_hidden = j.value("field_hidden", a.field_hidden);
    if (j.contains("solver")) {
      const auto &s = j.at("solver");
      a.solve.method = odeflow::parse_method(s.value("method", std::string("rk4")));
      a.solve.steps_per_hour = s.value("steps_per_hour", a.solve.steps_per_hour);
      a.solve.max_steps = s.value("max_steps", a.solve.max_steps);
    }
    a.y_center = j.value("y_center", a.y_center);
    a.y_scale = j.value("y_scale", a.y_scale);
  } catch (const nlohmann::json::exception &e) {
    throw std::invalid_argument(std::string("arch: ") + e.what());
  }
  a.validate();
  return a;
}

// ---------------------------------------------------------------------------

double ForecastDist::median_mgdl() const { return std::exp(mu_log); }

double ForecastDist::mean_mgdl() const {
  return std::exp(mu_log + 0.5 * sigma_log * sigma_log);
}

double ForecastDist::quantile_mgdl(double p) const {
  const double z = std::sqrt(2.0) * boost::math::erf_inv(2.0 * p - 1.0);
  return std::exp(mu_log + sigma_log * z);
}

// ---------------------------------------------------------------------------

Model::Model(ArchSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  nets::Rng rng(seed);
  build(&rng);
}

Model::Model(ArchSpec spec, ParamStore params)
    : spec_(std::move(spec)), store_(std::move(params)) {
  spec_.validate();
  build(nullptr);
}

std::size_t Model::input_dim() const { return is_timegap(spec_.kind) ? 5 : 4; }

void Model::build(nets::Rng *rng) {
  const std::size_t H = spec_.hidden_dim;
  const std::size_t A = spec_.intervention_dim;
  const std::size_t C = kControlDim;
  const std::size_t D = input_dim();
  const double init_bound = 1.0 / std::sqrt(static_cast<double>(H));

  init_z_ = nets::ensure_param(store_, "init/z", {H, 1}, init_bound, rng);
  switch (spec_.kind) {
    case ArchKind::ode_gru:
      gru_jump_.emplace(store_, "jump", D, H, rng);
      gru_field_.emplace(store_, "field", H, C, rng);
      break;
    case ArchKind::ode_lstm:
      lstm_jump_.emplace(store_, "jump", D, H, rng);
      mlp_field_.emplace(store_, "field",
                         nets::MlpSpec{{H + C, spec_.field_hidden, H},
                                       nets::FinalActivation::tanh},
                         rng);
      break;
    case ArchKind::imode:
      gru_jump_.emplace(store_, "jump", D, H, rng);
      intervention_jump_.emplace(store_, "jump_a", C, A, rng);
      mlp_field_.emplace(store_, "field",
                         nets::MlpSpec{{H + A + C, spec_.field_hidden, H},
                                       nets::FinalActivation::tanh},
                         rng);
      intervention_field_.emplace(
          store_, "field_a",
          nets::MlpSpec{{A, spec_.field_hidden, A}, nets::FinalActivation::tanh},
          rng);
      init_za_ = nets::ensure_param(store_, "init/za", {A, 1},
                                    1.0 / std::sqrt(static_cast<double>(A)), rng);
      break;
    case ArchKind::flow_gru:
      gru_jump_.emplace(store_, "jump", D, H, rng);
      flow_.emplace(store_, "flow", H, C, rng);
      break;
    case ArchKind::flow_lstm:
      lstm_jump_.emplace(store_, "jump", D, H, rng);
      flow_.emplace(store_, "flow", H, C, rng);
      break;
    case ArchKind::decay_gru:
      gru_jump_.emplace(store_, "jump", D, H, rng);
      decay_raw_ = nets::ensure_param(store_, "decay/raw_rate", {H, 1}, init_bound, rng);
      break;
    case ArchKind::timegap_gru:
      gru_jump_.emplace(store_, "jump", D, H, rng);
      break;
    case ArchKind::timegap_lstm:
      lstm_jump_.emplace(store_, "jump", D, H, rng);
      break;
  }
  if (uses_lstm(spec_.kind))
    init_c_ = nets::ensure_param(store_, "init/c", {H, 1}, init_bound, rng);
  const std::size_t head_in = spec_.kind == ArchKind::imode ? H + A : H;
  head_ = nets::OutputHead(store_, "head", head_in, rng);
}

nlohmann::json Model::checkpoint() const {
  return {{"format_version", kFormatVersion},
          {"arch", spec_.to_json()},
          {"params", store_.to_json()}};
}

Model Model::from_checkpoint(const nlohmann::json &doc) {
  if (!doc.contains("format_version") ||
      doc.at("format_version").get<int>() != kFormatVersion)
    throw std::invalid_argument("checkpoint: unsupported format_version");
  if (!doc.contains("arch")) throw std::invalid_argument("checkpoint: missing field 'arch'");
  if (!doc.contains("params")) throw std::invalid_argument("checkpoint: missing field 'params'");
  ParamStore store = ParamStore::from_json(doc.at("params"));
  const std::size_t expected = store.total_size();
  Model m(ArchSpec::from_json(doc.at("arch")), std::move(store));
  if (m.params().total_size() != expected)
    throw std::invalid_argument("checkpoint: parameters do not match the architecture");
  return m;
}

void Model::save(const std::filesystem::path &dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "model.json", std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + (dir / "model.json").string());
  out << checkpoint().dump(1) << '\n';
}

Model Model::load(const std::filesystem::path &dir) {
  std::ifstream in(dir / "model.json", std::ios::binary);
  if (!in) throw DataError("cannot read " + (dir / "model.json").string());
  try {
    return from_checkpoint(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception &e) {
    throw DataError("malformed checkpoint: " + std::string(e.what()));
  }
}

// ---------------------------------------------------------------------------

Session::Session(const Model &model, Graph &g) : model_(model), g_(g) {
  const ParamStore &s = model.store_;
  if (model.gru_jump_) gru_jump_ = model.gru_jump_->bind(g, s);
  if (model.lstm_jump_) lstm_jump_ = model.lstm_jump_->bind(g, s);
  if (model.intervention_jump_) intervention_jump_ = model.intervention_jump_->bind(g, s);
  if (model.gru_field_) gru_field_ = model.gru_field_->bind(g, s);
  if (model.mlp_field_) mlp_field_ = model.mlp_field_->bind(g, s);
  if (model.intervention_field_) intervention_field_ = model.intervention_field_->bind(g, s);
  if (model.flow_) flow_ = model.flow_->bind(g, s);
  if (model.decay_raw_) decay_rate_ = g.softplus(g.param(s, *model.decay_raw_));
  init_z_ = g.param(s, model.init_z_);
  if (model.init_c_) init_c_ = g.param(s, *model.init_c_);
  if (model.init_za_) init_za_ = g.param(s, *model.init_za_);
  head_ = model.head_.bind(g, s);
}

ModelState Session::init_state() const {
  return {init_z_, init_c_, init_za_, 0.0};
}

NodeId Session::controls_node(const Controls &u) const {
  return g_.column({u.insulin_rate / kInsulinScale,
                    u.glucose_input / kGlucoseInputScale});
}

NodeId Session::event_features(const ModelState &s, const EventInput &e) const {
  const ArchSpec &a = model_.spec_;
  NodeId y;
  if (e.y_log)
    y = g_.scalar((*e.y_log - a.y_center) / a.y_scale);
  else
    y = forecast(s).mu_head;
  const NodeId rest =
      is_timegap(a.kind)
          ? g_.column({e.insulin_rate / kInsulinScale,
                       e.glucose_input / kGlucoseInputScale,
                       e.gap_since_last / kGapScale, e.delta_next / kGapScale})
          : g_.column({e.insulin_rate / kInsulinScale,
                       e.glucose_input / kGlucoseInputScale,
                       e.gap_since_last / kGapScale});
  return g_.concat(y, rest);
}

ModelState Session::update(const ModelState &s, const EventInput &e) const {
  const Model &m = model_;
  const NodeId x = event_features(s, e);
  ModelState out = s;
  if (m.lstm_jump_) {
    const auto next = m.lstm_jump_->step(g_, *lstm_jump_, x, {s.z, *s.c});
    out.z = next.h;
    out.c = next.c;
  } else {
    out.z = m.gru_jump_->step(g_, *gru_jump_, x, s.z);
  }
  if (m.intervention_jump_) {
    const NodeId xa = controls_node({e.insulin_rate, e.glucose_input});
    out.za = m.intervention_jump_->step(g_, *intervention_jump_, xa, *s.za);
  }
  return out;
}

ModelState Session::evolve(const ModelState &s, double gap,
                           const Controls &u) const {
  if (gap < 0.0) throw std::invalid_argument("evolve: negative gap");
  const Model &m = model_;
  ModelState out = s;
  out.t = s.t + gap;
  if (gap == 0.0) return out;
  const NodeId ctrl = controls_node(u);
  switch (m.spec_.kind) {
    case ArchKind::ode_gru: {
      odeflow::OdeEvolution mech{
          [&](Graph &g, NodeId z) {
            return m.gru_field_->derivative(g, *gru_field_, z, ctrl);
          },
          m.spec_.solve};
      out.z = odeflow::evolve(g_, s.z, gap, mech);
      break;
    }
    case ArchKind::ode_lstm: {
      odeflow::OdeEvolution mech{
          [&](Graph &g, NodeId z) {
            return m.mlp_field_->forward(g, *mlp_field_, g.concat(z, ctrl));
          },
          m.spec_.solve};
      out.z = odeflow::evolve(g_, s.z, gap, mech);
      break;
    }
    case ArchKind::imode: {
      const std::size_t H = m.spec_.hidden_dim, A = m.spec_.intervention_dim;
      odeflow::OdeEvolution mech{
          [&](Graph &g, NodeId joint) {
            const NodeId dh =
                m.mlp_field_->forward(g, *mlp_field_, g.concat(joint, ctrl));
            const NodeId da = m.intervention_field_->forward(
                g, *intervention_field_, g.slice(joint, H, A));
            return g.concat(dh, da);
          },
          m.spec_.solve};
      const NodeId joint = odeflow::evolve(g_, g_.concat(s.z, *s.za), gap, mech);
      out.z = g_.slice(joint, 0, H);
      out.za = g_.slice(joint, H, A);
      break;
    }
    case ArchKind::flow_gru:
    case ArchKind::flow_lstm: {
      odeflow::FlowEvolution mech{[&](Graph &g, NodeId z, double dt) {
        return m.flow_->apply(g, *flow_, z, ctrl, dt);
      }};
      out.z = odeflow::evolve(g_, s.z, gap, mech);
      break;
    }
    case ArchKind::decay_gru:
      out.z = odeflow::evolve(g_, s.z, gap, odeflow::DecayEvolution{*decay_rate_});
      break;
    case ArchKind::timegap_gru:
    case ArchKind::timegap_lstm:
      out.z = odeflow::evolve(g_, s.z, gap, odeflow::IdentityEvolution{});
      break;
  }
  return out;
}

ForecastNodes Session::forecast(const ModelState &s) const {
  const ArchSpec &a = model_.spec_;
  const NodeId in = s.za ? g_.concat(s.z, *s.za) : s.z;
  const nets::HeadOutput h = model_.head_.forward(g_, head_, in);
  if (a.y_center == 0.0 && a.y_scale == 1.0) return {h.mu, h.sigma, h.mu};
  return {g_.add_scalar(g_.scale(h.mu, a.y_scale), a.y_center),
          g_.scale(h.sigma, a.y_scale), h.mu};
}

ForecastDist Session::value(const ForecastNodes &f) const {
  return {g_.item(f.mu_log), g_.item(f.sigma_log)};
}

std::vector<EventInput> event_inputs(const TrajectoryRecord &r) {
  std::vector<EventInput> out(r.events.size());
  for (std::size_t k = 0; k < r.events.size(); ++k) {
    const Event &e = r.events[k];
    EventInput &in = out[k];
    if (e.target_mask) in.y_log = std::log(e.glucose_obs);
    in.insulin_rate = e.insulin_rate;
    in.glucose_input = e.glucose_input;
    in.gap_since_last = k > 0 ? e.t - r.events[k - 1].t : 0.0;
    in.delta_next = k + 1 < r.events.size() ? r.events[k + 1].t - e.t : 0.0;
  }
  return out;
}

Rollout Session::rollout(const TrajectoryRecord &r) const {
  const auto inputs = event_inputs(r);
  Rollout out;
  out.reserve(r.events.size());
  ModelState s = init_state();
  for (std::size_t k = 0; k < r.events.size(); ++k) {
    const Event &e = r.events[k];
    RolloutStep step;
    step.event = k;
    if (k == 0) {
      if (e.t < 0.0) throw DataError("rollout: negative first event time");
      s = evolve(s, e.t, {});
    } else {
      const Event &prev = r.events[k - 1];
      if (!(e.t > prev.t))
        throw DataError("rollout: event times not strictly increasing in trajectory " +
                        std::to_string(r.traj_id));
      step.gap = e.t - prev.t;
      s = evolve(s, step.gap, {prev.insulin_rate, prev.glucose_input});
      step.pre = forecast(s);
    }
    s = update(s, inputs[k]);
    step.post = forecast(s);
    out.push_back(step);
  }
  return out;
}

std::vector<ForecastDist> predict_trajectory(const Model &m,
                                             const TrajectoryRecord &r) {
  thread_local Graph g;
  g.clear();
  Session session(m, g);
  const Rollout ro = session.rollout(r);
  std::vector<ForecastDist> out;
  for (const auto &step : ro)
    if (step.pre) out.push_back(session.value(*step.pre));
  return out;
}

std::vector<PathPoint> forecast_path(const Model &m, const TrajectoryRecord &r,
                                     int points_per_hour) {
  if (points_per_hour < 1)
    throw std::invalid_argument("forecast_path: points_per_hour must be >= 1");
  Graph g;
  Session session(m, g);
  const auto inputs = event_inputs(r);
  std::vector<PathPoint> out;
  ModelState s = session.evolve(session.init_state(),
                                r.events.empty() ? 0.0 : r.events[0].t, {});
  for (std::size_t k = 0; k < r.events.size(); ++k) {
    const Event &e = r.events[k];
    if (k > 0) {
      const Event &prev = r.events[k - 1];
      s = session.evolve(s, e.t - s.t, {prev.insulin_rate, prev.glucose_input});
    }
    s = session.update(s, inputs[k]);
    if (k + 1 == r.events.size()) break;
    const Event &next = r.events[k + 1];
    const double gap = next.t - e.t;
    const int n = std::max(1, static_cast<int>(std::ceil(gap * points_per_hour)));
    for (int i = 1; i <= n; ++i) {
      const double d = i == n ? gap : gap * i / n;
      const ModelState at = session.evolve(s, d, {e.insulin_rate, e.glucose_input});
      out.push_back({e.t + d, session.value(session.forecast(at))});
    }
  }
  return out;
}

}  // namespace ctrnn

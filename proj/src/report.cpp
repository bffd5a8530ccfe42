// SPDX-License-Identifier: Apache-2.0
#include "ctrnn/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace ctrnn::report {

namespace {

constexpr double kWidth = 800.0, kHeight = 400.0;
constexpr double kLeft = 70.0, kRight = 20.0, kTop = 40.0, kBottom = 50.0;
constexpr double kZ95 = 1.959963984540054;

const char *const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string esc(const std::string &s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Axis {
  double lo, hi, px_lo, px_hi;
  double operator()(double v) const {
    return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo);
  }
};

// Round tick spacing for a range.
double tick_step(double range, int target) {
  const double raw = range / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (raw <= m * mag) return m * mag;
  return 10.0 * mag;
}

std::string fmt_tick(double v) {
  char buf[32];
  if (std::abs(v) >= 100.0 || v == std::round(v))
    std::snprintf(buf, sizeof buf, "%.0f", v);
  else
    std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

void frame(std::ostringstream &o, const Axis &x, const Axis &y, const std::string &title,
           const std::string &xlabel, const std::string &ylabel, bool log_x) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << num(kWidth) << ' '
    << num(kHeight) << "\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n";
  o << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" fill=\"white\"/>\n";
  o << "<text x=\"" << num(kWidth / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
    << esc(title) << "</text>\n";
  o << "<g class=\"axes\" stroke=\"black\" fill=\"none\">\n";
  o << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kHeight - kBottom) << "\" x2=\""
    << num(kWidth - kRight) << "\" y2=\"" << num(kHeight - kBottom) << "\"/>\n";
  o << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(kLeft)
    << "\" y2=\"" << num(kHeight - kBottom) << "\"/>\n</g>\n";
  o << "<g class=\"ticks\" font-size=\"11\">\n";
  const double ys = tick_step(y.hi - y.lo, 5);
  for (double v = std::ceil(y.lo / ys) * ys; v <= y.hi + 1e-9; v += ys)
    o << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(y(v) + 4)
      << "\" text-anchor=\"end\">" << fmt_tick(v) << "</text>\n";
  if (log_x) {
    for (double d = std::pow(10.0, std::floor(x.lo)); std::log10(d) <= x.hi + 1e-9; d *= 10.0)
      if (std::log10(d) >= x.lo - 1e-9)
        o << "<text x=\"" << num(x(std::log10(d))) << "\" y=\"" << num(kHeight - kBottom + 16)
          << "\" text-anchor=\"middle\">" << fmt_tick(d) << "</text>\n";
  } else {
    const double xs = tick_step(x.hi - x.lo, 8);
    for (double v = std::ceil(x.lo / xs) * xs; v <= x.hi + 1e-9; v += xs)
      o << "<text x=\"" << num(x(v)) << "\" y=\"" << num(kHeight - kBottom + 16)
        << "\" text-anchor=\"middle\">" << fmt_tick(v) << "</text>\n";
  }
  o << "</g>\n";
  o << "<text x=\"" << num((kLeft + kWidth - kRight) / 2) << "\" y=\"" << num(kHeight - 12)
    << "\" text-anchor=\"middle\" font-size=\"12\">" << esc(xlabel) << "</text>\n";
  o << "<text x=\"16\" y=\"" << num((kTop + kHeight - kBottom) / 2)
    << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
    << num((kTop + kHeight - kBottom) / 2) << ")\">" << esc(ylabel) << "</text>\n";
}

}  // namespace

std::vector<PlotBand> bands(std::span<const PathPoint> path) {
  std::vector<PlotBand> out;
  out.reserve(path.size());
  for (const auto &p : path)
    out.push_back({p.t, std::exp(p.dist.mu_log - kZ95 * p.dist.sigma_log),
                   std::exp(p.dist.mu_log),
                   std::exp(p.dist.mu_log + kZ95 * p.dist.sigma_log)});
  return out;
}

std::string forecast_svg(const TrajectoryRecord &r, std::span<const PlotBand> band,
                         const std::string &title) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo, t_hi = 0.0;
  for (const auto &e : r.events) {
    lo = std::min(lo, e.glucose_obs);
    hi = std::max(hi, e.glucose_obs);
    t_hi = std::max(t_hi, e.t);
  }
  for (const auto &b : band) {
    lo = std::min(lo, b.lower);
    hi = std::max(hi, b.upper);
    t_hi = std::max(t_hi, b.t);
  }
  if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
  const double pad = std::max(1.0, 0.05 * (hi - lo));
  const Axis x{0.0, std::max(t_hi, 1.0), kLeft, kWidth - kRight};
  const Axis y{std::max(0.0, lo - pad), hi + pad, kHeight - kBottom, kTop};

  std::ostringstream o;
  frame(o, x, y, title, "time (h)", "glucose (mg/dL)", false);
  if (!band.empty()) {
    o << "<polygon class=\"band\" fill=\"#1f77b4\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
    for (const auto &b : band) o << num(x(b.t)) << ',' << num(y(b.upper)) << ' ';
    for (auto it = band.rbegin(); it != band.rend(); ++it)
      o << num(x(it->t)) << ',' << num(y(it->lower)) << ' ';
    o << "\"/>\n";
    o << "<polyline class=\"median\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
    for (const auto &b : band) o << num(x(b.t)) << ',' << num(y(b.median)) << ' ';
    o << "\"/>\n";
  }
  o << "<g class=\"observations\" fill=\"black\">\n";
  for (const auto &e : r.events)
    o << "<circle class=\"obs\" cx=\"" << num(x(e.t)) << "\" cy=\"" << num(y(e.glucose_obs))
      << "\" r=\"3\"/>\n";
  o << "</g>\n</svg>\n";
  return o.str();
}

std::string datasize_svg(const train::ExperimentBundle &b, metrics::Metric m) {
  if (b.sizes.empty()) throw DataError("datasize plot: empty bundle");
  std::vector<std::string> models;
  for (const auto &s : b.sizes)
    for (const auto &r : s.reports)
      if (std::find(models.begin(), models.end(), r.model) == models.end())
        models.push_back(r.model);

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t n_lo = b.sizes.front().size, n_hi = n_lo;
  for (const auto &s : b.sizes) {
    n_lo = std::min(n_lo, s.size);
    n_hi = std::max(n_hi, s.size);
    for (const auto &r : s.reports) {
      const auto st = r.stat(m);
      lo = std::min(lo, st.min);
      hi = std::max(hi, st.max);
    }
  }
  const double pad = std::max(1e-9, 0.05 * (hi - lo));
  const double lx_lo = std::log10(static_cast<double>(n_lo));
  const double lx_hi = std::log10(static_cast<double>(n_hi));
  const double xpad = lx_hi > lx_lo ? 0.05 * (lx_hi - lx_lo) : 0.5;
  const Axis x{lx_lo - xpad, lx_hi + xpad, kLeft, kWidth - kRight - 110.0};
  const Axis y{lo - pad, hi + pad, kHeight - kBottom, kTop};

  std::ostringstream o;
  frame(o, x, y, b.scenario + ": " + std::string(metrics::to_string(m)) + " vs training size",
        "training trajectories", std::string(metrics::to_string(m)), true);
  std::size_t colour = 0;
  double legend_y = kTop + 10.0;
  for (const auto &model : models) {
    const bool ref = !parse_arch(model).has_value();
    const char *c = ref ? (model == "oracle" ? "#555555" : "#999999")
                        : kPalette[colour++ % std::size(kPalette)];
    o << "<g class=\"" << (ref ? "reference" : "series") << "\" data-model=\"" << esc(model)
      << "\" stroke=\"" << c << "\" fill=\"" << c << "\">\n";
    o << "<polyline fill=\"none\" stroke-width=\"1.5\""
      << (ref ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
    for (const auto &s : b.sizes)
      for (const auto &r : s.reports)
        if (r.model == model)
          o << num(x(std::log10(static_cast<double>(s.size)))) << ','
            << num(y(r.stat(m).mean)) << ' ';
    o << "\"/>\n";
    for (const auto &s : b.sizes)
      for (const auto &r : s.reports) {
        if (r.model != model) continue;
        const auto st = r.stat(m);
        const double px = x(std::log10(static_cast<double>(s.size)));
        o << "<line x1=\"" << num(px) << "\" y1=\"" << num(y(st.min)) << "\" x2=\"" << num(px)
          << "\" y2=\"" << num(y(st.max)) << "\"/>\n";
        o << "<circle cx=\"" << num(px) << "\" cy=\"" << num(y(st.mean)) << "\" r=\"3\"/>\n";
      }
    o << "<text x=\"" << num(kWidth - kRight - 100.0) << "\" y=\"" << num(legend_y)
      << "\" font-size=\"11\" stroke=\"none\">" << esc(model) << "</text>\n";
    o << "</g>\n";
    legend_y += 16.0;
  }
  o << "</svg>\n";
  return o.str();
}

std::string markdown_table(std::span<const metrics::ScoreReport> reports) {
  using metrics::Metric;
  std::ostringstream o;
  o << "| Model | RMSE (mg/dL) | CRPS (x100) | logS (x100, -log density) | "
       "log density (x100, higher is better) | Var PIT (x100) | Empirical coverage (%) | "
       "Interval score | runs | forecasts |\n";
  o << "|---|---|---|---|---|---|---|---|---|---|\n";
  auto cell = [](const metrics::Stat &s, double scale, const char *spec) {
    char a[32], b[32];
    std::snprintf(a, sizeof a, spec, s.mean * scale);
    std::snprintf(b, sizeof b, spec, s.std * scale);
    return std::string(a) + " ± " + b;
  };
  for (const auto &r : reports) {
    auto ls = r.stat(Metric::logs);
    auto neg = ls;
    neg.mean = -ls.mean;
    o << "| " << r.model << " | " << cell(r.stat(Metric::rmse), 1.0, "%.2f") << " | "
      << cell(r.stat(Metric::crps), 100.0, "%.3f") << " | " << cell(ls, 100.0, "%.2f")
      << " | " << cell(neg, 100.0, "%.2f") << " | "
      << cell(r.stat(Metric::var_pit), 100.0, "%.3f") << " | "
      << cell(r.stat(Metric::coverage), 1.0, "%.2f") << " | "
      << cell(r.stat(Metric::interval_score), 1.0, "%.2f") << " | " << r.runs.size() << " | "
      << r.n_forecasts() << " |\n";
  }
  return o.str();
}

std::string markdown_bundle(const train::ExperimentBundle &b) {
  std::ostringstream o;
  o << "### " << b.scenario << ": CRPS (x100), mean (min, max) across runs\n\n| Model |";
  for (const auto &s : b.sizes) o << " N=" << s.size << " |";
  o << "\n|---|";
  for (std::size_t i = 0; i < b.sizes.size(); ++i) o << "---|";
  o << '\n';
  std::vector<std::string> models;
  for (const auto &s : b.sizes)
    for (const auto &r : s.reports)
      if (std::find(models.begin(), models.end(), r.model) == models.end())
        models.push_back(r.model);
  for (const auto &m : models) {
    o << "| " << m << " |";
    for (const auto &s : b.sizes) {
      const auto *r = b.find(s.size, m);
      if (!r) {
        o << " |";
        continue;
      }
      const auto st = r->stat(metrics::Metric::crps);
      char buf[96];
      std::snprintf(buf, sizeof buf, " %.3f (%.3f, %.3f) |", 100 * st.mean, 100 * st.min,
                    100 * st.max);
      o << buf;
    }
    o << '\n';
  }
  const auto flags = ordering_flags(b);
  if (!flags.empty()) o << '\n';
  for (const auto &f : flags) o << "**Flag:** " << f << "\n";
  return o.str();
}

std::vector<std::string> ordering_flags(const train::ExperimentBundle &b) {
  static const std::pair<const char *, const char *> pairs[] = {
      {"ode_lstm", "timegap_lstm"}, {"flow_gru", "timegap_gru"}};
  std::vector<std::string> out;
  for (const auto &s : b.sizes)
    for (const auto &[cont, disc] : pairs) {
      const auto *a = b.find(s.size, cont);
      const auto *d = b.find(s.size, disc);
      if (!a || !d || a->runs.empty() || d->runs.empty()) continue;
      const double ma = a->stat(metrics::Metric::crps).mean;
      const double md = d->stat(metrics::Metric::crps).mean;
      if (ma <= md) continue;
      char buf[160];
      std::snprintf(buf, sizeof buf, "N=%zu: %s mean CRPS %.5f exceeds %s %.5f", s.size, cont,
                    ma, disc, md);
      out.emplace_back(buf);
    }
  return out;
}

void write_text(const std::string &text, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

}  // namespace ctrnn::report

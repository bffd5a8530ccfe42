// Shared fixtures for the unit tests.
#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "ctrnn/dataset.hpp"
#include "ctrnn/diffcore.hpp"

namespace testing {

inline std::vector<double> uniform(std::size_t n, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto &x : v) x = d(rng);
  return v;
}

inline ctrnn::Event event(double t, double g, double insulin = 0.0, double input = 0.0) {
  ctrnn::Event e;
  e.t = t;
  e.glucose_obs = g;
  e.glucose_true = g;
  e.insulin_rate = insulin;
  e.glucose_input = input;
  e.target_mask = 1;
  return e;
}

/// Three events with a nonzero insulin segment.
inline ctrnn::TrajectoryRecord toy_trajectory() {
  ctrnn::TrajectoryRecord r;
  r.traj_id = 7;
  r.events = {event(0.0, 150.0, 3.0), event(1.5, 132.0, 0.0, 2.0), event(4.0, 120.0)};
  return r;
}

}  // namespace testing

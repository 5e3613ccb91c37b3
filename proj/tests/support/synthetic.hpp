#pragma once
// Small synthetic records for estimation and dosing tests.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "heparin/dynamics.hpp"
#include "heparin/estimation.hpp"

namespace testsupport {

/// Loading bolus, rates that change every 6 hours, and a two-hour top-up
/// bolus once a day so that both elimination regimes are visited.
inline std::vector<double> excitation_doses(int hours, std::uint64_t seed, double lo = 300.0,
                                            double hi = 1200.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> rate(lo, hi);
  std::vector<double> doses(static_cast<std::size_t>(hours), 0.0);
  double current = 0.0;
  for (int t = 0; t < hours; ++t) {
    if (t % 6 == 0) current = std::round(rate(rng) / 50.0) * 50.0;
    const bool bolus = t % 24 == 0 || t % 24 == 1;
    doses[static_cast<std::size_t>(t)] = bolus ? 3000.0 : current;
  }
  return doses;
}

/// Observations at every `every` hours; noise_scale <= 0 gives exact values.
inline heparin::ObservationSeries make_series(const heparin::PatientParams& truth,
                                              const std::vector<double>& doses, int every,
                                              double noise_scale, std::uint64_t seed,
                                              const heparin::Domains& domains) {
  const auto traj = heparin::simulate(truth, {}, doses, domains);
  std::mt19937_64 rng(seed);
  heparin::ObservationSeries s;
  s.doses = doses;
  s.noise_scale = noise_scale > 0.0 ? noise_scale : 2.0;
  for (int t = every; t <= static_cast<int>(doses.size()); t += every) {
    const double y = traj.states[static_cast<std::size_t>(t)].y;
    const double v = noise_scale > 0.0 ? heparin::sample_observation(y, noise_scale, rng) : y;
    s.observations.push_back({t, std::max(0.0, v)});
  }
  return s;
}

inline heparin::PatientParams truth_params(double alpha, double k, double b, double yb) {
  return {alpha, k, b, yb, yb, yb};
}

}  // namespace testsupport

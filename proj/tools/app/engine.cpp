#include "engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "heparin/errors.hpp"

namespace heparin::app {

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool usable(const Scenario& s) { return s.weight > 0.0 && std::isfinite(s.weight) && s.yb > 0.0; }

double weighted_quantile(std::vector<std::pair<double, double>> values_weights, double q) {
  std::sort(values_weights.begin(), values_weights.end());
  double total = 0.0;
  for (const auto& [v, w] : values_weights) total += w;
  double acc = 0.0;
  for (const auto& [v, w] : values_weights) {
    acc += w;
    if (acc >= q * total) return v;
  }
  return values_weights.back().first;
}

}  // namespace

Recommendation recommend(const ObservationSeries& series, const AppConfig& config,
                         std::size_t horizon, const LossSpec& loss,
                         std::optional<Clock::time_point> deadline) {
  Recommendation r;
  EstimationConfig est = config.estimation();
  est.deadline = deadline;
  auto t0 = Clock::now();
  r.table = scenario_table(series, config.scenario_grid(), est);
  r.predict_seconds = seconds_since(t0);
  t0 = Clock::now();
  r.plan = plan_ptc_sgm(r.table, series.doses, loss, config.plan_options(horizon), config.gammas,
                        config.domains);
  r.control_seconds = seconds_since(t0);
  if (deadline && Clock::now() > *deadline) {
    std::ostringstream os;
    os << "predict " << r.predict_seconds << " s, control " << r.control_seconds << " s";
    throw DeadlineExceeded("planning budget exceeded", os.str());
  }
  return r;
}

Prediction predict(const ScenarioTable& table, const ObservationSeries& series,
                   const std::vector<double>& doses, const AppConfig& config,
                   const LossSpec& loss) {
  Prediction p;
  p.planning_time = series.horizon();
  p.doses = doses;
  const std::size_t n = doses.size();
  const std::size_t T = series.doses.size();
  std::vector<double> all = series.doses;
  all.insert(all.end(), doses.begin(), doses.end());

  double wsum = 0.0, yb_mean = 0.0, loss_sum = 0.0;
  for (const Scenario& s : table.scenarios) {
    ScenarioPath path;
    path.weight = s.weight;
    path.yb = s.yb;
    path.loss = std::numeric_limits<double>::quiet_NaN();
    if (usable(s)) {
      const Trajectory traj = simulate(s.params(), config.gammas, all, config.domains);
      for (std::size_t h = 1; h <= n; ++h) path.aptt.push_back(traj.states[T + h].y);
      path.loss = scenario_loss(s.params(), series.doses, doses, loss, config.gammas,
                                config.domains);
      wsum += s.weight;
      yb_mean += s.weight * s.yb;
      loss_sum += s.weight * path.loss;
    }
    p.scenarios.push_back(std::move(path));
  }
  if (!(wsum > 0.0)) throw PlanningFailed("scenario table has no usable positive weight");

  p.therapeutic = therapeutic_range(yb_mean / wsum);
  p.expected_loss = loss_sum / wsum;
  for (std::size_t h = 0; h < n; ++h) {
    std::vector<std::pair<double, double>> vw;
    double m = 0.0;
    for (const ScenarioPath& s : p.scenarios) {
      if (s.aptt.empty()) continue;
      vw.emplace_back(s.aptt[h], s.weight);
      m += s.weight * s.aptt[h];
    }
    p.mean.push_back(m / wsum);
    p.low.push_back(weighted_quantile(vw, 0.05));
    p.high.push_back(weighted_quantile(vw, 0.95));
  }
  return p;
}

}  // namespace heparin::app

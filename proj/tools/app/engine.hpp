#pragma once

#include <chrono>
#include <optional>
#include <vector>

#include "config.hpp"
#include "heparin/dosing.hpp"
#include "heparin/estimation.hpp"

namespace heparin::app {

using Clock = std::chrono::steady_clock;

struct Recommendation {
  ScenarioTable table;
  DosePlan plan;
  double predict_seconds = 0.0;
  double control_seconds = 0.0;
};

/// Scenario weighting on the configured grid, then the weighted plan. The
/// same call backs the service's recommendation and the CLI's ptc-sg dose,
/// so a served plan can be reproduced offline from the chart.
/// Throws DeadlineExceeded when `deadline` passes during or after the work.
Recommendation recommend(const ObservationSeries& series, const AppConfig& config,
                         std::size_t horizon, const LossSpec& loss,
                         std::optional<Clock::time_point> deadline = std::nullopt);

struct ScenarioPath {
  double weight = 0.0;
  double yb = 0.0;
  std::vector<double> aptt;  ///< hours T+1 .. T+n; empty for ignored rows
  double loss = 0.0;         ///< NaN for ignored rows
};

/// Rollout of a candidate dose sequence under every scenario. Rows the
/// planner ignores (zero weight or no positive baseline) carry no path.
struct Prediction {
  int planning_time = 0;
  std::vector<double> doses;
  std::vector<ScenarioPath> scenarios;
  std::vector<double> mean;  ///< weighted mean aPTT per hour
  std::vector<double> low;   ///< weighted 5% quantile
  std::vector<double> high;  ///< weighted 95% quantile
  Band therapeutic;          ///< band of the weighted mean baseline
  double expected_loss = 0.0;
};

/// Throws PlanningFailed when no row is usable.
Prediction predict(const ScenarioTable& table, const ObservationSeries& series,
                   const std::vector<double>& doses, const AppConfig& config,
                   const LossSpec& loss);

}  // namespace heparin::app

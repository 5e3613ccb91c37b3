#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "config.hpp"
#include "heparin/data_io.hpp"

namespace heparin::app {

/// Exit codes: 0 success, 1 runtime failure, 2 invalid input or config,
/// CLI11's own codes for usage errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Subcommand bodies, returning the report text.

std::string estimate_command(const ChartRecord& chart, EstimationMethod method,
                             const AppConfig& config, std::optional<double> noise_scale);

/// ptc-sg10 / ptc-sg20 plan on the configured alphas with 5 / 10 response
/// coefficients; naive and weight report their doses with NaN losses.
std::string dose_command(const ChartRecord& chart, const std::string& policy,
                         const LossSpec& loss, std::size_t horizon, const AppConfig& config,
                         std::optional<double> noise_scale);

std::string simulate_command(const std::vector<SyntheticPatient>& cohort,
                             const std::vector<std::string>& policies, const LossSpec& loss,
                             const SimulationConfig& sim, const AppConfig& config,
                             const ReportOptions& options);

enum class Predictor { model, persistence };

/// Labels use the true baseline when the cohort carries truth, else the
/// baseline fitted on the whole record.
std::string evaluate_command(const std::vector<CohortEntry>& cohort, Predictor predictor,
                             int epoch_hours, int min_history_hours, const AppConfig& config);

}  // namespace heparin::app

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "heparin/dosing.hpp"
#include "heparin/dynamics.hpp"
#include "heparin/estimation.hpp"

namespace heparin::app {

inline constexpr std::string_view kConfigSchema = "heparin.config/1";
inline constexpr const char* kConfigEnv = "HEPARIN_CONFIG";

/// Shared by the CLI and the service. Every field may be omitted from the
/// config file; unknown fields are rejected.
struct AppConfig {
  Domains domains = Domains::synthetic_icu();
  GlobalDecayRates gammas;
  PriorSpec prior;
  std::vector<double> scenario_alphas{0.500, 0.707};
  std::size_t scenario_b_count = 5;
  LossSpec loss;
  std::size_t horizon = 6;
  std::size_t max_horizon = 24;
  double dose_step = 100.0;
  /// Readings required before a recommendation is served.
  std::size_t min_observations = 3;
  double planning_budget_seconds = 60.0;
  ProtocolTable protocol = ProtocolTable::standard();
  /// Where session event logs live; none keeps sessions in memory only.
  std::optional<std::filesystem::path> event_log_dir;
  std::size_t workers = 1;

  /// Throws ConfigError.
  void validate() const;
  EstimationConfig estimation() const;
  std::vector<std::pair<double, double>> scenario_grid() const;
  PlanOptions plan_options(std::size_t horizon) const;
};

/// Throws ConfigError naming the offending field.
AppConfig parse_app_config(std::string_view text);

/// `explicit_path` first, then $HEPARIN_CONFIG, then built-in defaults.
AppConfig load_app_config(const std::optional<std::filesystem::path>& explicit_path);

}  // namespace heparin::app

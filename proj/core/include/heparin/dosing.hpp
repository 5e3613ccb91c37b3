#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "heparin/dynamics.hpp"
#include "heparin/estimation.hpp"

namespace heparin {

enum class LossKind { indicator, band_deviation, median_deviation };
const char* to_string(LossKind kind);
/// Accepts "indicator", "band" / "band_deviation", "median" / "median_deviation".
std::optional<LossKind> parse_loss_kind(std::string_view name);

/// Per-hour loss of an aPTT value against the band [1.5 yb, 2.5 yb].
/// w_sub scales losses below the band (or below the median), w_super above.
struct LossSpec {
  LossKind kind = LossKind::median_deviation;
  double w_sub = 1.0;
  double w_super = 1.0;

  double operator()(double y, double yb) const;
  void validate() const;
};

struct DosePlan {
  int planning_time = 0;                ///< hours already in the record
  std::vector<double> doses;            ///< hours T+1 .. T+n
  double expected_loss = 0.0;           ///< sum_s w_s loss_s / sum_s w_s
  std::vector<double> scenario_losses;  ///< one per table entry; NaN for rows the plan ignores
  std::vector<double> weights;          ///< normalized table weights
  std::size_t evaluations = 0;          ///< candidate sequences scored
};

/// Loss of `candidate` for one fully specified scenario: rolls the model
/// from t = 0 over past + candidate and sums the loss over the candidate
/// hours, using the scenario's own yb for the band.
double scenario_loss(const PatientParams& scenario, const std::vector<double>& past_doses,
                     const std::vector<double>& candidate, const LossSpec& loss,
                     const GlobalDecayRates& gammas, const Domains& domains);

enum class PlanMode { exact_small, mesh_search };

struct PlanOptions {
  std::size_t horizon = 6;
  double dose_step = 100.0;  ///< mesh spacing; levels are 0, step, ..., u_max
  PlanMode mode = PlanMode::mesh_search;
  /// Warm start for mesh_search; snapped to the mesh and padded with its
  /// last entry. Empty skips that start.
  std::vector<double> previous;
  std::size_t max_sweeps = 200;
  /// exact_small limits.
  std::size_t exact_max_horizon = 4;
  std::size_t exact_max_levels = 8;
};

/// 0, step, 2 step, ... up to u_max; u_max itself is included when it is
/// not a multiple of the step.
std::vector<double> dose_levels(double step, double u_max);

/// Minimizes the weighted mean scenario loss over dose sequences on the
/// mesh. Ties resolve to the lexicographically smallest sequence.
/// Rows with a nonpositive baseline are ignored. Throws PlanningFailed when
/// no row has positive weight and a positive baseline.
DosePlan plan_ptc_sgm(const ScenarioTable& table, const std::vector<double>& past_doses,
                      const LossSpec& loss, const PlanOptions& options,
                      const GlobalDecayRates& gammas, const Domains& domains);

/// plan_ptc_sgm on the singleton table at the estimate.
DosePlan plan_ptc_mle(const EstimateResult& estimate, const std::vector<double>& past_doses,
                      const LossSpec& loss, const PlanOptions& options,
                      const GlobalDecayRates& gammas, const Domains& domains);

/// Next hourly dose: +step below the band, -step above, unchanged inside,
/// clamped to [0, u_max].
double naive_policy(double last_dose, RangeLabel label, double u_max, double step = 200.0);

enum class BleedRisk { low, high };
const char* to_string(BleedRisk risk);
std::optional<BleedRisk> parse_bleed_risk(std::string_view name);

/// Weight-based infusion protocol. Doses are per kg of body weight.
struct ProtocolTable {
  struct Tier {
    double bolus_per_kg = 0.0;
    double rate_per_kg = 0.0;
    bool rebolus = true;  ///< titration boluses allowed
  };
  /// Applies when the latest aPTT is below `aptt_below` seconds and no
  /// earlier row matched. The last row must have aptt_below = +inf.
  struct Row {
    double aptt_below = 0.0;
    double bolus_per_kg = 0.0;
    double rate_change_per_kg = 0.0;
    double hold_hours = 0.0;
  };
  std::string name = "representative weight-based protocol";
  Tier low{80.0, 18.0, true};
  Tier high{0.0, 12.0, false};
  std::vector<Row> titration;

  /// Stand-in defaults: 80 IU/kg bolus + 18 IU/kg/h (low risk), no bolus +
  /// 12 IU/kg/h (high risk); target [50, 80) s.
  static ProtocolTable standard();
  /// Throws ConfigError unless rows are strictly increasing, end with +inf,
  /// and every dose field is finite and nonnegative where required.
  void validate() const;
  const Tier& tier(BleedRisk risk) const { return risk == BleedRisk::low ? low : high; }
};

struct ProtocolDose {
  double bolus = 0.0;       ///< IU given in the first hour on top of the rate
  double rate = 0.0;        ///< IU/h
  double hold_hours = 0.0;  ///< infusion paused for this many hours first
};

/// Initial order when `current_rate` is empty, titration from the latest
/// aPTT otherwise. Rates and boluses are clamped to [0, u_max].
ProtocolDose weight_based_policy(double weight_kg, BleedRisk risk,
                                 std::optional<double> latest_aptt,
                                 std::optional<double> current_rate, const ProtocolTable& table,
                                 double u_max);

/// Hourly doses for `hours` hours of a protocol order; the first hour holds
/// rate + bolus, capped at u_max, unless the order starts with a hold.
std::vector<double> expand_protocol_dose(const ProtocolDose& dose, std::size_t hours,
                                         double u_max);

}  // namespace heparin

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "heparin/dosing.hpp"
#include "heparin/dynamics.hpp"
#include "heparin/estimation.hpp"

namespace heparin {

/// Patient facts a bedside protocol may read. Never includes model parameters.
struct PatientInfo {
  double weight_kg = 70.0;
  BleedRisk bleed_risk = BleedRisk::low;
};

enum class PolicyKind { ptc_sg, ptc_mle, naive, weight_based, oracle, zero };

struct PolicySpec {
  PolicyKind kind = PolicyKind::ptc_sg;
  std::string name = "ptc-sg10";
  /// Scenario grid for ptc_sg: alphas x b_count log-spaced coefficients.
  std::vector<double> scenario_alphas{0.500, 0.707};
  std::size_t scenario_b_count = 5;
  LossSpec loss;
  std::size_t horizon = 6;
  double dose_step = 100.0;
  PlanMode plan_mode = PlanMode::mesh_search;
  EstimationMethod estimation = EstimationMethod::benders;
  double naive_step = 200.0;
  ProtocolTable protocol = ProtocolTable::standard();

  /// Accepts ptc-sg10, ptc-sg20, ptc-mle, naive, weight, oracle, zero.
  /// Throws ConfigError on anything else.
  static PolicySpec parse(std::string_view name);
  void validate() const;
};

/// Output of one planning cycle.
struct PolicyDecision {
  std::vector<double> doses;     ///< at least `hours` entries
  double predict_seconds = 0.0;  ///< estimation / scenario weighting
  double control_seconds = 0.0;  ///< dose optimization
};

/// A dosing policy sees the observed record and patient facts only.
class Policy {
 public:
  virtual ~Policy() = default;
  /// Doses for hours T+1 .. T+hours, where T = history.horizon().
  virtual PolicyDecision decide(const ObservationSeries& history, const PatientInfo& info,
                                std::size_t hours) = 0;
};

struct PolicyContext {
  Domains domains = Domains::synthetic_icu();
  GlobalDecayRates gammas;
  PriorSpec prior;
  /// Only the oracle policy reads this.
  std::optional<PatientParams> truth;
};

std::unique_ptr<Policy> make_policy(const PolicySpec& spec, const PolicyContext& context);

enum class NoiseScaleSource { estimate, known };

struct SimulationConfig {
  int total_hours = 240;
  int warmstart_hours = 72;
  int replan_interval = 6;
  std::size_t replicates = 10;
  std::uint64_t seed = 1;
  /// `estimate` hands policies a data-derived Laplace scale; `known` hands
  /// them the simulation scale.
  NoiseScaleSource noise_scale_source = NoiseScaleSource::estimate;
  Domains domains = Domains::synthetic_icu();
  GlobalDecayRates gammas;
  std::size_t workers = 1;

  /// Throws ConfigError unless 0 < warmstart < total and the interval
  /// divides total - warmstart.
  void validate() const;
  int cycles() const { return (total_hours - warmstart_hours) / replan_interval; }
};

/// Ground truth plus the record that precedes the policy's control.
struct SyntheticPatient {
  std::string id;
  PatientParams truth;
  double noise_scale = 2.0;
  PatientInfo info;
  ObservationSeries warmstart;  ///< doses and noisy readings for the warm-start hours
};

struct CycleTiming {
  int hour = 0;
  double predict_seconds = 0.0;
  double control_seconds = 0.0;
};

struct EpisodeResult {
  std::string patient_id;
  std::string policy;
  std::size_t replicate = 0;
  Trajectory truth;                  ///< states 0..hours reached
  ObservationSeries observed;        ///< what the policy saw at the end
  std::vector<CycleTiming> cycles;
  double time_in_control = 0.0;      ///< fraction of post-warm-start hours in band
  double deviation = 0.0;            ///< mean distance to band over out-of-band hours
  bool failed = false;
  std::string error;
};

/// Replays the warm start, then alternates observation and policy control.
/// Randomness depends only on (seed, replicate), so every policy meets the
/// same noise draws.
EpisodeResult run_episode(const SyntheticPatient& patient, Policy& policy,
                          const std::string& policy_name, const SimulationConfig& config,
                          std::size_t replicate);

/// Metrics over hours from+1 .. end of the trajectory against the band of `yb`.
struct EpisodeMetrics {
  double time_in_control = 0.0;
  double deviation = 0.0;
};
EpisodeMetrics episode_metrics(const Trajectory& traj, int from_hour, double yb);

struct PolicyAggregate {
  std::string policy;
  double time_in_control = 0.0;
  double deviation = 0.0;
  double predict_seconds = 0.0;  ///< mean per cycle
  double control_seconds = 0.0;  ///< mean per cycle
  double max_cycle_seconds = 0.0;
  std::size_t episodes = 0;
  std::size_t failed = 0;
};

struct PatientAggregate {
  std::string patient_id;
  std::string policy;
  double time_in_control = 0.0;
  double deviation = 0.0;
  std::size_t episodes = 0;
};

struct CohortReport {
  SimulationConfig config;
  std::vector<std::string> policies;
  std::vector<PolicyAggregate> aggregates;  ///< one per policy, input order
  std::vector<PatientAggregate> patients;   ///< policy-major, patient order
  std::vector<EpisodeResult> episodes;      ///< sorted by policy, patient, replicate
};

/// Means over successful episodes; failures are counted and excluded.
/// Result is independent of the order of `episodes`.
CohortReport aggregate(std::vector<EpisodeResult> episodes, const std::vector<std::string>& policies,
                       const std::vector<std::string>& patient_ids, const SimulationConfig& config);

CohortReport run_cohort(const std::vector<SyntheticPatient>& cohort,
                        const std::vector<PolicySpec>& policies, const SimulationConfig& config,
                        const PolicyContext& context = {});

struct CohortRanges {
  std::vector<double> alphas{0.500, 0.574, 0.630, 0.673, 0.707};
  Interval b{0.0015, 0.006};
  Interval k{800.0, 2500.0};
  Interval yb{25.0, 40.0};
  Interval weight_kg{50.0, 110.0};
  Interval noise_scale{2.0, 4.0};
  /// Patients whose yb lies in this top fraction of the yb range are high risk.
  double high_risk_fraction = 0.3;
  int spacing_min = 4;
  int spacing_max = 6;
  double missing_fraction = 0.1;
};

/// Patients with sampled parameters and a warm-start record: a bolus, rates
/// that change every 6-12 hours between 30% and 90% of capacity, and noisy
/// readings every 4-6 hours with some dropped.
std::vector<SyntheticPatient> synth_cohort(std::size_t n, std::uint64_t seed,
                                           const SimulationConfig& config,
                                           const CohortRanges& ranges = {});

}  // namespace heparin

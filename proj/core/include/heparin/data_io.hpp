#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "heparin/dosing.hpp"
#include "heparin/estimation.hpp"
#include "heparin/evaluation.hpp"
#include "heparin/simulator.hpp"

namespace heparin {

// Chart files: delimited text, one row per hour (sparse rows allowed).
//
//   # id: patient-17
//   # weight_kg: 72.5
//   # bleed_risk: low
//   hour,dose_iu,aptt_s
//   1,1200,
//   4,1200,41.5
//
// `# key: value` lines before the header carry metadata for the keys id,
// weight_kg, bleed_risk; any other `#` line is a comment. Hours start at 1.

struct ChartRow {
  int hour = 0;
  double dose = 0.0;  ///< IU over the hour; missing means 0
  std::optional<double> aptt;

  friend bool operator==(const ChartRow&, const ChartRow&) = default;
};

struct ChartRecord {
  std::string id;
  std::optional<double> weight_kg;
  std::optional<BleedRisk> bleed_risk;
  std::vector<ChartRow> rows;  ///< dense: rows[i].hour == i + 1

  friend bool operator==(const ChartRecord&, const ChartRecord&) = default;

  std::size_t reading_count() const;
  /// Doses and readings; the noise scale is estimated from the readings
  /// unless given.
  ObservationSeries series(std::optional<double> noise_scale = std::nullopt) const;
  PatientInfo info() const;
};

struct ChartRules {
  std::size_t min_readings = 1;
  double aptt_max = 300.0;  ///< readings must lie in (0, aptt_max)
};

/// Parses and validates a chart; sparse hours are filled with dose 0 and no
/// reading. Throws ValidationError listing every offending line.
ChartRecord parse_chart(std::istream& in, const ChartRules& rules = {});
ChartRecord parse_chart_text(std::string_view text, const ChartRules& rules = {});
ChartRecord read_chart(const std::filesystem::path& path, const ChartRules& rules = {});

/// Canonical form: metadata in key order, then every hour. Numbers use the
/// shortest text that parses back to the same double.
std::string write_chart(const ChartRecord& chart);

ChartRecord chart_from_series(const std::string& id, const ObservationSeries& series,
                              const std::optional<PatientInfo>& info = std::nullopt);

// Reports and input documents: JSON with sorted keys, two-space indent, and a
// top-level "schema" id. Non-finite numbers are written as the strings
// "nan", "inf", "-inf". Readers reject unknown and missing fields.

inline constexpr std::string_view kEstimateSchema = "heparin.estimate/1";
inline constexpr std::string_view kScenariosSchema = "heparin.scenarios/1";
inline constexpr std::string_view kPlanSchema = "heparin.plan/1";
inline constexpr std::string_view kCohortReportSchema = "heparin.cohort-report/1";
inline constexpr std::string_view kEvaluationSchema = "heparin.evaluation/1";
inline constexpr std::string_view kCohortSchema = "heparin.cohort/1";
inline constexpr std::string_view kProtocolSchema = "heparin.protocol/1";

struct ReportOptions {
  /// Include per-episode trajectories and observation logs in cohort reports.
  bool trajectories = false;
};

std::string write_report(const EstimateResult& estimate);
std::string write_report(const ScenarioTable& table);
std::string write_report(const DosePlan& plan);
std::string write_report(const CohortReport& report, const ReportOptions& options = {});
std::string write_report(const EvaluationReport& report);

/// Each throws InvalidInput naming the offending field path.
EstimateResult parse_estimate_report(std::string_view text);
ScenarioTable parse_scenarios_report(std::string_view text);
DosePlan parse_plan_report(std::string_view text);
CohortReport parse_cohort_report(std::string_view text);
EvaluationReport parse_evaluation_report(std::string_view text);

/// The "schema" field of a document; throws InvalidInput if absent.
std::string report_schema(std::string_view text);

/// One patient of a cohort file. Truth is present for synthetic patients
/// only; simulation requires it.
struct CohortEntry {
  std::string id;
  PatientInfo info;
  std::optional<PatientParams> truth;
  std::optional<double> noise_scale;  ///< simulation noise; truth only
  ObservationSeries record;

  /// Throws InvalidInput when the entry has no truth or noise scale.
  SyntheticPatient synthetic() const;
};

std::string write_cohort(const std::vector<SyntheticPatient>& patients);
std::string write_cohort(const std::vector<CohortEntry>& entries);
std::vector<CohortEntry> parse_cohort(std::string_view text);

/// The last titration row's threshold is written as null (no upper limit).
std::string write_protocol(const ProtocolTable& table);
ProtocolTable parse_protocol(std::string_view text);

std::string read_text_file(const std::filesystem::path& path);
/// Writes through a temporary file and renames it into place.
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace heparin

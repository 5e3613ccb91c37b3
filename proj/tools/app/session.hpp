#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "heparin/errors.hpp"
#include "heparin/estimation.hpp"
#include "heparin/simulator.hpp"
#include "json.hpp"

namespace heparin::app {

/// Raised for requests that contradict the session's history (409).
class Conflict : public Error {
 public:
  using Error::Error;
};

struct ReadingRow {
  int hour = 0;
  double aptt = 0.0;
  bool supersedes = false;
};

struct DoseRow {
  int hour = 0;
  double dose = 0.0;
  bool supersedes = false;
};

/// One patient's accumulating record. Rows are never edited: a correction is
/// a new row flagged `supersedes` for an hour already present, and the latest
/// row for an hour is the one the model sees.
///
/// Event log: one JSON object per line, appended before the in-memory state
/// changes. Fields: seq (1-based), type, then the type's payload:
///   created         {id, weight_kg, bleed_risk, noise_scale|null}
///   observation     {hour, aptt, supersedes}
///   dose            {hour, dose, supersedes}
///   recommendation  {horizon, loss, planning_time, doses, expected_loss}
///   whatif          {doses, expected_loss}
/// Replaying created/observation/dose events rebuilds the session; the rest
/// is audit.
class Session {
 public:
  Session(std::string id, PatientInfo info, std::optional<double> noise_scale);

  const std::string& id() const { return id_; }
  const PatientInfo& info() const { return info_; }
  std::optional<double> noise_scale() const { return noise_scale_; }
  const std::vector<ReadingRow>& readings() const { return readings_; }
  const std::vector<DoseRow>& dose_rows() const { return doses_; }
  const std::vector<nlohmann::json>& audit() const { return audit_; }

  /// Throws Conflict when the hour is not after the last one, unless the row
  /// supersedes an existing hour.
  void add_reading(const ReadingRow& row);
  void add_dose(const DoseRow& row);
  void record(const std::string& type, nlohmann::json payload);

  /// Effective record: hours 1..max(last dose, last reading), zero-filled.
  ObservationSeries series() const;
  std::size_t reading_count() const;

  /// Rebuilds a session from its log lines; throws InvalidInput on a
  /// malformed or out-of-sequence line.
  static std::unique_ptr<Session> replay(const std::vector<nlohmann::json>& events);

  /// Event log file for this session; empty path disables persistence.
  void attach_log(std::filesystem::path path) { log_path_ = std::move(path); }

  std::mutex mutex;  ///< serializes requests for this session

 private:
  void append(nlohmann::json event);
  void apply_reading(const ReadingRow& row);
  void apply_dose(const DoseRow& row);

  std::string id_;
  PatientInfo info_;
  std::optional<double> noise_scale_;
  std::vector<ReadingRow> readings_;
  std::vector<DoseRow> doses_;
  std::vector<nlohmann::json> audit_;
  std::filesystem::path log_path_;
};

class SessionStore {
 public:
  /// Loads every `*.jsonl` log found in `dir` when given.
  explicit SessionStore(std::optional<std::filesystem::path> dir);

  /// Throws Conflict for a taken id and InvalidInput for a malformed one.
  std::shared_ptr<Session> create(std::optional<std::string> id, PatientInfo info,
                                  std::optional<double> noise_scale);
  std::shared_ptr<Session> find(const std::string& id) const;
  std::vector<std::string> ids() const;

 private:
  std::optional<std::filesystem::path> dir_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::size_t next_ = 1;
};

bool valid_session_id(const std::string& id);

}  // namespace heparin::app

#include "session.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "heparin/data_io.hpp"

namespace heparin::app {

using json = nlohmann::json;

bool valid_session_id(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
           c == '_';
  });
}

Session::Session(std::string id, PatientInfo info, std::optional<double> noise_scale)
    : id_(std::move(id)), info_(info), noise_scale_(noise_scale) {}

void Session::append(json event) {
  event["seq"] = audit_.size() + 1;
  if (!log_path_.empty()) {
    std::ofstream out(log_path_, std::ios::app | std::ios::binary);
    out << event.dump() << '\n';
    out.flush();
    if (!out) throw Error("cannot append to event log " + log_path_.string());
  }
  audit_.push_back(std::move(event));
}

void Session::apply_reading(const ReadingRow& row) {
  const bool exists = std::any_of(readings_.begin(), readings_.end(),
                                  [&](const ReadingRow& r) { return r.hour == row.hour; });
  if (row.supersedes) {
    if (!exists) {
      throw Conflict("no reading at hour " + std::to_string(row.hour) + " to supersede");
    }
  } else if (!readings_.empty() && row.hour <= readings_.back().hour) {
    throw Conflict("reading hour " + std::to_string(row.hour) + " is not after hour " +
                   std::to_string(readings_.back().hour));
  }
  readings_.push_back(row);
}

void Session::apply_dose(const DoseRow& row) {
  const bool exists = std::any_of(doses_.begin(), doses_.end(),
                                  [&](const DoseRow& d) { return d.hour == row.hour; });
  if (row.supersedes) {
    if (!exists) throw Conflict("no dose at hour " + std::to_string(row.hour) + " to supersede");
  } else if (!doses_.empty() && row.hour <= doses_.back().hour) {
    throw Conflict("dose hour " + std::to_string(row.hour) + " is not after hour " +
                   std::to_string(doses_.back().hour));
  }
  doses_.push_back(row);
}

void Session::add_reading(const ReadingRow& row) {
  // Validate against a copy so a rejected row never reaches the log.
  std::vector<ReadingRow> saved = readings_;
  apply_reading(row);
  readings_ = std::move(saved);
  append({{"type", "observation"},
          {"hour", row.hour},
          {"aptt", row.aptt},
          {"supersedes", row.supersedes}});
  readings_.push_back(row);
}

void Session::add_dose(const DoseRow& row) {
  std::vector<DoseRow> saved = doses_;
  apply_dose(row);
  doses_ = std::move(saved);
  append({{"type", "dose"}, {"hour", row.hour}, {"dose", row.dose}, {"supersedes", row.supersedes}});
  doses_.push_back(row);
}

void Session::record(const std::string& type, json payload) {
  payload["type"] = type;
  append(std::move(payload));
}

ObservationSeries Session::series() const {
  int T = 0;
  for (const auto& r : readings_) T = std::max(T, r.hour);
  for (const auto& d : doses_) T = std::max(T, d.hour);
  ObservationSeries s;
  s.doses.assign(static_cast<std::size_t>(T), 0.0);
  for (const auto& d : doses_) s.doses[d.hour - 1] = d.dose;  // later rows win
  std::map<int, double> latest;
  for (const auto& r : readings_) latest[r.hour] = r.aptt;
  for (const auto& [h, a] : latest) s.observations.push_back({h, a});
  s.noise_scale = noise_scale_ ? *noise_scale_ : estimate_noise_scale(s.observations);
  return s;
}

std::size_t Session::reading_count() const {
  std::map<int, double> latest;
  for (const auto& r : readings_) latest[r.hour] = r.aptt;
  return latest.size();
}

std::unique_ptr<Session> Session::replay(const std::vector<json>& events) {
  auto bad = [](std::size_t i, const std::string& what) {
    return InvalidInput("event " + std::to_string(i + 1) + ": " + what);
  };
  if (events.empty()) throw InvalidInput("empty event log");
  std::unique_ptr<Session> s;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const json& e = events[i];
    try {
      if (!e.is_object() || e.value("seq", 0u) != i + 1) throw bad(i, "sequence number mismatch");
      const std::string type = e.at("type").get<std::string>();
      if (i == 0) {
        if (type != "created") throw bad(i, "log must start with a created event");
        PatientInfo info;
        info.weight_kg = e.at("weight_kg").get<double>();
        auto risk = parse_bleed_risk(e.at("bleed_risk").get<std::string>());
        if (!risk) throw bad(i, "unknown bleed risk");
        info.bleed_risk = *risk;
        std::optional<double> noise;
        if (!e.at("noise_scale").is_null()) noise = e.at("noise_scale").get<double>();
        s = std::make_unique<Session>(e.at("id").get<std::string>(), info, noise);
      } else if (type == "created") {
        throw bad(i, "duplicate created event");
      } else if (type == "observation") {
        s->apply_reading({e.at("hour").get<int>(), e.at("aptt").get<double>(),
                          e.at("supersedes").get<bool>()});
      } else if (type == "dose") {
        s->apply_dose({e.at("hour").get<int>(), e.at("dose").get<double>(),
                       e.at("supersedes").get<bool>()});
      }
    } catch (const json::exception& ex) {
      throw bad(i, ex.what());
    } catch (const Conflict& ex) {
      throw bad(i, ex.what());
    }
    s->audit_.push_back(e);
  }
  return s;
}

SessionStore::SessionStore(std::optional<std::filesystem::path> dir) : dir_(std::move(dir)) {
  if (!dir_) return;
  std::filesystem::create_directories(*dir_);
  std::vector<std::filesystem::path> logs;
  for (const auto& entry : std::filesystem::directory_iterator(*dir_)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") logs.push_back(entry.path());
  }
  std::sort(logs.begin(), logs.end());
  for (const auto& path : logs) {
    std::ifstream in(path);
    std::vector<json> events;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        events.push_back(json::parse(line));
      } catch (const json::parse_error& e) {
        throw InvalidInput(path.string() + ": " + e.what());
      }
    }
    std::shared_ptr<Session> s;
    try {
      s = Session::replay(events);
    } catch (const InvalidInput& e) {
      throw InvalidInput(path.string() + ": " + e.what());
    }
    s->attach_log(path);
    sessions_[s->id()] = s;
  }
  next_ = sessions_.size() + 1;
}

std::shared_ptr<Session> SessionStore::create(std::optional<std::string> id, PatientInfo info,
                                              std::optional<double> noise_scale) {
  std::unique_lock lock(mutex_);
  if (id) {
    if (!valid_session_id(*id)) throw InvalidInput("session id must match [A-Za-z0-9_-]{1,64}");
    if (sessions_.count(*id)) throw Conflict("session " + *id + " already exists");
  } else {
    do {
      id = "s" + std::to_string(next_++);
    } while (sessions_.count(*id));
  }
  auto s = std::make_shared<Session>(*id, info, noise_scale);
  if (dir_) s->attach_log(*dir_ / (*id + ".jsonl"));
  s->record("created", {{"id", *id},
                        {"weight_kg", info.weight_kg},
                        {"bleed_risk", to_string(info.bleed_risk)},
                        {"noise_scale", noise_scale ? json(*noise_scale) : json(nullptr)}});
  sessions_[*id] = s;
  return s;
}

std::shared_ptr<Session> SessionStore::find(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::vector<std::string> SessionStore::ids() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, s] : sessions_) out.push_back(id);
  return out;
}

}  // namespace heparin::app

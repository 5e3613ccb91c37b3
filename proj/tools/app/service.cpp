#include "service.hpp"

#include <cmath>
#include <sstream>

#include "engine.hpp"
#include "heparin/data_io.hpp"
#include "heparin/errors.hpp"
#include "httplib.h"

namespace heparin::app {

using json = nlohmann::json;

namespace {

struct FieldError {
  std::string field;
  std::string message;
};

/// Carries an HTTP status and field-level messages out of a handler.
struct HttpError {
  int status;
  std::string message;
  std::vector<FieldError> fields;
};

Response json_response(int status, const json& body) {
  return {status, "application/json", body.dump(2) + "\n"};
}

Response error_response(int status, const std::string& message,
                        const std::vector<FieldError>& fields = {}, const std::string& diag = {}) {
  json f = json::array();
  for (const auto& e : fields) f.push_back({{"field", e.field}, {"message", e.message}});
  json body = {{"schema", "heparin.error/1"}, {"status", status}, {"error", message}, {"fields", f}};
  if (!diag.empty()) body["diagnostics"] = diag;
  return json_response(status, body);
}

/// Finite numbers as-is, anything else as null.
json finite(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json finite_array(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(finite(x));
  return a;
}

/// Reads a JSON body, collecting every field problem before failing.
class Body {
 public:
  explicit Body(const std::string& text) {
    if (text.empty()) {
      j_ = json::object();
    } else {
      try {
        j_ = json::parse(text);
      } catch (const json::parse_error&) {
        throw HttpError{400, "body is not valid JSON", {}};
      }
    }
    if (!j_.is_object()) throw HttpError{400, "body must be a JSON object", {}};
  }

  const json* get(const std::string& key) {
    known_.push_back(key);
    auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  std::optional<int> hour(const std::string& key, bool required) {
    const json* v = get(key);
    if (!v) {
      if (required) errors_.push_back({key, "required"});
      return std::nullopt;
    }
    if (!v->is_number_integer() || v->get<long long>() < 1 || v->get<long long>() > 1000000) {
      errors_.push_back({key, "must be an integer hour >= 1"});
      return std::nullopt;
    }
    return v->get<int>();
  }

  std::optional<double> number(const std::string& key, bool required, double lo, double hi,
                               bool open_lo = false) {
    const json* v = get(key);
    if (!v) {
      if (required) errors_.push_back({key, "required"});
      return std::nullopt;
    }
    if (!v->is_number()) {
      errors_.push_back({key, "must be a number"});
      return std::nullopt;
    }
    double x = v->get<double>();
    if (!(open_lo ? x > lo : x >= lo) || !(x <= hi) || !std::isfinite(x)) {
      std::ostringstream os;
      os << "must be in " << (open_lo ? "(" : "[") << lo << ", " << hi << "]";
      errors_.push_back({key, os.str()});
      return std::nullopt;
    }
    return x;
  }

  bool flag(const std::string& key) {
    const json* v = get(key);
    if (!v) return false;
    if (!v->is_boolean()) {
      errors_.push_back({key, "must be a boolean"});
      return false;
    }
    return v->get<bool>();
  }

  std::optional<std::string> string(const std::string& key) {
    const json* v = get(key);
    if (!v) return std::nullopt;
    if (!v->is_string()) {
      errors_.push_back({key, "must be a string"});
      return std::nullopt;
    }
    return v->get<std::string>();
  }

  void error(const std::string& field, const std::string& message) {
    errors_.push_back({field, message});
  }

  void finish() {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (std::find(known_.begin(), known_.end(), it.key()) == known_.end()) {
        errors_.push_back({it.key(), "unknown field"});
      }
    }
    if (!errors_.empty()) throw HttpError{400, "invalid request body", errors_};
  }

 private:
  json j_;
  std::vector<std::string> known_;
  std::vector<FieldError> errors_;
};

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path) {
    if (c == '/') {
      if (!cur.empty()) parts.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) parts.push_back(cur);
  return parts;
}

json session_view(const Session& s, std::size_t min_observations) {
  const ObservationSeries series = s.series();
  json obs = json::array();
  for (const auto& o : series.observations) obs.push_back(json::array({o.hour, o.aptt}));
  return {{"schema", "heparin.session/1"},
          {"id", s.id()},
          {"weight_kg", s.info().weight_kg},
          {"bleed_risk", to_string(s.info().bleed_risk)},
          {"noise_scale", s.noise_scale() ? json(*s.noise_scale()) : json(nullptr)},
          {"horizon", series.horizon()},
          {"observations", obs},
          {"doses", series.doses},
          {"reading_count", s.reading_count()},
          {"low_information", s.reading_count() < min_observations},
          {"audit_events", s.audit().size()}};
}

json scenario_rows(const ScenarioTable& table) {
  json rows = json::array();
  for (const Scenario& sc : table.scenarios) {
    rows.push_back({{"alpha", sc.alpha},
                    {"b", sc.b},
                    {"k", sc.k},
                    {"y0", sc.y0},
                    {"yb0", sc.yb0},
                    {"yb", sc.yb},
                    {"log_weight", finite(sc.log_weight)},
                    {"weight", finite(sc.weight)}});
  }
  return rows;
}

json weights_of(const ScenarioTable& table) {
  std::vector<double> w;
  for (const Scenario& sc : table.scenarios) w.push_back(sc.weight);
  return finite_array(w);
}

/// Embeds a data-io report without its schema id.
json embedded(const std::string& report) {
  json j = json::parse(report);
  j.erase("schema");
  return j;
}

LossSpec loss_from(const std::optional<std::string>& name, const LossSpec& fallback,
                   const std::string& field) {
  LossSpec loss = fallback;
  if (name) {
    auto kind = parse_loss_kind(*name);
    if (!kind) throw HttpError{400, "invalid loss", {{field, "must be indicator, band or median"}}};
    loss.kind = *kind;
  }
  return loss;
}

std::size_t horizon_from(const std::map<std::string, std::string>& query, const AppConfig& cfg) {
  auto it = query.find("horizon");
  if (it == query.end()) return cfg.horizon;
  std::size_t used = 0;
  long long n = 0;
  try {
    n = std::stoll(it->second, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != it->second.size() || n < 1 || n > static_cast<long long>(cfg.max_horizon)) {
    throw HttpError{400,
                    "invalid query",
                    {{"horizon", "must be an integer in 1.." + std::to_string(cfg.max_horizon)}}};
  }
  return static_cast<std::size_t>(n);
}

std::optional<std::string> query_value(const std::map<std::string, std::string>& query,
                                       const std::string& key) {
  auto it = query.find(key);
  if (it == query.end()) return std::nullopt;
  return it->second;
}

json prediction_json(const std::string& schema, const Session& s, const ScenarioTable& table,
                     const Prediction& p, const LossSpec& loss, bool low_information) {
  json rows = json::array();
  for (std::size_t i = 0; i < table.scenarios.size(); ++i) {
    const Scenario& sc = table.scenarios[i];
    rows.push_back({{"alpha", sc.alpha},
                    {"b", sc.b},
                    {"k", sc.k},
                    {"yb", sc.yb},
                    {"weight", finite(sc.weight)},
                    {"aptt", p.scenarios[i].aptt},
                    {"loss", finite(p.scenarios[i].loss)}});
  }
  return {{"schema", schema},
          {"session", s.id()},
          {"planning_time", p.planning_time},
          {"doses", p.doses},
          {"loss", to_string(loss.kind)},
          {"scenarios", rows},
          {"weights", weights_of(table)},
          {"mean", p.mean},
          {"low", p.low},
          {"high", p.high},
          {"therapeutic", {{"low", p.therapeutic.low}, {"high", p.therapeutic.high}}},
          {"expected_loss", finite(p.expected_loss)},
          {"low_information", low_information}};
}

}  // namespace

Service::Service(AppConfig config) : config_(std::move(config)), store_(config_.event_log_dir) {
  config_.validate();
}

Response Service::handle(const Request& req) {
  try {
    const auto parts = split_path(req.path);
    if (parts.size() == 1 && parts[0] == "health" && req.method == "GET") {
      return json_response(200, {{"schema", "heparin.health/1"},
                                 {"status", "ok"},
                                 {"sessions", store_.ids().size()}});
    }
    if (parts.empty() || parts[0] != "sessions") throw HttpError{404, "no such route", {}};

    if (parts.size() == 1) {
      if (req.method != "POST") throw HttpError{404, "no such route", {}};
      Body body(req.body);
      auto id = body.string("id");
      PatientInfo info;
      if (auto w = body.number("weight_kg", false, 0.0, 500.0, true)) info.weight_kg = *w;
      if (auto r = body.string("bleed_risk")) {
        if (auto risk = parse_bleed_risk(*r)) {
          info.bleed_risk = *risk;
        } else {
          body.error("bleed_risk", "must be low or high");
        }
      }
      auto noise = body.number("noise_scale", false, 0.0, 100.0, true);
      if (id && !valid_session_id(*id)) body.error("id", "must match [A-Za-z0-9_-]{1,64}");
      body.finish();
      auto s = store_.create(id, info, noise);
      std::lock_guard lock(s->mutex);
      return json_response(201, session_view(*s, config_.min_observations));
    }

    auto session = store_.find(parts[1]);
    if (!session) throw HttpError{404, "unknown session " + parts[1], {}};
    std::lock_guard lock(session->mutex);
    Session& s = *session;
    const std::string action = parts.size() > 2 ? parts[2] : "";
    if (parts.size() > 3) throw HttpError{404, "no such route", {}};

    if (action.empty() && req.method == "GET") return json_response(200, session_view(s, config_.min_observations));

    if (action == "observations" && req.method == "POST") {
      Body body(req.body);
      auto hour = body.hour("hour", true);
      auto aptt = body.number("aptt", true, 0.0, 300.0, true);
      bool supersedes = body.flag("supersedes");
      body.finish();
      s.add_reading({*hour, *aptt, supersedes});
      return json_response(201, session_view(s, config_.min_observations));
    }

    if (action == "doses" && req.method == "POST") {
      Body body(req.body);
      auto hour = body.hour("hour", true);
      auto dose = body.number("dose", true, 0.0, config_.domains.u_max);
      bool supersedes = body.flag("supersedes");
      body.finish();
      s.add_dose({*hour, *dose, supersedes});
      return json_response(201, session_view(s, config_.min_observations));
    }

    if (action == "audit" && req.method == "GET") {
      return json_response(200, {{"schema", "heparin.audit/1"},
                                 {"session", s.id()},
                                 {"events", s.audit()}});
    }

    if (action == "chart" && req.method == "GET") {
      return {200, "text/csv",
              write_chart(chart_from_series(s.id(), s.series(), s.info()))};
    }

    const ObservationSeries series = s.series();
    const std::size_t readings = series.observations.size();
    const bool low_information = readings < config_.min_observations;
    const auto deadline =
        Clock::now() + std::chrono::duration_cast<Clock::duration>(
                           std::chrono::duration<double>(config_.planning_budget_seconds));

    auto need_readings = [&](std::size_t n) {
      if (readings < n) {
        throw HttpError{422,
                        "session has " + std::to_string(readings) + " readings, " +
                            std::to_string(n) + " required",
                        {{"observations", "at least " + std::to_string(n) + " readings required"}}};
      }
    };

    if (action == "estimate" && req.method == "GET") {
      need_readings(1);
      EstimationConfig est = config_.estimation();
      est.deadline = deadline;
      const EstimateResult e = mle_estimate(series, EstimationMethod::benders, est);
      const ScenarioTable table = scenario_table(series, config_.scenario_grid(), est);
      return json_response(200, {{"schema", "heparin.session-estimate/1"},
                                 {"session", s.id()},
                                 {"planning_time", series.horizon()},
                                 {"noise_scale", series.noise_scale},
                                 {"estimate", embedded(write_report(e))},
                                 {"scenarios", scenario_rows(table)},
                                 {"weights", weights_of(table)},
                                 {"low_information", low_information}});
    }

    if (action == "recommendation" && req.method == "GET") {
      const std::size_t horizon = horizon_from(req.query, config_);
      const LossSpec loss = loss_from(query_value(req.query, "loss"), config_.loss, "loss");
      need_readings(config_.min_observations);
      const Recommendation r = recommend(series, config_, horizon, loss, deadline);
      s.record("recommendation", {{"horizon", horizon},
                                  {"loss", to_string(loss.kind)},
                                  {"planning_time", r.plan.planning_time},
                                  {"doses", r.plan.doses},
                                  {"expected_loss", r.plan.expected_loss}});
      return json_response(200, {{"schema", "heparin.recommendation/1"},
                                 {"session", s.id()},
                                 {"horizon", horizon},
                                 {"loss", to_string(loss.kind)},
                                 {"plan", embedded(write_report(r.plan))},
                                 {"scenarios", scenario_rows(r.table)},
                                 {"weights", weights_of(r.table)},
                                 {"timing",
                                  {{"predict_seconds", r.predict_seconds},
                                   {"control_seconds", r.control_seconds}}},
                                 {"low_information", false}});
    }

    const bool whatif = action == "whatif" && req.method == "POST";
    const bool trajectory = action == "trajectory" && req.method == "GET";
    if (whatif || trajectory) {
      std::vector<double> doses;
      LossSpec loss = config_.loss;
      if (whatif) {
        Body body(req.body);
        const json* d = body.get("doses");
        if (!d) {
          body.error("doses", "required");
        } else if (!d->is_array() || d->empty() || d->size() > config_.max_horizon) {
          body.error("doses", "must be an array of 1.." + std::to_string(config_.max_horizon) +
                                  " doses");
        } else {
          for (const json& v : *d) {
            if (!v.is_number() || !(v.get<double>() >= 0.0) ||
                !(v.get<double>() <= config_.domains.u_max)) {
              body.error("doses", "every dose must be a number in [0, u_max]");
              break;
            }
            doses.push_back(v.get<double>());
          }
        }
        loss = loss_from(body.string("loss"), config_.loss, "loss");
        body.finish();
      } else {
        doses.assign(horizon_from(req.query, config_), 0.0);
        loss = loss_from(query_value(req.query, "loss"), config_.loss, "loss");
      }
      need_readings(1);
      EstimationConfig est = config_.estimation();
      est.deadline = deadline;
      const ScenarioTable table = scenario_table(series, config_.scenario_grid(), est);
      const Prediction p = predict(table, series, doses, config_, loss);
      if (whatif) {
        s.record("whatif", {{"doses", doses}, {"expected_loss", finite(p.expected_loss)}});
      }
      return json_response(200, prediction_json(whatif ? "heparin.whatif/1" : "heparin.trajectory/1",
                                                s, table, p, loss, low_information));
    }

    throw HttpError{404, "no such route", {}};
  } catch (const HttpError& e) {
    return error_response(e.status, e.message, e.fields);
  } catch (const Conflict& e) {
    return error_response(409, e.what());
  } catch (const DeadlineExceeded& e) {
    return error_response(503, e.what(), {}, e.diagnostics());
  } catch (const InvalidInput& e) {
    return error_response(400, e.what());
  } catch (const EstimationFailed& e) {
    return error_response(422, e.what());
  } catch (const PlanningFailed& e) {
    return error_response(422, e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

void mount(httplib::Server& server, Service& service) {
  auto forward = [&service](const httplib::Request& req, httplib::Response& res) {
    Request r;
    r.method = req.method;
    r.path = req.path;
    for (const auto& [k, v] : req.params) r.query[k] = v;
    r.body = req.body;
    const Response out = service.handle(r);
    res.status = out.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(out.body, out.content_type);
  };
  server.Get(".*", forward);
  server.Post(".*", forward);
  server.Options(".*", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

}  // namespace heparin::app

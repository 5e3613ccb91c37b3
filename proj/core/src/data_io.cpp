#include "heparin/data_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "heparin/errors.hpp"
#include "json.hpp"

namespace heparin {

using json = nlohmann::json;

namespace {

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    return std::nullopt;
  }
  return v;
}

std::optional<int> parse_int(std::string_view s) {
  int v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- charts

std::size_t ChartRecord::reading_count() const {
  return static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(), [](const ChartRow& r) { return r.aptt.has_value(); }));
}

ObservationSeries ChartRecord::series(std::optional<double> noise_scale) const {
  ObservationSeries s;
  s.doses.reserve(rows.size());
  for (const ChartRow& r : rows) {
    s.doses.push_back(r.dose);
    if (r.aptt) s.observations.push_back({r.hour, *r.aptt});
  }
  s.noise_scale = noise_scale ? *noise_scale : estimate_noise_scale(s.observations);
  return s;
}

PatientInfo ChartRecord::info() const {
  PatientInfo info;
  if (weight_kg) info.weight_kg = *weight_kg;
  if (bleed_risk) info.bleed_risk = *bleed_risk;
  return info;
}

ChartRecord parse_chart(std::istream& in, const ChartRules& rules) {
  ChartRecord chart;
  std::vector<ValidationIssue> issues;
  std::map<int, ChartRow> by_hour;
  std::set<int> hours_seen;
  std::string raw;
  std::size_t line_no = 0;
  bool header_seen = false;
  int last_hour = 0;

  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '#') {
      if (header_seen) continue;
      std::string_view body = trim(line.substr(1));
      auto colon = body.find(':');
      if (colon == std::string_view::npos) continue;
      std::string_view key = trim(body.substr(0, colon));
      std::string_view value = trim(body.substr(colon + 1));
      if (key == "id") {
        chart.id = std::string(value);
      } else if (key == "weight_kg") {
        auto w = parse_double(value);
        if (!w || *w <= 0.0) {
          issues.push_back({line_no, "weight_kg must be a positive number"});
        } else {
          chart.weight_kg = *w;
        }
      } else if (key == "bleed_risk") {
        auto r = parse_bleed_risk(value);
        if (!r) {
          issues.push_back({line_no, "bleed_risk must be low or high"});
        } else {
          chart.bleed_risk = *r;
        }
      }
      continue;
    }
    if (!header_seen) {
      auto cols = split(line, ',');
      if (cols.size() != 3 || cols[0] != "hour" || cols[1] != "dose_iu" || cols[2] != "aptt_s") {
        issues.push_back({line_no, "expected header 'hour,dose_iu,aptt_s'"});
        throw ValidationError(std::move(issues));
      }
      header_seen = true;
      continue;
    }

    auto cols = split(line, ',');
    if (cols.size() != 3) {
      issues.push_back({line_no, "expected 3 fields, found " + std::to_string(cols.size())});
      continue;
    }
    auto hour = parse_int(cols[0]);
    if (!hour) {
      issues.push_back({line_no, "hour is not an integer"});
      continue;
    }
    bool ok = true;
    if (*hour < 1) {
      issues.push_back({line_no, "hour must be at least 1"});
      ok = false;
    } else if (hours_seen.count(*hour)) {
      issues.push_back({line_no, "duplicate hour " + std::to_string(*hour)});
      ok = false;
    } else if (*hour < last_hour) {
      issues.push_back({line_no, "hour " + std::to_string(*hour) + " is not increasing"});
      ok = false;
    }
    ChartRow row;
    row.hour = *hour;
    if (!cols[1].empty()) {
      auto d = parse_double(cols[1]);
      if (!d) {
        issues.push_back({line_no, "dose_iu is not a number"});
        ok = false;
      } else if (*d < 0.0) {
        issues.push_back({line_no, "dose_iu is negative"});
        ok = false;
      } else {
        row.dose = *d;
      }
    }
    if (!cols[2].empty()) {
      auto a = parse_double(cols[2]);
      if (!a) {
        issues.push_back({line_no, "aptt_s is not a number"});
        ok = false;
      } else if (!(*a > 0.0 && *a < rules.aptt_max)) {
        issues.push_back({line_no, "aptt_s outside (0, " + format_number(rules.aptt_max) + ")"});
        ok = false;
      } else {
        row.aptt = *a;
      }
    }
    if (*hour >= 1) {
      hours_seen.insert(*hour);
      last_hour = std::max(last_hour, *hour);
    }
    if (ok) by_hour.emplace(row.hour, row);
  }

  if (!header_seen) issues.push_back({line_no, "missing header 'hour,dose_iu,aptt_s'"});
  if (issues.empty()) {
    std::size_t readings = 0;
    for (const auto& [h, r] : by_hour) readings += r.aptt ? 1 : 0;
    if (readings < std::max<std::size_t>(rules.min_readings, 1)) {
      issues.push_back({line_no, "chart has " + std::to_string(readings) +
                                     " aPTT readings, at least " +
                                     std::to_string(std::max<std::size_t>(rules.min_readings, 1)) +
                                     " required"});
    }
  }
  if (!issues.empty()) throw ValidationError(std::move(issues));

  chart.rows.resize(static_cast<std::size_t>(last_hour));
  for (int h = 1; h <= last_hour; ++h) chart.rows[h - 1].hour = h;
  for (const auto& [h, r] : by_hour) chart.rows[h - 1] = r;
  return chart;
}

ChartRecord parse_chart_text(std::string_view text, const ChartRules& rules) {
  std::istringstream in{std::string(text)};
  return parse_chart(in, rules);
}

ChartRecord read_chart(const std::filesystem::path& path, const ChartRules& rules) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open chart " + path.string());
  return parse_chart(in, rules);
}

std::string write_chart(const ChartRecord& chart) {
  std::string out;
  if (!chart.id.empty()) out += "# id: " + chart.id + "\n";
  if (chart.weight_kg) out += "# weight_kg: " + format_number(*chart.weight_kg) + "\n";
  if (chart.bleed_risk) out += std::string("# bleed_risk: ") + to_string(*chart.bleed_risk) + "\n";
  out += "hour,dose_iu,aptt_s\n";
  for (const ChartRow& r : chart.rows) {
    out += std::to_string(r.hour) + "," + format_number(r.dose) + ",";
    if (r.aptt) out += format_number(*r.aptt);
    out += "\n";
  }
  return out;
}

ChartRecord chart_from_series(const std::string& id, const ObservationSeries& series,
                              const std::optional<PatientInfo>& info) {
  ChartRecord chart;
  chart.id = id;
  if (info) {
    chart.weight_kg = info->weight_kg;
    chart.bleed_risk = info->bleed_risk;
  }
  chart.rows.resize(series.doses.size());
  for (std::size_t i = 0; i < series.doses.size(); ++i) {
    chart.rows[i].hour = static_cast<int>(i) + 1;
    chart.rows[i].dose = series.doses[i];
  }
  for (const Observation& o : series.observations) {
    if (o.hour < 1 || o.hour > series.horizon()) {
      throw InvalidInput("observation hour " + std::to_string(o.hour) + " outside the record");
    }
    chart.rows[o.hour - 1].aptt = o.aptt;
  }
  return chart;
}

// ---------------------------------------------------------------- JSON helpers

namespace {

json num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

json nums(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

/// Strict view of one JSON object: every field must be read exactly once
/// before finish(), so unknown fields are caught.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("expected an object");
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw InvalidInput((path_.empty() ? std::string("document") : path_) + ": " + what);
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& at(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) fail("missing field '" + key + "'");
    seen_.insert(key);
    return *it;
  }

  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  double number(const std::string& key) { return to_number(at(key), sub(key)); }

  static double to_number(const json& v, const std::string& path) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
      const auto& s = v.get_ref<const std::string&>();
      if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
      if (s == "inf") return std::numeric_limits<double>::infinity();
      if (s == "-inf") return -std::numeric_limits<double>::infinity();
    }
    throw InvalidInput(path + ": expected a number");
  }

  std::vector<double> numbers(const std::string& key) {
    const json& a = at(key);
    if (!a.is_array()) fail("field '" + key + "' must be an array");
    std::vector<double> out;
    out.reserve(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      out.push_back(to_number(a[i], sub(key) + "[" + std::to_string(i) + "]"));
    }
    return out;
  }

  template <class Int>
  Int integer(const std::string& key) {
    const json& v = at(key);
    if (!v.is_number_integer()) fail("field '" + key + "' must be an integer");
    if constexpr (std::is_unsigned_v<Int>) {
      if (v.is_number_unsigned()) return static_cast<Int>(v.get<std::uint64_t>());
      if (v.get<std::int64_t>() < 0) fail("field '" + key + "' must be nonnegative");
      return static_cast<Int>(v.get<std::int64_t>());
    } else {
      return static_cast<Int>(v.get<std::int64_t>());
    }
  }

  bool boolean(const std::string& key) {
    const json& v = at(key);
    if (!v.is_boolean()) fail("field '" + key + "' must be a boolean");
    return v.get<bool>();
  }

  std::string string(const std::string& key) {
    const json& v = at(key);
    if (!v.is_string()) fail("field '" + key + "' must be a string");
    return v.get<std::string>();
  }

  const json& array(const std::string& key) {
    const json& v = at(key);
    if (!v.is_array()) fail("field '" + key + "' must be an array");
    return v;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) fail("unknown field '" + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string index_path(const std::string& base, std::size_t i) {
  return base + "[" + std::to_string(i) + "]";
}

json parse_document(std::string_view text, std::string_view schema) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidInput(std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("schema") || !doc["schema"].is_string()) {
    throw InvalidInput("document has no schema id");
  }
  if (doc["schema"].get<std::string>() != schema) {
    throw InvalidInput("expected schema " + std::string(schema) + ", found " +
                       doc["schema"].get<std::string>());
  }
  return doc;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// Parameter and configuration blocks.

json params_json(const PatientParams& p) {
  return {{"alpha", num(p.alpha)}, {"k", num(p.k)},     {"b", num(p.b)},
          {"y0", num(p.y0)},       {"yb0", num(p.yb0)}, {"yb", num(p.yb)}};
}

PatientParams read_params(const json& j, const std::string& path) {
  Reader r(j, path);
  PatientParams p;
  p.alpha = r.number("alpha");
  p.k = r.number("k");
  p.b = r.number("b");
  p.y0 = r.number("y0");
  p.yb0 = r.number("yb0");
  p.yb = r.number("yb");
  r.finish();
  return p;
}

json interval_json(const Interval& i) { return json::array({num(i.lo), num(i.hi)}); }

Interval read_interval(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2) throw InvalidInput(path + ": expected [lo, hi]");
  return {Reader::to_number(j[0], path + "[0]"), Reader::to_number(j[1], path + "[1]")};
}

json domains_json(const Domains& d) {
  return {{"alphas", nums(d.alphas)}, {"alpha_floor", num(d.alpha_floor)},
          {"b", interval_json(d.b)},  {"k", interval_json(d.k)},
          {"y_max", num(d.y_max)},    {"x_max", num(d.x_max)},
          {"u_max", num(d.u_max)}};
}

Domains read_domains(const json& j, const std::string& path) {
  Reader r(j, path);
  Domains d;
  d.alphas = r.numbers("alphas");
  d.alpha_floor = r.number("alpha_floor");
  d.b = read_interval(r.at("b"), r.sub("b"));
  d.k = read_interval(r.at("k"), r.sub("k"));
  d.y_max = r.number("y_max");
  d.x_max = r.number("x_max");
  d.u_max = r.number("u_max");
  r.finish();
  return d;
}

json gammas_json(const GlobalDecayRates& g) {
  return {{"gamma1", num(g.gamma1)},
          {"gamma2", num(g.gamma2)},
          {"gamma3", num(g.gamma3)},
          {"gamma4", num(g.gamma4)}};
}

GlobalDecayRates read_gammas(const json& j, const std::string& path) {
  Reader r(j, path);
  GlobalDecayRates g;
  g.gamma1 = r.number("gamma1");
  g.gamma2 = r.number("gamma2");
  g.gamma3 = r.number("gamma3");
  g.gamma4 = r.number("gamma4");
  r.finish();
  return g;
}

const char* to_string(NoiseScaleSource s) {
  return s == NoiseScaleSource::known ? "known" : "estimate";
}

json sim_config_json(const SimulationConfig& c) {
  return {{"total_hours", c.total_hours},
          {"warmstart_hours", c.warmstart_hours},
          {"replan_interval", c.replan_interval},
          {"replicates", c.replicates},
          {"seed", c.seed},
          {"noise_scale_source", to_string(c.noise_scale_source)},
          {"domains", domains_json(c.domains)},
          {"gammas", gammas_json(c.gammas)},
          {"workers", c.workers}};
}

SimulationConfig read_sim_config(const json& j, const std::string& path) {
  Reader r(j, path);
  SimulationConfig c;
  c.total_hours = r.integer<int>("total_hours");
  c.warmstart_hours = r.integer<int>("warmstart_hours");
  c.replan_interval = r.integer<int>("replan_interval");
  c.replicates = r.integer<std::size_t>("replicates");
  c.seed = r.integer<std::uint64_t>("seed");
  std::string src = r.string("noise_scale_source");
  if (src == "known") {
    c.noise_scale_source = NoiseScaleSource::known;
  } else if (src == "estimate") {
    c.noise_scale_source = NoiseScaleSource::estimate;
  } else {
    r.fail("noise_scale_source must be known or estimate");
  }
  c.domains = read_domains(r.at("domains"), r.sub("domains"));
  c.gammas = read_gammas(r.at("gammas"), r.sub("gammas"));
  c.workers = r.integer<std::size_t>("workers");
  r.finish();
  return c;
}

json observations_json(const std::vector<Observation>& obs) {
  json a = json::array();
  for (const Observation& o : obs) a.push_back(json::array({o.hour, num(o.aptt)}));
  return a;
}

std::vector<Observation> read_observations(const json& a, const std::string& path) {
  if (!a.is_array()) throw InvalidInput(path + ": expected an array");
  std::vector<Observation> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const json& e = a[i];
    std::string p = index_path(path, i);
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer()) {
      throw InvalidInput(p + ": expected [hour, aptt]");
    }
    out.push_back({e[0].get<int>(), Reader::to_number(e[1], p + "[1]")});
  }
  return out;
}

json series_json(const ObservationSeries& s) {
  return {{"doses", nums(s.doses)},
          {"observations", observations_json(s.observations)},
          {"noise_scale", num(s.noise_scale)}};
}

ObservationSeries read_series(const json& j, const std::string& path) {
  Reader r(j, path);
  ObservationSeries s;
  s.doses = r.numbers("doses");
  s.observations = read_observations(r.at("observations"), r.sub("observations"));
  s.noise_scale = r.number("noise_scale");
  r.finish();
  return s;
}

json estimate_json(const EstimateResult& e) {
  const EstimateDiagnostics& d = e.diagnostics;
  json trace = json::array();
  for (const BoundTracePoint& p : d.trace) {
    trace.push_back({{"phase", p.phase}, {"upper", num(p.upper)}, {"lower", num(p.lower)}});
  }
  return {{"params", params_json(e.params)},
          {"log_likelihood", num(e.log_likelihood)},
          {"log_posterior", num(e.log_posterior)},
          {"diagnostics",
           {{"iterations", d.iterations},
            {"optimality_cuts", d.optimality_cuts},
            {"feasibility_cuts", d.feasibility_cuts},
            {"lp_solves", d.lp_solves},
            {"wall_seconds", num(d.wall_seconds)},
            {"max_duality_gap", num(d.max_duality_gap)},
            {"low_information", d.low_information},
            {"trace", trace}}}};
}

EstimateResult read_estimate(Reader& r) {
  EstimateResult e;
  e.params = read_params(r.at("params"), r.sub("params"));
  e.log_likelihood = r.number("log_likelihood");
  e.log_posterior = r.number("log_posterior");
  Reader d(r.at("diagnostics"), r.sub("diagnostics"));
  EstimateDiagnostics& diag = e.diagnostics;
  diag.iterations = d.integer<std::size_t>("iterations");
  diag.optimality_cuts = d.integer<std::size_t>("optimality_cuts");
  diag.feasibility_cuts = d.integer<std::size_t>("feasibility_cuts");
  diag.lp_solves = d.integer<std::size_t>("lp_solves");
  diag.wall_seconds = d.number("wall_seconds");
  diag.max_duality_gap = d.number("max_duality_gap");
  diag.low_information = d.boolean("low_information");
  const json& trace = d.array("trace");
  for (std::size_t i = 0; i < trace.size(); ++i) {
    Reader t(trace[i], index_path(d.sub("trace"), i));
    BoundTracePoint p;
    p.phase = t.integer<int>("phase");
    p.upper = t.number("upper");
    p.lower = t.number("lower");
    t.finish();
    diag.trace.push_back(p);
  }
  d.finish();
  return e;
}

json scenarios_json(const ScenarioTable& t) {
  json rows = json::array();
  for (const Scenario& s : t.scenarios) {
    rows.push_back({{"alpha", num(s.alpha)},
                    {"b", num(s.b)},
                    {"k", num(s.k)},
                    {"y0", num(s.y0)},
                    {"yb0", num(s.yb0)},
                    {"yb", num(s.yb)},
                    {"log_weight", num(s.log_weight)},
                    {"raw_weight", num(s.raw_weight)},
                    {"weight", num(s.weight)}});
  }
  return rows;
}

ScenarioTable read_scenarios(const json& rows, const std::string& path) {
  if (!rows.is_array()) throw InvalidInput(path + ": expected an array");
  ScenarioTable t;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Reader r(rows[i], index_path(path, i));
    Scenario s;
    s.alpha = r.number("alpha");
    s.b = r.number("b");
    s.k = r.number("k");
    s.y0 = r.number("y0");
    s.yb0 = r.number("yb0");
    s.yb = r.number("yb");
    s.log_weight = r.number("log_weight");
    s.raw_weight = r.number("raw_weight");
    s.weight = r.number("weight");
    r.finish();
    t.scenarios.push_back(s);
  }
  return t;
}

json plan_json(const DosePlan& p) {
  return {{"planning_time", p.planning_time},
          {"doses", nums(p.doses)},
          {"expected_loss", num(p.expected_loss)},
          {"scenario_losses", nums(p.scenario_losses)},
          {"weights", nums(p.weights)},
          {"evaluations", p.evaluations}};
}

DosePlan read_plan(Reader& r) {
  DosePlan p;
  p.planning_time = r.integer<int>("planning_time");
  p.doses = r.numbers("doses");
  p.expected_loss = r.number("expected_loss");
  p.scenario_losses = r.numbers("scenario_losses");
  p.weights = r.numbers("weights");
  p.evaluations = r.integer<std::size_t>("evaluations");
  return p;
}

json trajectory_json(const Trajectory& t) {
  json states = json::array();
  for (const PatientState& s : t.states) {
    states.push_back(json::array({num(s.x), num(s.y), num(s.y_base)}));
  }
  return {{"states", states}, {"clamped", t.clamped}};
}

Trajectory read_trajectory(const json& j, const std::string& path) {
  Reader r(j, path);
  Trajectory t;
  const json& states = r.array("states");
  for (std::size_t i = 0; i < states.size(); ++i) {
    std::string p = index_path(r.sub("states"), i);
    const json& s = states[i];
    if (!s.is_array() || s.size() != 3) throw InvalidInput(p + ": expected [x, y, y_base]");
    t.states.push_back({Reader::to_number(s[0], p), Reader::to_number(s[1], p),
                        Reader::to_number(s[2], p)});
  }
  t.clamped = r.boolean("clamped");
  r.finish();
  return t;
}

json episode_json(const EpisodeResult& e, const ReportOptions& options) {
  json cycles = json::array();
  for (const CycleTiming& c : e.cycles) {
    cycles.push_back({{"hour", c.hour},
                      {"predict_seconds", num(c.predict_seconds)},
                      {"control_seconds", num(c.control_seconds)}});
  }
  json j = {{"patient_id", e.patient_id},
            {"policy", e.policy},
            {"replicate", e.replicate},
            {"cycles", cycles},
            {"time_in_control", num(e.time_in_control)},
            {"deviation", num(e.deviation)},
            {"failed", e.failed},
            {"error", e.error}};
  if (options.trajectories) {
    j["truth"] = trajectory_json(e.truth);
    j["observed"] = series_json(e.observed);
  }
  return j;
}

EpisodeResult read_episode(const json& j, const std::string& path) {
  Reader r(j, path);
  EpisodeResult e;
  e.patient_id = r.string("patient_id");
  e.policy = r.string("policy");
  e.replicate = r.integer<std::size_t>("replicate");
  const json& cycles = r.array("cycles");
  for (std::size_t i = 0; i < cycles.size(); ++i) {
    Reader c(cycles[i], index_path(r.sub("cycles"), i));
    CycleTiming t;
    t.hour = c.integer<int>("hour");
    t.predict_seconds = c.number("predict_seconds");
    t.control_seconds = c.number("control_seconds");
    c.finish();
    e.cycles.push_back(t);
  }
  e.time_in_control = r.number("time_in_control");
  e.deviation = r.number("deviation");
  e.failed = r.boolean("failed");
  e.error = r.string("error");
  if (r.has("truth") || r.has("observed")) {
    e.truth = read_trajectory(r.at("truth"), r.sub("truth"));
    e.observed = read_series(r.at("observed"), r.sub("observed"));
  }
  r.finish();
  return e;
}

json roc_json(const RocCurve& c) {
  json points = json::array();
  for (const RocPoint& p : c.points) points.push_back(json::array({num(p.fpr), num(p.tpr)}));
  return {{"mode", to_string(c.mode)},
          {"points", points},
          {"auc", num(c.auc)},
          {"warnings", c.warnings}};
}

RocCurve read_roc(const json& j, const std::string& path) {
  Reader r(j, path);
  RocCurve c;
  std::string mode = r.string("mode");
  if (mode == "micro") {
    c.mode = RocMode::micro;
  } else if (mode == "macro") {
    c.mode = RocMode::macro;
  } else {
    r.fail("mode must be micro or macro");
  }
  const json& points = r.array("points");
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::string p = index_path(r.sub("points"), i);
    if (!points[i].is_array() || points[i].size() != 2) {
      throw InvalidInput(p + ": expected [fpr, tpr]");
    }
    c.points.push_back({Reader::to_number(points[i][0], p), Reader::to_number(points[i][1], p)});
  }
  c.auc = r.number("auc");
  for (const json& w : r.array("warnings")) {
    if (!w.is_string()) r.fail("warnings must be strings");
    c.warnings.push_back(w.get<std::string>());
  }
  r.finish();
  return c;
}

template <std::size_t N>
json fixed_nums(const std::array<double, N>& a) {
  json out = json::array();
  for (double v : a) out.push_back(num(v));
  return out;
}

template <std::size_t N>
std::array<double, N> read_fixed(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != N) {
    throw InvalidInput(path + ": expected " + std::to_string(N) + " numbers");
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = Reader::to_number(j[i], index_path(path, i));
  return out;
}

json tier_json(const ProtocolTable::Tier& t) {
  return {{"bolus_per_kg", num(t.bolus_per_kg)},
          {"rate_per_kg", num(t.rate_per_kg)},
          {"rebolus", t.rebolus}};
}

ProtocolTable::Tier read_tier(const json& j, const std::string& path) {
  Reader r(j, path);
  ProtocolTable::Tier t;
  t.bolus_per_kg = r.number("bolus_per_kg");
  t.rate_per_kg = r.number("rate_per_kg");
  t.rebolus = r.boolean("rebolus");
  r.finish();
  return t;
}

}  // namespace

// ---------------------------------------------------------------- reports

std::string write_report(const EstimateResult& estimate) {
  json doc = estimate_json(estimate);
  doc["schema"] = std::string(kEstimateSchema);
  return dump(doc);
}

EstimateResult parse_estimate_report(std::string_view text) {
  json doc = parse_document(text, kEstimateSchema);
  Reader r(doc, "");
  r.at("schema");
  EstimateResult e = read_estimate(r);
  r.finish();
  return e;
}

std::string write_report(const ScenarioTable& table) {
  json doc = {{"schema", std::string(kScenariosSchema)}, {"scenarios", scenarios_json(table)}};
  return dump(doc);
}

ScenarioTable parse_scenarios_report(std::string_view text) {
  json doc = parse_document(text, kScenariosSchema);
  Reader r(doc, "");
  r.at("schema");
  ScenarioTable t = read_scenarios(r.at("scenarios"), "scenarios");
  r.finish();
  return t;
}

std::string write_report(const DosePlan& plan) {
  json doc = plan_json(plan);
  doc["schema"] = std::string(kPlanSchema);
  return dump(doc);
}

DosePlan parse_plan_report(std::string_view text) {
  json doc = parse_document(text, kPlanSchema);
  Reader r(doc, "");
  r.at("schema");
  DosePlan p = read_plan(r);
  r.finish();
  return p;
}

std::string write_report(const CohortReport& report, const ReportOptions& options) {
  json aggregates = json::array();
  for (const PolicyAggregate& a : report.aggregates) {
    aggregates.push_back({{"policy", a.policy},
                          {"time_in_control", num(a.time_in_control)},
                          {"deviation", num(a.deviation)},
                          {"predict_seconds", num(a.predict_seconds)},
                          {"control_seconds", num(a.control_seconds)},
                          {"max_cycle_seconds", num(a.max_cycle_seconds)},
                          {"episodes", a.episodes},
                          {"failed", a.failed}});
  }
  json patients = json::array();
  for (const PatientAggregate& p : report.patients) {
    patients.push_back({{"patient_id", p.patient_id},
                        {"policy", p.policy},
                        {"time_in_control", num(p.time_in_control)},
                        {"deviation", num(p.deviation)},
                        {"episodes", p.episodes}});
  }
  json episodes = json::array();
  for (const EpisodeResult& e : report.episodes) episodes.push_back(episode_json(e, options));
  json doc = {{"schema", std::string(kCohortReportSchema)},
              {"config", sim_config_json(report.config)},
              {"policies", report.policies},
              {"aggregates", aggregates},
              {"patients", patients},
              {"episodes", episodes}};
  return dump(doc);
}

CohortReport parse_cohort_report(std::string_view text) {
  json doc = parse_document(text, kCohortReportSchema);
  Reader r(doc, "");
  r.at("schema");
  CohortReport report;
  report.config = read_sim_config(r.at("config"), "config");
  for (const json& p : r.array("policies")) {
    if (!p.is_string()) r.fail("policies must be strings");
    report.policies.push_back(p.get<std::string>());
  }
  const json& aggregates = r.array("aggregates");
  for (std::size_t i = 0; i < aggregates.size(); ++i) {
    Reader a(aggregates[i], index_path("aggregates", i));
    PolicyAggregate agg;
    agg.policy = a.string("policy");
    agg.time_in_control = a.number("time_in_control");
    agg.deviation = a.number("deviation");
    agg.predict_seconds = a.number("predict_seconds");
    agg.control_seconds = a.number("control_seconds");
    agg.max_cycle_seconds = a.number("max_cycle_seconds");
    agg.episodes = a.integer<std::size_t>("episodes");
    agg.failed = a.integer<std::size_t>("failed");
    a.finish();
    report.aggregates.push_back(agg);
  }
  const json& patients = r.array("patients");
  for (std::size_t i = 0; i < patients.size(); ++i) {
    Reader p(patients[i], index_path("patients", i));
    PatientAggregate agg;
    agg.patient_id = p.string("patient_id");
    agg.policy = p.string("policy");
    agg.time_in_control = p.number("time_in_control");
    agg.deviation = p.number("deviation");
    agg.episodes = p.integer<std::size_t>("episodes");
    p.finish();
    report.patients.push_back(agg);
  }
  const json& episodes = r.array("episodes");
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    report.episodes.push_back(read_episode(episodes[i], index_path("episodes", i)));
  }
  r.finish();
  return report;
}

std::string write_report(const EvaluationReport& report) {
  const ConfusionMatrix& c = report.confusion;
  json fraction = json::array();
  for (const auto& row : c.fraction) fraction.push_back(fixed_nums(row));
  json doc = {{"schema", std::string(kEvaluationSchema)},
              {"micro", roc_json(report.micro)},
              {"macro", roc_json(report.macro)},
              {"confusion",
               {{"fraction", fraction},
                {"tpr", fixed_nums(c.tpr)},
                {"fpr", fixed_nums(c.fpr)},
                {"samples", c.samples}}},
              {"accuracy", num(report.accuracy)}};
  return dump(doc);
}

EvaluationReport parse_evaluation_report(std::string_view text) {
  json doc = parse_document(text, kEvaluationSchema);
  Reader r(doc, "");
  r.at("schema");
  EvaluationReport report;
  report.micro = read_roc(r.at("micro"), "micro");
  report.macro = read_roc(r.at("macro"), "macro");
  Reader c(r.at("confusion"), "confusion");
  const json& fraction = c.array("fraction");
  if (fraction.size() != 3) c.fail("fraction must have 3 rows");
  for (std::size_t i = 0; i < 3; ++i) {
    report.confusion.fraction[i] = read_fixed<3>(fraction[i], index_path("confusion.fraction", i));
  }
  report.confusion.tpr = read_fixed<3>(c.at("tpr"), "confusion.tpr");
  report.confusion.fpr = read_fixed<3>(c.at("fpr"), "confusion.fpr");
  report.confusion.samples = c.integer<std::size_t>("samples");
  c.finish();
  report.accuracy = r.number("accuracy");
  r.finish();
  return report;
}

std::string report_schema(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidInput(std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("schema") || !doc["schema"].is_string()) {
    throw InvalidInput("document has no schema id");
  }
  return doc["schema"].get<std::string>();
}

// ---------------------------------------------------------------- cohorts

SyntheticPatient CohortEntry::synthetic() const {
  if (!truth || !noise_scale) {
    throw InvalidInput("patient " + id + " has no ground truth; simulation needs truth and noise");
  }
  SyntheticPatient p;
  p.id = id;
  p.truth = *truth;
  p.noise_scale = *noise_scale;
  p.info = info;
  p.warmstart = record;
  return p;
}

std::string write_cohort(const std::vector<SyntheticPatient>& patients) {
  std::vector<CohortEntry> entries;
  entries.reserve(patients.size());
  for (const SyntheticPatient& p : patients) {
    entries.push_back({p.id, p.info, p.truth, p.noise_scale, p.warmstart});
  }
  return write_cohort(entries);
}

std::string write_cohort(const std::vector<CohortEntry>& entries) {
  json patients = json::array();
  for (const CohortEntry& e : entries) {
    patients.push_back({{"id", e.id},
                        {"weight_kg", num(e.info.weight_kg)},
                        {"bleed_risk", to_string(e.info.bleed_risk)},
                        {"truth", e.truth ? params_json(*e.truth) : json(nullptr)},
                        {"noise_scale", e.noise_scale ? num(*e.noise_scale) : json(nullptr)},
                        {"record", series_json(e.record)}});
  }
  return dump({{"schema", std::string(kCohortSchema)}, {"patients", patients}});
}

std::vector<CohortEntry> parse_cohort(std::string_view text) {
  json doc = parse_document(text, kCohortSchema);
  Reader r(doc, "");
  r.at("schema");
  std::vector<CohortEntry> out;
  std::set<std::string> ids;
  const json& patients = r.array("patients");
  for (std::size_t i = 0; i < patients.size(); ++i) {
    std::string path = index_path("patients", i);
    Reader p(patients[i], path);
    CohortEntry e;
    e.id = p.string("id");
    if (e.id.empty() || !ids.insert(e.id).second) p.fail("id must be nonempty and unique");
    e.info.weight_kg = p.number("weight_kg");
    if (!(e.info.weight_kg > 0.0)) p.fail("weight_kg must be positive");
    auto risk = parse_bleed_risk(p.string("bleed_risk"));
    if (!risk) p.fail("bleed_risk must be low or high");
    e.info.bleed_risk = *risk;
    const json& truth = p.at("truth");
    if (!truth.is_null()) e.truth = read_params(truth, p.sub("truth"));
    const json& noise = p.at("noise_scale");
    if (!noise.is_null()) e.noise_scale = Reader::to_number(noise, p.sub("noise_scale"));
    e.record = read_series(p.at("record"), p.sub("record"));
    try {
      e.record.validate();
    } catch (const InvalidInput& err) {
      p.fail(std::string("record: ") + err.what());
    }
    p.finish();
    out.push_back(std::move(e));
  }
  r.finish();
  return out;
}

// ---------------------------------------------------------------- protocol

std::string write_protocol(const ProtocolTable& table) {
  json rows = json::array();
  for (std::size_t i = 0; i < table.titration.size(); ++i) {
    const auto& row = table.titration[i];
    rows.push_back({{"aptt_below", std::isinf(row.aptt_below) ? json(nullptr) : num(row.aptt_below)},
                    {"bolus_per_kg", num(row.bolus_per_kg)},
                    {"rate_change_per_kg", num(row.rate_change_per_kg)},
                    {"hold_hours", num(row.hold_hours)}});
  }
  return dump({{"schema", std::string(kProtocolSchema)},
               {"name", table.name},
               {"low", tier_json(table.low)},
               {"high", tier_json(table.high)},
               {"titration", rows}});
}

ProtocolTable parse_protocol(std::string_view text) {
  json doc = parse_document(text, kProtocolSchema);
  Reader r(doc, "");
  r.at("schema");
  ProtocolTable t;
  t.name = r.string("name");
  t.low = read_tier(r.at("low"), "low");
  t.high = read_tier(r.at("high"), "high");
  const json& rows = r.array("titration");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Reader row(rows[i], index_path("titration", i));
    ProtocolTable::Row out;
    const json& below = row.at("aptt_below");
    out.aptt_below = below.is_null() ? std::numeric_limits<double>::infinity()
                                     : Reader::to_number(below, row.sub("aptt_below"));
    out.bolus_per_kg = row.number("bolus_per_kg");
    out.rate_change_per_kg = row.number("rate_change_per_kg");
    out.hold_hours = row.number("hold_hours");
    row.finish();
    t.titration.push_back(out);
  }
  r.finish();
  try {
    t.validate();
  } catch (const ConfigError& e) {
    throw InvalidInput(std::string("protocol: ") + e.what());
  }
  return t;
}

// ---------------------------------------------------------------- files

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw InvalidInput("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace heparin

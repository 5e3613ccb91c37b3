#include "config.hpp"

#include <cstdlib>
#include <set>

#include "heparin/data_io.hpp"
#include "heparin/errors.hpp"
#include "json.hpp"

namespace heparin::app {

using json = nlohmann::json;

namespace {

/// Optional-field view of a config object; unknown keys are an error.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("expected an object");
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError((path_.empty() ? std::string("config") : path_) + ": " + what);
  }
  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* get(const std::string& key) {
    known_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  void number(const std::string& key, double& out) {
    if (const json* v = get(key)) {
      if (!v->is_number()) fail("'" + key + "' must be a number");
      out = v->get<double>();
    }
  }
  void count(const std::string& key, std::size_t& out) {
    if (const json* v = get(key)) {
      if (!v->is_number_integer() || v->get<long long>() < 0) {
        fail("'" + key + "' must be a nonnegative integer");
      }
      out = v->get<std::size_t>();
    }
  }
  void numbers(const std::string& key, std::vector<double>& out) {
    if (const json* v = get(key)) {
      if (!v->is_array()) fail("'" + key + "' must be an array");
      out.clear();
      for (const json& e : *v) {
        if (!e.is_number()) fail("'" + key + "' must hold numbers");
        out.push_back(e.get<double>());
      }
    }
  }
  void interval(const std::string& key, Interval& out) {
    if (const json* v = get(key)) {
      if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() || !(*v)[1].is_number()) {
        fail("'" + key + "' must be [lo, hi]");
      }
      out = {(*v)[0].get<double>(), (*v)[1].get<double>()};
    }
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!known_.count(it.key())) fail("unknown field '" + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

Domains read_domains(const json& j) {
  if (j.is_string()) {
    if (j == "synthetic") return Domains::synthetic_icu();
    if (j == "retrospective") return Domains{};
    throw ConfigError("domains: expected synthetic, retrospective, or an object");
  }
  Domains d = Domains::synthetic_icu();
  Fields f(j, "domains");
  f.numbers("alphas", d.alphas);
  f.number("alpha_floor", d.alpha_floor);
  f.interval("b", d.b);
  f.interval("k", d.k);
  f.number("y_max", d.y_max);
  f.number("x_max", d.x_max);
  f.number("u_max", d.u_max);
  f.finish();
  return d;
}

std::optional<LaplacePrior> read_prior_term(const json& j, const std::string& path) {
  if (j.is_null()) return std::nullopt;
  LaplacePrior p;
  Fields f(j, path);
  f.number("center", p.center);
  f.number("scale", p.scale);
  f.finish();
  return p;
}

}  // namespace

void AppConfig::validate() const {
  domains.validate();
  gammas.validate();
  prior.validate();
  loss.validate();
  protocol.validate();
  if (scenario_alphas.empty() || scenario_b_count == 0) {
    throw ConfigError("scenario grid must be nonempty");
  }
  for (double a : scenario_alphas) {
    if (!(a > domains.alpha_floor && a < 1.0)) throw ConfigError("scenario alpha outside (0, 1)");
  }
  if (horizon == 0 || horizon > max_horizon) throw ConfigError("horizon must be in 1..max_horizon");
  if (!(dose_step > 0.0)) throw ConfigError("dose_step must be positive");
  if (min_observations == 0) throw ConfigError("min_observations must be positive");
  if (!(planning_budget_seconds > 0.0)) throw ConfigError("planning budget must be positive");
}

EstimationConfig AppConfig::estimation() const {
  EstimationConfig c;
  c.domains = domains;
  c.gammas = gammas;
  c.prior = prior;
  c.workers = workers;
  return c;
}

std::vector<std::pair<double, double>> AppConfig::scenario_grid() const {
  return heparin::scenario_grid(scenario_alphas, scenario_b_count, domains);
}

PlanOptions AppConfig::plan_options(std::size_t n) const {
  PlanOptions o;
  o.horizon = n;
  o.dose_step = dose_step;
  return o;
}

AppConfig parse_app_config(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  AppConfig c;
  Fields f(doc, "");
  const json* schema = f.get("schema");
  if (!schema || *schema != kConfigSchema) {
    f.fail("schema must be " + std::string(kConfigSchema));
  }
  if (const json* d = f.get("domains")) c.domains = read_domains(*d);
  if (const json* g = f.get("gammas")) {
    Fields gf(*g, "gammas");
    gf.number("gamma1", c.gammas.gamma1);
    gf.number("gamma2", c.gammas.gamma2);
    gf.number("gamma3", c.gammas.gamma3);
    gf.number("gamma4", c.gammas.gamma4);
    gf.finish();
  }
  if (const json* p = f.get("prior")) {
    Fields pf(*p, "prior");
    const std::pair<const char*, std::optional<LaplacePrior>*> terms[] = {
        {"alpha", &c.prior.alpha}, {"k", &c.prior.k},     {"b", &c.prior.b},
        {"y0", &c.prior.y0},       {"yb0", &c.prior.yb0}, {"yb", &c.prior.yb}};
    for (auto [name, slot] : terms) {
      if (const json* t = pf.get(name)) *slot = read_prior_term(*t, pf.sub(name));
    }
    pf.finish();
  }
  f.numbers("scenario_alphas", c.scenario_alphas);
  f.count("scenario_b_count", c.scenario_b_count);
  if (const json* l = f.get("loss")) {
    Fields lf(*l, "loss");
    if (const json* kind = lf.get("kind")) {
      auto k = kind->is_string() ? parse_loss_kind(kind->get<std::string>()) : std::nullopt;
      if (!k) lf.fail("kind must be indicator, band or median");
      c.loss.kind = *k;
    }
    lf.number("w_sub", c.loss.w_sub);
    lf.number("w_super", c.loss.w_super);
    lf.finish();
  }
  f.count("horizon", c.horizon);
  f.count("max_horizon", c.max_horizon);
  f.number("dose_step", c.dose_step);
  f.count("min_observations", c.min_observations);
  f.number("planning_budget_seconds", c.planning_budget_seconds);
  if (const json* p = f.get("protocol")) {
    try {
      c.protocol = parse_protocol(p->dump());
    } catch (const InvalidInput& e) {
      f.fail(e.what());
    }
  }
  if (const json* dir = f.get("event_log_dir")) {
    if (!dir->is_null()) {
      if (!dir->is_string() || dir->get<std::string>().empty()) {
        f.fail("event_log_dir must be a path or null");
      }
      c.event_log_dir = std::filesystem::path(dir->get<std::string>());
    }
  }
  f.count("workers", c.workers);
  f.finish();
  c.validate();
  return c;
}

AppConfig load_app_config(const std::optional<std::filesystem::path>& explicit_path) {
  std::optional<std::filesystem::path> path = explicit_path;
  if (!path) {
    if (const char* env = std::getenv(kConfigEnv); env && *env) path = env;
  }
  if (!path) return AppConfig{};
  std::string text;
  try {
    text = read_text_file(*path);
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  return parse_app_config(text);
}

}  // namespace heparin::app

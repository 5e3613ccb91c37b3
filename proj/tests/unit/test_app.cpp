#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "commands.hpp"
#include "engine.hpp"
#include "heparin/errors.hpp"
#include "httplib.h"
#include "json.hpp"
#include "service.hpp"

using namespace heparin;
using namespace heparin::app;
using json = nlohmann::json;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("heparin-test-" + name + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

SyntheticPatient patient(std::uint64_t seed = 31) {
  SimulationConfig c;
  c.total_hours = 96;
  c.warmstart_hours = 72;
  return synth_cohort(1, seed, c)[0];
}

struct Client {
  Service& service;

  std::pair<int, json> call(const std::string& method, const std::string& path,
                            const json& body = nullptr,
                            std::map<std::string, std::string> query = {}) {
    Request r{method, path, std::move(query), body.is_null() ? "" : body.dump()};
    Response out = service.handle(r);
    if (out.content_type != "application/json") return {out.status, json(out.body)};
    return {out.status, json::parse(out.body)};
  }
};

/// Replays a synthetic warm start into a session: every dose, then readings.
std::string load_patient(Client& c, const SyntheticPatient& p, std::size_t max_readings = 1000) {
  auto [st, created] = c.call("POST", "/sessions",
                              {{"weight_kg", p.info.weight_kg},
                               {"bleed_risk", to_string(p.info.bleed_risk)}});
  REQUIRE(st == 201);
  const std::string id = created["id"];
  for (std::size_t i = 0; i < p.warmstart.doses.size(); ++i) {
    auto [s, _] = c.call("POST", "/sessions/" + id + "/doses",
                         {{"hour", i + 1}, {"dose", p.warmstart.doses[i]}});
    REQUIRE(s == 201);
  }
  for (std::size_t i = 0; i < p.warmstart.observations.size() && i < max_readings; ++i) {
    const auto& o = p.warmstart.observations[i];
    auto [s, _] = c.call("POST", "/sessions/" + id + "/observations",
                         {{"hour", o.hour}, {"aptt", o.aptt}});
    REQUIRE(s == 201);
  }
  return id;
}

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("config files override defaults and reject unknown fields") {
  AppConfig d;
  CHECK(d.domains.b.lo == Domains::synthetic_icu().b.lo);
  CHECK(d.scenario_grid().size() == 10);

  AppConfig c = parse_app_config(R"({"schema": "heparin.config/1", "horizon": 4,
      "loss": {"kind": "band"}, "scenario_b_count": 10, "domains": "retrospective",
      "prior": {"k": {"center": 1500, "scale": 300}}})");
  CHECK(c.horizon == 4);
  CHECK(c.loss.kind == LossKind::band_deviation);
  CHECK(c.scenario_grid().size() == 20);
  CHECK(c.domains.b.hi == Domains{}.b.hi);
  REQUIRE(c.prior.k.has_value());
  CHECK(c.prior.k->scale == 300);

  CHECK_THROWS_AS(parse_app_config(R"({"schema": "heparin.config/1", "horizn": 4})"), ConfigError);
  CHECK_THROWS_AS(parse_app_config(R"({"schema": "heparin.config/1", "loss": {"kind": "x"}})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_app_config(R"({"horizon": 4})"), ConfigError);
  CHECK_THROWS_AS(parse_app_config(R"({"schema": "heparin.config/1", "horizon": 0})"),
                  ConfigError);
  CHECK_THROWS_AS(parse_app_config("{"), ConfigError);
}

TEST_CASE("config path comes from the flag, then the environment") {
  auto dir = temp_dir("cfg");
  std::ofstream(dir / "a.json") << R"({"schema": "heparin.config/1", "horizon": 3})";
  std::ofstream(dir / "b.json") << R"({"schema": "heparin.config/1", "horizon": 5})";
  ::setenv(kConfigEnv, (dir / "b.json").c_str(), 1);
  CHECK(load_app_config(dir / "a.json").horizon == 3);
  CHECK(load_app_config(std::nullopt).horizon == 5);
  ::unsetenv(kConfigEnv);
  CHECK(load_app_config(std::nullopt).horizon == AppConfig{}.horizon);
  CHECK_THROWS_AS(load_app_config(dir / "missing.json"), ConfigError);
}

TEST_CASE("create, observe, recommend") {
  Service service{AppConfig{}};
  Client c{service};
  const SyntheticPatient p = patient();
  const std::string id = load_patient(c, p);

  auto [st, view] = c.call("GET", "/sessions/" + id);
  CHECK(st == 200);
  CHECK(view["schema"] == "heparin.session/1");
  CHECK(view["horizon"] == 72);
  CHECK(view["low_information"] == false);

  auto [rs, rec] = c.call("GET", "/sessions/" + id + "/recommendation", nullptr,
                          {{"horizon", "6"}, {"loss", "median"}});
  REQUIRE(rs == 200);
  CHECK(rec["schema"] == "heparin.recommendation/1");
  CHECK(rec["plan"]["doses"].size() == 6);
  CHECK(rec["plan"]["planning_time"] == 72);
  CHECK(rec["weights"].size() == 10);
  CHECK(rec["low_information"] == false);
  for (const auto& d : rec["plan"]["doses"]) CHECK(d.get<double>() >= 0.0);

  auto [es, est] = c.call("GET", "/sessions/" + id + "/estimate");
  CHECK(es == 200);
  CHECK(est["estimate"]["params"]["yb"].get<double>() > 0.0);
  CHECK(est["weights"].size() == 10);

  auto [as, audit] = c.call("GET", "/sessions/" + id + "/audit");
  CHECK(as == 200);
  CHECK(audit["events"].back()["type"] == "recommendation");
}

TEST_CASE("a served plan is reproduced offline from the exported chart") {
  Service service{AppConfig{}};
  Client c{service};
  const std::string id = load_patient(c, patient(44));
  auto [rs, rec] = c.call("GET", "/sessions/" + id + "/recommendation", nullptr,
                          {{"horizon", "6"}});
  REQUIRE(rs == 200);
  Response chart = service.handle({"GET", "/sessions/" + id + "/chart", {}, ""});
  REQUIRE(chart.status == 200);
  CHECK(chart.content_type == "text/csv");

  const std::string offline = dose_command(parse_chart_text(chart.body), "ptc-sg10", AppConfig{}.loss,
                                           6, AppConfig{}, std::nullopt);
  json plan = json::parse(offline);
  plan.erase("schema");
  CHECK(plan == rec["plan"]);
}

TEST_CASE("the low-information guard returns 422 before three readings") {
  Service service{AppConfig{}};
  Client c{service};
  const std::string id = load_patient(c, patient(), 2);
  auto [st, body] = c.call("GET", "/sessions/" + id + "/recommendation");
  CHECK(st == 422);
  CHECK(body["schema"] == "heparin.error/1");
  CHECK(body["fields"][0]["field"] == "observations");
  auto [vs, view] = c.call("GET", "/sessions/" + id);
  CHECK(view["low_information"] == true);
  // Prediction still works, flagged.
  auto [ts, traj] = c.call("GET", "/sessions/" + id + "/trajectory");
  CHECK(ts == 200);
  CHECK(traj["low_information"] == true);

  auto [s0, created] = c.call("POST", "/sessions", json::object());
  auto [s1, _] = c.call("GET", "/sessions/" + created["id"].get<std::string>() + "/trajectory");
  CHECK(s1 == 422);
}

TEST_CASE("error statuses: 400, 404, 409") {
  Service service{AppConfig{}};
  Client c{service};
  auto [cs, created] = c.call("POST", "/sessions", {{"id", "bed-4"}});
  REQUIRE(cs == 201);
  CHECK(created["id"] == "bed-4");
  CHECK(c.call("POST", "/sessions", {{"id", "bed-4"}}).first == 409);
  CHECK(c.call("POST", "/sessions", {{"id", "bad id!"}}).first == 400);

  CHECK(c.call("GET", "/sessions/nope").first == 404);
  CHECK(c.call("GET", "/sessions/bed-4/nothing").first == 404);
  CHECK(c.call("GET", "/elsewhere").first == 404);
  CHECK(c.call("DELETE", "/sessions/bed-4").first == 404);

  auto [bs, bad] = c.call("POST", "/sessions/bed-4/observations",
                          {{"hour", 0}, {"aptt", "high"}, {"note", 1}});
  CHECK(bs == 400);
  std::set<std::string> fields;
  for (const auto& f : bad["fields"]) fields.insert(f["field"].get<std::string>());
  CHECK(fields == std::set<std::string>{"hour", "aptt", "note"});
  Response raw = service.handle({"POST", "/sessions/bed-4/doses", {}, "{oops"});
  CHECK(raw.status == 400);
  CHECK(c.call("POST", "/sessions/bed-4/doses", {{"hour", 1}, {"dose", 1e9}}).first == 400);
  CHECK(c.call("GET", "/sessions/bed-4/recommendation", nullptr, {{"horizon", "x"}}).first == 400);
  CHECK(c.call("GET", "/sessions/bed-4/recommendation", nullptr, {{"horizon", "999"}}).first ==
        400);
  CHECK(c.call("GET", "/sessions/bed-4/recommendation", nullptr, {{"loss", "l2"}}).first == 400);

  CHECK(c.call("POST", "/sessions/bed-4/observations", {{"hour", 5}, {"aptt", 40}}).first == 201);
  CHECK(c.call("POST", "/sessions/bed-4/observations", {{"hour", 5}, {"aptt", 41}}).first == 409);
  CHECK(c.call("POST", "/sessions/bed-4/observations", {{"hour", 3}, {"aptt", 41}}).first == 409);
  CHECK(c.call("POST", "/sessions/bed-4/observations",
               {{"hour", 4}, {"aptt", 41}, {"supersedes", true}})
            .first == 409);
  CHECK(c.call("POST", "/sessions/bed-4/doses", {{"hour", 2}, {"dose", 100}}).first == 201);
  CHECK(c.call("POST", "/sessions/bed-4/doses", {{"hour", 1}, {"dose", 100}}).first == 409);
}

TEST_CASE("corrections supersede without rewriting history") {
  Service service{AppConfig{}};
  Client c{service};
  c.call("POST", "/sessions", {{"id", "p"}});
  c.call("POST", "/sessions/p/observations", {{"hour", 2}, {"aptt", 40}});
  c.call("POST", "/sessions/p/observations", {{"hour", 4}, {"aptt", 50}});
  auto [st, view] =
      c.call("POST", "/sessions/p/observations", {{"hour", 2}, {"aptt", 44}, {"supersedes", true}});
  CHECK(st == 201);
  CHECK(view["observations"] == json::array({json::array({2, 44.0}), json::array({4, 50.0})}));
  CHECK(view["reading_count"] == 2);
  auto [as, audit] = c.call("GET", "/sessions/p/audit");
  int readings = 0;
  for (const auto& e : audit["events"]) readings += e["type"] == "observation";
  CHECK(readings == 3);
}

TEST_CASE("what-if with zero doses equals the trajectory response") {
  Service service{AppConfig{}};
  Client c{service};
  const std::string id = load_patient(c, patient(5));
  auto [ts, traj] = c.call("GET", "/sessions/" + id + "/trajectory", nullptr, {{"horizon", "8"}});
  auto [ws, what] = c.call("POST", "/sessions/" + id + "/whatif",
                           {{"doses", std::vector<double>(8, 0.0)}});
  REQUIRE(ts == 200);
  REQUIRE(ws == 200);
  CHECK(traj["schema"] == "heparin.trajectory/1");
  CHECK(what["schema"] == "heparin.whatif/1");
  for (const char* key : {"scenarios", "weights", "mean", "low", "high", "therapeutic",
                          "expected_loss", "doses", "planning_time"}) {
    CHECK_MESSAGE(traj[key] == what[key], key);
  }
  for (std::size_t h = 0; h < 8; ++h) {
    CHECK(traj["low"][h].get<double>() <= traj["mean"][h].get<double>() + 1e-9);
    CHECK(traj["mean"][h].get<double>() <= traj["high"][h].get<double>() + 1e-9);
  }
  CHECK(c.call("POST", "/sessions/" + id + "/whatif", {{"doses", json::array()}}).first == 400);
  CHECK(c.call("POST", "/sessions/" + id + "/whatif", {{"doses", {-1}}}).first == 400);
}

TEST_CASE("what-if on the recommended plan reproduces its expected loss") {
  Service service{AppConfig{}};
  Client c{service};
  const std::string id = load_patient(c, patient(8));
  auto [rs, rec] = c.call("GET", "/sessions/" + id + "/recommendation");
  REQUIRE(rs == 200);
  auto [ws, what] =
      c.call("POST", "/sessions/" + id + "/whatif", {{"doses", rec["plan"]["doses"]}});
  REQUIRE(ws == 200);
  CHECK(what["expected_loss"].get<double>() ==
        doctest::Approx(rec["plan"]["expected_loss"].get<double>()).epsilon(1e-9));
}

TEST_CASE("an exhausted planning budget returns 503 with diagnostics") {
  AppConfig cfg;
  cfg.planning_budget_seconds = 1e-9;
  Service service{cfg};
  Client c{service};
  const std::string id = load_patient(c, patient());
  auto [st, body] = c.call("GET", "/sessions/" + id + "/recommendation");
  CHECK(st == 503);
  CHECK(body.contains("diagnostics"));
}

TEST_CASE("sessions are rebuilt from their event logs") {
  auto dir = temp_dir("events");
  AppConfig cfg;
  cfg.event_log_dir = dir;
  json before, audit_before, rec_before;
  {
    Service service{cfg};
    Client c{service};
    const std::string id = load_patient(c, patient(12));
    c.call("POST", "/sessions/" + id + "/observations",
           {{"hour", 72}, {"aptt", 55.5}, {"supersedes", true}});
    rec_before = c.call("GET", "/sessions/" + id + "/recommendation").second;
    before = c.call("GET", "/sessions/" + id).second;
    audit_before = c.call("GET", "/sessions/" + id + "/audit").second;
  }
  Service again{cfg};
  Client c{again};
  const std::string id = before["id"];
  CHECK(c.call("GET", "/sessions/" + id).second == before);
  CHECK(c.call("GET", "/sessions/" + id + "/audit").second == audit_before);
  // Same inputs, same plan.
  CHECK(c.call("GET", "/sessions/" + id + "/recommendation").second["plan"] == rec_before["plan"]);
  // New sessions do not collide with replayed ids.
  auto [st, created] = c.call("POST", "/sessions", json::object());
  CHECK(st == 201);
  CHECK(created["id"] != id);

  std::ofstream(dir / "broken.jsonl") << R"({"seq": 1, "type": "dose", "hour": 1})" << "\n";
  CHECK_THROWS_AS(Service{cfg}, InvalidInput);
}

TEST_CASE("concurrent sessions proceed independently") {
  Service service{AppConfig{}};
  std::vector<std::thread> threads;
  std::atomic<int> failures{0};
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      Client c{service};
      const std::string id = "t" + std::to_string(t);
      if (c.call("POST", "/sessions", {{"id", id}}).first != 201) ++failures;
      for (int h = 1; h <= 30; ++h) {
        if (c.call("POST", "/sessions/" + id + "/doses", {{"hour", h}, {"dose", 100.0 * t}}).first !=
            201) {
          ++failures;
        }
        if (c.call("GET", "/health").first != 200) ++failures;
      }
    });
  }
  for (auto& th : threads) th.join();
  CHECK(failures == 0);
  Client c{service};
  for (int t = 0; t < 8; ++t) {
    auto view = c.call("GET", "/sessions/t" + std::to_string(t)).second;
    CHECK(view["doses"] == std::vector<double>(30, 100.0 * t));
  }
}

TEST_CASE("the service answers over HTTP") {
  Service service{AppConfig{}};
  httplib::Server server;
  mount(server, service);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto health = client.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(health->get_header_value("Access-Control-Allow-Origin") == "*");
  auto created = client.Post("/sessions", R"({"id": "h1", "weight_kg": 80})", "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  auto obs = client.Post("/sessions/h1/observations", R"({"hour": 3, "aptt": 41.5})",
                         "application/json");
  CHECK(obs->status == 201);
  auto rec = client.Get("/sessions/h1/recommendation?horizon=4");
  CHECK(rec->status == 422);
  CHECK(client.Get("/sessions/zz")->status == 404);

  server.stop();
  th.join();
}

TEST_CASE("cli: estimate and dose are deterministic") {
  auto dir = temp_dir("cli");
  const SyntheticPatient p = patient(3);
  const std::string chart = (dir / "c.csv").string();
  write_text_file(chart, write_chart(chart_from_series(p.id, p.warmstart, p.info)));

  CliRun a = cli({"estimate", chart});
  CliRun b = cli({"estimate", chart, "--method", "benders"});
  REQUIRE(a.code == 0);
  json ea = json::parse(a.out), eb = json::parse(b.out);
  ea["diagnostics"].erase("wall_seconds");
  eb["diagnostics"].erase("wall_seconds");
  CHECK(ea == eb);
  CHECK(ea["schema"] == "heparin.estimate/1");

  CliRun d1 = cli({"dose", chart, "--policy", "ptc-sg10", "--horizon", "4"});
  CliRun d2 = cli({"dose", chart, "--policy", "ptc-sg10", "--horizon", "4"});
  REQUIRE(d1.code == 0);
  CHECK(d1.out == d2.out);
  CHECK(json::parse(d1.out)["doses"].size() == 4);
  for (const char* pol : {"ptc-sg20", "ptc-mle", "naive", "weight"}) {
    CliRun r = cli({"dose", chart, "--policy", pol, "--loss", "band"});
    CHECK_MESSAGE(r.code == 0, pol << r.err);
  }
  CHECK(cli({"estimate", chart, "--prior", "k=1500:300"}).code == 0);
  CHECK(cli({"estimate", chart, "--prior", "q=1:1"}).code == 2);

  std::string out = (dir / "plan.json").string();
  CHECK(cli({"dose", chart, "-o", out}).code == 0);
  CHECK(parse_plan_report(read_text_file(out)).doses.size() == 6);
}

TEST_CASE("cli: malformed charts exit nonzero with row numbers") {
  auto dir = temp_dir("cli-bad");
  const std::string chart = (dir / "bad.csv").string();
  write_text_file(chart, "hour,dose_iu,aptt_s\n1,100,30\n2,-1,\n2,0,40\n");
  CliRun r = cli({"dose", chart});
  CHECK(r.code == 2);
  json err = json::parse(r.err);
  CHECK(err["issues"][0]["line"] == 3);
  CHECK(err["issues"][1]["line"] == 4);
  CHECK(cli({"dose", (dir / "missing.csv").string()}).code == 2);
  CHECK(cli({"dose", chart, "--policy", "magic"}).code != 0);
  CHECK(cli({}).code != 0);
}

TEST_CASE("cli: simulate reports every requested policy and is seeded") {
  auto run = [] {
    return cli({"simulate", "--synthetic", "5", "--policies", "ptc-sg10,weight", "--seed", "7",
                "--replicates", "1", "--total-hours", "96"});
  };
  CliRun a = run(), b = run();
  REQUIRE(a.code == 0);
  CohortReport ra = parse_cohort_report(a.out), rb = parse_cohort_report(b.out);
  REQUIRE(ra.aggregates.size() == 2);
  CHECK(ra.aggregates[0].policy == "ptc-sg10");
  CHECK(ra.aggregates[1].policy == "weight");
  CHECK(ra.aggregates[0].episodes == 5);
  for (std::size_t i = 0; i < ra.episodes.size(); ++i) {
    CHECK(ra.episodes[i].time_in_control == rb.episodes[i].time_in_control);
    CHECK(ra.episodes[i].deviation == rb.episodes[i].deviation);
  }
  CHECK(cli({"simulate", "--policies", "zero"}).code == 2);
}

TEST_CASE("cli: cohort files feed simulate and evaluate") {
  auto dir = temp_dir("cli-cohort");
  const std::string cohort = (dir / "cohort.json").string();
  REQUIRE(cli({"cohort", "--synthetic", "3", "--seed", "5", "--total-hours", "96",
               "--warmstart-hours", "90", "-o", cohort})
              .code == 0);
  CliRun sim = cli({"simulate", cohort, "--policies", "zero", "--replicates", "1",
                    "--total-hours", "96", "--warmstart-hours", "90"});
  REQUIRE(sim.code == 0);
  CHECK(parse_cohort_report(sim.out).episodes.size() == 3);

  CliRun model = cli({"evaluate", cohort, "--epoch", "4"});
  CliRun persist = cli({"evaluate", cohort, "--predictor", "persistence"});
  REQUIRE(model.code == 0);
  REQUIRE(persist.code == 0);
  EvaluationReport m = parse_evaluation_report(model.out);
  double total = 0.0;
  for (const auto& row : m.confusion.fraction) {
    for (double f : row) total += f;
  }
  CHECK(total == doctest::Approx(1.0));

  // Without truth the labels come from the whole-record fit.
  auto entries = parse_cohort(read_text_file(cohort));
  for (auto& e : entries) e.truth.reset();
  write_text_file(cohort, write_cohort(entries));
  CHECK(cli({"evaluate", cohort}).code == 0);
  CHECK(cli({"simulate", cohort, "--policies", "zero"}).code == 2);
}

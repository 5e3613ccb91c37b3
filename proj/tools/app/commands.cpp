#include "commands.hpp"

#include <atomic>
#include <csignal>
#include <iostream>
#include <limits>
#include <thread>

#include "CLI11.hpp"
#include "engine.hpp"
#include "heparin/errors.hpp"
#include "httplib.h"
#include "json.hpp"
#include "service.hpp"

namespace heparin::app {

using json = nlohmann::json;

namespace {

void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
  } else {
    write_text_file(path, text);
  }
}

json error_json(const std::string& message, const std::vector<ValidationIssue>& issues = {}) {
  json list = json::array();
  for (const auto& i : issues) list.push_back({{"line", i.line}, {"message", i.message}});
  return {{"schema", "heparin.error/1"}, {"error", message}, {"issues", list}};
}

/// "name=center:scale" for one parameter's Laplace prior.
void apply_prior(PriorSpec& prior, const std::string& text) {
  const auto eq = text.find('='), colon = text.find(':');
  if (eq == std::string::npos || colon == std::string::npos || colon < eq) {
    throw ConfigError("prior must look like name=center:scale, got '" + text + "'");
  }
  const std::string name = text.substr(0, eq);
  LaplacePrior p;
  try {
    p.center = std::stod(text.substr(eq + 1, colon - eq - 1));
    p.scale = std::stod(text.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("prior '" + text + "' has a non-numeric center or scale");
  }
  std::optional<LaplacePrior>* slot = name == "alpha" ? &prior.alpha
                                      : name == "k"   ? &prior.k
                                      : name == "b"   ? &prior.b
                                      : name == "y0"  ? &prior.y0
                                      : name == "yb0" ? &prior.yb0
                                      : name == "yb"  ? &prior.yb
                                                      : nullptr;
  if (!slot) throw ConfigError("unknown prior parameter '" + name + "'");
  *slot = p;
}

PolicyContext policy_context(const AppConfig& config) {
  PolicyContext ctx;
  ctx.domains = config.domains;
  ctx.gammas = config.gammas;
  ctx.prior = config.prior;
  return ctx;
}

PolicySpec policy_spec(const std::string& name, const LossSpec& loss, const AppConfig& config) {
  PolicySpec spec = PolicySpec::parse(name);
  if (spec.kind == PolicyKind::ptc_sg) spec.scenario_alphas = config.scenario_alphas;
  spec.loss = loss;
  spec.horizon = config.horizon;
  spec.dose_step = config.dose_step;
  spec.protocol = config.protocol;
  return spec;
}

std::atomic<httplib::Server*> g_server{nullptr};

extern "C" void stop_server(int) {
  // httplib's stop() only flips a flag and shuts the listening socket.
  if (auto* s = g_server.load()) s->stop();
}

int serve(const AppConfig& config, const std::string& host, int port, std::ostream& out) {
  Service service(config);
  httplib::Server server;
  mount(server, service);
  const int bound = port == 0 ? server.bind_to_any_port(host) : (server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  out << "listening on http://" << host << ":" << bound << std::endl;
  g_server = &server;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  const bool ok = server.listen_after_bind();
  g_server = nullptr;
  return ok ? 0 : 1;
}

}  // namespace

std::string estimate_command(const ChartRecord& chart, EstimationMethod method,
                             const AppConfig& config, std::optional<double> noise_scale) {
  const ObservationSeries series = chart.series(noise_scale);
  return write_report(mle_estimate(series, method, config.estimation()));
}

std::string dose_command(const ChartRecord& chart, const std::string& policy,
                         const LossSpec& loss, std::size_t horizon, const AppConfig& config,
                         std::optional<double> noise_scale) {
  const ObservationSeries series = chart.series(noise_scale);
  const PolicySpec spec = policy_spec(policy, loss, config);
  if (spec.kind == PolicyKind::ptc_sg) {
    AppConfig c = config;
    c.scenario_b_count = spec.scenario_b_count;
    return write_report(recommend(series, c, horizon, loss).plan);
  }
  if (spec.kind == PolicyKind::ptc_mle) {
    const EstimateResult est = mle_estimate(series, EstimationMethod::benders, config.estimation());
    return write_report(plan_ptc_mle(est, series.doses, loss, config.plan_options(horizon),
                                     config.gammas, config.domains));
  }
  if (spec.kind != PolicyKind::naive && spec.kind != PolicyKind::weight_based) {
    throw ConfigError("policy '" + policy + "' cannot dose a chart");
  }
  auto p = make_policy(spec, policy_context(config));
  DosePlan plan;
  plan.planning_time = series.horizon();
  plan.doses = p->decide(series, chart.info(), horizon).doses;
  plan.doses.resize(horizon);
  plan.expected_loss = std::numeric_limits<double>::quiet_NaN();
  return write_report(plan);
}

std::string simulate_command(const std::vector<SyntheticPatient>& cohort,
                             const std::vector<std::string>& policies, const LossSpec& loss,
                             const SimulationConfig& sim, const AppConfig& config,
                             const ReportOptions& options) {
  std::vector<PolicySpec> specs;
  for (const auto& name : policies) specs.push_back(policy_spec(name, loss, config));
  return write_report(run_cohort(cohort, specs, sim, policy_context(config)), options);
}

std::string evaluate_command(const std::vector<CohortEntry>& cohort, Predictor predictor,
                             int epoch_hours, int min_history_hours, const AppConfig& config) {
  EvaluationConfig ec;
  ec.epoch_hours = epoch_hours;
  ec.min_history_hours = min_history_hours;
  ec.estimation = config.estimation();
  ec.validate();
  std::vector<LabelSeries> series;
  for (const CohortEntry& e : cohort) {
    double yb = 0.0;
    if (e.truth) {
      yb = e.truth->yb;
    } else {
      yb = mle_estimate(e.record, EstimationMethod::benders, ec.estimation).params.yb;
    }
    if (!(yb > 0.0)) throw EstimationFailed("no positive baseline for patient " + e.id);
    series.push_back(predictor == Predictor::model
                         ? model_label_series(e.id, e.record, yb, ec)
                         : persistence_label_series(e.id, e.record, yb, ec));
  }
  return write_report(evaluate(series));
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Personalized heparin dosing: estimation, planning, simulation, evaluation"};
  app.require_subcommand(1);

  std::string config_path, output;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file (else $HEPARIN_CONFIG)");
    sub->add_option("-o,--output", output, "write the report here instead of stdout");
  };

  std::string chart_path, method = "benders", policy = "ptc-sg10", loss_name;
  std::vector<std::string> priors;
  std::optional<double> noise_scale;
  std::size_t horizon = 0;

  auto* est = app.add_subcommand("estimate", "MAP estimate of a chart's patient parameters");
  est->add_option("chart", chart_path, "chart CSV")->required();
  est->add_option("--method", method, "grid or benders")->check(CLI::IsMember({"grid", "benders"}));
  est->add_option("--prior", priors, "Laplace prior name=center:scale (repeatable)");
  est->add_option("--noise-scale", noise_scale, "Laplace noise scale; estimated if absent");
  add_common(est);

  auto* dose = app.add_subcommand("dose", "dose plan for the hours after a chart");
  dose->add_option("chart", chart_path, "chart CSV")->required();
  dose->add_option("--policy", policy, "ptc-sg10, ptc-sg20, ptc-mle, naive or weight")
      ->check(CLI::IsMember({"ptc-sg10", "ptc-sg20", "ptc-mle", "naive", "weight"}));
  dose->add_option("--loss", loss_name, "median, band or indicator");
  dose->add_option("--horizon", horizon, "hours to plan");
  dose->add_option("--prior", priors, "Laplace prior name=center:scale (repeatable)");
  dose->add_option("--noise-scale", noise_scale, "Laplace noise scale; estimated if absent");
  add_common(dose);

  std::string cohort_path, noise_source = "estimate";
  std::vector<std::string> policies;
  std::size_t synthetic = 0;
  SimulationConfig sim;
  bool trajectories = false;
  auto* simulate = app.add_subcommand("simulate", "closed-loop simulation of a cohort");
  simulate->add_option("cohort", cohort_path, "cohort JSON with ground truth");
  simulate->add_option("--synthetic", synthetic, "generate this many synthetic patients");
  simulate->add_option("--policies", policies, "comma-separated policy names")
      ->delimiter(',')
      ->required();
  simulate->add_option("--seed", sim.seed, "seed for cohort generation and noise");
  simulate->add_option("--replicates", sim.replicates, "noise replicates per patient");
  simulate->add_option("--total-hours", sim.total_hours, "episode length");
  simulate->add_option("--warmstart-hours", sim.warmstart_hours, "hours replayed from the record");
  simulate->add_option("--interval", sim.replan_interval, "hours between planning cycles");
  simulate->add_option("--noise-source", noise_source, "estimate or known")
      ->check(CLI::IsMember({"estimate", "known"}));
  simulate->add_option("--workers", sim.workers, "episodes run in parallel");
  simulate->add_option("--loss", loss_name, "loss for the planning policies");
  simulate->add_flag("--trajectories", trajectories, "include per-episode trajectories");
  add_common(simulate);

  int epoch = 4, min_history = 24;
  std::string predictor = "model";
  auto* evaluate_cmd = app.add_subcommand("evaluate", "label-prediction ROC and confusion");
  evaluate_cmd->add_option("cohort", cohort_path, "cohort JSON")->required();
  evaluate_cmd->add_option("--epoch", epoch, "epoch length in hours");
  evaluate_cmd->add_option("--min-history", min_history, "hours of history before scoring");
  evaluate_cmd->add_option("--predictor", predictor, "model or persistence")
      ->check(CLI::IsMember({"model", "persistence"}));
  add_common(evaluate_cmd);

  auto* cohort_cmd = app.add_subcommand("cohort", "write a synthetic cohort file");
  cohort_cmd->add_option("--synthetic", synthetic, "number of patients")->required();
  cohort_cmd->add_option("--seed", sim.seed, "generator seed");
  cohort_cmd->add_option("--total-hours", sim.total_hours, "episode length the cohort is for");
  cohort_cmd->add_option("--warmstart-hours", sim.warmstart_hours, "record length");
  add_common(cohort_cmd);

  std::string host = "127.0.0.1";
  int port = 8080;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP/JSON recommendation service");
  serve_cmd->add_option("--port", port, "TCP port; 0 picks a free one");
  serve_cmd->add_option("--host", host, "address to bind");
  add_common(serve_cmd);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    AppConfig config =
        load_app_config(config_path.empty() ? std::nullopt
                                            : std::optional<std::filesystem::path>(config_path));
    for (const auto& p : priors) apply_prior(config.prior, p);
    config.prior.validate();
    LossSpec loss = config.loss;
    if (!loss_name.empty()) {
      auto kind = parse_loss_kind(loss_name);
      if (!kind) throw ConfigError("unknown loss '" + loss_name + "'");
      loss.kind = *kind;
    }
    if (horizon == 0) horizon = config.horizon;
    if (horizon > config.max_horizon) throw ConfigError("horizon exceeds max_horizon");

    if (*est) {
      emit(estimate_command(read_chart(chart_path),
                            method == "grid" ? EstimationMethod::grid : EstimationMethod::benders,
                            config, noise_scale),
           output, out);
    } else if (*dose) {
      emit(dose_command(read_chart(chart_path), policy, loss, horizon, config, noise_scale),
           output, out);
    } else if (*simulate) {
      sim.noise_scale_source =
          noise_source == "known" ? NoiseScaleSource::known : NoiseScaleSource::estimate;
      sim.domains = config.domains;
      sim.gammas = config.gammas;
      sim.validate();
      std::vector<SyntheticPatient> cohort;
      if (!cohort_path.empty() && synthetic > 0) {
        throw ConfigError("give either a cohort file or --synthetic, not both");
      }
      if (!cohort_path.empty()) {
        for (const auto& e : parse_cohort(read_text_file(cohort_path))) {
          cohort.push_back(e.synthetic());
        }
      } else if (synthetic > 0) {
        cohort = synth_cohort(synthetic, sim.seed, sim);
      } else {
        throw ConfigError("simulate needs a cohort file or --synthetic N");
      }
      ReportOptions opt;
      opt.trajectories = trajectories;
      emit(simulate_command(cohort, policies, loss, sim, config, opt), output, out);
    } else if (*evaluate_cmd) {
      emit(evaluate_command(parse_cohort(read_text_file(cohort_path)),
                            predictor == "model" ? Predictor::model : Predictor::persistence,
                            epoch, min_history, config),
           output, out);
    } else if (*cohort_cmd) {
      sim.domains = config.domains;
      sim.gammas = config.gammas;
      sim.validate();
      emit(write_cohort(synth_cohort(synthetic, sim.seed, sim)), output, out);
    } else if (*serve_cmd) {
      return serve(config, host, port, out);
    }
    return 0;
  } catch (const ValidationError& e) {
    err << error_json(e.what(), e.issues()).dump(2) << "\n";
    return 2;
  } catch (const InvalidInput& e) {
    err << error_json(e.what()).dump(2) << "\n";
    return 2;
  } catch (const ConfigError& e) {
    err << error_json(e.what()).dump(2) << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << error_json(e.what()).dump(2) << "\n";
    return 1;
  }
}

}  // namespace heparin::app

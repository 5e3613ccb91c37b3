#include "heparin/simulator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>
#include <tuple>

#include "heparin/errors.hpp"
#include "parallel.hpp"

namespace heparin {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::mt19937_64 episode_rng(std::uint64_t seed, std::string_view patient, std::size_t replicate) {
  const std::uint64_t h = stable_hash(patient);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                    static_cast<std::uint32_t>(replicate)};
  return std::mt19937_64(seq);
}

EstimationConfig estimation_config(const PolicyContext& ctx) {
  EstimationConfig c;
  c.domains = ctx.domains;
  c.gammas = ctx.gammas;
  c.prior = ctx.prior;
  c.workers = 1;
  return c;
}

PlanOptions plan_options(const PolicySpec& spec, std::size_t hours) {
  PlanOptions o;
  o.horizon = std::max(spec.horizon, hours);
  o.dose_step = spec.dose_step;
  o.mode = spec.plan_mode;
  if (spec.plan_mode == PlanMode::exact_small) o.exact_max_horizon = o.horizon;
  return o;
}

/// Remainder of the last plan after `used` hours, as a warm start.
std::vector<double> shifted(const std::vector<double>& plan, std::size_t used) {
  if (plan.size() <= used) return {};
  return {plan.begin() + static_cast<long>(used), plan.end()};
}

class PtcSgPolicy final : public Policy {
 public:
  PtcSgPolicy(PolicySpec spec, const PolicyContext& ctx)
      : spec_(std::move(spec)), ctx_(ctx), config_(estimation_config(ctx)),
        grid_(scenario_grid(spec_.scenario_alphas, spec_.scenario_b_count, ctx.domains)) {}

  PolicyDecision decide(const ObservationSeries& history, const PatientInfo&,
                        std::size_t hours) override {
    PolicyDecision d;
    auto t0 = Clock::now();
    const auto table = scenario_table(history, grid_, config_);
    d.predict_seconds = seconds_since(t0);
    t0 = Clock::now();
    auto options = plan_options(spec_, hours);
    options.previous = shifted(last_, hours);
    const auto plan = plan_ptc_sgm(table, history.doses, spec_.loss, options, ctx_.gammas,
                                   ctx_.domains);
    d.control_seconds = seconds_since(t0);
    last_ = plan.doses;
    d.doses = plan.doses;
    return d;
  }

 private:
  PolicySpec spec_;
  PolicyContext ctx_;
  EstimationConfig config_;
  std::vector<std::pair<double, double>> grid_;
  std::vector<double> last_;
};

class PtcMlePolicy final : public Policy {
 public:
  PtcMlePolicy(PolicySpec spec, const PolicyContext& ctx)
      : spec_(std::move(spec)), ctx_(ctx), config_(estimation_config(ctx)) {}

  PolicyDecision decide(const ObservationSeries& history, const PatientInfo&,
                        std::size_t hours) override {
    PolicyDecision d;
    auto t0 = Clock::now();
    const auto est = mle_estimate(history, spec_.estimation, config_);
    d.predict_seconds = seconds_since(t0);
    t0 = Clock::now();
    auto options = plan_options(spec_, hours);
    options.previous = shifted(last_, hours);
    const auto plan = plan_ptc_mle(est, history.doses, spec_.loss, options, ctx_.gammas,
                                   ctx_.domains);
    d.control_seconds = seconds_since(t0);
    last_ = plan.doses;
    d.doses = plan.doses;
    return d;
  }

 private:
  PolicySpec spec_;
  PolicyContext ctx_;
  EstimationConfig config_;
  std::vector<double> last_;
};

/// +/- a fixed step on the label of the latest reading against the band of
/// the estimated baseline.
class NaivePolicy final : public Policy {
 public:
  NaivePolicy(PolicySpec spec, const PolicyContext& ctx)
      : spec_(std::move(spec)), ctx_(ctx), config_(estimation_config(ctx)) {}

  PolicyDecision decide(const ObservationSeries& history, const PatientInfo&,
                        std::size_t hours) override {
    PolicyDecision d;
    const double last = history.doses.empty() ? 0.0 : history.doses.back();
    double next = last;
    auto t0 = Clock::now();
    if (!history.observations.empty()) {
      const auto est = mle_estimate(history, spec_.estimation, config_);
      d.predict_seconds = seconds_since(t0);
      t0 = Clock::now();
      // No band without a positive baseline; hold the rate.
      if (est.params.yb > 0.0) {
        next = naive_policy(last, label(history.observations.back().aptt, est.params.yb),
                            ctx_.domains.u_max, spec_.naive_step);
      }
    }
    d.control_seconds = seconds_since(t0);
    d.doses.assign(hours, next);
    return d;
  }

 private:
  PolicySpec spec_;
  PolicyContext ctx_;
  EstimationConfig config_;
};

class WeightBasedPolicy final : public Policy {
 public:
  WeightBasedPolicy(PolicySpec spec, const PolicyContext& ctx)
      : spec_(std::move(spec)), ctx_(ctx) {}

  PolicyDecision decide(const ObservationSeries& history, const PatientInfo& info,
                        std::size_t hours) override {
    PolicyDecision d;
    const auto t0 = Clock::now();
    std::optional<double> rate;
    if (!history.doses.empty()) rate = history.doses.back();
    std::optional<double> aptt;
    if (!history.observations.empty()) aptt = history.observations.back().aptt;
    const auto order =
        weight_based_policy(info.weight_kg, info.bleed_risk, aptt, rate, spec_.protocol,
                            ctx_.domains.u_max);
    d.doses = expand_protocol_dose(order, hours, ctx_.domains.u_max);
    d.control_seconds = seconds_since(t0);
    return d;
  }

 private:
  PolicySpec spec_;
  PolicyContext ctx_;
};

/// Plans with the true parameters; the ceiling for every other policy.
class OraclePolicy final : public Policy {
 public:
  OraclePolicy(PolicySpec spec, const PolicyContext& ctx) : spec_(std::move(spec)), ctx_(ctx) {
    if (!ctx.truth) throw ConfigError("oracle policy needs the true parameters");
    Scenario s;
    const auto& p = *ctx.truth;
    s.alpha = p.alpha;
    s.b = p.b;
    s.k = p.k;
    s.y0 = p.y0;
    s.yb0 = p.yb0;
    s.yb = p.yb;
    s.weight = s.raw_weight = 1.0;
    s.log_weight = 0.0;
    table_.scenarios.push_back(s);
  }

  PolicyDecision decide(const ObservationSeries& history, const PatientInfo&,
                        std::size_t hours) override {
    PolicyDecision d;
    const auto t0 = Clock::now();
    auto options = plan_options(spec_, hours);
    options.previous = shifted(last_, hours);
    const auto plan =
        plan_ptc_sgm(table_, history.doses, spec_.loss, options, ctx_.gammas, ctx_.domains);
    d.control_seconds = seconds_since(t0);
    last_ = plan.doses;
    d.doses = plan.doses;
    return d;
  }

 private:
  PolicySpec spec_;
  PolicyContext ctx_;
  ScenarioTable table_;
  std::vector<double> last_;
};

class ZeroPolicy final : public Policy {
 public:
  PolicyDecision decide(const ObservationSeries&, const PatientInfo&, std::size_t hours) override {
    PolicyDecision d;
    d.doses.assign(hours, 0.0);
    return d;
  }
};

}  // namespace

PolicySpec PolicySpec::parse(std::string_view name) {
  PolicySpec s;
  s.name = std::string(name);
  if (name == "ptc-sg10") {
    s.kind = PolicyKind::ptc_sg;
    s.scenario_b_count = 5;
  } else if (name == "ptc-sg20") {
    s.kind = PolicyKind::ptc_sg;
    s.scenario_b_count = 10;
  } else if (name == "ptc-mle") {
    s.kind = PolicyKind::ptc_mle;
  } else if (name == "naive") {
    s.kind = PolicyKind::naive;
  } else if (name == "weight" || name == "weight-based") {
    s.kind = PolicyKind::weight_based;
  } else if (name == "oracle") {
    s.kind = PolicyKind::oracle;
  } else if (name == "zero") {
    s.kind = PolicyKind::zero;
  } else {
    throw ConfigError("unknown policy '" + std::string(name) + "'");
  }
  return s;
}

void PolicySpec::validate() const {
  if (horizon == 0) throw ConfigError("policy horizon must be positive");
  if (!(dose_step > 0.0)) throw ConfigError("dose step must be positive");
  if (kind == PolicyKind::ptc_sg && (scenario_alphas.empty() || scenario_b_count == 0)) {
    throw ConfigError("scenario grid must be nonempty");
  }
  if (!(naive_step >= 0.0)) throw ConfigError("naive step must be nonnegative");
  loss.validate();
  if (kind == PolicyKind::weight_based) protocol.validate();
}

std::unique_ptr<Policy> make_policy(const PolicySpec& spec, const PolicyContext& context) {
  spec.validate();
  switch (spec.kind) {
    case PolicyKind::ptc_sg:
      return std::make_unique<PtcSgPolicy>(spec, context);
    case PolicyKind::ptc_mle:
      return std::make_unique<PtcMlePolicy>(spec, context);
    case PolicyKind::naive:
      return std::make_unique<NaivePolicy>(spec, context);
    case PolicyKind::weight_based:
      return std::make_unique<WeightBasedPolicy>(spec, context);
    case PolicyKind::oracle:
      return std::make_unique<OraclePolicy>(spec, context);
    case PolicyKind::zero:
      return std::make_unique<ZeroPolicy>();
  }
  throw ConfigError("unknown policy kind");
}

void SimulationConfig::validate() const {
  if (!(warmstart_hours > 0 && warmstart_hours < total_hours)) {
    throw ConfigError("warm start must be positive and shorter than the stay");
  }
  if (replan_interval <= 0 || (total_hours - warmstart_hours) % replan_interval != 0) {
    throw ConfigError("replan interval must divide the controlled hours");
  }
  if (replicates == 0) throw ConfigError("at least one replicate is required");
  domains.validate();
  gammas.validate();
}

EpisodeMetrics episode_metrics(const Trajectory& traj, int from_hour, double yb) {
  const auto band = therapeutic_range(yb);
  EpisodeMetrics m;
  std::size_t hours = 0, inside = 0, outside = 0;
  double dist = 0.0;
  for (std::size_t t = static_cast<std::size_t>(from_hour) + 1; t < traj.states.size(); ++t) {
    const double y = traj.states[t].y;
    ++hours;
    if (band.contains(y)) {
      ++inside;
    } else {
      ++outside;
      dist += band.distance(y);
    }
  }
  if (hours > 0) m.time_in_control = static_cast<double>(inside) / static_cast<double>(hours);
  if (outside > 0) m.deviation = dist / static_cast<double>(outside);
  return m;
}

EpisodeResult run_episode(const SyntheticPatient& patient, Policy& policy,
                          const std::string& policy_name, const SimulationConfig& config,
                          std::size_t replicate) {
  config.validate();
  if (patient.warmstart.horizon() < config.warmstart_hours) {
    throw InvalidInput("warm-start record is shorter than the warm-start window");
  }
  EpisodeResult r;
  r.patient_id = patient.id;
  r.policy = policy_name;
  r.replicate = replicate;
  auto rng = episode_rng(config.seed, patient.id, replicate);

  ObservationSeries seen = patient.warmstart.truncated(config.warmstart_hours);
  r.truth = simulate(patient.truth, config.gammas, seen.doses, config.domains);
  const auto hours = static_cast<std::size_t>(config.replan_interval);

  for (int c = 0; c < config.cycles(); ++c) {
    const int now = config.warmstart_hours + c * config.replan_interval;
    const double y = r.truth.states[static_cast<std::size_t>(now)].y;
    const double reading = std::max(0.0, sample_observation(y, patient.noise_scale, rng));
    if (seen.observations.empty() || seen.observations.back().hour < now) {
      seen.observations.push_back({now, reading});
    }
    seen.noise_scale = config.noise_scale_source == NoiseScaleSource::known
                           ? patient.noise_scale
                           : estimate_noise_scale(seen.observations);

    PolicyDecision d;
    try {
      d = policy.decide(seen, patient.info, hours);
      if (d.doses.size() < hours) throw PlanningFailed("policy returned too few doses");
      for (std::size_t i = 0; i < hours; ++i) {
        if (!(d.doses[i] >= 0.0 && d.doses[i] <= config.domains.u_max)) {
          throw PlanningFailed("policy dose outside [0, u_max]");
        }
      }
    } catch (const std::exception& e) {
      r.failed = true;
      r.error = e.what();
      break;
    }
    r.cycles.push_back({now, d.predict_seconds, d.control_seconds});
    for (std::size_t i = 0; i < hours; ++i) {
      const auto s = step(r.truth.states.back(), d.doses[i], patient.truth, config.gammas,
                          config.domains);
      r.truth.states.push_back(s.state);
      r.truth.clamped = r.truth.clamped || s.clamped;
      seen.doses.push_back(d.doses[i]);
    }
  }
  r.observed = std::move(seen);
  const auto m = episode_metrics(r.truth, config.warmstart_hours, patient.truth.yb);
  r.time_in_control = m.time_in_control;
  r.deviation = m.deviation;
  return r;
}

CohortReport aggregate(std::vector<EpisodeResult> episodes, const std::vector<std::string>& policies,
                       const std::vector<std::string>& patient_ids, const SimulationConfig& config) {
  auto index_of = [](const std::vector<std::string>& v, const std::string& s) {
    return static_cast<std::size_t>(std::find(v.begin(), v.end(), s) - v.begin());
  };
  auto key = [&](const EpisodeResult& e) {
    return std::make_tuple(index_of(policies, e.policy), index_of(patient_ids, e.patient_id),
                           e.replicate);
  };
  std::sort(episodes.begin(), episodes.end(),
            [&](const EpisodeResult& a, const EpisodeResult& b) { return key(a) < key(b); });

  CohortReport rep;
  rep.config = config;
  rep.policies = policies;
  for (const auto& name : policies) {
    PolicyAggregate a;
    a.policy = name;
    std::size_t cycles = 0;
    for (const auto& e : episodes) {
      if (e.policy != name) continue;
      if (e.failed) {
        ++a.failed;
        continue;
      }
      ++a.episodes;
      a.time_in_control += e.time_in_control;
      a.deviation += e.deviation;
      for (const auto& c : e.cycles) {
        ++cycles;
        a.predict_seconds += c.predict_seconds;
        a.control_seconds += c.control_seconds;
        a.max_cycle_seconds = std::max(a.max_cycle_seconds, c.predict_seconds + c.control_seconds);
      }
    }
    if (a.episodes > 0) {
      a.time_in_control /= static_cast<double>(a.episodes);
      a.deviation /= static_cast<double>(a.episodes);
    }
    if (cycles > 0) {
      a.predict_seconds /= static_cast<double>(cycles);
      a.control_seconds /= static_cast<double>(cycles);
    }
    rep.aggregates.push_back(a);

    for (const auto& id : patient_ids) {
      PatientAggregate p;
      p.patient_id = id;
      p.policy = name;
      for (const auto& e : episodes) {
        if (e.policy != name || e.patient_id != id || e.failed) continue;
        ++p.episodes;
        p.time_in_control += e.time_in_control;
        p.deviation += e.deviation;
      }
      if (p.episodes > 0) {
        p.time_in_control /= static_cast<double>(p.episodes);
        p.deviation /= static_cast<double>(p.episodes);
      }
      rep.patients.push_back(p);
    }
  }
  rep.episodes = std::move(episodes);
  return rep;
}

CohortReport run_cohort(const std::vector<SyntheticPatient>& cohort,
                        const std::vector<PolicySpec>& policies, const SimulationConfig& config,
                        const PolicyContext& context) {
  config.validate();
  if (cohort.empty()) throw InvalidInput("cohort is empty");
  if (policies.empty()) throw InvalidInput("no policies to run");
  std::vector<std::string> names, ids;
  for (const auto& p : policies) {
    p.validate();
    if (std::find(names.begin(), names.end(), p.name) != names.end()) {
      throw ConfigError("duplicate policy name '" + p.name + "'");
    }
    names.push_back(p.name);
  }
  for (const auto& p : cohort) ids.push_back(p.id);

  const std::size_t per_policy = cohort.size() * config.replicates;
  std::vector<EpisodeResult> results(policies.size() * per_policy);
  detail::parallel_for(results.size(), config.workers, [&](std::size_t i) {
    const auto& spec = policies[i / per_policy];
    const auto& patient = cohort[(i % per_policy) / config.replicates];
    const std::size_t rep = i % config.replicates;
    PolicyContext ctx = context;
    ctx.domains = config.domains;
    ctx.gammas = config.gammas;
    ctx.truth = patient.truth;
    auto policy = make_policy(spec, ctx);
    results[i] = run_episode(patient, *policy, spec.name, config, rep);
  });
  return aggregate(std::move(results), names, ids, config);
}

std::vector<SyntheticPatient> synth_cohort(std::size_t n, std::uint64_t seed,
                                           const SimulationConfig& config,
                                           const CohortRanges& ranges) {
  if (ranges.alphas.empty()) throw ConfigError("cohort alpha set is empty");
  if (ranges.spacing_min < 1 || ranges.spacing_max < ranges.spacing_min) {
    throw ConfigError("observation spacing range is invalid");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uniform = [&](const Interval& i) { return i.lo + (i.hi - i.lo) * u(rng); };
  auto round50 = [](double v) { return std::round(v / 50.0) * 50.0; };
  const auto& d = config.domains;
  const int T = config.warmstart_hours;

  std::vector<SyntheticPatient> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SyntheticPatient p;
    std::ostringstream id;
    id << "syn-" << seed << "-" << i;
    p.id = id.str();
    for (;;) {
      const double alpha = ranges.alphas[rng() % ranges.alphas.size()];
      const double b = ranges.b.lo * std::pow(ranges.b.hi / ranges.b.lo, u(rng));
      const double k = uniform(ranges.k);
      const double yb = uniform(ranges.yb);
      p.truth = {alpha, k, b, yb, yb, yb};
      p.info.weight_kg = std::round(uniform(ranges.weight_kg));
      // Bleed risk follows the homeostasis level: the top fraction of the yb range is high risk.
      const double cut = ranges.yb.hi - ranges.high_risk_fraction * ranges.yb.width();
      p.info.bleed_risk = yb >= cut ? BleedRisk::high : BleedRisk::low;
      p.noise_scale = uniform(ranges.noise_scale);

      std::vector<double> doses(static_cast<std::size_t>(T), 0.0);
      int t = 0;
      while (t < T) {
        const int len = 6 + static_cast<int>(rng() % 7);
        const double rate = std::min(d.u_max, round50((0.3 + 0.6 * u(rng)) * k));
        for (int h = t; h < std::min(T, t + len); ++h) doses[static_cast<std::size_t>(h)] = rate;
        t += len;
      }
      if (p.info.bleed_risk == BleedRisk::low) {
        doses[0] = std::min(d.u_max, doses[0] + round50(60.0 * p.info.weight_kg));
      }
      const auto traj = simulate(p.truth, config.gammas, doses, d);
      if (traj.clamped) continue;

      ObservationSeries s;
      s.doses = doses;
      s.noise_scale = p.noise_scale;
      int hour = ranges.spacing_min + static_cast<int>(rng() % static_cast<std::uint64_t>(
                                                               ranges.spacing_max - ranges.spacing_min + 1));
      while (hour <= T) {
        const double y = traj.states[static_cast<std::size_t>(hour)].y;
        const double reading = std::max(0.0, sample_observation(y, p.noise_scale, rng));
        if (u(rng) >= ranges.missing_fraction) s.observations.push_back({hour, reading});
        hour += ranges.spacing_min +
                static_cast<int>(rng() % static_cast<std::uint64_t>(ranges.spacing_max -
                                                                    ranges.spacing_min + 1));
      }
      if (s.observations.size() < 3) continue;
      p.warmstart = std::move(s);
      break;
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace heparin

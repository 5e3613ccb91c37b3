#include "heparin/dosing.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "heparin/errors.hpp"

namespace heparin {

const char* to_string(LossKind kind) {
  switch (kind) {
    case LossKind::indicator:
      return "indicator";
    case LossKind::band_deviation:
      return "band_deviation";
    case LossKind::median_deviation:
      return "median_deviation";
  }
  return "?";
}

std::optional<LossKind> parse_loss_kind(std::string_view name) {
  if (name == "indicator") return LossKind::indicator;
  if (name == "band" || name == "band_deviation") return LossKind::band_deviation;
  if (name == "median" || name == "median_deviation") return LossKind::median_deviation;
  return std::nullopt;
}

double LossSpec::operator()(double y, double yb) const {
  const auto band = therapeutic_range(yb);
  switch (kind) {
    case LossKind::indicator:
      if (y < band.low) return w_sub;
      if (y > band.high) return w_super;
      return 0.0;
    case LossKind::band_deviation:
      if (y < band.low) return w_sub * (band.low - y);
      if (y > band.high) return w_super * (y - band.high);
      return 0.0;
    case LossKind::median_deviation: {
      const double mid = 2.0 * yb;
      return y < mid ? w_sub * (mid - y) : w_super * (y - mid);
    }
  }
  return 0.0;
}

void LossSpec::validate() const {
  if (!(w_sub >= 0.0 && std::isfinite(w_sub)) || !(w_super >= 0.0 && std::isfinite(w_super))) {
    throw ConfigError("loss weights must be finite and nonnegative");
  }
}

double scenario_loss(const PatientParams& scenario, const std::vector<double>& past_doses,
                     const std::vector<double>& candidate, const LossSpec& loss,
                     const GlobalDecayRates& gammas, const Domains& domains) {
  std::vector<double> all = past_doses;
  all.insert(all.end(), candidate.begin(), candidate.end());
  const auto traj = simulate(scenario, gammas, all, domains);
  double total = 0.0;
  for (std::size_t t = past_doses.size() + 1; t < traj.states.size(); ++t) {
    total += loss(traj.states[t].y, scenario.yb);
  }
  return total;
}

std::vector<double> dose_levels(double step, double u_max) {
  if (!(step > 0.0) || !std::isfinite(step)) throw InvalidParameter("dose step must be positive");
  if (!(u_max >= 0.0)) throw InvalidParameter("u_max must be nonnegative");
  std::vector<double> out;
  for (std::size_t i = 0;; ++i) {
    const double v = static_cast<double>(i) * step;
    if (v > u_max * (1.0 + 1e-12)) break;
    out.push_back(std::min(v, u_max));
  }
  if (out.back() < u_max) out.push_back(u_max);
  return out;
}

namespace {

/// Scores candidate sequences against the cached states at the planning time.
class PlanObjective {
 public:
  PlanObjective(const ScenarioTable& table, const std::vector<double>& past, const LossSpec& loss,
                const GlobalDecayRates& gammas, const Domains& domains)
      : table_(table), loss_(loss), gammas_(gammas), domains_(domains) {
    // A fit with a zero baseline has no band to score against; it is dropped.
    auto usable = [](const Scenario& s) {
      return s.weight > 0.0 && std::isfinite(s.weight) && s.yb > 0.0;
    };
    double total = 0.0;
    for (const auto& s : table.scenarios) {
      if (usable(s)) total += s.weight;
    }
    if (!(total > 0.0)) throw PlanningFailed("scenario table has no usable positive weight");
    for (std::size_t i = 0; i < table.scenarios.size(); ++i) {
      const auto& s = table.scenarios[i];
      const double w = usable(s) ? s.weight / total : 0.0;
      weights_.push_back(w);
      // Zero-weight rows may be infeasible fits with no usable parameters.
      std::optional<PatientState> start;
      if (w > 0.0) {
        start = simulate(s.params(), gammas, past, domains).states.back();
        active_.push_back(i);
      } else {
        try {
          start = simulate(s.params(), gammas, past, domains).states.back();
        } catch (const InvalidParameter&) {
        }
      }
      starts_.push_back(start);
    }
  }

  double scenario(std::size_t i, const std::vector<double>& doses) const {
    const auto& s = table_.scenarios[i];
    if (!starts_[i] || !(s.yb > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    const auto params = s.params();
    PatientState st = *starts_[i];
    double total = 0.0;
    for (double u : doses) {
      st = step(st, u, params, gammas_, domains_).state;
      total += loss_(st.y, params.yb);
    }
    return total;
  }

  double operator()(const std::vector<double>& doses) const {
    ++evaluations_;
    double v = 0.0;
    for (std::size_t i : active_) v += weights_[i] * scenario(i, doses);
    return v;
  }

  const std::vector<double>& weights() const { return weights_; }
  std::size_t evaluations() const { return evaluations_; }

 private:
  const ScenarioTable& table_;
  LossSpec loss_;
  GlobalDecayRates gammas_;
  Domains domains_;
  std::vector<double> weights_;
  std::vector<std::optional<PatientState>> starts_;
  std::vector<std::size_t> active_;
  mutable std::size_t evaluations_ = 0;
};

bool close(double a, double b) { return std::abs(a - b) <= 1e-12 * (1.0 + std::abs(b)); }

/// Strictly better, or tied and lexicographically smaller.
bool preferred(double v, const std::vector<double>& seq, double best,
               const std::vector<double>& best_seq) {
  if (close(v, best)) return seq < best_seq;
  return v < best;
}

std::vector<double> exact_search(const PlanObjective& f, const std::vector<double>& levels,
                                 std::size_t n, double* value) {
  std::vector<std::size_t> idx(n, 0);
  std::vector<double> seq(n, levels[0]);
  std::vector<double> best_seq = seq;
  double best = f(seq);
  for (;;) {
    std::size_t pos = n;
    while (pos > 0) {
      --pos;
      if (++idx[pos] < levels.size()) break;
      idx[pos] = 0;
      if (pos == 0) {
        pos = n;
        break;
      }
    }
    if (pos == n) break;
    for (std::size_t i = 0; i < n; ++i) seq[i] = levels[idx[i]];
    const double v = f(seq);
    // Enumeration is lexicographic, so only a strict gain replaces.
    if (v < best && !close(v, best)) {
      best = v;
      best_seq = seq;
    }
  }
  *value = best;
  return best_seq;
}

/// Joint move over each pair of adjacent hours; true if the sequence changed.
bool pair_moves(const PlanObjective& f, const std::vector<double>& levels,
                std::vector<double>& seq, double& cur) {
  bool moved = false;
  for (std::size_t h = 0; h + 1 < seq.size(); ++h) {
    const std::array<double, 2> keep{seq[h], seq[h + 1]};
    std::array<double, 2> best_pair = keep;
    double best = cur;
    for (double a : levels) {
      for (double b : levels) {
        const std::array<double, 2> cand{a, b};
        if (cand == keep) continue;
        seq[h] = a;
        seq[h + 1] = b;
        const double v = f(seq);
        if (close(v, best) ? cand < best_pair : v < best) {
          best = v;
          best_pair = cand;
        }
      }
    }
    seq[h] = best_pair[0];
    seq[h + 1] = best_pair[1];
    if (best_pair != keep) {
      cur = best;
      moved = true;
    }
  }
  return moved;
}

/// Coordinate descent to a fixed point, then adjacent-pair moves; repeats
/// until neither changes the sequence.
std::vector<double> coordinate_descent(const PlanObjective& f, const std::vector<double>& levels,
                                       std::vector<double> seq, std::size_t max_sweeps,
                                       double* value) {
  double cur = f(seq);
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    bool moved = false;
    for (std::size_t h = 0; h < seq.size(); ++h) {
      const double keep = seq[h];
      double best_level = keep;
      double best = cur;
      for (double level : levels) {
        if (level == keep) continue;
        seq[h] = level;
        const double v = f(seq);
        if (close(v, best) ? level < best_level : v < best) {
          best = v;
          best_level = level;
        }
      }
      seq[h] = best_level;
      if (best_level != keep) {
        cur = best;
        moved = true;
      }
    }
    if (!moved && !pair_moves(f, levels, seq, cur)) break;
  }
  *value = cur;
  return seq;
}

double snap(double u, const std::vector<double>& levels) {
  const auto it = std::min_element(levels.begin(), levels.end(), [u](double a, double b) {
    return std::abs(a - u) < std::abs(b - u);
  });
  return *it;
}

}  // namespace

DosePlan plan_ptc_sgm(const ScenarioTable& table, const std::vector<double>& past_doses,
                      const LossSpec& loss, const PlanOptions& options,
                      const GlobalDecayRates& gammas, const Domains& domains) {
  if (table.scenarios.empty()) throw PlanningFailed("scenario table is empty");
  if (options.horizon == 0) throw InvalidParameter("planning horizon must be at least one hour");
  loss.validate();
  for (double u : past_doses) {
    if (!(u >= 0.0)) throw InvalidInput("past doses must be nonnegative");
  }
  const auto levels = dose_levels(options.dose_step, domains.u_max);
  const PlanObjective f(table, past_doses, loss, gammas, domains);
  const std::size_t n = options.horizon;

  double best = std::numeric_limits<double>::infinity();
  std::vector<double> best_seq;
  if (options.mode == PlanMode::exact_small) {
    if (n > options.exact_max_horizon || levels.size() > options.exact_max_levels) {
      throw InvalidParameter("exact planning is limited to small horizons and meshes");
    }
    best_seq = exact_search(f, levels, n, &best);
  } else {
    std::vector<std::vector<double>> starts{std::vector<double>(n, levels[0])};
    if (levels.size() > 1) starts.emplace_back(n, levels[1]);
    if (!options.previous.empty()) {
      std::vector<double> prev(n);
      for (std::size_t i = 0; i < n; ++i) {
        prev[i] = snap(options.previous[std::min(i, options.previous.size() - 1)], levels);
      }
      starts.push_back(std::move(prev));
    }
    for (const auto& s : starts) {
      double v = 0.0;
      auto seq = coordinate_descent(f, levels, s, options.max_sweeps, &v);
      if (best_seq.empty() || preferred(v, seq, best, best_seq)) {
        best = v;
        best_seq = std::move(seq);
      }
    }
  }

  DosePlan plan;
  plan.planning_time = static_cast<int>(past_doses.size());
  plan.doses = std::move(best_seq);
  plan.expected_loss = best;
  plan.weights = f.weights();
  for (std::size_t i = 0; i < table.scenarios.size(); ++i) {
    plan.scenario_losses.push_back(f.scenario(i, plan.doses));
  }
  plan.evaluations = f.evaluations();
  return plan;
}

DosePlan plan_ptc_mle(const EstimateResult& estimate, const std::vector<double>& past_doses,
                      const LossSpec& loss, const PlanOptions& options,
                      const GlobalDecayRates& gammas, const Domains& domains) {
  ScenarioTable table;
  Scenario s;
  s.alpha = estimate.params.alpha;
  s.b = estimate.params.b;
  s.k = estimate.params.k;
  s.y0 = estimate.params.y0;
  s.yb0 = estimate.params.yb0;
  s.yb = estimate.params.yb;
  s.log_weight = estimate.log_posterior;
  s.raw_weight = 1.0;
  s.weight = 1.0;
  table.scenarios.push_back(s);
  return plan_ptc_sgm(table, past_doses, loss, options, gammas, domains);
}

double naive_policy(double last_dose, RangeLabel label, double u_max, double step) {
  double next = last_dose;
  if (label == RangeLabel::sub) next += step;
  if (label == RangeLabel::super) next -= step;
  return std::clamp(next, 0.0, u_max);
}

const char* to_string(BleedRisk risk) { return risk == BleedRisk::low ? "low" : "high"; }

std::optional<BleedRisk> parse_bleed_risk(std::string_view name) {
  if (name == "low") return BleedRisk::low;
  if (name == "high") return BleedRisk::high;
  return std::nullopt;
}

ProtocolTable ProtocolTable::standard() {
  ProtocolTable t;
  const double inf = std::numeric_limits<double>::infinity();
  t.titration = {
      {40.0, 80.0, 4.0, 0.0},   // well below target: rebolus, +4 IU/kg/h
      {50.0, 40.0, 2.0, 0.0},   // below target
      {80.0, 0.0, 0.0, 0.0},    // target [50, 80) s: unchanged
      {95.0, 0.0, -2.0, 0.0},   // above target
      {inf, 0.0, -3.0, 1.0},    // well above: hold one hour, -3 IU/kg/h
  };
  return t;
}

void ProtocolTable::validate() const {
  auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
  for (const Tier* tier : {&low, &high}) {
    if (!finite_nonneg(tier->bolus_per_kg) || !finite_nonneg(tier->rate_per_kg)) {
      throw ConfigError("protocol tier doses must be finite and nonnegative");
    }
  }
  if (titration.empty()) throw ConfigError("protocol table has no titration rows");
  for (std::size_t i = 0; i < titration.size(); ++i) {
    const auto& r = titration[i];
    if (std::isnan(r.aptt_below) || (i > 0 && !(r.aptt_below > titration[i - 1].aptt_below))) {
      throw ConfigError("protocol titration thresholds must be strictly increasing");
    }
    if (!finite_nonneg(r.bolus_per_kg) || !finite_nonneg(r.hold_hours) ||
        !std::isfinite(r.rate_change_per_kg)) {
      throw ConfigError("protocol titration row has an invalid dose field");
    }
  }
  if (!std::isinf(titration.back().aptt_below)) {
    throw ConfigError("last protocol titration row must be open-ended");
  }
}

ProtocolDose weight_based_policy(double weight_kg, BleedRisk risk,
                                 std::optional<double> latest_aptt,
                                 std::optional<double> current_rate, const ProtocolTable& table,
                                 double u_max) {
  if (!(weight_kg > 0.0) || !std::isfinite(weight_kg)) {
    throw InvalidParameter("weight must be positive");
  }
  table.validate();
  const auto& tier = table.tier(risk);
  ProtocolDose d;
  if (!current_rate) {
    d.bolus = std::min(tier.bolus_per_kg * weight_kg, u_max);
    d.rate = std::min(tier.rate_per_kg * weight_kg, u_max);
    return d;
  }
  d.rate = std::clamp(*current_rate, 0.0, u_max);
  if (!latest_aptt) return d;
  const auto row = std::find_if(table.titration.begin(), table.titration.end(),
                                [&](const ProtocolTable::Row& r) { return *latest_aptt < r.aptt_below; });
  d.rate = std::clamp(d.rate + row->rate_change_per_kg * weight_kg, 0.0, u_max);
  if (tier.rebolus) d.bolus = std::min(row->bolus_per_kg * weight_kg, u_max);
  d.hold_hours = row->hold_hours;
  return d;
}

std::vector<double> expand_protocol_dose(const ProtocolDose& dose, std::size_t hours,
                                         double u_max) {
  std::vector<double> out(hours, std::clamp(dose.rate, 0.0, u_max));
  const auto hold = static_cast<std::size_t>(std::ceil(std::max(0.0, dose.hold_hours)));
  for (std::size_t i = 0; i < std::min(hold, hours); ++i) out[i] = 0.0;
  if (hold == 0 && hours > 0) out[0] = std::min(out[0] + dose.bolus, u_max);
  return out;
}

}  // namespace heparin

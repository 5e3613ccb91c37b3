#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "heparin/dosing.hpp"
#include "heparin/errors.hpp"

using namespace heparin;

namespace {

Scenario make_scenario(const PatientParams& p, double weight) {
  Scenario s;
  s.alpha = p.alpha;
  s.b = p.b;
  s.k = p.k;
  s.y0 = p.y0;
  s.yb0 = p.yb0;
  s.yb = p.yb;
  s.weight = weight;
  s.raw_weight = weight;
  s.log_weight = std::log(weight);
  return s;
}

PatientParams random_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto d = Domains::synthetic_icu();
  return {d.alphas[rng() % d.alphas.size()], 800 + 1700 * u(rng), 0.0015 * std::pow(4.0, u(rng)),
          25 + 15 * u(rng), 25 + 15 * u(rng), 25 + 15 * u(rng)};
}

std::vector<double> random_doses(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> d(n);
  for (auto& v : d) v = std::round(u(rng) * 30.0) * 50.0;
  return d;
}

/// Band classifier written out independently of LossSpec.
int outside_count(const Trajectory& traj, std::size_t from, double yb) {
  int c = 0;
  for (std::size_t t = from; t < traj.states.size(); ++t) {
    const double y = traj.states[t].y;
    if (y < 1.5 * yb || y > 2.5 * yb) ++c;
  }
  return c;
}

}  // namespace

TEST_SUITE("loss") {
  TEST_CASE("closed-form values") {
    const double yb = 30.0;
    const LossSpec median{LossKind::median_deviation};
    const LossSpec band{LossKind::band_deviation};
    const LossSpec ind{LossKind::indicator};
    CHECK(median(2.0 * yb, yb) == 0.0);
    CHECK(band(3.0 * yb, yb) == doctest::Approx(0.5 * yb));
    CHECK(band(2.0 * yb, yb) == 0.0);
    CHECK(band(yb, yb) == doctest::Approx(0.5 * yb));
    CHECK(ind(44.9, yb) == 1.0);
    CHECK(ind(45.0, yb) == 0.0);
    CHECK(ind(75.0, yb) == 0.0);
    CHECK(ind(75.1, yb) == 1.0);
    const LossSpec skew{LossKind::median_deviation, 2.0, 0.5};
    CHECK(skew(50.0, yb) == doctest::Approx(20.0));
    CHECK(skew(70.0, yb) == doctest::Approx(5.0));
  }

  TEST_CASE("band deviation is zero inside and grows outside") {
    const LossSpec band{LossKind::band_deviation};
    const LossSpec median{LossKind::median_deviation};
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
      const double yb = 25 + 15 * u(rng);
      const double y = 200 * u(rng);
      const double b = band(y, yb);
      if (y >= 1.5 * yb && y <= 2.5 * yb) CHECK(b == 0.0);
      if (y > 2.5 * yb) CHECK(band(y + 1.0, yb) > b);
      if (y < 1.5 * yb && y >= 1.0) CHECK(band(y - 1.0, yb) > b);
      // Distance to the median exceeds distance to the band by at most half
      // the band width.
      CHECK(median(y, yb) >= b);
      CHECK(median(y, yb) <= b + 0.5 * yb + 1e-12);
    }
  }

  TEST_CASE("names and validation") {
    CHECK(parse_loss_kind("median") == LossKind::median_deviation);
    CHECK(parse_loss_kind("band_deviation") == LossKind::band_deviation);
    CHECK(parse_loss_kind("indicator") == LossKind::indicator);
    CHECK_FALSE(parse_loss_kind("l2").has_value());
    CHECK(std::string(to_string(LossKind::band_deviation)) == "band_deviation");
    CHECK_THROWS_AS((LossSpec{LossKind::indicator, -1.0, 1.0}.validate()), ConfigError);
  }
}

TEST_SUITE("scenario loss") {
  TEST_CASE("resting patient incurs the distance to the band every hour") {
    const PatientParams p{0.63, 1200, 0.003, 30, 30, 30};
    const std::vector<double> zeros(6, 0.0);
    const auto d = Domains::synthetic_icu();
    CHECK(scenario_loss(p, {}, zeros, {LossKind::median_deviation}, {}, d) ==
          doctest::Approx(6 * 30.0));
    CHECK(scenario_loss(p, {}, zeros, {LossKind::band_deviation}, {}, d) ==
          doctest::Approx(6 * 15.0));
    CHECK(scenario_loss(p, {}, zeros, {LossKind::indicator}, {}, d) == 6.0);
  }

  TEST_CASE("indicator loss counts hours outside the band") {
    std::mt19937_64 rng(2);
    const auto d = Domains::synthetic_icu();
    for (int i = 0; i < 200; ++i) {
      const auto p = random_params(rng);
      const auto past = random_doses(rng, 24);
      const auto cand = random_doses(rng, 6);
      std::vector<double> all = past;
      all.insert(all.end(), cand.begin(), cand.end());
      const auto traj = simulate(p, {}, all, d);
      CHECK(scenario_loss(p, past, cand, {LossKind::indicator}, {}, d) ==
            outside_count(traj, past.size() + 1, p.yb));
    }
  }
}

TEST_SUITE("planner") {
  TEST_CASE("dose levels") {
    CHECK(dose_levels(1000, 3000) == std::vector<double>{0, 1000, 2000, 3000});
    CHECK(dose_levels(700, 3000) == std::vector<double>{0, 700, 1400, 2100, 2800, 3000});
    CHECK(dose_levels(100, 3000).size() == 31);
    CHECK_THROWS_AS(dose_levels(0, 3000), InvalidParameter);
  }

  TEST_CASE("patient that stays in band without heparin gets no heparin") {
    const auto d = Domains::synthetic_icu();
    ScenarioTable t;
    t.scenarios.push_back(make_scenario({0.63, 1200, 0.003, 60, 60, 30}, 1.0));
    PlanOptions o;
    o.horizon = 2;
    for (auto mode : {PlanMode::mesh_search, PlanMode::exact_small}) {
      o.mode = mode;
      o.dose_step = mode == PlanMode::exact_small ? 500 : 100;
      const auto plan = plan_ptc_sgm(t, {}, {LossKind::indicator}, o, {}, d);
      CHECK(plan.doses == std::vector<double>{0, 0});
      CHECK(plan.expected_loss == 0.0);
    }
  }

  TEST_CASE("plan bookkeeping matches the reference rollout") {
    std::mt19937_64 rng(3);
    const auto d = Domains::synthetic_icu();
    for (int i = 0; i < 20; ++i) {
      ScenarioTable t;
      double total = 0.0;
      for (int s = 0; s < 4; ++s) {
        const double w = 0.1 + (rng() % 10);
        total += w;
        t.scenarios.push_back(make_scenario(random_params(rng), w));
      }
      const auto past = random_doses(rng, 48);
      const LossSpec loss{static_cast<LossKind>(i % 3)};
      const auto plan = plan_ptc_sgm(t, past, loss, {}, {}, d);
      REQUIRE(plan.doses.size() == 6);
      double expected = 0.0;
      for (std::size_t s = 0; s < t.scenarios.size(); ++s) {
        const double ref = scenario_loss(t.scenarios[s].params(), past, plan.doses, loss, {}, d);
        CHECK(plan.scenario_losses[s] == doctest::Approx(ref).epsilon(1e-12));
        CHECK(plan.weights[s] == doctest::Approx(t.scenarios[s].weight / total).epsilon(1e-12));
        expected += plan.weights[s] * ref;
      }
      CHECK(plan.expected_loss == doctest::Approx(expected).epsilon(1e-9));
      for (double u : plan.doses) {
        CHECK(u >= 0.0);
        CHECK(u <= d.u_max);
      }
    }
  }

  TEST_CASE("mesh search against exhaustive enumeration") {
    std::mt19937_64 rng(4);
    const auto d = Domains::synthetic_icu();
    int identical = 0;
    double worst = 0.0;
    const int instances = 50;
    for (int i = 0; i < instances; ++i) {
      ScenarioTable t;
      const int m = 1 + static_cast<int>(rng() % 4);
      for (int s = 0; s < m; ++s) t.scenarios.push_back(make_scenario(random_params(rng), 1.0 + s));
      const auto past = random_doses(rng, 24 + rng() % 48);
      const LossSpec loss{static_cast<LossKind>(i % 3)};
      PlanOptions o;
      o.horizon = 2 + i % 3;
      o.dose_step = 500;
      o.mode = PlanMode::exact_small;
      const auto exact = plan_ptc_sgm(t, past, loss, o, {}, d);
      o.mode = PlanMode::mesh_search;
      const auto mesh = plan_ptc_sgm(t, past, loss, o, {}, d);
      CHECK(mesh.expected_loss >= exact.expected_loss - 1e-9 * (1.0 + exact.expected_loss));
      if (std::abs(mesh.expected_loss - exact.expected_loss) <= 1e-9 * (1.0 + exact.expected_loss)) {
        ++identical;
      } else {
        worst = std::max(worst, mesh.expected_loss / exact.expected_loss - 1.0);
      }
    }
    std::printf("mesh vs exact: identical %d/%d, worst excess %.4f\n", identical, instances, worst);
    CHECK(identical >= 45);
    CHECK(worst <= 0.05);
  }

  TEST_CASE("zero-weight scenarios do not influence the plan") {
    std::mt19937_64 rng(5);
    const auto d = Domains::synthetic_icu();
    const auto past = random_doses(rng, 36);
    const auto a = random_params(rng);
    const auto b = random_params(rng);
    ScenarioTable both;
    both.scenarios = {make_scenario(a, 1.0), make_scenario(b, 0.0)};
    ScenarioTable only;
    only.scenarios = {make_scenario(a, 1.0)};
    const auto p1 = plan_ptc_sgm(both, past, {}, {}, {}, d);
    const auto p2 = plan_ptc_sgm(only, past, {}, {}, {}, d);
    CHECK(p1.doses == p2.doses);
    CHECK(p1.expected_loss == p2.expected_loss);
    CHECK(p1.scenario_losses.size() == 2);
  }

  TEST_CASE("rows with a zero baseline are ignored even with positive weight") {
    std::mt19937_64 rng(6);
    const auto d = Domains::synthetic_icu();
    const auto past = random_doses(rng, 36);
    const auto a = random_params(rng);
    auto flat = random_params(rng);
    flat.yb = 0.0;
    flat.yb0 = 0.0;
    ScenarioTable both;
    both.scenarios = {make_scenario(a, 0.9), make_scenario(flat, 0.1)};
    ScenarioTable only;
    only.scenarios = {make_scenario(a, 1.0)};
    const auto p1 = plan_ptc_sgm(both, past, {}, {}, {}, d);
    const auto p2 = plan_ptc_sgm(only, past, {}, {}, {}, d);
    CHECK(p1.doses == p2.doses);
    CHECK(p1.weights[0] == 1.0);
    CHECK(std::isnan(p1.scenario_losses[1]));

    ScenarioTable none;
    none.scenarios = {make_scenario(flat, 1.0)};
    CHECK_THROWS_AS(plan_ptc_sgm(none, past, {}, {}, {}, d), PlanningFailed);
  }

  TEST_CASE("objective collapses to the dominant scenario's loss") {
    std::mt19937_64 rng(6);
    const auto d = Domains::synthetic_icu();
    const auto past = random_doses(rng, 36);
    const auto a = random_params(rng);
    const auto b = random_params(rng);
    const std::vector<double> cand{600, 600, 600, 600, 600, 600};
    const double la = scenario_loss(a, past, cand, {}, {}, d);
    const double lb = scenario_loss(b, past, cand, {}, {}, d);
    double prev_gap = std::numeric_limits<double>::infinity();
    for (double eps : {0.5, 0.1, 0.01, 0.001}) {
      // A one-hour horizon pins the candidate; each plan scores its own dose,
      // so evaluate the weighted sum at a fixed candidate directly.
      const double mix = (1.0 - eps) * la + eps * lb;
      const double gap = std::abs(mix - la);
      CHECK(gap <= prev_gap);
      prev_gap = gap;
    }
    CHECK(prev_gap <= 0.001 * std::abs(lb - la) + 1e-12);
  }

  TEST_CASE("planning is deterministic and rejects empty tables") {
    std::mt19937_64 rng(7);
    const auto d = Domains::synthetic_icu();
    ScenarioTable t;
    for (int s = 0; s < 5; ++s) t.scenarios.push_back(make_scenario(random_params(rng), 1.0));
    const auto past = random_doses(rng, 30);
    PlanOptions o;
    o.previous = {450, 800, 1210};
    const auto p1 = plan_ptc_sgm(t, past, {}, o, {}, d);
    const auto p2 = plan_ptc_sgm(t, past, {}, o, {}, d);
    CHECK(p1.doses == p2.doses);
    CHECK(p1.expected_loss == p2.expected_loss);
    CHECK_THROWS_AS(plan_ptc_sgm({}, past, {}, o, {}, d), PlanningFailed);
    ScenarioTable dead = t;
    for (auto& s : dead.scenarios) s.weight = 0.0;
    CHECK_THROWS_AS(plan_ptc_sgm(dead, past, {}, o, {}, d), PlanningFailed);
    o.mode = PlanMode::exact_small;
    CHECK_THROWS_AS(plan_ptc_sgm(t, past, {}, o, {}, d), InvalidParameter);
    o = {};
    o.horizon = 0;
    CHECK_THROWS_AS(plan_ptc_sgm(t, past, {}, o, {}, d), InvalidParameter);
  }

  TEST_CASE("warm start from a previous plan never hurts") {
    std::mt19937_64 rng(8);
    const auto d = Domains::synthetic_icu();
    for (int i = 0; i < 10; ++i) {
      ScenarioTable t;
      for (int s = 0; s < 3; ++s) t.scenarios.push_back(make_scenario(random_params(rng), 1.0));
      const auto past = random_doses(rng, 30);
      PlanOptions o;
      const auto cold = plan_ptc_sgm(t, past, {}, o, {}, d);
      o.previous = cold.doses;
      const auto warm = plan_ptc_sgm(t, past, {}, o, {}, d);
      CHECK(warm.expected_loss <= cold.expected_loss + 1e-12 * (1.0 + cold.expected_loss));
    }
  }

  TEST_CASE("MLE planning equals the singleton table") {
    std::mt19937_64 rng(9);
    const auto d = Domains::synthetic_icu();
    const auto p = random_params(rng);
    EstimateResult est;
    est.params = p;
    est.log_posterior = -12.0;
    ScenarioTable t;
    t.scenarios.push_back(make_scenario(p, 1.0));
    const auto past = random_doses(rng, 30);
    const auto a = plan_ptc_mle(est, past, {}, {}, {}, d);
    const auto b = plan_ptc_sgm(t, past, {}, {}, {}, d);
    CHECK(a.doses == b.doses);
    CHECK(a.expected_loss == b.expected_loss);
  }

  TEST_CASE("two-mode posterior plan differs from the plan at one mode") {
    const auto d = Domains::synthetic_icu();
    // Same history, response coefficients four times apart, equal weight.
    const PatientParams weak{0.63, 1500, 0.0015, 30, 30, 30};
    const PatientParams strong{0.63, 1500, 0.006, 30, 30, 30};
    const std::vector<double> past(24, 500.0);
    ScenarioTable mix;
    mix.scenarios = {make_scenario(weak, 0.5), make_scenario(strong, 0.5)};
    EstimateResult mle;
    mle.params = weak;
    const auto sg = plan_ptc_sgm(mix, past, {}, {}, {}, d);
    const auto ml = plan_ptc_mle(mle, past, {}, {}, {}, d);
    CHECK(sg.doses != ml.doses);
    const double ml_mix = 0.5 * scenario_loss(weak, past, ml.doses, {}, {}, d) +
                          0.5 * scenario_loss(strong, past, ml.doses, {}, {}, d);
    CHECK(sg.expected_loss < ml_mix);
  }
}

TEST_SUITE("baseline policies") {
  TEST_CASE("naive titration") {
    CHECK(naive_policy(500, RangeLabel::sub, 3000) == 700);
    CHECK(naive_policy(100, RangeLabel::super, 3000) == 0);
    CHECK(naive_policy(500, RangeLabel::therapeutic, 3000) == 500);
    CHECK(naive_policy(2900, RangeLabel::sub, 3000) == 3000);
  }

  TEST_CASE("weight-based initial order") {
    const auto table = ProtocolTable::standard();
    const auto low = weight_based_policy(70, BleedRisk::low, std::nullopt, std::nullopt, table, 3000);
    CHECK(low.bolus == 3000);  // 80 IU/kg = 5600 IU, capped
    CHECK(low.rate == doctest::Approx(18 * 70));
    const auto uncapped = weight_based_policy(70, BleedRisk::low, std::nullopt, std::nullopt, table, 1e9);
    CHECK(uncapped.bolus == doctest::Approx(5600));
    const auto high = weight_based_policy(70, BleedRisk::high, std::nullopt, std::nullopt, table, 3000);
    CHECK(high.bolus == 0);
    CHECK(high.rate == doctest::Approx(12 * 70));
  }

  TEST_CASE("weight-based titration rows") {
    const auto table = ProtocolTable::standard();
    const auto in_band = weight_based_policy(70, BleedRisk::low, 65.0, 1260.0, table, 3000);
    CHECK(in_band.rate == 1260);
    CHECK(in_band.bolus == 0);
    CHECK(in_band.hold_hours == 0);
    const auto far_above = weight_based_policy(70, BleedRisk::low, 120.0, 1260.0, table, 3000);
    CHECK(far_above.rate == doctest::Approx(1260 - 3 * 70));
    CHECK(far_above.hold_hours == 1.0);
    const auto above = weight_based_policy(70, BleedRisk::low, 85.0, 1260.0, table, 3000);
    CHECK(above.rate == doctest::Approx(1260 - 2 * 70));
    const auto far_below = weight_based_policy(70, BleedRisk::low, 30.0, 1260.0, table, 3000);
    CHECK(far_below.bolus == doctest::Approx(80 * 70 > 3000 ? 3000 : 80 * 70));
    CHECK(far_below.rate == doctest::Approx(1260 + 4 * 70));
    const auto high_risk = weight_based_policy(70, BleedRisk::high, 30.0, 840.0, table, 3000);
    CHECK(high_risk.bolus == 0);
    CHECK(high_risk.rate == doctest::Approx(840 + 4 * 70));
    const auto floor = weight_based_policy(70, BleedRisk::low, 200.0, 100.0, table, 3000);
    CHECK(floor.rate == 0);
  }

  TEST_CASE("protocol expansion and validation") {
    CHECK(expand_protocol_dose({3000, 1260, 0}, 6, 3000) ==
          std::vector<double>{3000, 1260, 1260, 1260, 1260, 1260});
    CHECK(expand_protocol_dose({500, 1000, 0}, 3, 3000) == std::vector<double>{1500, 1000, 1000});
    CHECK(expand_protocol_dose({0, 1050, 1}, 3, 3000) == std::vector<double>{0, 1050, 1050});
    auto t = ProtocolTable::standard();
    CHECK_NOTHROW(t.validate());
    t.titration.back().aptt_below = 500;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = ProtocolTable::standard();
    std::swap(t.titration[0], t.titration[1]);
    CHECK_THROWS_AS(t.validate(), ConfigError);
    t = ProtocolTable::standard();
    t.low.rate_per_kg = -1;
    CHECK_THROWS_AS(t.validate(), ConfigError);
    CHECK_THROWS_AS(weight_based_policy(0, BleedRisk::low, std::nullopt, std::nullopt,
                                        ProtocolTable::standard(), 3000),
                    InvalidParameter);
    CHECK(parse_bleed_risk("high") == BleedRisk::high);
    CHECK_FALSE(parse_bleed_risk("medium").has_value());
  }
}

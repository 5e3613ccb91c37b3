// Hot paths of one planning cycle: rollout, profile LP, MAP search,
// scenario weighting and dose search.
#include <benchmark/benchmark.h>

#include "heparin/dosing.hpp"
#include "heparin/dynamics.hpp"
#include "heparin/estimation.hpp"
#include "synthetic.hpp"

using namespace heparin;

namespace {

EstimationConfig icu_config() {
  EstimationConfig c;
  c.domains = Domains::synthetic_icu();
  c.workers = 1;
  return c;
}

ObservationSeries record(int hours, int every) {
  const auto truth = testsupport::truth_params(0.630, 1400.0, 0.003, 30.0);
  return testsupport::make_series(truth, testsupport::excitation_doses(hours, 11), every, 2.0, 12,
                                  Domains::synthetic_icu());
}

}  // namespace

static void BM_mm_exact(benchmark::State& state) {
  double t = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(mm_exact(500.0, 1500.0, 8000.0, t));
    t = t > 40.0 ? 0.0 : t + 0.37;
  }
}
BENCHMARK(BM_mm_exact);

static void BM_simulate(benchmark::State& state) {
  const auto doses = testsupport::excitation_doses(static_cast<int>(state.range(0)), 3);
  const auto p = testsupport::truth_params(0.630, 1400.0, 0.003, 30.0);
  const auto d = Domains::synthetic_icu();
  for (auto _ : state) benchmark::DoNotOptimize(simulate(p, {}, doses, d));
}
BENCHMARK(BM_simulate)->Arg(48)->Arg(240);

static void BM_profile_fit(benchmark::State& state) {
  const auto s = record(static_cast<int>(state.range(0)), 4);
  const auto cfg = icu_config();
  ProfileEvaluator ev(s, cfg.domains, cfg.gammas);
  for (auto _ : state) benchmark::DoNotOptimize(ev.fit(0.630, 1400.0, 0.003));
}
BENCHMARK(BM_profile_fit)->Arg(72)->Arg(240);

static void BM_map_benders(benchmark::State& state) {
  const auto s = record(static_cast<int>(state.range(0)), 4);
  const auto cfg = icu_config();
  for (auto _ : state) benchmark::DoNotOptimize(mle_estimate(s, EstimationMethod::benders, cfg));
}
BENCHMARK(BM_map_benders)->Arg(72)->Arg(240)->Unit(benchmark::kMillisecond);

static void BM_map_grid(benchmark::State& state) {
  const auto s = record(72, 4);
  const auto cfg = icu_config();
  for (auto _ : state) benchmark::DoNotOptimize(mle_estimate(s, EstimationMethod::grid, cfg));
}
BENCHMARK(BM_map_grid)->Unit(benchmark::kMillisecond);

static void BM_scenario_table(benchmark::State& state) {
  const auto s = record(240, 4);
  const auto cfg = icu_config();
  const auto grid = scenario_grid({0.500, 0.707}, static_cast<std::size_t>(state.range(0)), cfg.domains);
  for (auto _ : state) benchmark::DoNotOptimize(scenario_table(s, grid, cfg));
}
BENCHMARK(BM_scenario_table)->Arg(5)->Arg(10)->Unit(benchmark::kMillisecond);

static void BM_plan_mesh_search(benchmark::State& state) {
  const auto s = record(120, 4);
  const auto cfg = icu_config();
  const auto table = scenario_table(s, scenario_grid({0.500, 0.707}, 5, cfg.domains), cfg);
  PlanOptions opts;
  opts.horizon = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(plan_ptc_sgm(table, s.doses, LossSpec{}, opts, cfg.gammas, cfg.domains));
  }
}
BENCHMARK(BM_plan_mesh_search)->Arg(6)->Arg(12)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

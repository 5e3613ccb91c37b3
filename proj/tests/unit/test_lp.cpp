#include <cmath>
#include <random>

#include "doctest.h"
#include "heparin/errors.hpp"
#include "heparin/lp.hpp"
#include "oracles.hpp"

using namespace heparin;
using lp::kInf;

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

lp::Problem from_box(const oracle::BoxLp& box) {
  lp::Problem p(box.b.size(), box.c.size(), box.maximize ? lp::Sense::maximize : lp::Sense::minimize);
  for (std::size_t i = 0; i < box.b.size(); ++i) {
    p.rhs[i] = box.b[i];
    for (std::size_t j = 0; j < box.c.size(); ++j) p.a(i, j) = box.A[i][j];
  }
  p.cost = box.c;
  p.lower = box.lo;
  p.upper = box.hi;
  return p;
}

// Random box LP: `m` rows over `n` structural columns plus one slack per row,
// so that the rows are always linearly independent.
oracle::BoxLp random_box(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> nd(1, 5), md(1, 3), coin(0, 1);
  std::uniform_real_distribution<double> coef(-5.0, 5.0), lo(-4.0, 1.0), wd(0.0, 6.0);
  const int n = nd(rng);
  const int m = std::min(md(rng), 8 - n);
  oracle::BoxLp box;
  box.maximize = coin(rng) == 1;
  const int cols = n + m;
  box.A.assign(m, std::vector<double>(cols, 0.0));
  for (int j = 0; j < cols; ++j) {
    box.c.push_back(j < n ? coef(rng) : 0.0);
    const double l = lo(rng);
    box.lo.push_back(l);
    box.hi.push_back(l + wd(rng));
  }
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) box.A[i][j] = coin(rng) ? std::round(coef(rng) * 4.0) / 4.0 : 0.0;
    box.A[i][n + i] = 1.0;
    box.b.push_back(coef(rng));
  }
  return box;
}

}  // namespace

TEST_CASE("single bounded variable") {
  // max x s.t. x + s = 1, x, s >= 0.
  lp::Problem p(1, 2);
  p.a(0, 0) = 1.0;
  p.a(0, 1) = 1.0;
  p.rhs[0] = 1.0;
  p.cost = {1.0, 0.0};
  auto sol = lp::solve(p);
  REQUIRE(sol.status == lp::Status::optimal);
  CHECK(sol.x[0] == doctest::Approx(1.0));
  CHECK(sol.objective == doctest::Approx(1.0));
  CHECK(sol.duals[0] == doctest::Approx(1.0));
  CHECK(lp::dual_objective(p, sol.duals) == doctest::Approx(1.0));
}

TEST_CASE("active upper bound shows up as a reduced cost") {
  lp::Problem p(0, 1);
  p.cost = {2.0};
  p.upper = {1.0};
  auto sol = lp::solve(p);
  REQUIRE(sol.status == lp::Status::optimal);
  CHECK(sol.x[0] == 1.0);
  CHECK(sol.reduced_costs[0] == doctest::Approx(2.0));
  CHECK(lp::dual_objective(p, sol.duals) == doctest::Approx(2.0));
}

TEST_CASE("contradictory constraints yield a Farkas certificate") {
  // x + s = -1 with x, s >= 0.
  lp::Problem p(1, 2);
  p.a(0, 0) = 1.0;
  p.a(0, 1) = 1.0;
  p.rhs[0] = -1.0;
  p.cost = {1.0, 0.0};
  auto sol = lp::solve(p);
  REQUIRE(sol.status == lp::Status::infeasible);
  CHECK(lp::farkas_margin(p, sol.farkas) > 1e-8);
}

TEST_CASE("unbounded problems return an improving ray") {
  // max x + y s.t. x - y = 1, x, y >= 0.
  lp::Problem p(1, 2);
  p.a(0, 0) = 1.0;
  p.a(0, 1) = -1.0;
  p.rhs[0] = 1.0;
  p.cost = {1.0, 1.0};
  auto sol = lp::solve(p);
  REQUIRE(sol.status == lp::Status::unbounded);
  REQUIRE(sol.ray.size() == 2);
  CHECK(dot(p.cost, sol.ray) > 0.0);
  CHECK(sol.ray[0] - sol.ray[1] == doctest::Approx(0.0));
  CHECK(sol.ray[0] >= 0.0);
  CHECK(sol.ray[1] >= 0.0);
}

TEST_CASE("free and upper-only variables") {
  // min |x - 3| via x - p + q = 3, x free, plus y <= 2 maximised through -y cost.
  lp::Problem p(1, 4, lp::Sense::minimize);
  p.a(0, 0) = 1.0;
  p.a(0, 1) = -1.0;
  p.a(0, 2) = 1.0;
  p.rhs[0] = 3.0;
  p.cost = {0.0, 1.0, 1.0, -1.0};
  p.lower = {-kInf, 0.0, 0.0, -kInf};
  p.upper = {kInf, kInf, kInf, 2.0};
  auto sol = lp::solve(p);
  REQUIRE(sol.status == lp::Status::optimal);
  CHECK(sol.objective == doctest::Approx(-2.0));
  CHECK(sol.x[3] == doctest::Approx(2.0));
  CHECK(lp::primal_residual(p, sol.x) < 1e-9);
  CHECK(lp::dual_objective(p, sol.duals) == doctest::Approx(sol.objective));
}

TEST_CASE("dimension mismatch and inverted bounds are rejected") {
  lp::Problem p(1, 2);
  p.cost.pop_back();
  CHECK_THROWS_AS(lp::solve(p), InvalidInput);
  lp::Problem q(0, 1);
  q.lower = {2.0};
  q.upper = {1.0};
  CHECK_THROWS_AS(lp::solve(q), InvalidInput);
}

TEST_CASE("add_row and add_column preserve existing coefficients") {
  lp::Problem p(1, 1);
  p.a(0, 0) = 3.0;
  const auto c = p.add_column(1.0, 0.0, 5.0);
  const auto r = p.add_row(4.0);
  p.a(r, c) = 2.0;
  CHECK(p.a(0, 0) == 3.0);
  CHECK(p.a(0, c) == 0.0);
  CHECK(p.a(r, 0) == 0.0);
  CHECK(p.a(r, c) == 2.0);
  CHECK(p.rhs[r] == 4.0);
}

TEST_CASE("random box LPs agree with vertex enumeration") {
  std::mt19937_64 rng(20240611);
  int optimal = 0, infeasible = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const auto box = random_box(rng);
    const auto p = from_box(box);
    const auto expected = oracle::vertex_enumeration(box);
    const auto sol = lp::solve(p);
    if (!expected) {
      REQUIRE(sol.status == lp::Status::infeasible);
      CHECK(lp::farkas_margin(p, sol.farkas) > 1e-8);
      ++infeasible;
      continue;
    }
    REQUIRE(sol.status == lp::Status::optimal);
    CHECK(std::abs(sol.objective - *expected) <= 1e-8 * (1.0 + std::abs(*expected)));
    CHECK(lp::primal_residual(p, sol.x) <= 1e-8);
    CHECK(std::abs(lp::dual_objective(p, sol.duals) - sol.objective) <= 1e-7);
    ++optimal;
  }
  CHECK(optimal > 100);
  CHECK(infeasible > 5);
}

TEST_CASE("scaling the objective scales the optimum and keeps the solution") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    auto p = from_box(random_box(rng));
    auto a = lp::solve(p);
    if (a.status != lp::Status::optimal) continue;
    for (double& c : p.cost) c *= 8.0;
    auto b = lp::solve(p);
    REQUIRE(b.status == lp::Status::optimal);
    CHECK(b.objective == doctest::Approx(8.0 * a.objective).epsilon(1e-10));
    CHECK(b.x == a.x);
  }
}

TEST_CASE("degenerate LP terminates") {
  // Klee-Minty-like degenerate vertex at the origin with many tight rows.
  const int n = 6;
  lp::Problem p(n, 2 * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) p.a(i, j) = (i == j) ? 1.0 : (j < i ? 2.0 : 0.0);
    p.a(i, n + i) = 1.0;
    p.rhs[i] = 0.0;
    p.cost[i] = 1.0;
  }
  auto sol = lp::solve(p);
  REQUIRE(sol.status == lp::Status::optimal);
  CHECK(sol.objective == doctest::Approx(0.0));
}

TEST_CASE("solutions are deterministic") {
  std::mt19937_64 rng(5);
  auto p = from_box(random_box(rng));
  auto a = lp::solve(p);
  auto b = lp::solve(p);
  CHECK(a.x == b.x);
  CHECK(a.duals == b.duals);
  CHECK(a.iterations == b.iterations);
}

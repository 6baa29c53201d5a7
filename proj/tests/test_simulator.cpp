#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "doctest.h"
#include "twoscale/averaging.hpp"
#include "twoscale/simulator.hpp"

using namespace twoscale;

namespace {

// Constant rates: slow a->b 1, b->a 2; fast u->v 1, v->u 3.
ModelSpec constant_model() {
  return parse_model(R"({
    "slow": {"states": ["a", "b"], "edges": [{"from": "a", "to": "b", "base": 1}, {"from": "b", "to": "a", "base": 2}]},
    "fast": {"states": ["u", "v"], "edges": [{"from": "u", "to": "v", "base": 1}, {"from": "v", "to": "u", "base": 3}]}
  })");
}

}  // namespace

TEST_CASE("seed derivation is deterministic and spreads indices") {
  CHECK(derive_seed(5, 3) == derive_seed(5, 3));
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(42, i));
  CHECK(seen.size() == 1000);
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
}

TEST_CASE("initial_state rounding keeps N") {
  const auto s = initial_state(SimplexVector({1.0 / 3, 1.0 / 3, 1.0 / 3}), 10, 1);
  CHECK(std::accumulate(s.counts.begin(), s.counts.end(), 0) == 10);
  CHECK(s.counts[0] == 4);
  CHECK(s.env == 1);
}

TEST_CASE("paths are reproducible and conserve particles") {
  const auto m = retrial_model(1.0, 2.0, 3);
  const auto init = initial_state(SimplexVector::uniform(4), 40, 0);
  const auto p1 = simulate(m, 40, init, 1.0, 9);
  const auto p2 = simulate(m, 40, init, 1.0, 9);
  REQUIRE(p1.jump_times.size() == p2.jump_times.size());
  CHECK(p1.jump_times == p2.jump_times);
  double last = 0.0;
  for (std::size_t k = 0; k < p1.states.size(); ++k) {
    CHECK(p1.jump_times[k] >= last);
    CHECK(p1.jump_times[k] <= 1.0);
    last = p1.jump_times[k];
    CHECK(std::accumulate(p1.states[k].counts.begin(), p1.states[k].counts.end(), 0) == 40);
    for (int c : p1.states[k].counts) CHECK(c >= 0);
  }
  CHECK(p1.state_at(0.0).counts == (p1.jump_times.front() > 0.0 ? init.counts : p1.states.front().counts));
  CHECK(simulate(m, 40, init, 1.0, 10).jump_times != p1.jump_times);
}

TEST_CASE("first slow jump of one particle is exponential") {
  // N = 1 in state a: the first slow event comes at rate 1.
  const auto m = constant_model();
  const auto init = initial_state(SimplexVector({1.0, 0.0}), 1, 0);
  const std::size_t R = 4000;
  double sum = 0.0;
  std::size_t survived = 0;
  for (std::size_t r = 0; r < R; ++r) {
    const auto p = simulate(m, 1, init, 10.0, derive_seed(77, r));
    double first = 10.0;
    for (std::size_t k = 0; k < p.kinds.size(); ++k)
      if (p.kinds[k] == EventKind::Slow) {
        first = p.jump_times[k];
        break;
      }
    sum += first;
    if (first > 1.0) ++survived;
  }
  // mean 1 (truncation at 10 is negligible), sd 1
  CHECK(std::abs(sum / R - 1.0) <= 4.0 / std::sqrt(double(R)));
  const double p = std::exp(-1.0);
  CHECK(std::abs(double(survived) / R - p) <= 4.0 * std::sqrt(p * (1 - p) / R));
}

TEST_CASE("fast jumps occur at N times the fast rate") {
  // Stationary environment (pi = (3/4, 1/4)) switches at mean rate 2 * 3/4 * 1 = 1.5 per unit time, times N.
  const auto m = constant_model();
  const int N = 50;
  const double T = 2.0;
  const auto init = initial_state(SimplexVector({0.5, 0.5}), N, 0);
  const std::size_t R = 400;
  double total = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    const auto p = simulate(m, N, init, T, derive_seed(3, r));
    total += double(std::count(p.kinds.begin(), p.kinds.end(), EventKind::Fast));
  }
  const double expected = 1.5 * N * T;
  CHECK(std::abs(total / R - expected) / expected <= 0.03);
}

TEST_CASE("empirical path and occupation bookkeeping") {
  const auto m = retrial_model(1.0, 2.0, 3);
  const auto p = simulate(m, 30, initial_state(SimplexVector::uniform(4), 30, 1), 1.0, 4);
  const auto emp = empirical_path(p, 0.1);
  REQUIRE(emp.time.size() == 11);
  CHECK(emp.values.front()[0] == doctest::Approx(p.initial.counts[0] / 30.0));
  const auto occ = occupation(p, 2, 0.25);
  REQUIRE(occ.grid.size() == 5);
  for (std::size_t k = 0; k < occ.grid.size(); ++k)
    CHECK(occ.mass[k][0] + occ.mass[k][1] == doctest::Approx(occ.grid[k]).epsilon(1e-12));
}

TEST_CASE("U and V on a hand-built path") {
  const auto m = constant_model();
  SimulationPath p;
  p.N = 2;
  p.T = 1.0;
  p.initial = {{2, 0}, 0, 0.0};
  p.jump_times = {0.5};
  p.states = {{{1, 1}, 0, 0.5}};
  p.kinds = {EventKind::Slow};
  p.edges = {0};
  const double a = 0.3, b = -0.2;
  const auto tilt = TiltSpec::make({0.0, a}, {0.0, b});
  const auto uv = path_functionals_UV(m, p, tilt);
  const double ea = std::exp(a) - 1.0, ema = std::exp(-a) - 1.0, eb = std::exp(b) - 1.0;
  const double expected_NU = a - 2.0 * (0.5 * (ea + eb) + 0.5 * (0.5 * ea + 0.5 * 2.0 * ema + eb));
  CHECK(uv.log_martingale(2) == doctest::Approx(expected_NU).epsilon(1e-12));
  CHECK(uv.V == 0.0);

  // Dropping the tau terms leaves only the linear compensator.
  const auto broken = path_functionals_UV(m, p, tilt, Compensator::WithoutTau);
  const double lin_NU = a - 2.0 * (0.5 * (a + b) + 0.5 * (0.5 * a - 0.5 * 2.0 * a + b));
  CHECK(broken.log_martingale(2) == doctest::Approx(lin_NU).epsilon(1e-12));

  const auto zero = path_functionals_UV(m, p, TiltSpec::zero(m));
  CHECK(zero.U == 0.0);
  CHECK(zero.V == 0.0);
}

TEST_CASE("tilts: gauge, validation and tilted rates") {
  const auto t = TiltSpec::make({1.0, 1.5}, {2.0, 2.0});
  CHECK(t.alpha[0] == 0.0);
  CHECK(t.alpha[1] == doctest::Approx(0.5));
  CHECK(t.g[1] == 0.0);
  CHECK_THROWS((void)TiltSpec::make({0.0, std::nan("")}, {0.0, 0.0}));
  const auto m = constant_model();
  CHECK_THROWS(TiltSpec::make({0.0}, {0.0, 0.0}).validate(m));
  const auto tm = tilted_model(m, t);
  const std::vector<double> xi{0.5, 0.5};
  CHECK(tm.slow_rate(0, xi, 0) == doctest::Approx(std::exp(0.5)));
  CHECK(tm.slow_rate(1, xi, 0) == doctest::Approx(2.0 * std::exp(-0.5)));
  CHECK(tm.fast_rate(0, xi) == doctest::Approx(1.0));
}

TEST_CASE("ensemble results do not depend on thread count") {
  const auto m = retrial_model(1.0, 2.0, 3);
  const auto init = initial_state(SimplexVector::uniform(4), 20, 0);
  auto f = [](const SimulationPath& p) { return double(p.jump_times.size()); };
  const auto s1 = ensemble(m, 20, init, 0.5, 64, 5, f, 1);
  const auto s3 = ensemble(m, 20, init, 0.5, 64, 5, f, 3);
  CHECK(s1.values == s3.values);
  CHECK(s1.mean == s3.mean);
  CHECK(s1.ci95_low <= s1.mean);
  CHECK(s1.failures.empty());
}

TEST_CASE("a model with no enabled transitions is absorbed") {
  const auto m = parse_model(R"({
    "slow": {"states": ["a", "b"], "edges": [{"from": "a", "to": "b", "base": 1}]},
    "fast": {"states": ["u"], "edges": []}
  })");
  const auto p = simulate(m, 5, initial_state(SimplexVector({1.0, 0.0}), 5, 0), 100.0, 1);
  CHECK(p.absorbed);
  CHECK(p.states.back().counts[1] == 5);
}

TEST_CASE("path CSV format") {
  const auto m = retrial_model(1.0, 2.0, 1);
  std::ostringstream os;
  write_path_csv(os, m, simulate(m, 3, initial_state(SimplexVector::uniform(2), 3, 0), 0.2, 1));
  CHECK(os.str().rfind("t,count_0,count_1,env\n0,", 0) == 0);
}

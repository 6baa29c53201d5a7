#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "twoscale/averaging.hpp"
#include "twoscale/ratefn.hpp"

using namespace twoscale;

namespace {

// Slow rates lbar01 (0 -> 1), lbar10 (1 -> 0) in every environment; fast
// rates a (0 -> 1), b (1 -> 0).
ModelSpec two_state(double l01, double l10, double a = 1.0, double b = 1.0) {
  return oracle::TwoByTwo{{l01, l01}, {l10, l10}, a, 0.0, b}.model();
}

LocalRateInput slow_input(double mu0, double v, std::size_t ny = 2) {
  return {SimplexVector({mu0, 1.0 - mu0}), {-v, v}, SimplexVector::uniform(ny)};
}

TimeSeries series(const AveragedFlow& f, bool pi) { return {f.time, pi ? f.pi : f.mu}; }

}  // namespace

TEST_CASE("slow rate: symmetric two-state closed form") {
  const auto m = two_state(1.0, 1.0);
  const double v = 0.5;
  const auto in = slow_input(0.5, v);
  const auto s = local_slow_rate(m, in);
  const double closed = v * std::asinh(v) - std::sqrt(1.0 + v * v) + 1.0;
  CHECK(s.value == doctest::Approx(closed).epsilon(1e-10));
  CHECK(s.value == doctest::Approx(0.12257).epsilon(1e-4));
  CHECK(std::abs(s.value - oracle::slow_two_state(v, 0.5, 0.5)) <= 1e-5);
  CHECK(s.residual <= 1e-8);
  CHECK_FALSE(s.diverged);
  CHECK(s.alpha_hat[0] == 0.0);

  const auto sol = local_rate(m, in);
  CHECK(nonvariational_identity(m, in, sol).gap_slow <= 1e-6);
}

TEST_CASE("slow rate vanishes on the averaged drift") {
  const auto m = retrial_model(1.0, 2.0, 3);
  const SimplexVector mu({0.1, 0.2, 0.3, 0.4});
  const SimplexVector mm({0.3, 0.7});
  const auto drift = slow_drift(m, mu.weights(), mm.weights());
  const auto s = local_slow_rate(m, {mu, drift, mm});
  CHECK(s.value <= 1e-14);
  CHECK(sup_norm(s.alpha_hat) <= 1e-10);
}

TEST_CASE("slow rate is infinite without a supporting flux") {
  // mu = (1, 0): only 0 -> 1 carries flux, yet mass must flow 1 -> 0.
  const auto m = two_state(1.0, 1.0);
  const auto s = local_slow_rate(m, {SimplexVector({1.0, 0.0}), {0.3, -0.3}, SimplexVector::uniform(2)});
  CHECK(std::isinf(s.value));
  CHECK(s.diverged);
  // With the environment idle the only upward edge has rate zero.
  const auto iso = retrial_model(1.0, 2.0, 1);
  const auto s2 = local_slow_rate(iso, {SimplexVector({0.5, 0.5}), {-0.1, 0.1}, SimplexVector({1.0, 0.0})});
  CHECK(std::isinf(s2.value));
}

TEST_CASE("slow rate: random two-state problems against the grid oracle") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> rate(0.1, 3.0), mass(0.05, 0.95), vel(-1.0, 1.0);
  for (int i = 0; i < 40; ++i) {
    const double l01 = rate(rng), l10 = rate(rng), mu0 = mass(rng), v = vel(rng);
    const auto m = two_state(l01, l10);
    const auto in = slow_input(mu0, v);
    const auto s = local_slow_rate(m, in);
    CHECK(std::abs(s.value - oracle::slow_two_state(v, l01 * mu0, l10 * (1 - mu0))) <= 1e-5);
    CHECK(s.residual <= 1e-8);
  }
}

TEST_CASE("fast rate: closed form and limits") {
  const auto m = two_state(1.0, 1.0, 1.0, 1.0);
  const SimplexVector mu({0.5, 0.5});
  const auto f = local_fast_rate(m, mu, SimplexVector({0.75, 0.25}));
  CHECK(f.value == doctest::Approx(1.0 - std::sqrt(3.0) / 2.0).epsilon(1e-10));
  CHECK(std::abs(f.value - oracle::fast_two_state(1, 1, 0.75)) <= 1e-5);
  CHECK(f.residual <= 1e-8);
  CHECK_FALSE(f.diverged);

  // All mass on state 0: suppressing its unit exit rate costs exactly 1.
  const auto lim = local_fast_rate(m, mu, SimplexVector({1.0, 0.0}));
  CHECK(lim.value == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(lim.diverged);
  CHECK(lim.h[0] == -1.0);
  CHECK(std::abs(lim.value - oracle::fast_two_state(1, 1, 1.0)) <= 1e-5);
  CHECK(lim.residual <= 1e-8);

  // m = pi gives zero
  const auto pi = invariant_measure(m, mu.weights());
  const auto z = local_fast_rate(m, mu, pi);
  CHECK(z.value <= 1e-14);
  CHECK(sup_norm(z.g_hat) <= 1e-10);
}

TEST_CASE("fast rate: random two-state problems") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> rate(0.1, 3.0), mass(0.02, 0.98);
  for (int i = 0; i < 40; ++i) {
    const double a = rate(rng), b = rate(rng), q = mass(rng);
    const auto m = two_state(1.0, 1.0, a, b);
    const auto f = local_fast_rate(m, SimplexVector::uniform(2), SimplexVector({q, 1 - q}));
    CHECK(std::abs(f.value - oracle::fast_two_state_closed(a, b, q)) <= 1e-9);
    CHECK(std::abs(f.value - oracle::fast_two_state(a, b, q)) <= 1e-5);
    CHECK(f.residual <= 1e-8);
  }
}

TEST_CASE("fast rate on a three-state chain with a zero-mass state") {
  // 0 <-> 1 <-> 2 (rates 1); m = (1/2, 1/2, 0). The piece {0, 1} keeps its
  // internal balance and the exit 1 -> 2 is switched off at cost m(1) * 1.
  ModelSpec m;
  m.slow_graph = DirectedGraph({"a", "b"}, {{0, 1}, {1, 0}});
  m.fast_graph = DirectedGraph({"0", "1", "2"}, {{0, 1}, {1, 0}, {1, 2}, {2, 1}});
  m.slow_rates = [](std::span<const double>, std::size_t, std::span<double> out) { std::fill(out.begin(), out.end(), 1.0); };
  m.fast_rates = [](std::span<const double>, std::span<double> out) { std::fill(out.begin(), out.end(), 1.0); };
  const auto f = local_fast_rate(m, SimplexVector::uniform(2), SimplexVector({0.5, 0.5, 0.0}));
  CHECK(f.diverged);
  CHECK(f.value == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(f.residual <= 1e-8);
  // Direct evaluation of the objective with g = (0, 0, -K) approaches the value from below.
  const double K = 30.0;
  const double direct = -(0.5 * 1.0 * (std::exp(-K) - 1.0));
  CHECK(std::abs(direct - f.value) <= 1e-12);
}

TEST_CASE("gauge invariance and dual consistency") {
  const auto m = retrial_model(1.0, 2.0, 3);
  const SimplexVector mu({0.1, 0.2, 0.3, 0.4});
  const SimplexVector mm({0.4, 0.6});
  const std::vector<double> mu_dot{0.05, -0.02, -0.04, 0.01};
  const LocalRateInput in{mu, mu_dot, mm};
  const auto s = local_slow_rate(m, in);
  REQUIRE_FALSE(s.diverged);

  const auto lbar = averaged_rates(m, mu.weights(), mm.weights());
  const auto drift = slow_drift(m, mu.weights(), mm.weights());
  auto objective = [&](const std::vector<double>& a) {
    double v = 0.0;
    for (std::size_t x = 0; x < a.size(); ++x) v += a[x] * (mu_dot[x] - drift[x]);
    for (std::size_t e = 0; e < lbar.size(); ++e) {
      const auto& ed = m.slow_graph.edge(e);
      v -= oracle::tau(a[ed.to] - a[ed.from]) * lbar[e] * mu[ed.from];
    }
    return v;
  };
  auto shifted = s.alpha_hat;
  for (double& a : shifted) a += 3.7;
  CHECK(std::abs(objective(shifted) - objective(s.alpha_hat)) <= 1e-12);
  CHECK(objective(s.alpha_hat) == doctest::Approx(s.value).epsilon(1e-12));

  // <alpha, mu_dot - Lambda* mu> = sum_e h Dalpha lbar mu for each basis alpha
  for (std::size_t z = 1; z < mu.size(); ++z) {
    std::vector<double> basis(mu.size(), 0.0);
    basis[z] = 1.0;
    double lhs = mu_dot[z] - drift[z], rhs = 0.0;
    for (std::size_t e = 0; e < lbar.size(); ++e) {
      const auto& ed = m.slow_graph.edge(e);
      rhs += s.h[e] * (basis[ed.to] - basis[ed.from]) * lbar[e] * mu[ed.from];
    }
    CHECK(std::abs(lhs - rhs) <= 1e-8);
  }
}

TEST_CASE("identity gaps at converged optima") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto m = retrial_model(1.0, 2.0, 3);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> w(4), d(4);
    double s = 0.0;
    for (auto& x : w) s += (x = 0.05 + u(rng));
    for (auto& x : w) x /= s;
    double ds = 0.0;
    for (auto& x : d) ds += (x = u(rng) - 0.5);
    for (auto& x : d) x -= ds / 4.0;
    const double q = 0.05 + 0.9 * u(rng);
    const LocalRateInput in{SimplexVector(w), d, SimplexVector({q, 1 - q})};
    const auto sol = local_rate(m, in);
    REQUIRE_FALSE(sol.diverged_slow);
    const auto gaps = nonvariational_identity(m, in, sol);
    CHECK(gaps.gap_slow <= 1e-6);
    CHECK(gaps.gap_fast <= 1e-6);
    CHECK(sol.slow_value >= 0.0);
    CHECK(sol.fast_value >= 0.0);
  }
}

TEST_CASE("input validation") {
  const auto m = two_state(1.0, 1.0);
  CHECK_THROWS_AS((void)local_slow_rate(m, {SimplexVector({0.5, 0.5}), {0.1, 0.1}, SimplexVector::uniform(2)}),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)local_slow_rate(m, {SimplexVector::uniform(3), {0.0, 0.0, 0.0}, SimplexVector::uniform(2)}),
                  std::invalid_argument);
}

TEST_CASE("a tiny iteration budget surfaces as a solver error") {
  const auto m = two_state(1.0, 1.0);
  ToleranceConfig tol;
  tol.max_newton_iters = 1;
  CHECK_THROWS_AS((void)local_slow_rate(m, slow_input(0.5, 0.9), tol), SolverError);
}

TEST_CASE("path rate of the averaged flow is zero") {
  const auto m = retrial_model(1.0, 2.0, 3);
  const auto flow = mckean_vlasov_flow(m, SimplexVector::uniform(4), 2.0, 1e-3);
  const auto rep = path_rate(m, series(flow, false), series(flow, true));
  CHECK(rep.J_total <= 1e-5);
  CHECK(rep.J_total >= 0.0);
  CHECK(rep.steps.size() == flow.time.size());
  CHECK(rep.quadrature_step == doctest::Approx(1e-3));
}

TEST_CASE("path rate of a tilted flow equals the tilt cost") {
  const auto m = retrial_model(1.0, 2.0, 3);
  const auto tilt = TiltSpec::make({0.0, 0.2, 0.3, 0.1}, {0.0, -0.25});
  const auto flow = mckean_vlasov_flow(tilted_model(m, tilt), SimplexVector::uniform(4), 2.0, 1e-3);
  const auto rep = path_rate(m, series(flow, false), series(flow, true));
  const double direct = tilt_cost(m, series(flow, false), series(flow, true), tilt);
  CHECK(direct > 1e-3);
  CHECK(std::abs(rep.J_total - direct) <= 1e-4);
  CHECK(rep.J_total == doctest::Approx(rep.slow_part + rep.fast_part));
}

TEST_CASE("reversed flow costs something") {
  const auto m = retrial_model(1.0, 2.0, 3);
  const auto flow = mckean_vlasov_flow(m, SimplexVector({0.7, 0.1, 0.1, 0.1}), 1.0, 1e-3);
  TimeSeries rev{flow.time, {flow.mu.rbegin(), flow.mu.rend()}};
  TimeSeries rev_pi{flow.time, {flow.pi.rbegin(), flow.pi.rend()}};
  CHECK(path_rate(m, rev, rev_pi).J_total > 1e-3);
}

TEST_CASE("path rate rejects mismatched grids") {
  const auto m = retrial_model(1.0, 2.0, 3);
  const auto flow = mckean_vlasov_flow(m, SimplexVector::uniform(4), 1.0, 1e-2);
  auto pi = series(flow, true);
  pi.time.pop_back();
  pi.values.pop_back();
  CHECK_THROWS_AS((void)path_rate(m, series(flow, false), pi), std::invalid_argument);
  auto bad = series(flow, false);
  bad.time[3] += 1e-4;
  CHECK_THROWS_AS((void)path_rate(m, bad, series(flow, true)), std::invalid_argument);
}

TEST_CASE("path rate is infinite when a step diverges") {
  const auto m = two_state(1.0, 1.0);
  // Pushes mass out of state 1 although it starts empty.
  TimeSeries mu, mm;
  for (int k = 0; k <= 10; ++k) {
    const double t = 0.01 * k;
    mu.time.push_back(t);
    mm.time.push_back(t);
    mu.values.push_back(SimplexVector({std::min(1.0, 0.9 + t), std::max(0.0, 0.1 - t)}));
    mm.values.push_back(SimplexVector::uniform(2));
  }
  const auto rep = path_rate(m, mu, mm);
  CHECK(std::isinf(rep.J_total));
  bool any = false;
  for (const auto& s : rep.steps) any = any || s.diverged_slow;
  CHECK(any);
  std::ostringstream os;
  write_rate_report_json(os, rep);
  CHECK(os.str().find("\"J_total\": \"inf\"") != std::string::npos);
}

TEST_CASE("trapezoid quadrature converges at second order") {
  const auto m = retrial_model(1.0, 2.0, 3);
  const auto tilt = TiltSpec::make({0.0, 0.3, 0.2, 0.4}, {0.0, 0.3});
  auto J = [&](double h) {
    const auto f = mckean_vlasov_flow(tilted_model(m, tilt), SimplexVector({0.4, 0.3, 0.2, 0.1}), 1.0, h);
    // Evaluate along a deliberately off-equilibrium occupation: uniform m.
    TimeSeries mm{f.time, std::vector<SimplexVector>(f.time.size(), SimplexVector::uniform(2))};
    return path_rate(m, series(f, false), mm).J_total;
  };
  const double j1 = J(0.04), j2 = J(0.02), j3 = J(0.01);
  const double ratio = std::abs(j1 - j2) / std::abs(j2 - j3);
  CHECK(std::log2(ratio) == doctest::Approx(2.0).epsilon(0.15));
}

TEST_CASE("marginal rate") {
  const auto m = oracle::TwoByTwo{{1.0, 2.5}, {1.5, 0.3}, 1.0, 0.5, 0.8}.model();
  const SimplexVector mu({0.6, 0.4});
  const auto pi = invariant_measure(m, mu.weights());
  const auto drift = slow_drift(m, mu.weights(), pi.weights());

  SUBCASE("typical velocity costs nothing") {
    const auto r = marginal_local_rate(m, mu, drift);
    CHECK(r.value <= 1e-9);
    CHECK(sup_distance(r.m_star.weights(), pi.weights()) <= 1e-3);
  }
  SUBCASE("matches a grid over m and bounds every m") {
    const std::vector<double> v{-0.3, 0.3};
    const auto r = marginal_local_rate(m, mu, v);
    CHECK(r.converged);
    double grid = 1e300;
    for (int k = 0; k <= 1000; ++k) {
      const double q = k / 1000.0;
      const LocalRateInput in{mu, v, SimplexVector({q, 1 - q})};
      const auto sol = local_rate(m, in);
      grid = std::min(grid, sol.total());
      CHECK(r.value <= sol.total() + 1e-9);
    }
    CHECK(std::abs(r.value - grid) <= 1e-5);
    CHECK(std::abs(r.value - oracle::corollary_two_by_two({{1.0, 2.5}, {1.5, 0.3}, 1.0, 0.5, 0.8}, 0.6, 0.3)) <= 1e-4);
  }
}

TEST_CASE("initial rate") {
  const SimplexVector nu0({0.3, 0.7});
  CHECK(initial_rate({InitialRateSpec::Kind::Deterministic, nu0}, nu0) == 0.0);
  CHECK(std::isinf(initial_rate({InitialRateSpec::Kind::Deterministic, nu0}, SimplexVector({0.4, 0.6}))));
  CHECK(initial_rate({InitialRateSpec::Kind::Sanov, SimplexVector::uniform(2)}, SimplexVector({1.0, 0.0})) ==
        doctest::Approx(std::log(2.0)));
  CHECK(std::isinf(initial_rate({InitialRateSpec::Kind::Sanov, SimplexVector({1.0, 0.0})}, nu0)));
}

TEST_CASE("optimizer dump") {
  const auto m = retrial_model(1.0, 2.0, 1);
  const auto flow = mckean_vlasov_flow(m, SimplexVector::uniform(2), 0.1, 0.05);
  const auto rep = path_rate(m, series(flow, false), series(flow, true));
  std::ostringstream os;
  write_optimizer_csv(os, m, series(flow, false), rep);
  CHECK(os.str().rfind("t,alpha_0,alpha_1,g_idle,g_busy\n", 0) == 0);
}

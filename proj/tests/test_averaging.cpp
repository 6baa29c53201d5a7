#include <cmath>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "twoscale/averaging.hpp"

using namespace twoscale;

namespace {

double stationarity_residual(const ModelSpec& m, std::span<const double> xi) {
  const auto L = fast_generator(m, xi);
  const auto pi = invariant_measure(L);
  Eigen::RowVectorXd row(pi.size());
  for (std::size_t i = 0; i < pi.size(); ++i) row(Eigen::Index(i)) = pi[i];
  return (row * L.entries).cwiseAbs().maxCoeff();
}

// Constant rates a (0 -> 1) and b (1 -> 0) whatever the environment.
ModelSpec linear_model(double a, double b) {
  oracle::TwoByTwo p{{a, a}, {b, b}, 1.0, 0.0, 1.0};
  return p.model();
}

}  // namespace

TEST_CASE("two-state invariant measure closed form") {
  for (double a : {0.3, 1.0, 4.0})
    for (double b : {0.2, 1.5}) {
      oracle::TwoByTwo p{{1, 1}, {1, 1}, a, 0.0, b};
      const auto pi = invariant_measure(p.model(), std::vector<double>{0.5, 0.5});
      CHECK(std::abs(pi[0] - b / (a + b)) <= 1e-12);
      CHECK(std::abs(pi[1] - a / (a + b)) <= 1e-12);
    }
}

TEST_CASE("generator rows sum to zero") {
  const auto m = wlan_model({0.5, 0.25}, {{1, 1}, {0, 1}});
  const auto L = fast_generator(m, std::vector<double>{0.2, 0.3, 0.1, 0.4});
  CHECK(L.max_row_sum() <= 1e-14);
}

TEST_CASE("stationarity residual on sampled xi for both built-ins") {
  const auto r = retrial_model(1.0, 2.0, 3);
  const auto w = wlan_model({0.5, 0.25}, {{1, 1}, {1, 1}});
  for (const auto& xi : simplex_samples(r.slow_size(), 300, 11)) CHECK(stationarity_residual(r, xi) <= 1e-10);
  for (const auto& xi : simplex_samples(w.slow_size(), 300, 12)) CHECK(stationarity_residual(w, xi) <= 1e-10);
}

TEST_CASE("fast chain with two closed classes is rejected") {
  const auto m = parse_model(R"({
    "slow": {"states": ["a", "b"], "edges": [{"from": "a", "to": "b", "base": 1}, {"from": "b", "to": "a", "base": 1}]},
    "fast": {"states": ["u", "v", "w"], "edges": [{"from": "u", "to": "v", "base": 1}, {"from": "v", "to": "u", "base": 1}]}
  })");
  CHECK_THROWS_AS((void)invariant_measure(m, std::vector<double>{0.5, 0.5}), InvariantMeasureError);
}

TEST_CASE("averaged rates and drift") {
  const auto m = retrial_model(1.0, 2.0, 3);
  const std::vector<double> xi{0.4, 0.3, 0.2, 0.1};
  const std::vector<double> mm{0.25, 0.75};
  const auto lbar = averaged_rates(m, xi, mm);
  CHECK(lbar[0] == doctest::Approx(0.75));   // up edge: lambda * m(busy)
  CHECK(lbar[3] == doctest::Approx(0.5));    // down edge: alpha * m(idle)
  const auto d = slow_drift(m, xi, mm);
  double s = 0.0;
  for (double v : d) s += v;
  CHECK(std::abs(s) <= 1e-15);
  // state 0: inflow 0.5 * 0.3, outflow 0.75 * 0.4
  CHECK(d[0] == doctest::Approx(0.5 * 0.3 - 0.75 * 0.4));
}

TEST_CASE("flow matches the exact two-state solution") {
  const double a = 1.0, b = 2.0;
  const auto m = linear_model(a, b);
  const auto flow = mckean_vlasov_flow(m, SimplexVector({0.9, 0.1}), 2.0, 1e-2);
  for (std::size_t k = 0; k < flow.time.size(); k += 20)
    CHECK(std::abs(flow.mu[k][1] - oracle::linear_two_state(a, b, 0.1, flow.time[k])) <= 1e-9);
}

TEST_CASE("RK4 error shrinks at fourth order") {
  const double a = 1.0, b = 2.0;
  const auto m = linear_model(a, b);
  const double exact = oracle::linear_two_state(a, b, 0.1, 2.0);
  auto err = [&](double h) {
    return std::abs(mckean_vlasov_flow(m, SimplexVector({0.9, 0.1}), 2.0, h).mu.back()[1] - exact);
  };
  const double ratio = err(0.2) / err(0.1);
  CHECK(std::log2(ratio) == doctest::Approx(4.0).epsilon(0.1));
}

TEST_CASE("flow of the retrial model stays on the simplex and approaches equilibrium") {
  const auto m = retrial_model(1.0, 2.0, 3);
  const auto flow = mckean_vlasov_flow(m, SimplexVector::uniform(4), 80.0, 2e-2);
  for (const auto& mu : flow.mu) {
    double s = 0.0;
    for (double v : mu.weights()) {
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
  const auto d = slow_drift(m, flow.mu.back().weights(), flow.pi.back().weights());
  CHECK(sup_norm(d) <= 1e-6);
}

TEST_CASE("flow argument checks and CSV header") {
  const auto m = retrial_model(1.0, 2.0, 3);
  CHECK_THROWS_AS((void)mckean_vlasov_flow(m, SimplexVector::uniform(4), -1.0, 0.1), std::invalid_argument);
  CHECK_THROWS_AS((void)mckean_vlasov_flow(m, SimplexVector::uniform(3), 1.0, 0.1), std::invalid_argument);
  std::ostringstream os;
  write_flow_csv(os, m, mckean_vlasov_flow(m, SimplexVector::uniform(4), 0.1, 0.05));
  CHECK(os.str().rfind("t,mu_0,mu_1,mu_2,mu_3,pi_idle,pi_busy\n", 0) == 0);
}

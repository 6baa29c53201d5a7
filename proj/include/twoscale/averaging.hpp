#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include "twoscale/core_math.hpp"
#include "twoscale/model.hpp"

namespace twoscale {

/// Generator matrix: nonnegative off-diagonal entries on graph edges, rows
/// summing to zero.
struct RateMatrix {
  Eigen::MatrixXd entries;

  [[nodiscard]] double max_row_sum() const;
};

/// Signals a (near-)reducible fast chain at the queried xi.
class InvariantMeasureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Signals that the flow left the simplex beyond tolerance.
class SimplexViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// L_xi, with entries gamma_{y,y'}(xi) on fast edges.
[[nodiscard]] RateMatrix fast_generator(const ModelSpec& model, std::span<const double> xi);

/// Stationary law pi_xi of L_xi. The residual ||pi L||_inf is checked
/// against 1e-10 (relative to the largest rate).
[[nodiscard]] SimplexVector invariant_measure(const ModelSpec& model, std::span<const double> xi);
[[nodiscard]] SimplexVector invariant_measure(const RateMatrix& L);

/// lambda-bar_e(xi, m) = sum_y lambda_e(xi, y) m(y), one entry per slow edge.
[[nodiscard]] std::vector<double> averaged_rates(const ModelSpec& model, std::span<const double> xi,
                                                 std::span<const double> m);

/// (Lambda-bar*_{xi,m} xi)(x): inflow minus outflow of probability mass.
[[nodiscard]] std::vector<double> slow_drift(const ModelSpec& model, std::span<const double> xi,
                                             std::span<const double> m);

/// Same, from precomputed averaged edge rates.
[[nodiscard]] std::vector<double> drift_from_rates(const DirectedGraph& slow, std::span<const double> xi,
                                                   std::span<const double> lambda_bar);

struct AveragedFlow {
  std::vector<double> time;
  std::vector<SimplexVector> mu;
  std::vector<SimplexVector> pi;
  double step = 0.0;
};

/// RK4 integration of mu' = Lambda-bar*_{mu, pi_mu} mu from nu on [0, T].
/// pi is recomputed at every stage.
[[nodiscard]] AveragedFlow mckean_vlasov_flow(const ModelSpec& model, const SimplexVector& nu, double T, double step,
                                              const ToleranceConfig& tol = {});

/// CSV with header t,mu_<x>...,pi_<y>...
void write_flow_csv(std::ostream& out, const ModelSpec& model, const AveragedFlow& flow);

}  // namespace twoscale

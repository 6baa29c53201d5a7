#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "twoscale/core_math.hpp"
#include "twoscale/model.hpp"
#include "twoscale/simulator.hpp"

namespace twoscale {

/// (mu_t, mu_dot_t, m_t) at one instant of a path.
struct LocalRateInput {
  SimplexVector mu;
  std::vector<double> mu_dot;  // tangent to the simplex: sums to zero
  SimplexVector m;

  void validate(const ModelSpec& model) const;
};

/// Newton hit max_newton_iters without converging or detecting divergence.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SlowRateResult {
  double value = 0.0;
  std::vector<double> alpha_hat;  // gauge: alpha_hat[0] = 0
  std::vector<double> h;          // exp(D alpha_hat) - 1 per slow edge
  double residual = 0.0;          // sup-norm of the first-order condition
  bool diverged = false;          // optimizer escaped the norm cap: value = +inf
  int iterations = 0;
};

struct FastRateResult {
  double value = 0.0;
  std::vector<double> g_hat;  // gauge: g_hat[0] = 0
  std::vector<double> h;      // exp(D g_hat) - 1 per fast edge (-1 on edges the optimizer switches off)
  double residual = 0.0;
  bool diverged = false;  // supremum approached only in a limit; value is that limit
  int iterations = 0;
};

struct LocalRateSolution {
  double slow_value = 0.0;
  double fast_value = 0.0;
  std::vector<double> alpha_hat;
  std::vector<double> g_hat;
  std::vector<double> h_slow;
  std::vector<double> h_fast;
  double residual_slow = 0.0;
  double residual_fast = 0.0;
  bool diverged_slow = false;
  bool diverged_fast = false;

  [[nodiscard]] double total() const { return slow_value + fast_value; }
};

/// Iterate sup-norm beyond which the slow optimizer is declared divergent.
inline constexpr double kDivergenceCap = 50.0;

/// sup_alpha <alpha, mu_dot - Lambda-bar* mu> - sum_e tau(D alpha) lambda-bar_e mu(x)
/// by damped Newton in gauge-fixed coordinates.
[[nodiscard]] SlowRateResult local_slow_rate(const ModelSpec& model, const LocalRateInput& input,
                                             const ToleranceConfig& tol = {},
                                             std::span<const double> warm_start = {});

/// sup_g sum_y m(y) [-L_mu g(y) - sum_e tau(D g) gamma_e(mu)]. Edges leaving a
/// strongly connected piece of the support of m contribute their full flux
/// m(y) gamma_e (the optimizer sends those exponentials to zero); each piece
/// is then solved by damped Newton.
[[nodiscard]] FastRateResult local_fast_rate(const ModelSpec& model, const SimplexVector& mu, const SimplexVector& m,
                                             const ToleranceConfig& tol = {},
                                             std::span<const double> warm_start = {});

[[nodiscard]] LocalRateSolution local_rate(const ModelSpec& model, const LocalRateInput& input,
                                           const ToleranceConfig& tol = {});

struct IdentityGaps {
  double gap_slow = 0.0;
  double gap_fast = 0.0;
};

/// Compares the variational values with sum tau*(h) lambda-bar mu and
/// sum tau*(h) gamma m.
[[nodiscard]] IdentityGaps nonvariational_identity(const ModelSpec& model, const LocalRateInput& input,
                                                   const LocalRateSolution& solution);

struct RateStep {
  double t = 0.0;
  double slow = 0.0;
  double fast = 0.0;
  bool diverged_slow = false;
  bool diverged_fast = false;
};

struct PathRateReport {
  double J_total = 0.0;
  double slow_part = 0.0;
  double fast_part = 0.0;
  std::vector<RateStep> steps;
  std::vector<std::vector<double>> alpha_hat;  // per grid point
  std::vector<std::vector<double>> g_hat;
  double quadrature_step = 0.0;
};

/// Trapezoidal quadrature of the local rates along (mu, m) given on a shared
/// uniform grid. mu_dot from central differences (one-sided at the ends).
/// Each solve is warm-started from the previous grid point.
[[nodiscard]] PathRateReport path_rate(const ModelSpec& model, const TimeSeries& mu_path,
                                       const TimeSeries& theta_density, const ToleranceConfig& tol = {});

struct MarginalRate {
  double value = 0.0;
  SimplexVector m_star;
  bool converged = false;
};

/// inf over m of local slow + fast rates (the contracted rate of mu alone),
/// by projected gradient from several starts.
[[nodiscard]] MarginalRate marginal_local_rate(const ModelSpec& model, const SimplexVector& mu,
                                               std::span<const double> mu_dot, const ToleranceConfig& tol = {});

struct InitialRateSpec {
  enum class Kind { Deterministic, Sanov };
  Kind kind = Kind::Deterministic;
  SimplexVector reference;  // nu0 or p
};

[[nodiscard]] double initial_rate(const InitialRateSpec& spec, const SimplexVector& nu);

/// Direct evaluation of sum_t [sum tau*(e^{D alpha} - 1) lambda-bar mu +
/// sum tau*(e^{D g} - 1) gamma m] with trapezoidal weights, for a path
/// (mu, m) and a constant tilt.
[[nodiscard]] double tilt_cost(const ModelSpec& model, const TimeSeries& mu_path, const TimeSeries& m_path,
                               const TiltSpec& tilt);

void write_rate_report_json(std::ostream& out, const PathRateReport& report);
/// Columns t, alpha_<x>..., g_<y>...
void write_optimizer_csv(std::ostream& out, const ModelSpec& model, const TimeSeries& mu_path,
                         const PathRateReport& report);

}  // namespace twoscale

#include "twoscale/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace twoscale {

double tau(double u) {
  if (std::abs(u) < 1e-4) {
    // expm1(u) - u loses everything to cancellation here; use the series.
    const double u2 = u * u;
    return u2 * (0.5 + u * (1.0 / 6.0 + u * (1.0 / 24.0 + u / 120.0)));
  }
  if (u > 709.0) return kInf;
  return std::expm1(u) - u;
}

double tau_star(double u) {
  if (u < -1.0) return kInf;
  if (u == -1.0) return 1.0;
  if (std::abs(u) < 1e-4) {
    // (1+u)log(1+u) - u = u^2/2 - u^3/6 + u^4/12 - ...
    const double u2 = u * u;
    return u2 * (0.5 + u * (-1.0 / 6.0 + u * (1.0 / 12.0 - u / 20.0)));
  }
  return (u + 1.0) * std::log1p(u) - u;
}

double legendre_gap(double u, std::span<const double> grid) {
  double best = -kInf;
  for (double v : grid) best = std::max(best, u * v - tau(v));
  return std::abs(tau_star(u) - best);
}

std::vector<double> uniform_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || hi < lo) throw std::invalid_argument("uniform_grid: bad range");
  const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
  std::vector<double> out(n + 1);
  for (std::size_t i = 0; i <= n; ++i) out[i] = lo + static_cast<double>(i) * step;
  return out;
}

SimplexVector::SimplexVector(std::vector<double> weights, double tol) : weights_(std::move(weights)) {
  if (weights_.empty()) throw std::invalid_argument("SimplexVector: empty");
  double sum = 0.0;
  for (double w : weights_) {
    if (!std::isfinite(w) || w < 0.0) throw std::invalid_argument("SimplexVector: negative or non-finite weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > tol) throw std::invalid_argument("SimplexVector: weights do not sum to 1");
}

SimplexVector SimplexVector::renormalized(std::vector<double> weights, double tol) {
  double sum = 0.0;
  for (double& w : weights) {
    if (!std::isfinite(w)) throw std::invalid_argument("SimplexVector: non-finite weight");
    if (w < 0.0) {
      if (w < -tol) throw std::invalid_argument("SimplexVector: negative weight beyond tolerance");
      w = 0.0;
    }
    sum += w;
  }
  if (std::abs(sum - 1.0) > tol + 1e-12) throw std::invalid_argument("SimplexVector: mass drift beyond tolerance");
  for (double& w : weights) w /= sum;
  return SimplexVector(std::move(weights), 1e-12);
}

SimplexVector SimplexVector::point_mass(std::size_t size, std::size_t index) {
  std::vector<double> w(size, 0.0);
  w.at(index) = 1.0;
  return SimplexVector(std::move(w));
}

SimplexVector SimplexVector::uniform(std::size_t size) {
  return SimplexVector(std::vector<double>(size, 1.0 / static_cast<double>(size)));
}

void ToleranceConfig::validate() const {
  if (!(solver_grad_tol > 0.0) || !(simplex_tol > 0.0) || !(quadrature_step > 0.0) || max_newton_iters < 1)
    throw std::invalid_argument("ToleranceConfig: tolerances must be positive and max_newton_iters >= 1");
}

double sup_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double sup_distance(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace twoscale

#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace twoscale {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Centred unit-rate Poisson log-MGF, e^u - u - 1.
[[nodiscard]] double tau(double u);

/// Convex dual of tau: (u+1)log(u+1) - u on u > -1, 1 at u = -1, +inf below.
[[nodiscard]] double tau_star(double u);

/// |tau_star(u) - max_v (u v - tau(v))| with the max taken over `grid`.
[[nodiscard]] double legendre_gap(double u, std::span<const double> grid);

/// Uniform grid lo, lo+step, ..., hi (inclusive up to rounding).
[[nodiscard]] std::vector<double> uniform_grid(double lo, double hi, double step);

/// A probability vector over a finite index set.
class SimplexVector {
 public:
  SimplexVector() = default;

  /// Throws std::invalid_argument if any weight is negative/non-finite or the
  /// weights do not sum to 1 within `tol`.
  explicit SimplexVector(std::vector<double> weights, double tol = 1e-12);

  /// Clips negatives of magnitude <= tol to zero and rescales to unit mass.
  /// Larger violations throw.
  [[nodiscard]] static SimplexVector renormalized(std::vector<double> weights, double tol);

  [[nodiscard]] static SimplexVector point_mass(std::size_t size, std::size_t index);
  [[nodiscard]] static SimplexVector uniform(std::size_t size);

  [[nodiscard]] std::size_t size() const { return weights_.size(); }
  [[nodiscard]] double operator[](std::size_t i) const { return weights_[i]; }
  [[nodiscard]] std::span<const double> weights() const { return weights_; }
  [[nodiscard]] const std::vector<double>& vector() const { return weights_; }

 private:
  std::vector<double> weights_;
};

struct ToleranceConfig {
  double solver_grad_tol = 1e-8;
  double simplex_tol = 1e-9;
  double quadrature_step = 1e-3;
  int max_newton_iters = 200;

  /// Throws std::invalid_argument when a field is non-positive.
  void validate() const;
};

[[nodiscard]] double sup_norm(std::span<const double> v);
[[nodiscard]] double sup_distance(std::span<const double> a, std::span<const double> b);

}  // namespace twoscale

#include "twoscale/averaging.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

namespace twoscale {

double RateMatrix::max_row_sum() const { return entries.rowwise().sum().cwiseAbs().maxCoeff(); }

RateMatrix fast_generator(const ModelSpec& model, std::span<const double> xi) {
  const std::size_t ny = model.fast_size();
  RateMatrix L{Eigen::MatrixXd::Zero(Eigen::Index(ny), Eigen::Index(ny))};
  const auto rates = model.fast_rates_at(xi);
  for (std::size_t e = 0; e < rates.size(); ++e) {
    const auto& ed = model.fast_graph.edge(e);
    L.entries(Eigen::Index(ed.from), Eigen::Index(ed.to)) += rates[e];
    L.entries(Eigen::Index(ed.from), Eigen::Index(ed.from)) -= rates[e];
  }
  return L;
}

SimplexVector invariant_measure(const RateMatrix& L) {
  const Eigen::Index n = L.entries.rows();
  if (n == 1) return SimplexVector({1.0});
  // Solve L^T pi = 0 with the last stationarity row replaced by sum(pi) = 1.
  Eigen::MatrixXd A = L.entries.transpose();
  A.row(n - 1).setOnes();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  b(n - 1) = 1.0;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  const double scale = std::max(1.0, L.entries.cwiseAbs().maxCoeff());
  lu.setThreshold(1e-13);
  if (!lu.isInvertible() || lu.rcond() < 1e-14)
    throw InvariantMeasureError("invariant_measure: singular system (fast chain reducible at this xi)");
  Eigen::VectorXd pi = lu.solve(b);
  std::vector<double> w(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    if (pi(i) < -1e-10) throw InvariantMeasureError("invariant_measure: negative stationary mass");
    w[std::size_t(i)] = std::max(pi(i), 0.0);
  }
  double sum = 0.0;
  for (double x : w) sum += x;
  for (double& x : w) x /= sum;
  Eigen::Map<const Eigen::RowVectorXd> row(w.data(), n);
  const double residual = (row * L.entries).cwiseAbs().maxCoeff();
  if (residual > 1e-10 * scale)
    throw InvariantMeasureError("invariant_measure: stationarity residual too large (ill-conditioned chain)");
  return SimplexVector(std::move(w), 1e-12);
}

SimplexVector invariant_measure(const ModelSpec& model, std::span<const double> xi) {
  return invariant_measure(fast_generator(model, xi));
}

std::vector<double> averaged_rates(const ModelSpec& model, std::span<const double> xi, std::span<const double> m) {
  std::vector<double> out(model.slow_graph.edge_count(), 0.0);
  std::vector<double> per_env(out.size());
  for (std::size_t y = 0; y < m.size(); ++y) {
    if (m[y] == 0.0) continue;
    model.slow_rates(xi, y, per_env);
    for (std::size_t e = 0; e < out.size(); ++e) out[e] += m[y] * per_env[e];
  }
  return out;
}

std::vector<double> drift_from_rates(const DirectedGraph& slow, std::span<const double> xi,
                                     std::span<const double> lambda_bar) {
  std::vector<double> out(slow.size(), 0.0);
  for (std::size_t e = 0; e < slow.edge_count(); ++e) {
    const auto& ed = slow.edge(e);
    const double flux = xi[ed.from] * lambda_bar[e];
    out[ed.from] -= flux;
    out[ed.to] += flux;
  }
  return out;
}

std::vector<double> slow_drift(const ModelSpec& model, std::span<const double> xi, std::span<const double> m) {
  return drift_from_rates(model.slow_graph, xi, averaged_rates(model, xi, m));
}

namespace {

std::vector<double> mv_field(const ModelSpec& model, std::span<const double> xi) {
  const auto pi = invariant_measure(model, xi);
  return slow_drift(model, xi, pi.weights());
}

}  // namespace

AveragedFlow mckean_vlasov_flow(const ModelSpec& model, const SimplexVector& nu, double T, double step,
                                const ToleranceConfig& tol) {
  if (!(T > 0.0) || !(step > 0.0) || step > T) throw std::invalid_argument("mckean_vlasov_flow: need 0 < step <= T");
  if (nu.size() != model.slow_size()) throw std::invalid_argument("mckean_vlasov_flow: nu has wrong dimension");
  const std::size_t n = model.slow_size();
  auto steps = static_cast<std::size_t>(std::llround(T / step));
  if (steps == 0) steps = 1;
  const double h = T / static_cast<double>(steps);

  AveragedFlow flow;
  flow.step = h;
  flow.time.reserve(steps + 1);
  flow.mu.reserve(steps + 1);
  flow.pi.reserve(steps + 1);
  std::vector<double> x = nu.vector();
  flow.time.push_back(0.0);
  flow.mu.push_back(nu);
  flow.pi.push_back(invariant_measure(model, x));

  std::vector<double> tmp(n);
  auto axpy = [&](const std::vector<double>& k, double a) {
    for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i] + a * k[i];
    return std::span<const double>(tmp);
  };
  for (std::size_t s = 1; s <= steps; ++s) {
    const auto k1 = mv_field(model, x);
    const auto k2 = mv_field(model, axpy(k1, 0.5 * h));
    const auto k3 = mv_field(model, axpy(k2, 0.5 * h));
    const auto k4 = mv_field(model, axpy(k3, h));
    for (std::size_t i = 0; i < n; ++i) x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    SimplexVector next;
    try {
      next = SimplexVector::renormalized(x, tol.simplex_tol);
    } catch (const std::invalid_argument&) {
      throw SimplexViolation("mckean_vlasov_flow: left the simplex at t=" + std::to_string(double(s) * h) +
                             " (reduce the step)");
    }
    x = next.vector();
    flow.time.push_back(s == steps ? T : static_cast<double>(s) * h);
    flow.pi.push_back(invariant_measure(model, x));
    flow.mu.push_back(std::move(next));
  }
  return flow;
}

void write_flow_csv(std::ostream& out, const ModelSpec& model, const AveragedFlow& flow) {
  out << "t";
  for (const auto& x : model.slow_graph.vertices()) out << ",mu_" << x;
  for (const auto& y : model.fast_graph.vertices()) out << ",pi_" << y;
  out << '\n' << std::setprecision(17);
  for (std::size_t k = 0; k < flow.time.size(); ++k) {
    out << flow.time[k];
    for (double v : flow.mu[k].weights()) out << ',' << v;
    for (double v : flow.pi[k].weights()) out << ',' << v;
    out << '\n';
  }
}

}  // namespace twoscale

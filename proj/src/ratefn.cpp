#include "twoscale/ratefn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include "json.hpp"
#include <numeric>
#include <ostream>

#include "twoscale/averaging.hpp"

namespace twoscale {

namespace {

// Largest |D a| fed to exp; keeps h finite for vertices the fast solve pushes
// to -infinity.
constexpr double kExpClamp = 700.0;
// Net mass change a disconnected piece may carry before the rate is infinite.
constexpr double kBalanceTol = 1e-9;

double exp_diff(double d) { return std::exp(std::clamp(d, -kExpClamp, kExpClamp)); }
double expm1_diff(double d) { return std::expm1(std::clamp(d, -kExpClamp, kExpClamp)); }

// Maximize <a, r> - sum_e w_e (exp(a_to - a_from) - 1) over the coordinates in
// `verts` (verts[0] held fixed), using only `edge_ids`. Every edge has w > 0.
struct Block {
  std::vector<std::size_t> verts;
  std::vector<std::size_t> edge_ids;
};

struct BlockOutcome {
  bool diverged = false;
  int iterations = 0;
};

class ExpObjective {
 public:
  ExpObjective(const std::vector<Edge>& edges, std::span<const double> w, std::span<const double> r)
      : edges_(edges), w_(w), r_(r) {}

  double value(const Block& b, std::span<const double> a) const {
    double v = 0.0;
    for (std::size_t z : b.verts) v += a[z] * r_[z];
    for (std::size_t e : b.edge_ids) v -= w_[e] * expm1_diff(a[edges_[e].to] - a[edges_[e].from]);
    return v;
  }

  // Gradient indexed like b.verts.
  std::vector<double> gradient(const Block& b, std::span<const double> a, const std::vector<std::size_t>& local) const {
    std::vector<double> g(b.verts.size());
    for (std::size_t i = 0; i < b.verts.size(); ++i) g[i] = r_[b.verts[i]];
    for (std::size_t e : b.edge_ids) {
      const auto& ed = edges_[e];
      const double flux = w_[e] * exp_diff(a[ed.to] - a[ed.from]);
      g[local[ed.to]] -= flux;
      g[local[ed.from]] += flux;
    }
    return g;
  }

  BlockOutcome solve(const Block& b, std::vector<double>& a, const ToleranceConfig& tol, bool cap_divergence) const {
    BlockOutcome out;
    const std::size_t n = b.verts.size();
    if (n < 2) return out;
    std::vector<std::size_t> local(a.size(), 0);
    for (std::size_t i = 0; i < n; ++i) local[b.verts[i]] = i;
    const std::size_t ref = b.verts[0];
    const Eigen::Index nf = Eigen::Index(n - 1);

    std::vector<double> trial(a);
    for (int it = 0;; ++it) {
      out.iterations = it;
      const auto g = gradient(b, a, local);
      double res = 0.0;
      for (double x : g) res = std::max(res, std::abs(x));
      if (res <= tol.solver_grad_tol) return out;
      if (it >= tol.max_newton_iters)
        throw SolverError("Newton solve did not converge within max_newton_iters (residual " + std::to_string(res) +
                          ")");

      Eigen::MatrixXd H = Eigen::MatrixXd::Zero(nf, nf);
      Eigen::VectorXd grad(nf);
      for (std::size_t i = 1; i < n; ++i) grad(Eigen::Index(i - 1)) = g[i];
      for (std::size_t e : b.edge_ids) {
        const auto& ed = edges_[e];
        const double c = w_[e] * exp_diff(a[ed.to] - a[ed.from]);
        const Eigen::Index i = Eigen::Index(local[ed.from]) - 1;
        const Eigen::Index j = Eigen::Index(local[ed.to]) - 1;
        if (i >= 0) H(i, i) += c;
        if (j >= 0) H(j, j) += c;
        if (i >= 0 && j >= 0) {
          H(i, j) -= c;
          H(j, i) -= c;
        }
      }
      Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
      Eigen::VectorXd d = ldlt.solve(grad);
      if (ldlt.info() != Eigen::Success || !d.allFinite() || grad.dot(d) <= 0.0) d = grad;
      const double dn = d.cwiseAbs().maxCoeff();
      if (dn > 10.0) d *= 10.0 / dn;

      const double f0 = value(b, a);
      const double slope = grad.dot(d);
      double t = 1.0;
      bool accepted = false;
      for (int k = 0; k < 60; ++k, t *= 0.5) {
        trial = a;
        for (std::size_t i = 1; i < n; ++i) trial[b.verts[i]] += t * d(Eigen::Index(i - 1));
        const double f1 = value(b, trial);
        if (std::isfinite(f1) && f1 >= f0 + 1e-4 * t * slope) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        // No ascent left at double precision: accept if the residual is
        // merely at rounding level relative to the fluxes involved.
        double scale = 0.0;
        for (std::size_t e : b.edge_ids)
          scale = std::max(scale, w_[e] * exp_diff(a[edges_[e].to] - a[edges_[e].from]));
        if (res <= 1e-10 * std::max(1.0, scale)) return out;
        throw SolverError("Newton line search stalled (residual " + std::to_string(res) + ")");
      }
      a.swap(trial);
      if (cap_divergence) {
        double spread = 0.0;
        for (std::size_t z : b.verts) spread = std::max(spread, std::abs(a[z] - a[ref]));
        if (spread > kDivergenceCap) {
          out.diverged = true;
          out.iterations = it + 1;
          return out;
        }
      }
    }
  }

 private:
  const std::vector<Edge>& edges_;
  std::span<const double> w_;
  std::span<const double> r_;
};

// Connected components of the undirected graph of edges with w > 0.
std::vector<Block> undirected_blocks(std::size_t n, const std::vector<Edge>& edges, std::span<const double> w) {
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (std::size_t e = 0; e < edges.size(); ++e)
    if (w[e] > 0.0) parent[find(edges[e].from)] = find(edges[e].to);
  std::vector<std::size_t> id(n, n);
  std::vector<Block> blocks;
  for (std::size_t v = 0; v < n; ++v) {
    const std::size_t root = find(v);
    if (id[root] == n) {
      id[root] = blocks.size();
      blocks.emplace_back();
    }
    blocks[id[root]].verts.push_back(v);
  }
  for (std::size_t e = 0; e < edges.size(); ++e)
    if (w[e] > 0.0) blocks[id[find(edges[e].from)]].edge_ids.push_back(e);
  return blocks;
}

// Tarjan SCCs over `active` vertices and edges with w > 0. Components come out
// in reverse topological order (sinks first).
std::vector<std::size_t> strong_components(std::size_t n, const std::vector<Edge>& edges, std::span<const double> w,
                                           const std::vector<bool>& active, std::size_t& count) {
  std::vector<std::vector<std::size_t>> adj(n);
  for (std::size_t e = 0; e < edges.size(); ++e)
    if (w[e] > 0.0 && active[edges[e].from] && active[edges[e].to]) adj[edges[e].from].push_back(edges[e].to);
  constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::vector<std::size_t> index(n, none), low(n, 0), comp(n, none), stack;
  std::vector<bool> on_stack(n, false);
  std::size_t counter = 0;
  count = 0;
  std::function<void(std::size_t)> visit = [&](std::size_t v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack[v] = true;
    for (std::size_t u : adj[v]) {
      if (index[u] == none) {
        visit(u);
        low[v] = std::min(low[v], low[u]);
      } else if (on_stack[u]) {
        low[v] = std::min(low[v], index[u]);
      }
    }
    if (low[v] == index[v]) {
      std::size_t u;
      do {
        u = stack.back();
        stack.pop_back();
        on_stack[u] = false;
        comp[u] = count;
      } while (u != v);
      ++count;
    }
  };
  for (std::size_t v = 0; v < n; ++v)
    if (active[v] && index[v] == none) visit(v);
  return comp;
}

std::vector<double> gauge_fixed(std::vector<double> a) {
  if (!a.empty()) {
    const double shift = a[0];
    for (double& x : a) x -= shift;
  }
  return a;
}

double clamp_nonneg(double v) { return (v < 0.0 && v > -1e-12) ? 0.0 : v; }

}  // namespace

void LocalRateInput::validate(const ModelSpec& model) const {
  if (mu.size() != model.slow_size() || mu_dot.size() != model.slow_size())
    throw std::invalid_argument("LocalRateInput: mu/mu_dot dimension mismatch");
  if (m.size() != model.fast_size()) throw std::invalid_argument("LocalRateInput: m dimension mismatch");
  double s = 0.0;
  for (double v : mu_dot) {
    if (!std::isfinite(v)) throw std::invalid_argument("LocalRateInput: non-finite mu_dot");
    s += v;
  }
  if (std::abs(s) > 1e-10) throw std::invalid_argument("LocalRateInput: mu_dot does not sum to zero");
}

SlowRateResult local_slow_rate(const ModelSpec& model, const LocalRateInput& input, const ToleranceConfig& tol,
                               std::span<const double> warm_start) {
  input.validate(model);
  const auto& graph = model.slow_graph;
  const std::size_t n = graph.size();
  const auto lbar = averaged_rates(model, input.mu.weights(), input.m.weights());
  std::vector<double> w(graph.edge_count());
  for (std::size_t e = 0; e < w.size(); ++e) w[e] = lbar[e] * input.mu[graph.edge(e).from];

  // <a, mu_dot - Lambda* mu> - sum w tau(Da) = <a, mu_dot> - sum w (e^{Da} - 1)
  const std::span<const double> r(input.mu_dot);
  SlowRateResult res;
  res.alpha_hat.assign(n, 0.0);
  if (warm_start.size() == n)
    for (std::size_t i = 0; i < n; ++i) res.alpha_hat[i] = std::isfinite(warm_start[i]) ? warm_start[i] : 0.0;

  ExpObjective obj(graph.edges(), w, r);
  double value = 0.0;
  for (const auto& b : undirected_blocks(n, graph.edges(), w)) {
    double balance = 0.0;
    for (std::size_t z : b.verts) balance += r[z];
    if (std::abs(balance) > kBalanceTol) {
      res.diverged = true;
      continue;
    }
    if (b.verts.size() < 2) {
      res.alpha_hat[b.verts[0]] = 0.0;
      continue;
    }
    const double shift = res.alpha_hat[b.verts[0]];
    for (std::size_t z : b.verts) res.alpha_hat[z] -= shift;
    const auto o = obj.solve(b, res.alpha_hat, tol, true);
    res.iterations = std::max(res.iterations, o.iterations);
    if (o.diverged) {
      res.diverged = true;
      continue;
    }
    value += obj.value(b, res.alpha_hat);
  }

  res.h.resize(graph.edge_count());
  for (std::size_t e = 0; e < res.h.size(); ++e)
    res.h[e] = expm1_diff(res.alpha_hat[graph.edge(e).to] - res.alpha_hat[graph.edge(e).from]);
  std::vector<double> grad(r.begin(), r.end());
  for (std::size_t e = 0; e < res.h.size(); ++e) {
    const double flux = w[e] * (1.0 + res.h[e]);
    grad[graph.edge(e).to] -= flux;
    grad[graph.edge(e).from] += flux;
  }
  res.residual = sup_norm(grad);
  res.value = res.diverged ? kInf : clamp_nonneg(value);
  return res;
}

FastRateResult local_fast_rate(const ModelSpec& model, const SimplexVector& mu, const SimplexVector& m,
                               const ToleranceConfig& tol, std::span<const double> warm_start) {
  if (mu.size() != model.slow_size() || m.size() != model.fast_size())
    throw std::invalid_argument("local_fast_rate: dimension mismatch");
  const auto& graph = model.fast_graph;
  const std::size_t n = graph.size();
  const auto gamma = model.fast_rates_at(mu.weights());
  std::vector<double> c(graph.edge_count());
  for (std::size_t e = 0; e < c.size(); ++e) c[e] = m[graph.edge(e).from] * gamma[e];
  const std::vector<double> zero(n, 0.0);

  std::vector<bool> support(n);
  for (std::size_t y = 0; y < n; ++y) support[y] = m[y] > 0.0;
  std::size_t ncomp = 0;
  const auto comp = strong_components(n, graph.edges(), c, support, ncomp);

  FastRateResult res;
  double value = 0.0;
  std::vector<bool> cut(c.size(), false);
  std::vector<Block> blocks(ncomp);
  for (std::size_t y = 0; y < n; ++y)
    if (support[y]) blocks[comp[y]].verts.push_back(y);
  for (std::size_t e = 0; e < c.size(); ++e) {
    if (c[e] <= 0.0) continue;
    const auto& ed = graph.edge(e);
    if (support[ed.to] && comp[ed.to] == comp[ed.from]) {
      blocks[comp[ed.from]].edge_ids.push_back(e);
    } else {
      // Flux leaving a closed piece of the support: the optimizer switches it
      // off entirely, at cost c_e.
      cut[e] = true;
      value += c[e];
      res.diverged = true;
    }
  }

  // Offsets order the pieces so every cut edge points steeply downhill.
  res.g_hat.assign(n, 0.0);
  for (std::size_t y = 0; y < n; ++y)
    res.g_hat[y] = support[y] ? kDivergenceCap * static_cast<double>(comp[y]) : -kDivergenceCap;
  ExpObjective obj(graph.edges(), c, zero);
  for (const auto& b : blocks) {
    if (b.verts.size() < 2) continue;
    const double base = res.g_hat[b.verts[0]];
    if (warm_start.size() == n) {
      for (std::size_t y : b.verts) {
        const double d = warm_start[y] - warm_start[b.verts[0]];
        res.g_hat[y] = base + (std::isfinite(d) ? std::clamp(d, -kDivergenceCap, kDivergenceCap) : 0.0);
      }
    }
    const auto o = obj.solve(b, res.g_hat, tol, false);
    res.iterations = std::max(res.iterations, o.iterations);
    value += obj.value(b, res.g_hat);
  }
  res.g_hat = gauge_fixed(std::move(res.g_hat));

  res.h.resize(c.size());
  std::vector<double> balance(n, 0.0);
  for (std::size_t e = 0; e < c.size(); ++e) {
    const auto& ed = graph.edge(e);
    res.h[e] = cut[e] ? -1.0 : expm1_diff(res.g_hat[ed.to] - res.g_hat[ed.from]);
    const double flux = c[e] * (1.0 + res.h[e]);
    balance[ed.from] += flux;
    balance[ed.to] -= flux;
  }
  res.residual = sup_norm(balance);
  res.value = clamp_nonneg(value);
  return res;
}

LocalRateSolution local_rate(const ModelSpec& model, const LocalRateInput& input, const ToleranceConfig& tol) {
  const auto s = local_slow_rate(model, input, tol);
  const auto f = local_fast_rate(model, input.mu, input.m, tol);
  LocalRateSolution out;
  out.slow_value = s.value;
  out.fast_value = f.value;
  out.alpha_hat = s.alpha_hat;
  out.g_hat = f.g_hat;
  out.h_slow = s.h;
  out.h_fast = f.h;
  out.residual_slow = s.residual;
  out.residual_fast = f.residual;
  out.diverged_slow = s.diverged;
  out.diverged_fast = f.diverged;
  return out;
}

IdentityGaps nonvariational_identity(const ModelSpec& model, const LocalRateInput& input,
                                     const LocalRateSolution& solution) {
  const auto lbar = averaged_rates(model, input.mu.weights(), input.m.weights());
  double slow = 0.0;
  for (std::size_t e = 0; e < lbar.size(); ++e) {
    const double w = lbar[e] * input.mu[model.slow_graph.edge(e).from];
    if (w > 0.0) slow += tau_star(solution.h_slow[e]) * w;
  }
  const auto gamma = model.fast_rates_at(input.mu.weights());
  double fast = 0.0;
  for (std::size_t e = 0; e < gamma.size(); ++e) {
    const double c = gamma[e] * input.m[model.fast_graph.edge(e).from];
    if (c > 0.0) fast += tau_star(solution.h_fast[e]) * c;
  }
  return {std::abs(solution.slow_value - slow), std::abs(solution.fast_value - fast)};
}

namespace {

double uniform_step(const std::vector<double>& time) {
  if (time.size() < 2) throw std::invalid_argument("path_rate: need at least two grid points");
  const double h = time[1] - time[0];
  if (!(h > 0.0)) throw std::invalid_argument("path_rate: time grid must increase");
  const double span = std::max(1.0, std::abs(time.back()));
  for (std::size_t k = 0; k < time.size(); ++k)
    if (std::abs(time[k] - time[0] - static_cast<double>(k) * h) > 1e-9 * span)
      throw std::invalid_argument("path_rate: time grid is not uniform");
  return h;
}

std::vector<double> derivative_at(const TimeSeries& path, std::size_t k, double h) {
  const std::size_t last = path.time.size() - 1;
  const std::size_t lo = k == 0 ? 0 : k - 1;
  const std::size_t hi = k == last ? last : k + 1;
  const double dt = static_cast<double>(hi - lo) * h;
  std::vector<double> d(path.values[k].size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = (path.values[hi][i] - path.values[lo][i]) / dt;
  // Remove rounding drift so the tangent condition holds exactly.
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  for (double& x : d) x -= mean;
  return d;
}

}  // namespace

PathRateReport path_rate(const ModelSpec& model, const TimeSeries& mu_path, const TimeSeries& theta_density,
                         const ToleranceConfig& tol) {
  tol.validate();
  if (mu_path.time.size() != mu_path.values.size() || theta_density.time.size() != theta_density.values.size())
    throw std::invalid_argument("path_rate: series with mismatched time/value lengths");
  if (mu_path.time.size() != theta_density.time.size())
    throw std::invalid_argument("path_rate: mu and occupation series have different grids");
  for (std::size_t k = 0; k < mu_path.time.size(); ++k)
    if (std::abs(mu_path.time[k] - theta_density.time[k]) > 1e-12 * std::max(1.0, std::abs(mu_path.time[k])))
      throw std::invalid_argument("path_rate: mu and occupation series have different grids");
  const double h = uniform_step(mu_path.time);

  PathRateReport rep;
  rep.quadrature_step = h;
  std::vector<double> warm_alpha, warm_g;
  bool infinite = false;
  const std::size_t K = mu_path.time.size();
  for (std::size_t k = 0; k < K; ++k) {
    LocalRateInput in{mu_path.values[k], derivative_at(mu_path, k, h), theta_density.values[k]};
    const auto s = local_slow_rate(model, in, tol, warm_alpha);
    const auto f = local_fast_rate(model, in.mu, in.m, tol, warm_g);
    if (!s.diverged) warm_alpha = s.alpha_hat;
    warm_g = f.g_hat;
    rep.steps.push_back({mu_path.time[k], s.value, f.value, s.diverged, f.diverged});
    rep.alpha_hat.push_back(s.alpha_hat);
    rep.g_hat.push_back(f.g_hat);
    infinite = infinite || !std::isfinite(s.value) || !std::isfinite(f.value);
    const double weight = (k == 0 || k + 1 == K) ? 0.5 * h : h;
    rep.slow_part += weight * s.value;
    rep.fast_part += weight * f.value;
  }
  rep.J_total = infinite ? kInf : rep.slow_part + rep.fast_part;
  return rep;
}

namespace {

// Euclidean projection onto the probability simplex.
std::vector<double> project_simplex(std::vector<double> v) {
  std::vector<double> u(v);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cum += u[j];
    const double t = (cum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) theta = t;
  }
  double s = 0.0;
  for (double& x : v) {
    x = std::max(x - theta, 0.0);
    s += x;
  }
  for (double& x : v) x /= s;
  return v;
}

struct MarginalEval {
  double value = kInf;
  std::vector<double> grad;
};

MarginalEval marginal_eval(const ModelSpec& model, const SimplexVector& mu, std::span<const double> mu_dot,
                           const std::vector<double>& m, const ToleranceConfig& tol) {
  MarginalEval out;
  const SimplexVector mv(m, 1e-9);
  LocalRateInput in{mu, std::vector<double>(mu_dot.begin(), mu_dot.end()), mv};
  SlowRateResult s;
  FastRateResult f;
  try {
    s = local_slow_rate(model, in, tol);
    f = local_fast_rate(model, mu, mv, tol);
  } catch (const SolverError&) {
    return out;
  }
  if (s.diverged) return out;
  out.value = s.value + f.value;
  out.grad.assign(m.size(), 0.0);
  const auto& sg = model.slow_graph;
  std::vector<double> rates(sg.edge_count());
  for (std::size_t y = 0; y < m.size(); ++y) {
    model.slow_rates(mu.weights(), y, rates);
    for (std::size_t e = 0; e < rates.size(); ++e) out.grad[y] -= rates[e] * mu[sg.edge(e).from] * s.h[e];
  }
  const auto gamma = model.fast_rates_at(mu.weights());
  for (std::size_t e = 0; e < gamma.size(); ++e) out.grad[model.fast_graph.edge(e).from] -= gamma[e] * f.h[e];
  return out;
}

struct Descent {
  double value = kInf;
  std::vector<double> m;
  bool converged = false;
};

Descent projected_descent(const ModelSpec& model, const SimplexVector& mu, std::span<const double> mu_dot,
                          std::vector<double> m, const ToleranceConfig& tol) {
  Descent d;
  auto cur = marginal_eval(model, mu, mu_dot, m, tol);
  if (!std::isfinite(cur.value)) return d;
  double step = 0.1;
  for (int it = 0; it < 2000; ++it) {
    const double gn = sup_norm(cur.grad);
    const double scale = std::max(1.0, gn);
    bool moved = false;
    for (int bt = 0; bt < 60; ++bt, step *= 0.5) {
      std::vector<double> cand(m.size());
      for (std::size_t i = 0; i < m.size(); ++i) cand[i] = m[i] - step * cur.grad[i] / scale;
      cand = project_simplex(std::move(cand));
      double lin = 0.0, move = 0.0;
      for (std::size_t i = 0; i < m.size(); ++i) {
        lin += cur.grad[i] * (cand[i] - m[i]);
        move = std::max(move, std::abs(cand[i] - m[i]));
      }
      if (move < 1e-14) break;
      auto next = marginal_eval(model, mu, mu_dot, cand, tol);
      if (std::isfinite(next.value) && next.value <= cur.value + 1e-4 * lin) {
        const double gain = cur.value - next.value;
        m = std::move(cand);
        cur = std::move(next);
        moved = true;
        step = std::min(step * 2.0, 1.0);
        if (gain < 1e-14 * std::max(1.0, cur.value) && move < 1e-10) moved = false;
        break;
      }
    }
    if (!moved) {
      d.converged = true;
      break;
    }
  }
  d.value = cur.value;
  d.m = std::move(m);
  return d;
}

void simplex_grid(std::size_t dim, int steps, std::vector<double>& cur, std::size_t pos, int left,
                  const std::function<void(const std::vector<double>&)>& visit) {
  if (pos + 1 == dim) {
    cur[pos] = static_cast<double>(left) / steps;
    visit(cur);
    return;
  }
  for (int k = 0; k <= left; ++k) {
    cur[pos] = static_cast<double>(k) / steps;
    simplex_grid(dim, steps, cur, pos + 1, left - k, visit);
  }
}

}  // namespace

MarginalRate marginal_local_rate(const ModelSpec& model, const SimplexVector& mu, std::span<const double> mu_dot,
                                 const ToleranceConfig& tol) {
  const std::size_t ny = model.fast_size();
  std::vector<std::vector<double>> starts;
  starts.push_back(SimplexVector::uniform(ny).vector());
  try {
    starts.push_back(invariant_measure(model, mu.weights()).vector());
  } catch (const InvariantMeasureError&) {
  }
  for (std::size_t y = 0; y < ny; ++y) starts.push_back(SimplexVector::point_mass(ny, y).vector());

  Descent best;
  for (const auto& s : starts) {
    auto d = projected_descent(model, mu, mu_dot, s, tol);
    if (d.value < best.value) best = std::move(d);
  }
  if (ny <= 3) {
    // Grid sweep guards against starts that all stall on a nonsmooth face.
    const int steps = ny == 2 ? 200 : 40;
    std::vector<double> cur(ny), arg;
    double low = kInf;
    simplex_grid(ny, steps, cur, 0, steps, [&](const std::vector<double>& m) {
      const auto e = marginal_eval(model, mu, mu_dot, m, tol);
      if (e.value < low) {
        low = e.value;
        arg = m;
      }
    });
    if (!arg.empty() && low < best.value) {
      auto d = projected_descent(model, mu, mu_dot, arg, tol);
      if (d.value < best.value) best = std::move(d);
    }
  }
  MarginalRate out;
  if (best.m.empty()) {
    out.value = kInf;
    out.m_star = SimplexVector::uniform(ny);
    return out;
  }
  out.value = best.value;
  out.m_star = SimplexVector::renormalized(best.m, 1e-9);
  out.converged = best.converged;
  return out;
}

double initial_rate(const InitialRateSpec& spec, const SimplexVector& nu) {
  if (spec.reference.size() != nu.size()) throw std::invalid_argument("initial_rate: dimension mismatch");
  if (spec.kind == InitialRateSpec::Kind::Deterministic)
    return sup_distance(spec.reference.weights(), nu.weights()) <= 1e-12 ? 0.0 : kInf;
  double h = 0.0;
  for (std::size_t i = 0; i < nu.size(); ++i) {
    if (nu[i] == 0.0) continue;
    if (spec.reference[i] == 0.0) return kInf;
    h += nu[i] * std::log(nu[i] / spec.reference[i]);
  }
  return std::max(h, 0.0);
}

double tilt_cost(const ModelSpec& model, const TimeSeries& mu_path, const TimeSeries& m_path, const TiltSpec& tilt) {
  tilt.validate(model);
  if (mu_path.values.size() != m_path.values.size() || mu_path.time.size() != mu_path.values.size())
    throw std::invalid_argument("tilt_cost: series length mismatch");
  const double h = uniform_step(mu_path.time);
  const auto& sg = model.slow_graph;
  const auto& fg = model.fast_graph;
  double total = 0.0;
  const std::size_t K = mu_path.values.size();
  for (std::size_t k = 0; k < K; ++k) {
    const auto& mu = mu_path.values[k];
    const auto& m = m_path.values[k];
    const auto lbar = averaged_rates(model, mu.weights(), m.weights());
    double local = 0.0;
    for (std::size_t e = 0; e < lbar.size(); ++e) {
      const auto& ed = sg.edge(e);
      local += tau_star(std::expm1(tilt.alpha[ed.to] - tilt.alpha[ed.from])) * lbar[e] * mu[ed.from];
    }
    const auto gamma = model.fast_rates_at(mu.weights());
    for (std::size_t e = 0; e < gamma.size(); ++e) {
      const auto& ed = fg.edge(e);
      local += tau_star(std::expm1(tilt.g[ed.to] - tilt.g[ed.from])) * gamma[e] * m[ed.from];
    }
    total += ((k == 0 || k + 1 == K) ? 0.5 * h : h) * local;
  }
  return total;
}

void write_rate_report_json(std::ostream& out, const PathRateReport& report) {
  auto num = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return v > 0 ? "inf" : "-inf";
  };
  nlohmann::json j;
  j["J_total"] = num(report.J_total);
  j["slow_part"] = num(report.slow_part);
  j["fast_part"] = num(report.fast_part);
  j["quadrature_step"] = report.quadrature_step;
  auto& steps = j["steps"] = nlohmann::json::array();
  for (const auto& s : report.steps)
    steps.push_back({{"t", s.t},
                     {"slow", num(s.slow)},
                     {"fast", num(s.fast)},
                     {"diverged", s.diverged_slow || s.diverged_fast},
                     {"diverged_slow", s.diverged_slow},
                     {"diverged_fast", s.diverged_fast}});
  out << std::setw(2) << j << '\n';
}

void write_optimizer_csv(std::ostream& out, const ModelSpec& model, const TimeSeries& mu_path,
                         const PathRateReport& report) {
  out << "t";
  for (const auto& x : model.slow_graph.vertices()) out << ",alpha_" << x;
  for (const auto& y : model.fast_graph.vertices()) out << ",g_" << y;
  out << '\n' << std::setprecision(17);
  for (std::size_t k = 0; k < report.steps.size(); ++k) {
    out << (k < mu_path.time.size() ? mu_path.time[k] : report.steps[k].t);
    for (double a : report.alpha_hat[k]) out << ',' << a;
    for (double g : report.g_hat[k]) out << ',' << g;
    out << '\n';
  }
}

}  // namespace twoscale

#include "twoscale/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <thread>

namespace twoscale {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void check_state(const ModelSpec& model, int N, const SystemState& s) {
  if (N < 1) throw std::invalid_argument("simulate: N must be >= 1");
  if (s.counts.size() != model.slow_size()) throw std::invalid_argument("simulate: counts have wrong dimension");
  long total = 0;
  for (int c : s.counts) {
    if (c < 0) throw std::invalid_argument("simulate: negative count");
    total += c;
  }
  if (total != N) throw std::invalid_argument("simulate: counts do not sum to N");
  if (s.env >= model.fast_size()) throw std::invalid_argument("simulate: environment state out of range");
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

// ---------------------------------------------------------------- stepper

Simulator::Simulator(const ModelSpec& model, int N, SystemState initial, std::uint64_t seed)
    : model_(&model), N_(N), state_(std::move(initial)), rng_(seed) {
  check_state(model, N, state_);
  xi_.resize(model.slow_size());
  slow_rates_.resize(model.slow_graph.edge_count());
  fast_rates_.resize(model.fast_graph.edge_count());
  refresh_rates();
}

double Simulator::uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

void Simulator::refresh_rates() {
  const double inv_n = 1.0 / static_cast<double>(N_);
  for (std::size_t x = 0; x < xi_.size(); ++x) xi_[x] = state_.counts[x] * inv_n;
  model_->slow_rates(xi_, state_.env, slow_rates_);
  model_->fast_rates(xi_, fast_rates_);
  const auto& slow = model_->slow_graph;
  slow_total_ = 0.0;
  for (std::size_t e = 0; e < slow_rates_.size(); ++e) {
    if (!std::isfinite(slow_rates_[e]) || slow_rates_[e] < 0.0)
      throw SimulationError("simulate: slow rate on edge " + std::to_string(e) + " is negative or non-finite");
    slow_rates_[e] *= state_.counts[slow.edge(e).from];
    slow_total_ += slow_rates_[e];
  }
  fast_total_ = 0.0;
  for (std::size_t e : model_->fast_graph.out_edges(state_.env)) {
    if (!std::isfinite(fast_rates_[e]) || fast_rates_[e] < 0.0)
      throw SimulationError("simulate: fast rate on edge " + std::to_string(e) + " is negative or non-finite");
    fast_total_ += fast_rates_[e];
  }
  fast_total_ *= static_cast<double>(N_);
  const double total = slow_total_ + fast_total_;
  if (total <= 0.0) {
    absorbed_ = true;
    next_time_ = kInf;
    return;
  }
  next_time_ = state_.t - std::log1p(-uniform()) / total;
}

bool Simulator::step_until(double t_limit) {
  if (absorbed_ || next_time_ > t_limit) return false;
  const double total = slow_total_ + fast_total_;
  double pick = uniform() * total;
  state_.t = next_time_;
  const auto& slow = model_->slow_graph;
  if (pick < slow_total_) {
    std::size_t chosen = slow_rates_.size();
    for (std::size_t e = 0; e < slow_rates_.size(); ++e) {
      if (slow_rates_[e] <= 0.0) continue;
      chosen = e;
      if (pick < slow_rates_[e]) break;
      pick -= slow_rates_[e];
    }
    const auto& ed = slow.edge(chosen);
    --state_.counts[ed.from];
    ++state_.counts[ed.to];
    last_kind_ = EventKind::Slow;
    last_edge_ = chosen;
  } else {
    pick = (pick - slow_total_) / static_cast<double>(N_);
    const auto& outs = model_->fast_graph.out_edges(state_.env);
    std::size_t chosen = outs.front();
    for (std::size_t e : outs) {
      if (fast_rates_[e] <= 0.0) continue;
      chosen = e;
      if (pick < fast_rates_[e]) break;
      pick -= fast_rates_[e];
    }
    state_.env = model_->fast_graph.edge(chosen).to;
    last_kind_ = EventKind::Fast;
    last_edge_ = chosen;
  }
  refresh_rates();
  return true;
}

// ---------------------------------------------------------------- paths

const SystemState& SimulationPath::state_at(double t) const {
  const auto it = std::upper_bound(jump_times.begin(), jump_times.end(), t);
  if (it == jump_times.begin()) return initial;
  return states[static_cast<std::size_t>(it - jump_times.begin()) - 1];
}

SystemState initial_state(const SimplexVector& nu, int N, std::size_t env) {
  if (N < 1) throw std::invalid_argument("initial_state: N must be >= 1");
  SystemState s;
  s.env = env;
  s.counts.resize(nu.size());
  std::vector<std::pair<double, std::size_t>> frac;
  int assigned = 0;
  for (std::size_t x = 0; x < nu.size(); ++x) {
    const double target = nu[x] * N;
    s.counts[x] = static_cast<int>(std::floor(target));
    assigned += s.counts[x];
    frac.emplace_back(target - s.counts[x], x);
  }
  std::stable_sort(frac.begin(), frac.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < N; ++k, ++assigned) ++s.counts[frac[k % frac.size()].second];
  return s;
}

SimulationPath simulate(const ModelSpec& model, int N, const SystemState& initial, double T, std::uint64_t seed) {
  if (!(T > 0.0)) throw std::invalid_argument("simulate: T must be positive");
  SimulationPath path;
  path.initial = initial;
  path.initial.t = 0.0;
  path.N = N;
  path.T = T;
  path.seed = seed;
  Simulator sim(model, N, path.initial, seed);
  while (sim.step_until(T)) {
    path.jump_times.push_back(sim.state().t);
    path.states.push_back(sim.state());
    path.kinds.push_back(sim.last_kind());
    path.edges.push_back(sim.last_edge());
  }
  path.absorbed = sim.absorbed();
  return path;
}

TimeSeries empirical_path(const SimulationPath& path, double grid_step) {
  if (!(grid_step > 0.0)) throw std::invalid_argument("empirical_path: grid_step must be positive");
  TimeSeries out;
  const auto steps = static_cast<std::size_t>(std::floor(path.T / grid_step + 1e-9));
  std::size_t j = 0;
  const SystemState* cur = &path.initial;
  const double inv_n = 1.0 / path.N;
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * grid_step;
    while (j < path.jump_times.size() && path.jump_times[j] <= t) cur = &path.states[j++];
    std::vector<double> w(cur->counts.size());
    for (std::size_t x = 0; x < w.size(); ++x) w[x] = cur->counts[x] * inv_n;
    out.time.push_back(t);
    out.values.push_back(SimplexVector::renormalized(std::move(w), 1e-12));
  }
  return out;
}

OccupationMeasure occupation(const SimulationPath& path, std::size_t env_count, double grid_step) {
  if (!(grid_step > 0.0)) throw std::invalid_argument("occupation: grid_step must be positive");
  OccupationMeasure occ;
  const auto steps = static_cast<std::size_t>(std::floor(path.T / grid_step + 1e-9));
  std::vector<long double> acc(env_count, 0.0L);
  long double last_t = 0.0L;
  std::size_t env = path.initial.env;
  std::size_t j = 0;
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * grid_step;
    while (j < path.jump_times.size() && path.jump_times[j] <= t) {
      acc[env] += static_cast<long double>(path.jump_times[j]) - last_t;
      last_t = path.jump_times[j];
      env = path.states[j].env;
      ++j;
    }
    std::vector<double> mass(env_count);
    for (std::size_t y = 0; y < env_count; ++y) mass[y] = static_cast<double>(acc[y]);
    mass[env] = static_cast<double>(acc[env] + (static_cast<long double>(t) - last_t));
    occ.grid.push_back(t);
    occ.mass.push_back(std::move(mass));
  }
  return occ;
}

// ---------------------------------------------------------------- tilts

TiltSpec TiltSpec::make(std::vector<double> alpha, std::vector<double> g) {
  for (double a : alpha)
    if (!std::isfinite(a)) throw std::invalid_argument("TiltSpec: non-finite alpha");
  for (double v : g)
    if (!std::isfinite(v)) throw std::invalid_argument("TiltSpec: non-finite g");
  if (!alpha.empty()) {
    const double a0 = alpha[0];
    for (double& a : alpha) a -= a0;
  }
  if (!g.empty()) {
    const double g0 = g[0];
    for (double& v : g) v -= g0;
  }
  return TiltSpec{std::move(alpha), std::move(g)};
}

TiltSpec TiltSpec::zero(const ModelSpec& model) {
  return TiltSpec{std::vector<double>(model.slow_size(), 0.0), std::vector<double>(model.fast_size(), 0.0)};
}

void TiltSpec::validate(const ModelSpec& model) const {
  if (alpha.size() != model.slow_size() || g.size() != model.fast_size())
    throw std::invalid_argument("TiltSpec: dimensions do not match the model");
  for (double a : alpha)
    if (!std::isfinite(a)) throw std::invalid_argument("TiltSpec: non-finite alpha");
  for (double v : g)
    if (!std::isfinite(v)) throw std::invalid_argument("TiltSpec: non-finite g");
  if (alpha[0] != 0.0 || g[0] != 0.0) throw std::invalid_argument("TiltSpec: gauge alpha[0] = g[0] = 0 violated");
}

double TiltSpec::sup_norm() const { return std::max(twoscale::sup_norm(alpha), twoscale::sup_norm(g)); }

PathFunctionals path_functionals_UV(const ModelSpec& model, const SimulationPath& path, const TiltSpec& tilt,
                                    Compensator comp) {
  tilt.validate(model);
  const auto& slow = model.slow_graph;
  const auto& fast = model.fast_graph;
  std::vector<double> d_alpha(slow.edge_count()), d_g(fast.edge_count());
  std::vector<double> slow_weight(slow.edge_count()), fast_weight(fast.edge_count());
  const bool with_tau = comp == Compensator::Full;
  for (std::size_t e = 0; e < slow.edge_count(); ++e) {
    d_alpha[e] = tilt.alpha[slow.edge(e).to] - tilt.alpha[slow.edge(e).from];
    slow_weight[e] = d_alpha[e] + (with_tau ? tau(d_alpha[e]) : 0.0);
  }
  for (std::size_t e = 0; e < fast.edge_count(); ++e) {
    d_g[e] = tilt.g[fast.edge(e).to] - tilt.g[fast.edge(e).from];
    fast_weight[e] = d_g[e] + (with_tau ? tau(d_g[e]) : 0.0);
  }

  const double inv_n = 1.0 / path.N;
  std::vector<double> xi(model.slow_size());
  std::vector<double> lam(slow.edge_count()), gam(fast.edge_count());
  // Compensator intensity while the state is constant.
  auto intensity = [&](const SystemState& s) {
    for (std::size_t x = 0; x < xi.size(); ++x) xi[x] = s.counts[x] * inv_n;
    model.slow_rates(xi, s.env, lam);
    model.fast_rates(xi, gam);
    double a = 0.0;
    for (std::size_t e = 0; e < lam.size(); ++e) a += xi[slow.edge(e).from] * lam[e] * slow_weight[e];
    for (std::size_t e : fast.out_edges(s.env)) a += gam[e] * fast_weight[e];
    return a;
  };

  long double jump_sum = 0.0L;
  long double integral = 0.0L;
  const SystemState* cur = &path.initial;
  double t_prev = 0.0;
  double rate = intensity(*cur);
  for (std::size_t k = 0; k < path.jump_times.size(); ++k) {
    integral += static_cast<long double>(rate) * (path.jump_times[k] - t_prev);
    if (path.kinds[k] == EventKind::Slow) jump_sum += d_alpha[path.edges[k]] * inv_n;
    t_prev = path.jump_times[k];
    cur = &path.states[k];
    rate = intensity(*cur);
  }
  integral += static_cast<long double>(rate) * (path.T - t_prev);

  PathFunctionals out;
  out.U = static_cast<double>(jump_sum - integral);
  out.V = tilt.g[cur->env] - tilt.g[path.initial.env];
  if (!std::isfinite(out.U) || !std::isfinite(out.V)) throw SimulationError("path_functionals_UV: non-finite result");
  return out;
}

ModelSpec tilted_model(const ModelSpec& model, const TiltSpec& tilt) {
  tilt.validate(model);
  std::vector<double> slow_factor(model.slow_graph.edge_count()), fast_factor(model.fast_graph.edge_count());
  for (std::size_t e = 0; e < slow_factor.size(); ++e) {
    const auto& ed = model.slow_graph.edge(e);
    slow_factor[e] = std::exp(tilt.alpha[ed.to] - tilt.alpha[ed.from]);
  }
  for (std::size_t e = 0; e < fast_factor.size(); ++e) {
    const auto& ed = model.fast_graph.edge(e);
    fast_factor[e] = std::exp(tilt.g[ed.to] - tilt.g[ed.from]);
  }
  ModelSpec out;
  out.name = model.name + "+tilt";
  out.slow_graph = model.slow_graph;
  out.fast_graph = model.fast_graph;
  out.slow_rates = [base = model.slow_rates, slow_factor](std::span<const double> xi, std::size_t y,
                                                          std::span<double> r) {
    base(xi, y, r);
    for (std::size_t e = 0; e < r.size(); ++e) r[e] *= slow_factor[e];
  };
  out.fast_rates = [base = model.fast_rates, fast_factor](std::span<const double> xi, std::span<double> r) {
    base(xi, r);
    for (std::size_t e = 0; e < r.size(); ++e) r[e] *= fast_factor[e];
  };
  return out;
}

// ---------------------------------------------------------------- ensembles

void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& body) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += threads) body(i);
    });
  for (auto& t : pool) t.join();
}

EnsembleStats ensemble(const ModelSpec& model, int N, const SystemState& initial, double T, std::size_t replicas,
                       std::uint64_t seed, const PathFunctional& functional, unsigned threads) {
  if (replicas < 1) throw std::invalid_argument("ensemble: replicas must be >= 1");
  EnsembleStats st;
  st.replicas = replicas;
  st.values.assign(replicas, std::nan(""));
  std::vector<std::string> errors(replicas);
  parallel_for(replicas, threads, [&](std::size_t r) {
    try {
      const auto path = simulate(model, N, initial, T, derive_seed(seed, r));
      st.values[r] = functional(path);
    } catch (const std::exception& e) {
      errors[r] = e.what();
    }
  });
  double sum = 0.0;
  std::size_t ok = 0;
  for (std::size_t r = 0; r < replicas; ++r) {
    if (!errors[r].empty()) {
      st.failures.push_back(r);
      st.failure_messages.push_back(errors[r]);
      continue;
    }
    sum += st.values[r];
    ++ok;
  }
  if (ok == 0) return st;
  st.mean = sum / static_cast<double>(ok);
  double ss = 0.0;
  for (std::size_t r = 0; r < replicas; ++r)
    if (errors[r].empty()) ss += (st.values[r] - st.mean) * (st.values[r] - st.mean);
  st.var = ok > 1 ? ss / static_cast<double>(ok - 1) : 0.0;
  st.std_error = std::sqrt(st.var / static_cast<double>(ok));
  st.ci95_low = st.mean - 1.959963984540054 * st.std_error;
  st.ci95_high = st.mean + 1.959963984540054 * st.std_error;
  return st;
}

void write_path_csv(std::ostream& out, const ModelSpec& model, const SimulationPath& path) {
  out << "t";
  for (const auto& x : model.slow_graph.vertices()) out << ",count_" << x;
  out << ",env\n" << std::setprecision(17);
  auto row = [&](double t, const SystemState& s) {
    out << t;
    for (int c : s.counts) out << ',' << c;
    out << ',' << model.fast_graph.vertices()[s.env] << '\n';
  };
  row(0.0, path.initial);
  for (std::size_t k = 0; k < path.jump_times.size(); ++k) row(path.jump_times[k], path.states[k]);
}

void write_occupation_csv(std::ostream& out, const ModelSpec& model, const OccupationMeasure& occ) {
  out << "t";
  for (const auto& y : model.fast_graph.vertices()) out << ",theta_" << y;
  out << '\n' << std::setprecision(17);
  for (std::size_t k = 0; k < occ.grid.size(); ++k) {
    out << occ.grid[k];
    for (double m : occ.mass[k]) out << ',' << m;
    out << '\n';
  }
}

}  // namespace twoscale

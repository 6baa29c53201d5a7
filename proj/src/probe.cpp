#include "twoscale/probe.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "json.hpp"

namespace twoscale {

namespace {

double quantile(std::vector<double> v, double q) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::size_t likely_env(const ModelSpec& model, const SimplexVector& nu) {
  const auto pi = invariant_measure(model, nu.weights());
  return static_cast<std::size_t>(std::max_element(pi.weights().begin(), pi.weights().end()) - pi.weights().begin());
}

void throw_on_failures(const EnsembleStats& st) {
  if (!st.failures.empty())
    throw SimulationError("replica " + std::to_string(st.failures.front()) + " failed: " + st.failure_messages.front());
}

nlohmann::json number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return nullptr;
  return v > 0 ? "inf" : "-inf";
}

}  // namespace

AveragingReport averaging_check(const ModelSpec& model, const SimplexVector& nu, const std::vector<int>& Ns, double T,
                                std::size_t replicas, std::uint64_t seed, unsigned threads, double grid_step) {
  if (Ns.empty() || !std::is_sorted(Ns.begin(), Ns.end()) || Ns.front() < 1)
    throw std::invalid_argument("averaging_check: Ns must be positive and increasing");
  if (replicas < 10) throw std::invalid_argument("averaging_check: need at least 10 replicas");
  const auto flow = mckean_vlasov_flow(model, nu, T, grid_step);
  const std::size_t env = likely_env(model, nu);

  AveragingReport rep;
  rep.Ns = Ns;
  rep.T = T;
  for (std::size_t i = 0; i < Ns.size(); ++i) {
    const int N = Ns[i];
    const auto init = initial_state(nu, N, env);
    const auto st = ensemble(
        model, N, init, T, replicas, derive_seed(seed, i),
        [&](const SimulationPath& path) {
          const auto emp = empirical_path(path, flow.step);
          double dev = 0.0;
          const std::size_t K = std::min(emp.values.size(), flow.mu.size());
          for (std::size_t k = 0; k < K; ++k)
            dev = std::max(dev, sup_distance(emp.values[k].weights(), flow.mu[k].weights()));
          return dev;
        },
        threads);
    throw_on_failures(st);
    rep.deviations.push_back({N, quantile(st.values, 0.5), quantile(st.values, 0.9), st.values});
  }
  return rep;
}

OccupationReport occupation_check(const ModelSpec& model, const SimplexVector& nu, int N, double T, double window,
                                  std::size_t replicas, std::uint64_t seed, unsigned threads) {
  if (!(window > 0.0) || window > T) throw std::invalid_argument("occupation_check: need 0 < window <= T");
  if (window < 10.0 / N) throw std::invalid_argument("occupation_check: window must be at least 10/N");
  const std::size_t ny = model.fast_size();
  const auto windows = static_cast<std::size_t>(std::floor(T / window + 1e-9));

  OccupationReport rep;
  rep.N = N;
  rep.T = T;
  rep.window = window;
  const auto st = ensemble(
      model, N, initial_state(nu, N, likely_env(model, nu)), T, replicas, seed,
      [&](const SimulationPath& path) {
        double worst = 0.0;
        std::size_t j = 0;
        std::size_t env = path.initial.env;
        for (std::size_t w = 0; w < windows; ++w) {
          const double a = static_cast<double>(w) * window;
          const double b = a + window;
          std::vector<double> time_in(ny, 0.0);
          double t = a;
          while (j < path.jump_times.size() && path.jump_times[j] <= b) {
            time_in[env] += path.jump_times[j] - t;
            t = path.jump_times[j];
            env = path.states[j].env;
            ++j;
          }
          time_in[env] += b - t;
          const auto& mid = path.state_at(a + 0.5 * window);
          std::vector<double> xi(mid.counts.size());
          for (std::size_t x = 0; x < xi.size(); ++x) xi[x] = static_cast<double>(mid.counts[x]) / N;
          const auto pi = invariant_measure(model, xi);
          double tv = 0.0;
          for (std::size_t y = 0; y < ny; ++y) tv += std::abs(time_in[y] / window - pi[y]);
          worst = std::max(worst, 0.5 * tv);
        }
        return worst;
      },
      threads);
  throw_on_failures(st);
  rep.values = st.values;
  rep.median = quantile(st.values, 0.5);
  rep.q90 = quantile(st.values, 0.9);
  // Jump density per window is deterministic in expectation; a single
  // representative replica is enough to warn about sparse windows.
  const auto probe_path = simulate(model, N, initial_state(nu, N, likely_env(model, nu)), T, derive_seed(seed, 0));
  std::size_t j = 0;
  for (std::size_t w = 0; w < windows; ++w) {
    const double b = static_cast<double>(w + 1) * window;
    std::size_t fast_jumps = 0;
    for (; j < probe_path.jump_times.size() && probe_path.jump_times[j] <= b; ++j)
      if (probe_path.kinds[j] == EventKind::Fast) ++fast_jumps;
    if (fast_jumps < 10) ++rep.sparse_windows;
  }
  if (rep.sparse_windows > 0)
    rep.warnings.push_back(std::to_string(rep.sparse_windows) + " windows with fewer than 10 fast jumps");
  return rep;
}

MartingaleReport martingale_battery(const ModelSpec& model, const SimplexVector& nu, int N, double T,
                                    const std::vector<TiltSpec>& tilts, std::size_t replicas, std::uint64_t seed,
                                    unsigned threads, Compensator comp) {
  if (tilts.empty()) throw std::invalid_argument("martingale_battery: no tilts");
  const auto init = initial_state(nu, N, likely_env(model, nu));
  MartingaleReport rep;
  rep.N = N;
  rep.T = T;
  rep.replicas = replicas;
  std::size_t good = 0;
  for (std::size_t i = 0; i < tilts.size(); ++i) {
    tilts[i].validate(model);
    const auto st = ensemble(
        model, N, init, T, replicas, derive_seed(seed, i),
        [&](const SimulationPath& path) {
          return std::exp(path_functionals_UV(model, path, tilts[i], comp).log_martingale(N));
        },
        threads);
    throw_on_failures(st);
    MartingaleEntry e;
    e.tilt = tilts[i];
    e.mean = st.mean;
    e.std_error = st.std_error;
    e.variance = st.var;
    e.variance_overflow = !std::isfinite(st.var) || st.var > kMartingaleVarianceCap;
    if (st.std_error > 0.0)
      e.z = (st.mean - 1.0) / st.std_error;
    else
      e.z = std::abs(st.mean - 1.0) <= 1e-12 ? 0.0 : kInf;
    if (std::abs(e.z) <= 3.0) ++good;
    rep.entries.push_back(std::move(e));
  }
  rep.pass_fraction = static_cast<double>(good) / static_cast<double>(tilts.size());
  return rep;
}

ExponentProbe exponent_probe(const ModelSpec& model, const SimplexVector& nu, const TiltSpec& tilt, double delta,
                             const std::vector<int>& Ns, std::size_t replicas, std::uint64_t seed, double T,
                             unsigned threads, double check_step) {
  tilt.validate(model);
  if (!(delta > 0.0)) throw std::invalid_argument("exponent_probe: delta must be positive");
  if (replicas < 1) throw std::invalid_argument("exponent_probe: replicas must be >= 1");
  constexpr double flow_step = 1e-3;
  const auto stride = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(check_step / flow_step)));

  ExponentProbe rep;
  rep.tilt = tilt;
  rep.delta = delta;
  rep.T = T;
  const auto tilted = tilted_model(model, tilt);
  rep.target_path = mckean_vlasov_flow(tilted, nu, T, flow_step);
  TimeSeries mu_series{rep.target_path.time, rep.target_path.mu};
  TimeSeries m_series{rep.target_path.time, rep.target_path.pi};
  rep.predicted = path_rate(model, mu_series, m_series).J_total;
  rep.predicted_direct = tilt_cost(model, mu_series, m_series, tilt);

  const std::size_t env = likely_env(model, nu);
  const auto& target = rep.target_path;
  for (std::size_t i = 0; i < Ns.size(); ++i) {
    const int N = Ns[i];
    const auto init = initial_state(nu, N, env);
    std::vector<char> hit(replicas, 0);
    const std::uint64_t stream = derive_seed(seed, i);
    parallel_for(replicas, threads, [&](std::size_t r) {
      Simulator sim(model, N, init, derive_seed(stream, r));
      std::vector<double> xi(init.counts.size());
      for (std::size_t k = 0; k < target.time.size(); k += stride) {
        while (sim.step_until(target.time[k])) {
        }
        const auto& c = sim.state().counts;
        for (std::size_t x = 0; x < xi.size(); ++x) xi[x] = static_cast<double>(c[x]) / N;
        if (sup_distance(xi, target.mu[k].weights()) > delta) return;
      }
      hit[r] = 1;
    });
    ExponentEstimate est;
    est.N = N;
    est.replicas = replicas;
    est.hits = static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1));
    const double p = static_cast<double>(std::max<std::size_t>(est.hits, 1)) / static_cast<double>(replicas);
    est.lower_bound = est.hits == 0;
    est.estimate = -std::log(p) / N;
    est.relative_gap = rep.predicted > 0.0 ? std::abs(est.estimate - rep.predicted) / rep.predicted : kInf;
    rep.estimates.push_back(est);
  }
  return rep;
}

void write_averaging_json(std::ostream& out, const AveragingReport& rep) {
  nlohmann::json j;
  j["T"] = rep.T;
  j["Ns"] = rep.Ns;
  auto& devs = j["deviations"] = nlohmann::json::array();
  for (const auto& d : rep.deviations) devs.push_back({{"N", d.N}, {"median", d.median}, {"q90", d.q90}});
  out << std::setw(2) << j << '\n';
}

void write_occupation_json(std::ostream& out, const OccupationReport& rep) {
  nlohmann::json j{{"N", rep.N},       {"T", rep.T},   {"window", rep.window},
                   {"median", rep.median}, {"q90", rep.q90}, {"sparse_windows", rep.sparse_windows},
                   {"warnings", rep.warnings}};
  out << std::setw(2) << j << '\n';
}

void write_martingale_json(std::ostream& out, const MartingaleReport& rep) {
  nlohmann::json j{{"N", rep.N}, {"T", rep.T}, {"replicas", rep.replicas}, {"pass_fraction", rep.pass_fraction},
                   {"passes", rep.passes()}};
  auto& arr = j["tilts"] = nlohmann::json::array();
  for (const auto& e : rep.entries)
    arr.push_back({{"alpha", e.tilt.alpha},
                   {"g", e.tilt.g},
                   {"mean", number(e.mean)},
                   {"stderr", number(e.std_error)},
                   {"z", number(e.z)},
                   {"variance_overflow", e.variance_overflow}});
  out << std::setw(2) << j << '\n';
}

void write_exponent_json(std::ostream& out, const ExponentProbe& rep) {
  nlohmann::json j{{"alpha", rep.tilt.alpha},
                   {"g", rep.tilt.g},
                   {"delta", rep.delta},
                   {"T", rep.T},
                   {"predicted", number(rep.predicted)},
                   {"predicted_direct", number(rep.predicted_direct)}};
  auto& arr = j["estimates"] = nlohmann::json::array();
  for (const auto& e : rep.estimates)
    arr.push_back({{"N", e.N},
                   {"replicas", e.replicas},
                   {"hits", e.hits},
                   {"estimate", number(e.estimate)},
                   {"lower_bound", e.lower_bound},
                   {"relative_gap", number(e.relative_gap)}});
  out << std::setw(2) << j << '\n';
}

void write_exponent_hits_csv(std::ostream& out, const ExponentProbe& rep) {
  out << "N,replicas,hits,estimate,lower_bound\n" << std::setprecision(17);
  for (const auto& e : rep.estimates)
    out << e.N << ',' << e.replicas << ',' << e.hits << ',' << e.estimate << ',' << (e.lower_bound ? 1 : 0) << '\n';
}

}  // namespace twoscale

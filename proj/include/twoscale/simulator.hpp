#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <vector>

#include "twoscale/core_math.hpp"
#include "twoscale/model.hpp"

namespace twoscale {

struct SystemState {
  std::vector<int> counts;  // particles per slow state, summing to N
  std::size_t env = 0;
  double t = 0.0;
};

enum class EventKind : std::uint8_t { Slow, Fast };

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One exact sample path on [0, T]. `states[k]` is the state right after the
/// jump at `jump_times[k]`.
struct SimulationPath {
  SystemState initial;
  std::vector<double> jump_times;
  std::vector<SystemState> states;
  std::vector<EventKind> kinds;
  std::vector<std::size_t> edges;  // slow or fast edge index, per jump
  int N = 0;
  double T = 0.0;
  std::uint64_t seed = 0;
  bool absorbed = false;  // total rate hit zero; the path is constant afterwards

  /// Cadlag state at time t in [0, T].
  [[nodiscard]] const SystemState& state_at(double t) const;
};

/// Seed for replica `index` of a stream rooted at `seed` (SplitMix64 mixing).
[[nodiscard]] std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// Direct-method Gillespie stepper for the joint (counts, environment)
/// process. All rates are recomputed after every event.
class Simulator {
 public:
  Simulator(const ModelSpec& model, int N, SystemState initial, std::uint64_t seed);

  /// Executes the next event if it occurs at or before `t_limit`.
  /// Returns false (state untouched) otherwise or when absorbed.
  bool step_until(double t_limit);

  [[nodiscard]] const SystemState& state() const { return state_; }
  [[nodiscard]] double next_event_time() const { return next_time_; }
  [[nodiscard]] bool absorbed() const { return absorbed_; }
  [[nodiscard]] EventKind last_kind() const { return last_kind_; }
  [[nodiscard]] std::size_t last_edge() const { return last_edge_; }
  [[nodiscard]] std::span<const double> xi() const { return xi_; }

 private:
  void refresh_rates();
  double uniform();

  const ModelSpec* model_;
  int N_;
  SystemState state_;
  std::mt19937_64 rng_;
  std::vector<double> xi_;
  std::vector<double> slow_rates_;
  std::vector<double> fast_rates_;
  double slow_total_ = 0.0;
  double fast_total_ = 0.0;
  double next_time_ = 0.0;
  bool absorbed_ = false;
  EventKind last_kind_ = EventKind::Slow;
  std::size_t last_edge_ = 0;
};

/// Initial state from a slow-state law: counts = round(N nu) with the
/// rounding remainder assigned by largest fractional part.
[[nodiscard]] SystemState initial_state(const SimplexVector& nu, int N, std::size_t env);

[[nodiscard]] SimulationPath simulate(const ModelSpec& model, int N, const SystemState& initial, double T,
                                      std::uint64_t seed);

struct TimeSeries {
  std::vector<double> time;
  std::vector<SimplexVector> values;
};

/// counts/N on the grid 0, step, ..., T (value after jumps at jump times).
[[nodiscard]] TimeSeries empirical_path(const SimulationPath& path, double grid_step);

struct OccupationMeasure {
  std::vector<double> grid;
  std::vector<std::vector<double>> mass;  // mass[k][y]: time spent in y up to grid[k]
};

[[nodiscard]] OccupationMeasure occupation(const SimulationPath& path, std::size_t env_count, double grid_step);

/// Constant log-tilts of slow (alpha, over slow states) and fast (g, over fast
/// states) rates, gauge-fixed so alpha[0] = g[0] = 0.
struct TiltSpec {
  std::vector<double> alpha;
  std::vector<double> g;

  /// Shifts both vectors into the gauge; throws on non-finite entries.
  [[nodiscard]] static TiltSpec make(std::vector<double> alpha, std::vector<double> g);
  [[nodiscard]] static TiltSpec zero(const ModelSpec& model);
  void validate(const ModelSpec& model) const;
  [[nodiscard]] double sup_norm() const;
};

enum class Compensator { Full, WithoutTau };

struct PathFunctionals {
  double U = 0.0;
  double V = 0.0;
  /// log of the unit-mean martingale, N U + V.
  [[nodiscard]] double log_martingale(int N) const { return static_cast<double>(N) * U + V; }
};

/// U_T and V_T for constant tilts along a sample path. `Compensator::WithoutTau`
/// drops the tau terms and exists only as a negative control.
[[nodiscard]] PathFunctionals path_functionals_UV(const ModelSpec& model, const SimulationPath& path,
                                                  const TiltSpec& tilt, Compensator comp = Compensator::Full);

/// Rates multiplied by exp(alpha(x') - alpha(x)) and exp(g(y') - g(y)).
[[nodiscard]] ModelSpec tilted_model(const ModelSpec& model, const TiltSpec& tilt);

struct EnsembleStats {
  std::size_t replicas = 0;
  double mean = 0.0;
  double var = 0.0;
  double std_error = 0.0;
  double ci95_low = 0.0;
  double ci95_high = 0.0;
  std::vector<double> values;           // per replica, NaN for failures
  std::vector<std::size_t> failures;    // replica indices whose simulation threw
  std::vector<std::string> failure_messages;
};

using PathFunctional = std::function<double(const SimulationPath&)>;

/// Independent replicas with seeds derive_seed(seed, index). Results do not
/// depend on `threads`.
[[nodiscard]] EnsembleStats ensemble(const ModelSpec& model, int N, const SystemState& initial, double T,
                                     std::size_t replicas, std::uint64_t seed, const PathFunctional& functional,
                                     unsigned threads = 1);

/// Runs body(index) for index in [0, count) over `threads` workers.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& body);

void write_path_csv(std::ostream& out, const ModelSpec& model, const SimulationPath& path);
void write_occupation_csv(std::ostream& out, const ModelSpec& model, const OccupationMeasure& occ);

}  // namespace twoscale

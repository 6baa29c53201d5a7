#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "twoscale/averaging.hpp"
#include "twoscale/core_math.hpp"
#include "twoscale/model.hpp"
#include "twoscale/ratefn.hpp"
#include "twoscale/simulator.hpp"

namespace twoscale {

struct DeviationStats {
  int N = 0;
  double median = 0.0;
  double q90 = 0.0;
  std::vector<double> values;  // per replica
};

struct AveragingReport {
  std::vector<int> Ns;
  std::vector<DeviationStats> deviations;
  double T = 0.0;
};

/// sup_t |mu_N(t) - mu_t|_inf against the averaged flow, sampled on a grid of
/// step `grid_step`. The environment starts in the most likely state of pi_nu.
[[nodiscard]] AveragingReport averaging_check(const ModelSpec& model, const SimplexVector& nu,
                                              const std::vector<int>& Ns, double T, std::size_t replicas,
                                              std::uint64_t seed, unsigned threads = 1, double grid_step = 1e-3);

struct OccupationReport {
  int N = 0;
  double T = 0.0;
  double window = 0.0;
  double median = 0.0;
  double q90 = 0.0;
  std::vector<double> values;  // per replica: sup over windows of TV distance
  std::size_t sparse_windows = 0;  // windows with fewer than 10 fast jumps
  std::vector<std::string> warnings;
};

/// Windowed occupation density of the environment vs pi at mu_N(window midpoint).
[[nodiscard]] OccupationReport occupation_check(const ModelSpec& model, const SimplexVector& nu, int N, double T,
                                                double window, std::size_t replicas, std::uint64_t seed,
                                                unsigned threads = 1);

struct MartingaleEntry {
  TiltSpec tilt;
  double mean = 0.0;
  double std_error = 0.0;
  double z = 0.0;
  double variance = 0.0;
  bool variance_overflow = false;
};

struct MartingaleReport {
  int N = 0;
  double T = 0.0;
  std::size_t replicas = 0;
  std::vector<MartingaleEntry> entries;
  double pass_fraction = 0.0;

  /// At least 95% of tilts with |z| <= 3.
  [[nodiscard]] bool passes() const { return pass_fraction >= 0.95; }
};

/// Sample variance of exp{N U + V} above which a tilt is flagged as too
/// aggressive for the chosen N and T.
inline constexpr double kMartingaleVarianceCap = 100.0;

[[nodiscard]] MartingaleReport martingale_battery(const ModelSpec& model, const SimplexVector& nu, int N, double T,
                                                  const std::vector<TiltSpec>& tilts, std::size_t replicas,
                                                  std::uint64_t seed, unsigned threads = 1,
                                                  Compensator comp = Compensator::Full);

struct ExponentEstimate {
  int N = 0;
  std::size_t replicas = 0;
  std::size_t hits = 0;
  double estimate = 0.0;  // -(1/N) log(hits / replicas)
  bool lower_bound = false;  // no hits: estimate is -(1/N) log(1 / replicas)
  double relative_gap = 0.0;
};

struct ExponentProbe {
  TiltSpec tilt;
  AveragedFlow target_path;  // averaged flow of the tilted model
  double delta = 0.0;
  double T = 0.0;
  std::vector<ExponentEstimate> estimates;
  double predicted = 0.0;         // path_rate of (target, tilted occupation) under the original model
  double predicted_direct = 0.0;  // same quantity from the closed-form tilt cost
};

/// Probability that the original system stays within `delta` (sup-norm on a
/// grid of step `check_step`) of the tilted averaged path on [0, T].
[[nodiscard]] ExponentProbe exponent_probe(const ModelSpec& model, const SimplexVector& nu, const TiltSpec& tilt,
                                           double delta, const std::vector<int>& Ns, std::size_t replicas,
                                           std::uint64_t seed, double T = 1.0, unsigned threads = 1,
                                           double check_step = 0.01);

void write_averaging_json(std::ostream& out, const AveragingReport& rep);
void write_occupation_json(std::ostream& out, const OccupationReport& rep);
void write_martingale_json(std::ostream& out, const MartingaleReport& rep);
void write_exponent_json(std::ostream& out, const ExponentProbe& rep);
/// Columns N,replicas,hits,estimate,lower_bound
void write_exponent_hits_csv(std::ostream& out, const ExponentProbe& rep);

}  // namespace twoscale

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace twoscale {

struct Edge {
  std::size_t from = 0;
  std::size_t to = 0;
};

/// Finite directed graph. Construction rejects self-loops, duplicate edges
/// and out-of-range endpoints; strong connectivity is a query, not an
/// invariant, so that validate() can report reducible inputs.
class DirectedGraph {
 public:
  DirectedGraph() = default;
  DirectedGraph(std::vector<std::string> vertices, std::vector<Edge> edges);

  [[nodiscard]] std::size_t size() const { return vertices_.size(); }
  [[nodiscard]] std::size_t edge_count() const { return edges_.size(); }
  [[nodiscard]] const std::vector<std::string>& vertices() const { return vertices_; }
  [[nodiscard]] const std::vector<Edge>& edges() const { return edges_; }
  [[nodiscard]] const Edge& edge(std::size_t e) const { return edges_[e]; }
  [[nodiscard]] std::optional<std::size_t> vertex_index(std::string_view name) const;
  [[nodiscard]] std::optional<std::size_t> edge_index(std::size_t from, std::size_t to) const;
  [[nodiscard]] const std::vector<std::size_t>& out_edges(std::size_t v) const { return out_[v]; }
  [[nodiscard]] const std::vector<std::size_t>& in_edges(std::size_t v) const { return in_[v]; }

  [[nodiscard]] bool strongly_connected() const;

 private:
  std::vector<std::string> vertices_;
  std::vector<Edge> edges_;
  std::vector<std::vector<std::size_t>> out_;
  std::vector<std::vector<std::size_t>> in_;
};

/// Fills `out[e]` with lambda_e(xi, y) for every slow edge e.
using SlowRateFn = std::function<void(std::span<const double> xi, std::size_t y, std::span<double> out)>;
/// Fills `out[e]` with gamma_e(xi) for every fast edge e (un-accelerated).
using FastRateFn = std::function<void(std::span<const double> xi, std::span<double> out)>;

/// A two-time-scale mean-field system. Immutable after construction; the
/// rate callbacks must be reentrant.
struct ModelSpec {
  std::string name;
  DirectedGraph slow_graph;
  DirectedGraph fast_graph;
  SlowRateFn slow_rates;
  FastRateFn fast_rates;

  [[nodiscard]] std::size_t slow_size() const { return slow_graph.size(); }
  [[nodiscard]] std::size_t fast_size() const { return fast_graph.size(); }

  [[nodiscard]] std::vector<double> slow_rates_at(std::span<const double> xi, std::size_t y) const;
  [[nodiscard]] std::vector<double> fast_rates_at(std::span<const double> xi) const;
  [[nodiscard]] double slow_rate(std::size_t edge, std::span<const double> xi, std::size_t y) const;
  [[nodiscard]] double fast_rate(std::size_t edge, std::span<const double> xi) const;
};

struct ValidationReport {
  bool slow_irreducible = false;
  bool fast_irreducible = false;
  /// min over sampled xi and slow edges of max_y lambda_e(xi, y): an edge
  /// must be usable in at least one environment state.
  double min_slow_rate = 0.0;
  /// min over sampled xi, slow edges and every y (literal strict positivity).
  double min_slow_rate_any_env = 0.0;
  double min_fast_rate = 0.0;
  double lipschitz_estimate = 0.0;
  bool rates_finite = true;
  std::size_t sample_count = 0;
  std::vector<std::string> warnings;

  [[nodiscard]] bool passes() const {
    return slow_irreducible && fast_irreducible && rates_finite && min_slow_rate > 0.0 && min_fast_rate > 0.0;
  }
};

/// Checks irreducibility and samples rates over `samples` quasi-random simplex
/// points (plus the simplex corners). Deterministic given `seed`.
[[nodiscard]] ValidationReport validate(const ModelSpec& model, std::size_t samples, std::uint64_t seed);

/// Quasi-random points on the simplex of dimension `size`: rotated Halton
/// points pushed through the exponential-spacings map.
[[nodiscard]] std::vector<std::vector<double>> simplex_samples(std::size_t size, std::size_t count,
                                                               std::uint64_t seed);

[[nodiscard]] ModelSpec retrial_model(double lambda, double alpha, int K);

/// Slow states (class c, attempt level i) for c < C, i <= K; fast states
/// {0 idle, 1 success, 2 collision}^C.
[[nodiscard]] ModelSpec wlan_model(std::vector<double> p, std::vector<std::vector<int>> A);

/// One slow or fast edge of an affine-in-xi table model.
struct AffineEdge {
  std::size_t from = 0;
  std::size_t to = 0;
  double base = 0.0;
  std::map<std::size_t, double> coeffs;  // slow-state index -> coefficient
  std::vector<std::size_t> env_mask;     // empty means every environment state
};

/// Edge rate = (base + sum coeffs[x] xi(x)) * 1{y in env_mask}.
[[nodiscard]] ModelSpec affine_model(std::string name, std::vector<std::string> slow_states,
                                     std::vector<AffineEdge> slow_edges, std::vector<std::string> fast_states,
                                     std::vector<AffineEdge> fast_edges);

class ModelError : public std::runtime_error {
 public:
  enum class Kind { Parse, Schema, UnknownBuiltin, Io };
  ModelError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Parses the JSON model config. Throws ModelError.
[[nodiscard]] ModelSpec parse_model(std::string_view json_text);
[[nodiscard]] ModelSpec load_model(const std::filesystem::path& path);

/// Builds a named built-in from string parameters (as given on a command line).
[[nodiscard]] ModelSpec builtin_model(std::string_view name, const std::map<std::string, std::string>& params);

}  // namespace twoscale

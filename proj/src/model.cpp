#include "twoscale/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "twoscale/core_math.hpp"

namespace twoscale {

using nlohmann::json;

// ---------------------------------------------------------------- graph

DirectedGraph::DirectedGraph(std::vector<std::string> vertices, std::vector<Edge> edges)
    : vertices_(std::move(vertices)), edges_(std::move(edges)) {
  if (vertices_.empty()) throw std::invalid_argument("DirectedGraph: no vertices");
  std::set<std::string> names(vertices_.begin(), vertices_.end());
  if (names.size() != vertices_.size()) throw std::invalid_argument("DirectedGraph: duplicate vertex label");
  out_.assign(vertices_.size(), {});
  in_.assign(vertices_.size(), {});
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const auto [from, to] = edges_[e];
    if (from >= vertices_.size() || to >= vertices_.size())
      throw std::invalid_argument("DirectedGraph: edge endpoint out of range");
    if (from == to) throw std::invalid_argument("DirectedGraph: self-loop at " + vertices_[from]);
    if (!seen.emplace(from, to).second)
      throw std::invalid_argument("DirectedGraph: duplicate edge " + vertices_[from] + "->" + vertices_[to]);
    out_[from].push_back(e);
    in_[to].push_back(e);
  }
}

std::optional<std::size_t> DirectedGraph::vertex_index(std::string_view name) const {
  for (std::size_t i = 0; i < vertices_.size(); ++i)
    if (vertices_[i] == name) return i;
  return std::nullopt;
}

std::optional<std::size_t> DirectedGraph::edge_index(std::size_t from, std::size_t to) const {
  if (from >= out_.size()) return std::nullopt;
  for (std::size_t e : out_[from])
    if (edges_[e].to == to) return e;
  return std::nullopt;
}

bool DirectedGraph::strongly_connected() const {
  if (vertices_.size() == 1) return true;
  auto reach_all = [&](bool forward) {
    std::vector<char> seen(vertices_.size(), 0);
    std::vector<std::size_t> stack{0};
    seen[0] = 1;
    std::size_t count = 1;
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      for (std::size_t e : forward ? out_[v] : in_[v]) {
        const std::size_t w = forward ? edges_[e].to : edges_[e].from;
        if (!seen[w]) {
          seen[w] = 1;
          ++count;
          stack.push_back(w);
        }
      }
    }
    return count == vertices_.size();
  };
  return reach_all(true) && reach_all(false);
}

// ---------------------------------------------------------------- model

std::vector<double> ModelSpec::slow_rates_at(std::span<const double> xi, std::size_t y) const {
  std::vector<double> out(slow_graph.edge_count(), 0.0);
  slow_rates(xi, y, out);
  return out;
}

std::vector<double> ModelSpec::fast_rates_at(std::span<const double> xi) const {
  std::vector<double> out(fast_graph.edge_count(), 0.0);
  fast_rates(xi, out);
  return out;
}

double ModelSpec::slow_rate(std::size_t edge, std::span<const double> xi, std::size_t y) const {
  return slow_rates_at(xi, y).at(edge);
}

double ModelSpec::fast_rate(std::size_t edge, std::span<const double> xi) const {
  return fast_rates_at(xi).at(edge);
}

// ---------------------------------------------------------------- validation

namespace {

double radical_inverse(std::uint64_t index, std::uint64_t base) {
  double inv = 1.0 / static_cast<double>(base);
  double f = inv;
  double r = 0.0;
  while (index > 0) {
    r += f * static_cast<double>(index % base);
    index /= base;
    f *= inv;
  }
  return r;
}

constexpr std::uint64_t kPrimes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53,
                                     59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131};

double l1_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

}  // namespace

std::vector<std::vector<double>> simplex_samples(std::size_t size, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> shift(size);
  for (auto& s : shift) s = unit(rng);
  std::vector<std::vector<double>> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<double> w(size);
    double sum = 0.0;
    for (std::size_t d = 0; d < size; ++d) {
      const std::uint64_t base = kPrimes[d % std::size(kPrimes)];
      double u = radical_inverse(k + 1 + d / std::size(kPrimes), base) + shift[d];
      u -= std::floor(u);
      u = std::clamp(u, 1e-300, 1.0);
      w[d] = -std::log(u);
      sum += w[d];
    }
    for (auto& x : w) x /= sum;
    out.push_back(std::move(w));
  }
  return out;
}

ValidationReport validate(const ModelSpec& model, std::size_t samples, std::uint64_t seed) {
  if (samples < 100) throw std::invalid_argument("validate: samples must be >= 100");
  ValidationReport rep;
  rep.slow_irreducible = model.slow_graph.strongly_connected();
  rep.fast_irreducible = model.fast_graph.strongly_connected();

  const std::size_t nx = model.slow_size();
  const std::size_t ny = model.fast_size();
  auto points = simplex_samples(nx, samples, seed);
  for (std::size_t x = 0; x < nx; ++x) {
    std::vector<double> corner(nx, 0.0);
    corner[x] = 1.0;
    points.push_back(std::move(corner));
  }
  rep.sample_count = points.size();

  double min_slow = kInf;
  double min_slow_any = kInf;
  double min_fast = kInf;
  double lip = 0.0;
  std::vector<double> slow(model.slow_graph.edge_count());
  std::vector<double> slow_near(slow.size());
  std::vector<double> fast(model.fast_graph.edge_count());

  for (std::size_t k = 0; k < points.size(); ++k) {
    const auto& xi = points[k];
    std::vector<double> best_over_env(slow.size(), 0.0);
    // Perturbed neighbour for the finite-difference Lipschitz estimate.
    const auto& other = points[(k + 1) % points.size()];
    std::vector<double> near(nx);
    for (std::size_t x = 0; x < nx; ++x) near[x] = 0.999 * xi[x] + 0.001 * other[x];
    const double dist = l1_distance(xi, near);

    for (std::size_t y = 0; y < ny; ++y) {
      model.slow_rates(xi, y, slow);
      model.slow_rates(near, y, slow_near);
      for (std::size_t e = 0; e < slow.size(); ++e) {
        if (!std::isfinite(slow[e]) || slow[e] < 0.0) rep.rates_finite = false;
        best_over_env[e] = std::max(best_over_env[e], slow[e]);
        min_slow_any = std::min(min_slow_any, slow[e]);
        if (dist > 0.0) lip = std::max(lip, std::abs(slow[e] - slow_near[e]) / dist);
      }
    }
    for (double b : best_over_env) min_slow = std::min(min_slow, b);
    model.fast_rates(xi, fast);
    for (double g : fast) {
      if (!std::isfinite(g) || g < 0.0) rep.rates_finite = false;
      min_fast = std::min(min_fast, g);
    }
  }
  rep.min_slow_rate = slow.empty() ? 0.0 : min_slow;
  rep.min_slow_rate_any_env = slow.empty() ? 0.0 : min_slow_any;
  rep.min_fast_rate = fast.empty() ? (ny == 1 ? kInf : 0.0) : min_fast;
  rep.lipschitz_estimate = lip;

  if (!rep.slow_irreducible) rep.warnings.emplace_back("slow graph is not strongly connected");
  if (!rep.fast_irreducible) rep.warnings.emplace_back("fast graph is not strongly connected");
  if (!rep.rates_finite) rep.warnings.emplace_back("a rate function returned a negative or non-finite value");
  if (rep.min_slow_rate > 0.0 && rep.min_slow_rate_any_env <= 0.0)
    rep.warnings.emplace_back("some slow rates vanish in some environment states (strict positivity per state fails)");
  if (!(rep.min_fast_rate > 0.0)) rep.warnings.emplace_back("a fast rate vanishes on the simplex");
  return rep;
}

// ---------------------------------------------------------------- built-ins

ModelSpec retrial_model(double lambda, double alpha, int K) {
  if (!(lambda > 0.0) || !(alpha > 0.0)) throw std::invalid_argument("retrial_model: lambda and alpha must be positive");
  if (K < 1) throw std::invalid_argument("retrial_model: K must be >= 1");
  std::vector<std::string> slow_states;
  for (int i = 0; i <= K; ++i) slow_states.push_back(std::to_string(i));
  std::vector<Edge> slow_edges;
  for (int i = 0; i < K; ++i) slow_edges.push_back({std::size_t(i), std::size_t(i + 1)});
  for (int i = 1; i <= K; ++i) slow_edges.push_back({std::size_t(i), std::size_t(i - 1)});
  const std::size_t ups = static_cast<std::size_t>(K);

  ModelSpec m;
  m.name = "retrial";
  m.slow_graph = DirectedGraph(std::move(slow_states), std::move(slow_edges));
  m.fast_graph = DirectedGraph({"idle", "busy"}, {{0, 1}, {1, 0}});
  // Orbit queue grows only while the server is busy and drains only while idle.
  m.slow_rates = [lambda, alpha, ups](std::span<const double>, std::size_t y, std::span<double> out) {
    const double busy = (y == 1) ? 1.0 : 0.0;
    for (std::size_t e = 0; e < out.size(); ++e) out[e] = e < ups ? lambda * busy : alpha * (1.0 - busy);
  };
  m.fast_rates = [lambda, alpha](std::span<const double> xi, std::span<double> out) {
    out[0] = lambda + alpha * (1.0 - xi[0]);
    out[1] = 1.0;
  };
  return m;
}

ModelSpec wlan_model(std::vector<double> p, std::vector<std::vector<int>> A) {
  const std::size_t levels = p.size();
  if (levels < 2) throw std::invalid_argument("wlan_model: need K >= 1 (at least two attempt levels)");
  for (double pi : p)
    if (!(pi > 0.0) || !std::isfinite(pi)) throw std::invalid_argument("wlan_model: attempt probabilities must be positive");
  const std::size_t C = A.size();
  if (C == 0) throw std::invalid_argument("wlan_model: empty interference matrix");
  for (std::size_t c = 0; c < C; ++c) {
    if (A[c].size() != C) throw std::invalid_argument("wlan_model: interference matrix must be square");
    if (A[c][c] != 1) throw std::invalid_argument("wlan_model: interference matrix needs a unit diagonal");
    for (int a : A[c])
      if (a != 0 && a != 1) throw std::invalid_argument("wlan_model: interference entries must be 0/1");
  }
  if (C > 8) throw std::invalid_argument("wlan_model: at most 8 classes (3^C environment states)");

  std::vector<std::string> slow_states;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < levels; ++i)
      slow_states.push_back(C == 1 ? std::to_string(i) : "c" + std::to_string(c) + "_" + std::to_string(i));

  // Slow edges, per class: collision i -> i+1 (i < K), success i -> 0 (i >= 1).
  struct SlowEdgeInfo {
    std::size_t cls, level;
    bool success;
  };
  std::vector<Edge> slow_edges;
  std::vector<SlowEdgeInfo> info;
  for (std::size_t c = 0; c < C; ++c) {
    const std::size_t off = c * levels;
    for (std::size_t i = 0; i + 1 < levels; ++i) {
      slow_edges.push_back({off + i, off + i + 1});
      info.push_back({c, i, false});
    }
    for (std::size_t i = 1; i < levels; ++i) {
      slow_edges.push_back({off + i, off});
      info.push_back({c, i, true});
    }
  }

  std::size_t ny = 1;
  for (std::size_t c = 0; c < C; ++c) ny *= 3;
  auto digit = [](std::size_t y, std::size_t c) {
    for (std::size_t k = 0; k < c; ++k) y /= 3;
    return y % 3;
  };
  std::vector<std::string> fast_states;
  for (std::size_t y = 0; y < ny; ++y) {
    std::string s;
    for (std::size_t c = 0; c < C; ++c) s += static_cast<char>('0' + digit(y, c));
    fast_states.push_back(s);
  }
  struct FastEdgeInfo {
    std::size_t cls;
    int kind;  // 0: idle->success start, 1: idle->collision start, 2: end of slot activity
  };
  std::vector<Edge> fast_edges;
  std::vector<FastEdgeInfo> finfo;
  std::size_t pow3 = 1;
  for (std::size_t c = 0; c < C; ++c, pow3 *= 3) {
    for (std::size_t y = 0; y < ny; ++y) {
      const std::size_t d = digit(y, c);
      if (d == 0) {
        fast_edges.push_back({y, y + pow3});
        finfo.push_back({c, 0});
        fast_edges.push_back({y, y + 2 * pow3});
        finfo.push_back({c, 1});
      } else {
        fast_edges.push_back({y, y - d * pow3});
        finfo.push_back({c, 2});
      }
    }
  }

  std::vector<std::vector<std::size_t>> V(C);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t d = 0; d < C; ++d)
      if (A[c][d] == 1) V[c].push_back(d);

  // Attempt intensity of class d: sum_i p_i xi^d_i with xi^d the within-class law.
  auto intensities = [p, C, levels](std::span<const double> xi) {
    std::vector<double> P(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
      double mass = 0.0;
      for (std::size_t i = 0; i < levels; ++i) mass += xi[c * levels + i];
      for (std::size_t i = 0; i < levels; ++i) {
        const double frac = mass > 0.0 ? xi[c * levels + i] / mass : 1.0 / static_cast<double>(levels);
        P[c] += p[i] * frac;
      }
    }
    return P;
  };

  ModelSpec m;
  m.name = "wlan";
  m.slow_graph = DirectedGraph(std::move(slow_states), std::move(slow_edges));
  m.fast_graph = DirectedGraph(std::move(fast_states), std::move(fast_edges));
  m.slow_rates = [p, C, V, info, intensities, digit](std::span<const double> xi, std::size_t y, std::span<double> out) {
    const auto P = intensities(xi);
    std::vector<double> idle(C), success(C);
    for (std::size_t c = 0; c < C; ++c) {
      double ind = 1.0;
      for (std::size_t d : V[c]) ind *= digit(y, d) == 0 ? 1.0 : 0.0;
      idle[c] = ind;
      double s = 1.0;
      for (std::size_t d : V[c]) {
        double inner = 1.0;
        for (std::size_t dd : V[d]) inner *= digit(y, dd) == 0 ? 1.0 : 0.0;
        s *= inner * std::expm1(-P[d]) + 1.0;
      }
      success[c] = s;
    }
    for (std::size_t e = 0; e < out.size(); ++e) {
      const auto& ei = info[e];
      const double attempt = p[ei.level] * idle[ei.cls];
      out[e] = ei.success ? attempt * success[ei.cls] : attempt * (1.0 - success[ei.cls]);
    }
  };
  m.fast_rates = [finfo, intensities](std::span<const double> xi, std::span<double> out) {
    const auto P = intensities(xi);
    for (std::size_t e = 0; e < out.size(); ++e) {
      const double Pc = P[finfo[e].cls];
      switch (finfo[e].kind) {
        case 0:
          out[e] = Pc * std::exp(-Pc);
          break;
        case 1:
          out[e] = -std::expm1(-Pc) - Pc * std::exp(-Pc);
          break;
        default:
          out[e] = 1.0;
      }
    }
  };
  return m;
}

ModelSpec affine_model(std::string name, std::vector<std::string> slow_states, std::vector<AffineEdge> slow_edges,
                       std::vector<std::string> fast_states, std::vector<AffineEdge> fast_edges) {
  const std::size_t nx = slow_states.size();
  const std::size_t ny = fast_states.size();
  auto check = [nx](const AffineEdge& e, const char* which) {
    if (!std::isfinite(e.base) || e.base < 0.0) throw std::invalid_argument(std::string(which) + " edge: negative base rate");
    double min_coeff = 0.0;
    for (const auto& [x, c] : e.coeffs) {
      if (x >= nx) throw std::invalid_argument(std::string(which) + " edge: coefficient state out of range");
      if (!std::isfinite(c)) throw std::invalid_argument(std::string(which) + " edge: non-finite coefficient");
      min_coeff = std::min(min_coeff, c);
    }
    // Affine in xi, so the minimum over the simplex sits at a corner.
    if (e.base + min_coeff < 0.0) throw std::invalid_argument(std::string(which) + " edge: rate negative at a simplex corner");
  };
  std::vector<Edge> se, fe;
  for (const auto& e : slow_edges) {
    check(e, "slow");
    for (std::size_t y : e.env_mask)
      if (y >= ny) throw std::invalid_argument("slow edge: env_mask state out of range");
    se.push_back({e.from, e.to});
  }
  for (const auto& e : fast_edges) {
    check(e, "fast");
    fe.push_back({e.from, e.to});
  }
  ModelSpec m;
  m.name = std::move(name);
  m.slow_graph = DirectedGraph(std::move(slow_states), std::move(se));
  m.fast_graph = DirectedGraph(std::move(fast_states), std::move(fe));
  auto affine = [](const AffineEdge& e, std::span<const double> xi) {
    double r = e.base;
    for (const auto& [x, c] : e.coeffs) r += c * xi[x];
    return std::max(r, 0.0);
  };
  m.slow_rates = [slow_edges, affine](std::span<const double> xi, std::size_t y, std::span<double> out) {
    for (std::size_t k = 0; k < slow_edges.size(); ++k) {
      const auto& e = slow_edges[k];
      const bool active =
          e.env_mask.empty() || std::find(e.env_mask.begin(), e.env_mask.end(), y) != e.env_mask.end();
      out[k] = active ? affine(e, xi) : 0.0;
    }
  };
  m.fast_rates = [fast_edges, affine](std::span<const double> xi, std::span<double> out) {
    for (std::size_t k = 0; k < fast_edges.size(); ++k) out[k] = affine(fast_edges[k], xi);
  };
  return m;
}

// ---------------------------------------------------------------- config parsing

namespace {

[[noreturn]] void schema_error(const std::string& field, const std::string& msg) {
  throw ModelError(ModelError::Kind::Schema, "schema violation at '" + field + "': " + msg);
}

double number_at(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.contains(key)) schema_error(path + "." + key, "missing");
  if (!obj[key].is_number()) schema_error(path + "." + key, "expected a number");
  return obj[key].get<double>();
}

std::size_t state_ref(const json& v, const std::vector<std::string>& states, const std::string& path) {
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    for (std::size_t i = 0; i < states.size(); ++i)
      if (states[i] == s) return i;
    schema_error(path, "unknown state '" + s + "'");
  }
  if (v.is_number_unsigned()) {
    const auto i = v.get<std::size_t>();
    if (i < states.size()) return i;
  }
  schema_error(path, "expected a state label or index");
}

std::vector<std::string> parse_states(const json& block, const std::string& path) {
  if (!block.is_object()) schema_error(path, "expected an object");
  if (!block.contains("states") || !block["states"].is_array() || block["states"].empty())
    schema_error(path + ".states", "expected a non-empty array");
  std::vector<std::string> out;
  for (const auto& s : block["states"]) {
    if (s.is_string())
      out.push_back(s.get<std::string>());
    else if (s.is_number_integer())
      out.push_back(std::to_string(s.get<long long>()));
    else
      schema_error(path + ".states", "state labels must be strings or integers");
  }
  return out;
}

std::vector<AffineEdge> parse_edges(const json& block, const std::string& path, const std::vector<std::string>& own,
                                    const std::vector<std::string>& slow_states,
                                    const std::vector<std::string>* fast_states) {
  if (!block.contains("edges") || !block["edges"].is_array()) schema_error(path + ".edges", "expected an array");
  std::vector<AffineEdge> out;
  std::size_t k = 0;
  for (const auto& e : block["edges"]) {
    const std::string ep = path + ".edges[" + std::to_string(k++) + "]";
    if (!e.is_object()) schema_error(ep, "expected an object");
    AffineEdge a;
    if (!e.contains("from") || !e.contains("to")) schema_error(ep, "missing 'from'/'to'");
    a.from = state_ref(e["from"], own, ep + ".from");
    a.to = state_ref(e["to"], own, ep + ".to");
    a.base = e.contains("base") ? number_at(e, "base", ep) : 0.0;
    if (a.base < 0.0) schema_error(ep + ".base", "rate entries must be nonnegative");
    if (e.contains("coeffs")) {
      if (!e["coeffs"].is_object()) schema_error(ep + ".coeffs", "expected an object keyed by slow state");
      for (const auto& [key, val] : e["coeffs"].items()) {
        if (!val.is_number()) schema_error(ep + ".coeffs." + key, "expected a number");
        a.coeffs[state_ref(json(key), slow_states, ep + ".coeffs." + key)] = val.get<double>();
      }
      double min_coeff = 0.0;
      for (const auto& [x, c] : a.coeffs) min_coeff = std::min(min_coeff, c);
      if (a.base + min_coeff < 0.0) schema_error(ep, "rate becomes negative on the simplex");
    }
    if (e.contains("env_mask") && !e["env_mask"].is_null()) {
      if (fast_states == nullptr) schema_error(ep + ".env_mask", "only slow edges carry an environment mask");
      if (!e["env_mask"].is_array()) schema_error(ep + ".env_mask", "expected an array");
      for (const auto& y : e["env_mask"]) a.env_mask.push_back(state_ref(y, *fast_states, ep + ".env_mask"));
      if (a.env_mask.empty()) schema_error(ep + ".env_mask", "empty mask disables the edge; omit the edge instead");
    }
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<double> parse_number_list(std::string_view text) {
  std::vector<double> out;
  std::string token;
  std::stringstream ss{std::string(text)};
  while (std::getline(ss, token, ',')) out.push_back(std::stod(token));
  return out;
}

ModelSpec builtin_from_json(const std::string& name, const json& params) {
  if (!params.is_object()) schema_error("params", "expected an object");
  try {
    if (name == "retrial") {
      const double lambda = params.contains("lambda") ? number_at(params, "lambda", "params") : 1.0;
      const double alpha = params.contains("alpha") ? number_at(params, "alpha", "params") : 2.0;
      int K = 3;
      if (params.contains("K")) {
        if (!params["K"].is_number_integer()) schema_error("params.K", "expected an integer");
        K = params["K"].get<int>();
      }
      return retrial_model(lambda, alpha, K);
    }
    if (name == "wlan") {
      if (!params.contains("p") || !params["p"].is_array()) schema_error("params.p", "expected an array");
      std::vector<double> p;
      for (const auto& v : params["p"]) {
        if (!v.is_number()) schema_error("params.p", "expected numbers");
        p.push_back(v.get<double>());
      }
      std::vector<std::vector<int>> A{{1}};
      if (params.contains("A")) {
        if (!params["A"].is_array()) schema_error("params.A", "expected a matrix");
        A.clear();
        for (const auto& row : params["A"]) {
          if (!row.is_array()) schema_error("params.A", "expected rows");
          std::vector<int> r;
          for (const auto& v : row) {
            if (!v.is_number_integer()) schema_error("params.A", "expected 0/1 entries");
            r.push_back(v.get<int>());
          }
          A.push_back(std::move(r));
        }
      }
      return wlan_model(std::move(p), std::move(A));
    }
  } catch (const std::invalid_argument& e) {
    schema_error("params", e.what());
  }
  throw ModelError(ModelError::Kind::UnknownBuiltin, "unknown builtin model '" + name + "'");
}

}  // namespace

ModelSpec parse_model(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    // Translate the byte offset into a line/column pair.
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < json_text.size(); ++i) {
      if (json_text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ModelError(ModelError::Kind::Parse, "parse error at line " + std::to_string(line) + ", column " +
                                                  std::to_string(col) + ": " + e.what());
  }
  if (!doc.is_object()) schema_error("$", "top level must be an object");
  std::string name = "model";
  if (doc.contains("name")) {
    if (!doc["name"].is_string()) schema_error("name", "expected a string");
    name = doc["name"].get<std::string>();
  }
  if (doc.contains("builtin") && !doc["builtin"].is_null()) {
    if (!doc["builtin"].is_string()) schema_error("builtin", "expected a string or null");
    auto m = builtin_from_json(doc["builtin"].get<std::string>(), doc.value("params", json::object()));
    if (doc.contains("name")) m.name = name;
    return m;
  }
  if (!doc.contains("slow")) schema_error("slow", "missing");
  if (!doc.contains("fast")) schema_error("fast", "missing");
  const auto slow_states = parse_states(doc["slow"], "slow");
  const auto fast_states = parse_states(doc["fast"], "fast");
  auto slow_edges = parse_edges(doc["slow"], "slow", slow_states, slow_states, &fast_states);
  auto fast_edges = parse_edges(doc["fast"], "fast", fast_states, slow_states, nullptr);
  try {
    return affine_model(std::move(name), slow_states, std::move(slow_edges), fast_states, std::move(fast_edges));
  } catch (const std::invalid_argument& e) {
    schema_error("$", e.what());
  }
}

ModelSpec load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ModelError(ModelError::Kind::Io, "cannot open model file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_model(buf.str());
}

ModelSpec builtin_model(std::string_view name, const std::map<std::string, std::string>& params) {
  json p = json::object();
  try {
    for (const auto& [k, v] : params) {
      if (name == "wlan" && k == "p") {
        p["p"] = parse_number_list(v);
      } else if (name == "wlan" && k == "A") {
        // Rows separated by ';', entries by ','.
        json rows = json::array();
        std::stringstream ss(v);
        std::string row;
        while (std::getline(ss, row, ';')) {
          json r = json::array();
          for (double d : parse_number_list(row)) r.push_back(static_cast<int>(d));
          rows.push_back(r);
        }
        p["A"] = rows;
      } else if (k == "K") {
        p[k] = std::stoi(v);
      } else {
        p[k] = std::stod(v);
      }
    }
  } catch (const std::logic_error&) {
    throw ModelError(ModelError::Kind::Schema, "schema violation: non-numeric builtin parameter");
  }
  if (name == "wlan" && !p.contains("p")) p["p"] = json::array({0.5, 0.25});
  return builtin_from_json(std::string(name), p);
}

}  // namespace twoscale

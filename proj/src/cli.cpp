#include "twoscale/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "twoscale/averaging.hpp"
#include "twoscale/model.hpp"
#include "twoscale/probe.hpp"
#include "twoscale/ratefn.hpp"
#include "twoscale/simulator.hpp"

namespace twoscale {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kVersion = "twoscale 1.0.0";

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> number_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw UsageError(std::string(what) + ": not a number list: '" + text + "'");
    }
  }
  return out;
}

std::vector<int> int_list(const std::string& text, const char* what) {
  std::vector<int> out;
  for (double v : number_list(text, what)) {
    if (v < 1 || v != std::floor(v)) throw UsageError(std::string(what) + ": entries must be positive integers");
    out.push_back(static_cast<int>(v));
  }
  if (!std::is_sorted(out.begin(), out.end())) throw UsageError(std::string(what) + ": must be increasing");
  return out;
}

// Files written by the current command; removed again if it fails.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {}

  std::ofstream open(const std::string& name) {
    fs::create_directories(dir_);
    const auto p = dir_ / name;
    std::ofstream f(p);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    written_.push_back(p);
    return f;
  }
  void discard() {
    std::error_code ec;
    for (const auto& p : written_) fs::remove(p, ec);
    written_.clear();
  }
  [[nodiscard]] std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& p : written_) out.push_back(p.filename().string());
    return out;
  }

 private:
  fs::path dir_;
  std::vector<fs::path> written_;
};

struct Options {
  std::string model_path;
  std::string builtin;
  std::vector<std::string> params;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  unsigned threads = 1;

  std::size_t samples = 1000;
  int N = 100;
  double T = 1.0;
  double step = 1e-3;
  double grid = 0.01;
  std::string nu;
  std::string alpha;
  std::string g;
  std::string input;
  bool dump_optimizer = false;
  double solver_tol = 1e-8;
  int max_newton = 200;
  std::string kind = "averaging";
  std::string Ns = "100,400,1600";
  std::size_t replicas = 50;
  double window = 0.1;
  double delta = 0.08;
  double check_step = 0.01;
  std::vector<std::string> alphas;
  std::vector<std::string> gs;
  std::size_t random_tilts = 0;
  double amplitude = 0.1;
  bool broken = false;
};

ModelSpec load(const Options& o) {
  if (o.model_path.empty() == o.builtin.empty()) throw UsageError("give exactly one of --model or --builtin");
  if (!o.model_path.empty()) return load_model(o.model_path);
  std::map<std::string, std::string> params;
  for (const auto& kv : o.params) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--param expects key=value, got '" + kv + "'");
    params[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return builtin_model(o.builtin, params);
}

std::uint64_t resolve_seed(const Options& o) {
  if (o.seed) return *o.seed;
  if (const char* env = std::getenv("TWOSCALE_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (env[used] != '\0') throw std::invalid_argument(env);
      return v;
    } catch (const std::logic_error&) {
      throw UsageError("TWOSCALE_SEED is not an unsigned integer");
    }
  }
  return 1;
}

SimplexVector initial_law(const ModelSpec& model, const std::string& text) {
  if (text.empty()) return SimplexVector::uniform(model.slow_size());
  auto w = number_list(text, "--nu");
  if (w.size() != model.slow_size())
    throw UsageError("--nu needs " + std::to_string(model.slow_size()) + " entries");
  try {
    return SimplexVector(std::move(w), 1e-9);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--nu: ") + e.what());
  }
}

TiltSpec tilt_from(const ModelSpec& model, const std::string& alpha, const std::string& g) {
  auto a = alpha.empty() ? std::vector<double>(model.slow_size(), 0.0) : number_list(alpha, "--alpha");
  auto b = g.empty() ? std::vector<double>(model.fast_size(), 0.0) : number_list(g, "--g");
  if (a.size() != model.slow_size()) throw UsageError("--alpha needs one entry per slow state");
  if (b.size() != model.fast_size()) throw UsageError("--g needs one entry per fast state");
  return TiltSpec::make(std::move(a), std::move(b));
}

std::size_t likely_env(const ModelSpec& model, const SimplexVector& nu) {
  const auto pi = invariant_measure(model, nu.weights());
  return static_cast<std::size_t>(std::max_element(pi.weights().begin(), pi.weights().end()) - pi.weights().begin());
}

// Reads mu_<x> and pi_<y> (or theta_<y>) columns of a flow CSV.
void read_flow_csv(const std::string& path, const ModelSpec& model, TimeSeries& mu, TimeSeries& m) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw UsageError(path + ": empty file");
  std::vector<std::string> cols;
  {
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
  }
  auto locate = [&](const std::string& prefix, const std::string& alt, const std::vector<std::string>& names) {
    std::vector<std::size_t> idx;
    for (const auto& n : names) {
      auto it = std::find(cols.begin(), cols.end(), prefix + n);
      if (it == cols.end() && !alt.empty()) it = std::find(cols.begin(), cols.end(), alt + n);
      if (it == cols.end()) throw UsageError(path + ": missing column " + prefix + n);
      idx.push_back(static_cast<std::size_t>(it - cols.begin()));
    }
    return idx;
  };
  const auto mu_idx = locate("mu_", "", model.slow_graph.vertices());
  const auto m_idx = locate("pi_", "theta_", model.fast_graph.vertices());
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<double> v;
    try {
      v = number_list(line, "row");
    } catch (const UsageError&) {
      throw UsageError(path + ": bad number on line " + std::to_string(row));
    }
    if (v.size() != cols.size()) throw UsageError(path + ": wrong column count on line " + std::to_string(row));
    std::vector<double> a, b;
    for (auto i : mu_idx) a.push_back(v[i]);
    for (auto i : m_idx) b.push_back(v[i]);
    mu.time.push_back(v[0]);
    m.time.push_back(v[0]);
    mu.values.push_back(SimplexVector::renormalized(std::move(a), 1e-9));
    m.values.push_back(SimplexVector::renormalized(std::move(b), 1e-9));
  }
}

json finite_or_string(double v) {
  if (std::isfinite(v)) return v;
  return v > 0 ? "inf" : "-inf";
}

int cmd_validate(const Options& o, const ModelSpec& model, std::uint64_t seed, Outputs& files, std::ostream& out) {
  const auto rep = validate(model, o.samples, seed);
  json j{{"model", model.name},
         {"passes", rep.passes()},
         {"slow_irreducible", rep.slow_irreducible},
         {"fast_irreducible", rep.fast_irreducible},
         {"min_slow_rate", rep.min_slow_rate},
         {"min_slow_rate_any_env", rep.min_slow_rate_any_env},
         {"min_fast_rate", rep.min_fast_rate},
         {"lipschitz_estimate", finite_or_string(rep.lipschitz_estimate)},
         {"rates_finite", rep.rates_finite},
         {"sample_count", rep.sample_count},
         {"warnings", rep.warnings}};
  files.open("validation.json") << std::setw(2) << j << '\n';
  out << "validate " << model.name << ": " << (rep.passes() ? "pass" : "FAIL") << '\n';
  for (const auto& w : rep.warnings) out << "  warning: " << w << '\n';
  return rep.passes() ? 0 : 1;
}

int cmd_simulate(const Options& o, const ModelSpec& model, std::uint64_t seed, Outputs& files, std::ostream& out) {
  const auto nu = initial_law(model, o.nu);
  const auto path = simulate(model, o.N, initial_state(nu, o.N, likely_env(model, nu)), o.T, seed);
  {
    auto f = files.open("path.csv");
    write_path_csv(f, model, path);
  }
  {
    auto f = files.open("occupation.csv");
    write_occupation_csv(f, model, occupation(path, model.fast_size(), o.grid));
  }
  out << "simulate: " << path.jump_times.size() << " events on [0, " << o.T << "]\n";
  return 0;
}

int cmd_ode(const Options& o, const ModelSpec& model, Outputs& files, std::ostream& out) {
  const auto nu = initial_law(model, o.nu);
  const auto tilt = tilt_from(model, o.alpha, o.g);
  const auto flow = mckean_vlasov_flow(tilt.sup_norm() > 0.0 ? tilted_model(model, tilt) : model, nu, o.T, o.step);
  auto f = files.open("flow.csv");
  write_flow_csv(f, model, flow);
  out << "ode: " << flow.time.size() << " grid points, step " << flow.step << '\n';
  return 0;
}

int cmd_rate(const Options& o, const ModelSpec& model, Outputs& files, std::ostream& out) {
  ToleranceConfig tol;
  tol.solver_grad_tol = o.solver_tol;
  tol.max_newton_iters = o.max_newton;
  tol.quadrature_step = o.step;
  tol.validate();
  TimeSeries mu, m;
  if (!o.input.empty()) {
    read_flow_csv(o.input, model, mu, m);
  } else {
    const auto nu = initial_law(model, o.nu);
    const auto tilt = tilt_from(model, o.alpha, o.g);
    const auto flow =
        mckean_vlasov_flow(tilt.sup_norm() > 0.0 ? tilted_model(model, tilt) : model, nu, o.T, o.step);
    mu = {flow.time, flow.mu};
    m = {flow.time, flow.pi};
  }
  const auto rep = path_rate(model, mu, m, tol);
  {
    auto f = files.open("rate.json");
    write_rate_report_json(f, rep);
  }
  if (o.dump_optimizer) {
    auto f = files.open("optimizer.csv");
    write_optimizer_csv(f, model, mu, rep);
  }
  out << std::setprecision(10) << "rate: J_total = " << rep.J_total << " (slow " << rep.slow_part << ", fast "
      << rep.fast_part << ")\n";
  return 0;
}

int cmd_probe(const Options& o, const ModelSpec& model, std::uint64_t seed, Outputs& files, std::ostream& out) {
  const auto nu = initial_law(model, o.nu);
  if (o.kind == "averaging") {
    const auto rep = averaging_check(model, nu, int_list(o.Ns, "--Ns"), o.T, o.replicas, seed, o.threads);
    auto f = files.open("averaging.json");
    write_averaging_json(f, rep);
    for (const auto& d : rep.deviations) out << "N=" << d.N << " median " << d.median << " q90 " << d.q90 << '\n';
  } else if (o.kind == "occupation") {
    if (o.window < 10.0 / o.N) throw UsageError("--window must be at least 10/N");
    const auto rep = occupation_check(model, nu, o.N, o.T, o.window, o.replicas, seed, o.threads);
    auto f = files.open("occupation.json");
    write_occupation_json(f, rep);
    out << "N=" << rep.N << " median sup-window TV " << rep.median << '\n';
  } else if (o.kind == "exponent") {
    const auto tilt = tilt_from(model, o.alpha, o.g);
    const auto rep = exponent_probe(model, nu, tilt, o.delta, int_list(o.Ns, "--Ns"), o.replicas, seed, o.T,
                                    o.threads, o.check_step);
    {
      auto f = files.open("exponent.json");
      write_exponent_json(f, rep);
    }
    {
      auto f = files.open("exponent_hits.csv");
      write_exponent_hits_csv(f, rep);
    }
    out << "predicted " << rep.predicted << '\n';
    for (const auto& e : rep.estimates)
      out << "N=" << e.N << " hits " << e.hits << "/" << e.replicas << " estimate " << (e.lower_bound ? ">= " : "")
          << e.estimate << '\n';
  } else {
    throw UsageError("--kind must be averaging, occupation or exponent");
  }
  return 0;
}

int cmd_martingale(const Options& o, const ModelSpec& model, std::uint64_t seed, Outputs& files, std::ostream& out) {
  const auto nu = initial_law(model, o.nu);
  if (o.alphas.size() != o.gs.size()) throw UsageError("--alpha and --g must be given the same number of times");
  std::vector<TiltSpec> tilts;
  for (std::size_t i = 0; i < o.alphas.size(); ++i) tilts.push_back(tilt_from(model, o.alphas[i], o.gs[i]));
  std::mt19937_64 rng(derive_seed(seed, 0xA11CE));
  std::uniform_real_distribution<double> u(-o.amplitude, o.amplitude);
  for (std::size_t k = 0; k < o.random_tilts; ++k) {
    std::vector<double> a(model.slow_size()), b(model.fast_size());
    for (double& x : a) x = u(rng);
    for (double& x : b) x = u(rng);
    tilts.push_back(TiltSpec::make(std::move(a), std::move(b)));
  }
  if (tilts.empty()) throw UsageError("no tilts: use --alpha/--g or --random");
  const auto rep = martingale_battery(model, nu, o.N, o.T, tilts, o.replicas, seed, o.threads,
                                      o.broken ? Compensator::WithoutTau : Compensator::Full);
  auto f = files.open("martingale.json");
  write_martingale_json(f, rep);
  for (std::size_t i = 0; i < rep.entries.size(); ++i)
    out << "tilt " << i << ": mean " << rep.entries[i].mean << " z " << rep.entries[i].z
        << (rep.entries[i].variance_overflow ? " (variance overflow)" : "") << '\n';
  out << "pass fraction " << rep.pass_fraction << (rep.passes() ? " (pass)" : " (FAIL)") << '\n';
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-time-scale mean-field simulator and rate-function toolkit", "twoscale"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--model", o.model_path, "JSON model file");
  app.add_option("--builtin", o.builtin, "built-in model: retrial or wlan");
  app.add_option("--param", o.params, "built-in parameter key=value (repeatable)");
  app.add_option("--seed", o.seed, "RNG seed (default: $TWOSCALE_SEED, else 1)");
  app.add_option("--out", o.out, "output directory");
  app.add_option("--threads", o.threads, "worker threads")->check(CLI::Range(1u, 1024u));

  auto* validate_cmd = app.add_subcommand("validate", "check model assumptions");
  validate_cmd->add_option("--samples", o.samples, "sampled simplex points")->check(CLI::Range(100ul, 10000000ul));

  auto* simulate_cmd = app.add_subcommand("simulate", "one exact sample path");
  auto* ode_cmd = app.add_subcommand("ode", "averaged (McKean-Vlasov) flow");
  auto* rate_cmd = app.add_subcommand("rate", "path rate functional");
  auto* probe_cmd = app.add_subcommand("probe", "averaging, occupation and exponent probes");
  auto* mart_cmd = app.add_subcommand("martingale", "exponential martingale battery");

  for (auto* c : {simulate_cmd, ode_cmd, rate_cmd, probe_cmd, mart_cmd}) {
    c->add_option("--T", o.T, "horizon")->check(CLI::PositiveNumber);
    c->add_option("--nu", o.nu, "initial slow law, comma separated (default uniform)");
  }
  for (auto* c : {simulate_cmd, probe_cmd, mart_cmd}) c->add_option("--N", o.N, "particles")->check(CLI::PositiveNumber);
  simulate_cmd->add_option("--grid", o.grid, "occupation grid step")->check(CLI::PositiveNumber);
  for (auto* c : {ode_cmd, rate_cmd}) {
    c->add_option("--step", o.step, "time step")->check(CLI::PositiveNumber);
    c->add_option("--alpha", o.alpha, "slow tilt, one entry per slow state");
    c->add_option("--g", o.g, "fast tilt, one entry per fast state");
  }
  rate_cmd->add_option("--input", o.input, "flow CSV with mu_* and pi_*/theta_* columns");
  rate_cmd->add_flag("--dump-optimizer", o.dump_optimizer, "write optimizer.csv");
  rate_cmd->add_option("--solver-tol", o.solver_tol, "gradient tolerance")->check(CLI::PositiveNumber);
  rate_cmd->add_option("--max-newton", o.max_newton, "Newton iteration cap")->check(CLI::PositiveNumber);
  probe_cmd->add_option("--kind", o.kind, "averaging | occupation | exponent");
  probe_cmd->add_option("--Ns", o.Ns, "increasing particle counts, comma separated");
  probe_cmd->add_option("--window", o.window, "occupation window")->check(CLI::PositiveNumber);
  probe_cmd->add_option("--delta", o.delta, "tube radius")->check(CLI::PositiveNumber);
  probe_cmd->add_option("--check-step", o.check_step, "tube check grid")->check(CLI::PositiveNumber);
  probe_cmd->add_option("--alpha", o.alpha, "slow tilt for the exponent probe");
  probe_cmd->add_option("--g", o.g, "fast tilt for the exponent probe");
  for (auto* c : {probe_cmd, mart_cmd})
    c->add_option("--replicas", o.replicas, "independent replicas")->check(CLI::PositiveNumber);
  mart_cmd->add_option("--alpha", o.alphas, "slow tilt (repeatable, paired with --g)");
  mart_cmd->add_option("--g", o.gs, "fast tilt (repeatable, paired with --alpha)");
  mart_cmd->add_option("--random", o.random_tilts, "additional random tilts");
  mart_cmd->add_option("--amplitude", o.amplitude, "random tilt amplitude")->check(CLI::Range(0.0, 0.5));
  mart_cmd->add_flag("--broken", o.broken, "drop the tau terms from the compensator (negative control)");

  std::vector<const char*> argv;
  argv.push_back("twoscale");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << '\n';
    return 2;
  }

  const auto started = std::chrono::steady_clock::now();
  ModelSpec model;
  std::uint64_t seed = 0;
  try {
    seed = resolve_seed(o);
    model = load(o);
  } catch (const ModelError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  Outputs files(o.out);
  std::string command;
  int code = 0;
  try {
    if (validate_cmd->parsed()) {
      command = "validate";
      code = cmd_validate(o, model, seed, files, out);
    } else if (simulate_cmd->parsed()) {
      command = "simulate";
      code = cmd_simulate(o, model, seed, files, out);
    } else if (ode_cmd->parsed()) {
      command = "ode";
      code = cmd_ode(o, model, files, out);
    } else if (rate_cmd->parsed()) {
      command = "rate";
      code = cmd_rate(o, model, files, out);
    } else if (probe_cmd->parsed()) {
      command = "probe";
      code = cmd_probe(o, model, seed, files, out);
    } else {
      command = "martingale";
      code = cmd_martingale(o, model, seed, files, out);
    }
  } catch (const UsageError& e) {
    files.discard();
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    files.discard();
    err << "error: " << command << ": " << e.what() << '\n';
    return 1;
  }

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  json manifest{{"command", command},
                {"argv", args},
                {"model", model.name},
                {"seed", seed},
                {"threads", o.threads},
                {"version", kVersion},
                {"compiler", __VERSION__},
                {"wall_time_s", wall},
                {"exit_code", code}};
  manifest["outputs"] = files.names();
  try {
    files.open(command + "_manifest.json") << std::setw(2) << manifest << '\n';
  } catch (const std::exception& e) {
    files.discard();
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return code;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace twoscale

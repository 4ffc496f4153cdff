// Command line front end: builtin drift/diffusion registry, JSON configs,
// CSV/JSON payloads with fixed 17-significant-digit formatting so replayed
// runs are byte-identical.

#include <CLI11.hpp>
#include <json.hpp>

#include "sdflow/nse.hpp"
#include "sdflow/variational.hpp"
#include "sdflow/zvonkin.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

using json = nlohmann::ordered_json;
using namespace sdflow;

namespace {

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

const json& need(const json& obj, const std::string& key, const std::string& ctx) {
  if (!obj.is_object() || !obj.contains(key))
    throw ArgumentError("config: missing field '" + key + "' in " + ctx);
  return obj.at(key);
}

double need_num(const json& obj, const std::string& key, const std::string& ctx) {
  const json& v = need(obj, key, ctx);
  if (!v.is_number()) throw ArgumentError("config: field '" + key + "' in " + ctx + " must be a number");
  return v.get<double>();
}

long need_int(const json& obj, const std::string& key, const std::string& ctx) {
  const json& v = need(obj, key, ctx);
  if (!v.is_number_integer())
    throw ArgumentError("config: field '" + key + "' in " + ctx + " must be an integer");
  return v.get<long>();
}

double opt_num(const json& obj, const std::string& key, double fallback) {
  return obj.is_object() && obj.contains(key) ? obj.at(key).get<double>() : fallback;
}

long opt_int(const json& obj, const std::string& key, long fallback) {
  return obj.is_object() && obj.contains(key) ? obj.at(key).get<long>() : fallback;
}

Vec need_vec(const json& obj, const std::string& key, const std::string& ctx) {
  const json& v = need(obj, key, ctx);
  if (!v.is_array() || v.empty())
    throw ArgumentError("config: field '" + key + "' in " + ctx + " must be a non-empty array");
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number())
      throw ArgumentError("config: field '" + key + "' in " + ctx + " must hold numbers");
    out[static_cast<int>(i)] = v[i].get<double>();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Builtin field registry
// ---------------------------------------------------------------------------

DriftSpec make_drift(const json& cfg, const std::string& ctx) {
  std::string name = need(cfg, "name", ctx).get<std::string>();
  double p = opt_num(cfg, "p", 4.0);
  double q = opt_num(cfg, "q", 4.0);
  DriftSpec b;
  b.p = p;
  b.q = q;
  b.id = name;
  if (name == "zero") {
    b = DriftSpec::zero(static_cast<int>(need_int(cfg, "dim", ctx)));
    b.p = p;
    b.q = q;
    return b;
  }
  if (name == "ou") {
    int dim = static_cast<int>(need_int(cfg, "dim", ctx));
    double theta = opt_num(cfg, "theta", 1.0);
    b.dim = dim;
    b.eval = [theta](double, const Vec& x) { return Vec(-theta * x); };
    b.grad = [dim, theta](double, const Vec&) { return Mat(-theta * Mat::Identity(dim, dim)); };
    return b;
  }
  if (name == "rotation") {
    b.dim = 2;
    double rate = opt_num(cfg, "rate", 1.0);
    b.eval = [rate](double, const Vec& x) {
      Vec v(2);
      v << -rate * x[1], rate * x[0];
      return v;
    };
    b.grad = [rate](double, const Vec&) {
      Mat g(2, 2);
      g << 0.0, -rate, rate, 0.0;
      return g;
    };
    return b;
  }
  if (name == "shear") {
    b.dim = 2;
    double rate = opt_num(cfg, "rate", 1.0);
    b.eval = [rate](double, const Vec& x) {
      Vec v(2);
      v << rate * x[1], 0.0;
      return v;
    };
    b.grad = [rate](double, const Vec&) {
      Mat g = Mat::Zero(2, 2);
      g(0, 1) = rate;
      return g;
    };
    return b;
  }
  if (name == "linear") {
    const json& rows = need(cfg, "matrix", ctx);
    if (!rows.is_array() || rows.empty())
      throw ArgumentError("config: 'matrix' in " + ctx + " must be an array of rows");
    int dim = static_cast<int>(rows.size());
    Mat A(dim, dim);
    for (int i = 0; i < dim; ++i) {
      if (!rows[i].is_array() || static_cast<int>(rows[i].size()) != dim)
        throw ArgumentError("config: 'matrix' in " + ctx + " must be square");
      for (int j = 0; j < dim; ++j) A(i, j) = rows[i][j].get<double>();
    }
    b.dim = dim;
    b.eval = [A](double, const Vec& x) { return Vec(A * x); };
    b.grad = [A](double, const Vec&) { return A; };
    return b;
  }
  if (name == "gaussian_bump") {
    int dim = static_cast<int>(opt_int(cfg, "dim", 1));
    double amplitude = need_num(cfg, "amplitude", ctx);
    b.dim = dim;
    b.eval = [dim, amplitude](double, const Vec& x) {
      Vec v = Vec::Zero(dim);
      v[0] = amplitude * std::exp(-x.squaredNorm());
      return v;
    };
    return b;
  }
  if (name == "sine") {
    int dim = static_cast<int>(need_int(cfg, "dim", ctx));
    double amplitude = opt_num(cfg, "amplitude", 1.0);
    b.dim = dim;
    b.eval = [dim, amplitude](double, const Vec& x) {
      Vec v(dim);
      for (int i = 0; i < dim; ++i) v[i] = amplitude * std::sin(x[(i + 1) % dim]);
      return v;
    };
    return b;
  }
  if (name == "ball_indicator") {
    int dim = static_cast<int>(need_int(cfg, "dim", ctx));
    double amplitude = opt_num(cfg, "amplitude", 1.0);
    double radius = opt_num(cfg, "radius", 1.0);
    b.dim = dim;
    b.eval = [dim, amplitude, radius](double, const Vec& x) {
      return x.norm() <= radius ? Vec(Vec::Constant(dim, amplitude)) : Vec(Vec::Zero(dim));
    };
    long level = opt_int(cfg, "mollify_level", 0);
    if (level > 0) return mollify(b, Mollifier(dim, static_cast<int>(level)));
    return b;
  }
  throw ArgumentError("config: unknown drift '" + name + "' in " + ctx +
                      " (known: zero, ou, rotation, shear, linear, gaussian_bump, sine, "
                      "ball_indicator)");
}

DiffusionSpec make_sigma(const json& cfg, const std::string& ctx) {
  std::string name = need(cfg, "name", ctx).get<std::string>();
  if (name == "identity") {
    int dim = static_cast<int>(need_int(cfg, "dim", ctx));
    return DiffusionSpec::identity(dim, opt_num(cfg, "scale", 1.0));
  }
  if (name == "diagonal_sine") {
    int dim = static_cast<int>(need_int(cfg, "dim", ctx));
    double amplitude = opt_num(cfg, "amplitude", 0.2);
    if (!(amplitude >= 0.0 && amplitude < 1.0))
      throw ArgumentError("config: 'amplitude' in " + ctx + " must lie in [0,1) for ellipticity");
    DiffusionSpec s;
    s.dim = dim;
    s.constant_in_x = false;
    s.ellipticity_K = 1.0 / (1.0 - amplitude);
    s.eval = [dim, amplitude](double, const Vec& x) {
      Mat m = Mat::Identity(dim, dim);
      for (int i = 0; i < dim; ++i) m(i, i) = 1.0 + amplitude * std::sin(x[i]);
      return m;
    };
    s.grad_cols = [dim, amplitude](double, const Vec& x) {
      std::vector<Mat> g(dim, Mat::Zero(dim, dim));
      for (int i = 0; i < dim; ++i) g[i](i, i) = amplitude * std::cos(x[i]);
      return g;
    };
    s.id = name;
    return s;
  }
  throw ArgumentError("config: unknown diffusion '" + name + "' in " + ctx +
                      " (known: identity, diagonal_sine)");
}

std::function<double(const Vec&)> make_payoff(const json& cfg, const std::string& ctx) {
  std::string name = need(cfg, "name", ctx).get<std::string>();
  long index = opt_int(cfg, "index", 0);
  if (name == "coordinate") return [index](const Vec& x) { return x[index]; };
  if (name == "sin") return [index](const Vec& x) { return std::sin(x[index]); };
  if (name == "square_norm") return [](const Vec& x) { return x.squaredNorm(); };
  throw ArgumentError("config: unknown payoff '" + name + "' in " + ctx +
                      " (known: coordinate, sin, square_norm)");
}

// ---------------------------------------------------------------------------
// Output plumbing
// ---------------------------------------------------------------------------

struct CsvRow {
  std::string experiment;
  std::string parameter;
  std::string statistic;
  double value = 0.0;
  double std_error = 0.0;
};

struct Options {
  std::string config_path;
  std::string out_dir = ".";
  std::string format = "csv";
  std::optional<std::uint64_t> seed;
  int workers = 1;
};

void write_rows(const Options& opts, const std::string& stem, const std::vector<CsvRow>& rows) {
  namespace fs = std::filesystem;
  fs::create_directories(opts.out_dir);
  if (opts.format == "csv") {
    std::ofstream out(fs::path(opts.out_dir) / (stem + ".csv"));
    out << "experiment,parameter,statistic,value,std_error\n";
    for (const auto& r : rows)
      out << r.experiment << ',' << r.parameter << ',' << r.statistic << ',' << fmt(r.value)
          << ',' << fmt(r.std_error) << '\n';
  } else {
    json arr = json::array();
    for (const auto& r : rows)
      arr.push_back({{"experiment", r.experiment},
                     {"parameter", r.parameter},
                     {"statistic", r.statistic},
                     {"value", r.value},
                     {"std_error", r.std_error}});
    std::ofstream out(fs::path(opts.out_dir) / (stem + ".json"));
    out << arr.dump(2) << '\n';
  }
}

void write_json(const Options& opts, const std::string& name, const json& payload) {
  namespace fs = std::filesystem;
  fs::create_directories(opts.out_dir);
  std::ofstream out(fs::path(opts.out_dir) / name);
  out << payload.dump(2) << '\n';
}

// Run provenance; the only file carrying a timestamp, so payload files stay
// byte-identical under replay.
void write_manifest(const Options& opts, const std::string& command, const json& config,
                    std::uint64_t seed) {
  auto now = std::chrono::system_clock::now().time_since_epoch();
  json m{{"command", command},
         {"seed", seed},
         {"workers", opts.workers},
         {"format", opts.format},
         {"config", config},
         {"timestamp_unix_ms",
          std::chrono::duration_cast<std::chrono::milliseconds>(now).count()}};
  write_json(opts, "manifest.json", m);
}

json load_config(const Options& opts) {
  if (opts.config_path.empty()) throw ArgumentError("--config is required");
  std::ifstream in(opts.config_path);
  if (!in) throw ArgumentError("cannot open config file " + opts.config_path);
  json cfg;
  try {
    in >> cfg;
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("config: JSON parse failure: ") + e.what());
  }
  if (!cfg.is_object()) throw ArgumentError("config: top level must be a JSON object");
  return cfg;
}

std::uint64_t pick_seed(const Options& opts, const json& cfg) {
  if (opts.seed) return *opts.seed;
  return static_cast<std::uint64_t>(opt_int(cfg, "seed", 1));
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int run_simulate(const Options& opts) {
  json cfg = load_config(opts);
  std::vector<json> experiments;
  if (cfg.contains("experiments")) {
    const json& list = cfg.at("experiments");
    if (!list.is_array()) throw ArgumentError("config: 'experiments' must be an array");
    for (const auto& e : list) experiments.push_back(e);
    if (experiments.empty()) return 0;  // nothing to run, no files
  } else {
    experiments.push_back(cfg);
  }
  std::vector<CsvRow> rows;
  std::uint64_t seed = pick_seed(opts, cfg);
  for (std::size_t e = 0; e < experiments.size(); ++e) {
    const json& ex = experiments[e];
    std::string ctx = "experiments[" + std::to_string(e) + "]";
    std::string label = ex.contains("label") ? ex.at("label").get<std::string>()
                                             : "experiment_" + std::to_string(e);
    DriftSpec b = make_drift(need(ex, "drift", ctx), ctx + ".drift");
    DiffusionSpec sigma = make_sigma(need(ex, "sigma", ctx), ctx + ".sigma");
    Vec x0 = need_vec(ex, "x0", ctx);
    if (b.dim != sigma.dim || b.dim != x0.size())
      throw ArgumentError("config: dimension mismatch between drift, sigma and x0 in " + ctx);
    TimeGrid grid(need_num(ex, "t0", ctx), need_num(ex, "t1", ctx),
                  static_cast<int>(need_int(ex, "steps", ctx)));
    int n_paths = static_cast<int>(need_int(ex, "n_paths", ctx));
    std::uint64_t ex_seed = ex.contains("seed") && !opts.seed
                                ? static_cast<std::uint64_t>(ex.at("seed").get<long>())
                                : seed;
    BrownianEnsemble noise(ex_seed, n_paths, b.dim, grid);
    SimOptions sim;
    sim.workers = opts.workers;
    std::vector<RunningStats> mean(b.dim);
    std::vector<RunningStats> sq(b.dim);
    std::vector<long> flag_slots(n_paths, 0);
    for_each_path(x0, b, sigma, noise, sim,
                  [&](int path, std::span<const double> states, bool flagged) {
                    flag_slots[path] = flagged ? 1 : 0;
                    if (flagged) return;
                    const double* terminal = states.data() + static_cast<std::size_t>(grid.steps) * b.dim;
                    for (int c = 0; c < b.dim; ++c) {
                      mean[c].add(terminal[c]);
                      sq[c].add(terminal[c] * terminal[c]);
                    }
                  });
    long flagged = 0;
    for (long f : flag_slots) flagged += f;
    for (int c = 0; c < b.dim; ++c) {
      std::string comp = "x" + std::to_string(c);
      rows.push_back({label, comp, "terminal_mean", mean[c].mean, mean[c].std_error()});
      rows.push_back({label, comp, "terminal_variance", mean[c].variance(),
                      sq[c].std_error()});
    }
    rows.push_back({label, "paths", "flagged", static_cast<double>(flagged), 0.0});
  }
  write_rows(opts, "results", rows);
  write_manifest(opts, "simulate", cfg, seed);
  return 0;
}

int run_stability(const Options& opts) {
  json cfg = load_config(opts);
  std::string ctx = "stability";
  DriftSpec b = make_drift(need(cfg, "drift", ctx), ctx + ".drift");
  DiffusionSpec sigma = make_sigma(need(cfg, "sigma", ctx), ctx + ".sigma");
  Vec x0 = need_vec(cfg, "x0", ctx);
  TimeGrid grid(need_num(cfg, "t0", ctx), need_num(cfg, "t1", ctx),
                static_cast<int>(need_int(cfg, "steps", ctx)));
  const json& perts = need(cfg, "perturbations", ctx);
  if (!perts.is_array() || perts.empty())
    throw ArgumentError("config: 'perturbations' must be a non-empty array");
  std::vector<DriftSpec> perturbed;
  for (std::size_t i = 0; i < perts.size(); ++i)
    perturbed.push_back(make_drift(perts[i], ctx + ".perturbations[" + std::to_string(i) + "]"));
  std::uint64_t seed = pick_seed(opts, cfg);
  BrownianEnsemble noise(seed, static_cast<int>(need_int(cfg, "n_paths", ctx)), b.dim, grid);
  StabilityConfig scfg;
  const json& nb = need(cfg, "norm_box", ctx);
  scfg.norm_box = Box(need_vec(nb, "lo", ctx + ".norm_box"), need_vec(nb, "hi", ctx + ".norm_box"));
  scfg.norm_nodes = static_cast<int>(opt_int(nb, "nodes", 64));
  scfg.norm_time_nodes = static_cast<int>(opt_int(nb, "time_nodes", 16));
  SimOptions sim;
  sim.workers = opts.workers;
  auto table = stability_experiment(x0, b, perturbed, sigma, noise, scfg, sim);
  std::vector<CsvRow> rows;
  std::vector<double> dist, gap;
  for (std::size_t i = 0; i < table.size(); ++i) {
    std::string label = "perturbation_" + std::to_string(i);
    rows.push_back({label, table[i].label, "drift_distance", table[i].drift_distance, 0.0});
    rows.push_back({label, table[i].label, "mean_sup_sq_gap", table[i].mean_sup_sq_gap,
                    table[i].std_error});
    if (table[i].drift_distance > 0.0 && table[i].mean_sup_sq_gap > 0.0) {
      dist.push_back(table[i].drift_distance);
      gap.push_back(table[i].mean_sup_sq_gap);
    }
  }
  if (dist.size() >= 2)
    rows.push_back({"summary", "loglog", "slope", loglog_slope(dist, gap), 0.0});
  write_rows(opts, "results", rows);
  write_manifest(opts, "stability", cfg, seed);
  return 0;
}

int run_gradient(const Options& opts) {
  json cfg = load_config(opts);
  std::string ctx = "gradient";
  DriftSpec b = make_drift(need(cfg, "drift", ctx), ctx + ".drift");
  DiffusionSpec sigma = make_sigma(need(cfg, "sigma", ctx), ctx + ".sigma");
  Vec x0 = need_vec(cfg, "x0", ctx);
  TimeGrid grid(need_num(cfg, "t0", ctx), need_num(cfg, "t1", ctx),
                static_cast<int>(need_int(cfg, "steps", ctx)));
  auto payoff = make_payoff(need(cfg, "payoff", ctx), ctx + ".payoff");
  std::uint64_t seed = pick_seed(opts, cfg);
  BrownianEnsemble noise(seed, static_cast<int>(need_int(cfg, "n_paths", ctx)), b.dim, grid);
  SimOptions sim;
  sim.workers = opts.workers;
  GradientEstimate est = bel_gradient_mc(x0, b, sigma, noise, payoff, sim);
  json out;
  out["point"] = json::array();
  for (int i = 0; i < est.point.size(); ++i) out["point"].push_back(est.point[i]);
  out["horizon"] = est.horizon;
  out["estimate"] = json::array();
  out["std_error"] = json::array();
  for (int i = 0; i < est.estimate.size(); ++i) {
    out["estimate"].push_back(est.estimate[i]);
    out["std_error"].push_back(est.std_error[i]);
  }
  out["n_paths"] = est.n_paths;
  out["dt"] = est.dt;
  write_json(opts, "gradient.json", out);
  write_manifest(opts, "gradient", cfg, seed);
  return 0;
}

int run_jacobian(const Options& opts) {
  json cfg = load_config(opts);
  std::string ctx = "jacobian";
  DriftSpec b = make_drift(need(cfg, "drift", ctx), ctx + ".drift");
  DiffusionSpec sigma = make_sigma(need(cfg, "sigma", ctx), ctx + ".sigma");
  Vec x0 = need_vec(cfg, "x0", ctx);
  TimeGrid grid(need_num(cfg, "t0", ctx), need_num(cfg, "t1", ctx),
                static_cast<int>(need_int(cfg, "steps", ctx)));
  int n_paths = static_cast<int>(need_int(cfg, "n_paths", ctx));
  std::uint64_t seed = pick_seed(opts, cfg);
  BrownianEnsemble noise(seed, n_paths, b.dim, grid);
  SimOptions sim;
  sim.workers = opts.workers;
  PathEnsemble paths = euler_maruyama(x0, b, sigma, noise, sim);
  JacobianEnsemble jac = jacobian_flow(paths, b, sigma, noise, sim);
  Mat mean = Mat::Zero(b.dim, b.dim);
  RunningStats sup2, sup4;
  for (int i = 0; i < n_paths; ++i) {
    mean += jac.at(i, grid.steps);
    double sup = 0.0;
    for (int k = 0; k <= grid.steps; ++k) sup = std::max(sup, jac.at(i, k).norm());
    sup2.add(sup * sup);
    sup4.add(sup * sup * sup * sup);
  }
  mean /= n_paths;
  json out;
  out["terminal_mean"] = json::array();
  for (int i = 0; i < b.dim; ++i) {
    json row = json::array();
    for (int j = 0; j < b.dim; ++j) row.push_back(mean(i, j));
    out["terminal_mean"].push_back(row);
  }
  out["sup_moment_p2"] = sup2.mean;
  out["sup_moment_p2_std_error"] = sup2.std_error();
  out["sup_moment_p4"] = sup4.mean;
  out["sup_moment_p4_std_error"] = sup4.std_error();
  out["n_paths"] = n_paths;
  out["dt"] = grid.dt();
  write_json(opts, "jacobian.json", out);
  write_manifest(opts, "jacobian", cfg, seed);
  return 0;
}

int run_zvonkin(const Options& opts) {
  json cfg = load_config(opts);
  std::string ctx = "zvonkin";
  DriftSpec b = make_drift(need(cfg, "drift", ctx), ctx + ".drift");
  DiffusionSpec sigma = make_sigma(need(cfg, "sigma", ctx), ctx + ".sigma");
  const json& box_cfg = need(cfg, "box", ctx);
  Box box(need_vec(box_cfg, "lo", ctx + ".box"), need_vec(box_cfg, "hi", ctx + ".box"));
  const json& shape_cfg = need(cfg, "grid_nodes", ctx);
  std::vector<int> shape;
  if (shape_cfg.is_number_integer()) {
    shape.assign(box.dim(), static_cast<int>(shape_cfg.get<long>()));
  } else if (shape_cfg.is_array()) {
    for (const auto& s : shape_cfg) shape.push_back(static_cast<int>(s.get<long>()));
  } else {
    throw ArgumentError("config: 'grid_nodes' must be an integer or array");
  }
  SpaceGrid grid(box, shape);
  CorrectorConfig ccfg;
  ccfg.time_nodes = static_cast<int>(opt_int(cfg, "time_nodes", 64));
  ZvonkinSolution sol = solve_corrector(b, sigma, need_num(cfg, "t0", ctx),
                                        need_num(cfg, "s0", ctx), grid, ccfg);
  std::uint64_t seed = pick_seed(opts, cfg);
  BiLipschitzResult bl =
      bilipschitz_check(sol, static_cast<int>(opt_int(cfg, "bilipschitz_pairs", 500)), seed + 3);
  DriftRemovalConfig dcfg;
  dcfg.seed = seed;
  dcfg.n_paths = static_cast<int>(opt_int(cfg, "removal_paths", 20000));
  SimOptions sim;
  sim.workers = opts.workers;
  DriftRemovalResult dr = drift_removal_check(sol, dcfg, sim);
  json out{{"picard_iterations", sol.picard_iterations},
           {"final_gap", sol.final_gap},
           {"residual_sup", sol.residual_sup},
           {"min_ratio", bl.min_ratio},
           {"max_ratio", bl.max_ratio},
           {"sup_drift_x", dr.sup_drift_x},
           {"sup_drift_y", dr.sup_drift_y},
           {"reduction", dr.reduction},
           {"max_std_error", dr.max_std_error}};
  write_json(opts, "zvonkin.json", out);
  write_manifest(opts, "zvonkin", cfg, seed);
  return 0;
}

nse::GridField make_initial(const json& cfg, const std::string& ctx, int n) {
  std::string name = need(cfg, "name", ctx).get<std::string>();
  if (name == "taylor_green") {
    nse::GridField f(2, n, 2.0 * M_PI, 2);
    f.fill([](const Vec& x) {
      Vec v(2);
      v << std::sin(x[0]) * std::cos(x[1]), -std::cos(x[0]) * std::sin(x[1]);
      return v;
    });
    return f;
  }
  if (name == "two_mode") {
    nse::GridField f(2, n, 2.0 * M_PI, 2);
    f.fill([](const Vec& x) {
      Vec v(2);
      v << std::sin(x[1]) + 0.5 * std::cos(2.0 * x[1]), std::sin(2.0 * x[0]);
      return v;
    });
    return f;
  }
  throw ArgumentError("config: unknown initial field '" + name + "' in " + ctx +
                      " (known: taylor_green, two_mode)");
}

int run_nse_solve(const Options& opts) {
  json cfg = load_config(opts);
  std::string ctx = "nse-solve";
  int n = static_cast<int>(need_int(cfg, "grid_nodes", ctx));
  nse::GridField phi = make_initial(need(cfg, "initial", ctx), ctx + ".initial", n);
  double nu = need_num(cfg, "nu", ctx);
  double T = need_num(cfg, "horizon", ctx);
  double dt = need_num(cfg, "dt", ctx);
  int stride = static_cast<int>(opt_int(cfg, "snapshot_stride", 1));
  nse::EnsembleParams params;
  params.seed = pick_seed(opts, cfg);
  params.n_paths = static_cast<int>(need_int(cfg, "n_paths", ctx));
  double tol = opt_num(cfg, "tol", 1e-3);
  int max_iterations = static_cast<int>(opt_int(cfg, "max_iterations", 20));
  nse::NsState state =
      nse::fixed_point_solve(phi, nu, T, dt, stride, params, tol, max_iterations, opts.workers);
  namespace fs = std::filesystem;
  fs::create_directories(opts.out_dir);
  for (int s = 0; s < state.u.n_snapshots(); ++s)
    state.u.u[s].save_csv((fs::path(opts.out_dir) /
                           ("velocity_snapshot_" + std::to_string(s) + ".csv")).string());
  json out{{"iterations", state.iterations},
           {"iterate_distances", state.iterate_distances},
           {"snapshots", state.u.n_snapshots()},
           {"dt", dt},
           {"horizon", T},
           {"nu", nu}};
  json norms = json::array();
  for (int s = 0; s < state.u.n_snapshots(); ++s) norms.push_back(state.u.u[s].l2_norm());
  out["snapshot_l2_norms"] = norms;
  write_json(opts, "solve.json", out);
  write_manifest(opts, "nse-solve", cfg, params.seed);
  return 0;
}

int run_nse_kernel_test(const Options& opts) {
  json cfg = load_config(opts);
  int n = static_cast<int>(opt_int(cfg, "grid_nodes", 32));
  std::vector<CsvRow> rows;

  nse::GridField gradpsi(2, n, 2.0 * M_PI, 2);
  gradpsi.fill([](const Vec& x) {
    Vec v(2);
    v << -2.0 * std::sin(2.0 * x[0]) * std::sin(x[1]), std::cos(2.0 * x[0]) * std::cos(x[1]);
    return v;
  });
  nse::GridField killed = nse::leray_project(gradpsi);
  double annihilation = 0.0;
  for (double v : killed.values()) annihilation = std::max(annihilation, std::abs(v));
  rows.push_back({"leray", "gradient_field", "max_abs_after_projection", annihilation, 0.0});

  nse::GridField omega(2, n, 2.0 * M_PI, 1);
  omega.fill([](const Vec& x) {
    return Vec::Constant(1, std::sin(x[0]) * std::sin(x[1]) + 0.5 * std::cos(2.0 * x[0]));
  });
  nse::GridField u = nse::biot_savart(omega);
  nse::GridField back = nse::curl(u);
  double curl_err = 0.0;
  for (std::size_t i = 0; i < omega.values().size(); ++i)
    curl_err = std::max(curl_err, std::abs(back.values()[i] - omega.values()[i]));
  rows.push_back({"biot_savart", "two_mode_vorticity", "curl_roundtrip_max_error", curl_err, 0.0});
  rows.push_back({"biot_savart", "two_mode_vorticity", "max_divergence",
                  nse::max_spectral_divergence(u), 0.0});

  Eigen::Vector3d k3 =
      nse::biot_savart_kernel_3d(Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, 1, 0));
  rows.push_back({"kernel_3d", "e1_cross_e2", "z_component_error",
                  std::abs(k3[2] - 1.0 / (4.0 * M_PI)), 0.0});

  double delta = opt_num(cfg, "delta_c", 0.05);
  double worst_rel = 0.0;
  for (double r = 3.0 * delta; r <= 20.0 * delta; r += delta) {
    Eigen::Vector2d x(r, 0.0);
    double speed = nse::point_vortex_velocity(x, Eigen::Vector2d::Zero(), 1.0, delta).norm();
    double ideal = 1.0 / (2.0 * M_PI * r);
    worst_rel = std::max(worst_rel, std::abs(speed - ideal) / ideal);
  }
  rows.push_back({"point_vortex", "outside_3_delta", "max_rel_speed_error", worst_rel, 0.0});

  write_rows(opts, "results", rows);
  write_manifest(opts, "nse-kernel-test", cfg, pick_seed(opts, cfg));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo toolkit for singular-drift SDEs and stochastic-Lagrangian "
               "Navier-Stokes"};
  app.require_subcommand(1);

  Options opts;
  std::uint64_t seed_flag = 0;
  bool seed_set = false;
  for (auto* sub : {app.add_subcommand("simulate", "Euler-Maruyama path statistics"),
                    app.add_subcommand("stability", "drift-perturbation stability table"),
                    app.add_subcommand("gradient", "probabilistic-weight gradient estimate"),
                    app.add_subcommand("jacobian", "Jacobian flow moments"),
                    app.add_subcommand("zvonkin", "drift-removing change of coordinates"),
                    app.add_subcommand("nse-solve", "stochastic-Lagrangian velocity fixed point"),
                    app.add_subcommand("nse-kernel-test", "spectral/kernel invariant checks")}) {
    sub->add_option("--config", opts.config_path, "JSON config file")->required();
    sub->add_option("--seed", seed_flag, "override the config seed")
        ->each([&seed_set](const std::string&) { seed_set = true; });
    sub->add_option("--out", opts.out_dir, "output directory (default: .)");
    sub->add_option("--workers", opts.workers, "worker threads (default: 1)");
    sub->add_option("--format", opts.format, "payload format: csv or json")
        ->check(CLI::IsMember({"csv", "json"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (seed_set) opts.seed = seed_flag;

  try {
    if (app.got_subcommand("simulate")) return run_simulate(opts);
    if (app.got_subcommand("stability")) return run_stability(opts);
    if (app.got_subcommand("gradient")) return run_gradient(opts);
    if (app.got_subcommand("jacobian")) return run_jacobian(opts);
    if (app.got_subcommand("zvonkin")) return run_zvonkin(opts);
    if (app.got_subcommand("nse-solve")) return run_nse_solve(opts);
    if (app.got_subcommand("nse-kernel-test")) return run_nse_kernel_test(opts);
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

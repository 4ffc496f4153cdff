#include <doctest.h>

#include "sdflow/solver.hpp"

#include <cmath>

using namespace sdflow;

namespace {

DriftSpec ou_drift(int dim, double theta = 1.0) {
  DriftSpec b;
  b.dim = dim;
  b.p = 4.0;
  b.q = 4.0;
  b.eval = [theta](double, const Vec& x) { return Vec(-theta * x); };
  b.grad = [dim, theta](double, const Vec&) { return Mat(-theta * Mat::Identity(dim, dim)); };
  b.id = "ou";
  return b;
}

DriftSpec rotation_drift() {
  DriftSpec b;
  b.dim = 2;
  b.p = 4.0;
  b.q = 4.0;
  b.eval = [](double, const Vec& x) {
    Vec v(2);
    v << -x[1], x[0];
    return v;
  };
  b.id = "rotation";
  return b;
}

// Test-local Euler integrator at a coarsened level: one coarse step aggregates
// `ratio` fine increments, so all levels share the same Brownian path.
Vec integrate_coarse(const Vec& x0, const DriftSpec& b, const DiffusionSpec& sigma,
                     const BrownianEnsemble& fine, int path, int ratio, double* sup_gap_sq,
                     const std::vector<Vec>* reference) {
  int coarse_steps = fine.grid().steps / ratio;
  double dt = fine.grid().dt() * ratio;
  Vec x = x0;
  double sup = 0.0;
  for (int k = 0; k < coarse_steps; ++k) {
    double t = fine.grid().node(k * ratio);
    Vec dw = Vec::Zero(fine.dim());
    for (int j = 0; j < ratio; ++j)
      for (int c = 0; c < fine.dim(); ++c) dw[c] += fine.increment(path, k * ratio + j, c);
    x += b(t, x) * dt + sigma(t, x) * dw;
    if (reference) sup = std::max(sup, ((*reference)[(k + 1) * ratio] - x).squaredNorm());
  }
  if (sup_gap_sq) *sup_gap_sq = sup;
  return x;
}

}  // namespace

TEST_SUITE_BEGIN("solver");

TEST_CASE("euler: constant coefficients reproduce x0 + b t + sigma W exactly") {
  int dim = 2;
  DriftSpec b;
  b.dim = dim;
  b.eval = [](double, const Vec&) {
    Vec v(2);
    v << 0.5, -1.25;
    return v;
  };
  DiffusionSpec sigma = DiffusionSpec::identity(dim, 0.75);
  TimeGrid g(0.0, 1.0, 64);
  BrownianEnsemble w(3, 10, dim, g);
  Vec x0(2);
  x0 << 1.0, -2.0;
  PathEnsemble paths = euler_maruyama(x0, b, sigma, w);
  for (int i = 0; i < 10; ++i) {
    Vec acc = x0;
    for (int k = 0; k < g.steps; ++k) {
      Vec bdt(2);
      bdt << 0.5 * g.dt(), -1.25 * g.dt();
      Vec dw(2);
      w.increment_vec(i, k, dw.data());
      acc += bdt + 0.75 * dw;
      // Same terms, possibly different summation order: roundoff only.
      CHECK((paths.at(i, k + 1) - acc).norm() < 1e-12);
    }
  }
  CHECK(paths.flagged_count() == 0);
}

TEST_CASE("euler: bit-identical across repeated runs and worker counts") {
  DriftSpec b = ou_drift(2);
  DiffusionSpec sigma = DiffusionSpec::identity(2);
  TimeGrid g(0.0, 1.0, 100);
  BrownianEnsemble w(21, 64, 2, g);
  Vec x0 = Vec::Ones(2);
  SimOptions serial;
  serial.workers = 1;
  SimOptions pooled;
  pooled.workers = 4;
  PathEnsemble a = euler_maruyama(x0, b, sigma, w, serial);
  PathEnsemble c = euler_maruyama(x0, b, sigma, w, pooled);
  REQUIRE(a.data.size() == c.data.size());
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == c.data[i]);
}

TEST_CASE("for_each_path streams the same states as the stored ensemble") {
  DriftSpec b = ou_drift(2);
  DiffusionSpec sigma = DiffusionSpec::identity(2);
  TimeGrid g(0.0, 0.5, 40);
  BrownianEnsemble w(5, 16, 2, g);
  Vec x0 = Vec::Constant(2, 0.3);
  PathEnsemble stored = euler_maruyama(x0, b, sigma, w);
  int seen = 0;
  for_each_path(x0, b, sigma, w, {}, [&](int path, std::span<const double> states, bool flag) {
    CHECK(!flag);
    REQUIRE(states.size() == static_cast<std::size_t>((g.steps + 1) * 2));
    for (int k = 0; k <= g.steps; ++k)
      for (int c = 0; c < 2; ++c)
        CHECK(states[static_cast<std::size_t>(k) * 2 + c] == stored.state(path, k)[c]);
    ++seen;
  });
  CHECK(seen == 16);
}

TEST_CASE("euler: OU mean and variance at t = 1") {
  // dX = -X dt + dW from x0 = 1: E X_1 = e^{-1}, Var X_1 = (1 - e^{-2})/2.
  DriftSpec b = ou_drift(1);
  DiffusionSpec sigma = DiffusionSpec::identity(1);
  TimeGrid g(0.0, 1.0, 200);
  const int n_paths = 20000;
  BrownianEnsemble w(17, n_paths, 1, g);
  RunningStats stats;
  for_each_path(Vec::Ones(1), b, sigma, w, {},
                [&](int, std::span<const double> states, bool) { stats.add(states[g.steps]); });
  double mean_exact = std::exp(-1.0);
  double var_exact = 0.5 * (1.0 - std::exp(-2.0));
  // 3 SE window plus an O(dt) discretization allowance.
  CHECK(std::abs(stats.mean - mean_exact) < 3.0 * stats.std_error() + 2.0 * g.dt());
  CHECK(std::abs(stats.variance() - var_exact) < 0.05 * var_exact);
}

TEST_CASE("euler: strong self-convergence in dt for a smooth system") {
  DriftSpec b = ou_drift(1);
  DiffusionSpec sigma;
  sigma.dim = 1;
  sigma.constant_in_x = false;
  sigma.eval = [](double, const Vec& x) {
    return Mat::Constant(1, 1, 1.0 + 0.4 * std::sin(x[0]));
  };
  TimeGrid fine(0.0, 1.0, 512);
  const int n_paths = 400;
  BrownianEnsemble w(31, n_paths, 1, fine);
  Vec x0 = Vec::Ones(1);
  std::vector<double> dts, gaps;
  for (int ratio : {8, 4, 2}) {
    RunningStats gap;
    for (int i = 0; i < n_paths; ++i) {
      // Reference states on the fine grid for this path.
      std::vector<Vec> ref(fine.steps + 1);
      ref[0] = x0;
      Vec x = x0;
      for (int k = 0; k < fine.steps; ++k) {
        Vec dw(1);
        w.increment_vec(i, k, dw.data());
        x += b(fine.node(k), x) * fine.dt() + sigma(fine.node(k), x) * dw;
        ref[k + 1] = x;
      }
      double sup = 0.0;
      integrate_coarse(x0, b, sigma, w, i, ratio, &sup, &ref);
      gap.add(sup);
    }
    dts.push_back(fine.dt() * ratio);
    gaps.push_back(gap.mean);
  }
  CHECK(gaps[0] > gaps[1]);
  CHECK(gaps[1] > gaps[2]);
  // E sup |X^dt - X^{fine}|^2 = O(dt) for multiplicative noise.
  CHECK(loglog_slope(dts, gaps) > 0.7);
}

TEST_CASE("euler: mollification levels of a singular drift self-converge") {
  DriftSpec b;
  b.dim = 1;
  b.p = 4.0;
  b.q = 8.0;
  b.eval = [](double, const Vec& x) {
    return std::abs(x[0]) <= 1.0 ? Vec::Ones(1) : Vec::Zero(1);
  };
  DiffusionSpec sigma = DiffusionSpec::identity(1);
  TimeGrid g(0.0, 1.0, 200);
  const int n_paths = 300;
  BrownianEnsemble w(13, n_paths, 1, g);
  Vec x0 = Vec::Zero(1);
  double prev_gap = -1.0;
  for (int level : {4, 8, 16}) {
    DriftSpec bn = mollify(b, Mollifier(1, level));
    DriftSpec b2n = mollify(b, Mollifier(1, 2 * level));
    PathEnsemble pn = euler_maruyama(x0, bn, sigma, w);
    PathEnsemble p2n = euler_maruyama(x0, b2n, sigma, w);
    RunningStats gap;
    for (int i = 0; i < n_paths; ++i) {
      double sup = 0.0;
      for (int k = 0; k <= g.steps; ++k)
        sup = std::max(sup, (pn.at(i, k) - p2n.at(i, k)).squaredNorm());
      gap.add(sup);
    }
    if (prev_gap >= 0.0) CHECK(gap.mean < prev_gap);
    prev_gap = gap.mean;
  }
}

TEST_CASE("stability: unperturbed drift gives zero distance and zero gap") {
  DriftSpec b = ou_drift(2);
  DiffusionSpec sigma = DiffusionSpec::identity(2);
  TimeGrid g(0.0, 1.0, 50);
  BrownianEnsemble w(9, 50, 2, g);
  StabilityConfig cfg;
  cfg.norm_box = Box::cube(2, -3.0, 3.0);
  auto rows = stability_experiment(Vec::Ones(2), b, {b}, sigma, w, cfg);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].drift_distance == 0.0);
  CHECK(rows[0].mean_sup_sq_gap == 0.0);
}

TEST_CASE("stability: quadratic scaling of the path gap in the drift distance") {
  DriftSpec b = ou_drift(1);
  DiffusionSpec sigma = DiffusionSpec::identity(1);
  TimeGrid g(0.0, 1.0, 100);
  BrownianEnsemble w(23, 2000, 1, g);
  std::vector<DriftSpec> perturbed;
  std::vector<double> eps = {0.4, 0.2, 0.1, 0.05};
  for (double e : eps) {
    DriftSpec bp = b;
    bp.eval = [e](double, const Vec& x) {
      return Vec(-x + Vec::Constant(1, e * std::exp(-0.5 * x[0] * x[0])));
    };
    bp.id = "ou+bump";
    perturbed.push_back(bp);
  }
  StabilityConfig cfg;
  cfg.norm_box = Box::cube(1, -4.0, 4.0);
  cfg.norm_nodes = 512;
  auto rows = stability_experiment(Vec::Ones(1), b, perturbed, sigma, w, cfg);
  std::vector<double> dist, gap;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    dist.push_back(rows[r].drift_distance);
    gap.push_back(rows[r].mean_sup_sq_gap);
    if (r > 0) {
      CHECK(rows[r].drift_distance < rows[r - 1].drift_distance);
      CHECK(rows[r].mean_sup_sq_gap < rows[r - 1].mean_sup_sq_gap);
    }
  }
  double slope = loglog_slope(dist, gap);
  CHECK(slope > 1.8);
  CHECK(slope < 2.2);
}

TEST_CASE("stability: mismatched integrability exponents are rejected") {
  DriftSpec b = ou_drift(1);
  DriftSpec other = ou_drift(1);
  other.p = 6.0;
  DiffusionSpec sigma = DiffusionSpec::identity(1);
  TimeGrid g(0.0, 1.0, 10);
  BrownianEnsemble w(1, 4, 1, g);
  StabilityConfig cfg;
  cfg.norm_box = Box::cube(1, -1.0, 1.0);
  CHECK_THROWS_AS(stability_experiment(Vec::Zero(1), b, {other}, sigma, w, cfg), ArgumentError);
}

TEST_CASE("loglog_slope: exact on a synthetic power law") {
  std::vector<double> x = {0.1, 0.2, 0.4, 0.8};
  std::vector<double> y;
  for (double v : x) y.push_back(3.0 * std::pow(v, 1.75));
  CHECK(loglog_slope(x, y) == doctest::Approx(1.75).epsilon(1e-12));
}

TEST_CASE("divergence spot check distinguishes free and non-free drifts") {
  CHECK(max_divergence(rotation_drift(), Box::cube(2, -2.0, 2.0), 0.0, 40) < 1e-5);
  CHECK(max_divergence(ou_drift(2), Box::cube(2, -2.0, 2.0), 0.0, 40) > 1.9);
}

TEST_CASE("volume preservation: zero drift and rotation pass, contraction fails") {
  auto f = [](const Vec& x) { return std::exp(-x.squaredNorm()); };
  DiffusionSpec sigma = DiffusionSpec::identity(2, 0.4);
  VolumeCheckConfig cfg;
  cfg.box = Box::cube(2, -2.0, 2.0);
  cfg.quad_nodes = 12;
  cfg.paths_per_node = 150;
  // Small dt: the explicit Euler rotation map expands radii by O(dt^2) per
  // step, which must stay below the Monte Carlo band.
  cfg.grid = TimeGrid(0.0, 0.5, 200);
  VolumeCheck zero = volume_preservation_check(DriftSpec::zero(2), sigma, f, cfg);
  CHECK(std::abs(zero.gap) < 3.0 * zero.mc_std_error + 1e-3);
  VolumeCheck rot = volume_preservation_check(rotation_drift(), sigma, f, cfg);
  CHECK(std::abs(rot.gap) < 3.0 * rot.mc_std_error + 1e-3);
  // OU contracts volume: the gap must be large and positive.
  VolumeCheck ou = volume_preservation_check(ou_drift(2), sigma, f, cfg);
  CHECK(ou.gap > 10.0 * ou.mc_std_error);
}

TEST_CASE("blow-up paths are frozen and flagged, not fatal") {
  DriftSpec b;
  b.dim = 1;
  b.eval = [](double, const Vec&) { return Vec::Constant(1, 1e5); };
  DiffusionSpec sigma = DiffusionSpec::identity(1);
  TimeGrid g(0.0, 1.0, 10);
  BrownianEnsemble w(2, 4, 1, g);
  SimOptions opts;
  opts.blowup_radius = 10.0;
  PathEnsemble paths = euler_maruyama(Vec::Zero(1), b, sigma, w, opts);
  CHECK(paths.flagged_count() == 4);
  for (int i = 0; i < 4; ++i) {
    double frozen = paths.at(i, 1)[0];
    for (int k = 2; k <= g.steps; ++k) CHECK(paths.at(i, k)[0] == frozen);
  }
}

TEST_SUITE_END();

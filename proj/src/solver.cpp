#include "sdflow/solver.hpp"

#include <cmath>
#include <numeric>

namespace sdflow {

int PathEnsemble::flagged_count() const {
  return static_cast<int>(std::accumulate(flagged.begin(), flagged.end(), 0));
}

namespace {

// Integrates one path into states (size (M+1)*d). Returns true when flagged.
bool integrate_one(const Vec& x0, const DriftSpec& b, const DiffusionSpec& sigma,
                   const BrownianEnsemble& noise, const SimOptions& opts, int path,
                   double* states) {
  const TimeGrid& g = noise.grid();
  const int d = noise.dim();
  const double dt = g.dt();
  Vec x = x0;
  Vec dw(d);
  bool frozen = false;
  for (int c = 0; c < d; ++c) states[c] = x[c];
  for (int k = 0; k < g.steps; ++k) {
    if (!frozen) {
      double t = g.node(k);
      noise.increment_vec(path, k, dw.data());
      Vec next = x + sigma(t, x) * dw;
      if (!b.is_zero()) next += b(t, x) * dt;
      if (!next.allFinite() || next.norm() > opts.blowup_radius)
        frozen = true;
      else
        x = next;
    }
    double* out = states + static_cast<std::size_t>(k + 1) * d;
    for (int c = 0; c < d; ++c) out[c] = x[c];
  }
  return frozen;
}

}  // namespace

void for_each_path(const Vec& x0, const DriftSpec& b, const DiffusionSpec& sigma,
                   const BrownianEnsemble& noise, const SimOptions& opts,
                   const std::function<void(int, std::span<const double>, bool)>& fn) {
  if (x0.size() != noise.dim()) throw ArgumentError("for_each_path: x0 dimension mismatch");
  const std::size_t path_len = static_cast<std::size_t>(noise.grid().steps + 1) * noise.dim();
  parallel_for(noise.n_paths(), opts.workers, [&](std::size_t i) {
    thread_local std::vector<double> buf;
    buf.resize(path_len);
    bool flagged = integrate_one(x0, b, sigma, noise, opts, static_cast<int>(i), buf.data());
    fn(static_cast<int>(i), std::span<const double>(buf.data(), path_len), flagged);
  });
}

PathEnsemble euler_maruyama(const Vec& x0, const DriftSpec& b, const DiffusionSpec& sigma,
                            const BrownianEnsemble& noise, const SimOptions& opts) {
  if (x0.size() != noise.dim()) throw ArgumentError("euler_maruyama: x0 dimension mismatch");
  PathEnsemble out;
  out.grid = noise.grid();
  out.n_paths = noise.n_paths();
  out.dim = noise.dim();
  out.data.resize(static_cast<std::size_t>(out.n_paths) * (out.grid.steps + 1) * out.dim);
  out.flagged.assign(out.n_paths, 0);
  out.provenance = b.id + "|" + sigma.id + "|seed=" + std::to_string(noise.seed());
  parallel_for(out.n_paths, opts.workers, [&](std::size_t i) {
    bool flagged = integrate_one(x0, b, sigma, noise, opts, static_cast<int>(i),
                                 out.state(static_cast<int>(i), 0));
    out.flagged[i] = flagged ? 1 : 0;
  });
  return out;
}

std::vector<StabilityRow> stability_experiment(const Vec& x0, const DriftSpec& b,
                                               const std::vector<DriftSpec>& perturbations,
                                               const DiffusionSpec& sigma,
                                               const BrownianEnsemble& noise,
                                               const StabilityConfig& cfg,
                                               const SimOptions& opts) {
  const TimeGrid& g = noise.grid();
  const int d = noise.dim();
  const double dt = g.dt();
  std::vector<StabilityRow> rows;
  for (const auto& bp : perturbations) {
    if (bp.dim != b.dim) throw ArgumentError("stability_experiment: drift dimension mismatch");
    if (bp.p != b.p || bp.q != b.q)
      throw ArgumentError("stability_experiment: all drifts must share (p,q)");

    // Coupled integration on identical increments; sup over the discrete grid.
    std::vector<double> sup_sq(noise.n_paths());
    parallel_for(noise.n_paths(), opts.workers, [&](std::size_t i) {
      Vec x = x0, y = x0, dw(d);
      double sup = 0.0;
      for (int k = 0; k < g.steps; ++k) {
        double t = g.node(k);
        noise.increment_vec(static_cast<int>(i), k, dw.data());
        x += b(t, x) * dt + sigma(t, x) * dw;
        y += bp(t, y) * dt + sigma(t, y) * dw;
        sup = std::max(sup, (x - y).squaredNorm());
      }
      sup_sq[i] = sup;
    });
    RunningStats stats;
    for (double v : sup_sq) stats.add(v);

    DriftSpec diff;
    diff.dim = b.dim;
    diff.p = b.p;
    diff.q = b.q;
    auto be = b.eval;
    auto pe = bp.eval;
    int dim = b.dim;
    diff.eval = [be, pe, dim](double t, const Vec& x) {
      Vec u = be ? be(t, x) : Vec::Zero(dim);
      Vec v = pe ? pe(t, x) : Vec::Zero(dim);
      return Vec(u - v);
    };
    StabilityRow row;
    row.drift_distance = lq_lp_norm(diff, cfg.norm_box, g.t_start, g.t_end, cfg.norm_nodes,
                                    cfg.norm_time_nodes);
    row.mean_sup_sq_gap = stats.mean;
    row.std_error = stats.std_error();
    row.label = bp.id;
    rows.push_back(row);
  }
  return rows;
}

double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ArgumentError("loglog_slope: need >= 2 points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double lx = std::log(x[i]);
    double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  double n = static_cast<double>(x.size());
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

VolumeCheck volume_preservation_check(const DriftSpec& b, const DiffusionSpec& sigma,
                                      const std::function<double(const Vec&)>& f,
                                      const VolumeCheckConfig& cfg, const SimOptions& opts) {
  const int d = cfg.box.dim();
  const int n = cfg.quad_nodes;
  std::size_t n_cells = 1;
  for (int i = 0; i < d; ++i) n_cells *= static_cast<std::size_t>(n);
  std::vector<double> h(d);
  double cell = 1.0;
  for (int i = 0; i < d; ++i) {
    h[i] = (cfg.box.hi[i] - cfg.box.lo[i]) / n;
    cell *= h[i];
  }

  std::vector<double> means(n_cells), vars(n_cells), fvals(n_cells);
  const TimeGrid& g = cfg.grid;
  const double dt = g.dt();
  parallel_for(n_cells, opts.workers, [&](std::size_t cidx) {
    Vec x0(d);
    std::size_t rem = cidx;
    for (int i = 0; i < d; ++i) {
      int k = static_cast<int>(rem % n);
      rem /= n;
      x0[i] = cfg.box.lo[i] + (k + 0.5) * h[i];
    }
    fvals[cidx] = f(x0);
    RunningStats stats;
    Vec x(d), dw(d);
    for (int p = 0; p < cfg.paths_per_node; ++p) {
      std::uint64_t pid = static_cast<std::uint64_t>(cidx) * cfg.paths_per_node + p;
      x = x0;
      for (int k = 0; k < g.steps; ++k) {
        double t = g.node(k);
        for (int c = 0; c < d; ++c)
          dw[c] = std::sqrt(dt) * rng::standard_normal(cfg.seed, pid, k, c);
        x += b(t, x) * dt + sigma(t, x) * dw;
      }
      stats.add(f(x));
    }
    means[cidx] = stats.mean;
    vars[cidx] = stats.variance();
  });

  VolumeCheck out;
  double var_acc = 0.0;
  for (std::size_t i = 0; i < n_cells; ++i) {
    out.lhs += means[i] * cell;
    out.rhs += fvals[i] * cell;
    var_acc += vars[i] / cfg.paths_per_node * cell * cell;
  }
  out.gap = out.lhs - out.rhs;
  out.mc_std_error = std::sqrt(var_acc);
  return out;
}

double max_divergence(const DriftSpec& b, const Box& box, double t, int samples,
                      std::uint64_t seed) {
  double worst = 0.0;
  int d = box.dim();
  for (int s = 0; s < samples; ++s) {
    Vec x(d);
    for (int c = 0; c < d; ++c) {
      double u = rng::uniform01(rng::counter_hash(seed, s, 2, c));
      x[c] = box.lo[c] + u * (box.hi[c] - box.lo[c]);
    }
    worst = std::max(worst, std::abs(b.gradient(t, x).trace()));
  }
  return worst;
}

}  // namespace sdflow

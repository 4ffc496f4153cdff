#include "sdflow/zvonkin.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sdflow {

Vec SpaceGrid::point(std::size_t flat) const {
  int d = dim();
  Vec x(d);
  for (int i = d - 1; i >= 0; --i) {
    int k = static_cast<int>(flat % shape[i]);
    flat /= shape[i];
    x[i] = box.lo[i] + k * spacing(i);
  }
  return x;
}

std::size_t SpaceGrid::flat(const std::vector<int>& idx) const {
  std::size_t f = 0;
  for (std::size_t i = 0; i < shape.size(); ++i) f = f * shape[i] + idx[i];
  return f;
}

// ---------------------------------------------------------------------------
// Gaussian propagator
// ---------------------------------------------------------------------------

namespace {

struct KernelTable {
  std::vector<long> flat_offsets;   // signed flat-index offsets
  std::vector<double> weights;      // unnormalized Gaussian values
  std::vector<std::vector<int>> offsets;  // per-entry multi-index offsets
};

KernelTable build_kernel(const SpaceGrid& grid, const Mat& A) {
  const int d = grid.dim();
  Eigen::SelfAdjointEigenSolver<Mat> es(A);
  double lmax = es.eigenvalues().maxCoeff();
  Mat Ainv = A.inverse();

  // Exponent cutoff 60 keeps truncation error ~1e-26 relative.
  double radius = std::sqrt(120.0 * lmax);
  std::vector<int> lim(d);
  std::vector<long> stride(d, 1);
  for (int i = d - 2; i >= 0; --i) stride[i] = stride[i + 1] * grid.shape[i + 1];
  std::size_t total = 1;
  for (int i = 0; i < d; ++i) {
    lim[i] = std::min(grid.shape[i] - 1,
                      static_cast<int>(std::ceil(radius / grid.spacing(i))));
    total *= static_cast<std::size_t>(2 * lim[i] + 1);
  }

  KernelTable table;
  std::vector<int> off(d);
  Vec dx(d);
  for (std::size_t c = 0; c < total; ++c) {
    std::size_t rem = c;
    long flat = 0;
    for (int i = d - 1; i >= 0; --i) {
      off[i] = static_cast<int>(rem % (2 * lim[i] + 1)) - lim[i];
      rem /= (2 * lim[i] + 1);
      dx[i] = off[i] * grid.spacing(i);
      flat += off[i] * stride[i];
    }
    double q = 0.5 * dx.dot(Ainv * dx);
    if (q > 60.0) continue;
    table.flat_offsets.push_back(flat);
    table.weights.push_back(std::exp(-q));
    table.offsets.push_back(off);
  }
  return table;
}

}  // namespace

std::vector<double> heat_propagate(const std::vector<double>& values, int comps,
                                   const SpaceGrid& grid, const Mat& covariance) {
  const int d = grid.dim();
  if (covariance.rows() != d || covariance.cols() != d)
    throw ArgumentError("heat_propagate: covariance dimension mismatch");
  const std::size_t n = grid.n_nodes();
  if (values.size() != n * comps) throw ArgumentError("heat_propagate: value size mismatch");
  if (covariance.trace() < 1e-30) return values;  // identity limit

  KernelTable table = build_kernel(grid, covariance);
  std::vector<double> out(values.size(), 0.0);
  std::vector<int> idx(d);
  for (std::size_t a = 0; a < n; ++a) {
    std::size_t rem = a;
    for (int i = d - 1; i >= 0; --i) {
      idx[i] = static_cast<int>(rem % grid.shape[i]);
      rem /= grid.shape[i];
    }
    double row_sum = 0.0;
    double* acc = out.data() + a * comps;
    for (std::size_t e = 0; e < table.weights.size(); ++e) {
      bool inside = true;
      const auto& off = table.offsets[e];
      for (int i = 0; i < d; ++i) {
        int j = idx[i] + off[i];
        if (j < 0 || j >= grid.shape[i]) {
          inside = false;
          break;
        }
      }
      if (!inside) continue;
      double w = table.weights[e];
      const double* src = values.data() + (static_cast<long>(a) + table.flat_offsets[e]) * comps;
      row_sum += w;
      for (int c = 0; c < comps; ++c) acc[c] += w * src[c];
    }
    for (int c = 0; c < comps; ++c) acc[c] /= row_sum;
  }
  return out;
}

std::vector<double> heat_propagate(const std::vector<double>& values, int comps,
                                   const SpaceGrid& grid, const DiffusionSpec& sigma, double t,
                                   double s) {
  if (!(s > t)) throw ArgumentError("heat_propagate: need s > t");
  if (!sigma.constant_in_x) throw ArgumentError("heat_propagate: sigma must be constant in x");
  // A = int_t^s sigma^t sigma dr by midpoint quadrature (exact for constant sigma).
  const int nq = 16;
  Mat A = Mat::Zero(grid.dim(), grid.dim());
  Vec origin = Vec::Zero(grid.dim());
  double h = (s - t) / nq;
  for (int k = 0; k < nq; ++k) {
    Mat m = sigma(t + (k + 0.5) * h, origin);
    A += m.transpose() * m * h;
  }
  return heat_propagate(values, comps, grid, A);
}

// ---------------------------------------------------------------------------
// SpaceTimeField
// ---------------------------------------------------------------------------

namespace {

// Multilinear interpolation of one time slice at x; zero outside the box.
Vec interp_slice(const double* slice, const SpaceGrid& grid, int comps, const Vec& x) {
  const int d = grid.dim();
  for (int i = 0; i < d; ++i)
    if (x[i] < grid.box.lo[i] || x[i] > grid.box.hi[i]) return Vec::Zero(comps);
  std::vector<int> base(d);
  std::vector<double> frac(d);
  for (int i = 0; i < d; ++i) {
    double s = (x[i] - grid.box.lo[i]) / grid.spacing(i);
    int k = std::min(static_cast<int>(s), grid.shape[i] - 2);
    base[i] = k;
    frac[i] = s - k;
  }
  Vec acc = Vec::Zero(comps);
  std::vector<int> idx(d);
  for (int corner = 0; corner < (1 << d); ++corner) {
    double w = 1.0;
    for (int i = 0; i < d; ++i) {
      int bit = (corner >> i) & 1;
      idx[i] = base[i] + bit;
      w *= bit ? frac[i] : 1.0 - frac[i];
    }
    if (w == 0.0) continue;
    const double* v = slice + grid.flat(idx) * comps;
    for (int c = 0; c < comps; ++c) acc[c] += w * v[c];
  }
  return acc;
}

// Central-difference spatial gradient of a slice at node idx (one-sided at edges).
// g(c, axis) = d u_c / d x_axis.
Mat node_gradient(const double* slice, const SpaceGrid& grid, int comps, std::vector<int>& idx) {
  const int d = grid.dim();
  Mat g(comps, d);
  for (int axis = 0; axis < d; ++axis) {
    int k = idx[axis];
    int kp = std::min(k + 1, grid.shape[axis] - 1);
    int km = std::max(k - 1, 0);
    idx[axis] = kp;
    std::size_t fp = grid.flat(idx);
    idx[axis] = km;
    std::size_t fm = grid.flat(idx);
    idx[axis] = k;
    double denom = (kp - km) * grid.spacing(axis);
    for (int c = 0; c < comps; ++c)
      g(c, axis) = (slice[fp * comps + c] - slice[fm * comps + c]) / denom;
  }
  return g;
}

}  // namespace

Vec SpaceTimeField::eval(double t, const Vec& x) const {
  double s = (t - tgrid.t_start) / tgrid.dt();
  int k = std::clamp(static_cast<int>(s), 0, tgrid.steps - 1);
  double w = std::clamp(s - k, 0.0, 1.0);
  Vec a = interp_slice(slice(k), xgrid, comps, x);
  Vec b = interp_slice(slice(k + 1), xgrid, comps, x);
  return (1.0 - w) * a + w * b;
}

Mat SpaceTimeField::gradient(double t, const Vec& x) const {
  // Gradient by central differences of the interpolant, step = half a cell.
  const int d = xgrid.dim();
  Mat g(comps, d);
  Vec xp = x, xm = x;
  for (int axis = 0; axis < d; ++axis) {
    double h = 0.5 * xgrid.spacing(axis);
    xp[axis] = x[axis] + h;
    xm[axis] = x[axis] - h;
    g.col(axis) = (eval(t, xp) - eval(t, xm)) / (2.0 * h);
    xp[axis] = x[axis];
    xm[axis] = x[axis];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Picard corrector
// ---------------------------------------------------------------------------

ZvonkinSolution solve_corrector(const DriftSpec& b, const DiffusionSpec& sigma, double t0,
                                double s0, const SpaceGrid& grid, const CorrectorConfig& cfg) {
  if (!(s0 > t0)) throw ArgumentError("solve_corrector: need s0 > t0");
  if (!sigma.constant_in_x)
    throw ArgumentError("solve_corrector: only constant-in-x diffusions are solved");
  const int d = grid.dim();
  if (b.dim != d) throw ArgumentError("solve_corrector: drift dimension mismatch");

  const int nt = cfg.time_nodes;
  const double dt = (s0 - t0) / nt;
  const std::size_t n = grid.n_nodes();

  // Sample the drift on the space-time grid once.
  std::vector<std::vector<double>> b_vals(nt + 1, std::vector<double>(n * d));
  for (int j = 0; j <= nt; ++j) {
    double t = t0 + j * dt;
    for (std::size_t a = 0; a < n; ++a) {
      Vec v = b(t, grid.point(a));
      for (int c = 0; c < d; ++c) b_vals[j][a * d + c] = v[c];
    }
  }

  // Gaussian kernels per time lag (sigma constant in x; midpoint in t).
  Vec origin = Vec::Zero(d);
  std::vector<Mat> lag_cov(nt + 1, Mat::Zero(d, d));
  for (int lag = 1; lag <= nt; ++lag) {
    Mat A = Mat::Zero(d, d);
    for (int k = 0; k < lag; ++k) {
      Mat m = sigma(s0 - (k + 0.5) * dt, origin);
      A += m.transpose() * m * dt;
    }
    lag_cov[lag] = A;
  }

  SpaceTimeField u;
  u.tgrid = TimeGrid(t0, s0, nt);
  u.xgrid = grid;
  u.comps = d;
  u.values.assign(static_cast<std::size_t>(nt + 1) * n * d, 0.0);

  auto source = [&](int j, std::vector<double>& f) {
    // f = b . grad u + b at time node j.
    const double* us = u.slice(j);
    std::vector<int> idx(d, 0);
    for (std::size_t a = 0; a < n; ++a) {
      std::size_t rem = a;
      for (int i = d - 1; i >= 0; --i) {
        idx[i] = static_cast<int>(rem % grid.shape[i]);
        rem /= grid.shape[i];
      }
      Mat g = node_gradient(us, grid, d, idx);
      for (int c = 0; c < d; ++c) {
        double v = b_vals[j][a * d + c];
        for (int axis = 0; axis < d; ++axis) v += b_vals[j][a * d + axis] * g(c, axis);
        f[a * d + c] = v;
      }
    }
  };

  std::vector<double> f(n * d), prop;
  std::vector<std::vector<double>> sources(nt + 1, std::vector<double>(n * d));
  std::vector<double> u_new(u.values.size());
  double gap = 0.0, prev_gap = std::numeric_limits<double>::infinity();
  int growth_streak = 0;
  int iter = 0;
  for (; iter < cfg.max_iterations; ++iter) {
    for (int j = 0; j <= nt; ++j) source(j, sources[j]);
    std::fill(u_new.begin(), u_new.end(), 0.0);
    for (int i = 0; i < nt; ++i) {
      double* target = u_new.data() + static_cast<std::size_t>(i) * n * d;
      // Trapezoidal rule over s in [t_i, s0]; T_{t,t} is the identity.
      for (int j = i; j <= nt; ++j) {
        double w = (j == i || j == nt) ? 0.5 * dt : dt;
        const std::vector<double>* contrib;
        if (j == i) {
          contrib = &sources[j];
        } else {
          prop = heat_propagate(sources[j], d, grid, lag_cov[j - i]);
          contrib = &prop;
        }
        for (std::size_t c = 0; c < n * d; ++c) target[c] += w * (*contrib)[c];
      }
    }
    gap = 0.0;
    for (std::size_t c = 0; c < u.values.size(); ++c)
      gap = std::max(gap, std::abs(u_new[c] - u.values[c]));
    u.values.swap(u_new);
    if (gap < cfg.tol) {
      ++iter;
      break;
    }
    if (gap > prev_gap) {
      if (++growth_streak >= 3)
        throw NumericalError(
            "solve_corrector: Picard iterates expanding; shorten the interval [t0,s0]");
    } else {
      growth_streak = 0;
    }
    prev_gap = gap;
  }

  ZvonkinSolution sol;
  sol.corrector = std::move(u);
  sol.b = b;
  sol.sigma = sigma;
  sol.t0 = t0;
  sol.s0 = s0;
  sol.picard_iterations = iter;
  sol.final_gap = gap;

  // PDE residual at interior nodes, finite differences in t and x.
  Mat a_mat;
  {
    Mat m = sigma(0.5 * (t0 + s0), origin);
    a_mat = m * m.transpose();
  }
  double res = 0.0;
  std::vector<int> idx(d, 0);
  const auto& cor = sol.corrector;
  for (int j = 1; j < nt; ++j) {
    double t = t0 + j * dt;
    const double* um = cor.slice(j - 1);
    const double* uc = cor.slice(j);
    const double* up = cor.slice(j + 1);
    for (std::size_t a = 0; a < n; ++a) {
      std::size_t rem = a;
      bool interior = true;
      for (int i = d - 1; i >= 0; --i) {
        idx[i] = static_cast<int>(rem % grid.shape[i]);
        rem /= grid.shape[i];
      }
      Vec x = grid.point(a);
      for (int i = 0; i < d; ++i) {
        if (x[i] < grid.box.lo[i] + cfg.interior_margin ||
            x[i] > grid.box.hi[i] - cfg.interior_margin) {
          interior = false;
          break;
        }
      }
      if (!interior) continue;
      Mat g = node_gradient(uc, grid, d, idx);
      for (int c = 0; c < d; ++c) {
        double r = (up[a * d + c] - um[a * d + c]) / (2.0 * dt);
        // (1/2) tr(a grad^2 u_c): pure + mixed second differences.
        for (int ai = 0; ai < d; ++ai) {
          int k = idx[ai];
          idx[ai] = k + 1;
          std::size_t fp = grid.flat(idx);
          idx[ai] = k - 1;
          std::size_t fm = grid.flat(idx);
          idx[ai] = k;
          double h = grid.spacing(ai);
          double dii = (uc[fp * d + c] - 2.0 * uc[a * d + c] + uc[fm * d + c]) / (h * h);
          r += 0.5 * a_mat(ai, ai) * dii;
          for (int bi = ai + 1; bi < d; ++bi) {
            int kb = idx[bi];
            double hb = grid.spacing(bi);
            idx[ai] = k + 1;
            idx[bi] = kb + 1;
            double upp = uc[grid.flat(idx) * d + c];
            idx[bi] = kb - 1;
            double upm = uc[grid.flat(idx) * d + c];
            idx[ai] = k - 1;
            double umm = uc[grid.flat(idx) * d + c];
            idx[bi] = kb + 1;
            double ump = uc[grid.flat(idx) * d + c];
            idx[ai] = k;
            idx[bi] = kb;
            double dij = (upp - upm - ump + umm) / (4.0 * h * hb);
            r += a_mat(ai, bi) * dij;  // symmetric pair counted once
          }
        }
        for (int axis = 0; axis < d; ++axis) r += b_vals[j][a * d + axis] * g(c, axis);
        r += b_vals[j][a * d + c];
        res = std::max(res, std::abs(r));
      }
    }
  }
  sol.residual_sup = res;
  return sol;
}

BiLipschitzResult bilipschitz_check(const ZvonkinSolution& sol, int n_pairs, std::uint64_t seed) {
  const SpaceGrid& grid = sol.corrector.xgrid;
  const int d = grid.dim();
  BiLipschitzResult out{std::numeric_limits<double>::infinity(), 0.0};
  for (int s = 0; s < n_pairs; ++s) {
    Vec x(d), y(d);
    for (int c = 0; c < d; ++c) {
      // Stay one cell away from the zero-extension boundary.
      double lo = grid.box.lo[c] + grid.spacing(c);
      double hi = grid.box.hi[c] - grid.spacing(c);
      x[c] = lo + rng::uniform01(rng::counter_hash(seed, s, 0, c)) * (hi - lo);
      y[c] = lo + rng::uniform01(rng::counter_hash(seed, s, 1, c)) * (hi - lo);
    }
    if ((x - y).norm() < 1e-12) continue;
    double t = sol.t0 + rng::uniform01(rng::counter_hash(seed, s, 2, 0)) * (sol.s0 - sol.t0);
    double ratio = (sol.phi(t, x) - sol.phi(t, y)).norm() / (x - y).norm();
    out.min_ratio = std::min(out.min_ratio, ratio);
    out.max_ratio = std::max(out.max_ratio, ratio);
  }
  return out;
}

DriftRemovalResult drift_removal_check(const ZvonkinSolution& sol, const DriftRemovalConfig& cfg,
                                       const SimOptions& opts) {
  const SpaceGrid& grid = sol.corrector.xgrid;
  const int d = grid.dim();
  const TimeGrid tg(sol.t0, sol.s0, cfg.steps);
  const double dt = tg.dt();
  const double sq = std::sqrt(dt);

  // Initial points cover the central fraction of the box along every axis.
  Vec span = grid.box.hi - grid.box.lo;
  Vec lo = grid.box.lo + 0.5 * (1.0 - cfg.initial_spread) * span;
  Vec hi = grid.box.hi - 0.5 * (1.0 - cfg.initial_spread) * span;
  double bin_lo = lo[0], bin_hi = hi[0];
  double bin_w = (bin_hi - bin_lo) / cfg.n_bins;

  // Per-path accumulator slots merged sequentially afterwards, so results do
  // not depend on the worker count. Layout per path: for each bin,
  // [count, sum_x (d), sum_y (d), sumsq_y (d)].
  const int rec = 1 + 3 * d;
  std::vector<double> partial(static_cast<std::size_t>(cfg.n_paths) * cfg.n_bins * rec, 0.0);
  std::vector<long> excluded(cfg.n_paths, 0);

  parallel_for(cfg.n_paths, opts.workers, [&](std::size_t pi) {
    double* bins = partial.data() + pi * cfg.n_bins * rec;
    Vec x(d), dw(d);
    for (int c = 0; c < d; ++c)
      x[c] = lo[c] +
             rng::uniform01(rng::counter_hash(cfg.seed ^ 0xabcdULL, pi, 0, c)) * (hi[c] - lo[c]);
    for (int k = 0; k < tg.steps; ++k) {
      double t = tg.node(k);
      Mat s = sol.sigma(t, x);
      for (int c = 0; c < d; ++c)
        dw[c] = sq * rng::standard_normal(cfg.seed, pi, k, c);
      Vec bv = sol.b(t, x);
      Vec x_next = x + bv * dt + s * dw;
      if (!grid.box.contains(x) || !grid.box.contains(x_next)) {
        ++excluded[pi];
        x = x_next;
        continue;
      }
      int bin = static_cast<int>((x[0] - bin_lo) / bin_w);
      if (bin < 0 || bin >= cfg.n_bins) {
        x = x_next;
        continue;
      }
      Vec y = sol.phi(t, x);
      Vec y_next = sol.phi(tg.node(k + 1), x_next);
      Vec drift_y = (y_next - y - sol.phi_gradient(t, x) * s * dw) / dt;
      double* bacc = bins + bin * rec;
      bacc[0] += 1.0;
      for (int c = 0; c < d; ++c) {
        bacc[1 + c] += bv[c];
        bacc[1 + d + c] += drift_y[c];
        bacc[1 + 2 * d + c] += drift_y[c] * drift_y[c];
      }
      x = x_next;
    }
  });

  DriftRemovalResult out;
  out.bin_drift_x.assign(cfg.n_bins, 0.0);
  out.bin_drift_y.assign(cfg.n_bins, 0.0);
  for (int bin = 0; bin < cfg.n_bins; ++bin) {
    double n = 0;
    Vec mx = Vec::Zero(d), my = Vec::Zero(d), ssy = Vec::Zero(d);
    for (int pi = 0; pi < cfg.n_paths; ++pi) {
      const double* bacc = partial.data() + (static_cast<std::size_t>(pi) * cfg.n_bins + bin) * rec;
      n += bacc[0];
      for (int c = 0; c < d; ++c) {
        mx[c] += bacc[1 + c];
        my[c] += bacc[1 + d + c];
        ssy[c] += bacc[1 + 2 * d + c];
      }
    }
    if (n == 0) continue;
    mx /= n;
    my /= n;
    double se = 0.0;
    for (int c = 0; c < d; ++c) {
      double var = std::max(0.0, ssy[c] / n - my[c] * my[c]);
      se = std::max(se, std::sqrt(var / n));
    }
    out.bin_drift_x[bin] = mx.norm();
    out.bin_drift_y[bin] = my.norm();
    out.sup_drift_x = std::max(out.sup_drift_x, mx.norm());
    out.sup_drift_y = std::max(out.sup_drift_y, my.norm());
    out.max_std_error = std::max(out.max_std_error, se);
  }
  for (long e : excluded) out.excluded += e;
  out.reduction = out.sup_drift_x > 0 ? out.sup_drift_y / out.sup_drift_x : 0.0;
  return out;
}

}  // namespace sdflow

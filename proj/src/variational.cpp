#include "sdflow/variational.hpp"

#include <cmath>

namespace sdflow {

namespace {

void check_grids(const PathEnsemble& paths, const BrownianEnsemble& noise) {
  if (!(paths.grid == noise.grid()) || paths.n_paths != noise.n_paths() ||
      paths.dim != noise.dim())
    throw ArgumentError("variational: path ensemble and noise grids do not match");
}

// One Euler step of the linear variational recursion applied to matrix V:
//   V += grad_b V dt + sum_m grad_sigma^{(m)} V dW^m.
void linear_step(Mat& V, const Mat& grad_b, const std::vector<Mat>* grad_sigma, const Vec& dw,
                 double dt, bool has_drift, bool has_sigma_grad) {
  Mat incr = Mat::Zero(V.rows(), V.cols());
  if (has_drift) incr += grad_b * V * dt;
  if (has_sigma_grad)
    for (std::size_t m = 0; m < grad_sigma->size(); ++m) incr += (*grad_sigma)[m] * V * dw[m];
  V += incr;
}

}  // namespace

JacobianEnsemble jacobian_flow(const PathEnsemble& paths, const DriftSpec& b,
                               const DiffusionSpec& sigma, const BrownianEnsemble& noise,
                               const SimOptions& opts, const Mat& initial) {
  check_grids(paths, noise);
  const int d = paths.dim;
  Mat J0 = initial.size() ? initial : Mat::Identity(d, d);
  if (J0.rows() != d || J0.cols() != d)
    throw ArgumentError("jacobian_flow: initial matrix dimension mismatch");

  JacobianEnsemble out;
  out.grid = paths.grid;
  out.n_paths = paths.n_paths;
  out.dim = d;
  out.data.resize(static_cast<std::size_t>(out.n_paths) * (out.grid.steps + 1) * d * d);

  const double dt = paths.grid.dt();
  const bool has_drift = !b.is_zero();
  const bool has_sigma_grad = sigma.has_gradient();
  parallel_for(out.n_paths, opts.workers, [&](std::size_t i) {
    int path = static_cast<int>(i);
    Mat J = J0;
    Vec dw(d);
    for (int c = 0; c < d * d; ++c) out.raw(path, 0)[c] = J(c / d, c % d);
    for (int k = 0; k < paths.grid.steps; ++k) {
      double t = paths.grid.node(k);
      Vec x = paths.at(path, k);
      noise.increment_vec(path, k, dw.data());
      Mat gb;
      std::vector<Mat> gs;
      if (has_drift) gb = b.gradient(t, x);
      if (has_sigma_grad) gs = sigma.column_gradients(t, x);
      linear_step(J, gb, &gs, dw, dt, has_drift, has_sigma_grad);
      double* raw = out.raw(path, k + 1);
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) raw[r * d + c] = J(r, c);
    }
  });
  return out;
}

MalliavinEnsemble malliavin_derivative(const PathEnsemble& paths, const DriftSpec& b,
                                       const DiffusionSpec& sigma, const BrownianEnsemble& noise,
                                       const DirectionFn& hdot, const SimOptions& opts) {
  check_grids(paths, noise);
  if (!hdot) throw ArgumentError("malliavin_derivative: direction process required");
  const int d = paths.dim;
  MalliavinEnsemble out;
  out.grid = paths.grid;
  out.n_paths = paths.n_paths;
  out.dim = d;
  out.data.assign(static_cast<std::size_t>(out.n_paths) * (out.grid.steps + 1) * d, 0.0);

  const double dt = paths.grid.dt();
  const bool has_drift = !b.is_zero();
  const bool has_sigma_grad = sigma.has_gradient();
  parallel_for(out.n_paths, opts.workers, [&](std::size_t i) {
    int path = static_cast<int>(i);
    Vec D = Vec::Zero(d);
    Mat J = Mat::Identity(d, d);  // adapted Jacobian fed to hdot
    Vec dw(d);
    for (int k = 0; k < paths.grid.steps; ++k) {
      double t = paths.grid.node(k);
      Vec x = paths.at(path, k);
      noise.increment_vec(path, k, dw.data());
      Mat gb;
      std::vector<Mat> gs;
      if (has_drift) gb = b.gradient(t, x);
      if (has_sigma_grad) gs = sigma.column_gradients(t, x);
      Vec h = hdot(path, k, x, J);
      Vec incr = sigma(t, x) * h * dt;
      if (has_drift) incr += gb * D * dt;
      if (has_sigma_grad)
        for (int m = 0; m < d; ++m) incr += gs[m] * D * dw[m];
      D += incr;
      linear_step(J, gb, &gs, dw, dt, has_drift, has_sigma_grad);
      double* raw = out.raw(path, k + 1);
      for (int c = 0; c < d; ++c) raw[c] = D[c];
    }
  });
  return out;
}

std::vector<Mat> malliavin_covariance(const PathEnsemble& paths, const JacobianEnsemble& jac,
                                      const DiffusionSpec& sigma) {
  const int d = paths.dim;
  const double dt = paths.grid.dt();
  std::vector<Mat> out(paths.n_paths);
  for (int i = 0; i < paths.n_paths; ++i) {
    Mat JM = jac.at(i, paths.grid.steps);
    Mat S = Mat::Zero(d, d);
    for (int k = 0; k < paths.grid.steps; ++k) {
      Mat Jk_inv = jac.at(i, k).inverse();
      Mat A = JM * Jk_inv * sigma(paths.grid.node(k), paths.at(i, k));
      S += A * A.transpose() * dt;
    }
    out[i] = 0.5 * (S + S.transpose());
  }
  return out;
}

GradientEstimate bel_gradient(const PathEnsemble& paths, const JacobianEnsemble& jac,
                              const DiffusionSpec& sigma,
                              const std::function<double(const Vec&)>& f,
                              const BrownianEnsemble& noise) {
  check_grids(paths, noise);
  const int d = paths.dim;
  const int M = paths.grid.steps;
  const double horizon = paths.grid.horizon();
  const double inv_bound = 10.0 * sigma.ellipticity_K;

  std::vector<RunningStats> comp(d);
  int flagged = 0;
  Vec dw(d);
  for (int i = 0; i < paths.n_paths; ++i) {
    Vec weight = Vec::Zero(d);
    bool bad = false;
    for (int k = 0; k < M; ++k) {
      Mat s = sigma(paths.grid.node(k), paths.at(i, k));
      Mat sinv = s.inverse();
      if (!sinv.allFinite() || sinv.norm() > inv_bound) {
        bad = true;
        break;
      }
      noise.increment_vec(i, k, dw.data());
      weight += sinv * jac.at(i, k) * dw;
    }
    if (bad) {
      ++flagged;
      continue;
    }
    double fv = f(paths.at(i, M));
    for (int c = 0; c < d; ++c) comp[c].add(fv * weight[c] / horizon);
  }

  GradientEstimate out;
  out.estimate = Vec(d);
  out.std_error = Vec(d);
  out.point = paths.at(0, 0);
  out.horizon = horizon;
  out.dt = paths.grid.dt();
  out.n_paths = paths.n_paths - flagged;
  out.flagged = flagged;
  for (int c = 0; c < d; ++c) {
    out.estimate[c] = comp[c].mean;
    out.std_error[c] = comp[c].std_error();
  }
  return out;
}

GradientEstimate bel_gradient_mc(const Vec& x0, const DriftSpec& b, const DiffusionSpec& sigma,
                                 const BrownianEnsemble& noise,
                                 const std::function<double(const Vec&)>& f,
                                 const SimOptions& opts) {
  const int d = noise.dim();
  if (x0.size() != d) throw ArgumentError("bel_gradient_mc: x0 dimension mismatch");
  const TimeGrid& g = noise.grid();
  const double dt = g.dt();
  const double horizon = g.horizon();
  const double inv_bound = 10.0 * sigma.ellipticity_K;
  const bool has_drift = !b.is_zero();
  const bool has_sigma_grad = sigma.has_gradient();

  std::vector<double> values(static_cast<std::size_t>(noise.n_paths()) * d);
  std::vector<uint8_t> bad(noise.n_paths(), 0);
  parallel_for(noise.n_paths(), opts.workers, [&](std::size_t i) {
    int path = static_cast<int>(i);
    Vec x = x0, dw(d), weight = Vec::Zero(d);
    Mat J = Mat::Identity(d, d);
    for (int k = 0; k < g.steps; ++k) {
      double t = g.node(k);
      Mat s = sigma(t, x);
      Mat sinv = s.inverse();
      if (!sinv.allFinite() || sinv.norm() > inv_bound) {
        bad[i] = 1;
        return;
      }
      noise.increment_vec(path, k, dw.data());
      weight += sinv * J * dw;
      Mat gb;
      std::vector<Mat> gs;
      if (has_drift) gb = b.gradient(t, x);
      if (has_sigma_grad) gs = sigma.column_gradients(t, x);
      Vec next = x + s * dw;
      if (has_drift) next += b(t, x) * dt;
      linear_step(J, gb, &gs, dw, dt, has_drift, has_sigma_grad);
      x = next;
    }
    double fv = f(x);
    for (int c = 0; c < d; ++c) values[i * d + c] = fv * weight[c] / horizon;
  });

  GradientEstimate out;
  out.estimate = Vec(d);
  out.std_error = Vec(d);
  out.point = x0;
  out.horizon = horizon;
  out.dt = dt;
  out.flagged = 0;
  std::vector<RunningStats> comp(d);
  for (int i = 0; i < noise.n_paths(); ++i) {
    if (bad[i]) {
      ++out.flagged;
      continue;
    }
    for (int c = 0; c < d; ++c) comp[c].add(values[static_cast<std::size_t>(i) * d + c]);
  }
  out.n_paths = noise.n_paths() - out.flagged;
  for (int c = 0; c < d; ++c) {
    out.estimate[c] = comp[c].mean;
    out.std_error[c] = comp[c].std_error();
  }
  return out;
}

GradientEstimate finite_difference_gradient(const Vec& x0, const DriftSpec& b,
                                            const DiffusionSpec& sigma,
                                            const BrownianEnsemble& noise,
                                            const std::function<double(const Vec&)>& f,
                                            double step, const SimOptions& opts) {
  const int d = noise.dim();
  const TimeGrid& g = noise.grid();
  const double dt = g.dt();

  GradientEstimate out;
  out.estimate = Vec(d);
  out.std_error = Vec(d);
  out.point = x0;
  out.horizon = g.horizon();
  out.dt = dt;
  out.n_paths = noise.n_paths();

  for (int c = 0; c < d; ++c) {
    Vec xp = x0, xm = x0;
    xp[c] += step;
    xm[c] -= step;
    // Same increments for both shifted starts: the difference isolates the
    // initial-point sensitivity.
    std::vector<double> diffs(noise.n_paths());
    parallel_for(noise.n_paths(), opts.workers, [&](std::size_t i) {
      int path = static_cast<int>(i);
      Vec a = xp, bx = xm, dw(d);
      for (int k = 0; k < g.steps; ++k) {
        double t = g.node(k);
        noise.increment_vec(path, k, dw.data());
        Vec na = a + sigma(t, a) * dw;
        Vec nb = bx + sigma(t, bx) * dw;
        if (!b.is_zero()) {
          na += b(t, a) * dt;
          nb += b(t, bx) * dt;
        }
        a = na;
        bx = nb;
      }
      diffs[i] = (f(a) - f(bx)) / (2.0 * step);
    });
    RunningStats stats;
    for (double v : diffs) stats.add(v);
    out.estimate[c] = stats.mean;
    out.std_error[c] = stats.std_error();
  }
  return out;
}

}  // namespace sdflow

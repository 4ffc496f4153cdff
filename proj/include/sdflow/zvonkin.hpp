#pragma once

#include "sdflow/solver.hpp"

#include <vector>

namespace sdflow {

/// Uniform node grid on a box, endpoints included.
struct SpaceGrid {
  Box box;
  std::vector<int> shape;

  SpaceGrid() = default;
  SpaceGrid(Box b, std::vector<int> s) : box(std::move(b)), shape(std::move(s)) {
    if (static_cast<int>(shape.size()) != box.dim())
      throw ArgumentError("SpaceGrid: shape rank != box dim");
    for (int n : shape)
      if (n < 3) throw ArgumentError("SpaceGrid: need >= 3 nodes per axis");
  }

  int dim() const { return box.dim(); }
  double spacing(int axis) const { return (box.hi[axis] - box.lo[axis]) / (shape[axis] - 1); }
  std::size_t n_nodes() const {
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    return n;
  }
  Vec point(std::size_t flat) const;
  std::size_t flat(const std::vector<int>& idx) const;
};

/// Gaussian propagator T_{t,s} f with covariance A = int_t^s sigma^t sigma dr,
/// by direct kernel quadrature on the grid. Kernel rows are renormalized to
/// unit mass, so the A -> 0 limit degenerates to the identity on the grid.
/// `values` holds `comps` interleaved components per node.
std::vector<double> heat_propagate(const std::vector<double>& values, int comps,
                                   const SpaceGrid& grid, const Mat& covariance);

/// Convenience wrapper for a constant-in-x diffusion over [t,s]; s <= t is an error.
std::vector<double> heat_propagate(const std::vector<double>& values, int comps,
                                   const SpaceGrid& grid, const DiffusionSpec& sigma, double t,
                                   double s);

/// Vector field sampled on (time node, space node): multilinear in space,
/// linear in time, finite-difference spatial gradient.
struct SpaceTimeField {
  TimeGrid tgrid;
  SpaceGrid xgrid;
  int comps = 0;
  std::vector<double> values;  // [time][node][comp]

  double* slice(int time_node) {
    return values.data() + static_cast<std::size_t>(time_node) * xgrid.n_nodes() * comps;
  }
  const double* slice(int time_node) const {
    return values.data() + static_cast<std::size_t>(time_node) * xgrid.n_nodes() * comps;
  }
  Vec eval(double t, const Vec& x) const;
  /// (i,j) = d u_i / d x_j, interpolated from on-grid central differences.
  Mat gradient(double t, const Vec& x) const;
};

/// Corrector u solving the backward PDE
///   du/dt + (1/2) tr(sigma sigma^t grad^2 u) + b . grad u + b = 0,  u(s0) = 0,
/// and the associated map Phi(t,x) = x + u(t,x).
struct ZvonkinSolution {
  SpaceTimeField corrector;
  DriftSpec b;
  DiffusionSpec sigma;
  double t0 = 0.0;
  double s0 = 0.0;
  int picard_iterations = 0;
  double final_gap = 0.0;     // sup-norm gap of the last two Picard iterates
  double residual_sup = 0.0;  // finite-difference PDE residual at interior nodes

  Vec phi(double t, const Vec& x) const { return x + corrector.eval(t, x); }
  Mat phi_gradient(double t, const Vec& x) const {
    return Mat::Identity(corrector.comps, corrector.comps) + corrector.gradient(t, x);
  }
};

struct CorrectorConfig {
  int time_nodes = 64;
  double tol = 1e-8;
  int max_iterations = 50;
  double interior_margin = 1.0;  // strip excluded from the residual check
};

/// Picard iteration u^{m+1}(t) = int_t^{s0} T_{t,s}[b . grad u^m + b](s) ds on
/// the grid. Throws NumericalError when the iteration expands for three
/// consecutive sweeps (interval too long for contraction).
ZvonkinSolution solve_corrector(const DriftSpec& b, const DiffusionSpec& sigma, double t0,
                                double s0, const SpaceGrid& grid, const CorrectorConfig& cfg = {});

struct BiLipschitzResult {
  double min_ratio = 0.0;
  double max_ratio = 0.0;
};

/// Ratio |Phi_t(x)-Phi_t(y)|/|x-y| over sampled pairs and times.
BiLipschitzResult bilipschitz_check(const ZvonkinSolution& sol, int n_pairs,
                                    std::uint64_t seed = 5);

struct DriftRemovalResult {
  double sup_drift_x = 0.0;   // sup over bins of |empirical drift of X|
  double sup_drift_y = 0.0;   // same for Y = Phi(X)
  double reduction = 0.0;     // sup_drift_y / sup_drift_x
  double max_std_error = 0.0; // largest per-bin standard error (Y estimator)
  long excluded = 0;          // samples outside the PDE grid box
  std::vector<double> bin_drift_x;
  std::vector<double> bin_drift_y;
};

struct DriftRemovalConfig {
  std::uint64_t seed = 2;
  int n_paths = 20000;
  int steps = 50;
  int n_bins = 6;
  double initial_spread = 0.5;  // initial points cover this central fraction of the box
};

/// Simulates X under the solution's drift, maps Y = Phi(t,X), and estimates
/// the drift of both processes binned by the first state coordinate. The
/// estimator subtracts the known martingale increment (common-random-numbers
/// control variate), so X's empirical drift equals b(t_k, X_k) exactly and
/// Y's exposes only the discretization residual.
DriftRemovalResult drift_removal_check(const ZvonkinSolution& sol,
                                       const DriftRemovalConfig& cfg = {},
                                       const SimOptions& opts = {});

}  // namespace sdflow

#pragma once

#include "sdflow/fields.hpp"
#include "sdflow/paths.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace sdflow {

struct SimOptions {
  double blowup_radius = 1e6;  // paths exiting this radius are frozen and flagged
  int workers = 1;
};

/// Stored ensemble of sample paths. States X[i][k] live at the grid nodes;
/// X[i][0] is the initial point. Prefer for_each_path for large N.
struct PathEnsemble {
  TimeGrid grid;
  int n_paths = 0;
  int dim = 0;
  std::vector<double> data;      // [path][node][component]
  std::vector<uint8_t> flagged;  // blow-up diagnostic per path
  std::string provenance;

  const double* state(int path, int node) const {
    return data.data() + (static_cast<std::size_t>(path) * (grid.steps + 1) + node) * dim;
  }
  double* state(int path, int node) {
    return data.data() + (static_cast<std::size_t>(path) * (grid.steps + 1) + node) * dim;
  }
  Vec at(int path, int node) const {
    return Eigen::Map<const Vec>(state(path, node), dim);
  }
  int flagged_count() const;
};

/// Explicit Euler-Maruyama over the noise grid:
///   X[k+1] = X[k] + b(t_k, X[k]) dt + sigma(t_k, X[k]) dW[k].
/// Deterministic given the noise; blow-ups freeze the path and set its flag.
PathEnsemble euler_maruyama(const Vec& x0, const DriftSpec& b, const DiffusionSpec& sigma,
                            const BrownianEnsemble& noise, const SimOptions& opts = {});

/// Streaming variant: integrates each path into a scratch buffer of
/// (steps+1) x dim doubles and hands it to fn(path, states, flagged).
/// fn must only touch per-path output slots (runs under parallel_for).
void for_each_path(const Vec& x0, const DriftSpec& b, const DiffusionSpec& sigma,
                   const BrownianEnsemble& noise, const SimOptions& opts,
                   const std::function<void(int, std::span<const double>, bool)>& fn);

/// One row of the drift-stability experiment: distance in L^q_p between the
/// drifts versus the mean supremum-squared path gap under common noise.
struct StabilityRow {
  double drift_distance = 0.0;
  double mean_sup_sq_gap = 0.0;
  double std_error = 0.0;
  std::string label;
};

struct StabilityConfig {
  Box norm_box;               // box for the L^q_p drift-distance quadrature
  int norm_nodes = 48;
  int norm_time_nodes = 16;
};

/// Runs the base and each perturbed system on identical increments and
/// reports E sup_k |X^b - X^{b'}|^2 paired with ||b - b'||_{L^q_p}.
std::vector<StabilityRow> stability_experiment(const Vec& x0, const DriftSpec& b,
                                               const std::vector<DriftSpec>& perturbations,
                                               const DiffusionSpec& sigma,
                                               const BrownianEnsemble& noise,
                                               const StabilityConfig& cfg,
                                               const SimOptions& opts = {});

/// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

struct VolumeCheck {
  double lhs = 0.0;  // quadrature of MC-average f(X_{t,s}(x)) over initial nodes
  double rhs = 0.0;  // same quadrature applied to f directly
  double gap = 0.0;
  double mc_std_error = 0.0;
};

struct VolumeCheckConfig {
  Box box;                 // initial-point quadrature box
  int quad_nodes = 48;     // nodes per axis (midpoint)
  int paths_per_node = 200;
  TimeGrid grid{0.0, 1.0, 100};
  std::uint64_t seed = 1;
};

/// Lebesgue-volume preservation under divergence-free drift:
/// E int f(X_{t,s}(x)) dx versus int f(x) dx on the same quadrature nodes.
VolumeCheck volume_preservation_check(const DriftSpec& b, const DiffusionSpec& sigma,
                                      const std::function<double(const Vec&)>& f,
                                      const VolumeCheckConfig& cfg, const SimOptions& opts = {});

/// Finite-difference divergence spot check for closed-form drifts; returns the
/// largest |div b| over sampled points.
double max_divergence(const DriftSpec& b, const Box& box, double t, int samples,
                      std::uint64_t seed = 11);

}  // namespace sdflow

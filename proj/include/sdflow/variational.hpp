#pragma once

#include "sdflow/solver.hpp"

#include <functional>
#include <vector>

namespace sdflow {

/// Matrix-valued Jacobian flow J = dX/dx along a stored path ensemble:
///   J[k+1] = J[k] + grad_b(t_k,X[k]) J[k] dt
///                 + sum_m grad_sigma^{(m)}(t_k,X[k]) J[k] dW^m[k],
/// J[0] = identity (or a caller-supplied initial matrix).
struct JacobianEnsemble {
  TimeGrid grid;
  int n_paths = 0;
  int dim = 0;
  std::vector<double> data;  // [path][node][row-major d x d]

  Mat at(int path, int node) const {
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(
        data.data() + (static_cast<std::size_t>(path) * (grid.steps + 1) + node) * dim * dim,
        dim, dim);
  }
  double* raw(int path, int node) {
    return data.data() + (static_cast<std::size_t>(path) * (grid.steps + 1) + node) * dim * dim;
  }
};

JacobianEnsemble jacobian_flow(const PathEnsemble& paths, const DriftSpec& b,
                               const DiffusionSpec& sigma, const BrownianEnsemble& noise,
                               const SimOptions& opts = {}, const Mat& initial = Mat());

/// Adapted Cameron-Martin direction hdot(r) sampled on the grid; may depend on
/// the current state and Jacobian (both adapted).
using DirectionFn = std::function<Vec(int path, int step, const Vec& x, const Mat& J)>;

/// Malliavin directional derivative paths D_hX (D[0] = 0) and per-path
/// Malliavin covariance at the terminal node.
struct MalliavinEnsemble {
  TimeGrid grid;
  int n_paths = 0;
  int dim = 0;
  std::vector<double> data;  // [path][node][component]

  Vec at(int path, int node) const {
    return Eigen::Map<const Vec>(
        data.data() + (static_cast<std::size_t>(path) * (grid.steps + 1) + node) * dim, dim);
  }
  double* raw(int path, int node) {
    return data.data() + (static_cast<std::size_t>(path) * (grid.steps + 1) + node) * dim;
  }
};

MalliavinEnsemble malliavin_derivative(const PathEnsemble& paths, const DriftSpec& b,
                                       const DiffusionSpec& sigma, const BrownianEnsemble& noise,
                                       const DirectionFn& hdot, const SimOptions& opts = {});

/// Malliavin covariance Sigma at the terminal node, per path:
///   Sigma = sum_k dt (J_M J_k^{-1} sigma_k)(J_M J_k^{-1} sigma_k)^t.
std::vector<Mat> malliavin_covariance(const PathEnsemble& paths, const JacobianEnsemble& jac,
                                      const DiffusionSpec& sigma);

struct GradientEstimate {
  Vec estimate;
  Vec std_error;
  Vec point;
  double horizon = 0.0;
  double dt = 0.0;
  int n_paths = 0;
  int flagged = 0;  // paths with near-singular sigma samples, excluded
};

/// Gradient of E f(X_{t,s}(x)) by the stochastic-integral weight
///   (s-t)^{-1} E[ f(X_s) sum_k sigma^{-1}(t_k,X_k) J_k dW_k ]
/// with left-endpoint (Ito) evaluation. Paths whose sigma sample has
/// ||sigma^{-1}|| > 10 K are flagged and excluded.
GradientEstimate bel_gradient(const PathEnsemble& paths, const JacobianEnsemble& jac,
                              const DiffusionSpec& sigma,
                              const std::function<double(const Vec&)>& f,
                              const BrownianEnsemble& noise);

/// Streaming variant integrating X and J jointly without storing paths;
/// use for large N.
GradientEstimate bel_gradient_mc(const Vec& x0, const DriftSpec& b, const DiffusionSpec& sigma,
                                 const BrownianEnsemble& noise,
                                 const std::function<double(const Vec&)>& f,
                                 const SimOptions& opts = {});

/// Central finite difference of the MC expectation under common random
/// numbers; the independent cross-check for bel_gradient.
GradientEstimate finite_difference_gradient(const Vec& x0, const DriftSpec& b,
                                            const DiffusionSpec& sigma,
                                            const BrownianEnsemble& noise,
                                            const std::function<double(const Vec&)>& f,
                                            double step = 1e-3, const SimOptions& opts = {});

}  // namespace sdflow

#pragma once

#include "sdflow/common.hpp"
#include "sdflow/paths.hpp"

#include <string>
#include <vector>

namespace sdflow::nse {

/// Periodic field on the torus [0,L)^d, d in {2,3}, uniform grid, `comps`
/// interleaved values per node. Spectral operations use FFTW.
class GridField {
 public:
  GridField() = default;
  GridField(int dim, int nodes_per_axis, double length, int comps);

  int dim() const { return dim_; }
  int n() const { return n_; }
  double length() const { return length_; }
  int comps() const { return comps_; }
  std::size_t n_nodes() const { return n_nodes_; }
  double spacing() const { return length_ / n_; }

  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  const double* data() const { return values_.data(); }

  /// Fill node values from f(x) -> Vec of length comps.
  void fill(const std::function<Vec(const Vec&)>& f);

  /// Periodic multilinear interpolation.
  Vec sample(const Vec& x) const;

  /// sqrt( (L^d / #nodes) sum |v|^2 ) -- the grid L2 norm.
  double l2_norm() const;

  /// Exports in the grid-field CSV layout shared with module fields.
  void save_csv(const std::string& path) const;

 private:
  int dim_ = 2;
  int n_ = 0;
  double length_ = 2.0 * M_PI;
  int comps_ = 1;
  std::size_t n_nodes_ = 0;
  std::vector<double> values_;
};

/// Spectral Leray projection: v_hat(k) -= k (k . v_hat) / |k|^2 for k != 0.
GridField leray_project(const GridField& v);

/// Max |div v| in physical space, divergence computed spectrally.
double max_spectral_divergence(const GridField& v);

/// Spectral curl: d=2 vector -> scalar vorticity; d=3 vector -> vector.
GridField curl(const GridField& v);

/// Biot-Savart on the torus: scalar (d=2) or vector (d=3) mean-zero vorticity
/// to divergence-free velocity, computed as the spectral inverse of curl.
GridField biot_savart(const GridField& omega);

/// Spectral heat semigroup exp(nu * Laplacian * time).
GridField heat_decay(const GridField& f, double nu, double time);

/// Spectral gradient; output comps = comps*dim, layout (c*dim + j) = d v_c / d x_j.
GridField gradient(const GridField& v);

/// Free-space kernels (kernel-level tests only).
/// Exact 3-D Biot-Savart kernel K(x) h = (1/4pi) (x cross h)/|x|^3.
Eigen::Vector3d biot_savart_kernel_3d(const Eigen::Vector3d& x, const Eigen::Vector3d& h);
/// 2-D point vortex with Gaussian desingularization radius delta_c:
/// speed Gamma/(2 pi r) (1 - exp(-r^2/delta_c^2)).
Eigen::Vector2d point_vortex_velocity(const Eigen::Vector2d& x, const Eigen::Vector2d& center,
                                      double circulation, double delta_c);

struct EnsembleParams {
  std::uint64_t seed = 1;
  int n_paths = 2000;  // per evaluation point
};

/// Time-indexed velocity iterate: snapshots at fine-grid indices
/// 0, stride, 2*stride, ..., M over [T, 0], with cached spectral gradients.
struct VelocityIterate {
  TimeGrid fine_grid;          // [T, 0] with M steps of size dt
  int snapshot_stride = 1;
  std::vector<GridField> u;     // one per snapshot
  std::vector<GridField> grad;  // spectral gradients, comps = d*d

  int n_snapshots() const { return static_cast<int>(u.size()); }
  double snapshot_time(int s) const { return fine_grid.node(s * snapshot_stride); }
  /// Snapshot used for drift at fine time t (left endpoint in time).
  int snapshot_for(double t) const;
  void refresh_gradients();
};

/// One application of the velocity-update operator at snapshot `snap`:
/// simulate X from t_snap to 0 under drift b and additive noise sqrt(2 nu),
/// jointly with the Jacobian flow dJ = grad b(X) J ds, average
/// (grad X)^t phi(X_{t,0}) per grid node, and Leray-project the result.
GridField pushforward_velocity(const VelocityIterate& b, const GridField& phi, int snap,
                               double nu, const EnsembleParams& params, int workers = 1);

struct NsState {
  VelocityIterate u;
  GridField phi;
  double nu = 0.0;
  double horizon = 0.0;  // T < 0
  EnsembleParams params;
  std::vector<double> iterate_distances;
  int iterations = 0;
};

/// Fixed-point iteration u <- projected pushforward of phi, starting from the
/// heat-decayed initial data, with noise frozen across iterations. Throws
/// NumericalError (suggesting halving |T|) when distances stop decreasing for
/// three consecutive iterations.
NsState fixed_point_solve(const GridField& phi, double nu, double T, double dt,
                          int snapshot_stride, const EnsembleParams& params, double tol,
                          int max_iterations = 20, int workers = 1);

/// Monte Carlo vorticity at snapshot `snap`: in 2-D the average of
/// omega0 at the back-traced labels X_{t,0}; in 3-D the matrix-weighted form
/// (grad X)^{-1} omega0(X_{t,0}) (demonstration resolution only).
GridField vorticity_representation(const VelocityIterate& b, const GridField& omega0, int snap,
                                   double nu, const EnsembleParams& params, int workers = 1);

/// ||a - b||_2 / ||b||_2 on the grid.
double relative_l2_error(const GridField& a, const GridField& b);

}  // namespace sdflow::nse

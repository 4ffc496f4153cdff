#pragma once

#include "sdflow/common.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace sdflow {

/// Time-dependent vector field b : [T,S] x R^d -> R^d with integrability
/// exponents (p,q). Immutable after construction; safe to share across workers.
struct DriftSpec {
  using EvalFn = std::function<Vec(double t, const Vec& x)>;
  using GradFn = std::function<Mat(double t, const Vec& x)>;

  int dim = 0;
  double p = 2.0;
  double q = 2.0;
  EvalFn eval;
  GradFn grad;  // optional closed-form gradient, (i,j) = d b_i / d x_j
  std::string id = "drift";

  static DriftSpec zero(int dim);
  bool is_zero() const { return !eval; }

  Vec operator()(double t, const Vec& x) const {
    if (!eval) return Vec::Zero(dim);
    return eval(t, x);
  }

  /// Gradient matrix; falls back to central finite differences with step
  /// 1e-5 scaled by coordinate magnitude when no closed form is supplied.
  Mat gradient(double t, const Vec& x) const;
};

/// Diffusion coefficient sigma : [T,S] x R^d -> R^{dxd}.
/// Sampled singular values should stay in [1/K, K] (uniform ellipticity).
struct DiffusionSpec {
  using EvalFn = std::function<Mat(double t, const Vec& x)>;
  // grad_cols(t,x)[m](i,j) = d sigma_{i,m} / d x_j
  using GradFn = std::function<std::vector<Mat>(double t, const Vec& x)>;

  int dim = 0;
  double ellipticity_K = 1.0;
  double hoelder_alpha = 0.5;
  bool constant_in_x = true;
  EvalFn eval;
  GradFn grad_cols;
  std::string id = "sigma";

  static DiffusionSpec identity(int dim, double scale = 1.0);

  Mat operator()(double t, const Vec& x) const { return eval(t, x); }

  bool has_gradient() const { return !constant_in_x; }

  /// Column gradients; finite-difference fallback as in DriftSpec::gradient.
  std::vector<Mat> column_gradients(double t, const Vec& x) const;

  /// Spot-checks the ellipticity window [1/K, K] over sampled (t,x); returns
  /// the worst offending singular-value deviation (0 when clean).
  double ellipticity_violation(const Box& box, double t0, double t1, int samples,
                               std::uint64_t seed = 7) const;
};

/// Smooth unit-mass bump scaled to radius 1/level:
///   rho(x) = c * exp(-1/(1-|x|^2)) on |x| < 1,  rho_n(x) = n^d rho(n x).
class Mollifier {
 public:
  Mollifier(int dim, int level);

  int dim() const { return dim_; }
  int level() const { return level_; }
  double radius() const { return 1.0 / level_; }

  /// rho_n(x).
  double operator()(const Vec& x) const;

  /// Normalization constant of the unit bump in dimension d.
  static double unit_bump_constant(int dim);

 private:
  int dim_;
  int level_;
  double constant_;
};

/// L^q_t(L^p_x) norm over box x [t0,t1] by composite midpoint quadrature.
/// `nodes_per_axis` controls the spatial grid; `time_nodes` the time grid.
double lq_lp_norm(const DriftSpec& f, const Box& box, double t0, double t1,
                  int nodes_per_axis = 64, int time_nodes = 64);
double lq_lp_norm(const std::function<double(double, const Vec&)>& f, double p, double q,
                  const Box& box, double t0, double t1, int nodes_per_axis = 64,
                  int time_nodes = 64);

/// Convolution rho_n * b(t, .) by fixed midpoint quadrature over the kernel
/// support; quadrature weights are renormalized to unit mass so constants are
/// preserved exactly. Returns a new smooth DriftSpec sharing (p,q).
DriftSpec mollify(const DriftSpec& b, const Mollifier& m, int quad_nodes_per_axis = 21);

/// Grid-sampled field on a box: multilinear interpolation between nodes,
/// zero extension outside. Loads/saves the self-describing CSV and binary
/// layouts documented in the README.
class SampledField {
 public:
  SampledField() = default;
  SampledField(Box box, std::vector<int> shape, int comps);

  int dim() const { return box_.dim(); }
  int comps() const { return comps_; }
  const Box& box() const { return box_; }
  const std::vector<int>& shape() const { return shape_; }

  double& node(const std::vector<int>& idx, int c);
  double node(const std::vector<int>& idx, int c) const;
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  /// Fill node values from a callable f(x) -> Vec of length comps.
  void fill(const std::function<Vec(const Vec&)>& f);

  Vec eval(const Vec& x) const;

  DriftSpec as_drift(double p, double q) const;

  void save_csv(const std::string& path) const;
  void save_binary(const std::string& path) const;
  static SampledField load_csv(const std::string& path);
  static SampledField load_binary(const std::string& path);

 private:
  Box box_;
  std::vector<int> shape_;
  int comps_ = 1;
  std::vector<double> values_;  // row-major over nodes, components fastest

  std::size_t flat(const std::vector<int>& idx) const;
};

}  // namespace sdflow

#include "sdflow/nse.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <limits>
#include <mutex>

namespace sdflow::nse {

// ---------------------------------------------------------------------------
// GridField
// ---------------------------------------------------------------------------

GridField::GridField(int dim, int nodes_per_axis, double length, int comps)
    : dim_(dim), n_(nodes_per_axis), length_(length), comps_(comps) {
  if (dim != 2 && dim != 3) throw ArgumentError("GridField: dim must be 2 or 3");
  if (nodes_per_axis < 4) throw ArgumentError("GridField: need >= 4 nodes per axis");
  if (!(length > 0)) throw ArgumentError("GridField: length must be positive");
  n_nodes_ = 1;
  for (int i = 0; i < dim; ++i) n_nodes_ *= static_cast<std::size_t>(n_);
  values_.assign(n_nodes_ * comps_, 0.0);
}

void GridField::fill(const std::function<Vec(const Vec&)>& f) {
  Vec x(dim_);
  double h = spacing();
  for (std::size_t a = 0; a < n_nodes_; ++a) {
    std::size_t rem = a;
    for (int i = dim_ - 1; i >= 0; --i) {
      x[i] = static_cast<double>(rem % n_) * h;
      rem /= n_;
    }
    Vec v = f(x);
    for (int c = 0; c < comps_; ++c) values_[a * comps_ + c] = v[c];
  }
}

namespace {

// Periodic multilinear stencil shared between interpolation call sites.
struct Stencil {
  std::size_t node[8];
  double w[8];
  int corners;
};

inline void make_stencil(const double* x, int dim, int n, double inv_h, Stencil& st) {
  int base[3];
  double frac[3];
  for (int i = 0; i < dim; ++i) {
    double s = x[i] * inv_h;
    double fl = std::floor(s);
    base[i] = static_cast<int>(fl) % n;
    if (base[i] < 0) base[i] += n;
    frac[i] = s - fl;
  }
  st.corners = 1 << dim;
  for (int corner = 0; corner < st.corners; ++corner) {
    double w = 1.0;
    std::size_t flat = 0;
    for (int i = 0; i < dim; ++i) {
      int bit = (corner >> i) & 1;
      int idx = base[i] + bit;
      if (idx == n) idx = 0;
      w *= bit ? frac[i] : 1.0 - frac[i];
      flat = flat * n + idx;
    }
    st.node[corner] = flat;
    st.w[corner] = w;
  }
}

inline void apply_stencil(const double* data, int comps, const Stencil& st, double* out) {
  for (int c = 0; c < comps; ++c) out[c] = 0.0;
  for (int corner = 0; corner < st.corners; ++corner) {
    const double* v = data + st.node[corner] * comps;
    double w = st.w[corner];
    for (int c = 0; c < comps; ++c) out[c] += w * v[c];
  }
}

}  // namespace

Vec GridField::sample(const Vec& x) const {
  Stencil st;
  make_stencil(x.data(), dim_, n_, 1.0 / spacing(), st);
  Vec out(comps_);
  apply_stencil(values_.data(), comps_, st, out.data());
  return out;
}

double GridField::l2_norm() const {
  double acc = 0.0;
  for (double v : values_) acc += v * v;
  double vol = std::pow(length_, dim_);
  return std::sqrt(acc * vol / static_cast<double>(n_nodes_));
}

void GridField::save_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ArgumentError("GridField::save_csv: cannot open " + path);
  out.precision(17);
  out << "# sdflow-grid-field v1\n";
  out << "dim," << dim_ << "\ncomps," << comps_ << "\nshape";
  for (int i = 0; i < dim_; ++i) out << "," << n_;
  out << "\nlo";
  for (int i = 0; i < dim_; ++i) out << "," << 0.0;
  out << "\nhi";
  for (int i = 0; i < dim_; ++i) out << "," << length_;
  out << "\n";
  for (std::size_t a = 0; a < n_nodes_; ++a) {
    for (int c = 0; c < comps_; ++c) out << (c ? "," : "") << values_[a * comps_ + c];
    out << "\n";
  }
}

double relative_l2_error(const GridField& a, const GridField& b) {
  if (a.values().size() != b.values().size())
    throw ArgumentError("relative_l2_error: field size mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    double d = a.values()[i] - b.values()[i];
    num += d * d;
    den += b.values()[i] * b.values()[i];
  }
  return std::sqrt(num / den);
}

// ---------------------------------------------------------------------------
// Spectral machinery
// ---------------------------------------------------------------------------

namespace {

using Cplx = std::complex<double>;

// FFTW planning is not thread-safe; spectral ops run on the caller's thread.
std::mutex fftw_mutex;

std::vector<Cplx> forward_fft(const GridField& f, int comp) {
  std::size_t n = f.n_nodes();
  std::vector<Cplx> in(n), out(n);
  for (std::size_t a = 0; a < n; ++a) in[a] = f.values()[a * f.comps() + comp];
  std::lock_guard<std::mutex> lock(fftw_mutex);
  fftw_plan plan =
      f.dim() == 2
          ? fftw_plan_dft_2d(f.n(), f.n(), reinterpret_cast<fftw_complex*>(in.data()),
                             reinterpret_cast<fftw_complex*>(out.data()), FFTW_FORWARD,
                             FFTW_ESTIMATE)
          : fftw_plan_dft_3d(f.n(), f.n(), f.n(), reinterpret_cast<fftw_complex*>(in.data()),
                             reinterpret_cast<fftw_complex*>(out.data()), FFTW_FORWARD,
                             FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  return out;
}

void inverse_fft(std::vector<Cplx>& spec, GridField& f, int comp) {
  std::size_t n = f.n_nodes();
  std::vector<Cplx> out(n);
  std::lock_guard<std::mutex> lock(fftw_mutex);
  fftw_plan plan =
      f.dim() == 2
          ? fftw_plan_dft_2d(f.n(), f.n(), reinterpret_cast<fftw_complex*>(spec.data()),
                             reinterpret_cast<fftw_complex*>(out.data()), FFTW_BACKWARD,
                             FFTW_ESTIMATE)
          : fftw_plan_dft_3d(f.n(), f.n(), f.n(), reinterpret_cast<fftw_complex*>(spec.data()),
                             reinterpret_cast<fftw_complex*>(out.data()), FFTW_BACKWARD,
                             FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);
  double scale = 1.0 / static_cast<double>(n);
  for (std::size_t a = 0; a < n; ++a) f.values()[a * f.comps() + comp] = out[a].real() * scale;
}

// Wavevector for flat spectral index a. Returns false on the unpaired Nyquist
// modes of an even grid: the sign of k is ambiguous there, so odd-derivative
// operators (divergence, curl, gradient, projection) must zero those modes to
// keep the spectrum conjugate-symmetric and the output real.
inline bool wavevector(std::size_t a, int dim, int n, double length, double* k) {
  double base = 2.0 * M_PI / length;
  bool paired = true;
  for (int i = dim - 1; i >= 0; --i) {
    int idx = static_cast<int>(a % n);
    a /= n;
    if (n % 2 == 0 && idx == n / 2) paired = false;
    if (idx > n / 2) idx -= n;
    k[i] = base * idx;
  }
  return paired;
}

}  // namespace

GridField leray_project(const GridField& v) {
  const int d = v.dim();
  if (v.comps() != d) throw ArgumentError("leray_project: comps must equal dim");
  std::vector<std::vector<Cplx>> spec(d);
  for (int c = 0; c < d; ++c) spec[c] = forward_fft(v, c);
  double k[3];
  for (std::size_t a = 0; a < v.n_nodes(); ++a) {
    if (!wavevector(a, d, v.n(), v.length(), k)) {
      for (int i = 0; i < d; ++i) spec[i][a] = 0.0;
      continue;
    }
    double k2 = 0.0;
    for (int i = 0; i < d; ++i) k2 += k[i] * k[i];
    if (k2 == 0.0) continue;
    Cplx dot = 0.0;
    for (int i = 0; i < d; ++i) dot += k[i] * spec[i][a];
    for (int i = 0; i < d; ++i) spec[i][a] -= k[i] * dot / k2;
  }
  GridField out(d, v.n(), v.length(), d);
  for (int c = 0; c < d; ++c) inverse_fft(spec[c], out, c);
  return out;
}

double max_spectral_divergence(const GridField& v) {
  const int d = v.dim();
  if (v.comps() != d) throw ArgumentError("max_spectral_divergence: comps must equal dim");
  std::vector<Cplx> div(v.n_nodes(), 0.0);
  double k[3];
  for (int c = 0; c < d; ++c) {
    auto spec = forward_fft(v, c);
    for (std::size_t a = 0; a < v.n_nodes(); ++a) {
      if (!wavevector(a, d, v.n(), v.length(), k)) continue;
      div[a] += Cplx(0.0, k[c]) * spec[a];
    }
  }
  GridField tmp(d, v.n(), v.length(), 1);
  inverse_fft(div, tmp, 0);
  double worst = 0.0;
  for (double x : tmp.values()) worst = std::max(worst, std::abs(x));
  return worst;
}

GridField curl(const GridField& v) {
  const int d = v.dim();
  if (v.comps() != d) throw ArgumentError("curl: comps must equal dim");
  double k[3];
  if (d == 2) {
    auto sx = forward_fft(v, 0);
    auto sy = forward_fft(v, 1);
    std::vector<Cplx> w(v.n_nodes());
    for (std::size_t a = 0; a < v.n_nodes(); ++a) {
      if (!wavevector(a, 2, v.n(), v.length(), k)) {
        w[a] = 0.0;
        continue;
      }
      w[a] = Cplx(0.0, k[0]) * sy[a] - Cplx(0.0, k[1]) * sx[a];
    }
    GridField out(2, v.n(), v.length(), 1);
    inverse_fft(w, out, 0);
    return out;
  }
  std::vector<std::vector<Cplx>> s(3);
  for (int c = 0; c < 3; ++c) s[c] = forward_fft(v, c);
  GridField out(3, v.n(), v.length(), 3);
  std::vector<Cplx> w(v.n_nodes());
  for (int c = 0; c < 3; ++c) {
    int i = (c + 1) % 3, j = (c + 2) % 3;
    for (std::size_t a = 0; a < v.n_nodes(); ++a) {
      if (!wavevector(a, 3, v.n(), v.length(), k)) {
        w[a] = 0.0;
        continue;
      }
      w[a] = Cplx(0.0, k[i]) * s[j][a] - Cplx(0.0, k[j]) * s[i][a];
    }
    inverse_fft(w, out, c);
  }
  return out;
}

GridField biot_savart(const GridField& omega) {
  const int d = omega.dim();
  double k[3];
  if (d == 2) {
    if (omega.comps() != 1) throw ArgumentError("biot_savart: 2-D vorticity must be scalar");
    auto w = forward_fft(omega, 0);
    double mean = std::abs(w[0]) / static_cast<double>(omega.n_nodes());
    if (mean > 1e-10) throw ArgumentError("biot_savart: vorticity must be mean-zero on the torus");
    std::vector<Cplx> ux(omega.n_nodes(), 0.0), uy(omega.n_nodes(), 0.0);
    for (std::size_t a = 0; a < omega.n_nodes(); ++a) {
      if (!wavevector(a, 2, omega.n(), omega.length(), k)) continue;
      double k2 = k[0] * k[0] + k[1] * k[1];
      if (k2 == 0.0) continue;
      Cplx psi = -w[a] / k2;  // Laplacian psi = omega
      ux[a] = -Cplx(0.0, k[1]) * psi;
      uy[a] = Cplx(0.0, k[0]) * psi;
    }
    GridField out(2, omega.n(), omega.length(), 2);
    inverse_fft(ux, out, 0);
    inverse_fft(uy, out, 1);
    return out;
  }
  if (omega.comps() != 3) throw ArgumentError("biot_savart: 3-D vorticity must have 3 comps");
  std::vector<std::vector<Cplx>> w(3);
  for (int c = 0; c < 3; ++c) {
    w[c] = forward_fft(omega, c);
    if (std::abs(w[c][0]) / static_cast<double>(omega.n_nodes()) > 1e-10)
      throw ArgumentError("biot_savart: vorticity must be mean-zero on the torus");
  }
  // u_hat = i k x omega_hat / |k|^2
  GridField out(3, omega.n(), omega.length(), 3);
  std::vector<Cplx> u(omega.n_nodes());
  for (int c = 0; c < 3; ++c) {
    int i = (c + 1) % 3, j = (c + 2) % 3;
    for (std::size_t a = 0; a < omega.n_nodes(); ++a) {
      if (!wavevector(a, 3, omega.n(), omega.length(), k)) {
        u[a] = 0.0;
        continue;
      }
      double k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
      u[a] = k2 == 0.0 ? Cplx(0.0)
                       : (Cplx(0.0, k[i]) * w[j][a] - Cplx(0.0, k[j]) * w[i][a]) / k2;
    }
    inverse_fft(u, out, c);
  }
  return out;
}

GridField heat_decay(const GridField& f, double nu, double time) {
  GridField out(f.dim(), f.n(), f.length(), f.comps());
  double k[3];
  for (int c = 0; c < f.comps(); ++c) {
    auto spec = forward_fft(f, c);
    for (std::size_t a = 0; a < f.n_nodes(); ++a) {
      wavevector(a, f.dim(), f.n(), f.length(), k);
      double k2 = 0.0;
      for (int i = 0; i < f.dim(); ++i) k2 += k[i] * k[i];
      spec[a] *= std::exp(-nu * k2 * time);
    }
    inverse_fft(spec, out, c);
  }
  return out;
}

GridField gradient(const GridField& v) {
  const int d = v.dim();
  GridField out(d, v.n(), v.length(), v.comps() * d);
  double k[3];
  std::vector<Cplx> g(v.n_nodes());
  for (int c = 0; c < v.comps(); ++c) {
    auto spec = forward_fft(v, c);
    for (int j = 0; j < d; ++j) {
      for (std::size_t a = 0; a < v.n_nodes(); ++a) {
        g[a] = wavevector(a, d, v.n(), v.length(), k) ? Cplx(0.0, k[j]) * spec[a] : Cplx(0.0);
      }
      inverse_fft(g, out, c * d + j);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Free-space kernels
// ---------------------------------------------------------------------------

Eigen::Vector3d biot_savart_kernel_3d(const Eigen::Vector3d& x, const Eigen::Vector3d& h) {
  double r = x.norm();
  return x.cross(h) / (4.0 * M_PI * r * r * r);
}

Eigen::Vector2d point_vortex_velocity(const Eigen::Vector2d& x, const Eigen::Vector2d& center,
                                      double circulation, double delta_c) {
  Eigen::Vector2d dx = x - center;
  double r2 = dx.squaredNorm();
  if (r2 == 0.0) return Eigen::Vector2d::Zero();
  double blob = 1.0 - std::exp(-r2 / (delta_c * delta_c));
  double factor = circulation / (2.0 * M_PI * r2) * blob;
  return factor * Eigen::Vector2d(-dx[1], dx[0]);
}

// ---------------------------------------------------------------------------
// Stochastic-Lagrangian velocity update
// ---------------------------------------------------------------------------

int VelocityIterate::snapshot_for(double t) const {
  double snap_dt = fine_grid.dt() * snapshot_stride;
  int s = static_cast<int>(std::floor((t - fine_grid.t_start) / snap_dt + 1e-9));
  return std::clamp(s, 0, n_snapshots() - 1);
}

void VelocityIterate::refresh_gradients() {
  grad.clear();
  grad.reserve(u.size());
  for (const auto& field : u) grad.push_back(gradient(field));
}

namespace {

// Integrates one particle with its Jacobian from fine step k0 to M and returns
// (grad X)^t phi(X_M) in `out` (d doubles). Raw arrays keep the loop tight.
void particle_pushforward(const VelocityIterate& b, const GridField& phi, int k0, double nu,
                          std::uint64_t seed, std::uint64_t pid, const double* x0, double* out,
                          bool track_jacobian = true) {
  const int d = phi.dim();
  const int n = phi.n();
  const double inv_h = 1.0 / phi.spacing();
  const TimeGrid& g = b.fine_grid;
  const double dt = g.dt();
  const double noise_scale = std::sqrt(2.0 * nu * dt);

  double x[3], uval[3], gval[9], J[9];
  for (int c = 0; c < d; ++c) x[c] = x0[c];
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) J[r * d + c] = (r == c) ? 1.0 : 0.0;

  Stencil st;
  for (int k = k0; k < g.steps; ++k) {
    double t = g.node(k);
    int s = b.snapshot_for(t);
    make_stencil(x, d, n, inv_h, st);
    apply_stencil(b.u[s].data(), d, st, uval);
    if (track_jacobian) {
      apply_stencil(b.grad[s].data(), d * d, st, gval);
      // J += grad_u J dt with grad_u(r,c) = d u_r / d x_c.
      double Jn[9];
      for (int r = 0; r < d; ++r)
        for (int c = 0; c < d; ++c) {
          double acc = J[r * d + c];
          for (int m = 0; m < d; ++m) acc += dt * gval[r * d + m] * J[m * d + c];
          Jn[r * d + c] = acc;
        }
      std::memcpy(J, Jn, sizeof(double) * d * d);
    }
    for (int c = 0; c < d; ++c)
      x[c] += uval[c] * dt +
              noise_scale * rng::inverse_normal_cdf(
                                rng::uniform01(rng::counter_hash(seed, pid, k, c)));
  }
  make_stencil(x, d, n, inv_h, st);
  double ph[3];
  const int pc = phi.comps();  // scalar data allowed when not tracking J
  apply_stencil(phi.data(), pc, st, ph);
  if (track_jacobian) {
    for (int c = 0; c < d; ++c) {
      out[c] = 0.0;
      for (int r = 0; r < d; ++r) out[c] += J[r * d + c] * ph[r];  // J^t phi
    }
  } else {
    for (int c = 0; c < pc; ++c) out[c] = ph[c];
  }
}

}  // namespace

GridField pushforward_velocity(const VelocityIterate& b, const GridField& phi, int snap,
                               double nu, const EnsembleParams& params, int workers) {
  const int d = phi.dim();
  if (b.grad.size() != b.u.size())
    throw ArgumentError("pushforward_velocity: iterate gradients missing (refresh_gradients)");
  const int k0 = snap * b.snapshot_stride;
  GridField out(d, phi.n(), phi.length(), d);
  const double h = phi.spacing();
  parallel_for(phi.n_nodes(), workers, [&](std::size_t a) {
    double x0[3];
    std::size_t rem = a;
    for (int i = d - 1; i >= 0; --i) {
      x0[i] = static_cast<double>(rem % phi.n()) * h;
      rem /= phi.n();
    }
    double acc[3] = {0, 0, 0}, val[3];
    for (int p = 0; p < params.n_paths; ++p) {
      std::uint64_t pid = a * static_cast<std::uint64_t>(params.n_paths) + p;
      particle_pushforward(b, phi, k0, nu, params.seed, pid, x0, val);
      for (int c = 0; c < d; ++c) acc[c] += val[c];
    }
    for (int c = 0; c < d; ++c) out.values()[a * d + c] = acc[c] / params.n_paths;
  });
  return leray_project(out);
}

NsState fixed_point_solve(const GridField& phi_in, double nu, double T, double dt,
                          int snapshot_stride, const EnsembleParams& params, double tol,
                          int max_iterations, int workers) {
  if (!(T < 0)) throw ArgumentError("fixed_point_solve: T must be negative");
  const int d = phi_in.dim();
  int steps = static_cast<int>(std::llround(-T / dt));
  if (steps < 1 || std::abs(steps * dt + T) > 1e-9 * std::abs(T))
    throw ArgumentError("fixed_point_solve: dt must divide |T|");
  if (steps % snapshot_stride != 0)
    throw ArgumentError("fixed_point_solve: snapshot_stride must divide the step count");

  GridField phi = leray_project(phi_in);

  NsState state;
  state.phi = phi;
  state.nu = nu;
  state.horizon = T;
  state.params = params;
  state.u.fine_grid = TimeGrid(T, 0.0, steps);
  state.u.snapshot_stride = snapshot_stride;
  const int n_snaps = steps / snapshot_stride + 1;
  state.u.u.reserve(n_snaps);
  for (int s = 0; s < n_snaps; ++s) {
    double t = state.u.snapshot_time(s);
    state.u.u.push_back(heat_decay(phi, nu, -t));
  }
  state.u.refresh_gradients();

  double prev_dist = std::numeric_limits<double>::infinity();
  int growth_streak = 0;
  for (int iter = 0; iter < max_iterations; ++iter) {
    VelocityIterate next = state.u;
    for (int s = 0; s < n_snaps - 1; ++s)
      next.u[s] = pushforward_velocity(state.u, phi, s, nu, params, workers);
    next.u[n_snaps - 1] = phi;  // t = 0: identity flow
    double dist = 0.0;
    for (int s = 0; s < n_snaps; ++s) {
      GridField diff = next.u[s];
      for (std::size_t i = 0; i < diff.values().size(); ++i)
        diff.values()[i] -= state.u.u[s].values()[i];
      dist = std::max(dist, diff.l2_norm());
    }
    next.refresh_gradients();
    state.u = std::move(next);
    state.iterate_distances.push_back(dist);
    state.iterations = iter + 1;
    if (dist < tol) break;
    if (dist >= prev_dist) {
      if (++growth_streak >= 3)
        throw NumericalError(
            "fixed_point_solve: iterate distances not decreasing; try halving |T|");
    } else {
      growth_streak = 0;
    }
    prev_dist = dist;
  }
  return state;
}

GridField vorticity_representation(const VelocityIterate& b, const GridField& omega0, int snap,
                                   double nu, const EnsembleParams& params, int workers) {
  const int d = omega0.dim();
  if (d == 3 && omega0.comps() != 3)
    throw ArgumentError("vorticity_representation: 3-D vorticity must have 3 comps");
  if (d == 2 && omega0.comps() != 1)
    throw ArgumentError("vorticity_representation: 2-D vorticity must be scalar");
  const int k0 = snap * b.snapshot_stride;
  const int n = omega0.n();
  const double h = omega0.spacing();
  GridField out(d, n, omega0.length(), omega0.comps());
  // 2-D: pure back-trace average. 3-D: matrix-weighted (costly; demo scale).
  parallel_for(out.n_nodes(), workers, [&](std::size_t a) {
    double x0[3];
    std::size_t rem = a;
    for (int i = d - 1; i >= 0; --i) {
      x0[i] = static_cast<double>(rem % n) * h;
      rem /= n;
    }
    if (d == 2) {
      double acc = 0.0, val[3];
      for (int p = 0; p < params.n_paths; ++p) {
        std::uint64_t pid = a * static_cast<std::uint64_t>(params.n_paths) + p;
        particle_pushforward(b, omega0, k0, nu, params.seed, pid, x0, val, false);
        acc += val[0];
      }
      out.values()[a] = acc / params.n_paths;
    } else {
      // Track the Jacobian and weight by its inverse.
      Vec acc = Vec::Zero(3);
      for (int p = 0; p < params.n_paths; ++p) {
        std::uint64_t pid = a * static_cast<std::uint64_t>(params.n_paths) + p;
        // Reuse the pushforward with phi = omega0: gives J^t omega0(X).
        // Recover omega0(X) and J separately instead for the weighted form.
        const TimeGrid& g = b.fine_grid;
        double x[3] = {x0[0], x0[1], x0[2]};
        Mat J = Mat::Identity(3, 3);
        const double dt = g.dt();
        const double noise_scale = std::sqrt(2.0 * nu * dt);
        Stencil st;
        double uval[3], gval[9];
        for (int k = k0; k < g.steps; ++k) {
          int s = b.snapshot_for(g.node(k));
          make_stencil(x, 3, n, 1.0 / h, st);
          apply_stencil(b.u[s].data(), 3, st, uval);
          apply_stencil(b.grad[s].data(), 9, st, gval);
          Mat G = Eigen::Map<Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(gval);
          J += G * J * dt;
          for (int c = 0; c < 3; ++c)
            x[c] += uval[c] * dt + noise_scale * rng::inverse_normal_cdf(rng::uniform01(
                                                     rng::counter_hash(params.seed, pid, k, c)));
        }
        make_stencil(x, 3, n, 1.0 / h, st);
        double w0[3];
        apply_stencil(omega0.data(), 3, st, w0);
        acc += J.inverse() * Eigen::Map<Vec>(w0, 3);
      }
      for (int c = 0; c < 3; ++c) out.values()[a * 3 + c] = acc[c] / params.n_paths;
    }
  });
  return out;
}

}  // namespace sdflow::nse

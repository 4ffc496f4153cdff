// Python bindings for the main operations. Callables passed from Python hold
// the GIL, so everything here runs single-threaded on the calling thread.

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sdflow/nse.hpp"
#include "sdflow/variational.hpp"
#include "sdflow/zvonkin.hpp"

#include <cmath>

namespace py = pybind11;
using namespace sdflow;

namespace {

DriftSpec drift_from_callable(const py::object& f, int dim, double p, double q) {
  DriftSpec b;
  b.dim = dim;
  b.p = p;
  b.q = q;
  if (!f.is_none()) {
    py::function fn = f.cast<py::function>();
    b.eval = [fn](double t, const Vec& x) { return fn(t, x).cast<Vec>(); };
    b.id = "python";
  }
  return b;
}

// numpy array (n, n[, n], comps) or (n, n[, n]) <-> GridField.
nse::GridField field_from_array(const py::array_t<double, py::array::c_style>& arr,
                                double length) {
  auto buf = arr.request();
  int dim, comps;
  if (buf.ndim == 2 || buf.ndim == 3) {
    dim = 2;
    comps = buf.ndim == 2 ? 1 : static_cast<int>(buf.shape[2]);
  } else if (buf.ndim == 4) {
    dim = 3;
    comps = static_cast<int>(buf.shape[3]);
  } else {
    throw ArgumentError("field array must have 2-4 axes: (n, n[, n][, comps])");
  }
  int n = static_cast<int>(buf.shape[0]);
  for (int i = 1; i < dim; ++i)
    if (buf.shape[i] != n) throw ArgumentError("field array must be square/cubic");
  nse::GridField f(dim, n, length, comps);
  std::copy_n(static_cast<const double*>(buf.ptr), f.values().size(), f.values().begin());
  return f;
}

py::array_t<double> field_to_array(const nse::GridField& f) {
  std::vector<py::ssize_t> shape;
  for (int i = 0; i < f.dim(); ++i) shape.push_back(f.n());
  if (f.comps() > 1) shape.push_back(f.comps());
  py::array_t<double> out(shape);
  std::copy_n(f.values().data(), f.values().size(), static_cast<double*>(out.request().ptr));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Monte Carlo toolkit for singular-drift SDEs and stochastic-Lagrangian "
            "Navier-Stokes";

  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_RuntimeError);

  m.def("inverse_normal_cdf", &rng::inverse_normal_cdf, py::arg("u"));
  m.def("standard_normal", &rng::standard_normal, py::arg("seed"), py::arg("path"),
        py::arg("step"), py::arg("comp"),
        "Counter-based N(0,1) draw: a pure function of its arguments.");

  m.def(
      "simulate_terminal",
      [](const Vec& x0, const py::object& drift, double sigma_scale, double t0, double t1,
         int steps, int n_paths, std::uint64_t seed) {
        int dim = static_cast<int>(x0.size());
        DriftSpec b = drift_from_callable(drift, dim, 4.0, 4.0);
        DiffusionSpec sigma = DiffusionSpec::identity(dim, sigma_scale);
        BrownianEnsemble noise(seed, n_paths, dim, TimeGrid(t0, t1, steps));
        py::array_t<double> out({static_cast<py::ssize_t>(n_paths), static_cast<py::ssize_t>(dim)});
        double* ptr = static_cast<double*>(out.request().ptr);
        long flagged = 0;
        for_each_path(x0, b, sigma, noise, {},
                      [&](int path, std::span<const double> states, bool flag) {
                        if (flag) ++flagged;
                        const double* terminal = states.data() + static_cast<std::size_t>(steps) * dim;
                        std::copy_n(terminal, dim, ptr + static_cast<std::size_t>(path) * dim);
                      });
        return py::make_tuple(out, flagged);
      },
      py::arg("x0"), py::arg("drift") = py::none(), py::arg("sigma_scale") = 1.0,
      py::arg("t0") = 0.0, py::arg("t1") = 1.0, py::arg("steps") = 100, py::arg("n_paths") = 1000,
      py::arg("seed") = 1,
      "Terminal states of the explicit scheme; returns (array (n_paths, dim), flagged).");

  m.def(
      "bel_gradient",
      [](const Vec& x0, const py::object& drift, double sigma_scale,
         const std::function<double(const Vec&)>& payoff, double t0, double t1, int steps,
         int n_paths, std::uint64_t seed) {
        int dim = static_cast<int>(x0.size());
        DriftSpec b = drift_from_callable(drift, dim, 4.0, 4.0);
        DiffusionSpec sigma = DiffusionSpec::identity(dim, sigma_scale);
        BrownianEnsemble noise(seed, n_paths, dim, TimeGrid(t0, t1, steps));
        GradientEstimate est = bel_gradient_mc(x0, b, sigma, noise, payoff, {});
        py::dict out;
        out["estimate"] = est.estimate;
        out["std_error"] = est.std_error;
        out["point"] = est.point;
        out["horizon"] = est.horizon;
        out["dt"] = est.dt;
        out["n_paths"] = est.n_paths;
        out["flagged"] = est.flagged;
        return out;
      },
      py::arg("x0"), py::arg("drift"), py::arg("sigma_scale"), py::arg("payoff"),
      py::arg("t0") = 0.0, py::arg("t1") = 1.0, py::arg("steps") = 100, py::arg("n_paths") = 10000,
      py::arg("seed") = 1,
      "Gradient of E payoff(X) by the stochastic-integral weight (no payoff derivative).");

  m.def(
      "lq_lp_norm",
      [](const std::function<double(double, const Vec&)>& f, double p, double q, const Vec& lo,
         const Vec& hi, double t0, double t1, int nodes, int time_nodes) {
        return lq_lp_norm(f, p, q, Box(lo, hi), t0, t1, nodes, time_nodes);
      },
      py::arg("f"), py::arg("p"), py::arg("q"), py::arg("lo"), py::arg("hi"), py::arg("t0") = 0.0,
      py::arg("t1") = 1.0, py::arg("nodes") = 64, py::arg("time_nodes") = 16);

  // Spectral operations on periodic numpy fields (axis order x0, x1[, x2], comp).
  m.def(
      "leray_project",
      [](const py::array_t<double, py::array::c_style>& v, double length) {
        return field_to_array(nse::leray_project(field_from_array(v, length)));
      },
      py::arg("v"), py::arg("length") = 2.0 * M_PI);
  m.def(
      "max_divergence",
      [](const py::array_t<double, py::array::c_style>& v, double length) {
        return nse::max_spectral_divergence(field_from_array(v, length));
      },
      py::arg("v"), py::arg("length") = 2.0 * M_PI);
  m.def(
      "curl",
      [](const py::array_t<double, py::array::c_style>& v, double length) {
        return field_to_array(nse::curl(field_from_array(v, length)));
      },
      py::arg("v"), py::arg("length") = 2.0 * M_PI);
  m.def(
      "biot_savart",
      [](const py::array_t<double, py::array::c_style>& omega, double length) {
        return field_to_array(nse::biot_savart(field_from_array(omega, length)));
      },
      py::arg("omega"), py::arg("length") = 2.0 * M_PI);
  m.def(
      "heat_decay",
      [](const py::array_t<double, py::array::c_style>& f, double nu, double time,
         double length) {
        return field_to_array(nse::heat_decay(field_from_array(f, length), nu, time));
      },
      py::arg("f"), py::arg("nu"), py::arg("time"), py::arg("length") = 2.0 * M_PI);
  m.def(
      "point_vortex_velocity",
      [](const Eigen::Vector2d& x, const Eigen::Vector2d& center, double circulation,
         double delta_c) { return nse::point_vortex_velocity(x, center, circulation, delta_c); },
      py::arg("x"), py::arg("center"), py::arg("circulation"), py::arg("delta_c"));

  m.def(
      "fixed_point_solve",
      [](const py::array_t<double, py::array::c_style>& phi, double nu, double T, double dt,
         int snapshot_stride, int n_paths, std::uint64_t seed, double tol, int max_iterations,
         double length) {
        nse::EnsembleParams params;
        params.seed = seed;
        params.n_paths = n_paths;
        nse::NsState state = nse::fixed_point_solve(field_from_array(phi, length), nu, T, dt,
                                                    snapshot_stride, params, tol, max_iterations);
        py::dict out;
        out["iterations"] = state.iterations;
        out["iterate_distances"] = state.iterate_distances;
        py::list snaps, times;
        for (int s = 0; s < state.u.n_snapshots(); ++s) {
          snaps.append(field_to_array(state.u.u[s]));
          times.append(state.u.snapshot_time(s));
        }
        out["snapshots"] = snaps;
        out["snapshot_times"] = times;
        return out;
      },
      py::arg("phi"), py::arg("nu"), py::arg("T"), py::arg("dt"), py::arg("snapshot_stride") = 1,
      py::arg("n_paths") = 500, py::arg("seed") = 1, py::arg("tol") = 1e-2,
      py::arg("max_iterations") = 10, py::arg("length") = 2.0 * M_PI,
      "Velocity fixed point on [T, 0] by the projected stochastic-flow pushforward.");

  m.def(
      "zvonkin_corrector",
      [](const py::object& drift, int dim, double p, double q, double sigma_scale, double t0,
         double s0, const Vec& lo, const Vec& hi, int nodes, int time_nodes, int pairs,
         std::uint64_t seed) {
        DriftSpec b = drift_from_callable(drift, dim, p, q);
        SpaceGrid grid(Box(lo, hi), std::vector<int>(dim, nodes));
        CorrectorConfig cfg;
        cfg.time_nodes = time_nodes;
        ZvonkinSolution sol = solve_corrector(b, DiffusionSpec::identity(dim, sigma_scale), t0,
                                              s0, grid, cfg);
        BiLipschitzResult bl = bilipschitz_check(sol, pairs, seed);
        py::dict out;
        out["picard_iterations"] = sol.picard_iterations;
        out["final_gap"] = sol.final_gap;
        out["residual_sup"] = sol.residual_sup;
        out["min_ratio"] = bl.min_ratio;
        out["max_ratio"] = bl.max_ratio;
        return out;
      },
      py::arg("drift"), py::arg("dim"), py::arg("p") = 4.0, py::arg("q") = 4.0,
      py::arg("sigma_scale") = 1.0, py::arg("t0") = 0.0, py::arg("s0") = 0.1, py::arg("lo"),
      py::arg("hi"), py::arg("nodes") = 257, py::arg("time_nodes") = 32, py::arg("pairs") = 500,
      py::arg("seed") = 5,
      "Backward-PDE corrector summary: residual and bi-Lipschitz band of x + u.");
}

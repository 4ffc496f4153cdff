#include <doctest.h>

#include "sdflow/nse.hpp"

#include <cmath>

using namespace sdflow;
using namespace sdflow::nse;

namespace {

GridField taylor_green(int n) {
  GridField f(2, n, 2.0 * M_PI, 2);
  f.fill([](const Vec& x) {
    Vec v(2);
    v << std::sin(x[0]) * std::cos(x[1]), -std::cos(x[0]) * std::sin(x[1]);
    return v;
  });
  return f;
}

double max_abs_diff(const GridField& a, const GridField& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i)
    worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
  return worst;
}

}  // namespace

TEST_SUITE_BEGIN("nse");

TEST_CASE("grid field: periodic sampling is exact on the nodes and wraps") {
  GridField f(2, 16, 2.0 * M_PI, 1);
  f.fill([](const Vec& x) { return Vec::Constant(1, std::sin(x[0]) + std::cos(2.0 * x[1])); });
  double h = f.spacing();
  Vec x(2);
  x << 3.0 * h, 7.0 * h;
  CHECK(f.sample(x)[0] == doctest::Approx(std::sin(3.0 * h) + std::cos(14.0 * h)).epsilon(1e-12));
  Vec wrapped(2);
  wrapped << 3.0 * h + 2.0 * M_PI, 7.0 * h - 2.0 * M_PI;
  CHECK(f.sample(wrapped)[0] == doctest::Approx(f.sample(x)[0]).epsilon(1e-9));
}

TEST_CASE("grid field: l2 norm of a unit-amplitude mode") {
  GridField f(2, 64, 2.0 * M_PI, 1);
  f.fill([](const Vec& x) { return Vec::Constant(1, std::sin(x[0])); });
  // mean of sin^2 over the torus is 1/2, volume (2 pi)^2.
  CHECK(f.l2_norm() == doctest::Approx(M_PI * std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("spectral gradient: trigonometric field, machine precision") {
  GridField f(2, 32, 2.0 * M_PI, 1);
  f.fill([](const Vec& x) { return Vec::Constant(1, std::sin(x[0]) * std::cos(2.0 * x[1])); });
  GridField g = gradient(f);
  GridField expect(2, 32, 2.0 * M_PI, 2);
  expect.fill([](const Vec& x) {
    Vec v(2);
    v << std::cos(x[0]) * std::cos(2.0 * x[1]), -2.0 * std::sin(x[0]) * std::sin(2.0 * x[1]);
    return v;
  });
  CHECK(max_abs_diff(g, expect) < 1e-10);
}

TEST_CASE("leray projection: kills gradients, fixes divergence-free fields") {
  // v = w + grad psi with w divergence-free: P v = w.
  GridField w(2, 32, 2.0 * M_PI, 2);
  w.fill([](const Vec& x) {
    Vec v(2);
    v << std::sin(x[0]) * std::cos(x[1]), -std::cos(x[0]) * std::sin(x[1]);
    return v;
  });
  GridField gradpsi(2, 32, 2.0 * M_PI, 2);
  gradpsi.fill([](const Vec& x) {
    Vec v(2);  // psi = cos(2 x0) sin(x1)
    v << -2.0 * std::sin(2.0 * x[0]) * std::sin(x[1]), std::cos(2.0 * x[0]) * std::cos(x[1]);
    return v;
  });
  GridField mixed = w;
  for (std::size_t i = 0; i < mixed.values().size(); ++i)
    mixed.values()[i] += gradpsi.values()[i];

  CHECK(max_abs_diff(leray_project(w), w) < 1e-12);
  GridField killed = leray_project(gradpsi);
  double worst = 0.0;
  for (double v : killed.values()) worst = std::max(worst, std::abs(v));
  CHECK(worst < 1e-10);
  CHECK(max_abs_diff(leray_project(mixed), w) < 1e-10);
  GridField once = leray_project(mixed);
  CHECK(max_abs_diff(leray_project(once), once) < 1e-12);
  CHECK(max_spectral_divergence(once) < 1e-10);
}

TEST_CASE("leray projection in 3-D leaves a divergence-free shear flow alone") {
  GridField v(3, 16, 2.0 * M_PI, 3);
  v.fill([](const Vec& x) {
    Vec u(3);
    u << std::sin(x[1]), std::sin(x[2]), std::sin(x[0]);
    return u;
  });
  CHECK(max_abs_diff(leray_project(v), v) < 1e-12);
  CHECK(max_spectral_divergence(leray_project(v)) < 1e-10);
}

TEST_CASE("biot-savart inverts curl on the torus (2-D and 3-D)") {
  GridField omega2(2, 32, 2.0 * M_PI, 1);
  omega2.fill([](const Vec& x) {
    return Vec::Constant(1, std::sin(x[0]) * std::sin(x[1]) + 0.5 * std::cos(2.0 * x[0]));
  });
  GridField u2 = biot_savart(omega2);
  CHECK(max_spectral_divergence(u2) < 1e-10);
  CHECK(max_abs_diff(curl(u2), omega2) < 1e-8);

  GridField omega3(3, 16, 2.0 * M_PI, 3);
  omega3.fill([](const Vec& x) {
    Vec w(3);
    w << std::sin(x[1]), std::sin(x[2]), std::sin(x[0]);
    return w;
  });
  GridField u3 = biot_savart(omega3);
  CHECK(max_spectral_divergence(u3) < 1e-10);
  // curl(biot_savart) recovers the divergence-free part; this omega is
  // divergence-free already.
  CHECK(max_abs_diff(curl(u3), omega3) < 1e-8);
}

TEST_CASE("biot-savart rejects vorticity with mean circulation") {
  GridField omega(2, 16, 2.0 * M_PI, 1);
  omega.fill([](const Vec& x) { return Vec::Constant(1, 1.0 + std::sin(x[0])); });
  CHECK_THROWS_AS(biot_savart(omega), ArgumentError);
}

TEST_CASE("heat decay: exact eigenmode factors") {
  GridField f(2, 32, 2.0 * M_PI, 1);
  f.fill([](const Vec& x) { return Vec::Constant(1, std::sin(3.0 * x[0]) * std::cos(x[1])); });
  double nu = 0.7, t = 0.35;
  GridField g = heat_decay(f, nu, t);
  double factor = std::exp(-nu * 10.0 * t);  // |k|^2 = 9 + 1
  for (std::size_t i = 0; i < f.values().size(); ++i)
    CHECK(g.values()[i] == doctest::Approx(factor * f.values()[i]).epsilon(1e-10));
  // Energy decays monotonically along the semigroup.
  double prev = f.l2_norm();
  for (double tau : {0.1, 0.2, 0.4}) {
    double cur = heat_decay(f, nu, tau).l2_norm();
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("free-space kernel: exact cross-product value") {
  Eigen::Vector3d out =
      biot_savart_kernel_3d(Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(0, 1, 0));
  CHECK(std::abs(out[0]) < 1e-15);
  CHECK(std::abs(out[1]) < 1e-15);
  CHECK(out[2] == doctest::Approx(1.0 / (4.0 * M_PI)).epsilon(1e-14));
  // Antisymmetry and scaling |K(x)h| = 1/(4 pi |x|^2) for orthogonal unit h.
  Eigen::Vector3d swapped =
      biot_savart_kernel_3d(Eigen::Vector3d(0, 1, 0), Eigen::Vector3d(1, 0, 0));
  CHECK((out + swapped).norm() < 1e-15);
  Eigen::Vector3d far = biot_savart_kernel_3d(Eigen::Vector3d(0, 0, 2), Eigen::Vector3d(1, 0, 0));
  CHECK(far.norm() == doctest::Approx(1.0 / (16.0 * M_PI)).epsilon(1e-12));
}

TEST_CASE("point vortex: tangential, regular at the core, 1% of ideal outside 3 delta") {
  Eigen::Vector2d center(0.3, -0.2);
  double gamma = 2.0, delta = 0.05;
  CHECK(point_vortex_velocity(center, center, gamma, delta).norm() == 0.0);
  for (double r : {0.15, 0.2, 0.5, 1.0}) {
    Eigen::Vector2d x = center + Eigen::Vector2d(r / std::sqrt(2.0), r / std::sqrt(2.0));
    Eigen::Vector2d u = point_vortex_velocity(x, center, gamma, delta);
    CHECK(std::abs(u.dot(x - center)) < 1e-12);               // tangential
    double ideal = gamma / (2.0 * M_PI * r);
    CHECK(std::abs(u.norm() - ideal) < 0.01 * ideal);          // r >= 3 delta
  }
  // Inside the core the speed is strongly reduced.
  Eigen::Vector2d close = center + Eigen::Vector2d(delta / 2.0, 0.0);
  double ideal_close = gamma / (2.0 * M_PI * (delta / 2.0));
  CHECK(point_vortex_velocity(close, center, gamma, delta).norm() < 0.3 * ideal_close);
}

TEST_CASE("pushforward with zero drift reproduces the heat semigroup") {
  const int n = 16;
  GridField phi = taylor_green(n);
  double nu = 0.1, T = -0.2, dt = 0.01;
  VelocityIterate it;
  it.fine_grid = TimeGrid(T, 0.0, 20);
  it.snapshot_stride = 5;
  for (int s = 0; s <= 4; ++s) it.u.emplace_back(2, n, 2.0 * M_PI, 2);  // all-zero drift
  it.refresh_gradients();
  EnsembleParams params;
  params.seed = 3;
  params.n_paths = 4000;
  GridField got = pushforward_velocity(it, phi, 0, nu, params);
  GridField expect = heat_decay(phi, nu, -T);
  CHECK(relative_l2_error(got, expect) < 0.05);
}

TEST_CASE("vorticity representation with zero drift is the heat-decayed vorticity") {
  const int n = 16;
  GridField omega0(2, n, 2.0 * M_PI, 1);
  omega0.fill([](const Vec& x) { return Vec::Constant(1, 2.0 * std::sin(x[0]) * std::sin(x[1])); });
  double nu = 0.1, T = -0.2;
  VelocityIterate it;
  it.fine_grid = TimeGrid(T, 0.0, 20);
  it.snapshot_stride = 5;
  for (int s = 0; s <= 4; ++s) it.u.emplace_back(2, n, 2.0 * M_PI, 2);
  it.refresh_gradients();
  EnsembleParams params;
  params.seed = 4;
  params.n_paths = 4000;
  GridField got = vorticity_representation(it, omega0, 0, nu, params);
  GridField expect = heat_decay(omega0, nu, -T);
  CHECK(relative_l2_error(got, expect) < 0.05);
}

TEST_CASE("fixed point: zero data is an exact fixed point") {
  GridField zero(2, 8, 2.0 * M_PI, 2);
  EnsembleParams params;
  params.n_paths = 10;
  NsState state = fixed_point_solve(zero, 0.1, -0.1, 0.01, 5, params, 1e-12, 5);
  CHECK(state.iterations == 1);
  for (const auto& f : state.u.u) CHECK(f.l2_norm() == 0.0);
}

TEST_CASE("fixed point: argument validation") {
  GridField phi = taylor_green(8);
  EnsembleParams params;
  params.n_paths = 10;
  CHECK_THROWS_AS(fixed_point_solve(phi, 0.1, 0.1, 0.01, 1, params, 1e-3), ArgumentError);
  CHECK_THROWS_AS(fixed_point_solve(phi, 0.1, -0.1, 0.03, 1, params, 1e-3), ArgumentError);
  CHECK_THROWS_AS(fixed_point_solve(phi, 0.1, -0.1, 0.01, 3, params, 1e-3), ArgumentError);
}

TEST_CASE("fixed point: small Taylor-Green run tracks the exact solution") {
  const int n = 16;
  GridField phi = taylor_green(n);
  double nu = 0.1, T = -0.1, dt = 0.01;
  EnsembleParams params;
  params.seed = 9;
  params.n_paths = 400;
  NsState state = fixed_point_solve(phi, nu, T, dt, 5, params, 5e-2, 8);
  REQUIRE(state.iterations >= 1);
  for (std::size_t i = 1; i < state.iterate_distances.size(); ++i)
    CHECK(state.iterate_distances[i] < state.iterate_distances[i - 1]);
  // Exact backward solution: u_t = e^{2 nu t} phi (t <= 0).
  for (int s = 0; s < state.u.n_snapshots(); ++s) {
    double t = state.u.snapshot_time(s);
    GridField expect = phi;
    double factor = std::exp(2.0 * nu * t);
    for (double& v : expect.values()) v *= factor;
    CHECK(relative_l2_error(state.u.u[s], expect) < 0.12);
    CHECK(max_spectral_divergence(state.u.u[s]) < 1e-8);
  }
}

TEST_SUITE_END();

#include <doctest.h>

#include "sdflow/variational.hpp"

#include <cmath>

using namespace sdflow;

namespace {

DriftSpec linear_drift(const Mat& A) {
  DriftSpec b;
  b.dim = static_cast<int>(A.rows());
  b.eval = [A](double, const Vec& x) { return Vec(A * x); };
  b.grad = [A](double, const Vec&) { return A; };
  b.id = "linear";
  return b;
}

// Smooth 2-D test system with state-dependent drift and diffusion.
DriftSpec smooth_drift_2d() {
  DriftSpec b;
  b.dim = 2;
  b.eval = [](double, const Vec& x) {
    Vec v(2);
    v << 0.3 * std::sin(x[1]), 0.3 * std::cos(x[0]);
    return v;
  };
  b.grad = [](double, const Vec& x) {
    Mat g = Mat::Zero(2, 2);
    g(0, 1) = 0.3 * std::cos(x[1]);
    g(1, 0) = -0.3 * std::sin(x[0]);
    return g;
  };
  return b;
}

DiffusionSpec smooth_sigma_2d() {
  DiffusionSpec s;
  s.dim = 2;
  s.ellipticity_K = 2.0;
  s.constant_in_x = false;
  s.eval = [](double, const Vec& x) {
    Mat m = Mat::Identity(2, 2);
    m(0, 0) = 1.0 + 0.2 * std::sin(x[0]);
    m(1, 1) = 1.0 + 0.2 * std::cos(x[1]);
    return m;
  };
  s.grad_cols = [](double, const Vec& x) {
    std::vector<Mat> g(2, Mat::Zero(2, 2));
    g[0](0, 0) = 0.2 * std::cos(x[0]);   // d sigma_{00} / d x_0
    g[1](1, 1) = -0.2 * std::sin(x[1]);  // d sigma_{11} / d x_1
    return g;
  };
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("variational");

TEST_CASE("jacobian: zero drift and constant sigma keep J = I") {
  DiffusionSpec sigma = DiffusionSpec::identity(2, 1.3);
  TimeGrid g(0.0, 1.0, 50);
  BrownianEnsemble w(4, 10, 2, g);
  PathEnsemble paths = euler_maruyama(Vec::Zero(2), DriftSpec::zero(2), sigma, w);
  JacobianEnsemble jac = jacobian_flow(paths, DriftSpec::zero(2), sigma, w);
  for (int i = 0; i < 10; ++i)
    for (int k = 0; k <= g.steps; ++k)
      CHECK((jac.at(i, k) - Mat::Identity(2, 2)).norm() == 0.0);
}

TEST_CASE("jacobian: rotation generator converges to the matrix exponential") {
  Mat A(2, 2);
  A << 0.0, 1.0, -1.0, 0.0;
  DriftSpec b = linear_drift(A);
  DiffusionSpec sigma = DiffusionSpec::identity(2);
  TimeGrid g(0.0, 1.0, 10000);
  BrownianEnsemble w(1, 1, 2, g);
  PathEnsemble paths = euler_maruyama(Vec::Ones(2), b, sigma, w);
  JacobianEnsemble jac = jacobian_flow(paths, b, sigma, w);
  Mat expA(2, 2);
  expA << std::cos(1.0), std::sin(1.0), -std::sin(1.0), std::cos(1.0);
  CHECK((jac.at(0, g.steps) - expA).norm() < 5e-3);
}

TEST_CASE("jacobian: linear in the initial matrix") {
  DriftSpec b = smooth_drift_2d();
  DiffusionSpec sigma = smooth_sigma_2d();
  TimeGrid g(0.0, 1.0, 100);
  BrownianEnsemble w(6, 5, 2, g);
  PathEnsemble paths = euler_maruyama(Vec::Constant(2, 0.2), b, sigma, w);
  Mat V(2, 2);
  V << 1.0, 2.0, -0.5, 0.75;
  JacobianEnsemble from_v = jacobian_flow(paths, b, sigma, w, {}, V);
  JacobianEnsemble from_3v = jacobian_flow(paths, b, sigma, w, {}, Mat(3.0 * V));
  for (int i = 0; i < 5; ++i)
    CHECK((from_3v.at(i, g.steps) - 3.0 * from_v.at(i, g.steps)).norm() <
          1e-12 * from_v.at(i, g.steps).norm() * 3.0 + 1e-14);
}

TEST_CASE("jacobian: 1-D closed form for multiplicative noise without drift") {
  // dX = sigma(X) dW, J_t = exp( int sigma'(X) dW - 1/2 int sigma'(X)^2 dr )
  // with left-endpoint sums on the same grid; the two discretizations agree to
  // O(dt) strongly, so halving dt shrinks the mean gap.
  DiffusionSpec sigma;
  sigma.dim = 1;
  sigma.ellipticity_K = 2.0;
  sigma.constant_in_x = false;
  sigma.eval = [](double, const Vec& x) { return Mat::Constant(1, 1, 1.0 + 0.3 * std::sin(x[0])); };
  sigma.grad_cols = [](double, const Vec& x) {
    return std::vector<Mat>{Mat::Constant(1, 1, 0.3 * std::cos(x[0]))};
  };
  const int n_paths = 2000;
  double prev = -1.0;
  for (int steps : {100, 200, 400}) {
    TimeGrid g(0.0, 1.0, steps);
    BrownianEnsemble w(8, n_paths, 1, g);
    PathEnsemble paths = euler_maruyama(Vec::Zero(1), DriftSpec::zero(1), sigma, w);
    JacobianEnsemble jac = jacobian_flow(paths, DriftSpec::zero(1), sigma, w);
    RunningStats gap;
    for (int i = 0; i < n_paths; ++i) {
      double ito = 0.0, correction = 0.0;
      for (int k = 0; k < steps; ++k) {
        double sp = 0.3 * std::cos(paths.at(i, k)[0]);
        ito += sp * w.increment(i, k, 0);
        correction += 0.5 * sp * sp * g.dt();
      }
      gap.add(std::abs(jac.at(i, steps)(0, 0) - std::exp(ito - correction)));
    }
    if (prev >= 0.0) CHECK(gap.mean < prev);
    prev = gap.mean;
    CHECK(gap.mean < 0.05);
  }
}

TEST_CASE("jacobian: sup-moment estimates are stable under doubling N") {
  DriftSpec b = smooth_drift_2d();
  DiffusionSpec sigma = smooth_sigma_2d();
  TimeGrid g(0.0, 1.0, 100);
  for (double power : {2.0, 4.0}) {
    double moments[2];
    int idx = 0;
    for (int n_paths : {2000, 4000}) {
      BrownianEnsemble w(14, n_paths, 2, g);
      PathEnsemble paths = euler_maruyama(Vec::Zero(2), b, sigma, w);
      JacobianEnsemble jac = jacobian_flow(paths, b, sigma, w);
      RunningStats m;
      for (int i = 0; i < n_paths; ++i) {
        double sup = 0.0;
        for (int k = 0; k <= g.steps; ++k) sup = std::max(sup, jac.at(i, k).norm());
        m.add(std::pow(sup, power));
      }
      moments[idx++] = m.mean;
    }
    CHECK(std::abs(moments[1] - moments[0]) < 0.1 * moments[0]);
  }
}

TEST_CASE("malliavin: additive noise with unit direction gives (s-t) * ones") {
  DiffusionSpec sigma = DiffusionSpec::identity(2);
  TimeGrid g(0.0, 1.0, 80);
  BrownianEnsemble w(3, 6, 2, g);
  PathEnsemble paths = euler_maruyama(Vec::Zero(2), DriftSpec::zero(2), sigma, w);
  auto ones = [](int, int, const Vec&, const Mat&) { return Vec::Ones(2); };
  MalliavinEnsemble d = malliavin_derivative(paths, DriftSpec::zero(2), sigma, w, ones);
  for (int i = 0; i < 6; ++i) {
    CHECK(d.at(i, 0).norm() == 0.0);
    for (int k = 0; k <= g.steps; ++k)
      CHECK((d.at(i, k) - g.node(k) * Vec::Ones(2)).norm() < 1e-12);
  }
}

TEST_CASE("malliavin covariance: additive unit noise gives (s-t) I exactly") {
  DiffusionSpec sigma = DiffusionSpec::identity(3);
  TimeGrid g(0.0, 0.75, 60);
  BrownianEnsemble w(9, 5, 3, g);
  PathEnsemble paths = euler_maruyama(Vec::Zero(3), DriftSpec::zero(3), sigma, w);
  JacobianEnsemble jac = jacobian_flow(paths, DriftSpec::zero(3), sigma, w);
  auto cov = malliavin_covariance(paths, jac, sigma);
  for (const Mat& c : cov) CHECK((c - 0.75 * Mat::Identity(3, 3)).norm() < 1e-12);
}

TEST_CASE("malliavin covariance: symmetric positive semidefinite") {
  DriftSpec b = smooth_drift_2d();
  DiffusionSpec sigma = smooth_sigma_2d();
  TimeGrid g(0.0, 1.0, 100);
  BrownianEnsemble w(19, 40, 2, g);
  PathEnsemble paths = euler_maruyama(Vec::Constant(2, 0.1), b, sigma, w);
  JacobianEnsemble jac = jacobian_flow(paths, b, sigma, w);
  auto cov = malliavin_covariance(paths, jac, sigma);
  for (const Mat& c : cov) {
    CHECK((c - c.transpose()).norm() < 1e-12 * c.norm());
    Eigen::SelfAdjointEigenSolver<Mat> es(c);
    CHECK(es.eigenvalues().minCoeff() > -1e-10);
  }
}

TEST_CASE("variation of constants: tailored direction reproduces J v") {
  // hdot_k = (s-t)^{-1} sigma_k^{-1} J_k v  =>  D_M = J_M v at the terminal
  // node up to the O(dt) gap between the discrete propagators.
  DriftSpec b = smooth_drift_2d();
  DiffusionSpec sigma = smooth_sigma_2d();
  TimeGrid g(0.0, 1.0, 1000);
  const int n_paths = 8;
  BrownianEnsemble w(27, n_paths, 2, g);
  Vec x0 = Vec::Constant(2, 0.25);
  PathEnsemble paths = euler_maruyama(x0, b, sigma, w);
  JacobianEnsemble jac = jacobian_flow(paths, b, sigma, w);
  Vec v(2);
  v << 0.8, -0.6;
  double horizon = g.horizon();
  auto hdot = [&](int, int, const Vec& x, const Mat& J) {
    Mat s = sigma(0.0, x);
    return Vec(s.inverse() * J * v / horizon);
  };
  MalliavinEnsemble d = malliavin_derivative(paths, b, sigma, w, hdot);
  double worst = 0.0;
  for (int i = 0; i < n_paths; ++i)
    worst = std::max(worst, (d.at(i, g.steps) - jac.at(i, g.steps) * v).norm());
  CHECK(worst < 1e-2);
}

TEST_CASE("bel gradient: Brownian motion with linear payoff recovers e1") {
  DiffusionSpec sigma = DiffusionSpec::identity(2);
  TimeGrid g(0.0, 1.0, 50);
  BrownianEnsemble w(33, 20000, 2, g);
  auto f = [](const Vec& x) { return x[0]; };
  GradientEstimate est = bel_gradient_mc(Vec::Zero(2), DriftSpec::zero(2), sigma, w, f);
  CHECK(std::abs(est.estimate[0] - 1.0) < 3.0 * est.std_error[0]);
  CHECK(std::abs(est.estimate[1]) < 3.0 * est.std_error[1]);
  CHECK(est.flagged == 0);
  CHECK(est.n_paths == 20000);
  CHECK(est.horizon == doctest::Approx(1.0));
}

TEST_CASE("bel gradient: stored and streaming variants agree exactly") {
  DriftSpec b = smooth_drift_2d();
  DiffusionSpec sigma = smooth_sigma_2d();
  TimeGrid g(0.0, 0.5, 40);
  BrownianEnsemble w(41, 500, 2, g);
  Vec x0 = Vec::Constant(2, 0.3);
  auto f = [](const Vec& x) { return std::sin(x[0]) + x[1]; };
  PathEnsemble paths = euler_maruyama(x0, b, sigma, w);
  JacobianEnsemble jac = jacobian_flow(paths, b, sigma, w);
  GradientEstimate stored = bel_gradient(paths, jac, sigma, f, w);
  GradientEstimate streamed = bel_gradient_mc(x0, b, sigma, w, f);
  CHECK((stored.estimate - streamed.estimate).norm() < 1e-12);
  CHECK((stored.std_error - streamed.std_error).norm() < 1e-12);
}

TEST_CASE("bel gradient: sin payoff on Brownian motion, closed form e^{-1/2}") {
  // d/dx E sin(x + W_1) = e^{-1/2} cos(x); at x = 0: 0.60653...
  DiffusionSpec sigma = DiffusionSpec::identity(1);
  TimeGrid g(0.0, 1.0, 100);
  BrownianEnsemble w(55, 30000, 1, g);
  auto f = [](const Vec& x) { return std::sin(x[0]); };
  GradientEstimate est = bel_gradient_mc(Vec::Zero(1), DriftSpec::zero(1), sigma, w, f);
  CHECK(std::abs(est.estimate[0] - std::exp(-0.5)) < 3.0 * est.std_error[0]);
}

TEST_CASE("bel gradient agrees with common-noise finite differences on OU") {
  DriftSpec b;
  b.dim = 1;
  b.eval = [](double, const Vec& x) { return Vec(-x); };
  b.grad = [](double, const Vec&) { return Mat(-Mat::Identity(1, 1)); };
  DiffusionSpec sigma = DiffusionSpec::identity(1);
  TimeGrid g(0.0, 1.0, 100);
  BrownianEnsemble w(61, 20000, 1, g);
  Vec x0 = Vec::Constant(1, 0.5);
  auto f = [](const Vec& x) { return x[0] * x[0]; };
  GradientEstimate bel = bel_gradient_mc(x0, b, sigma, w, f);
  GradientEstimate fd = finite_difference_gradient(x0, b, sigma, w, f);
  double se = std::sqrt(bel.std_error[0] * bel.std_error[0] + fd.std_error[0] * fd.std_error[0]);
  CHECK(std::abs(bel.estimate[0] - fd.estimate[0]) < 3.0 * se + 1e-3);
  // Closed form: d/dx E (x e^{-1} + noise)^2 = 2 x e^{-2}.
  CHECK(std::abs(fd.estimate[0] - 2.0 * 0.5 * std::exp(-2.0)) < 0.02);
}

TEST_SUITE_END();

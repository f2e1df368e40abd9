#include <doctest.h>

#include <cmath>

#include <boost/numeric/odeint.hpp>
#include <unsupported/Eigen/MatrixFunctions>

#include "dsre/dynamics.hpp"
#include "dsre/error.hpp"
#include "support.hpp"

using namespace dsre;

namespace {

Eigen::MatrixXd forward_matrix(const TorusEnvironment& env) {
  const std::size_t n = env.sites();
  Eigen::MatrixXd Q(n, n);
  std::vector<double> e(n, 0.0), col(n);
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    apply_forward_generator(env, e, col);
    for (std::size_t i = 0; i < n; ++i) Q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
    e[j] = 0.0;
  }
  return Q;
}

double sample_mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

}  // namespace

TEST_CASE("walk paths") {
  const TorusEnvironment env = test::random_env(2, 8, 3);
  const WalkPath empty = simulate_walk(env, 5, 0.0, 1);
  CHECK(empty.sites == std::vector<Site>{5});
  CHECK(empty.times.empty());

  const WalkPath p = simulate_walk(env, 5, 30.0, 1, 2);
  REQUIRE(p.sites.size() == p.times.size() + 1);
  REQUIRE(p.steps.size() == p.times.size());
  CHECK(p.env_hash == env.hash());
  for (std::size_t i = 0; i < p.times.size(); ++i) {
    CHECK(p.times[i] <= 30.0);
    if (i > 0) CHECK(p.times[i] > p.times[i - 1]);
    CHECK(env.geometry().shift(p.sites[i], Direction::from_index(p.steps[i])) == p.sites[i + 1]);
    CHECK(env.p(p.sites[i], p.steps[i]) > 0.0);
  }
  const WalkPath again = simulate_walk(env, 5, 30.0, 1, 2);
  CHECK(again.times == p.times);
  CHECK(simulate_walk(env, 5, 30.0, 1, 3).times != p.times);
}

TEST_CASE("staged advancing reproduces a single run") {
  const TorusEnvironment env = test::random_env(2, 10, 4, 1.0, true);
  Walker a(env, 0, 9, 17), b(env, 0, 9, 17);
  for (double t : {0.5, 1.0, 7.25, 20.0}) a.advance_to(t);
  b.advance_to(20.0);
  CHECK(a.site() == b.site());
  CHECK(a.unwrapped() == b.unwrapped());
  CHECK(a.jumps() == b.jumps());

  double dwell = 0.0;
  Walker c(env, 3, 9, 18);
  c.advance_to(12.5, [&](Site, double dt) { dwell += dt; });
  CHECK(dwell == doctest::Approx(12.5).epsilon(1e-14));
}

TEST_CASE("control walk: Poisson jump counts and diffusive covariance") {
  const TorusEnvironment env = test::control_env(2, 64);
  const std::vector<double> times{5.0, 100.0};
  const std::size_t n = 10000;
  const DisplacementSamples s = sample_displacements(env, nullptr, times, n, 2024, 0, 4);
  CHECK(s.corrected.empty());

  double mean_jumps = 0.0;
  for (std::size_t w = 0; w < n; ++w) mean_jumps += static_cast<double>(s.jumps[w]);
  mean_jumps /= static_cast<double>(n);
  CHECK(std::abs(mean_jumps - 20.0) < 3.0 * std::sqrt(20.0 / n));

  double c00 = 0, c11 = 0, c01 = 0;
  for (std::size_t w = 0; w < n; ++w) {
    const double x = s.raw_at(1, w, 0), y = s.raw_at(1, w, 1);
    c00 += x * x;
    c11 += y * y;
    c01 += x * y;
  }
  CHECK(c00 / n == doctest::Approx(2.0).epsilon(0.05));
  CHECK(c11 / n == doctest::Approx(2.0).epsilon(0.05));
  CHECK(std::abs(c01 / n) < 0.1);

  CHECK(sample_displacements(env, nullptr, times, 0, 1).raw.empty());
}

TEST_CASE("corrected displacement is centred and thread invariant") {
  const TorusEnvironment env = test::random_env(2, 32, 7);
  const CorrectorSolution sol = solve_drift_corrector(env);
  const std::vector<double> times{50.0};
  const std::size_t n = 10000;
  const DisplacementSamples a = sample_displacements(env, &sol, times, n, 5, 0, 1);
  const DisplacementSamples b = sample_displacements(env, &sol, times, n, 5, 0, 6);
  CHECK(a.raw == b.raw);
  CHECK(a.corrected == b.corrected);
  for (int i = 0; i < 2; ++i) {
    const auto col = a.column(0, i, true);
    const double m = sample_mean(col);
    double var = 0.0;
    for (double x : col) var += (x - m) * (x - m);
    var /= static_cast<double>(n - 1);
    CHECK(std::abs(m) < 3.0 * std::sqrt(var / n));
  }
  CHECK(a.slice(0, true).size() == n);

  CHECK_THROWS_AS(sample_displacements(env, &sol, std::vector<double>{10.0, 5.0}, 10, 1), PreconditionError);
}

TEST_CASE("uniformization against the matrix exponential") {
  const TorusEnvironment env = test::random_env(2, 5, 12, 1.0, true);
  const Eigen::MatrixXd Q = forward_matrix(env);
  // Columns of the forward generator sum to zero (mass conservation); rows
  // too, since the environment is doubly stochastic.
  CHECK(Q.colwise().sum().cwiseAbs().maxCoeff() < 1e-13);
  CHECK(Q.rowwise().sum().cwiseAbs().maxCoeff() < 1e-13);

  const std::vector<double> times{0.0, 0.3, 2.0, 7.0};
  const HeatKernel hk = heat_kernel(env, 3, times, 1e-14);
  CHECK(hk.q[0][3] == 1.0);
  CHECK(hk.max_mass_defect < 1e-13);
  for (std::size_t i = 1; i < times.size(); ++i) {
    const Eigen::MatrixXd P = (Q * times[i]).exp();
    for (std::size_t x = 0; x < env.sites(); ++x) {
      CHECK(hk.q[i][x] == doctest::Approx(P(static_cast<Eigen::Index>(x), 3)).epsilon(1e-11));
    }
  }
}

TEST_CASE("uniformization against an adaptive ODE integrator") {
  namespace odeint = boost::numeric::odeint;
  const TorusEnvironment env = test::random_env(3, 4, 19);
  using State = std::vector<double>;
  State q(env.sites(), 0.0);
  q[0] = 1.0;
  auto rhs = [&](const State& y, State& dy, double) { apply_forward_generator(env, y, dy); };
  odeint::integrate_adaptive(odeint::make_controlled<odeint::runge_kutta_dopri5<State>>(1e-13, 1e-13), rhs, q, 0.0,
                             3.0, 1e-3);
  const std::vector<double> times{3.0};
  const HeatKernel hk = heat_kernel(env, 0, times);
  CHECK(test::max_diff(hk.q[0], q) < 1e-10);
}

TEST_CASE("control heat kernel against modified Bessel functions") {
  const TorusEnvironment env = test::control_env(2, 64);
  const std::vector<double> times{1.0};
  const HeatKernel hk = heat_kernel(env, 0, times);
  const double i0 = std::cyl_bessel_i(0.0, 2.0), i1 = std::cyl_bessel_i(1.0, 2.0);
  CHECK(std::exp(-4.0) * i0 * i1 == doctest::Approx(0.0664123673235108).epsilon(1e-12));
  CHECK(hk.q[0][0] == doctest::Approx(std::exp(-4.0) * i0 * i0).epsilon(1e-12));
  CHECK(hk.q[0][0] == doctest::Approx(0.0951773850848799).epsilon(1e-12));
  const Site e1 = env.geometry().site({1, 0, 0, 0});
  CHECK(hk.q[0][e1] == doctest::Approx(0.0664123673235108).epsilon(1e-12));
  CHECK(hk.lambda == 4.0);
}

TEST_CASE("uniform law is stationary") {
  const TorusEnvironment env = test::random_env(2, 12, 8, 1.0, true);
  const std::vector<double> u(env.sites(), 1.0 / static_cast<double>(env.sites()));
  const std::vector<double> times{0.5, 40.0};
  const HeatKernel hk = heat_kernel_from(env, u, times);
  CHECK(test::max_diff(hk.q[1], u) < 1e-15);
  CHECK_THROWS_AS(heat_kernel(env, 0, times, 1e-3), PreconditionError);
  CHECK_THROWS_AS(heat_kernel(env, 0, times, 0.0), PreconditionError);
}

TEST_CASE("poisson truncation bound") {
  for (double mu : {0.5, 4.0, 60.0, 900.0}) {
    for (double tol : {1e-8, 1e-14}) {
      const int K = poisson_truncation(mu, tol);
      CHECK(K >= mu);
      // Upper tail by direct summation in log space.
      double tail = 0.0;
      for (int k = K + 1; k < K + 2000; ++k) tail += std::exp(-mu + k * std::log(mu) - std::lgamma(k + 1.0));
      CHECK(tail <= tol);
    }
  }
}

TEST_CASE("environment-process averages") {
  const TorusEnvironment env = test::random_env(2, 8, 31, 1.0, true);
  const std::vector<double> c(env.sites(), 3.25);
  const TimeAverage a = environment_average(env, c, 10.0, 1, 50);
  CHECK(a.estimate == 3.25);
  CHECK(a.torus_mean == 3.25);

  const TorusEnvironment small = test::control_env(2, 4);
  std::vector<double> ind(small.sites(), 0.0);
  ind[0] = 1.0;
  const TimeAverage b = environment_average(small, ind, 1e4 * 16, 2, 16, 4);
  CHECK(std::abs(b.estimate - 1.0 / 16.0) < 3.0 * b.standard_error + 1e-12);
  CHECK(b.standard_error > 0.0);

  const auto obs = tensor_moment_observable(test::control_env(2, 4), 1.0);
  for (double v : obs) CHECK(v == doctest::Approx(4.0));
}

#include <doctest.h>

#include <cmath>

#include "dsre/diagnostics.hpp"
#include "dsre/error.hpp"
#include "support.hpp"

using namespace dsre;

TEST_CASE("entropy-production constant") {
  // Independent oracle: root of f'(beta) in extended precision. The
  // minimiser is only determined to about sqrt(machine epsilon).
  const Minimum m = entropy_constant_b();
  CHECK(m.argmin == doctest::Approx(4.476691274972).epsilon(1e-6));
  CHECK(m.value == doctest::Approx(0.896127751177603).epsilon(1e-13));
  CHECK(m.iterations > 10);
  CHECK(entropy_constant_function(2.0) == doctest::Approx(3.0 * (1.0 - std::log(2.0))));
  CHECK(entropy_constant_function(1.0 + 1e-9) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS_AS(entropy_constant_function(1.0), PreconditionError);
}

TEST_CASE("wrap time") { CHECK(wrap_time(TorusGeometry(2, 64), 1.0) == 32.0); }

TEST_CASE("entropy and Fisher form of simple laws") {
  const TorusGeometry g(2, 4);
  const std::vector<double> u(16, 1.0 / 16.0);
  CHECK(shannon_entropy(u) == doctest::Approx(std::log(16.0)));
  CHECK(fisher_form(g, u) == 0.0);
  std::vector<double> delta(16, 0.0);
  delta[0] = 1.0;
  CHECK(shannon_entropy(delta) == 0.0);
  // Each of the four neighbours contributes ((0 - 1)/(0 + 1))^2 * 1.
  CHECK(fisher_form(g, delta) == 4.0);
}

TEST_CASE("stencil grid") {
  const std::vector<double> c{1.0, 2.0};
  const auto grid = stencil_grid(c, 0.01);
  CHECK(grid.size() == 10);
  CHECK(std::is_sorted(grid.begin(), grid.end()));
  CHECK(std::count(grid.begin(), grid.end(), 2.0) == 1);
  CHECK_THROWS_AS(stencil_grid(c, 0.6), PreconditionError);
}

TEST_CASE("Nash functionals of the control walk") {
  const TorusEnvironment env = test::control_env(2, 32);
  const std::vector<double> times{0.0, 1.0, 5.0, 20.0, 200.0};
  const HeatKernel hk = heat_kernel(env, 0, times);
  const NashReport r = nash_functionals(env, hk);
  CHECK(r.truncated_to_wrap);
  CHECK(r.t_wrap == 8.0);
  CHECK(r.times.size() == 3);
  CHECK(r.M[0] == 0.0);
  CHECK(r.H[0] == 0.0);
  CHECK(std::isnan(r.G[0]));
  CHECK(r.D[1] == doctest::Approx(0.0951773850848799).epsilon(1e-10));
  for (std::size_t i = 1; i < r.times.size(); ++i) {
    CHECK(r.H[i] > r.H[i - 1]);
    CHECK(r.hdot_exact[i] > 0.0);
  }
  CHECK(r.c1hat > 0.0);
  const HeatKernel other = heat_kernel(test::random_env(2, 32, 1), 0, times);
  CHECK_THROWS_AS(nash_functionals(env, other), PreconditionError);
}

TEST_CASE("entropy production on a non-reversible environment") {
  const TorusEnvironment env = test::random_env(2, 16, 44);
  const std::vector<double> centers{0.1, 0.5, 1.0, 2.0, 4.0};
  const double b = entropy_constant_b().value;
  const EntropyProductionSeries s = entropy_production_check(env, 0, centers, b);
  CHECK(s.verdict.pass);
  CHECK(s.min_ratio > b);
  for (std::size_t i = 0; i < s.times.size(); ++i) {
    CHECK(s.hdot[i] == doctest::Approx(s.hdot_exact[i]).epsilon(1e-4));
  }
  const std::vector<double> late{1e6};
  CHECK_THROWS_AS(entropy_production_check(env, 0, late, b), PreconditionError);
}

TEST_CASE("moment bound on the control walk") {
  const TorusEnvironment env = test::control_env(2, 48);
  std::vector<double> times;
  for (int i = 0; i < 20; ++i) times.push_back(std::pow(10.0, -1.0 + 2.5 * i / 19.0));
  const NashReport r = nash_functionals(env, heat_kernel(env, 0, times));
  const MomentBound mb = moment_bound_check(r, 1.0, 0.0);
  CHECK(mb.verdict.pass);
  CHECK(mb.late_mean == doctest::Approx(std::sqrt(std::acos(-1.0))).epsilon(0.05));
  const NashReport few = nash_functionals(env, heat_kernel(env, 0, std::vector<double>{1.0, 2.0}));
  CHECK_THROWS_AS(moment_bound_check(few, 1.0, 0.0), PreconditionError);
}

TEST_CASE("KS statistic and normal cdf") {
  CHECK(normal_cdf(0.0, 3.0) == 0.5);
  CHECK(normal_cdf(1.96, 1.0) == doctest::Approx(0.9750021048517795).epsilon(1e-14));
  // Reference value from a standard statistics package.
  CHECK(ks_statistic({-1.3, -0.2, 0.1, 0.4, 0.45, 2.2}, 1.5) == doctest::Approx(0.28029821670971933).epsilon(1e-14));
  CHECK(ks_statistic({}, 1.0) == 0.0);
}

TEST_CASE("CLT self-test on exact Gaussian samples") {
  Eigen::MatrixXd sigma2(2, 2);
  sigma2 << 2.0, 0.5, 0.5, 1.0;
  const Eigen::MatrixXd L = sigma2.llt().matrixL();
  CounterRng rng(12345, streams::kSelfTest);
  std::vector<std::vector<double>> samples(10000, std::vector<double>(2));
  for (auto& s : samples) {
    const Eigen::Vector2d z(rng.normal(), rng.normal());
    const Eigen::Vector2d x = L * z;
    s = {x(0), x(1)};
  }
  const CltReport r = clt_test(samples, sigma2);
  CHECK(r.ks_critical == doctest::Approx(0.0163));
  CHECK(r.ks_pass);
  CHECK(r.cov_pass);
  CHECK(r.pass);
  CHECK(r.cov_rel_error < 0.05);
  CHECK(r.to_json().contains("ks"));

  // The same samples judged against the wrong covariance fail.
  CHECK_FALSE(clt_test(samples, 2.0 * sigma2).pass);

  std::vector<std::vector<double>> few(samples.begin(), samples.begin() + 10);
  CHECK_THROWS_AS(clt_test(few, sigma2), PreconditionError);
  CHECK_THROWS_AS(clt_test(samples, Eigen::MatrixXd::Zero(2, 2)), PreconditionError);
}

TEST_CASE("total variation band") {
  CHECK(tv_band(64, 100000) == doctest::Approx(0.015647138674822404).epsilon(1e-14));
  const std::vector<double> p{0.5, 0.5, 0.0}, q{0.25, 0.25, 0.5};
  CHECK(total_variation(p, q) == 0.5);
  CHECK_THROWS_AS(tv_band(4, 0), PreconditionError);
}

TEST_CASE("sublinearity profiles") {
  const std::vector<int> radii{4, 8, 12, 16};
  const std::vector<double> eps{0.1};
  SUBCASE("zero cocycle") {
    const auto p = sublinearity_profile(2, [](const Coord&) { return 0.0; }, radii, eps, BoxShape::cube);
    for (double s : p.S) CHECK(s == 0.0);
    for (const auto& w : p.W) CHECK(w[0] == 0.0);
    CHECK(p.verdict.pass);
  }
  SUBCASE("linear negative control on cubes") {
    const auto p = sublinearity_profile(
        2, [](const Coord& x) { return static_cast<double>(x[0]); }, radii, eps, BoxShape::cube);
    for (std::size_t i = 0; i < radii.size(); ++i) {
      const double R = radii[i];
      CHECK(p.S[i] == doctest::Approx((R - 1) / (2 * R)).epsilon(1e-14));
    }
    CHECK(p.slope > 0.0);
    CHECK_FALSE(p.verdict.pass);
  }
  SUBCASE("centered boxes count every site of {-R..R}^d") {
    const auto p = sublinearity_profile(
        2, [](const Coord& x) { return static_cast<double>(std::abs(x[0])); }, std::vector<int>{2}, eps,
        BoxShape::centered);
    // sum_{|x|_inf <= 2} |x_1| = 5 * (2 + 1 + 0 + 1 + 2) = 30, scaled by 2^{-3}.
    CHECK(p.S[0] == doctest::Approx(30.0 / 8.0));
  }
  SUBCASE("logarithmic growth is sublinear") {
    const auto p = sublinearity_profile(
        2, [](const Coord& x) { return std::log1p(std::hypot(double(x[0]), double(x[1]))); }, radii, eps,
        BoxShape::cube);
    CHECK(p.strictly_decreasing);
    CHECK(p.slope < 0.0);
    CHECK(p.verdict.pass);
  }
  SUBCASE("radii beyond half the period are clipped") {
    const auto p = sublinearity_profile(2, [](const Coord&) { return 1.0; }, radii, eps, BoxShape::cube, 20);
    CHECK(p.clipped);
    CHECK(p.radii.back() <= 10);
  }
}

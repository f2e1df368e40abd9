// Acceptance suite: one PASS/FAIL line per criterion. Exit status is 0 only
// when every criterion passes.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "dsre/corrector.hpp"
#include "dsre/diagnostics.hpp"
#include "dsre/dynamics.hpp"
#include "dsre/environment.hpp"
#include "dsre/operators.hpp"

using namespace dsre;

namespace {

const double kPi = std::acos(-1.0);
const int kThreads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

struct Outcome {
  bool pass = false;
  std::string detail;
};

GeneratorSpec benchmark_spec(std::uint64_t seed, int N = 64) {
  GeneratorSpec s;
  s.d = 2;
  s.N = N;
  s.seed = seed;
  s.h = UniformLaw{-1.0, 1.0};
  s.rescale = ShrinkStreamTensor{0.1};
  return s;
}

GeneratorSpec control_spec(int N) {
  GeneratorSpec s;
  s.d = 2;
  s.N = N;
  s.seed = 1;
  return s;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::vector<double> log_grid(double lo, double hi, int n) {
  std::vector<double> t(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) t[static_cast<std::size_t>(i)] = lo * std::pow(hi / lo, i / double(n - 1));
  return t;
}

// Defects recomputed from the rates, independent of the validation report.
double invariant_defect(const TorusEnvironment& env) {
  const auto& g = env.geometry();
  const int nd = env.directions();
  double worst = 0.0;
  std::vector<double> mean_v(static_cast<std::size_t>(nd), 0.0);
  for (Site x = 0; x < g.sites(); ++x) {
    double out = 0.0, in = 0.0, div = 0.0;
    for (int j = 0; j < nd; ++j) {
      const Direction k = Direction::from_index(j);
      const Site y = g.shift(x, k);
      out += env.p(x, j);
      in += env.p(y, (-k).index());
      div += env.v(x, j);
      worst = std::max(worst, std::abs(env.v(x, j) + env.v(y, (-k).index())));
      worst = std::max(worst, std::max(0.0, env.s_lower() - env.s(x, j)));
      worst = std::max(worst, std::max(0.0, -env.p(x, j)));
      worst = std::max(worst, std::max(0.0, env.p(x, j) - env.s_upper()));
      mean_v[static_cast<std::size_t>(j)] += env.v(x, j);
    }
    worst = std::max({worst, std::abs(out - in), std::abs(div)});
  }
  for (double m : mean_v) worst = std::max(worst, std::abs(m) / static_cast<double>(g.sites()));
  return worst;
}

Outcome criterion_invariants() {
  double worst = 0.0;
  int count = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (const auto& [d, N] : {std::pair{2, 32}, std::pair{3, 8}}) {
      GeneratorSpec s = benchmark_spec(1000 + seed, N);
      s.d = d;
      if (seed % 2 == 0) s.s = UniformLaw{1.0, 2.0};
      if (seed % 5 == 0) s.h = GaussianLaw{1.5};
      const TorusEnvironment env = make_environment(s);
      const ValidationReport& r = env.report();
      worst = std::max({worst, invariant_defect(env), r.max_bistochastic_defect, r.max_divergence,
                        r.max_skew_defect, r.max_mean_flow});
      ++count;
    }
  }
  return {worst < 1e-12, std::to_string(count) + " environments, max defect " + fmt("%.3g", worst)};
}

Outcome criterion_identities() {
  GeneratorSpec s = benchmark_spec(7, 8);
  s.s = UniformLaw{1.0, 2.0};
  const TorusEnvironment env = make_environment(s);
  const IdentityReport r = verify_identities(env, 100, 1e-10);
  return {r.passed && r.c_skew >= 0 && r.c_skew < 1e-10,
          "100 fields, max defect " + fmt("%.3g", r.max_defect()) + ", ||C+C^T||_max " + fmt("%.3g", r.c_skew)};
}

Outcome criterion_corrector() {
  double lu = 0.0, calc = 0.0;
  for (int N : {4, 5, 6, 7, 8}) {
    GeneratorSpec s = benchmark_spec(50 + static_cast<std::uint64_t>(N), N);
    if (N % 2) s.s = UniformLaw{1.0, 2.0};
    const TorusEnvironment env = make_environment(s);
    const CorrectorSolution sol = solve_drift_corrector(env);
    for (std::size_t c = 0; c < sol.components(); ++c) {
      const auto dense = dense_corrector(env, sol.phi[c].values);
      for (Site x = 0; x < env.sites(); ++x) lu = std::max(lu, std::abs(dense[x] - sol.chi[c].values[x]));
      const CalculusResult cr = operator_calculus_corrector(env, sol.phi[c], CalculusMode::general);
      for (std::size_t i = 0; i < cr.theta.values.size(); ++i) {
        calc = std::max(calc, std::abs(cr.theta.values[i] - sol.theta[c].values[i]));
      }
    }
  }
  const TorusEnvironment big = make_environment(benchmark_spec(7));
  SolverOptions o;
  o.threads = kThreads;
  const CorrectorSolution sol = solve_drift_corrector(big, o);
  return {lu < 1e-10 && calc < 1e-6 && sol.residual < 1e-10,
          "dense LU " + fmt("%.3g", lu) + ", calculus " + fmt("%.3g", calc) + ", N=64 residual " +
              fmt("%.3g", sol.residual)};
}

Outcome criterion_control(std::string& info) {
  const TorusEnvironment small = make_environment(control_spec(64));
  const CorrectorSolution sol = solve_drift_corrector(small);
  const double sigma_err = (sol.sigma2 - 2.0 * Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff();

  const TorusEnvironment env = make_environment(control_spec(256));
  const std::vector<double> times{1.0, 50.0};
  const HeatKernel hk = heat_kernel(env, 0, times, 1e-13, kThreads);
  const NashReport r = nash_functionals(env, hk);
  const double q10 = hk.q[0][0];
  const double q_exact = 0.0951773850848799;  // e^{-4} I_0(2)^2
  const double m50 = r.M[1] / std::sqrt(50.0);
  const double d50 = r.D[1];
  const double d_target = 1.0 / (8.0 * kPi);
  const bool ok_sigma = sigma_err == 0.0;
  const bool ok_q = std::abs(q10 - q_exact) < 1e-6;
  const bool ok_m = std::abs(m50 / std::sqrt(kPi) - 1.0) < 0.03;
  const bool ok_d = std::abs(d50 / d_target - 1.0) < 0.05;
  info = "D(50) = " + fmt("%.6f", d50) + " vs 1/(4 pi) = " + fmt("%.6f", 1.0 / (4.0 * kPi)) + " (rel. err " +
         fmt("%.2g", std::abs(d50 * 4.0 * kPi - 1.0)) + ")";
  return {ok_sigma && ok_q && ok_m && ok_d,
          std::string("sigma2-2I ") + fmt("%.2g", sigma_err) + (ok_sigma ? " ok" : " BAD") + "; q(1,0) " +
              fmt("%.9f", q10) + (ok_q ? " ok" : " BAD") + "; M(50)/sqrt(50) " + fmt("%.5f", m50) +
              (ok_m ? " ok" : " BAD") + "; D(50) " + fmt("%.6f", d50) + " vs 1/(8 pi) " + fmt("%.6f", d_target) +
              (ok_d ? " ok" : " BAD")};
}

Outcome criterion_constant() {
  const Minimum m = entropy_constant_b();
  return {std::abs(m.value - 0.8956) <= 1e-4,
          "b = " + fmt("%.10f", m.value) + " at beta = " + fmt("%.6f", m.argmin) + ", target 0.8956 +- 1e-4"};
}

Outcome criterion_entropy() {
  double worst_ratio = INFINITY;
  int points = 0;
  bool ok = true;
  for (std::uint64_t seed = 7; seed < 12; ++seed) {
    const TorusEnvironment env = make_environment(benchmark_spec(seed));
    const double t_wrap = wrap_time(env.geometry(), env.s_upper());
    const auto centers = log_grid(0.1, t_wrap, 24);
    const EntropyProductionSeries s = entropy_production_check(env, 0, centers, 0.8956, 1e-2, 1e-14, kThreads);
    ok = ok && s.verdict.pass && s.times.size() == centers.size();
    worst_ratio = std::min(worst_ratio, s.min_ratio);
    points += static_cast<int>(s.times.size());
  }
  return {ok, "5 environments, " + std::to_string(points) + " grid times, min Hdot/(s_* F) = " +
                  fmt("%.4f", worst_ratio)};
}

Outcome criterion_clt() {
  const TorusEnvironment env = make_environment(benchmark_spec(7));
  SolverOptions o;
  o.threads = kThreads;
  const CorrectorSolution sol = solve_drift_corrector(env, o);
  const std::vector<double> times{400.0};
  const DisplacementSamples s = sample_displacements(env, &sol, times, 10000, 11, 0, kThreads);
  CltOptions opts;
  opts.ks_threshold = 0.03;
  opts.cov_tolerance = 0.07;
  const CltReport r = clt_test(s.slice(0, true), sol.sigma2, opts);
  return {r.pass, "KS " + fmt("%.4f", r.ks[0]) + ", " + fmt("%.4f", r.ks[1]) + " (threshold 0.03), cov error " +
                      fmt("%.4f", r.cov_rel_error)};
}

Outcome criterion_sublinearity() {
  const TorusEnvironment env = make_environment(benchmark_spec(7));
  SolverOptions o;
  o.threads = kThreads;
  const CorrectorSolution sol = solve_drift_corrector(env, o);
  const std::vector<int> radii{4, 8, 12, 16};
  const std::vector<double> eps{0.05, 0.1};
  const auto& g = env.geometry();
  bool ok = true;
  std::string detail;
  for (std::size_t c = 0; c < sol.components(); ++c) {
    const auto theta = sol.cocycle(c);
    const auto p = sublinearity_profile(
        2, [&](const Coord& x) { return theta[g.site(x)]; }, radii, eps, BoxShape::cube, g.side());
    ok = ok && p.strictly_decreasing && p.slope < 0 && !p.clipped;
    detail += "slope_" + std::to_string(c + 1) + " " + fmt("%.3f", p.slope) + (p.strictly_decreasing ? "" : " (not monotone)") + "; ";
  }
  const auto control = sublinearity_profile(
      2, [](const Coord& x) { return static_cast<double>(x[0]); }, radii, eps, BoxShape::cube, g.side());
  ok = ok && control.slope >= 0;
  detail += "linear control slope " + fmt("%.3f", control.slope);
  return {ok, detail};
}

Outcome criterion_total_variation() {
  const TorusEnvironment env = make_environment(benchmark_spec(7, 8));
  const std::vector<double> times{3.0};
  const std::size_t n = 100000;
  const DisplacementSamples s = sample_displacements(env, nullptr, times, n, 2718, 0, kThreads);
  std::vector<double> empirical(env.sites(), 0.0);
  for (std::size_t w = 0; w < n; ++w) empirical[s.wrapped[w]] += 1.0 / static_cast<double>(n);
  const HeatKernel hk = heat_kernel(env, 0, times);
  const double tv = total_variation(empirical, hk.q[0]);
  const double band = tv_band(env.sites(), n, 0.01);
  return {tv <= band, "TV " + fmt("%.5f", tv) + " vs 99% band " + fmt("%.5f", band) + " (64 sites, t = 3)"};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    std::function<Outcome(std::string&)> run;
  };
  const std::vector<Criterion> criteria{
      {1, "structural invariants", 10, [](std::string&) { return criterion_invariants(); }},
      {2, "operator identities", 30, [](std::string&) { return criterion_identities(); }},
      {3, "corrector correctness", 60, [](std::string&) { return criterion_corrector(); }},
      {4, "control-case numbers", 120, criterion_control},
      {5, "entropy constant b", 1, [](std::string&) { return criterion_constant(); }},
      {6, "non-reversible entropy production", 300, [](std::string&) { return criterion_entropy(); }},
      {7, "quenched CLT", 600, [](std::string&) { return criterion_clt(); }},
      {8, "corrector sublinearity", 30, [](std::string&) { return criterion_sublinearity(); }},
      {9, "Monte Carlo vs uniformization", 300, [](std::string&) { return criterion_total_variation(); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    std::string info;
    Outcome out;
    try {
      out = c.run(info);
    } catch (const std::exception& e) {
      out = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.budget_seconds;
    const bool pass = out.pass && in_time;
    failures += pass ? 0 : 1;
    std::printf("%s [%d] %s: %s; %.2f s (budget %.0f s)%s\n", pass ? "PASS" : "FAIL", c.id, c.name,
                out.detail.c_str(), secs, c.budget_seconds, in_time ? "" : " OVER BUDGET");
    if (!info.empty()) std::printf("     info: %s\n", info.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}

#include "dsre/corrector.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "dsre/error.hpp"
#include "dsre/fft.hpp"
#include "dsre/field_io.hpp"
#include "dsre/krylov.hpp"
#include "dsre/random.hpp"
#include "dsre/util.hpp"

namespace dsre {

using nlohmann::json;

nlohmann::json SolverOptions::to_json() const {
  return {{"tol", tol},
          {"max_iter", max_iter},
          {"restart", restart},
          {"direct_fallback", direct_fallback},
          {"allow_nonzero_mean", allow_nonzero_mean}};
}

SolverOptions SolverOptions::from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw PreconditionError(path + ": expected an object");
  SolverOptions o;
  for (const auto& [key, val] : j.items()) {
    const std::string at = path + "." + key;
    try {
      if (key == "tol") {
        o.tol = val.get<double>();
        if (!(o.tol > 0)) throw PreconditionError(at + ": must be positive");
      } else if (key == "max_iter") {
        o.max_iter = val.get<int>();
        if (o.max_iter < 0) throw PreconditionError(at + ": must be >= 0");
      } else if (key == "restart") {
        o.restart = val.get<int>();
        if (o.restart < 1) throw PreconditionError(at + ": must be >= 1");
      } else if (key == "direct_fallback") {
        o.direct_fallback = val.get<bool>();
      } else if (key == "allow_nonzero_mean") {
        o.allow_nonzero_mean = val.get<bool>();
      } else {
        throw PreconditionError(at + ": unknown key");
      }
    } catch (const json::type_error&) {
      throw PreconditionError(at + ": wrong type");
    }
  }
  return o;
}

namespace {

int default_max_iter(const TorusGeometry& g) {
  return static_cast<int>(std::ceil(10.0 * std::pow(static_cast<double>(g.side()), g.dim() / 2.0)));
}

std::vector<double> harmonic_defect(const TorusEnvironment& env, std::span<const double> chi,
                                    std::span<const double> phi) {
  const auto& nb = env.neighbors();
  std::vector<double> r(chi.size());
  for (Site x = 0; x < chi.size(); ++x) {
    double acc = 0.0;
    for (int dir = 0; dir < env.directions(); ++dir) acc += env.p(x, dir) * (chi[nb.at(x, dir)] - chi[x]);
    r[x] = acc - phi[x];
  }
  return r;
}

void remove_mean(std::span<double> v) {
  const double m = torus_mean(v);
  for (double& x : v) x -= m;
}

// Direct solve with the gauge chi(0) = 0 in place of the (redundant) first
// equation, then recentered.
std::vector<double> sparse_direct(const TorusEnvironment& env, std::span<const double> phi) {
  const std::size_t n = env.sites();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(n * (env.directions() + 1));
  const auto& nb = env.neighbors();
  trip.emplace_back(0, 0, 1.0);
  for (Site x = 1; x < n; ++x) {
    const auto r = static_cast<Eigen::Index>(x);
    for (int dir = 0; dir < env.directions(); ++dir) {
      trip.emplace_back(r, static_cast<Eigen::Index>(nb.at(x, dir)), env.p(x, dir));
      trip.emplace_back(r, r, -env.p(x, dir));
    }
  }
  Eigen::SparseMatrix<double> L(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  L.setFromTriplets(trip.begin(), trip.end());
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(L);
  if (lu.info() != Eigen::Success) throw InternalError("sparse LU factorisation failed");
  Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(phi.data(), static_cast<Eigen::Index>(n));
  rhs(0) = 0.0;
  const Eigen::VectorXd sol = lu.solve(rhs);
  std::vector<double> out(sol.data(), sol.data() + n);
  remove_mean(out);
  return out;
}

struct ComponentResult {
  std::vector<double> chi;
  SolverStats stats;
  double residual = 0.0;
};

ComponentResult solve_component(const TorusEnvironment& env, std::span<const double> phi, const SolverOptions& o,
                                const std::vector<double>* guess) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& g = env.geometry();
  const std::size_t n = g.sites();
  ComponentResult out;
  out.chi.assign(n, 0.0);
  if (guess != nullptr) {
    if (guess->size() != n) throw PreconditionError("initial guess has the wrong size");
    out.chi = *guess;
    remove_mean(out.chi);
  }

  const TorusFft fft(g);
  double sbar = 0.0;
  for (double s : env.conductances()) sbar += s;
  sbar /= static_cast<double>(env.conductances().size());

  const LinearMap A = [&](std::span<const double> in, std::span<double> y) {
    const auto& nb = env.neighbors();
    for (Site x = 0; x < n; ++x) {
      double acc = 0.0;
      for (int dir = 0; dir < env.directions(); ++dir) acc += env.p(x, dir) * (in[nb.at(x, dir)] - in[x]);
      y[x] = acc;
    }
  };
  // Inverse of (sbar/2) Lap on H: symbol -2 / (sbar * lambda(p)), zero mode dropped.
  const LinearMap M = [&](std::span<const double> in, std::span<double> y) {
    const auto r = fft.multiply(in, [&](const Coord& m) {
      const double lam = -laplacian_symbol(g, m);
      return lam > 0 ? -2.0 / (sbar * lam) : 0.0;
    });
    std::copy(r.begin(), r.end(), y.begin());
  };

  const int max_iter = o.max_iter > 0 ? o.max_iter : default_max_iter(g);
  const double phi_scale = std::max(1.0, max_abs(phi));
  // The stopping rule is on the relative 2-norm; tighten it until the
  // pointwise defect is within tol as well.
  double inner_tol = o.tol;
  for (int round = 0; round < 4; ++round) {
    const int budget = max_iter - out.stats.iterations;
    if (budget <= 0) break;
    const KrylovStats ks = gmres(A, M, phi, out.chi, inner_tol, budget, o.restart);
    out.stats.iterations += ks.iterations;
    out.stats.restarts += ks.restarts;
    out.stats.relative_residual = ks.relative_residual;
    remove_mean(out.chi);
    out.residual = max_abs(harmonic_defect(env, out.chi, phi));
    if (!ks.converged) break;
    if (out.residual <= o.tol * phi_scale) break;
    inner_tol *= 0.1;
  }
  if (out.residual > o.tol * phi_scale || !(out.stats.relative_residual <= o.tol)) {
    if (o.direct_fallback && n <= kDenseSiteLimit) {
      out.chi = sparse_direct(env, phi);
      out.stats.used_fallback = true;
      out.residual = max_abs(harmonic_defect(env, out.chi, phi));
    } else {
      throw ConvergenceError("corrector: Krylov solve did not converge (relative residual " +
                                 std::to_string(out.stats.relative_residual) + ")",
                             out.stats.relative_residual, out.stats.iterations);
    }
  }
  out.stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

CorrectorSolution solve_targets(const TorusEnvironment& env, CorrectorTarget target,
                                std::vector<std::vector<double>> rhs, const SolverOptions& o) {
  if (!(o.tol > 0)) throw PreconditionError("corrector: tol must be positive");
  const auto& g = env.geometry();
  CorrectorSolution sol;
  sol.target = target;
  sol.geometry = g;
  sol.env_hash = env.hash();
  sol.tol = o.tol;
  if (env.provenance()) sol.seed = env.provenance()->seed;

  const std::size_t m = rhs.size();
  if (!o.initial_guess.empty() && o.initial_guess.size() != m) {
    throw PreconditionError("corrector: one initial guess per target component required");
  }
  for (auto& r : rhs) {
    const double mean = torus_mean(r);
    sol.removed_mean.push_back(mean);
    for (double& v : r) v -= mean;
    sol.phi.push_back(ScalarField{g, r, true});
  }

  std::vector<ComponentResult> parts(m);
  parallel_for(m, o.threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t c = b; c < e; ++c) {
      parts[c] = solve_component(env, sol.phi[c].values, o, o.initial_guess.empty() ? nullptr : &o.initial_guess[c]);
    }
  });
  for (auto& p : parts) {
    sol.residual = std::max(sol.residual, p.residual);
    sol.stats.push_back(p.stats);
    ScalarField chi{g, std::move(p.chi), true};
    sol.theta.push_back(grad_full(chi));
    sol.chi.push_back(std::move(chi));
  }
  sol.sigma2 = effective_covariance(env, sol).conductance_weighted;
  return sol;
}

}  // namespace

std::vector<double> CorrectorSolution::cocycle(std::size_t component) const {
  const auto& c = chi.at(component).values;
  std::vector<double> out(c.size());
  for (std::size_t x = 0; x < c.size(); ++x) out[x] = c[x] - c[0];
  return out;
}

json CorrectorSolution::summary() const {
  json s2 = json::array();
  for (Eigen::Index i = 0; i < sigma2.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < sigma2.cols(); ++j) row.push_back(sigma2(i, j));
    s2.push_back(row);
  }
  json st = json::array();
  for (const auto& s : stats) {
    st.push_back({{"iterations", s.iterations},
                  {"restarts", s.restarts},
                  {"relative_residual", s.relative_residual},
                  {"used_fallback", s.used_fallback},
                  {"seconds", s.seconds}});
  }
  return {{"target", target == CorrectorTarget::drift ? "drift" : "scalar"},
          {"residual", residual},
          {"tol", tol},
          {"sigma2", s2},
          {"removed_mean", removed_mean},
          {"solver", st},
          {"seed", seed ? json(*seed) : json(nullptr)},
          {"env_hash", hex64(env_hash)}};
}

CorrectorSolution solve_corrector(const TorusEnvironment& env, const ScalarField& phi, const SolverOptions& opts) {
  if (!(phi.geometry == env.geometry())) throw PreconditionError("corrector: phi geometry mismatch");
  const double mean = torus_mean(phi.values);
  if (!opts.allow_nonzero_mean && std::abs(mean) > 1e-12 * std::max(1.0, max_abs(phi.values))) {
    throw PreconditionError("corrector: phi has nonzero torus mean " + std::to_string(mean) +
                            " (set allow_nonzero_mean to subtract it)");
  }
  return solve_targets(env, CorrectorTarget::scalar, {phi.values}, opts);
}

CorrectorSolution solve_drift_corrector(const TorusEnvironment& env, const SolverOptions& opts) {
  const DriftFields df = drift_fields(env);
  std::vector<std::vector<double>> rhs;
  for (int i = 0; i < env.geometry().dim(); ++i) {
    const auto c = df.phistar_component(i);
    rhs.emplace_back(c.begin(), c.end());
  }
  return solve_targets(env, CorrectorTarget::drift, std::move(rhs), opts);
}

std::vector<double> dense_corrector(const TorusEnvironment& env, std::span<const double> phi) {
  const std::size_t n = env.sites();
  if (n > kDenseSiteLimit) throw PreconditionError("dense_corrector: geometry too large");
  const auto ni = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd L = Eigen::MatrixXd::Constant(ni, ni, 1.0 / static_cast<double>(n));
  const auto& nb = env.neighbors();
  for (Site x = 0; x < n; ++x) {
    const auto r = static_cast<Eigen::Index>(x);
    for (int dir = 0; dir < env.directions(); ++dir) {
      L(r, static_cast<Eigen::Index>(nb.at(x, dir))) += env.p(x, dir);
      L(r, r) -= env.p(x, dir);
    }
  }
  const Eigen::VectorXd sol = L.partialPivLu().solve(Eigen::Map<const Eigen::VectorXd>(phi.data(), ni));
  return {sol.data(), sol.data() + n};
}

Covariance effective_covariance(const TorusEnvironment& env, const CorrectorSolution& sol) {
  if (sol.env_hash != env.hash()) throw PreconditionError("effective_covariance: solution belongs to another environment");
  const std::size_t m = sol.components();
  const auto& g = env.geometry();
  const bool drift = sol.target == CorrectorTarget::drift;
  if (drift && m != static_cast<std::size_t>(g.dim())) {
    throw PreconditionError("effective_covariance: drift target needs d components");
  }
  const auto mi = static_cast<Eigen::Index>(m);
  Covariance cov{Eigen::MatrixXd::Zero(mi, mi), Eigen::MatrixXd::Zero(mi, mi), 0.0};
  Eigen::VectorXd gk(mi);
  for (int dir = 0; dir < g.directions(); ++dir) {
    const Direction k = Direction::from_index(dir);
    for (Site x = 0; x < g.sites(); ++x) {
      for (std::size_t c = 0; c < m; ++c) {
        gk(static_cast<Eigen::Index>(c)) =
            sol.theta[c].at(x, dir) - (drift ? static_cast<double>(k.component(static_cast<int>(c))) : 0.0);
      }
      const Eigen::MatrixXd outer = gk * gk.transpose();
      cov.conductance_weighted += env.s(x, dir) * outer;
      cov.rate_weighted += env.p(x, dir) * outer;
    }
  }
  const double inv_n = 1.0 / static_cast<double>(g.sites());
  cov.conductance_weighted *= inv_n;
  cov.rate_weighted *= inv_n;
  cov.conductance_weighted = 0.5 * (cov.conductance_weighted + cov.conductance_weighted.transpose()).eval();
  cov.rate_weighted = 0.5 * (cov.rate_weighted + cov.rate_weighted.transpose()).eval();
  cov.weighting_defect = (cov.conductance_weighted - cov.rate_weighted).cwiseAbs().maxCoeff();
  return cov;
}

double CocycleBox::at(const Coord& offset) const {
  std::size_t idx = 0;
  const std::size_t side = static_cast<std::size_t>(2 * R + 1);
  for (int i = 0; i < d; ++i) {
    const long o = offset[static_cast<std::size_t>(i)];
    if (o < -R || o > R) throw PreconditionError("CocycleBox: offset outside the box");
    idx = idx * side + static_cast<std::size_t>(o + R);
  }
  return values[idx];
}

CocycleBox build_cocycle(const CorrectorSolution& sol, std::size_t component, int R) {
  if (R < 0) throw PreconditionError("build_cocycle: R must be >= 0");
  const auto& g = sol.geometry;
  const auto& chi = sol.chi.at(component).values;
  CocycleBox box;
  box.d = g.dim();
  box.R = R;
  box.beyond_half_period = 2 * R > g.side();
  const std::size_t side = static_cast<std::size_t>(2 * R + 1);
  std::size_t total = 1;
  for (int i = 0; i < g.dim(); ++i) total *= side;
  box.values.resize(total);
  for (std::size_t idx = 0; idx < total; ++idx) {
    Coord c{};
    std::size_t rem = idx;
    for (int i = g.dim() - 1; i >= 0; --i) {
      c[static_cast<std::size_t>(i)] = static_cast<long>(rem % side) - R;
      rem /= side;
    }
    box.values[idx] = chi[g.site(c)] - chi[0];
  }
  return box;
}

double cocycle_path_defect(const CorrectorSolution& sol, std::size_t component, int pairs, std::uint64_t seed) {
  const auto& g = sol.geometry;
  const auto& th = sol.theta.at(component);
  CounterRng rng(seed, streams::kCocyclePaths);
  double worst = 0.0;
  for (int t = 0; t < pairs; ++t) {
    const Site x = static_cast<Site>(rng.next_u64() % g.sites());
    const Site y = static_cast<Site>(rng.next_u64() % g.sites());
    const Coord disp = g.min_image(x, y);
    std::vector<Direction> steps;
    for (int i = 0; i < g.dim(); ++i) {
      const long v = disp[static_cast<std::size_t>(i)];
      for (long s = 0; s < std::abs(v); ++s) steps.push_back({i, v > 0 ? 1 : -1});
    }
    auto walk = [&](const std::vector<Direction>& order) {
      double acc = 0.0;
      Site at = x;
      for (const Direction k : order) {
        acc += th.at(at, k.index());
        at = g.shift(at, k);
      }
      return acc;
    };
    const double axis_first = walk(steps);
    for (std::size_t i = steps.size(); i > 1; --i) std::swap(steps[i - 1], steps[rng.next_u64() % i]);
    // A detour around a random plaquette on the way exercises the curl condition too.
    if (g.dim() >= 2) {
      const Direction a{static_cast<int>(rng.next_u64() % g.dim()), 1};
      const Direction b{(a.axis + 1) % g.dim(), -1};
      steps.insert(steps.begin(), {a, b, -a, -b});
    }
    const double shuffled = walk(steps);
    worst = std::max(worst, std::abs(axis_first - shuffled));
  }
  return worst;
}

std::vector<std::filesystem::path> write_corrector(const std::filesystem::path& stem, const CorrectorSolution& sol) {
  FieldDump dump;
  dump.geometry = sol.geometry;
  for (std::size_t c = 0; c < sol.components(); ++c) {
    dump.components.push_back("chi_" + std::to_string(c + 1));
    dump.data.push_back(sol.chi[c].values);
  }
  for (std::size_t c = 0; c < sol.components(); ++c) {
    for (int dir = 0; dir < sol.geometry.directions(); ++dir) {
      const Direction k = Direction::from_index(dir);
      dump.components.push_back("theta_" + std::to_string(c + 1) + "_" + (k.sign > 0 ? "p" : "m") +
                                std::to_string(k.axis + 1));
      const auto comp = sol.theta[c].component(dir);
      dump.data.emplace_back(comp.begin(), comp.end());
    }
  }
  dump.meta["kind"] = "corrector";
  dump.meta["summary"] = sol.summary();
  dump.meta["seed"] = sol.seed ? json(*sol.seed) : json(nullptr);
  dump.meta["env_hash"] = hex64(sol.env_hash);
  return write_field_dump(stem, dump);
}

}  // namespace dsre

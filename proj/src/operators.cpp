#include "dsre/operators.hpp"

#include <algorithm>
#include <cmath>

#include "dsre/error.hpp"
#include "dsre/fft.hpp"
#include "dsre/random.hpp"
#include "dsre/util.hpp"

namespace dsre {

namespace {

void require_same(const TorusGeometry& a, const TorusGeometry& b, const char* what) {
  if (!(a == b)) throw PreconditionError(std::string(what) + ": geometry mismatch");
}

void require_env(const Operator& op) {
  if (op.env == nullptr) throw PreconditionError("operator needs an environment binding");
}

// Tolerance for "this field lies in H": scale-aware, so large fields with a
// rounding-level mean are accepted.
void require_zero_mean(const ScalarField& f, const char* what) {
  const double m = torus_mean(f.values);
  if (std::abs(m) > 1e-10 * std::max(1.0, max_abs(f.values))) {
    throw PreconditionError(std::string(what) + ": argument must have zero torus mean (mean = " +
                            std::to_string(m) + ")");
  }
}

double max_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ScalarField like(const ScalarField& f) { return {f.geometry, std::vector<double>(f.values.size(), 0.0), false}; }

// Adds c * (f(x+k) - f(x)) * w(x) into out, with w = 1 when absent.
template <class Weight>
void add_weighted_grad(const NeighborTable& nb, const ScalarField& f, int dir, Weight w, double c,
                       std::vector<double>& out) {
  const std::size_t n = f.values.size();
  for (Site x = 0; x < n; ++x) out[x] += c * w(x) * (f.values[nb.at(x, dir)] - f.values[x]);
}

}  // namespace

ScalarField ScalarField::centered(const TorusGeometry& g, std::span<const double> v) {
  if (v.size() != g.sites()) throw PreconditionError("ScalarField: size does not match geometry");
  const double m = torus_mean(v);
  ScalarField f{g, std::vector<double>(v.begin(), v.end()), true};
  for (double& x : f.values) x -= m;
  return f;
}

double ScalarField::mean() const { return torus_mean(values); }

double inner(const ScalarField& f, const ScalarField& g) {
  require_same(f.geometry, g.geometry, "inner");
  double s = 0.0;
  for (std::size_t i = 0; i < f.values.size(); ++i) s += f.values[i] * g.values[i];
  return s / static_cast<double>(f.geometry.sites());
}

double inner(const GradientField& f, const GradientField& g) {
  require_same(f.geometry, g.geometry, "inner");
  double s = 0.0;
  for (std::size_t i = 0; i < f.values.size(); ++i) s += f.values[i] * g.values[i];
  return s / static_cast<double>(f.geometry.sites());
}

// ---------------------------------------------------------------------------
// Stencil and Fourier operators

ScalarField shift(const ScalarField& f, Direction k) {
  ScalarField out = like(f);
  out.zero_mean = f.zero_mean;
  for (Site x = 0; x < f.values.size(); ++x) out.values[x] = f.values[f.geometry.shift(x, k)];
  return out;
}

ScalarField grad(const ScalarField& f, Direction k) {
  ScalarField out = like(f);
  out.zero_mean = true;
  for (Site x = 0; x < f.values.size(); ++x) out.values[x] = f.values[f.geometry.shift(x, k)] - f.values[x];
  return out;
}

ScalarField laplacian(const ScalarField& f) {
  const NeighborTable nb(f.geometry);
  ScalarField out = like(f);
  out.zero_mean = true;
  for (int dir = 0; dir < f.geometry.directions(); ++dir) {
    add_weighted_grad(nb, f, dir, [](Site) { return 1.0; }, 2.0, out.values);
  }
  return out;
}

ScalarField abs_laplacian_power(const ScalarField& f, double alpha) {
  if (alpha < 0) require_zero_mean(f, "|Lap|^alpha");
  const TorusFft fft(f.geometry);
  const auto& g = f.geometry;
  ScalarField out{g, fft.multiply(f.values,
                                  [&](const Coord& m) {
                                    const double lam = -laplacian_symbol(g, m);
                                    return lam > 0 ? std::pow(lam, alpha) : 0.0;
                                  }),
                  true};
  return out;
}

ScalarField riesz(const ScalarField& f, Direction k) {
  require_zero_mean(f, "Gamma_k");
  return abs_laplacian_power(grad(f, k), -0.5);
}

ScalarField n_mul(const TorusEnvironment& env, const ScalarField& f, Direction k) {
  require_same(env.geometry(), f.geometry, "N_k");
  ScalarField out = like(f);
  const int dir = k.index();
  for (Site x = 0; x < f.values.size(); ++x) out.values[x] = (env.s(x, dir) - env.s_lower()) * f.values[x];
  return out;
}

ScalarField m_mul(const TorusEnvironment& env, const ScalarField& f, Direction k) {
  require_same(env.geometry(), f.geometry, "M_k");
  ScalarField out = like(f);
  const int dir = k.index();
  for (Site x = 0; x < f.values.size(); ++x) out.values[x] = env.v(x, dir) * f.values[x];
  return out;
}

ScalarField op_t(const TorusEnvironment& env, const ScalarField& f) {
  require_same(env.geometry(), f.geometry, "T");
  ScalarField out = like(f);
  out.zero_mean = true;
  const double s0 = env.s_lower();
  for (int dir = 0; dir < f.geometry.directions(); ++dir) {
    add_weighted_grad(env.neighbors(), f, dir, [&](Site x) { return env.s(x, dir) - s0; }, -1.0, out.values);
  }
  return out;
}

ScalarField op_a(const TorusEnvironment& env, const ScalarField& f) {
  require_same(env.geometry(), f.geometry, "A");
  ScalarField out = like(f);
  out.zero_mean = true;
  for (int dir = 0; dir < f.geometry.directions(); ++dir) {
    add_weighted_grad(env.neighbors(), f, dir, [&](Site x) { return env.v(x, dir); }, 1.0, out.values);
  }
  return out;
}

ScalarField op_s(const TorusEnvironment& env, const ScalarField& f) {
  ScalarField out = op_t(env, f);
  const ScalarField lap = laplacian(f);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= 0.5 * lap.values[i];
  return out;
}

ScalarField op_l(const TorusEnvironment& env, const ScalarField& f) {
  const ScalarField t = op_t(env, f);
  const ScalarField a = op_a(env, f);
  ScalarField out = laplacian(f);
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = 0.5 * out.values[i] - t.values[i] + a.values[i];
  return out;
}

ScalarField bare_generator(const TorusEnvironment& env, const ScalarField& f) {
  require_same(env.geometry(), f.geometry, "generator");
  ScalarField out = like(f);
  out.zero_mean = true;
  const auto& nb = env.neighbors();
  const int dirs = env.directions();
  for (Site x = 0; x < f.values.size(); ++x) {
    double acc = 0.0;
    for (int dir = 0; dir < dirs; ++dir) acc += env.p(x, dir) * (f.values[nb.at(x, dir)] - f.values[x]);
    out.values[x] = acc;
  }
  return out;
}

GradientField grad_full(const ScalarField& f) {
  const auto& g = f.geometry;
  const NeighborTable nb(g);
  GradientField out = GradientField::zeros(g);
  for (int dir = 0; dir < g.directions(); ++dir) {
    for (Site x = 0; x < g.sites(); ++x) out.at(x, dir) = f.values[nb.at(x, dir)] - f.values[x];
  }
  return out;
}

GradientField riesz_full(const ScalarField& f) {
  require_zero_mean(f, "Gamma");
  const auto& g = f.geometry;
  GradientField out = GradientField::zeros(g);
  const ScalarField h = abs_laplacian_power(f, -0.5);
  // Gamma_k = |Lap|^{-1/2} grad_k and the two commute, so one transform suffices.
  const NeighborTable nb(g);
  for (int dir = 0; dir < g.directions(); ++dir) {
    for (Site x = 0; x < g.sites(); ++x) out.at(x, dir) = h.values[nb.at(x, dir)] - h.values[x];
  }
  return out;
}

ScalarField grad_adjoint(const GradientField& gf) {
  // (grad_k)* = grad_{-k}, so grad* g = sum_k grad_{-k} g_k.
  const auto& g = gf.geometry;
  const NeighborTable nb(g);
  ScalarField out{g, std::vector<double>(g.sites(), 0.0), true};
  for (int dir = 0; dir < g.directions(); ++dir) {
    const int opp = (-Direction::from_index(dir)).index();
    for (Site x = 0; x < g.sites(); ++x) out.values[x] += gf.at(nb.at(x, opp), dir) - gf.at(x, dir);
  }
  return out;
}

ScalarField riesz_adjoint(const GradientField& gf) {
  return abs_laplacian_power(grad_adjoint(gf), -0.5);
}

Field apply(const Operator& op, const Field& f) {
  const auto scalar = [&]() -> const ScalarField& {
    if (const auto* s = std::get_if<ScalarField>(&f)) return *s;
    throw PreconditionError("operator expects a scalar field");
  };
  switch (op.tag) {
    case OpTag::Shift: return shift(scalar(), op.dir);
    case OpTag::Grad: return grad(scalar(), op.dir);
    case OpTag::Lap: return laplacian(scalar());
    case OpTag::AbsLapPow: return abs_laplacian_power(scalar(), op.alpha);
    case OpTag::Gamma: return riesz(scalar(), op.dir);
    case OpTag::Nmul: require_env(op); return n_mul(*op.env, scalar(), op.dir);
    case OpTag::Mmul: require_env(op); return m_mul(*op.env, scalar(), op.dir);
    case OpTag::T: require_env(op); return op_t(*op.env, scalar());
    case OpTag::A: require_env(op); return op_a(*op.env, scalar());
    case OpTag::S: require_env(op); return op_s(*op.env, scalar());
    case OpTag::L: require_env(op); return op_l(*op.env, scalar());
    case OpTag::GradFull: return grad_full(scalar());
    case OpTag::GammaFull: return riesz_full(scalar());
    case OpTag::GradAdj:
    case OpTag::GammaAdj: {
      const auto* gf = std::get_if<GradientField>(&f);
      if (gf == nullptr) throw PreconditionError("adjoint operator expects a gradient field");
      return op.tag == OpTag::GradAdj ? grad_adjoint(*gf) : riesz_adjoint(*gf);
    }
  }
  throw InternalError("unknown operator tag");
}

GradientDefects gradient_defects(const GradientField& gf) {
  const auto& g = gf.geometry;
  const NeighborTable nb(g);
  GradientDefects d;
  for (Site x = 0; x < g.sites(); ++x) {
    for (int k = 0; k < g.directions(); ++k) {
      const Site xk = nb.at(x, k);
      const int opp = (-Direction::from_index(k)).index();
      d.antisymmetry = std::max(d.antisymmetry, std::abs(gf.at(x, k) + gf.at(xk, opp)));
      for (int l = 0; l < g.directions(); ++l) {
        const Site xl = nb.at(x, l);
        d.curl = std::max(d.curl, std::abs(gf.at(x, k) + gf.at(xk, l) - gf.at(x, l) - gf.at(xl, k)));
      }
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Identity verification

double IdentityReport::max_defect() const {
  return std::max({grad_laplacian, gamma_star_gamma, gamma_gamma_star, t_negativity, a_symmetric_part, t_forms,
                   a_forms, generator_forms, quadratic_form, sandwich_lower, sandwich_upper, std::max(c_skew, 0.0)});
}

nlohmann::json IdentityReport::to_json() const {
  return {{"trials", trials},
          {"grad_laplacian", grad_laplacian},
          {"gamma_star_gamma", gamma_star_gamma},
          {"gamma_gamma_star", gamma_gamma_star},
          {"t_negativity", t_negativity},
          {"a_symmetric_part", a_symmetric_part},
          {"t_forms", t_forms},
          {"a_forms", a_forms},
          {"generator_forms", generator_forms},
          {"quadratic_form", quadratic_form},
          {"sandwich_lower", sandwich_lower},
          {"sandwich_upper", sandwich_upper},
          {"c_skew", c_skew},
          {"tolerance", tolerance},
          {"passed", passed}};
}

IdentityReport verify_identities(const TorusEnvironment& env, int trials, double tol, std::uint64_t seed,
                                 bool dense) {
  const auto& g = env.geometry();
  const std::size_t n = g.sites();
  if (dense && n > kDenseSiteLimit) {
    throw PreconditionError("verify_identities: dense mode needs N^d <= " + std::to_string(kDenseSiteLimit));
  }
  IdentityReport r;
  r.trials = trials;
  r.tolerance = tol;
  const auto& nb = env.neighbors();
  const int dirs = env.directions();
  const double s0 = env.s_lower();

  for (int t = 0; t < trials; ++t) {
    CounterRng rng(seed, streams::kOperatorTrials + static_cast<std::uint64_t>(t));
    std::vector<double> raw(n), raw2(n);
    for (auto& v : raw) v = rng.normal();
    for (auto& v : raw2) v = rng.normal();
    const ScalarField f = ScalarField::centered(g, raw);
    const ScalarField h = ScalarField::centered(g, raw2);

    const ScalarField lap = laplacian(f);
    const double lap_form = -inner(lap, f);  // <|Lap| f, f>
    const ScalarField gsg = grad_adjoint(grad_full(f));
    r.grad_laplacian = std::max(r.grad_laplacian, std::abs(inner(gsg, f) - lap_form));

    const ScalarField back = riesz_adjoint(riesz_full(f));
    r.gamma_star_gamma = std::max(r.gamma_star_gamma, max_diff(back.values, f.values));

    const GradientField gg = grad_full(h);
    const GradientField round = riesz_full(riesz_adjoint(gg));
    r.gamma_gamma_star = std::max(r.gamma_gamma_star, max_diff(round.values, gg.values));

    const ScalarField tf = op_t(env, f);
    const double t_form = inner(tf, f);
    r.t_negativity = std::max(r.t_negativity, std::max(0.0, -t_form));
    const ScalarField af = op_a(env, f);
    r.a_symmetric_part = std::max(r.a_symmetric_part, std::abs(inner(af, f)));

    // T f in three equivalent forms:
    //   (i)  -sum_k N_k grad_k f
    //   (ii) -sum_k grad_{-k} (N_k f)
    //   (iii) 1/2 sum_k grad_{-k} (N_k grad_k f)
    std::vector<double> t2(n, 0.0), t3(n, 0.0), a2(n, 0.0);
    for (int dir = 0; dir < dirs; ++dir) {
      const int opp = (-Direction::from_index(dir)).index();
      for (Site x = 0; x < n; ++x) {
        const Site y = nb.at(x, opp);
        const double nk_y = env.s(y, dir) - s0;
        const double nk_x = env.s(x, dir) - s0;
        t2[x] -= nk_y * f.values[y] - nk_x * f.values[x];
        const double gy = nk_y * (f.values[nb.at(y, dir)] - f.values[y]);
        const double gx = nk_x * (f.values[nb.at(x, dir)] - f.values[x]);
        t3[x] += 0.5 * (gy - gx);
        a2[x] -= env.v(y, dir) * f.values[y] - env.v(x, dir) * f.values[x];
      }
    }
    r.t_forms = std::max({r.t_forms, max_diff(t2, tf.values), max_diff(t3, tf.values)});
    r.a_forms = std::max(r.a_forms, max_diff(a2, af.values));

    const ScalarField lf = op_l(env, f);
    r.generator_forms = std::max(r.generator_forms, max_diff(lf.values, bare_generator(env, f).values));
    const double s_form = inner(op_s(env, f), f);
    r.quadratic_form = std::max(r.quadratic_form, std::abs(inner(lf, f) + s_form));
    r.sandwich_lower = std::max(r.sandwich_lower, std::max(0.0, env.s_lower() * lap_form - 2.0 * s_form));
    r.sandwich_upper = std::max(r.sandwich_upper, std::max(0.0, 2.0 * s_form - env.s_upper() * lap_form));
  }

  if (dense) {
    const Eigen::MatrixXd Q = zero_mean_basis(n);
    const SkewSandwich sw = skew_sandwich(env, Q);
    r.c_skew = (sw.C + sw.C.transpose()).cwiseAbs().maxCoeff();
  }
  r.passed = r.max_defect() < tol;
  return r;
}

// ---------------------------------------------------------------------------
// Dense calculus

Eigen::MatrixXd zero_mean_basis(std::size_t n) {
  if (n < 2) throw PreconditionError("zero_mean_basis: need at least two sites");
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n - 1));
  for (std::size_t j = 1; j < n; ++j) {
    const double jj = static_cast<double>(j);
    const double c = 1.0 / std::sqrt(jj * (jj + 1.0));
    for (std::size_t i = 0; i < j; ++i) Q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j - 1)) = c;
    Q(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j - 1)) = -jj * c;
  }
  return Q;
}

Eigen::MatrixXd reduced_matrix(const Operator& op, const TorusGeometry& g, const Eigen::MatrixXd& Q) {
  const auto n = static_cast<Eigen::Index>(g.sites());
  Eigen::MatrixXd image(n, Q.cols());
  for (Eigen::Index c = 0; c < Q.cols(); ++c) {
    ScalarField f{g, std::vector<double>(Q.col(c).data(), Q.col(c).data() + n), true};
    const Field out = apply(op, f);
    const auto* s = std::get_if<ScalarField>(&out);
    if (s == nullptr) throw PreconditionError("reduced_matrix: operator must map scalars to scalars");
    image.col(c) = Eigen::Map<const Eigen::VectorXd>(s->values.data(), n);
  }
  return Q.transpose() * image;
}

namespace {

struct SymmetricRoots {
  Eigen::MatrixXd sqrt;
  Eigen::MatrixXd inv_sqrt;
  double min_eigenvalue = 0.0;
};

SymmetricRoots symmetric_roots(const Eigen::MatrixXd& M) {
  const Eigen::MatrixXd sym = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw InternalError("symmetric eigendecomposition failed");
  const Eigen::VectorXd lam = es.eigenvalues();
  SymmetricRoots r;
  r.min_eigenvalue = lam.minCoeff();
  if (r.min_eigenvalue <= 0) throw InternalError("operator is not positive definite on the zero-mean subspace");
  const Eigen::MatrixXd& V = es.eigenvectors();
  r.sqrt = V * lam.cwiseSqrt().asDiagonal() * V.transpose();
  r.inv_sqrt = V * lam.cwiseSqrt().cwiseInverse().asDiagonal() * V.transpose();
  return r;
}

double min_abs_laplacian_eigenvalue(const TorusGeometry& g) { return 4.0 * (1.0 - std::cos(2.0 * M_PI / g.side())); }

}  // namespace

SkewSandwich skew_sandwich(const TorusEnvironment& env, const Eigen::MatrixXd& Q) {
  const auto& g = env.geometry();
  const SymmetricRoots S = symmetric_roots(reduced_matrix(Operator::s(env), g, Q));
  const Eigen::MatrixXd A = reduced_matrix(Operator::a(env), g, Q);
  SkewSandwich out;
  out.C = S.inv_sqrt * A * S.inv_sqrt;
  out.s_inv_sqrt = S.inv_sqrt;
  out.min_s_eigenvalue = S.min_eigenvalue;
  out.eigen_floor = env.s_lower() * min_abs_laplacian_eigenvalue(g) / 2.0;
  if (out.min_s_eigenvalue < out.eigen_floor * (1.0 - 1e-9)) {
    throw InternalError("S has an eigenvalue below the ellipticity floor");
  }
  return out;
}

CalculusResult operator_calculus_corrector(const TorusEnvironment& env, const ScalarField& phi, CalculusMode mode) {
  const auto& g = env.geometry();
  require_same(g, phi.geometry, "operator_calculus_corrector");
  const std::size_t n = g.sites();
  if (n > kDenseSiteLimit) throw PreconditionError("operator_calculus_corrector: geometry too large for dense mode");
  require_zero_mean(phi, "operator_calculus_corrector");
  if (mode == CalculusMode::simplified && !env.has_constant_conductance()) {
    throw PreconditionError("simplified mode requires s = s_* everywhere");
  }

  const Eigen::MatrixXd Q = zero_mean_basis(n);
  const auto ni = static_cast<Eigen::Index>(n);
  const Eigen::VectorXd u = Q.transpose() * Eigen::Map<const Eigen::VectorXd>(phi.values.data(), ni);
  const Eigen::MatrixXd lap_half = reduced_matrix(Operator::abs_lap_pow(0.5), g, Q);
  const Eigen::MatrixXd lap_mhalf = reduced_matrix(Operator::abs_lap_pow(-0.5), g, Q);
  const Eigen::VectorXd w = lap_mhalf * u;

  CalculusResult res;
  Eigen::VectorXd chi_r;
  if (mode == CalculusMode::general) {
    const SkewSandwich sw = skew_sandwich(env, Q);
    const Eigen::Index m = sw.C.rows();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(m, m);
    const Eigen::VectorXd w2 = sw.s_inv_sqrt * (lap_half * w);
    const Eigen::VectorXd w3 = (I - sw.C).partialPivLu().solve(w2);
    chi_r = -(lap_half * (sw.s_inv_sqrt * w3));
    res.c_skew = (sw.C + sw.C.transpose()).cwiseAbs().maxCoeff();
    res.min_s_eigenvalue = sw.min_s_eigenvalue;
    res.eigen_floor = sw.eigen_floor;
  } else {
    // sum_k M_k Gamma_k = A |Lap|^{-1/2} on H.
    const Eigen::MatrixXd A = reduced_matrix(Operator::a(env), g, Q);
    const Eigen::MatrixXd B = lap_mhalf * A * lap_mhalf;
    const Eigen::Index m = B.rows();
    chi_r = (B - 0.5 * Eigen::MatrixXd::Identity(m, m)).partialPivLu().solve(w);
    res.c_skew = 0.0;
  }

  const Eigen::VectorXd chi = Q * chi_r;
  res.chi = ScalarField{g, std::vector<double>(chi.data(), chi.data() + ni), true};
  res.theta = riesz_full(res.chi);

  std::vector<double> harm(n, 0.0);
  for (Site x = 0; x < n; ++x) {
    double acc = 0.0;
    for (int dir = 0; dir < env.directions(); ++dir) acc += env.p(x, dir) * res.theta.at(x, dir);
    harm[x] = acc;
  }
  res.harmonic_residual = max_diff(harm, phi.values);

  // Same equation assembled from the §3.2 pieces: (-|Lap|^{1/2}/2 + sum N_k Gamma_k + sum M_k Gamma_k) chi.
  std::vector<double> lhs = abs_laplacian_power(res.chi, 0.5).values;
  for (double& v : lhs) v *= -0.5;
  for (int dir = 0; dir < env.directions(); ++dir) {
    const Direction k = Direction::from_index(dir);
    const ScalarField gk = riesz(res.chi, k);
    const ScalarField nk = n_mul(env, gk, k);
    const ScalarField mk = m_mul(env, gk, k);
    for (Site x = 0; x < n; ++x) lhs[x] += nk.values[x] + mk.values[x];
  }
  res.operator_residual = max_diff(lhs, phi.values);
  return res;
}

}  // namespace dsre

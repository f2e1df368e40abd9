#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dsre/environment.hpp"
#include "dsre/geometry.hpp"

namespace dsre {

/// One real value per site. `zero_mean` marks membership in the mean-zero
/// subspace H.
struct ScalarField {
  TorusGeometry geometry;
  std::vector<double> values;
  bool zero_mean = false;

  static ScalarField zeros(const TorusGeometry& g) { return {g, std::vector<double>(g.sites(), 0.0), true}; }
  /// Copies values and subtracts their torus mean.
  static ScalarField centered(const TorusGeometry& g, std::span<const double> v);

  double mean() const;
};

/// Values g_k(x) for every k in E, direction-major.
struct GradientField {
  TorusGeometry geometry;
  std::vector<double> values;

  static GradientField zeros(const TorusGeometry& g) {
    return {g, std::vector<double>(static_cast<std::size_t>(g.directions()) * g.sites(), 0.0)};
  }
  double at(Site x, int dir) const { return values[static_cast<std::size_t>(dir) * geometry.sites() + x]; }
  double& at(Site x, int dir) { return values[static_cast<std::size_t>(dir) * geometry.sites() + x]; }
  std::span<const double> component(int dir) const {
    return std::span<const double>(values).subspan(static_cast<std::size_t>(dir) * geometry.sites(),
                                                   geometry.sites());
  }
};

using Field = std::variant<ScalarField, GradientField>;

/// Torus inner product N^{-d} sum_x f(x) g(x).
double inner(const ScalarField& f, const ScalarField& g);
double inner(const GradientField& f, const GradientField& g);

enum class OpTag {
  Shift,
  Grad,
  Lap,
  AbsLapPow,
  Gamma,
  Nmul,
  Mmul,
  T,
  A,
  S,
  L,
  GradFull,
  GammaFull,
  GradAdj,
  GammaAdj,
};

/// A linear map on torus fields. Environment-bound operators (N, M, T, A,
/// S, L) keep a non-owning pointer; the environment must outlive the handle.
struct Operator {
  OpTag tag = OpTag::Lap;
  Direction dir{};
  double alpha = 0.0;
  const TorusEnvironment* env = nullptr;

  static Operator shift(Direction k) { return {OpTag::Shift, k}; }
  static Operator grad(Direction k) { return {OpTag::Grad, k}; }
  static Operator lap() { return {OpTag::Lap}; }
  static Operator abs_lap_pow(double a) { return {OpTag::AbsLapPow, {}, a}; }
  static Operator gamma(Direction k) { return {OpTag::Gamma, k}; }
  static Operator n_mul(const TorusEnvironment& e, Direction k) { return {OpTag::Nmul, k, 0.0, &e}; }
  static Operator m_mul(const TorusEnvironment& e, Direction k) { return {OpTag::Mmul, k, 0.0, &e}; }
  static Operator t(const TorusEnvironment& e) { return {OpTag::T, {}, 0.0, &e}; }
  static Operator a(const TorusEnvironment& e) { return {OpTag::A, {}, 0.0, &e}; }
  static Operator s(const TorusEnvironment& e) { return {OpTag::S, {}, 0.0, &e}; }
  static Operator l(const TorusEnvironment& e) { return {OpTag::L, {}, 0.0, &e}; }
  static Operator grad_full() { return {OpTag::GradFull}; }
  static Operator gamma_full() { return {OpTag::GammaFull}; }
  static Operator grad_adj() { return {OpTag::GradAdj}; }
  static Operator gamma_adj() { return {OpTag::GammaAdj}; }
};

Field apply(const Operator& op, const Field& f);

// Typed entry points. Conventions: grad_k = U_k - I, Lap = 2 sum_k grad_k,
// Gamma_k = |Lap|^{-1/2} grad_k, N_k = (s_k - s_*), M_k = v_k,
// T = -sum_k N_k grad_k, A = sum_k M_k grad_k, S = -Lap/2 + T,
// L = Lap/2 - T + A.

ScalarField shift(const ScalarField& f, Direction k);
ScalarField grad(const ScalarField& f, Direction k);
ScalarField laplacian(const ScalarField& f);
/// |Lap|^alpha on H; the zero Fourier mode is set to 0. Negative powers
/// require a zero-mean argument.
ScalarField abs_laplacian_power(const ScalarField& f, double alpha);
ScalarField riesz(const ScalarField& f, Direction k);
ScalarField n_mul(const TorusEnvironment& env, const ScalarField& f, Direction k);
ScalarField m_mul(const TorusEnvironment& env, const ScalarField& f, Direction k);
ScalarField op_t(const TorusEnvironment& env, const ScalarField& f);
ScalarField op_a(const TorusEnvironment& env, const ScalarField& f);
ScalarField op_s(const TorusEnvironment& env, const ScalarField& f);
ScalarField op_l(const TorusEnvironment& env, const ScalarField& f);
/// sum_k p_k(x) (f(x+k) - f(x)), assembled directly from the rates.
ScalarField bare_generator(const TorusEnvironment& env, const ScalarField& f);
GradientField grad_full(const ScalarField& f);
GradientField riesz_full(const ScalarField& f);
ScalarField grad_adjoint(const GradientField& g);
ScalarField riesz_adjoint(const GradientField& g);

struct GradientDefects {
  double antisymmetry = 0.0;  ///< max |g_k(x) + g_{-k}(x+k)|
  double curl = 0.0;          ///< max |g_k(x) + g_l(x+k) - g_l(x) - g_k(x+l)|
};
GradientDefects gradient_defects(const GradientField& g);

// ---------------------------------------------------------------------------
// Identity verification

inline constexpr std::size_t kDenseSiteLimit = 4096;

struct IdentityReport {
  int trials = 0;
  double grad_laplacian = 0.0;     ///< |<grad* grad f, f> + <Lap f, f>|
  double gamma_star_gamma = 0.0;   ///< ||Gamma* Gamma f - f||_max
  double gamma_gamma_star = 0.0;   ///< ||Gamma Gamma* g - g||_max, g in G
  double t_negativity = 0.0;       ///< max(0, -<T f, f>)
  double a_symmetric_part = 0.0;   ///< |<A f, f>|
  double t_forms = 0.0;            ///< spread of the three expressions for T f
  double a_forms = 0.0;            ///< spread of the two expressions for A f
  double generator_forms = 0.0;    ///< ||(Lap/2 - T + A) f - sum_k p_k grad_k f||_max
  double quadratic_form = 0.0;     ///< |<L f, f> + <S f, f>|
  double sandwich_lower = 0.0;     ///< max(0, s_* <|Lap| f, f> - 2 <S f, f>)
  double sandwich_upper = 0.0;     ///< max(0, 2 <S f, f> - s^* <|Lap| f, f>)
  double c_skew = -1.0;            ///< ||C + C^T||_max (dense mode only, else -1)
  double tolerance = 0.0;
  bool passed = false;

  double max_defect() const;
  nlohmann::json to_json() const;
};

IdentityReport verify_identities(const TorusEnvironment& env, int trials, double tol, std::uint64_t seed = 7,
                                 bool dense = true);

// ---------------------------------------------------------------------------
// Dense operator calculus

/// Orthonormal basis of the zero-mean subspace (Helmert columns), n x (n-1).
Eigen::MatrixXd zero_mean_basis(std::size_t n);

/// Matrix of a scalar-to-scalar operator restricted to H in the basis Q:
/// Q^T op(Q).
Eigen::MatrixXd reduced_matrix(const Operator& op, const TorusGeometry& g, const Eigen::MatrixXd& Q);

/// C = S^{-1/2} A S^{-1/2} on H, with the eigenvalue data of S.
struct SkewSandwich {
  Eigen::MatrixXd C;
  Eigen::MatrixXd s_inv_sqrt;
  double min_s_eigenvalue = 0.0;
  double eigen_floor = 0.0;  ///< s_* lambda_min(|Lap|) / 2
};
SkewSandwich skew_sandwich(const TorusEnvironment& env, const Eigen::MatrixXd& Q);

enum class CalculusMode { simplified, general };

struct CalculusResult {
  ScalarField chi;
  GradientField theta;          ///< Gamma chi
  double harmonic_residual = 0;  ///< max_x |sum_k p_k theta_k - phi|
  double operator_residual = 0;  ///< same equation via |Lap|^{1/2}, N_k Gamma_k, M_k Gamma_k
  double c_skew = 0.0;
  double min_s_eigenvalue = 0.0;
  double eigen_floor = 0.0;
};

/// Solves sum_k p_k Gamma_k chi = phi on H by dense spectral calculus.
/// general:    chi = -(|Lap|^{1/2} S^{-1/2}) (I - C)^{-1} (S^{-1/2} |Lap|^{1/2}) |Lap|^{-1/2} phi
/// simplified: chi = (-I/2 + B)^{-1} |Lap|^{-1/2} phi, B = |Lap|^{-1/2} sum_k M_k Gamma_k (needs s = s_*)
CalculusResult operator_calculus_corrector(const TorusEnvironment& env, const ScalarField& phi, CalculusMode mode);

}  // namespace dsre

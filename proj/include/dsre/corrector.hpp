#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dsre/environment.hpp"
#include "dsre/operators.hpp"

namespace dsre {

struct SolverOptions {
  double tol = 1e-10;   ///< relative 2-norm residual of the preconditioned Krylov solve
  int max_iter = 0;     ///< 0 selects 10 * N^{d/2}
  int restart = 60;
  bool direct_fallback = true;  ///< sparse LU when Krylov stagnates and N^d <= kDenseSiteLimit
  bool allow_nonzero_mean = false;
  int threads = 1;
  /// Optional initial guess per target component (projected onto H).
  std::vector<std::vector<double>> initial_guess;

  nlohmann::json to_json() const;
  static SolverOptions from_json(const nlohmann::json& j, const std::string& path);
};

struct SolverStats {
  int iterations = 0;
  int restarts = 0;
  double relative_residual = 0.0;
  bool used_fallback = false;
  double seconds = 0.0;
};

enum class CorrectorTarget { scalar, drift };

/// Solution of sum_k p_k(x) (chi(x+k) - chi(x)) = phi(x), one per target
/// component (d components for the drift target phi*).
struct CorrectorSolution {
  CorrectorTarget target = CorrectorTarget::scalar;
  TorusGeometry geometry;
  std::uint64_t env_hash = 0;
  std::vector<ScalarField> phi;   ///< zero-mean right-hand sides
  std::vector<ScalarField> chi;   ///< zero-mean solutions
  std::vector<GradientField> theta;
  std::vector<double> removed_mean;
  double residual = 0.0;  ///< max_x |sum_k p_k theta_k - phi| over components
  double tol = 0.0;
  std::vector<SolverStats> stats;
  std::optional<std::uint64_t> seed;  ///< environment seed, when known
  /// Effective covariance (1x1 for a scalar target, d x d for the drift target).
  Eigen::MatrixXd sigma2;

  std::size_t components() const { return chi.size(); }
  /// Theta(x) = chi(x) - chi(0) for one component, all torus sites.
  std::vector<double> cocycle(std::size_t component = 0) const;
  nlohmann::json summary() const;
};

CorrectorSolution solve_corrector(const TorusEnvironment& env, const ScalarField& phi, const SolverOptions& opts = {});
/// Target phi*: Y*(t) = X(t) - Theta*(X(t)) is a martingale.
CorrectorSolution solve_drift_corrector(const TorusEnvironment& env, const SolverOptions& opts = {});

/// Dense reference: (L + 1 1^T / n) chi = phi by LU. Only for small tori.
std::vector<double> dense_corrector(const TorusEnvironment& env, std::span<const double> phi);

struct Covariance {
  Eigen::MatrixXd conductance_weighted;  ///< sum_k <s_k g_k g_k^T>
  Eigen::MatrixXd rate_weighted;         ///< sum_k <p_k g_k g_k^T>
  double weighting_defect = 0.0;         ///< max entry difference of the two
};

/// Scalar target: g_k = theta_k. Drift target: g_k = theta_k - k.
Covariance effective_covariance(const TorusEnvironment& env, const CorrectorSolution& sol);

/// Theta on the centered box {-R..R}^d, indexed like a (2R+1)^d torus with
/// the last axis fastest, read through periodic theta by path summation.
struct CocycleBox {
  int d = 0;
  int R = 0;
  std::vector<double> values;
  bool beyond_half_period = false;

  double at(const Coord& offset) const;
};
CocycleBox build_cocycle(const CorrectorSolution& sol, std::size_t component, int R);

/// Largest disagreement of Theta(y) - Theta(x) accumulated along two
/// different random lattice paths, over `pairs` random site pairs.
double cocycle_path_defect(const CorrectorSolution& sol, std::size_t component, int pairs, std::uint64_t seed);

/// chi and theta as field dumps plus a JSON summary next to them.
std::vector<std::filesystem::path> write_corrector(const std::filesystem::path& stem, const CorrectorSolution& sol);

}  // namespace dsre

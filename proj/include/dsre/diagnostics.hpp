#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dsre/dynamics.hpp"
#include "dsre/environment.hpp"

namespace dsre {

/// Pass/fail record shared by all checks.
struct Verdict {
  std::string check;
  bool pass = false;
  double statistic = 0.0;
  double threshold = 0.0;
  double t_wrap = 0.0;
  std::string note;

  nlohmann::json to_json() const;
};

/// Diffusive range before the infinite-lattice comparison stops being trusted:
/// (N/4)^2 / (4 d s^*).
double wrap_time(const TorusGeometry& g, double s_upper);

// ---------------------------------------------------------------------------
// Nash functionals

/// (beta+1)(beta-1)^{-2}(beta-1-log beta), the function whose infimum over
/// beta > 1 is the entropy-production constant b.
double entropy_constant_function(double beta);

struct Minimum {
  double argmin = 0.0;
  double value = 0.0;
  int iterations = 0;
};
/// Golden-section search of entropy_constant_function over (1, infinity).
Minimum entropy_constant_b(double tol = 1e-12);

struct NashReport {
  int d = 0;
  double t_wrap = 0.0;
  std::vector<double> times;
  std::vector<double> M;  ///< sum_x |x| q(t,x), Euclidean, minimal image from the start
  std::vector<double> H;  ///< -sum q log q
  std::vector<double> G;  ///< H/d - log(t)/2 + C2hat (NaN at t = 0)
  std::vector<double> F;  ///< Fisher form
  std::vector<double> D;  ///< t^{d/2} max_x q(t,x)
  std::vector<double> entropy_ratio;  ///< M e^{-H/d} where M > 1, else NaN
  std::vector<double> hdot_exact;     ///< -sum_x (Q q)(x) log q(x)
  double c2hat = 0.0;
  double c1hat = 0.0;  ///< min of entropy_ratio (NaN when no M > 1)
  bool truncated_to_wrap = false;
};

/// Requires the heat kernel's environment for the exact entropy production.
NashReport nash_functionals(const TorusEnvironment& env, const HeatKernel& hk);

double fisher_form(const TorusGeometry& g, std::span<const double> q);
double shannon_entropy(std::span<const double> q);

/// Sorted time grid containing, for each center t, the 5-point stencil
/// t + {-2,-1,0,1,2} * rel_step * t.
std::vector<double> stencil_grid(std::span<const double> centers, double rel_step);

struct EntropyProductionSeries {
  std::vector<double> times;
  std::vector<double> hdot;        ///< Richardson-extrapolated centered difference
  std::vector<double> hdot_error;  ///< differencing error estimate
  std::vector<double> hdot_exact;  ///< -sum (Qq) log q, for reference
  std::vector<double> fisher;
  std::vector<double> ratio;       ///< hdot / (s_* F)
  double constant = 0.0;           ///< c5 = b s_*
  double min_margin = 0.0;         ///< min over t of hdot - c5 F + slack
  double min_ratio = 0.0;
  double t_wrap = 0.0;
  Verdict verdict;
};

/// Checks Hdot(t) >= b s_* F(t) - 2 err(t) on every center in [t_min, t_wrap]
/// (centers beyond t_wrap are dropped). Throws PreconditionError when the
/// differencing error exceeds 10% of c5 F at some center.
EntropyProductionSeries entropy_production_check(const TorusEnvironment& env, Site x0,
                                                 std::span<const double> centers, double b,
                                                 double rel_step = 1e-2, double tail_tol = 1e-14,
                                                 int threads = 1);

struct MomentBound {
  std::vector<double> times;
  std::vector<double> scaled_moment;  ///< t^{-1/2} M(t)
  std::vector<double> rho;            ///< t^{-1/2} M (G + 1/eps)^{-(1+eps)/(2+eps)}
  double c4hat = 0.0;
  double eps = 1.0;
  double hstar = 0.0;
  double late_mean = 0.0;
  double middle_mean = 0.0;
  Verdict verdict;
};

/// Boundedness of t^{-1/2} M(t) on [1, t_wrap]: mean over the last quarter
/// of grid points <= 1.1 x mean over the middle half.
MomentBound moment_bound_check(const NashReport& report, double eps, double hstar);

// ---------------------------------------------------------------------------
// CLT statistics

double normal_cdf(double x, double sigma);
/// One-sample Kolmogorov-Smirnov distance of the samples to N(0, sigma^2).
double ks_statistic(std::vector<double> samples, double sigma);

struct CltOptions {
  double ks_threshold = 0.0;  ///< 0 selects the 1% critical value 1.63/sqrt(n)
  double cov_tolerance = 0.07;
  std::size_t min_samples = 1000;
};

struct CltReport {
  std::size_t samples = 0;
  std::vector<double> ks;       ///< per coordinate
  double ks_critical = 0.0;     ///< 1.63 / sqrt(n)
  double ks_threshold = 0.0;
  Eigen::MatrixXd covariance;   ///< empirical (centered)
  Eigen::VectorXd mean;
  double cov_rel_error = 0.0;   ///< ||cov - sigma2||_2 / ||sigma2||_2
  double cov_tolerance = 0.0;
  bool ks_pass = false;
  bool cov_pass = false;
  bool pass = false;

  nlohmann::json to_json() const;
};

/// `samples` is n x d (one row per walk).
CltReport clt_test(const std::vector<std::vector<double>>& samples, const Eigen::MatrixXd& sigma2,
                   const CltOptions& opts = {});

// ---------------------------------------------------------------------------
// Total variation band

/// 99% band for the total variation distance between an empirical law on m
/// cells from n samples and the truth: sqrt(2 (m ln 2 + ln(1/delta)) / n) / 2.
double tv_band(std::size_t cells, std::size_t n, double delta = 0.01);
double total_variation(std::span<const double> p, std::span<const double> q);

// ---------------------------------------------------------------------------
// Sublinearity

enum class BoxShape { cube, centered };

struct SublinearityProfile {
  std::vector<int> radii;
  std::vector<double> eps;
  std::vector<double> S;                 ///< R^{-(d+1)} sum_box |Psi|
  std::vector<std::vector<double>> W;    ///< [radius][eps]: R^{-d} #{|Psi| > eps R}
  double slope = 0.0;                    ///< least-squares slope of log S against log R
  bool strictly_decreasing = false;
  bool clipped = false;
  Verdict verdict;
};

/// Boxes: cube = {0..R-1}^d, centered = {-R..R}^d. Radii above period/2 are
/// clipped (period 0 disables the check).
SublinearityProfile sublinearity_profile(int d, const std::function<double(const Coord&)>& psi,
                                         std::vector<int> radii, std::span<const double> eps, BoxShape shape,
                                         int period = 0);

}  // namespace dsre

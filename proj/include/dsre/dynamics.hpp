#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsre/corrector.hpp"
#include "dsre/environment.hpp"
#include "dsre/random.hpp"

namespace dsre {

/// One jump trajectory of the quenched walk on the torus.
struct WalkPath {
  std::uint64_t env_hash = 0;
  Site start = 0;
  double horizon = 0.0;
  std::vector<double> times;  ///< jump times, strictly increasing
  std::vector<Site> sites;    ///< sites[0] = start, sites[i] entered at times[i-1]
  std::vector<int> steps;     ///< direction index of each jump
};

/// Continuous-time walk driven by a counter-based stream keyed (seed, walk_id).
/// Keeps the pending jump time between calls so that advancing in several
/// stages gives the same trajectory as one long run.
class Walker {
 public:
  Walker(const TorusEnvironment& env, Site start, std::uint64_t seed, std::uint64_t walk_id);

  /// Runs the chain up to time t (t must not decrease).
  void advance_to(double t);
  /// Same, calling visit(site, dwell) for every holding interval inside (now, t].
  template <class Visit>
  void advance_to(double t, Visit&& visit);

  Site site() const { return site_; }
  const Coord& unwrapped() const { return pos_; }
  double time() const { return now_; }
  std::uint64_t jumps() const { return jumps_; }
  int last_step() const { return last_step_; }

 private:
  void jump();

  const TorusEnvironment* env_;
  CounterRng rng_;
  Site site_;
  Coord pos_{};
  double now_ = 0.0;
  double next_ = 0.0;
  std::uint64_t jumps_ = 0;
  int last_step_ = -1;
};

template <class Visit>
void Walker::advance_to(double t, Visit&& visit) {
  while (next_ <= t) {
    visit(site_, next_ - now_);
    now_ = next_;
    jump();
  }
  visit(site_, t - now_);
  now_ = t;
}

WalkPath simulate_walk(const TorusEnvironment& env, Site x0, double t_max, std::uint64_t seed,
                       std::uint64_t walk_id = 0);

/// n_walks independent samples of t^{-1/2} X(t) (and t^{-1/2} Y*(t) when a
/// drift corrector is supplied) for every t in `times`.
struct DisplacementSamples {
  int d = 0;
  std::size_t n_walks = 0;
  std::vector<double> times;
  std::vector<double> raw;        ///< [time][walk][axis]
  std::vector<double> corrected;  ///< same layout; empty without corrector
  std::vector<Site> wrapped;      ///< [time][walk] final torus site
  std::vector<std::uint64_t> jumps;  ///< [time][walk] jump counts
  double max_wrap_ratio = 0.0;    ///< max over samples of max_i |X_i(t)| / N
  bool wrap_warning = false;      ///< max_wrap_ratio > 0.25

  double raw_at(std::size_t ti, std::size_t w, int i) const { return raw[(ti * n_walks + w) * d + i]; }
  double corrected_at(std::size_t ti, std::size_t w, int i) const {
    return corrected[(ti * n_walks + w) * d + i];
  }
  /// Samples of one coordinate at one time (raw or corrected).
  std::vector<double> column(std::size_t ti, int axis, bool use_corrected) const;
  /// n_walks x d matrix of one time slice.
  std::vector<std::vector<double>> slice(std::size_t ti, bool use_corrected) const;
};

DisplacementSamples sample_displacements(const TorusEnvironment& env, const CorrectorSolution* corrector,
                                         std::span<const double> times, std::size_t n_walks, std::uint64_t seed,
                                         Site x0 = 0, int threads = 1);

// ---------------------------------------------------------------------------
// Heat kernel

/// dq/dt(x) = sum_k q(x+k) p_{-k}(x+k) - q(x) R(x).
void apply_forward_generator(const TorusEnvironment& env, std::span<const double> q, std::span<double> out);

struct HeatKernel {
  std::uint64_t env_hash = 0;
  TorusGeometry geometry;
  std::vector<double> times;
  std::vector<std::vector<double>> q;  ///< one probability vector per time
  double lambda = 0.0;                 ///< uniformization rate, max_x R(x)
  std::vector<int> truncation;         ///< Poisson truncation order used to reach each time
  double tail_tol = 0.0;
  double max_mass_defect = 0.0;
  double min_value = 0.0;
};

/// Uniformization from q(0) = delta_{x0}.
HeatKernel heat_kernel(const TorusEnvironment& env, Site x0, std::span<const double> times, double tail_tol = 1e-13,
                       int threads = 1);
/// Uniformization from an arbitrary initial probability vector.
HeatKernel heat_kernel_from(const TorusEnvironment& env, std::span<const double> q0, std::span<const double> times,
                            double tail_tol = 1e-13, int threads = 1);

/// Smallest K with the Chernoff bound on P(Poisson(mu) > K) below tol.
int poisson_truncation(double mu, double tol);

// ---------------------------------------------------------------------------
// Environment-process averages

struct TimeAverage {
  double estimate = 0.0;
  double standard_error = 0.0;
  double torus_mean = 0.0;
  std::size_t walks = 0;
  double horizon = 0.0;
};

/// (1/t) int_0^t obs(X(s)) ds averaged over n walks started uniformly on
/// the torus, against the torus mean of obs.
TimeAverage environment_average(const TorusEnvironment& env, std::span<const double> observable, double t,
                                std::uint64_t seed, std::size_t n, int threads = 1);

/// sum_k (s^* + sum_l |h_{k,l}(x)|)^{2+eps}, per site.
std::vector<double> tensor_moment_observable(const TorusEnvironment& env, double eps);

}  // namespace dsre

#include "dsre/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dsre/error.hpp"
#include "dsre/util.hpp"

namespace dsre {

Walker::Walker(const TorusEnvironment& env, Site start, std::uint64_t seed, std::uint64_t walk_id)
    : env_(&env), rng_(seed, walk_id), site_(start) {
  if (start >= env.sites()) throw PreconditionError("Walker: start site out of range");
  const double r = env.total_rate(site_);
  if (!(r > 0)) throw InternalError("Walker: zero total rate at a reachable site");
  next_ = rng_.exponential(r);
}

void Walker::jump() {
  const double r = env_->total_rate(site_);
  const double u = rng_.uniform() * r;
  const int dirs = env_->directions();
  int dir = dirs - 1;
  double acc = 0.0;
  for (int a = 0; a < dirs; ++a) {
    acc += env_->p(site_, a);
    if (u < acc) {
      dir = a;
      break;
    }
  }
  // Rounding can leave u just above the running sum; fall back to the last
  // direction with a positive rate.
  while (env_->p(site_, dir) <= 0.0) --dir;
  const Direction k = Direction::from_index(dir);
  pos_[static_cast<std::size_t>(k.axis)] += k.sign;
  site_ = env_->neighbors().at(site_, dir);
  last_step_ = dir;
  ++jumps_;
  const double rn = env_->total_rate(site_);
  if (!(rn > 0)) throw InternalError("Walker: zero total rate at a reachable site");
  next_ = now_ + rng_.exponential(rn);
}

void Walker::advance_to(double t) {
  if (t < now_) throw PreconditionError("Walker: time must not decrease");
  while (next_ <= t) {
    now_ = next_;
    jump();
  }
  now_ = t;
}

WalkPath simulate_walk(const TorusEnvironment& env, Site x0, double t_max, std::uint64_t seed,
                       std::uint64_t walk_id) {
  if (!(t_max >= 0)) throw PreconditionError("simulate_walk: t_max must be >= 0");
  WalkPath path;
  path.env_hash = env.hash();
  path.start = x0;
  path.horizon = t_max;
  path.sites.push_back(x0);
  if (t_max == 0) return path;
  Walker w(env, x0, seed, walk_id);
  std::uint64_t seen = 0;
  w.advance_to(t_max, [&](Site, double) {
    // Called once per holding interval; a new interval after the first
    // means a jump happened at the start of it.
    if (w.jumps() > seen) {
      seen = w.jumps();
      path.times.push_back(w.time());
      path.sites.push_back(w.site());
      path.steps.push_back(w.last_step());
    }
  });
  return path;
}

std::vector<double> DisplacementSamples::column(std::size_t ti, int axis, bool use_corrected) const {
  std::vector<double> out(n_walks);
  for (std::size_t w = 0; w < n_walks; ++w) out[w] = use_corrected ? corrected_at(ti, w, axis) : raw_at(ti, w, axis);
  return out;
}

std::vector<std::vector<double>> DisplacementSamples::slice(std::size_t ti, bool use_corrected) const {
  std::vector<std::vector<double>> out(n_walks, std::vector<double>(static_cast<std::size_t>(d)));
  for (std::size_t w = 0; w < n_walks; ++w) {
    for (int i = 0; i < d; ++i) out[w][static_cast<std::size_t>(i)] = use_corrected ? corrected_at(ti, w, i) : raw_at(ti, w, i);
  }
  return out;
}

DisplacementSamples sample_displacements(const TorusEnvironment& env, const CorrectorSolution* corrector,
                                         std::span<const double> times, std::size_t n_walks, std::uint64_t seed,
                                         Site x0, int threads) {
  const auto& g = env.geometry();
  const int d = g.dim();
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!(times[i] > 0)) throw PreconditionError("sample_displacements: times must be positive");
    if (i > 0 && times[i] <= times[i - 1]) throw PreconditionError("sample_displacements: times must increase");
  }
  if (corrector != nullptr) {
    if (corrector->target != CorrectorTarget::drift || corrector->components() != static_cast<std::size_t>(d)) {
      throw PreconditionError("sample_displacements: corrector must be the drift corrector");
    }
    if (corrector->env_hash != env.hash()) {
      throw PreconditionError("sample_displacements: corrector belongs to another environment");
    }
  }

  DisplacementSamples out;
  out.d = d;
  out.n_walks = n_walks;
  out.times.assign(times.begin(), times.end());
  const std::size_t nt = times.size();
  out.raw.assign(nt * n_walks * static_cast<std::size_t>(d), 0.0);
  if (corrector != nullptr) out.corrected.assign(out.raw.size(), 0.0);
  out.wrapped.assign(nt * n_walks, 0);
  out.jumps.assign(nt * n_walks, 0);
  if (n_walks == 0) return out;

  std::vector<double> wrap_ratio(n_walks, 0.0);
  parallel_for(n_walks, threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t w = b; w < e; ++w) {
      Walker walker(env, x0, seed, w);
      for (std::size_t ti = 0; ti < nt; ++ti) {
        walker.advance_to(times[ti]);
        const double scale = 1.0 / std::sqrt(times[ti]);
        const Site y = walker.site();
        const std::size_t base = (ti * n_walks + w) * static_cast<std::size_t>(d);
        for (int i = 0; i < d; ++i) {
          const double xi = static_cast<double>(walker.unwrapped()[static_cast<std::size_t>(i)]);
          out.raw[base + static_cast<std::size_t>(i)] = scale * xi;
          wrap_ratio[w] = std::max(wrap_ratio[w], std::abs(xi) / g.side());
          if (corrector != nullptr) {
            const auto& chi = corrector->chi[static_cast<std::size_t>(i)].values;
            out.corrected[base + static_cast<std::size_t>(i)] = scale * (xi - (chi[y] - chi[x0]));
          }
        }
        out.wrapped[ti * n_walks + w] = y;
        out.jumps[ti * n_walks + w] = walker.jumps();
      }
    }
  });
  out.max_wrap_ratio = *std::max_element(wrap_ratio.begin(), wrap_ratio.end());
  out.wrap_warning = out.max_wrap_ratio > 0.25;
  return out;
}

// ---------------------------------------------------------------------------
// Heat kernel

void apply_forward_generator(const TorusEnvironment& env, std::span<const double> q, std::span<double> out) {
  const auto& nb = env.neighbors();
  const int dirs = env.directions();
  for (Site x = 0; x < q.size(); ++x) {
    double in = 0.0;
    for (int dir = 0; dir < dirs; ++dir) {
      const Site y = nb.at(x, dir);
      in += q[y] * env.p(y, (-Direction::from_index(dir)).index());
    }
    out[x] = in - q[x] * env.total_rate(x);
  }
}

int poisson_truncation(double mu, double tol) {
  if (!(tol > 0 && tol < 1)) throw PreconditionError("poisson_truncation: tol must lie in (0,1)");
  if (mu <= 0) return 0;
  // P(X > K) <= P(X >= K+1) <= exp(-mu) (e mu / (K+1))^{K+1} for K+1 > mu.
  const double log_tol = std::log(tol);
  int K = static_cast<int>(std::ceil(mu));
  while (true) {
    const double k1 = K + 1.0;
    const double bound = -mu + k1 * (1.0 + std::log(mu / k1));
    if (bound <= log_tol) return K;
    ++K;
  }
}

namespace {

struct Uniformizer {
  const TorusEnvironment& env;
  double lambda;
  int threads;

  // next = q + Q q / lambda, row by row (no cross-row reductions).
  void step(const std::vector<double>& q, std::vector<double>& next) const {
    const auto& nb = env.neighbors();
    const int dirs = env.directions();
    parallel_for(q.size(), threads, [&](std::size_t b, std::size_t e) {
      for (Site x = b; x < e; ++x) {
        double in = 0.0;
        for (int dir = 0; dir < dirs; ++dir) {
          const Site y = nb.at(x, dir);
          in += q[y] * env.p(y, (-Direction::from_index(dir)).index());
        }
        next[x] = q[x] * (1.0 - env.total_rate(x) / lambda) + in / lambda;
      }
    });
  }

  std::vector<double> evolve(const std::vector<double>& q0, double tau, double tol, int& K) const {
    const double mu = lambda * tau;
    K = poisson_truncation(mu, tol);
    std::vector<double> w(static_cast<std::size_t>(K) + 1);
    double total = 0.0;
    for (int j = 0; j <= K; ++j) {
      w[static_cast<std::size_t>(j)] = mu > 0 ? std::exp(-mu + j * std::log(mu) - std::lgamma(j + 1.0)) : (j == 0);
      total += w[static_cast<std::size_t>(j)];
    }
    // The truncated tail mass goes to the last term, so total mass is exact.
    w.back() += std::max(0.0, 1.0 - total);

    std::vector<double> acc(q0.size(), 0.0), cur = q0, nxt(q0.size());
    for (int j = 0; j <= K; ++j) {
      const double wj = w[static_cast<std::size_t>(j)];
      if (wj > 0) {
        for (std::size_t x = 0; x < acc.size(); ++x) acc[x] += wj * cur[x];
      }
      if (j < K) {
        step(cur, nxt);
        cur.swap(nxt);
      }
    }
    return acc;
  }
};

}  // namespace

HeatKernel heat_kernel_from(const TorusEnvironment& env, std::span<const double> q0, std::span<const double> times,
                            double tail_tol, int threads) {
  if (q0.size() != env.sites()) throw PreconditionError("heat_kernel: initial vector has the wrong size");
  if (!(tail_tol > 0 && tail_tol <= 1e-6)) throw PreconditionError("heat_kernel: tail_tol must lie in (0, 1e-6]");
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < 0) throw PreconditionError("heat_kernel: times must be >= 0");
    if (i > 0 && times[i] <= times[i - 1]) throw PreconditionError("heat_kernel: times must increase");
  }
  HeatKernel hk;
  hk.env_hash = env.hash();
  hk.geometry = env.geometry();
  hk.tail_tol = tail_tol;
  hk.times.assign(times.begin(), times.end());
  for (Site x = 0; x < env.sites(); ++x) hk.lambda = std::max(hk.lambda, env.total_rate(x));

  const Uniformizer U{env, hk.lambda, threads};
  std::vector<double> q(q0.begin(), q0.end());
  double now = 0.0;
  for (const double t : times) {
    int K = 0;
    if (t > now) q = U.evolve(q, t - now, tail_tol, K);
    now = t;
    hk.truncation.push_back(K);
    double mass = 0.0;
    double lo = std::numeric_limits<double>::infinity();
    for (double v : q) {
      mass += v;
      lo = std::min(lo, v);
    }
    hk.max_mass_defect = std::max(hk.max_mass_defect, std::abs(mass - 1.0));
    hk.min_value = hk.q.empty() ? lo : std::min(hk.min_value, lo);
    hk.q.push_back(q);
  }
  return hk;
}

HeatKernel heat_kernel(const TorusEnvironment& env, Site x0, std::span<const double> times, double tail_tol,
                       int threads) {
  if (x0 >= env.sites()) throw PreconditionError("heat_kernel: start site out of range");
  std::vector<double> q0(env.sites(), 0.0);
  q0[x0] = 1.0;
  return heat_kernel_from(env, q0, times, tail_tol, threads);
}

// ---------------------------------------------------------------------------
// Environment-process averages

TimeAverage environment_average(const TorusEnvironment& env, std::span<const double> observable, double t,
                                std::uint64_t seed, std::size_t n, int threads) {
  if (observable.size() != env.sites()) throw PreconditionError("environment_average: observable size mismatch");
  if (!(t > 0) || n == 0) throw PreconditionError("environment_average: need t > 0 and n > 0");
  std::vector<double> per_walk(n);
  parallel_for(n, threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t w = b; w < e; ++w) {
      // The start site is drawn from its own stream so the walk stream is untouched.
      CounterRng pick(seed, streams::kSelfTest + w);
      const Site x0 = static_cast<Site>(pick.next_u64() % env.sites());
      Walker walker(env, x0, seed, w);
      double integral = 0.0;
      walker.advance_to(t, [&](Site x, double dwell) { integral += observable[x] * dwell; });
      per_walk[w] = integral / t;
    }
  });
  TimeAverage r;
  r.walks = n;
  r.horizon = t;
  r.estimate = torus_mean(per_walk);
  double var = 0.0;
  for (double v : per_walk) var += (v - r.estimate) * (v - r.estimate);
  r.standard_error = n > 1 ? std::sqrt(var / static_cast<double>(n - 1) / static_cast<double>(n)) : 0.0;
  r.torus_mean = torus_mean(observable);
  return r;
}

std::vector<double> tensor_moment_observable(const TorusEnvironment& env, double eps) {
  const auto& h = env.stream_tensor();
  const int dirs = env.directions();
  std::vector<double> out(env.sites(), 0.0);
  for (Site x = 0; x < env.sites(); ++x) {
    for (int a = 0; a < dirs; ++a) {
      double s = env.s_upper();
      if (env.geometry().dim() >= 2) {
        for (int b = 0; b < dirs; ++b) s += std::abs(h.component(x, Direction::from_index(a), Direction::from_index(b)));
      }
      out[x] += std::pow(s, 2.0 + eps);
    }
  }
  return out;
}

}  // namespace dsre

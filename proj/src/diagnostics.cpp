#include "dsre/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dsre/error.hpp"
#include "dsre/util.hpp"

namespace dsre {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double euclidean(const Coord& c, int d) {
  double s = 0.0;
  for (int i = 0; i < d; ++i) s += static_cast<double>(c[static_cast<std::size_t>(i)] * c[static_cast<std::size_t>(i)]);
  return std::sqrt(s);
}

double least_squares_slope(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxx > 0 ? sxy / sxx : 0.0;
}

double exact_entropy_production(const TorusEnvironment& env, std::span<const double> q) {
  std::vector<double> dq(q.size());
  apply_forward_generator(env, q, dq);
  double s = 0.0;
  for (std::size_t x = 0; x < q.size(); ++x) {
    if (q[x] > 0) s -= dq[x] * std::log(q[x]);
  }
  return s;
}

}  // namespace

json Verdict::to_json() const {
  json j{{"check", check}, {"pass", pass}, {"statistic", nullable(statistic)}, {"threshold", nullable(threshold)},
         {"t_wrap", nullable(t_wrap)}};
  if (!note.empty()) j["note"] = note;
  return j;
}

double wrap_time(const TorusGeometry& g, double s_upper) {
  const double r = g.side() / 4.0;
  return r * r / (4.0 * g.dim() * s_upper);
}

// ---------------------------------------------------------------------------
// Nash functionals

double entropy_constant_function(double beta) {
  if (!(beta > 1)) throw PreconditionError("entropy_constant_function: beta must exceed 1");
  const double u = beta - 1.0;
  return (beta + 1.0) * (u - std::log1p(u)) / (u * u);
}

Minimum entropy_constant_b(double tol) {
  // Coarse log-spaced scan to bracket the minimum, then golden section.
  double best_beta = 2.0, best = entropy_constant_function(2.0);
  const int scan = 400;
  std::vector<double> grid(scan);
  for (int i = 0; i < scan; ++i) grid[static_cast<std::size_t>(i)] = 1.0 + std::pow(10.0, -4.0 + 8.0 * i / (scan - 1));
  std::size_t at = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double v = entropy_constant_function(grid[i]);
    if (v < best) {
      best = v;
      best_beta = grid[i];
      at = i;
    }
  }
  double a = at > 0 ? grid[at - 1] : 1.0 + 1e-6;
  double b = at + 1 < grid.size() ? grid[at + 1] : best_beta * 2.0;
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - invphi * (b - a), d = a + invphi * (b - a);
  double fc = entropy_constant_function(c), fd = entropy_constant_function(d);
  Minimum m;
  while (b - a > tol * std::max(1.0, std::abs(c))) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = entropy_constant_function(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = entropy_constant_function(d);
    }
    ++m.iterations;
  }
  m.argmin = 0.5 * (a + b);
  m.value = entropy_constant_function(m.argmin);
  return m;
}

double fisher_form(const TorusGeometry& g, std::span<const double> q) {
  const NeighborTable nb(g);
  double s = 0.0;
  for (Site x = 0; x < q.size(); ++x) {
    if (q[x] <= 0) continue;
    for (int dir = 0; dir < g.directions(); ++dir) {
      const double a = q[nb.at(x, dir)];
      const double r = (a - q[x]) / (a + q[x]);
      s += r * r * q[x];
    }
  }
  return s;
}

double shannon_entropy(std::span<const double> q) {
  double h = 0.0;
  for (double v : q) {
    if (v > 0) h -= v * std::log(v);
  }
  return h;
}

NashReport nash_functionals(const TorusEnvironment& env, const HeatKernel& hk) {
  if (hk.env_hash != env.hash()) throw PreconditionError("nash_functionals: heat kernel belongs to another environment");
  const auto& g = hk.geometry;
  const int d = g.dim();
  NashReport r;
  r.d = d;
  r.t_wrap = wrap_time(g, env.s_upper());

  // Start site: the argmax of q at the first time (the kernel starts from a point mass).
  Site x0 = 0;
  if (!hk.q.empty()) {
    const auto& q0 = hk.q.front();
    x0 = static_cast<Site>(std::max_element(q0.begin(), q0.end()) - q0.begin());
  }
  std::vector<double> dist(g.sites());
  for (Site x = 0; x < g.sites(); ++x) dist[x] = euclidean(g.min_image(x0, x), d);

  double max_d = 0.0;
  for (std::size_t i = 0; i < hk.times.size(); ++i) {
    const double t = hk.times[i];
    if (t > r.t_wrap) {
      r.truncated_to_wrap = true;
      continue;
    }
    const auto& q = hk.q[i];
    double m = 0.0;
    for (Site x = 0; x < q.size(); ++x) m += dist[x] * q[x];
    const double qmax = *std::max_element(q.begin(), q.end());
    r.times.push_back(t);
    r.M.push_back(m);
    r.H.push_back(shannon_entropy(q));
    r.F.push_back(fisher_form(g, q));
    r.D.push_back(std::pow(t, d / 2.0) * qmax);
    r.hdot_exact.push_back(exact_entropy_production(env, q));
    if (t > 0) max_d = std::max(max_d, r.D.back());
  }
  r.c2hat = max_d > 0 ? std::log(max_d) / d : 0.0;
  r.c1hat = kNaN;
  for (std::size_t i = 0; i < r.times.size(); ++i) {
    const double t = r.times[i];
    r.G.push_back(t > 0 ? r.H[i] / d - 0.5 * std::log(t) + r.c2hat : kNaN);
    if (r.M[i] > 1.0) {
      r.entropy_ratio.push_back(r.M[i] * std::exp(-r.H[i] / d));
      r.c1hat = std::isnan(r.c1hat) ? r.entropy_ratio.back() : std::min(r.c1hat, r.entropy_ratio.back());
    } else {
      r.entropy_ratio.push_back(kNaN);
    }
  }
  return r;
}

std::vector<double> stencil_grid(std::span<const double> centers, double rel_step) {
  if (!(rel_step > 0 && rel_step < 0.5)) throw PreconditionError("stencil_grid: rel_step must lie in (0, 0.5)");
  std::vector<double> out;
  for (double t : centers) {
    if (!(t > 0)) throw PreconditionError("stencil_grid: centers must be positive");
    const double h = rel_step * t;
    for (int j = -2; j <= 2; ++j) out.push_back(t + j * h);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

EntropyProductionSeries entropy_production_check(const TorusEnvironment& env, Site x0,
                                                 std::span<const double> centers, double b, double rel_step,
                                                 double tail_tol, int threads) {
  EntropyProductionSeries s;
  s.t_wrap = wrap_time(env.geometry(), env.s_upper());
  s.constant = b * env.s_lower();
  std::vector<double> kept;
  for (double t : centers) {
    if (t <= s.t_wrap) kept.push_back(t);
  }
  if (kept.empty()) throw PreconditionError("entropy_production_check: no grid time below t_wrap");
  const std::vector<double> grid = stencil_grid(kept, rel_step);
  const HeatKernel hk = heat_kernel(env, x0, grid, tail_tol, threads);
  auto index_of = [&](double t) {
    const auto it = std::lower_bound(grid.begin(), grid.end(), t);
    return static_cast<std::size_t>(it - grid.begin());
  };
  auto entropy_at = [&](double t) { return shannon_entropy(hk.q[index_of(t)]); };

  s.min_margin = std::numeric_limits<double>::infinity();
  s.min_ratio = std::numeric_limits<double>::infinity();
  std::string worst_note;
  for (double t : kept) {
    const double h = rel_step * t;
    const double d1 = (entropy_at(t + h) - entropy_at(t - h)) / (2 * h);
    const double d2 = (entropy_at(t + 2 * h) - entropy_at(t - 2 * h)) / (4 * h);
    const double hdot = (4 * d1 - d2) / 3;
    const double err = std::abs(d1 - d2);
    const auto& q = hk.q[index_of(t)];
    const double F = fisher_form(env.geometry(), q);
    if (err > 0.1 * s.constant * F) {
      throw PreconditionError("entropy_production_check: grid too coarse at t = " + std::to_string(t) +
                              " (differencing error " + std::to_string(err) + ")");
    }
    s.times.push_back(t);
    s.hdot.push_back(hdot);
    s.hdot_error.push_back(err);
    s.hdot_exact.push_back(exact_entropy_production(env, q));
    s.fisher.push_back(F);
    s.ratio.push_back(F > 0 ? hdot / (env.s_lower() * F) : std::numeric_limits<double>::infinity());
    s.min_margin = std::min(s.min_margin, hdot - s.constant * F + 2 * err);
    s.min_ratio = std::min(s.min_ratio, s.ratio.back());
  }
  s.verdict.check = "entropy_production";
  s.verdict.pass = s.min_margin >= 0;
  s.verdict.statistic = s.min_ratio;
  s.verdict.threshold = b;
  s.verdict.t_wrap = s.t_wrap;
  s.verdict.note = "statistic = min Hdot/(s_* F); pass iff Hdot >= b s_* F - 2 err on every grid time";
  return s;
}

MomentBound moment_bound_check(const NashReport& report, double eps, double hstar) {
  if (!(eps > 0)) throw PreconditionError("moment_bound_check: eps must be positive");
  MomentBound mb;
  mb.eps = eps;
  mb.hstar = hstar;
  const double expo = -(1.0 + eps) / (2.0 + eps);
  for (std::size_t i = 0; i < report.times.size(); ++i) {
    const double t = report.times[i];
    if (t < 1.0 || t > report.t_wrap) continue;
    const double sm = report.M[i] / std::sqrt(t);
    mb.times.push_back(t);
    mb.scaled_moment.push_back(sm);
    mb.rho.push_back(sm * std::pow(report.G[i] + 1.0 / eps, expo));
  }
  const std::size_t n = mb.times.size();
  if (n < 8) throw PreconditionError("moment_bound_check: need at least 8 grid times in [1, t_wrap]");
  mb.c4hat = *std::max_element(mb.rho.begin(), mb.rho.end());
  // Middle half of the grid indices vs the last quarter.
  const std::size_t m0 = n / 4, m1 = n - n / 4, l0 = n - n / 4;
  auto mean = [&](std::size_t a, std::size_t b) {
    return std::accumulate(mb.scaled_moment.begin() + static_cast<long>(a), mb.scaled_moment.begin() + static_cast<long>(b),
                           0.0) /
           static_cast<double>(b - a);
  };
  mb.middle_mean = mean(m0, m1);
  mb.late_mean = mean(l0, n);
  mb.verdict.check = "moment_bound";
  mb.verdict.statistic = mb.late_mean / mb.middle_mean;
  mb.verdict.threshold = 1.1;
  mb.verdict.pass = std::isfinite(mb.c4hat) && mb.verdict.statistic <= 1.1;
  mb.verdict.t_wrap = report.t_wrap;
  mb.verdict.note = "statistic = last-quarter mean / middle-half mean of t^{-1/2} M(t)";
  return mb;
}

// ---------------------------------------------------------------------------
// CLT statistics

double normal_cdf(double x, double sigma) { return 0.5 * std::erfc(-x / (sigma * std::sqrt(2.0))); }

double ks_statistic(std::vector<double> samples, double sigma) {
  if (!(sigma > 0)) throw PreconditionError("ks_statistic: sigma must be positive");
  if (samples.empty()) return 0.0;
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double F = normal_cdf(samples[i], sigma);
    d = std::max({d, (i + 1) / n - F, F - i / n});
  }
  return d;
}

json CltReport::to_json() const {
  json cov = json::array();
  for (Eigen::Index i = 0; i < covariance.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < covariance.cols(); ++j) row.push_back(covariance(i, j));
    cov.push_back(row);
  }
  return {{"samples", samples},      {"ks", ks},
          {"ks_critical", ks_critical}, {"ks_threshold", ks_threshold},
          {"covariance", cov},        {"cov_rel_error", cov_rel_error},
          {"cov_tolerance", cov_tolerance}, {"ks_pass", ks_pass},
          {"cov_pass", cov_pass},     {"pass", pass}};
}

CltReport clt_test(const std::vector<std::vector<double>>& samples, const Eigen::MatrixXd& sigma2,
                   const CltOptions& opts) {
  const std::size_t n = samples.size();
  const auto d = sigma2.rows();
  if (sigma2.cols() != d) throw PreconditionError("clt_test: sigma2 must be square");
  if (n < opts.min_samples) {
    throw PreconditionError("clt_test: need at least " + std::to_string(opts.min_samples) + " samples, got " +
                            std::to_string(n));
  }
  for (const auto& row : samples) {
    if (static_cast<Eigen::Index>(row.size()) != d) throw PreconditionError("clt_test: sample dimension mismatch");
  }
  CltReport r;
  r.samples = n;
  r.ks_critical = 1.63 / std::sqrt(static_cast<double>(n));
  r.ks_threshold = opts.ks_threshold > 0 ? opts.ks_threshold : r.ks_critical;
  r.cov_tolerance = opts.cov_tolerance;

  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), d);
  for (std::size_t w = 0; w < n; ++w) {
    for (Eigen::Index i = 0; i < d; ++i) X(static_cast<Eigen::Index>(w), i) = samples[w][static_cast<std::size_t>(i)];
  }
  r.ks_pass = true;
  for (Eigen::Index i = 0; i < d; ++i) {
    if (!(sigma2(i, i) > 0)) {
      if (X.col(i).cwiseAbs().maxCoeff() > 0) throw PreconditionError("clt_test: degenerate sigma2 with nonzero samples");
      r.ks.push_back(0.0);
      continue;
    }
    const Eigen::VectorXd c = X.col(i);
    r.ks.push_back(ks_statistic(std::vector<double>(c.data(), c.data() + c.size()), std::sqrt(sigma2(i, i))));
    r.ks_pass = r.ks_pass && r.ks.back() < r.ks_threshold;
  }
  r.mean = X.colwise().mean().transpose();
  const Eigen::MatrixXd centered = X.rowwise() - r.mean.transpose();
  r.covariance = centered.transpose() * centered / static_cast<double>(n - 1);
  const double denom = sigma2.jacobiSvd().singularValues()(0);
  r.cov_rel_error = (r.covariance - sigma2).jacobiSvd().singularValues()(0) / denom;
  r.cov_pass = r.cov_rel_error < r.cov_tolerance;
  r.pass = r.ks_pass && r.cov_pass;
  return r;
}

// ---------------------------------------------------------------------------
// Total variation

double tv_band(std::size_t cells, std::size_t n, double delta) {
  if (n == 0) throw PreconditionError("tv_band: need samples");
  const double lam = std::sqrt(2.0 * (static_cast<double>(cells) * std::log(2.0) + std::log(1.0 / delta)) /
                               static_cast<double>(n));
  return lam / 2.0;
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw PreconditionError("total_variation: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

// ---------------------------------------------------------------------------
// Sublinearity

SublinearityProfile sublinearity_profile(int d, const std::function<double(const Coord&)>& psi,
                                         std::vector<int> radii, std::span<const double> eps, BoxShape shape,
                                         int period) {
  if (d < 1 || d > kMaxDim) throw PreconditionError("sublinearity_profile: bad dimension");
  SublinearityProfile p;
  p.eps.assign(eps.begin(), eps.end());
  std::sort(radii.begin(), radii.end());
  for (int& R : radii) {
    if (R < 1) throw PreconditionError("sublinearity_profile: radii must be >= 1");
    if (period > 0 && 2 * R > period) {
      R = period / 2;
      p.clipped = true;
    }
  }
  radii.erase(std::unique(radii.begin(), radii.end()), radii.end());
  p.radii = radii;

  for (int R : radii) {
    const long lo = shape == BoxShape::cube ? 0 : -R;
    const long hi = shape == BoxShape::cube ? R - 1 : R;
    const long side = hi - lo + 1;
    long count = 1;
    for (int i = 0; i < d; ++i) count *= side;
    double sum = 0.0;
    std::vector<double> over(eps.size(), 0.0);
    for (long idx = 0; idx < count; ++idx) {
      Coord c{};
      long rem = idx;
      for (int i = d - 1; i >= 0; --i) {
        c[static_cast<std::size_t>(i)] = lo + rem % side;
        rem /= side;
      }
      const double v = std::abs(psi(c));
      sum += v;
      for (std::size_t e = 0; e < eps.size(); ++e) {
        if (v > eps[e] * R) over[e] += 1.0;
      }
    }
    p.S.push_back(sum / std::pow(R, d + 1));
    for (double& o : over) o /= std::pow(R, d);
    p.W.push_back(over);
  }

  p.strictly_decreasing = p.S.size() >= 2;
  for (std::size_t i = 1; i < p.S.size(); ++i) p.strictly_decreasing = p.strictly_decreasing && p.S[i] < p.S[i - 1];
  std::vector<double> lr, ls;
  bool all_positive = true;
  for (std::size_t i = 0; i < p.S.size(); ++i) {
    lr.push_back(std::log(p.radii[i]));
    ls.push_back(p.S[i] > 0 ? std::log(p.S[i]) : 0.0);
    all_positive = all_positive && p.S[i] > 0;
  }
  p.slope = (all_positive && p.S.size() >= 2) ? least_squares_slope(lr, ls) : 0.0;
  p.verdict.check = "sublinearity";
  p.verdict.statistic = p.slope;
  p.verdict.threshold = 0.0;
  const bool identically_zero = std::all_of(p.S.begin(), p.S.end(), [](double v) { return v == 0.0; });
  p.verdict.pass = identically_zero || (p.S.size() >= 2 && p.S.back() < p.S.front() && p.slope < 0);
  p.verdict.t_wrap = kNaN;
  if (identically_zero) p.verdict.note = "identically zero cocycle";
  if (p.clipped) p.verdict.note += std::string(p.verdict.note.empty() ? "" : "; ") + "radii clipped to period/2";
  return p;
}

}  // namespace dsre

#include "dsre/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>

#include "dsre/diagnostics.hpp"
#include "dsre/dynamics.hpp"
#include "dsre/error.hpp"
#include "dsre/field_io.hpp"
#include "dsre/util.hpp"

namespace dsre {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

/// Disagreement between stages (e.g. a dump written for another environment).
class StaleStateError : public Error {
 public:
  using Error::Error;
};

template <class T>
T get_as(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw PreconditionError(path + ": wrong type");
  }
}

std::vector<double> increasing_times(const json& j, const std::string& path, bool allow_zero) {
  if (!j.is_array() || j.empty()) throw PreconditionError(path + ": expected a non-empty array of times");
  std::vector<double> t;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string at = path + "[" + std::to_string(i) + "]";
    const double v = get_as<double>(j[i], at);
    if (!(allow_zero ? v >= 0 : v > 0)) throw PreconditionError(at + ": time out of range");
    if (!t.empty() && v <= t.back()) throw PreconditionError(at + ": times must increase");
    t.push_back(v);
  }
  return t;
}

void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw PreconditionError(path + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw PreconditionError(path + "." + key + ": unknown key");
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class Csv {
 public:
  Csv(const fs::path& p, const std::vector<std::string>& header) : out_(p) {
    if (!out_) throw Error("cannot write " + p.string());
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << '\n';
  }
  template <class... Ts>
  void row(const Ts&... cells) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cell(cells), first = false), ...);
    out_ << '\n';
  }

 private:
  static std::string cell(double v) { return std::isfinite(v) ? fmt(v) : ""; }
  static std::string cell(std::size_t v) { return std::to_string(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(const std::string& s) { return s; }
  std::ofstream out_;
};

json matrix_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(row);
  }
  return a;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

std::vector<double> log_grid(double lo, double hi, int n) {
  std::vector<double> t;
  for (int i = 0; i < n; ++i) t.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1)));
  return t;
}

// ---------------------------------------------------------------------------

class Run {
 public:
  Run(ExperimentConfig cfg, fs::path outdir, int threads)
      : cfg_(std::move(cfg)), out_(std::move(outdir)), threads_(std::max(1, threads)) {}

  void stage(const std::string& name) {
    static const std::map<std::string, void (Run::*)()> table{
        {"gen-env", &Run::gen_env},       {"solve-corrector", &Run::solve_corrector_stage},
        {"heat-kernel", &Run::heat_kernel_stage}, {"simulate", &Run::simulate},
        {"verify-clt", &Run::verify_clt}, {"nash-diag", &Run::nash_diag}};
    if (name == "full") {
      for (const char* s : {"gen-env", "solve-corrector", "heat-kernel", "simulate", "verify-clt", "nash-diag"}) stage(s);
      return;
    }
    const auto it = table.find(name);
    if (it == table.end()) throw PreconditionError("unknown subcommand '" + name + "'");
    if (done_.count(name)) return;
    const auto t0 = std::chrono::steady_clock::now();
    (this->*(it->second))();
    timings_[name] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    done_.insert(name);
  }

  const std::vector<Verdict>& verdicts() const { return verdicts_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  const std::map<std::string, double>& timings() const { return timings_; }
  std::optional<std::uint64_t> env_hash() const {
    return env_ ? std::optional<std::uint64_t>(env_->hash()) : std::nullopt;
  }
  const json& extra() const { return extra_; }

 private:
  // --- dependencies -------------------------------------------------------

  const TorusEnvironment& env() {
    if (env_) return *env_;
    TorusEnvironment fresh = make_environment(cfg_.environment);
    const fs::path stem = out_ / "env";
    if (fs::exists(fs::path(stem).concat(".json"))) {
      TorusEnvironment stored = read_environment(stem);
      if (stored.hash() != fresh.hash()) {
        throw StaleStateError("stale environment dump in " + out_.string() + " (hash " + hex64(stored.hash()) +
                              ", config gives " + hex64(fresh.hash()) + "); rerun gen-env");
      }
    } else {
      write_environment(stem, fresh);
    }
    env_ = std::move(fresh);
    return *env_;
  }

  const CorrectorSolution& corrector() {
    if (corr_) return *corr_;
    const TorusEnvironment& e = env();
    const fs::path stem = out_ / "corrector";
    if (!fs::exists(fs::path(stem).concat(".json"))) {
      stage("solve-corrector");
      return *corr_;
    }
    const FieldDump dump = read_field_dump(stem);
    if (dump.meta.value("env_hash", "") != hex64(e.hash())) {
      throw StaleStateError("stale corrector dump in " + out_.string() + "; rerun solve-corrector");
    }
    CorrectorSolution sol;
    sol.target = CorrectorTarget::drift;
    sol.geometry = e.geometry();
    sol.env_hash = e.hash();
    sol.tol = cfg_.solver.tol;
    for (int i = 0; i < e.geometry().dim(); ++i) {
      const std::string name = "chi_" + std::to_string(i + 1);
      std::size_t c = 0;
      while (c < dump.components.size() && dump.components[c] != name) ++c;
      if (c == dump.components.size()) throw Error(stem.string() + ": missing component " + name);
      ScalarField chi{e.geometry(), dump.data[c], true};
      sol.theta.push_back(grad_full(chi));
      sol.chi.push_back(std::move(chi));
    }
    const DriftFields df = drift_fields(e);
    for (int i = 0; i < e.geometry().dim(); ++i) {
      const auto comp = df.phistar_component(i);
      sol.phi.push_back(ScalarField{e.geometry(), std::vector<double>(comp.begin(), comp.end()), true});
    }
    for (std::size_t i = 0; i < sol.components(); ++i) {
      const ScalarField lchi = bare_generator(e, sol.chi[i]);
      double res = 0.0;
      for (Site x = 0; x < e.sites(); ++x) res = std::max(res, std::abs(lchi.values[x] - sol.phi[i].values[x]));
      sol.residual = std::max(sol.residual, res);
    }
    sol.sigma2 = effective_covariance(e, sol).conductance_weighted;
    if (e.provenance()) sol.seed = e.provenance()->seed;
    corr_ = std::move(sol);
    return *corr_;
  }

  void add(Verdict v) { verdicts_.push_back(std::move(v)); }

  // --- stages -------------------------------------------------------------

  void gen_env() {
    TorusEnvironment e = make_environment(cfg_.environment);
    write_environment(out_ / "env", e);
    const ValidationReport& r = e.report();
    Verdict v;
    v.check = "environment_invariants";
    v.statistic = std::max({r.max_bistochastic_defect, r.max_divergence, r.max_skew_defect, r.max_mean_flow});
    v.threshold = 1e-12;
    v.pass = v.statistic < v.threshold && r.min_conductance >= 1.0 && r.min_rate >= 0.0;
    v.note = "max of double-stochasticity, divergence, skew and mean-flow defects";
    add(v);
    extra_["environment"] = {{"validation", r.to_json()},
                             {"hstar", e.stream_tensor().hstar()},
                             {"h_minus_one", h_minus_one_report(e).value},
                             {"s_upper", e.s_upper()}};
    env_ = std::move(e);
  }

  void solve_corrector_stage() {
    const TorusEnvironment& e = env();
    SolverOptions o = cfg_.solver;
    o.threads = threads_;
    CorrectorSolution sol = solve_drift_corrector(e, o);
    write_corrector(out_ / "corrector", sol);
    double scale = 1.0;
    for (const auto& p : sol.phi) scale = std::max(scale, max_abs(p.values));
    Verdict res{"corrector_residual", sol.residual <= o.tol * scale, sol.residual, o.tol * scale, 0.0,
                "max_x |sum_k p_k theta_k - phi*|"};
    add(res);
    const double min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sol.sigma2).eigenvalues().minCoeff();
    add(Verdict{"sigma2_positive_definite", min_eig > 0, min_eig, 0.0, 0.0, "minimum eigenvalue of sigma2"});
    extra_["sigma2"] = matrix_json(sol.sigma2);
    corr_ = std::move(sol);
  }

  void heat_kernel_stage() {
    const TorusEnvironment& e = env();
    std::vector<double> times = cfg_.heat_kernel.times;
    if (times.empty()) times = log_grid(0.1, std::max(0.2, wrap_time(e.geometry(), e.s_upper())), 30);
    if (cfg_.heat_kernel.x0 >= e.sites()) throw PreconditionError("heat_kernel.x0: site out of range");
    const HeatKernel hk = heat_kernel(e, cfg_.heat_kernel.x0, times, cfg_.heat_kernel.tail_tol, threads_);
    FieldDump dump;
    dump.geometry = e.geometry();
    for (std::size_t i = 0; i < hk.times.size(); ++i) {
      dump.components.push_back("q_" + std::to_string(i));
      dump.data.push_back(hk.q[i]);
    }
    dump.meta = {{"kind", "heat_kernel"},
                 {"times", hk.times},
                 {"lambda", hk.lambda},
                 {"truncation", hk.truncation},
                 {"tail_tol", hk.tail_tol},
                 {"x0", cfg_.heat_kernel.x0},
                 {"env_hash", hex64(e.hash())},
                 {"seed", cfg_.environment.seed}};
    write_field_dump(out_ / "heat_kernel", dump);
    Csv csv(out_ / "heat_kernel.csv", {"t", "site", "q"});
    for (std::size_t i = 0; i < hk.times.size(); ++i) {
      for (Site x = 0; x < e.sites(); ++x) csv.row(hk.times[i], x, hk.q[i][x]);
    }
    add(Verdict{"heat_kernel_mass", hk.max_mass_defect < 1e-12 && hk.min_value >= -1e-15, hk.max_mass_defect, 1e-12,
                0.0, "max |sum_x q(t,x) - 1| over the grid; q >= 0 also required"});
  }

  void simulate() {
    const TorusEnvironment& e = env();
    const CorrectorSolution& c = corrector();
    const auto& s = cfg_.simulation;
    if (s.x0 >= e.sites()) throw PreconditionError("simulation.x0: site out of range");
    samples_ = sample_displacements(e, &c, s.times, s.n_walks, s.seed, s.x0, threads_);
    std::vector<std::string> header{"t", "sample"};
    for (int i = 0; i < e.geometry().dim(); ++i) header.push_back("x" + std::to_string(i + 1));
    for (int i = 0; i < e.geometry().dim(); ++i) header.push_back("y" + std::to_string(i + 1));
    std::ofstream out(out_ / "samples.csv");
    if (!out) throw Error("cannot write samples.csv");
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
    for (std::size_t ti = 0; ti < samples_->times.size(); ++ti) {
      for (std::size_t w = 0; w < samples_->n_walks; ++w) {
        out << fmt(samples_->times[ti]) << ',' << w;
        for (int i = 0; i < samples_->d; ++i) out << ',' << fmt(samples_->raw_at(ti, w, i));
        for (int i = 0; i < samples_->d; ++i) out << ',' << fmt(samples_->corrected_at(ti, w, i));
        out << '\n';
      }
    }
    if (samples_->wrap_warning) {
      warnings_.push_back("max |X(t)|/N = " + fmt(samples_->max_wrap_ratio) +
                          " exceeds 0.25; unwrapped statistics may be affected by wrapping");
    }
    extra_["simulation"] = {{"max_wrap_ratio", samples_->max_wrap_ratio}, {"n_walks", s.n_walks}};
  }

  void verify_clt() {
    const CorrectorSolution& c = corrector();
    if (!samples_) stage("simulate");
    CltOptions o;
    o.ks_threshold = cfg_.diagnostics.ks_threshold;
    o.cov_tolerance = cfg_.diagnostics.cov_tolerance;
    json reports = json::array();
    for (std::size_t ti = 0; ti < samples_->times.size(); ++ti) {
      const CltReport raw = clt_test(samples_->slice(ti, false), c.sigma2, o);
      const CltReport cor = clt_test(samples_->slice(ti, true), c.sigma2, o);
      reports.push_back({{"t", samples_->times[ti]}, {"raw", raw.to_json()}, {"corrected", cor.to_json()}});
      if (ti + 1 == samples_->times.size()) {
        double ks = 0.0;
        for (double k : cor.ks) ks = std::max(ks, k);
        add(Verdict{"clt_ks", cor.ks_pass, ks, cor.ks_threshold, 0.0,
                    "max per-coordinate KS of t^{-1/2} Y*(t) at the last time"});
        add(Verdict{"clt_covariance", cor.cov_pass, cor.cov_rel_error, cor.cov_tolerance, 0.0,
                    "spectral-norm relative error of the empirical covariance"});
      }
    }
    write_json(out_ / "clt.json", {{"sigma2", matrix_json(c.sigma2)}, {"reports", reports}});
  }

  void nash_diag() {
    const TorusEnvironment& e = env();
    const auto& dg = cfg_.diagnostics;
    const double t_wrap = wrap_time(e.geometry(), e.s_upper());
    const double b = std::isnan(dg.entropy_constant) ? entropy_constant_b().value : dg.entropy_constant;
    if (!(t_wrap > 0.1)) throw PreconditionError("nash-diag: torus too small (t_wrap <= 0.1)");
    const std::vector<double> centers = log_grid(0.1, t_wrap, 30);
    const HeatKernel hk = heat_kernel(e, cfg_.heat_kernel.x0, centers, cfg_.heat_kernel.tail_tol, threads_);
    const NashReport nr = nash_functionals(e, hk);
    const EntropyProductionSeries ep =
        entropy_production_check(e, cfg_.heat_kernel.x0, centers, b, dg.entropy_rel_step, 1e-14, threads_);

    {
      Csv csv(out_ / "nash.csv", {"t", "M", "H", "G", "Hdot", "F", "D", "entropy_ratio", "Hdot_over_sF"});
      for (std::size_t i = 0; i < nr.times.size(); ++i) {
        const double ratio = nr.F[i] > 0 ? nr.hdot_exact[i] / (e.s_lower() * nr.F[i]) : std::nan("");
        csv.row(nr.times[i], nr.M[i], nr.H[i], nr.G[i], nr.hdot_exact[i], nr.F[i], nr.D[i], nr.entropy_ratio[i], ratio);
      }
    }
    {
      Csv csv(out_ / "entropy_production.csv", {"t", "Hdot", "Hdot_error", "Hdot_exact", "F", "ratio"});
      for (std::size_t i = 0; i < ep.times.size(); ++i) {
        csv.row(ep.times[i], ep.hdot[i], ep.hdot_error[i], ep.hdot_exact[i], ep.fisher[i], ep.ratio[i]);
      }
    }
    add(ep.verdict);

    bool monotone = true;
    for (std::size_t i = 1; i < nr.H.size(); ++i) monotone = monotone && nr.H[i] >= nr.H[i - 1] - 1e-12;
    add(Verdict{"entropy_nondecreasing", monotone, 0.0, 0.0, t_wrap, "H(t) nondecreasing on the grid"});
    if (!std::isnan(nr.c1hat)) {
      add(Verdict{"entropy_ratio_floor", nr.c1hat > 0, nr.c1hat, 0.0, t_wrap, "min M e^{-H/d} over M > 1"});
    }
    std::size_t in_range = 0;
    for (double t : nr.times) in_range += (t >= 1.0 && t <= t_wrap);
    if (in_range >= 8) {
      const MomentBound mb = moment_bound_check(nr, dg.eps, e.stream_tensor().hstar());
      add(mb.verdict);
      extra_["c4hat"] = mb.c4hat;
    } else {
      warnings_.push_back("moment bound skipped: fewer than 8 grid times in [1, t_wrap]");
    }
    extra_["nash"] = {{"c1hat", std::isnan(nr.c1hat) ? json(nullptr) : json(nr.c1hat)},
                      {"c2hat", nr.c2hat},
                      {"entropy_constant", b},
                      {"t_wrap", t_wrap}};

    const CorrectorSolution& c = corrector();
    Csv csv(out_ / "sublinearity.csv", {"component", "R", "S"});
    for (std::size_t comp = 0; comp < c.components(); ++comp) {
      const auto& chi = c.chi[comp].values;
      const auto& g = e.geometry();
      const auto psi = [&](const Coord& x) { return chi[g.site(x)] - chi[0]; };
      const SublinearityProfile sp =
          sublinearity_profile(g.dim(), psi, dg.radii, dg.sublinearity_eps, BoxShape::cube, g.side());
      for (std::size_t i = 0; i < sp.radii.size(); ++i) csv.row(comp + 1, sp.radii[i], sp.S[i]);
      Verdict v = sp.verdict;
      v.check = "sublinearity_" + std::to_string(comp + 1);
      add(v);
    }
  }

  ExperimentConfig cfg_;
  fs::path out_;
  int threads_;
  std::optional<TorusEnvironment> env_;
  std::optional<CorrectorSolution> corr_;
  std::optional<DisplacementSamples> samples_;
  std::vector<Verdict> verdicts_;
  std::vector<std::string> warnings_;
  std::map<std::string, double> timings_;
  std::set<std::string> done_;
  json extra_ = json::object();
};

json inventory(const fs::path& dir) {
  json files = json::array();
  std::vector<fs::path> paths;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().filename() != "manifest.json") paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end());
  for (const auto& p : paths) {
    files.push_back({{"path", fs::relative(p, dir).generic_string()},
                     {"bytes", fs::file_size(p)},
                     {"fnv1a64", hex64(file_hash(p))}});
  }
  return files;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  check_keys(j, "$", {"format_version", "environment", "solver", "simulation", "heat_kernel", "diagnostics",
                      "output_dir"});
  ExperimentConfig c;
  c.source = j;
  if (!j.contains("format_version")) throw PreconditionError("$.format_version: missing");
  c.format_version = get_as<int>(j.at("format_version"), "$.format_version");
  if (c.format_version != kConfigFormatVersion) {
    throw PreconditionError("$.format_version: expected " + std::to_string(kConfigFormatVersion));
  }
  if (!j.contains("environment")) throw PreconditionError("$.environment: missing");
  c.environment = GeneratorSpec::from_json(j.at("environment"), "$.environment");
  if (j.contains("solver")) c.solver = SolverOptions::from_json(j.at("solver"), "$.solver");
  if (j.contains("simulation")) {
    const json& s = j.at("simulation");
    check_keys(s, "$.simulation", {"times", "n_walks", "seed", "x0"});
    if (s.contains("times")) c.simulation.times = increasing_times(s.at("times"), "$.simulation.times", false);
    if (s.contains("n_walks")) {
      const long n = get_as<long>(s.at("n_walks"), "$.simulation.n_walks");
      if (n < 0) throw PreconditionError("$.simulation.n_walks: must be >= 0");
      c.simulation.n_walks = static_cast<std::size_t>(n);
    }
    if (!s.contains("seed")) throw PreconditionError("$.simulation.seed: missing (seeds must be explicit)");
    c.simulation.seed = get_as<std::uint64_t>(s.at("seed"), "$.simulation.seed");
    if (s.contains("x0")) c.simulation.x0 = get_as<std::size_t>(s.at("x0"), "$.simulation.x0");
  } else {
    c.simulation.seed = c.environment.seed;
  }
  if (j.contains("heat_kernel")) {
    const json& h = j.at("heat_kernel");
    check_keys(h, "$.heat_kernel", {"times", "tail_tol", "x0"});
    if (h.contains("times")) c.heat_kernel.times = increasing_times(h.at("times"), "$.heat_kernel.times", true);
    if (h.contains("tail_tol")) {
      c.heat_kernel.tail_tol = get_as<double>(h.at("tail_tol"), "$.heat_kernel.tail_tol");
      if (!(c.heat_kernel.tail_tol > 0 && c.heat_kernel.tail_tol <= 1e-6)) {
        throw PreconditionError("$.heat_kernel.tail_tol: must lie in (0, 1e-6]");
      }
    }
    if (h.contains("x0")) c.heat_kernel.x0 = get_as<std::size_t>(h.at("x0"), "$.heat_kernel.x0");
  }
  if (j.contains("diagnostics")) {
    const json& d = j.at("diagnostics");
    check_keys(d, "$.diagnostics",
               {"entropy_constant", "entropy_rel_step", "ks_threshold", "cov_tolerance", "eps", "radii",
                "sublinearity_eps"});
    auto& o = c.diagnostics;
    if (d.contains("entropy_constant") && !d.at("entropy_constant").is_null()) {
      o.entropy_constant = get_as<double>(d.at("entropy_constant"), "$.diagnostics.entropy_constant");
    }
    if (d.contains("entropy_rel_step")) o.entropy_rel_step = get_as<double>(d.at("entropy_rel_step"), "$.diagnostics.entropy_rel_step");
    if (d.contains("ks_threshold")) o.ks_threshold = get_as<double>(d.at("ks_threshold"), "$.diagnostics.ks_threshold");
    if (d.contains("cov_tolerance")) o.cov_tolerance = get_as<double>(d.at("cov_tolerance"), "$.diagnostics.cov_tolerance");
    if (d.contains("eps")) o.eps = get_as<double>(d.at("eps"), "$.diagnostics.eps");
    if (d.contains("radii")) o.radii = get_as<std::vector<int>>(d.at("radii"), "$.diagnostics.radii");
    if (d.contains("sublinearity_eps")) {
      o.sublinearity_eps = get_as<std::vector<double>>(d.at("sublinearity_eps"), "$.diagnostics.sublinearity_eps");
    }
  }
  if (j.contains("output_dir")) c.output_dir = get_as<std::string>(j.at("output_dir"), "$.output_dir");
  return c;
}

std::uint64_t file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open " + p.string());
  Fnv1a h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return h.digest();
}

RunResult run_experiment(const json& config, const std::string& subcommand, const RunOptions& opts) {
  RunResult res;
  json manifest{{"format_version", kConfigFormatVersion}, {"subcommand", subcommand}};
  fs::path outdir;
  std::optional<Run> run;
  // Resolved before validation so that a manifest can be written even for
  // a malformed config.
  if (opts.output_dir) {
    outdir = *opts.output_dir;
  } else if (const char* env_dir = std::getenv("DSRE_OUTPUT_DIR"); env_dir != nullptr && *env_dir != '\0') {
    outdir = env_dir;
  } else if (config.is_object() && config.contains("output_dir") && config.at("output_dir").is_string()) {
    outdir = config.at("output_dir").get<std::string>();
  } else {
    outdir = ExperimentConfig{}.output_dir;
  }
  manifest["output_dir"] = outdir.string();
  try {
    bool known = false;
    for (const auto& s : subcommands()) known = known || s == subcommand;
    if (!known) throw PreconditionError("unknown subcommand '" + subcommand + "'");
    ExperimentConfig cfg = ExperimentConfig::from_json(config);
    if (opts.seed) {
      cfg.environment.seed = *opts.seed;
      manifest["seed_override"] = *opts.seed;
    }
    manifest["config_hash"] = hex64([&] {
      Fnv1a h;
      h.update(config.dump());
      return h.digest();
    }());
    manifest["environment_seed"] = cfg.environment.seed;
    fs::create_directories(outdir);

    // Walk-count precondition is checked before any work is done.
    if ((subcommand == "verify-clt" || subcommand == "full") && cfg.simulation.n_walks < 1000) {
      throw PreconditionError("$.simulation.n_walks: verify-clt needs at least 1000 walks, got " +
                              std::to_string(cfg.simulation.n_walks));
    }
    run.emplace(std::move(cfg), outdir, opts.threads);
    run->stage(subcommand);
    bool all = true;
    for (const auto& v : run->verdicts()) all = all && v.pass;
    res.exit_code = all ? 0 : 1;
    res.message = all ? "all verdicts pass" : "a verdict failed";
  } catch (const std::exception& e) {
    res.exit_code = 2;
    res.message = e.what();
    manifest["error"] = e.what();
  }

  if (run) {
    json verdicts = json::array();
    for (const auto& v : run->verdicts()) verdicts.push_back(v.to_json());
    manifest["verdicts"] = verdicts;
    manifest["warnings"] = run->warnings();
    manifest["timings_seconds"] = run->timings();
    manifest["results"] = run->extra();
    if (const auto h = run->env_hash()) manifest["env_hash"] = hex64(*h);
  }
  manifest["exit_code"] = res.exit_code;
  manifest["message"] = res.message;
  {
    try {
      fs::create_directories(outdir);
      manifest["files"] = inventory(outdir);
      write_json(outdir / "manifest.json", manifest);
    } catch (const std::exception& e) {
      res.exit_code = 2;
      res.message += std::string("; manifest: ") + e.what();
    }
  }
  res.manifest = std::move(manifest);
  return res;
}

RunResult run_experiment(const fs::path& config_path, const std::string& subcommand, const RunOptions& opts) {
  json config;
  try {
    std::ifstream in(config_path);
    if (!in) throw Error("cannot open config " + config_path.string());
    in >> config;
  } catch (const std::exception& e) {
    RunResult r;
    r.exit_code = 2;
    r.message = e.what();
    r.manifest = {{"error", e.what()}, {"exit_code", 2}, {"subcommand", subcommand}};
    return r;
  }
  return run_experiment(config, subcommand, opts);
}

}  // namespace dsre

#include "dsre/environment.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <limits>
#include <string_view>

#include "dsre/error.hpp"
#include "dsre/fft.hpp"
#include "dsre/random.hpp"
#include "dsre/util.hpp"

namespace dsre {

using nlohmann::json;

// ---------------------------------------------------------------------------
// JSON for laws and policies

namespace {

double require_number(const json& j, const std::string& key, const std::string& path) {
  if (!j.contains(key)) throw PreconditionError(path + "." + key + ": missing");
  if (!j.at(key).is_number()) throw PreconditionError(path + "." + key + ": expected a number");
  return j.at(key).get<double>();
}

void reject_unknown_keys(const json& j, const std::string& path, std::initializer_list<std::string_view> allowed) {
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      throw PreconditionError(path + "." + item.key() + ": unknown key");
    }
  }
}

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

}  // namespace

json to_json(const FieldLaw& law) {
  return std::visit(
      Overloaded{
          [](const ConstantLaw& l) { return json{{"kind", "constant"}, {"value", l.value}}; },
          [](const UniformLaw& l) { return json{{"kind", "iid_uniform"}, {"lo", l.lo}, {"hi", l.hi}}; },
          [](const GaussianLaw& l) { return json{{"kind", "iid_gaussian"}, {"sigma", l.sigma}}; },
          [](const TruncatedParetoLaw& l) {
            return json{{"kind", "iid_pareto_truncated"}, {"alpha", l.alpha}, {"cap", l.cap}};
          },
      },
      law);
}

FieldLaw field_law_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw PreconditionError(path + ": expected an object");
  if (!j.contains("kind") || !j.at("kind").is_string()) {
    throw PreconditionError(path + ".kind: missing or not a string");
  }
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "constant") reject_unknown_keys(j, path, {"kind", "value"});
  if (kind == "iid_uniform") reject_unknown_keys(j, path, {"kind", "lo", "hi"});
  if (kind == "iid_gaussian") reject_unknown_keys(j, path, {"kind", "sigma"});
  if (kind == "iid_pareto_truncated") reject_unknown_keys(j, path, {"kind", "alpha", "cap"});
  if (kind == "constant") return ConstantLaw{require_number(j, "value", path)};
  if (kind == "iid_uniform") {
    UniformLaw l{require_number(j, "lo", path), require_number(j, "hi", path)};
    if (!(l.lo <= l.hi)) throw PreconditionError(path + ": iid_uniform requires lo <= hi");
    return l;
  }
  if (kind == "iid_gaussian") {
    GaussianLaw l{require_number(j, "sigma", path)};
    if (!(l.sigma >= 0.0)) throw PreconditionError(path + ".sigma: must be >= 0");
    return l;
  }
  if (kind == "iid_pareto_truncated") {
    TruncatedParetoLaw l{require_number(j, "alpha", path), require_number(j, "cap", path)};
    if (!(l.alpha > 0.0)) throw PreconditionError(path + ".alpha: must be > 0");
    if (!(l.cap > 0.0) || !std::isfinite(l.cap)) {
      throw PreconditionError(path + ".cap: a finite positive truncation cap is required");
    }
    return l;
  }
  throw PreconditionError(path + ".kind: unknown generator '" + kind + "'");
}

json to_json(const RescalePolicy& policy) {
  return std::visit(Overloaded{
                        [](const RejectNegativeRates&) { return json{{"kind", "reject"}}; },
                        [](const ShrinkStreamTensor& p) {
                          return json{{"kind", "shrink_h"}, {"margin", p.margin}};
                        },
                    },
                    policy);
}

RescalePolicy rescale_policy_from_json(const json& j, const std::string& path) {
  if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string()) {
    throw PreconditionError(path + ".kind: missing or not a string");
  }
  const auto kind = j.at("kind").get<std::string>();
  reject_unknown_keys(j, path, kind == "reject" ? std::initializer_list<std::string_view>{"kind"}
                                                : std::initializer_list<std::string_view>{"kind", "margin"});
  if (kind == "reject") return RejectNegativeRates{};
  if (kind == "shrink_h") {
    const double m = require_number(j, "margin", path);
    if (!(m > 0.0 && m < 1.0)) throw PreconditionError(path + ".margin: must lie in (0, 1)");
    return ShrinkStreamTensor{m};
  }
  throw PreconditionError(path + ".kind: unknown rescale policy '" + kind + "'");
}

json GeneratorSpec::to_json() const {
  return json{{"d", d},
              {"N", N},
              {"seed", seed},
              {"eps", eps},
              {"s", dsre::to_json(s)},
              {"h", dsre::to_json(h)},
              {"rescale", dsre::to_json(rescale)}};
}

GeneratorSpec GeneratorSpec::from_json(const json& j, const std::string& path) {
  if (!j.is_object()) throw PreconditionError(path + ": expected an object");
  reject_unknown_keys(j, path, {"d", "N", "seed", "eps", "s", "h", "rescale"});
  GeneratorSpec g;
  auto int_field = [&](const char* key) {
    if (!j.contains(key) || !j.at(key).is_number_integer()) {
      throw PreconditionError(path + "." + key + ": missing or not an integer");
    }
    return j.at(key).get<long long>();
  };
  g.d = static_cast<int>(int_field("d"));
  g.N = static_cast<int>(int_field("N"));
  const auto& seed = j.contains("seed") ? j.at("seed") : json();
  if (!seed.is_number_integer() || (!seed.is_number_unsigned() && seed.get<long long>() < 0)) {
    throw PreconditionError(path + ".seed: missing or not a non-negative integer");
  }
  g.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("eps")) {
    if (!j.at("eps").is_number() || !(j.at("eps").get<double>() > 0.0)) {
      throw PreconditionError(path + ".eps: must be a positive number");
    }
    g.eps = j.at("eps").get<double>();
  }
  if (!j.contains("s")) throw PreconditionError(path + ".s: missing");
  if (!j.contains("h")) throw PreconditionError(path + ".h: missing");
  g.s = field_law_from_json(j.at("s"), path + ".s");
  g.h = field_law_from_json(j.at("h"), path + ".h");
  g.rescale = j.contains("rescale") ? rescale_policy_from_json(j.at("rescale"), path + ".rescale")
                                    : RescalePolicy{ShrinkStreamTensor{0.1}};
  return g;
}

// ---------------------------------------------------------------------------
// Stream tensor

namespace {

double draw(const FieldLaw& law, CounterRng& rng) {
  return std::visit(Overloaded{
                        [](const ConstantLaw& l) { return l.value; },
                        [&](const UniformLaw& l) { return rng.uniform(l.lo, l.hi); },
                        [&](const GaussianLaw& l) { return l.sigma * rng.normal(); },
                        [&](const TruncatedParetoLaw& l) {
                          const double mag = std::min(std::pow(rng.uniform(), -1.0 / l.alpha) - 1.0, l.cap);
                          return rng.uniform() < 0.5 ? -mag : mag;
                        },
                    },
                    law);
}

}  // namespace

StreamTensor::StreamTensor(TorusGeometry g, std::vector<double> plaquettes, double eps)
    : geometry_(g), pairs_(g.dim() * (g.dim() - 1) / 2), hplq_(std::move(plaquettes)), eps_(eps) {
  if (hplq_.size() != static_cast<std::size_t>(pairs_) * g.sites()) {
    throw PreconditionError("stream tensor: expected " + std::to_string(pairs_ * g.sites()) +
                            " plaquette values, got " + std::to_string(hplq_.size()));
  }
  if (!(eps > 0.0)) throw PreconditionError("stream tensor: eps must be positive");
  hstar_ = compute_hstar(*this, eps_);
}

StreamTensor StreamTensor::zero(const TorusGeometry& g, double eps) {
  const auto pairs = static_cast<std::size_t>(g.dim() * (g.dim() - 1) / 2);
  return StreamTensor(g, std::vector<double>(pairs * g.sites(), 0.0), eps);
}

int StreamTensor::pair_index(int d, int i, int j) {
  // Lexicographic over i < j.
  return i * d - i * (i + 1) / 2 + (j - i - 1);
}

double StreamTensor::plaquette(Site x, int i, int j) const {
  return hplq_[static_cast<std::size_t>(pair_index(geometry_.dim(), i, j)) * geometry_.sites() + x];
}

double StreamTensor::component(Site x, Direction k, Direction l) const {
  if (k.axis == l.axis) return 0.0;
  if (k.axis > l.axis) return -component(x, l, k);
  // h_{s e_i, r e_j}(x) = s r h_{e_i,e_j}(x - [s<0] e_i - [r<0] e_j)
  Site base = x;
  if (k.sign < 0) base = geometry_.shift(base, Direction{k.axis, -1});
  if (l.sign < 0) base = geometry_.shift(base, Direction{l.axis, -1});
  return static_cast<double>(k.sign * l.sign) * plaquette(base, k.axis, l.axis);
}

StreamTensor StreamTensor::scaled(double gamma) const {
  std::vector<double> h(hplq_);
  for (double& v : h) v *= gamma;
  return StreamTensor(geometry_, std::move(h), eps_);
}

double compute_hstar(const StreamTensor& h, double eps) {
  const auto& g = h.geometry();
  const double power = 2.0 + eps;
  double total = 0.0;
  for (int a = 0; a < g.directions(); ++a) {
    for (int b = 0; b < g.directions(); ++b) {
      const Direction k = Direction::from_index(a);
      const Direction l = Direction::from_index(b);
      if (k.axis == l.axis) continue;
      double acc = 0.0;
      for (Site x = 0; x < g.sites(); ++x) acc += std::pow(std::abs(h.component(x, k, l)), power);
      total += std::pow(acc / static_cast<double>(g.sites()), 1.0 / power);
    }
  }
  return total;
}

StreamTensor generate_stream_tensor(const TorusGeometry& g, const FieldLaw& law, std::uint64_t seed,
                                    double eps) {
  if (g.dim() < 2) {
    throw PreconditionError("stream tensor requires d >= 2 (no plaquettes in d = 1)");
  }
  const int pairs = g.dim() * (g.dim() - 1) / 2;
  std::vector<double> h(static_cast<std::size_t>(pairs) * g.sites());
  CounterRng rng(seed, streams::kStreamTensor);
  for (Site x = 0; x < g.sites(); ++x) {
    for (int p = 0; p < pairs; ++p) h[static_cast<std::size_t>(p) * g.sites() + x] = draw(law, rng);
  }
  return StreamTensor(g, std::move(h), eps);
}

SkewFlow curl_to_drift(const StreamTensor& h) {
  const auto& g = h.geometry();
  SkewFlow v{g, std::vector<double>(static_cast<std::size_t>(g.directions()) * g.sites(), 0.0)};
  for (int a = 0; a < g.directions(); ++a) {
    const Direction k = Direction::from_index(a);
    for (Site x = 0; x < g.sites(); ++x) {
      double sum = 0.0;
      for (int b = 0; b < g.directions(); ++b) {
        const Direction l = Direction::from_index(b);
        if (l.axis != k.axis) sum += h.component(x, k, l);
      }
      v.values[static_cast<std::size_t>(a) * g.sites() + x] = sum;
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Environment assembly

ConductanceField generate_conductances(const TorusGeometry& g, const FieldLaw& law, std::uint64_t seed) {
  if (const auto* c = std::get_if<ConstantLaw>(&law)) {
    if (!(c->value >= 1.0)) throw PreconditionError("conductance floor must be >= 1 (s_* = 1)");
  } else if (const auto* u = std::get_if<UniformLaw>(&law)) {
    if (!(u->lo >= 1.0)) throw PreconditionError("conductance floor must be >= 1 (s_* = 1)");
  } else {
    throw PreconditionError("conductances support only constant and iid_uniform laws");
  }
  ConductanceField s{g, std::vector<double>(static_cast<std::size_t>(g.dim()) * g.sites())};
  CounterRng rng(seed, streams::kConductance);
  for (Site x = 0; x < g.sites(); ++x) {
    for (int i = 0; i < g.dim(); ++i) s.values[static_cast<std::size_t>(i) * g.sites() + x] = draw(law, rng);
  }
  return s;
}

json ValidationReport::to_json() const {
  return json{{"max_bistochastic_defect", max_bistochastic_defect},
              {"max_divergence", max_divergence},
              {"max_skew_defect", max_skew_defect},
              {"max_mean_flow", max_mean_flow},
              {"min_rate", min_rate},
              {"max_rate", max_rate},
              {"min_conductance", min_conductance},
              {"max_conductance", max_conductance},
              {"gamma", gamma}};
}

bool TorusEnvironment::has_constant_conductance() const {
  return std::all_of(s_.begin(), s_.end(), [&](double v) { return v == s_lower_; });
}

bool TorusEnvironment::is_reversible() const {
  return std::all_of(v_.begin(), v_.end(), [](double v) { return v == 0.0; });
}

namespace {

std::vector<double> rates_from(std::span<const double> sk, const SkewFlow& v) {
  std::vector<double> p(sk.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = sk[i] + v.values[i];
  return p;
}

}  // namespace

TorusEnvironment assemble_environment(const ConductanceField& s, const StreamTensor& h,
                                      const RescalePolicy& policy, std::optional<GeneratorSpec> provenance) {
  const TorusGeometry g = s.geometry;
  if (!(h.geometry() == g)) throw PreconditionError("conductance and stream tensor geometries differ");
  const std::size_t n = g.sites();
  const int dirs = g.directions();
  if (s.values.size() != static_cast<std::size_t>(g.dim()) * n) {
    throw PreconditionError("conductance field has the wrong size");
  }
  constexpr double kSLower = 1.0;
  for (double v : s.values) {
    if (!(v >= kSLower)) throw PreconditionError("conductance below the ellipticity floor s_* = 1");
  }

  TorusEnvironment env;
  env.geometry_ = g;
  env.neighbors_ = NeighborTable(g);
  env.s_ = s.values;
  env.s_lower_ = kSLower;
  env.sk_.assign(static_cast<std::size_t>(dirs) * n, 0.0);
  for (int a = 0; a < dirs; ++a) {
    const Direction k = Direction::from_index(a);
    for (Site x = 0; x < n; ++x) {
      const Site base = k.sign > 0 ? x : env.neighbors_.at(x, a);
      env.sk_[static_cast<std::size_t>(a) * n + x] = s.values[static_cast<std::size_t>(k.axis) * n + base];
    }
  }

  StreamTensor hh = h;
  SkewFlow v = curl_to_drift(hh);
  std::vector<double> p = rates_from(env.sk_, v);
  double gamma = 1.0;

  if (const auto* shrink = std::get_if<ShrinkStreamTensor>(&policy)) {
    const double floor = shrink->margin * kSLower;
    const double min_p = *std::min_element(p.begin(), p.end());
    if (min_p < floor - 1e-12) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (v.values[i] < 0.0) gamma = std::min(gamma, (env.sk_[i] - floor) / -v.values[i]);
      }
      gamma = std::clamp(gamma, 0.0, 1.0);
      hh = h.scaled(gamma);
      v = curl_to_drift(hh);
      p = rates_from(env.sk_, v);
    }
  } else {
    const double min_p = *std::min_element(p.begin(), p.end());
    if (min_p < 0.0) {
      throw PreconditionError("negative jump rate " + std::to_string(min_p) + " under the reject policy");
    }
  }
  for (double& r : p) {
    if (r < 0.0) {
      if (r < -1e-12) throw InternalError("rate positivity violated after rescale");
      r = 0.0;
    }
  }

  env.h_ = std::move(hh);
  env.v_ = std::move(v.values);
  env.p_ = std::move(p);
  env.total_rate_.assign(n, 0.0);
  for (Site x = 0; x < n; ++x) {
    double r = 0.0;
    for (int a = 0; a < dirs; ++a) r += env.p_[static_cast<std::size_t>(a) * n + x];
    env.total_rate_[x] = r;
  }

  ValidationReport rep;
  rep.gamma = gamma;
  rep.min_rate = *std::min_element(env.p_.begin(), env.p_.end());
  rep.max_rate = *std::max_element(env.p_.begin(), env.p_.end());
  rep.min_conductance = *std::min_element(env.s_.begin(), env.s_.end());
  rep.max_conductance = *std::max_element(env.s_.begin(), env.s_.end());
  for (Site x = 0; x < n; ++x) {
    double out = 0.0, in = 0.0, div = 0.0;
    for (int a = 0; a < dirs; ++a) {
      const Site y = env.neighbors_.at(x, a);
      const int opp = (-Direction::from_index(a)).index();
      out += env.p(x, a);
      in += env.p(y, opp);
      div += env.v(x, a);
      rep.max_skew_defect = std::max(rep.max_skew_defect, std::abs(env.v(x, a) + env.v(y, opp)));
    }
    rep.max_bistochastic_defect = std::max(rep.max_bistochastic_defect, std::abs(out - in));
    rep.max_divergence = std::max(rep.max_divergence, std::abs(div));
  }
  for (int a = 0; a < dirs; ++a) {
    const auto comp = std::span<const double>(env.v_).subspan(static_cast<std::size_t>(a) * n, n);
    rep.max_mean_flow = std::max(rep.max_mean_flow, std::abs(torus_mean(comp)));
  }
  env.report_ = rep;
  env.s_upper_ = std::max(rep.max_rate, rep.max_conductance);
  env.provenance_ = std::move(provenance);

  Fnv1a hash;
  hash.update_value(g.dim());
  hash.update_value(g.side());
  hash.update(env.s_);
  hash.update(env.h_.plaquettes());
  hash.update_value(env.h_.eps());
  env.hash_ = hash.digest();
  return env;
}

TorusEnvironment make_environment(const GeneratorSpec& spec) {
  const TorusGeometry g(spec.d, spec.N);
  ConductanceField s = generate_conductances(g, spec.s, spec.seed);
  StreamTensor h;
  if (g.dim() >= 2) {
    h = generate_stream_tensor(g, spec.h, spec.seed, spec.eps);
  } else {
    const auto* c = std::get_if<ConstantLaw>(&spec.h);
    if (c == nullptr || c->value != 0.0) {
      throw PreconditionError("d = 1 admits only the reversible case h = constant(0)");
    }
    h = StreamTensor::zero(g, spec.eps);
  }
  return assemble_environment(s, h, spec.rescale, spec);
}

// ---------------------------------------------------------------------------
// Drift fields

DriftFields drift_fields(const TorusEnvironment& env) {
  const auto& g = env.geometry();
  const std::size_t n = g.sites();
  const int d = g.dim();
  DriftFields f{g, std::vector<double>(static_cast<std::size_t>(d) * n),
                std::vector<double>(static_cast<std::size_t>(d) * n),
                std::vector<double>(static_cast<std::size_t>(d) * n), 0.0};
  for (int i = 0; i < d; ++i) {
    const int plus = Direction{i, 1}.index();
    const int minus = Direction{i, -1}.index();
    for (Site x = 0; x < n; ++x) {
      const Site back = env.neighbors().at(x, minus);
      const std::size_t at = static_cast<std::size_t>(i) * n + x;
      f.psi[at] = env.edge_conductance(x, i) - env.edge_conductance(back, i);
      f.phi[at] = env.v(x, plus) + env.v(back, plus);
      f.phistar[at] = f.psi[at] + f.phi[at];
      const double local = env.p(x, plus) - env.p(x, minus);
      f.local_drift_defect = std::max(f.local_drift_defect, std::abs(local - f.phistar[at]));
    }
  }
  return f;
}

json H1Report::to_json() const {
  return json{{"value", value}, {"min_spectrum", min_spectrum}, {"zero_mode_excluded", zero_mode_excluded}};
}

H1Report h_minus_one_report(const TorusEnvironment& env) {
  const auto& g = env.geometry();
  const std::size_t n = g.sites();
  const DriftFields drift = drift_fields(env);
  const TorusFft fft(g);
  H1Report rep;
  rep.spectrum.assign(static_cast<std::size_t>(g.dim()) * n, 0.0);
  rep.min_spectrum = std::numeric_limits<double>::infinity();
  for (int i = 0; i < g.dim(); ++i) {
    const auto phi = std::span<const double>(drift.phi).subspan(static_cast<std::size_t>(i) * n, n);
    const auto F = fft.forward(phi);
    for (Site m = 0; m < n; ++m) {
      const double c = std::norm(F[m]) / static_cast<double>(n);
      rep.spectrum[static_cast<std::size_t>(i) * n + m] = c;
      rep.min_spectrum = std::min(rep.min_spectrum, c);
    }
  }
  double acc = 0.0;
  for (Site m = 1; m < n; ++m) {
    const double weight = -laplacian_symbol(g, g.coords(m)) / 4.0;
    double c = 0.0;
    for (int i = 0; i < g.dim(); ++i) c += rep.spectrum[static_cast<std::size_t>(i) * n + m];
    acc += c / weight;
  }
  rep.value = acc / static_cast<double>(n);
  return rep;
}

}  // namespace dsre

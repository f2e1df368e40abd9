#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsre/geometry.hpp"

namespace dsre {

// ---------------------------------------------------------------------------
// Generator laws

struct ConstantLaw {
  double value = 0.0;
};
struct UniformLaw {
  double lo = 0.0;
  double hi = 1.0;
};
struct GaussianLaw {
  double sigma = 1.0;
};
/// Symmetric Lomax tail: |h| = min(U^{-1/alpha} - 1, cap) with a random sign.
struct TruncatedParetoLaw {
  double alpha = 2.0;
  double cap = 1.0;
};

using FieldLaw = std::variant<ConstantLaw, UniformLaw, GaussianLaw, TruncatedParetoLaw>;

nlohmann::json to_json(const FieldLaw& law);
/// Throws PreconditionError naming `path` on malformed input.
FieldLaw field_law_from_json(const nlohmann::json& j, const std::string& path);

struct RejectNegativeRates {};
/// Scale h by the largest gamma <= 1 such that min p >= margin * s_*.
struct ShrinkStreamTensor {
  double margin = 0.1;
};
using RescalePolicy = std::variant<RejectNegativeRates, ShrinkStreamTensor>;

nlohmann::json to_json(const RescalePolicy& policy);
RescalePolicy rescale_policy_from_json(const nlohmann::json& j, const std::string& path);

/// Everything needed to regenerate an environment bit-for-bit.
struct GeneratorSpec {
  int d = 2;
  int N = 16;
  std::uint64_t seed = 0;
  FieldLaw s = ConstantLaw{1.0};
  FieldLaw h = ConstantLaw{0.0};
  RescalePolicy rescale = ShrinkStreamTensor{0.1};
  double eps = 1.0;

  nlohmann::json to_json() const;
  static GeneratorSpec from_json(const nlohmann::json& j, const std::string& path = "");
};

// ---------------------------------------------------------------------------
// Stream tensor

/// Plaquette field h_{e_i,e_j}(x), i < j, stored component-major
/// (pair-major, then site). Every other entry h_{k,l}(x) follows from
///   h_{k,l}(x) = -h_{-k,l}(x+k) = -h_{k,-l}(x+l) = -h_{l,k}(x).
class StreamTensor {
 public:
  StreamTensor() = default;
  StreamTensor(TorusGeometry g, std::vector<double> plaquettes, double eps = 1.0);

  static StreamTensor zero(const TorusGeometry& g, double eps = 1.0);

  const TorusGeometry& geometry() const { return geometry_; }
  int pair_count() const { return pairs_; }
  static int pair_index(int d, int i, int j);

  double plaquette(Site x, int i, int j) const;
  std::span<const double> plaquettes() const { return hplq_; }
  /// Full tensor entry h_{k,l}(x).
  double component(Site x, Direction k, Direction l) const;

  double eps() const { return eps_; }
  /// h* = sum_{k,l} (torus mean |h_{k,l}|^{2+eps})^{1/(2+eps)}.
  double hstar() const { return hstar_; }

  StreamTensor scaled(double gamma) const;

 private:
  TorusGeometry geometry_;
  int pairs_ = 0;
  std::vector<double> hplq_;
  double eps_ = 1.0;
  double hstar_ = 0.0;
};

StreamTensor generate_stream_tensor(const TorusGeometry& g, const FieldLaw& law, std::uint64_t seed,
                                    double eps = 1.0);

/// h* evaluated by enumerating all ordered pairs (k, l) in E x E.
double compute_hstar(const StreamTensor& h, double eps);

// ---------------------------------------------------------------------------
// Skew flow

/// Values v_k(x), direction-major.
struct SkewFlow {
  TorusGeometry geometry;
  std::vector<double> values;

  double at(Site x, int dir) const { return values[static_cast<std::size_t>(dir) * geometry.sites() + x]; }
};

/// v_k(x) = sum_{l in E} h_{k,l}(x).
SkewFlow curl_to_drift(const StreamTensor& h);

// ---------------------------------------------------------------------------
// Environment

/// Conductances s_{e_i}(x), axis-major.
struct ConductanceField {
  TorusGeometry geometry;
  std::vector<double> values;
};

ConductanceField generate_conductances(const TorusGeometry& g, const FieldLaw& law, std::uint64_t seed);

struct ValidationReport {
  double max_bistochastic_defect = 0.0;  ///< max_x |sum_k p_k(x) - sum_k p_{-k}(x+k)|
  double max_divergence = 0.0;           ///< max_x |sum_k v_k(x)|
  double max_skew_defect = 0.0;          ///< max |v_k(x) + v_{-k}(x+k)|
  double max_mean_flow = 0.0;            ///< max_k |torus mean of v_k|
  double min_rate = 0.0;
  double max_rate = 0.0;
  double min_conductance = 0.0;
  double max_conductance = 0.0;
  double gamma = 1.0;  ///< stream tensor scale applied by shrink_h

  nlohmann::json to_json() const;
};

/// Immutable periodic environment: conductances, stream tensor, derived
/// skew flow v and jump rates p_k = s_k + v_k. Safe to share across threads.
class TorusEnvironment {
 public:
  const TorusGeometry& geometry() const { return geometry_; }
  const NeighborTable& neighbors() const { return neighbors_; }
  std::size_t sites() const { return geometry_.sites(); }
  int directions() const { return geometry_.directions(); }

  /// s_{e_axis}(x), one value per unoriented edge.
  double edge_conductance(Site x, int axis) const {
    return s_[static_cast<std::size_t>(axis) * sites() + x];
  }
  /// s_k(x) for any k in E, s_{-e_i}(x) = s_{e_i}(x - e_i).
  double s(Site x, int dir) const { return sk_[static_cast<std::size_t>(dir) * sites() + x]; }
  double v(Site x, int dir) const { return v_[static_cast<std::size_t>(dir) * sites() + x]; }
  double p(Site x, int dir) const { return p_[static_cast<std::size_t>(dir) * sites() + x]; }
  double total_rate(Site x) const { return total_rate_[x]; }

  std::span<const double> conductances() const { return s_; }
  std::span<const double> rates() const { return p_; }
  std::span<const double> flow() const { return v_; }

  const StreamTensor& stream_tensor() const { return h_; }
  double s_lower() const { return s_lower_; }
  double s_upper() const { return s_upper_; }
  const ValidationReport& report() const { return report_; }
  const std::optional<GeneratorSpec>& provenance() const { return provenance_; }
  std::uint64_t hash() const { return hash_; }

  /// True when every s_k equals s_* (the constant-symmetric-part case).
  bool has_constant_conductance() const;
  bool is_reversible() const;

 private:
  friend TorusEnvironment assemble_environment(const ConductanceField&, const StreamTensor&,
                                               const RescalePolicy&, std::optional<GeneratorSpec>);

  TorusGeometry geometry_;
  NeighborTable neighbors_;
  std::vector<double> s_;
  std::vector<double> sk_;
  StreamTensor h_;
  std::vector<double> v_;
  std::vector<double> p_;
  std::vector<double> total_rate_;
  double s_lower_ = 1.0;
  double s_upper_ = 1.0;
  ValidationReport report_;
  std::optional<GeneratorSpec> provenance_;
  std::uint64_t hash_ = 0;
};

/// Combines conductances and stream tensor into rates, applying the rescale
/// policy. The ellipticity floor s_* is 1 (conductances below 1 are
/// rejected).
TorusEnvironment assemble_environment(const ConductanceField& s, const StreamTensor& h,
                                      const RescalePolicy& policy,
                                      std::optional<GeneratorSpec> provenance = std::nullopt);

/// Generates conductances and stream tensor from the spec and assembles.
TorusEnvironment make_environment(const GeneratorSpec& spec);

// ---------------------------------------------------------------------------
// Drift fields and H_{-1} report

/// psi, phi, phi* = psi + phi, each axis-major (d * sites).
struct DriftFields {
  TorusGeometry geometry;
  std::vector<double> psi;
  std::vector<double> phi;
  std::vector<double> phistar;
  /// max |phi*_i(x) - sum_k p_k(x) k_i|
  double local_drift_defect = 0.0;

  std::span<const double> phistar_component(int i) const {
    return std::span<const double>(phistar).subspan(static_cast<std::size_t>(i) * geometry.sites(),
                                                    geometry.sites());
  }
};

DriftFields drift_fields(const TorusEnvironment& env);

struct H1Report {
  /// C^_ii(p) on the dual torus, axis-major (d * sites, Fourier index order).
  std::vector<double> spectrum;
  double value = 0.0;
  double min_spectrum = 0.0;
  bool zero_mode_excluded = true;

  nlohmann::json to_json() const;
};

H1Report h_minus_one_report(const TorusEnvironment& env);

}  // namespace dsre

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsre/environment.hpp"

namespace dsre {

inline constexpr int kFieldFormatVersion = 1;

/// A set of named per-site arrays on one torus. On disk: `<stem>.json`
/// (metadata sidecar) and `<stem>.f64` (raw little-endian IEEE-754 doubles,
/// component after component, sites in lexicographic order, last axis
/// fastest).
struct FieldDump {
  TorusGeometry geometry;
  std::vector<std::string> components;
  std::vector<std::vector<double>> data;
  /// Extra metadata merged into the sidecar (seed, generator_spec, ...).
  nlohmann::json meta = nlohmann::json::object();
};

/// Writes both files; returns the two paths (sidecar first).
std::vector<std::filesystem::path> write_field_dump(const std::filesystem::path& stem, const FieldDump& dump);
FieldDump read_field_dump(const std::filesystem::path& stem);

/// Dumps conductances, plaquettes, flow and rates.
std::vector<std::filesystem::path> write_environment(const std::filesystem::path& stem,
                                                     const TorusEnvironment& env);
/// Rebuilds the environment from the dumped conductances and plaquettes and
/// checks that the derived flow and rates match the dump bit for bit.
TorusEnvironment read_environment(const std::filesystem::path& stem);

}  // namespace dsre

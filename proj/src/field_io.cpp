#include "dsre/field_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "dsre/error.hpp"
#include "dsre/util.hpp"

namespace dsre {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path with_suffix(const fs::path& stem, const char* ext) {
  fs::path p = stem;
  p += ext;
  return p;
}

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
}

std::string axis_name(int i) { return std::to_string(i + 1); }

std::string direction_name(int dir) {
  const Direction k = Direction::from_index(dir);
  return std::string(k.sign > 0 ? "p" : "m") + axis_name(k.axis);
}

}  // namespace

std::vector<fs::path> write_field_dump(const fs::path& stem, const FieldDump& dump) {
  const std::size_t n = dump.geometry.sites();
  if (dump.components.size() != dump.data.size()) {
    throw PreconditionError("field dump: component names and arrays differ in count");
  }
  for (const auto& c : dump.data) {
    if (c.size() != n) throw PreconditionError("field dump: component size does not match geometry");
  }
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());

  json meta = dump.meta;
  meta["format_version"] = kFieldFormatVersion;
  meta["d"] = dump.geometry.dim();
  meta["N"] = dump.geometry.side();
  meta["components"] = dump.components;
  meta["dtype"] = "f64le";
  meta["order"] = "lexicographic, last axis fastest";
  meta["data_file"] = with_suffix(stem, ".f64").filename().string();

  const fs::path side = with_suffix(stem, ".json");
  const fs::path raw = with_suffix(stem, ".f64");
  {
    std::ofstream out(side);
    if (!out) throw Error("cannot write " + side.string());
    out << meta.dump(2) << '\n';
  }
  std::ofstream out(raw, std::ios::binary);
  if (!out) throw Error("cannot write " + raw.string());
  for (const auto& c : dump.data) {
    for (double v : c) {
      const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(v));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw Error("short write to " + raw.string());
  return {side, raw};
}

FieldDump read_field_dump(const fs::path& stem) {
  const fs::path side = with_suffix(stem, ".json");
  std::ifstream in(side);
  if (!in) throw Error("cannot open " + side.string());
  json meta;
  try {
    in >> meta;
  } catch (const json::exception& e) {
    throw Error(side.string() + ": " + e.what());
  }
  if (meta.value("format_version", -1) != kFieldFormatVersion) {
    throw Error(side.string() + ": unsupported format_version");
  }
  if (meta.value("dtype", "") != "f64le") throw Error(side.string() + ": unsupported dtype");

  FieldDump dump;
  dump.geometry = TorusGeometry(meta.at("d").get<int>(), meta.at("N").get<int>());
  dump.components = meta.at("components").get<std::vector<std::string>>();
  const std::size_t n = dump.geometry.sites();

  const fs::path raw = with_suffix(stem, ".f64");
  std::ifstream bin(raw, std::ios::binary);
  if (!bin) throw Error("cannot open " + raw.string());
  dump.data.assign(dump.components.size(), std::vector<double>(n));
  for (auto& c : dump.data) {
    for (double& v : c) {
      std::uint64_t bits = 0;
      bin.read(reinterpret_cast<char*>(&bits), sizeof bits);
      v = std::bit_cast<double>(to_le(bits));
    }
  }
  if (!bin) throw Error(raw.string() + ": truncated data file");
  if (bin.peek() != std::char_traits<char>::eof()) throw Error(raw.string() + ": trailing bytes");

  for (const char* key : {"format_version", "d", "N", "components", "dtype", "order", "data_file"}) meta.erase(key);
  dump.meta = std::move(meta);
  return dump;
}

std::vector<fs::path> write_environment(const fs::path& stem, const TorusEnvironment& env) {
  const auto& g = env.geometry();
  const std::size_t n = g.sites();
  FieldDump dump;
  dump.geometry = g;
  auto slice = [n](std::span<const double> all, int c) {
    const auto s = all.subspan(static_cast<std::size_t>(c) * n, n);
    return std::vector<double>(s.begin(), s.end());
  };
  for (int i = 0; i < g.dim(); ++i) {
    dump.components.push_back("s_" + axis_name(i));
    dump.data.push_back(slice(env.conductances(), i));
  }
  for (int i = 0; i < g.dim(); ++i) {
    for (int j = i + 1; j < g.dim(); ++j) {
      dump.components.push_back("h_" + axis_name(i) + axis_name(j));
      dump.data.push_back(slice(env.stream_tensor().plaquettes(), StreamTensor::pair_index(g.dim(), i, j)));
    }
  }
  for (int a = 0; a < g.directions(); ++a) {
    dump.components.push_back("v_" + direction_name(a));
    dump.data.push_back(slice(env.flow(), a));
  }
  for (int a = 0; a < g.directions(); ++a) {
    dump.components.push_back("p_" + direction_name(a));
    dump.data.push_back(slice(env.rates(), a));
  }
  dump.meta["kind"] = "environment";
  dump.meta["eps"] = env.stream_tensor().eps();
  dump.meta["env_hash"] = hex64(env.hash());
  dump.meta["validation"] = env.report().to_json();
  if (env.provenance()) {
    dump.meta["seed"] = env.provenance()->seed;
    dump.meta["generator_spec"] = env.provenance()->to_json();
  } else {
    dump.meta["seed"] = nullptr;
    dump.meta["generator_spec"] = nullptr;
  }
  return write_field_dump(stem, dump);
}

TorusEnvironment read_environment(const fs::path& stem) {
  const FieldDump dump = read_field_dump(stem);
  const auto& g = dump.geometry;
  const std::size_t n = g.sites();
  auto find = [&](const std::string& name) -> const std::vector<double>& {
    for (std::size_t c = 0; c < dump.components.size(); ++c) {
      if (dump.components[c] == name) return dump.data[c];
    }
    throw Error(stem.string() + ": missing component " + name);
  };

  ConductanceField s{g, {}};
  for (int i = 0; i < g.dim(); ++i) {
    const auto& c = find("s_" + axis_name(i));
    s.values.insert(s.values.end(), c.begin(), c.end());
  }
  std::vector<double> plaq;
  for (int i = 0; i < g.dim(); ++i) {
    for (int j = i + 1; j < g.dim(); ++j) {
      const auto& c = find("h_" + axis_name(i) + axis_name(j));
      plaq.insert(plaq.end(), c.begin(), c.end());
    }
  }
  const double eps = dump.meta.value("eps", 1.0);
  std::optional<GeneratorSpec> provenance;
  if (dump.meta.contains("generator_spec") && !dump.meta.at("generator_spec").is_null()) {
    provenance = GeneratorSpec::from_json(dump.meta.at("generator_spec"), "generator_spec");
  }
  // The stored tensor is already rescaled; shrink_h is idempotent on it.
  const RescalePolicy policy = provenance ? provenance->rescale : RescalePolicy{RejectNegativeRates{}};
  TorusEnvironment env = assemble_environment(s, StreamTensor(g, std::move(plaq), eps), policy, provenance);

  for (int a = 0; a < g.directions(); ++a) {
    const auto& v = find("v_" + direction_name(a));
    const auto& p = find("p_" + direction_name(a));
    for (Site x = 0; x < n; ++x) {
      if (std::bit_cast<std::uint64_t>(v[x]) != std::bit_cast<std::uint64_t>(env.v(x, a)) ||
          std::bit_cast<std::uint64_t>(p[x]) != std::bit_cast<std::uint64_t>(env.p(x, a))) {
        throw Error(stem.string() + ": stored flow/rates disagree with the rebuilt environment");
      }
    }
  }
  return env;
}

}  // namespace dsre

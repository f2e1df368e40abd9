#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dsre/environment.hpp"
#include "dsre/random.hpp"

namespace dsre::test {

inline TorusEnvironment control_env(int d, int N) {
  GeneratorSpec spec;
  spec.d = d;
  spec.N = N;
  spec.seed = 1;
  return make_environment(spec);
}

/// Non-reversible environment with uniform stream tensor, optionally random
/// conductances in [1, 2].
inline TorusEnvironment random_env(int d, int N, std::uint64_t seed, double h_amp = 1.0,
                                   bool random_s = false) {
  GeneratorSpec spec;
  spec.d = d;
  spec.N = N;
  spec.seed = seed;
  spec.h = UniformLaw{-h_amp, h_amp};
  if (random_s) spec.s = UniformLaw{1.0, 2.0};
  spec.rescale = ShrinkStreamTensor{0.1};
  return make_environment(spec);
}

/// Single excited plaquette h_{12}(0) = value on a d=2 torus.
inline StreamTensor single_plaquette(int N, double value) {
  const TorusGeometry g(2, N);
  std::vector<double> h(g.sites(), 0.0);
  h[0] = value;
  return StreamTensor(g, std::move(h));
}

inline ConductanceField constant_conductance(const TorusGeometry& g, double s) {
  return {g, std::vector<double>(static_cast<std::size_t>(g.dim()) * g.sites(), s)};
}

/// Mean-zero random field from a dedicated stream.
inline std::vector<double> random_zero_mean(std::size_t n, std::uint64_t seed) {
  CounterRng rng(seed, 0x7465737400000000ull);
  std::vector<double> v(n);
  double mean = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    mean += x;
  }
  mean /= static_cast<double>(n);
  for (auto& x : v) x -= mean;
  return v;
}

inline double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Fresh scratch directory removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("dsre_test_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace dsre::test

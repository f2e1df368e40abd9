#include "dsre/fft.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <numbers>
#include <utility>

#include "dsre/error.hpp"

namespace dsre {
namespace {

struct PlanPair {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

// FFTW's planner is not thread-safe; execution of an existing plan on new
// arrays is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

PlanPair plans_for(const TorusGeometry& g) {
  static std::map<std::pair<int, int>, PlanPair> cache;
  std::lock_guard lock(planner_mutex());
  const auto key = std::make_pair(g.dim(), g.side());
  if (auto it = cache.find(key); it != cache.end()) return it->second;

  std::vector<int> dims(static_cast<std::size_t>(g.dim()), g.side());
  auto* in = fftw_alloc_complex(g.sites());
  auto* out = fftw_alloc_complex(g.sites());
  PlanPair p;
  p.forward = fftw_plan_dft(g.dim(), dims.data(), in, out, FFTW_FORWARD, FFTW_ESTIMATE);
  p.inverse = fftw_plan_dft(g.dim(), dims.data(), in, out, FFTW_BACKWARD, FFTW_ESTIMATE);
  fftw_free(in);
  fftw_free(out);
  if (p.forward == nullptr || p.inverse == nullptr) throw InternalError("FFTW planning failed");
  cache.emplace(key, p);
  return p;
}

struct Buffer {
  explicit Buffer(std::size_t n) : data(fftw_alloc_complex(n)) {}
  ~Buffer() { fftw_free(data); }
  Buffer(const Buffer&) = delete;
  Buffer& operator=(const Buffer&) = delete;
  fftw_complex* data;
};

}  // namespace

TorusFft::TorusFft(const TorusGeometry& g) : geometry_(g) {
  const PlanPair p = plans_for(g);
  forward_plan_ = p.forward;
  inverse_plan_ = p.inverse;
}

std::vector<std::complex<double>> TorusFft::forward(std::span<const double> f) const {
  const std::size_t n = geometry_.sites();
  if (f.size() != n) throw PreconditionError("FFT input size does not match geometry");
  Buffer in(n), out(n);
  for (std::size_t i = 0; i < n; ++i) {
    in.data[i][0] = f[i];
    in.data[i][1] = 0.0;
  }
  fftw_execute_dft(static_cast<fftw_plan>(forward_plan_), in.data, out.data);
  std::vector<std::complex<double>> F(n);
  for (std::size_t i = 0; i < n; ++i) F[i] = {out.data[i][0], out.data[i][1]};
  return F;
}

std::vector<double> TorusFft::inverse_real(std::span<const std::complex<double>> F) const {
  const std::size_t n = geometry_.sites();
  if (F.size() != n) throw PreconditionError("FFT input size does not match geometry");
  Buffer in(n), out(n);
  for (std::size_t i = 0; i < n; ++i) {
    in.data[i][0] = F[i].real();
    in.data[i][1] = F[i].imag();
  }
  fftw_execute_dft(static_cast<fftw_plan>(inverse_plan_), in.data, out.data);
  std::vector<double> f(n);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = out.data[i][0] * scale;
  return f;
}

double TorusFft::frequency(long m) const {
  return 2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(geometry_.side());
}

double laplacian_symbol(const TorusGeometry& g, const Coord& m) {
  double s = 0.0;
  for (int j = 0; j < g.dim(); ++j) {
    const double p = 2.0 * std::numbers::pi * static_cast<double>(m[static_cast<std::size_t>(j)]) /
                     static_cast<double>(g.side());
    s += 1.0 - std::cos(p);
  }
  return -4.0 * s;
}

}  // namespace dsre

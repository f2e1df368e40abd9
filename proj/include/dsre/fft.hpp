#pragma once

#include <complex>
#include <span>
#include <vector>

#include "dsre/geometry.hpp"

namespace dsre {

/// Multidimensional complex DFT on a torus, backed by FFTW. Plans are
/// created once per geometry and cached; transforms are safe to call from
/// several threads.
class TorusFft {
 public:
  explicit TorusFft(const TorusGeometry& g);

  /// out(p) = sum_x f(x) e^{-i p.x}
  std::vector<std::complex<double>> forward(std::span<const double> f) const;
  /// Real part of N^{-d} sum_p F(p) e^{+i p.x}
  std::vector<double> inverse_real(std::span<const std::complex<double>> F) const;

  /// Dual-lattice frequency of Fourier index m along one axis, 2 pi m / N.
  double frequency(long m) const;

  /// Multiplies the spectrum by symbol(p) and transforms back.
  template <class Symbol>
  std::vector<double> multiply(std::span<const double> f, Symbol&& symbol) const {
    auto F = forward(f);
    for (Site m = 0; m < geometry_.sites(); ++m) F[m] *= symbol(geometry_.coords(m));
    return inverse_real(F);
  }

  const TorusGeometry& geometry() const { return geometry_; }

 private:
  TorusGeometry geometry_;
  void* forward_plan_ = nullptr;
  void* inverse_plan_ = nullptr;
};

/// Fourier symbol of the lattice Laplacian 2 sum_{k in E} (U_k - I):
/// -4 sum_j (1 - cos p_j). Real, nonpositive, zero only at p = 0.
double laplacian_symbol(const TorusGeometry& g, const Coord& fourier_index);

}  // namespace dsre

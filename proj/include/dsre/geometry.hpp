#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace dsre {

inline constexpr int kMaxDim = 4;

using Site = std::size_t;
/// Lattice coordinates; only the first d entries are meaningful.
using Coord = std::array<long, kMaxDim>;

/// A unit step ±e_axis. Axis is 0-based internally.
struct Direction {
  int axis = 0;
  int sign = 1;

  constexpr Direction operator-() const { return {axis, -sign}; }
  /// Position in the canonical enumeration (+e0, -e0, +e1, -e1, ...).
  constexpr int index() const { return 2 * axis + (sign < 0 ? 1 : 0); }
  constexpr int component(int i) const { return i == axis ? sign : 0; }

  static constexpr Direction from_index(int j) { return {j / 2, (j % 2) != 0 ? -1 : 1}; }

  friend constexpr bool operator==(Direction, Direction) = default;
};

std::string to_string(Direction k);

/// Periodic box {0..N-1}^d, sites indexed lexicographically with the last
/// axis fastest.
class TorusGeometry {
 public:
  TorusGeometry() = default;
  TorusGeometry(int d, int N);

  int dim() const { return d_; }
  int side() const { return n_; }
  std::size_t sites() const { return sites_; }
  int directions() const { return 2 * d_; }
  std::size_t stride(int axis) const { return strides_[static_cast<std::size_t>(axis)]; }

  Coord coords(Site x) const;
  /// Site of arbitrary (possibly negative or out-of-range) coordinates, wrapped.
  Site site(const Coord& c) const;
  Site shift(Site x, Direction k) const;
  Site shift(Site x, const Coord& offset) const;
  /// Minimal-image displacement of y relative to x, each coordinate in [-N/2, N/2).
  Coord min_image(Site from, Site to) const;

  friend bool operator==(const TorusGeometry& a, const TorusGeometry& b) {
    return a.d_ == b.d_ && a.n_ == b.n_;
  }

 private:
  int d_ = 0;
  int n_ = 0;
  std::size_t sites_ = 0;
  std::array<std::size_t, kMaxDim> strides_{};
};

/// Precomputed x -> x + k table, stored site-major: at(x, j).
class NeighborTable {
 public:
  NeighborTable() = default;
  explicit NeighborTable(const TorusGeometry& g);

  Site at(Site x, int dir) const { return table_[x * dirs_ + static_cast<std::size_t>(dir)]; }

 private:
  std::size_t dirs_ = 0;
  std::vector<Site> table_;
};

}  // namespace dsre

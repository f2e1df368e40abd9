#include "dsre/geometry.hpp"

#include "dsre/error.hpp"

namespace dsre {

std::string to_string(Direction k) {
  return std::string(k.sign > 0 ? "+e" : "-e") + std::to_string(k.axis + 1);
}

TorusGeometry::TorusGeometry(int d, int N) : d_(d), n_(N) {
  if (d < 1 || d > kMaxDim) {
    throw PreconditionError("torus dimension must be in [1, 4], got " + std::to_string(d));
  }
  if (N < 2) {
    throw PreconditionError("torus side must be >= 2, got " + std::to_string(N));
  }
  sites_ = 1;
  for (int i = d - 1; i >= 0; --i) {
    strides_[static_cast<std::size_t>(i)] = sites_;
    sites_ *= static_cast<std::size_t>(N);
  }
}

Coord TorusGeometry::coords(Site x) const {
  Coord c{};
  for (int i = 0; i < d_; ++i) {
    c[static_cast<std::size_t>(i)] =
        static_cast<long>((x / strides_[static_cast<std::size_t>(i)]) % static_cast<std::size_t>(n_));
  }
  return c;
}

Site TorusGeometry::site(const Coord& c) const {
  Site x = 0;
  for (int i = 0; i < d_; ++i) {
    long v = c[static_cast<std::size_t>(i)] % n_;
    if (v < 0) v += n_;
    x += static_cast<Site>(v) * strides_[static_cast<std::size_t>(i)];
  }
  return x;
}

Site TorusGeometry::shift(Site x, Direction k) const {
  const std::size_t st = strides_[static_cast<std::size_t>(k.axis)];
  const auto c = static_cast<int>((x / st) % static_cast<std::size_t>(n_));
  if (k.sign > 0) {
    return c == n_ - 1 ? x - static_cast<Site>(n_ - 1) * st : x + st;
  }
  return c == 0 ? x + static_cast<Site>(n_ - 1) * st : x - st;
}

Site TorusGeometry::shift(Site x, const Coord& offset) const {
  Coord c = coords(x);
  for (int i = 0; i < d_; ++i) c[static_cast<std::size_t>(i)] += offset[static_cast<std::size_t>(i)];
  return site(c);
}

Coord TorusGeometry::min_image(Site from, Site to) const {
  const Coord a = coords(from);
  const Coord b = coords(to);
  Coord r{};
  for (int i = 0; i < d_; ++i) {
    const auto u = static_cast<std::size_t>(i);
    long v = ((b[u] - a[u]) % n_ + n_) % n_;
    if (2 * v >= n_) v -= n_;
    r[u] = v;
  }
  return r;
}

NeighborTable::NeighborTable(const TorusGeometry& g)
    : dirs_(static_cast<std::size_t>(g.directions())), table_(g.sites() * dirs_) {
  for (Site x = 0; x < g.sites(); ++x) {
    for (int j = 0; j < g.directions(); ++j) {
      table_[x * dirs_ + static_cast<std::size_t>(j)] = g.shift(x, Direction::from_index(j));
    }
  }
}

}  // namespace dsre

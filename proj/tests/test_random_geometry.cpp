#include <doctest.h>

#include <set>

#include "dsre/fft.hpp"
#include "dsre/geometry.hpp"
#include "dsre/random.hpp"
#include "dsre/util.hpp"

using namespace dsre;

TEST_CASE("philox4x32-10 known-answer vectors") {
  // Reference outputs published with the Random123 distribution.
  using P = Philox4x32;
  CHECK(P::block({0, 0, 0, 0}, {0, 0}) == P::Counter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(P::block({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}) ==
        P::Counter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(P::block({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}) ==
        P::Counter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("counter streams are reproducible and disjoint") {
  CounterRng a(42, 3), b(42, 3), c(42, 4), d(43, 3);
  bool differs_c = false, differs_d = false;
  for (int i = 0; i < 64; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs_c |= x != c.next_u64();
    differs_d |= x != d.next_u64();
  }
  CHECK(differs_c);
  CHECK(differs_d);
}

TEST_CASE("uniform and normal moments") {
  CounterRng rng(9, 0);
  const int n = 200000;
  double su = 0, su2 = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    su += u;
    su2 += u * u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(su / n == doctest::Approx(0.5).epsilon(0.005));
  CHECK(su2 / n == doctest::Approx(1.0 / 3.0).epsilon(0.005));
  CHECK(std::abs(sn / n) < 4.0 / std::sqrt(n));
  CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("torus indexing: last axis fastest, wrapping, minimal image") {
  const TorusGeometry g(3, 5);
  CHECK(g.sites() == 125);
  CHECK(g.site({1, 2, 3, 0}) == 1 * 25 + 2 * 5 + 3);
  CHECK(g.site({-1, 5, 7, 0}) == g.site({4, 0, 2, 0}));
  for (Site x = 0; x < g.sites(); ++x) {
    CHECK(g.site(g.coords(x)) == x);
    for (int j = 0; j < g.directions(); ++j) {
      const Direction k = Direction::from_index(j);
      CHECK(k.index() == j);
      CHECK(g.shift(g.shift(x, k), -k) == x);
    }
  }
  const Coord m = g.min_image(g.site({0, 0, 0, 0}), g.site({4, 2, 3, 0}));
  CHECK(m[0] == -1);
  CHECK(m[1] == 2);
  CHECK(m[2] == -2);

  const NeighborTable nb(g);
  CHECK(nb.at(0, Direction{2, -1}.index()) == g.site({0, 0, 4, 0}));
  CHECK_THROWS(TorusGeometry(5, 4));
  CHECK_THROWS(TorusGeometry(2, 1));
}

TEST_CASE("fft round trip and laplacian symbol") {
  const TorusGeometry g(2, 6);
  const TorusFft fft(g);
  std::vector<double> f(g.sites());
  for (Site x = 0; x < g.sites(); ++x) f[x] = std::sin(0.3 * static_cast<double>(x)) + 0.1 * static_cast<double>(x % 5);
  const auto back = fft.inverse_real(fft.forward(f));
  for (Site x = 0; x < g.sites(); ++x) CHECK(back[x] == doctest::Approx(f[x]).epsilon(1e-13));
  CHECK(laplacian_symbol(g, {0, 0, 0, 0}) == 0.0);
  // p = (pi, pi) on N = 6 is index (3, 3): -4 (2 + 2) = -16.
  CHECK(laplacian_symbol(g, {3, 3, 0, 0}) == doctest::Approx(-16.0));
}

TEST_CASE("parallel_for chunking covers the range exactly once") {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), 7, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) ++hits[i];
  });
  for (int h : hits) CHECK(h == 1);
  CHECK(hex64(0xabcull) == "0000000000000abc");
}

#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "msth/hash_grid.hpp"

using namespace msth;

namespace {

HashGridConfig small3d(int log2 = 12) { return HashGridConfig{3, 4, 2, log2, 4, 32, 0, 0}; }

}  // namespace

TEST_SUITE("hash_grid") {
  TEST_CASE("geometric level resolutions") {
    HashGridConfig c{3, 16, 2, 19, 16, 512, 0, 0};
    const auto r = level_resolutions(c);
    REQUIRE(r.size() == 16);
    CHECK(r.front().spatial == 16);
    CHECK(r.back().spatial == 512);
    const double b = std::exp((std::log(512.0) - std::log(16.0)) / 15.0);
    CHECK(b == doctest::Approx(1.2599).epsilon(1e-4));
    for (int l = 0; l < 16; ++l) {
      CHECK(r[l].spatial == int(std::floor(16 * std::pow(b, l) + 1e-9)));
      if (l) CHECK(r[l].spatial >= r[l - 1].spatial);
    }
    HashGridConfig same{3, 5, 2, 19, 32, 32, 0, 0};
    for (const auto& lv : level_resolutions(same)) CHECK(lv.spatial == 32);
    HashGridConfig one{3, 1, 2, 19, 16, 512, 0, 0};
    REQUIRE(level_resolutions(one).size() == 1);
    CHECK(level_resolutions(one)[0].spatial == 16);
    HashGridConfig four{4, 4, 2, 19, 16, 128, 2, 16};
    const auto t = level_resolutions(four);
    CHECK(t.front().temporal == 2);
    CHECK(t.back().temporal == 16);
  }

  TEST_CASE("hash index values") {
    GridLevel hashed{1000, 0, 1u << 19, false, 0};
    std::vector<std::uint32_t> origin = {0, 0, 0}, x1 = {1, 0, 0};
    CHECK(hash_index(origin, hashed) == 0u);
    CHECK(hash_index(x1, hashed) == 1u);
    std::vector<std::uint32_t> y1 = {0, 1, 0};
    CHECK(hash_index(y1, hashed) == (2654435761u & ((1u << 19) - 1)));
    GridLevel dense{16, 0, 1u << 19, true, 0};
    std::set<std::uint32_t> seen;
    for (std::uint32_t z = 0; z < 16; ++z)
      for (std::uint32_t y = 0; y < 16; ++y)
        for (std::uint32_t x = 0; x < 16; ++x) {
          std::vector<std::uint32_t> p = {x, y, z};
          const auto i = hash_index(p, dense);
          CHECK(i == x + 16 * y + 256 * z);
          seen.insert(i);
        }
    CHECK(seen.size() == 4096);
  }

  TEST_CASE("dense levels are chosen when the lattice fits") {
    HashGrid<float> g(small3d(12), "g");
    for (const auto& lv : g.levels()) {
      const double cells = std::pow(double(lv.resolution), 3);
      CHECK(lv.dense == (cells <= double(1u << 12)));
    }
    CHECK(g.output_dim() == 8);
  }

  TEST_CASE("interpolation identities") {
    HashGrid<double> g(HashGridConfig{3, 1, 1, 12, 5, 5, 0, 0}, "g");
    Rng rng(1);
    g.params.fill_uniform(rng, -1, 1);
    // A point on a lattice corner reads exactly that corner.
    std::vector<double> p = {0.25, 0.5, 0.75}, f(1);
    g.encode(p, 1, f, nullptr);
    const std::uint32_t idx = 1 + 5 * 2 + 25 * 3;
    CHECK(f[0] == doctest::Approx(g.params.values[idx]).epsilon(1e-12));

    // Constant corners interpolate to the constant; linear ramp gives the midpoint.
    for (auto& v : g.params.values) v = 0.7;
    std::vector<double> q = {0.31, 0.62, 0.13};
    g.encode(q, 1, f, nullptr);
    CHECK(f[0] == doctest::Approx(0.7).epsilon(1e-12));
    for (std::uint32_t z = 0; z < 5; ++z)
      for (std::uint32_t y = 0; y < 5; ++y)
        for (std::uint32_t x = 0; x < 5; ++x) g.params.values[x + 5 * y + 25 * z] = x == 2 ? 1.0 : 0.0;
    std::vector<double> mid = {0.375, 0.5, 0.5};
    g.encode(mid, 1, f, nullptr);
    CHECK(f[0] == doctest::Approx(0.5).epsilon(1e-12));
  }

  TEST_CASE("weights form a partition of unity and slots stay in range") {
    for (int dims : {3, 4}) {
      HashGridConfig c = dims == 3 ? small3d(10) : HashGridConfig{4, 4, 2, 10, 4, 64, 2, 8};
      HashGrid<float> g(c, "g");
      Rng rng(dims);
      const std::size_t n = 200;
      std::vector<float> pts(n * dims), f(n * g.output_dim());
      for (auto& v : pts) v = float(rng.uniform());
      EncodeCache<float> cache;
      g.encode(pts, n, f, &cache);
      const int corners = cache.corners();
      for (std::size_t i = 0; i < n; ++i)
        for (int l = 0; l < c.levels; ++l) {
          double s = 0;
          const auto& lv = g.levels()[l];
          for (int k = 0; k < corners; ++k) {
            const std::size_t e = (i * c.levels + l) * corners + k;
            CHECK(cache.weight[e] >= 0.f);
            s += cache.weight[e];
            CHECK(cache.slot[e] >= lv.offset);
            CHECK(cache.slot[e] < lv.offset + lv.slots);
          }
          CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
  }

  TEST_CASE("encoding is continuous across cell faces") {
    HashGrid<double> g(HashGridConfig{4, 3, 2, 8, 4, 40, 2, 9}, "g");
    Rng rng(3);
    g.params.fill_uniform(rng, -1, 1);
    for (const auto& lv : g.levels()) {
      const double face = 3.0 / (lv.resolution - 1);
      std::vector<double> a = {face - 1e-12, 0.3, 0.6, 0.4}, b = {face + 1e-12, 0.3, 0.6, 0.4};
      std::vector<double> fa(g.output_dim()), fb(g.output_dim());
      g.encode(a, 1, fa, nullptr);
      g.encode(b, 1, fb, nullptr);
      for (int k = 0; k < g.output_dim(); ++k) CHECK(fa[k] == doctest::Approx(fb[k]).epsilon(1e-5));
    }
  }

  TEST_CASE("out of range coordinates are clamped and counted") {
    HashGrid<float> g(small3d(), "g");
    std::vector<float> p = {1.5f, -0.2f, 0.5f}, f(g.output_dim());
    g.reset_counters();
    g.encode(p, 1, f, nullptr);
    CHECK(g.clamp_count() == 2);
    std::vector<float> q = {1.f, 0.f, 0.5f}, fq(g.output_dim());
    g.encode(q, 1, fq, nullptr);
    CHECK(f == fq);
  }

  TEST_CASE("backward scatter") {
    HashGrid<double> g(HashGridConfig{3, 2, 1, 12, 5, 9, 0, 0}, "g");
    Rng rng(8);
    g.params.fill_uniform(rng, -1, 1);
    std::vector<double> corner = {0.25, 0.5, 0.75}, f(2), d(2, 0.0);
    EncodeCache<double> cache;
    g.encode(corner, 1, f, &cache);
    g.params.zero_grads();
    g.encode_backward(cache, d);
    for (double v : g.params.grads) CHECK(v == 0.0);

    std::vector<double> gvec = {1.5, -2.0};
    g.encode_backward(cache, gvec);
    int touched = 0;
    for (double v : g.params.grads)
      if (v != 0.0) ++touched;
    CHECK(touched == 2);  // one slot per level

    // Finite differences on random cells.
    std::vector<double> pts = {0.13, 0.77, 0.41, 0.58, 0.22, 0.93};
    std::vector<double> w = {0.3, -0.8, 1.1, 0.4};
    auto loss = [&] {
      std::vector<double> out(4);
      g.encode(pts, 2, out, nullptr);
      double l = 0;
      for (int i = 0; i < 4; ++i) l += w[i] * out[i];
      return l;
    };
    std::vector<double> out(4);
    g.encode(pts, 2, out, &cache);
    g.params.zero_grads();
    g.encode_backward(cache, w);
    for (std::size_t i = 0; i < g.params.size(); ++i) {
      if (g.params.grads[i] == 0.0) continue;
      const double v0 = g.params.values[i];
      g.params.values[i] = v0 + 1e-6;
      const double fp = loss();
      g.params.values[i] = v0 - 1e-6;
      const double fm = loss();
      g.params.values[i] = v0;
      CHECK((fp - fm) / 2e-6 == doctest::Approx(g.params.grads[i]).epsilon(1e-4));
    }
  }

  TEST_CASE("collision statistics") {
    HashGrid<float> g(HashGridConfig{4, 1, 1, 10, 64, 64, 64, 64}, "g");
    std::vector<std::uint32_t> same(4 * 50, 3);
    auto s = g.collision_stats(0, same);
    CHECK(s.distinct_slots == 1);
    CHECK(s.distinct_keys == 1);
    CHECK(s.collision_rate == 0.0);

    HashGrid<float> d(HashGridConfig{3, 1, 1, 12, 16, 16, 0, 0}, "d");
    REQUIRE(d.levels()[0].dense);
    std::vector<std::uint32_t> all;
    for (std::uint32_t z = 0; z < 16; ++z)
      for (std::uint32_t y = 0; y < 16; ++y)
        for (std::uint32_t x = 0; x < 16; ++x) all.insert(all.end(), {x, y, z});
    CHECK(d.collision_stats(0, all).collision_rate == 0.0);
  }

  TEST_CASE("random keys fill slots at the occupancy rate") {
    // Independent oracle: expected occupied fraction of n balls in m bins.
    HashGrid<float> g(HashGridConfig{4, 1, 1, 14, 2048, 2048, 2048, 2048}, "g");
    const std::size_t keys = std::size_t(1) << 15, slots = std::size_t(1) << 14;
    Rng rng(21);
    std::vector<std::uint32_t> pts(keys * 4);
    for (auto& p : pts) p = std::uint32_t(rng.below(2048));
    const auto s = g.collision_stats(0, pts);
    const double expected = 1.0 - std::pow(1.0 - 1.0 / double(slots), double(keys));
    CHECK(std::abs(s.occupied_fraction - expected) < 0.01);
  }
}

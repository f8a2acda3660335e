#include <cmath>
#include <vector>

#include "doctest.h"
#include "msth/render.hpp"

using namespace msth;

namespace {

// Independent transmittance product, no shared code with composite.
double oracle_slab(double sigma, double depth, int n) {
  double T = 1, c = 0;
  const double d = depth / n;
  for (int i = 0; i < n; ++i) {
    const double a = 1 - std::exp(-sigma * d);
    c += T * a;
    T *= 1 - a;
  }
  return c;
}

// Source whose color is constant over time but whose M(r) is a fixed value per pixel column.
class StripSource : public RaySource {
 public:
  void shade(std::span<const Ray> rays, double t, std::span<RayShading> out) const override {
    for (std::size_t i = 0; i < rays.size(); ++i) {
      const bool dyn = rays[i].dir.x > 0.1;
      out[i].rgb = {float(dyn ? t : 0.25), 0.5f, 0.75f};
      out[i].dynamic_weight = dyn ? 0.95f : 0.02f;
    }
  }
};

}  // namespace

TEST_SUITE("render") {
  TEST_CASE("rays through the principal point follow the optical axis") {
    auto cam = look_at_camera({0, 0, -3}, {0, 0, 0}, {0, -1, 0}, 64, 48, 50, 0.5, 5);
    const Ray r = generate_ray(cam, 31.5, 23.5);
    CHECK(r.dir.x == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.dir.z == doctest::Approx(1.0));
    PinholeCamera id;
    id.width = id.height = 1;
    id.fx = id.fy = 1;
    id.cx = id.cy = 0;
    id.pose = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
    const Ray c = generate_ray(id, -0.5, -0.5);
    CHECK(c.dir.x == 0.0);
    CHECK(c.dir.y == 0.0);
    CHECK(c.dir.z == 1.0);
    // Adjacent pixels differ by 1/fx in camera x before normalization.
    const Ray a = generate_ray(id, 0, 0), b = generate_ray(id, 1, 0);
    CHECK(b.dir.x / b.dir.z - a.dir.x / a.dir.z == doctest::Approx(1.0));
    CHECK(b.dir.y / b.dir.z == doctest::Approx(a.dir.y / a.dir.z));
  }

  TEST_CASE("camera validation") {
    auto cam = look_at_camera({0, 0, -3}, {0, 0, 0}, {0, -1, 0}, 8, 8, 10, 0.5, 5);
    CHECK_NOTHROW(cam.validate());
    cam.pose[0] = 2;
    CHECK_THROWS_AS(cam.validate(), ConfigError);
    auto bad = look_at_camera({0, 0, -3}, {0, 0, 0}, {0, -1, 0}, 8, 8, 10, 2, 1);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }

  TEST_CASE("stratified samples") {
    CHECK(stratified_samples(2, 4, 1, nullptr, false)[0] == 3.0);
    const auto s = stratified_samples(0, 1, 4, nullptr, false);
    CHECK(s == std::vector<double>{0.125, 0.375, 0.625, 0.875});
    Rng rng(1);
    for (int k = 0; k < 100; ++k) {
      const auto j = stratified_samples(1, 3, 8, &rng, true);
      for (int i = 0; i < 8; ++i) {
        CHECK(j[i] >= 1 + i * 0.25);
        CHECK(j[i] < 1 + (i + 1) * 0.25);
      }
    }
  }

  TEST_CASE("proposal resampling") {
    const std::vector<double> edges = {0, 0.25, 0.5, 0.75, 1};
    const std::vector<double> uniform = {1, 1, 1, 1};
    const auto u = proposal_resample(edges, uniform, 4);
    for (int i = 0; i < 4; ++i) CHECK(u[i] == doctest::Approx((i + 0.5) / 4));

    const std::vector<double> spike = {0, 0, 5, 0};
    for (double p : proposal_resample(edges, spike, 32, nullptr, 0.0)) {
      CHECK(p >= 0.5);
      CHECK(p <= 0.75);
    }

    const std::vector<double> two_edges = {0, 0.5, 1}, w = {1, 3};
    const double eps = 1e-3;
    const int n = 4000;
    const auto p = proposal_resample(two_edges, w, n, nullptr, eps);
    int second = 0;
    for (double x : p) second += x > 0.5;
    CHECK(double(second) / n == doctest::Approx((3 + eps) / (4 + 2 * eps)).epsilon(1e-3));
    for (int i = 1; i < n; ++i) CHECK(p[i] >= p[i - 1]);

    const std::vector<double> zeros = {0, 0, 0, 0};
    const auto z = proposal_resample(edges, zeros, 4);
    for (int i = 0; i < 4; ++i) CHECK(z[i] == doctest::Approx((i + 0.5) / 4));
  }

  TEST_CASE("composite against Beer-Lambert") {
    for (int n : {8, 64, 512}) {
      std::vector<double> sigma(n, 2.0), rgb(n * 3, 1.0), delta(n, 1.0 / n);
      CompositeResult<double> r;
      composite<double>(sigma, rgb, delta, r);
      CHECK(r.color[0] == doctest::Approx(oracle_slab(2, 1, n)).epsilon(1e-12));
    }
    std::vector<double> sigma(512, 2.0), rgb(512 * 3, 1.0), delta(512, 1.0 / 512);
    CompositeResult<double> r;
    composite<double>(sigma, rgb, delta, r);
    CHECK(std::abs(r.color[0] - (1 - std::exp(-2.0))) < 1e-3);
  }

  TEST_CASE("composite degenerate cases") {
    std::vector<double> zero(5, 0.0), rgb(15, 0.7), delta(5, 0.2);
    CompositeResult<double> r;
    composite<double>(zero, rgb, delta, r);
    CHECK(r.color[0] == 0.0);
    CHECK(r.t_final == 1.0);
    std::vector<double> opaque = {200, 3, 3}, d3 = {0.2, 0.2, 0.2}, c3(9, 1.0);
    composite<double>(opaque, c3, d3, r);
    CHECK(r.weights[0] == doctest::Approx(1.0));
    CHECK(r.weights[1] < 1e-12);
  }

  TEST_CASE("partition of unity and split invariance") {
    Rng rng(4);
    for (int k = 0; k < 1000; ++k) {
      const int n = 1 + int(rng.below(40));
      std::vector<double> sigma(n), rgb(n * 3), delta(n);
      for (auto& v : sigma) v = rng.uniform(0, 20);
      for (auto& v : rgb) v = rng.uniform();
      for (auto& v : delta) v = rng.uniform(0.001, 0.3);
      CompositeResult<double> r;
      composite<double>(sigma, rgb, delta, r);
      double s = r.t_final;
      for (double w : r.weights) {
        CHECK(w >= 0);
        s += w;
      }
      CHECK(std::abs(s - 1) < 1e-6);

      // Split sample 0 into two half-width samples.
      std::vector<double> s2 = sigma, c2 = rgb, d2 = delta;
      s2.insert(s2.begin(), sigma[0]);
      c2.insert(c2.begin(), rgb.begin(), rgb.begin() + 3);
      d2[0] = delta[0] / 2;
      d2.insert(d2.begin(), delta[0] / 2);
      CompositeResult<double> r2;
      composite<double>(s2, c2, d2, r2);
      for (int c = 0; c < 3; ++c) CHECK(std::abs(r2.color[c] - r.color[c]) < 1e-6);
    }
  }

  TEST_CASE("ray aggregates") {
    const std::vector<double> w = {0.5, 0.25}, u = {1, 2};
    CHECK(render_uncertainty<double>(w, u) == 1.0);
    const std::vector<double> w2 = {0.5, 0.5}, m = {1, 0}, ones = {1, 1}, zeros = {0, 0};
    CHECK(render_dynamic_weight<double>(w2, m) == 0.5);
    CHECK(render_dynamic_weight<double>(w2, ones) == 0.0);
    CHECK(render_dynamic_weight<double>(w2, zeros) == 1.0);
  }

  TEST_CASE("incremental video") {
    StripSource src;
    auto cam = look_at_camera({0, 0, -3}, {0, 0, 0}, {0, -1, 0}, 20, 10, 12, 0.5, 5);
    const std::vector<double> times = {0.0, 0.5, 1.0};
    CHECK_THROWS_AS(render_video_incremental(src, cam, times, 0.0), ConfigError);
    CHECK_THROWS_AS(render_video_incremental(src, cam, times, 1.0), ConfigError);

    // Nothing classified dynamic: every frame equals frame 0, speedup = frame count.
    const auto none = render_video_incremental(src, cam, times, 0.5, 2.0);
    CHECK(none.dynamic_pixels == 0);
    for (const auto& f : none.frames) CHECK(f.rgb == none.frames[0].rgb);
    CHECK(none.speedup == doctest::Approx(3.0));

    // Everything dynamic: identical to full rendering.
    const auto all = render_video_incremental(src, cam, times, 0.5, -0.5);
    for (std::size_t f = 0; f < times.size(); ++f) CHECK(all.frames[f].rgb == render_frame(src, cam, times[f]).rgb);

    const auto some = render_video_incremental(src, cam, times, 0.1);
    CHECK(some.epsilon_ray == doctest::Approx(0.9));
    CHECK(some.dynamic_pixels > 0);
    CHECK(some.dynamic_pixels < 200u);
    for (std::size_t f = 0; f < times.size(); ++f) CHECK(some.frames[f].rgb == render_frame(src, cam, times[f]).rgb);
    CHECK(some.speedup == doctest::Approx(600.0 / (200 + 2 * double(some.dynamic_pixels))));
  }

  TEST_CASE("rendering is deterministic across thread counts") {
    StripSource src;
    auto cam = look_at_camera({0, 0, -3}, {0, 0, 0}, {0, -1, 0}, 33, 17, 12, 0.5, 5);
    const auto a = render_frame(src, cam, 0.3, 1);
    const auto b = render_frame(src, cam, 0.3, 4);
    CHECK(a.rgb == b.rgb);
    CHECK(a.dynamic_weight == b.dynamic_weight);
  }
}

#include <cmath>
#include <limits>

#include "doctest.h"
#include "msth/field.hpp"

using namespace msth;

namespace {

FieldConfig tiny(EncodingVariant v = EncodingVariant::masked) {
  FieldConfig c;
  c.grid3d = HashGridConfig{3, 3, 2, 10, 4, 32, 0, 0};
  c.grid4d = HashGridConfig{4, 3, 2, 10, 4, 32, 2, 8};
  c.mask_resolution = 8;
  c.uncertainty_resolution = 8;
  c.density_hidden = 16;
  c.geo_features = 7;
  c.color_hidden = 16;
  c.color_hidden_layers = 1;
  c.variant = v;
  return c;
}

FieldInputs<double> one_point(double x, double y, double z, double t, std::array<double, 3> d = {0, 0, 1}) {
  FieldInputs<double> in;
  in.resize(1);
  in.pos = {x, y, z};
  in.time = {t};
  in.dir = {d[0], d[1], d[2]};
  return in;
}

void randomize(SpaceTimeField<double>& f, std::uint64_t seed) {
  Rng rng(seed);
  f.init(rng, 0.5);
  f.mask_grid.params.fill_uniform(rng, -2, 2);
  f.uncertainty_grid.params.fill_uniform(rng, -1, 1);
}

}  // namespace

TEST_SUITE("field") {
  TEST_CASE("mask activation") {
    SpaceTimeField<double> f(tiny());
    CHECK(f.mask_value({0.3, 0.4, 0.5}) == doctest::Approx(0.5));
    for (auto& v : f.mask_grid.params.values) v = 20;
    CHECK(f.mask_value({0.3, 0.4, 0.5}) >= 1 - 1e-8);
    // Raw corners 0 and 4 along x; interpolate first, then activate.
    const int R = 8;
    for (int z = 0; z < R; ++z)
      for (int y = 0; y < R; ++y)
        for (int x = 0; x < R; ++x) f.mask_grid.params.values[x + R * y + R * R * z] = x == 0 ? 0 : 4;
    CHECK(f.mask_value({0.5 / (R - 1), 0.5, 0.5}) == doctest::Approx(1 / (1 + std::exp(-2.0))).epsilon(1e-12));
    CHECK(1 / (1 + std::exp(-2.0)) == doctest::Approx(0.8808).epsilon(1e-4));
  }

  TEST_CASE("uncertainty activation") {
    SpaceTimeField<double> f(tiny());
    CHECK(f.uncertainty_value({0.2, 0.2, 0.2}) == doctest::Approx(0.03 + std::log(2.0)).epsilon(1e-12));
    CHECK(0.03 + std::log(2.0) == doctest::Approx(0.7231).epsilon(1e-4));
    for (auto& v : f.uncertainty_grid.params.values) v = 5;
    CHECK(f.uncertainty_value({0.2, 0.2, 0.2}) == doctest::Approx(0.03 + 5.0067).epsilon(1e-4));
    for (auto& v : f.uncertainty_grid.params.values) v = -60;
    CHECK(f.uncertainty_value({0.2, 0.2, 0.2}) >= 0.03);
    CHECK(f.uncertainty_value({0.2, 0.2, 0.2}) == doctest::Approx(0.03).epsilon(1e-12));
  }

  TEST_CASE("all-zero parameters") {
    SpaceTimeField<double> f(tiny());
    const auto s = f.query_dynamic({0.5, 0.5, 0.5}, {0, 0, 1}, 0.3);
    CHECK(s.sigma == 1.0);
    for (double c : s.rgb) CHECK(c == 0.5);
  }

  TEST_CASE("density ignores direction") {
    SpaceTimeField<double> f(tiny());
    randomize(f, 1);
    const auto a = f.query_dynamic({0.3, 0.6, 0.2}, {0, 0, 1}, 0.4);
    const double r = 1 / std::sqrt(3.0);
    const auto b = f.query_dynamic({0.3, 0.6, 0.2}, {r, -r, r}, 0.4);
    CHECK(a.sigma == b.sigma);
    CHECK(a.rgb != b.rgb);
  }

  TEST_CASE("blend is linear in the mask") {
    SpaceTimeField<double> f(tiny());
    randomize(f, 2);
    FieldOutputs<double> out;
    FieldCache<double> c;
    f.forward(one_point(0.41, 0.52, 0.63, 0.7), QueryFlags{true, false, false}, out, &c);
    const double m = c.mask[0];
    for (std::size_t k = 0; k < c.enc.size(); ++k) CHECK(c.enc[k] == m * c.h3[k] + (1 - m) * c.h4[k]);

    // m = 0.5 with h3 = [2, 0], h4 = [0, 2] gives [1, 1].
    CHECK(0.5 * 2 + 0.5 * 0 == 1.0);
  }

  TEST_CASE("saturated mask reduces to the static branch") {
    SpaceTimeField<double> f(tiny());
    randomize(f, 3);
    for (auto& v : f.mask_grid.params.values) v = 40;
    const auto s = f.query_static({0.2, 0.7, 0.4}, {0, 1, 0});
    for (double t : {0.0, 0.35, 1.0}) {
      const auto d = f.query_dynamic({0.2, 0.7, 0.4}, {0, 1, 0}, t);
      CHECK(d.sigma == s.sigma);
      CHECK(d.rgb == s.rgb);
    }
  }

  TEST_CASE("fully dynamic mask uses only the 4D table") {
    SpaceTimeField<double> f(tiny());
    randomize(f, 4);
    for (auto& v : f.mask_grid.params.values) v = -40;
    SpaceTimeField<double> g(tiny(EncodingVariant::pure4d));
    auto src = f.param_groups();
    auto dst = g.param_groups();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = *src[i];
    const auto a = f.query_dynamic({0.6, 0.1, 0.8}, {1, 0, 0}, 0.5);
    const auto b = g.query_dynamic({0.6, 0.1, 0.8}, {1, 0, 0}, 0.5);
    CHECK(a.sigma == doctest::Approx(b.sigma).epsilon(1e-12));
  }

  TEST_CASE("variants report their mask") {
    for (auto v : {EncodingVariant::additive, EncodingVariant::pure4d}) {
      SpaceTimeField<double> f(tiny(v));
      randomize(f, 5);
      FieldOutputs<double> out;
      FieldCache<double> c;
      f.forward(one_point(0.5, 0.5, 0.5, 0.5), QueryFlags{true, false, false}, out, &c);
      CHECK(out.mask[0] == 0.0);
      CHECK(f.mask_value({0.5, 0.5, 0.5}) == 0.0);
      if (v == EncodingVariant::additive)
        for (std::size_t k = 0; k < c.enc.size(); ++k) CHECK(c.enc[k] == c.h3[k] + c.h4[k]);
      else
        CHECK(c.enc == c.h4);
    }
  }

  TEST_CASE("static branch never touches 4D storage or the mask") {
    SpaceTimeField<double> f(tiny());
    randomize(f, 6);
    f.zero_grads();
    f.table4d.reset_counters();
    auto in = one_point(0.3, 0.3, 0.7, 0.2);
    FieldOutputs<double> out;
    FieldCache<double> c;
    f.forward(in, QueryFlags{false, true, true}, out, &c);
    FieldGrads<double> g;
    g.sigma_s = {1.0};
    g.rgb_s = {0.3, -0.2, 0.5};
    g.uncertainty = {0.7};
    f.backward(in, c, g);
    CHECK(f.table4d.read_count() == 0);
    for (double v : f.table4d.params.grads) CHECK(v == 0.0);
    for (double v : f.mask_grid.params.grads) CHECK(v == 0.0);
    double s3 = 0, sd = 0, sc = 0, su = 0;
    for (double v : f.table3d.params.grads) s3 += std::abs(v);
    for (double v : f.density_params.grads) sd += std::abs(v);
    for (double v : f.color_params.grads) sc += std::abs(v);
    for (double v : f.uncertainty_grid.params.grads) su += std::abs(v);
    CHECK(s3 > 0);
    CHECK(sd > 0);
    CHECK(sc > 0);
    CHECK(su > 0);
  }

  TEST_CASE("density gradient matches finite differences") {
    for (auto variant : {EncodingVariant::masked, EncodingVariant::additive, EncodingVariant::pure4d}) {
      SpaceTimeField<double> f(tiny(variant));
      randomize(f, 7);
      auto in = one_point(0.37, 0.58, 0.21, 0.66, {0.6, 0.0, 0.8});
      auto objective = [&] {
        FieldOutputs<double> o;
        f.forward(in, QueryFlags{true, false, false}, o, nullptr);
        return o.sigma[0] + 0.3 * o.rgb[0] - 0.7 * o.rgb[2];
      };
      FieldOutputs<double> out;
      FieldCache<double> c;
      f.forward(in, QueryFlags{true, false, false}, out, &c);
      f.zero_grads();
      FieldGrads<double> g;
      g.sigma = {1.0};
      g.rgb = {0.3, 0.0, -0.7};
      f.backward(in, c, g);
      for (auto* group : f.param_groups()) {
        int probed = 0;
        for (std::size_t i = 0; i < group->size() && probed < 12; ++i) {
          if (group->grads[i] == 0.0) continue;
          ++probed;
          const double v0 = group->values[i];
          group->values[i] = v0 + 1e-6;
          const double fp = objective();
          group->values[i] = v0 - 1e-6;
          const double fm = objective();
          group->values[i] = v0;
          const double n = (fp - fm) / 2e-6;
          CHECK(std::abs(n - group->grads[i]) / std::max({std::abs(n), std::abs(group->grads[i]), 1e-6}) < 1e-4);
        }
      }
    }
  }

  TEST_CASE("non-finite outputs are reported with coordinates") {
    SpaceTimeField<double> f(tiny());
    for (auto& v : f.density_params.values) v = std::numeric_limits<double>::quiet_NaN();
    try {
      f.query_dynamic({0.5, 0.25, 0.75}, {0, 0, 1}, 0.5);
      FAIL("expected a NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("0.25") != std::string::npos);
    }
  }

  TEST_CASE("mismatched widths are rejected") {
    FieldConfig c = tiny();
    c.grid4d.features = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
}

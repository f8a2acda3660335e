#include <cmath>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "msth/losses.hpp"

using namespace msth;

namespace {

// O(n^2) distortion straight from the double sum.
double distortion_oracle(const std::vector<double>& w, const std::vector<double>& s,
                         const std::vector<double>& d) {
  double a = 0, b = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    for (std::size_t j = 0; j < w.size(); ++j) a += w[i] * w[j] * std::abs(s[i] - s[j]);
    b += w[i] * w[i] * d[i];
  }
  return a + b / 3;
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("reconstruction") {
    const std::vector<double> pred = {1, 1, 1, 0, 0, 0}, target(6, 0.0);
    std::vector<double> d(6);
    CHECK(recon_loss<double>(std::span(pred).first(3), std::span(target).first(3), 1) == 3.0);
    CHECK(recon_loss<double>(pred, target, 2, d) == 1.5);
    CHECK(d[0] == 1.0);
    CHECK(d[3] == 0.0);
  }

  TEST_CASE("uncertainty loss") {
    const std::vector<double> pred = {1, 0, 0}, target = {0, 0, 0};
    std::vector<double> dp(3), du(1);
    std::vector<double> U = {1.0};
    CHECK(uncertainty_loss<double>(pred, target, U, 1, 0.01, dp, du) == doctest::Approx(0.5));
    CHECK(du[0] == doctest::Approx(0.0));
    CHECK(dp[0] == doctest::Approx(1.0));
    U = {2.0};
    CHECK(uncertainty_loss<double>(pred, target, U, 1, 0.01, dp, du) ==
          doctest::Approx(1.0 / 8 + std::log(2.0)));
    CHECK(du[0] == doctest::Approx(-1.0 / 8 + 0.5));
    U = {1e-4};
    const double floored = uncertainty_loss<double>(pred, target, U, 1, 0.01, dp, du);
    CHECK(floored == doctest::Approx(1 / (2 * 1e-4) + std::log(0.01)));
    CHECK(du[0] == 0.0);

    // Optimum over U is U = |e| / sqrt(per-channel count); check by FD.
    Rng rng(3);
    std::vector<double> p(12), tg(12), u(4), dpp(12), duu(4);
    for (auto& v : p) v = rng.uniform();
    for (auto& v : tg) v = rng.uniform();
    for (auto& v : u) v = rng.uniform(0.1, 1);
    uncertainty_loss<double>(p, tg, u, 4, 0.01, dpp, duu);
    for (int i = 0; i < 4; ++i) {
      auto up = u, dn = u;
      up[i] += 1e-6;
      dn[i] -= 1e-6;
      const double fd = (uncertainty_loss<double>(p, tg, up, 4, 0.01) -
                         uncertainty_loss<double>(p, tg, dn, 4, 0.01)) / 2e-6;
      CHECK(duu[i] == doctest::Approx(fd).epsilon(1e-6));
    }
  }

  TEST_CASE("mask sparsity") {
    const std::vector<double> m = {0.2, 0.6};
    std::vector<double> d(2);
    CHECK(mask_sparsity_loss<double>(m, d) == doctest::Approx(0.6));
    CHECK(d[0] == -0.5);
    CHECK(d[1] == -0.5);
  }

  TEST_CASE("distortion") {
    const std::vector<double> w = {0.5, 0.5}, s = {0.25, 0.75}, d = {0.5, 0.5};
    CHECK(distortion_loss<double>(w, s, d) == doctest::Approx(0.25 + 0.25 / 3));
    const std::vector<double> one = {1.0}, mid = {0.5}, full = {1.0};
    CHECK(distortion_loss<double>(one, mid, full) == doctest::Approx(1.0 / 3));
    const std::vector<double> zero(2, 0.0);
    CHECK(distortion_loss<double>(zero, s, d) == 0.0);

    Rng rng(9);
    for (int k = 0; k < 50; ++k) {
      const int n = 1 + int(rng.below(30));
      std::vector<double> ww(n), ss(n), dd(n), g(n);
      double acc = 0;
      for (int i = 0; i < n; ++i) {
        ww[i] = rng.uniform();
        dd[i] = rng.uniform(0.01, 0.1);
        ss[i] = acc + dd[i] / 2;
        acc += dd[i];
      }
      const double L = distortion_loss<double>(ww, ss, dd, g);
      CHECK(L == doctest::Approx(distortion_oracle(ww, ss, dd)).epsilon(1e-12));
      for (int i = 0; i < n; ++i) {
        auto up = ww, dn = ww;
        up[i] += 1e-6;
        dn[i] -= 1e-6;
        const double fd = (distortion_oracle(up, ss, dd) - distortion_oracle(dn, ss, dd)) / 2e-6;
        CHECK(g[i] == doctest::Approx(fd).epsilon(1e-6));
      }
    }
  }

  TEST_CASE("total loss and weights") {
    LossRecord r;
    r.L_r = 1;
    r.L_u = 2;
    r.I = 3;
    r.L_mask = 4;
    r.L_dist = 5;
    r.L_prop = 6;
    LossWeights w;
    CHECK(w.lambda_u == 3e-5);
    CHECK(w.gamma == 3e-4);
    CHECK(w.lambda_dist == 2e-2);
    const double expect = 1 + 3e-5 * 2 - 3e-4 * 3 + w.lambda_mask * 4 + 2e-2 * 5 + w.lambda_prop * 6;
    CHECK(total_loss(r, w) == doctest::Approx(expect).epsilon(1e-15));
    w.gamma = -1;
    CHECK_THROWS_AS(w.validate(), ConfigError);

    r.step = 12;
    const auto j = nlohmann::json::parse(r.to_json());
    CHECK(j["step"] == 12);
    CHECK(j["I"] == 3.0);
    for (const char* k : {"L_r", "L_u", "I", "L_mask", "L_dist", "L_prop", "total"}) CHECK(j.contains(k));
  }
}

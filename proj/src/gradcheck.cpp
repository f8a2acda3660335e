#include "msth/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "msth/pipeline.hpp"

namespace msth {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

namespace {

// Probes the largest-gradient coordinates plus random others with central differences.
GradCheckResult probe(const std::string& suite, const std::string& group, std::vector<double>& x,
                      const std::vector<double>& analytic, const std::function<double()>& f,
                      const GradCheckOptions& opt, Rng& rng) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(analytic[a]) > std::abs(analytic[b]); });
  std::vector<std::size_t> pick;
  const std::size_t top = std::min<std::size_t>(idx.size(), std::size_t(opt.per_group) / 2);
  pick.assign(idx.begin(), idx.begin() + top);
  while (pick.size() < std::min<std::size_t>(x.size(), std::size_t(opt.per_group))) {
    const std::size_t i = rng.below(x.size());
    if (std::find(pick.begin(), pick.end(), i) == pick.end()) pick.push_back(i);
  }
  GradCheckResult r{suite, group, 0, 0.0, 0.0};
  for (std::size_t i : pick) {
    const double x0 = x[i];
    x[i] = x0 + opt.step;
    const double fp = f();
    x[i] = x0 - opt.step;
    const double fm = f();
    x[i] = x0;
    const double numeric = (fp - fm) / (2 * opt.step);
    r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic[i], numeric));
    r.max_abs_grad = std::max(r.max_abs_grad, std::abs(analytic[i]));
    ++r.checked;
  }
  return r;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.bounds = Aabb{{-1, -1, -1}, {1, 1, 1}};
  auto& f = c.field;
  f.grid3d = HashGridConfig{3, 2, 2, 8, 4, 16, 0, 0};
  f.grid4d = HashGridConfig{4, 2, 2, 8, 4, 16, 2, 4};
  f.mask_resolution = 8;
  f.uncertainty_resolution = 8;
  f.density_hidden = 8;
  f.geo_features = 4;
  f.color_hidden = 8;
  f.color_hidden_layers = 1;
  f.sh_degree = 2;
  c.proposal.spatial_resolution = 4;
  c.proposal.st_resolution = 4;
  c.proposal.time_resolution = 2;
  c.mine.hidden = 8;
  return c;
}

}  // namespace

std::vector<GradCheckResult> grad_check_pipeline(const GradCheckOptions& opt) {
  Rng rng(opt.seed);
  Model<double> model(tiny_config());
  model.init(rng);
  // Move everything away from the all-zero initialization so every branch carries signal.
  for (auto* g : model.param_groups()) {
    if (g->name == "table3d" || g->name == "table4d") g->fill_uniform(rng, -0.5, 0.5);
    if (g->name == "mask") g->fill_uniform(rng, -1.5, 1.5);
    if (g->name == "uncertainty") g->fill_uniform(rng, -1.0, 1.0);
    if (g->name.rfind("proposal", 0) == 0) g->fill_uniform(rng, -0.5, 0.5);
  }

  RayBatch batch;
  const Vec3 eye{0.3, -0.2, -3.0};
  for (int r = 0; r < 2; ++r) {
    const Vec3 target{0.2 * r - 0.1, 0.15 - 0.1 * r, 0.1};
    batch.rays.push_back({eye, normalize(target - eye), 0.5, 6.0});
    batch.times.push_back(0.3 + 0.4 * r);
    for (int c = 0; c < 3; ++c) batch.target.push_back(rng.uniform(0.1, 0.9));
  }

  PassOptions po;
  po.n_samples = 4;
  po.n_proposal = 4;
  po.jitter = false;
  po.update_ema = false;
  po.mine_samples = 8;
  // Weights large enough that every term is visible next to finite-difference noise.
  // The proposal loss is excluded: its targets are detached main weights.
  po.weights.lambda_u = 0.5;
  po.weights.gamma = 0.3;
  po.weights.lambda_mask = 0.2;
  po.weights.lambda_dist = 0.2;
  po.weights.lambda_prop = 0.0;

  auto loss = [&] {
    PassOptions o = po;
    o.backward = false;
    Rng a(opt.seed + 1), b(opt.seed + 2);
    return run_batch(model, batch, o, a, b).total;
  };
  model.zero_grads();
  {
    Rng a(opt.seed + 1), b(opt.seed + 2);
    run_batch(model, batch, po, a, b);
  }
  std::vector<GradCheckResult> out;
  for (auto* g : model.param_groups()) {
    if (g->name.rfind("proposal", 0) == 0) continue;
    const std::vector<double> analytic = g->grads;
    out.push_back(probe("pipeline", g->name, g->values, analytic, loss, opt, rng));
  }
  return out;
}

std::vector<GradCheckResult> grad_check_components(const GradCheckOptions& opt) {
  Rng rng(opt.seed + 100);
  std::vector<GradCheckResult> out;
  const int n = 16;

  {  // compositing: L = sum_c g_c C_c + sum_i h_i w_i
    std::vector<double> sigma(n), rgb(n * 3), delta(n), gc(3), gw(n);
    for (auto& v : sigma) v = rng.uniform(0.0, 3.0);
    for (auto& v : rgb) v = rng.uniform();
    for (auto& v : delta) v = rng.uniform(0.05, 0.2);
    for (auto& v : gc) v = rng.uniform(-1.0, 1.0);
    for (auto& v : gw) v = rng.uniform(-1.0, 1.0);
    auto f = [&] {
      CompositeResult<double> res;
      composite<double>(sigma, rgb, delta, res);
      double l = 0;
      for (int c = 0; c < 3; ++c) l += gc[c] * res.color[c];
      for (int i = 0; i < n; ++i) l += gw[i] * res.weights[i];
      return l;
    };
    CompositeResult<double> res;
    composite<double>(sigma, rgb, delta, res);
    std::vector<double> ds(n), drgb(n * 3);
    composite_backward<double>(sigma, rgb, delta, res, gc.data(), gw, ds, drgb);
    out.push_back(probe("composite", "sigma", sigma, ds, f, opt, rng));
    out.push_back(probe("composite", "rgb", rgb, drgb, f, opt, rng));
  }

  {  // distortion
    std::vector<double> w(n), s(n), delta(n, 1.0 / n), dw(n);
    for (int i = 0; i < n; ++i) {
      w[i] = rng.uniform(0.0, 0.2);
      s[i] = (i + 0.5) / n;
    }
    auto f = [&] { return distortion_loss<double>(w, s, delta); };
    distortion_loss<double>(w, s, delta, dw);
    out.push_back(probe("distortion", "w", w, dw, f, opt, rng));
  }

  {  // uncertainty loss
    const std::size_t rays = 6;
    std::vector<double> pred(rays * 3), target(rays * 3), U(rays), dp(rays * 3), du(rays);
    for (auto& v : pred) v = rng.uniform();
    for (auto& v : target) v = rng.uniform();
    for (auto& v : U) v = rng.uniform(0.1, 1.0);
    auto f = [&] { return uncertainty_loss<double>(pred, target, U, rays, 1e-2); };
    uncertainty_loss<double>(pred, target, U, rays, 1e-2, dp, du);
    out.push_back(probe("uncertainty_loss", "pred_static", pred, dp, f, opt, rng));
    out.push_back(probe("uncertainty_loss", "U", U, du, f, opt, rng));
  }

  {  // MINE with the exact denominator gradient
    MineConfig mc;
    mc.hidden = 8;
    MineEstimator<double> est(mc);
    Rng init(opt.seed + 5);
    est.init(init);
    const std::size_t k = 32;
    std::vector<double> m(k), u(k), dm(k), du(k);
    for (std::size_t i = 0; i < k; ++i) {
      m[i] = rng.uniform();
      u[i] = 0.5 * m[i] + 0.3 * rng.uniform();
    }
    auto f = [&] {
      Rng r(opt.seed + 9);
      return est.evaluate(m, u, r, 0.0, {}, {}, false).estimate;
    };
    est.params.zero_grads();
    {
      Rng r(opt.seed + 9);
      est.evaluate(m, u, r, 1.0, dm, du, false);
    }
    const std::vector<double> dcrit = est.params.grads;
    out.push_back(probe("mine", "critic", est.params.values, dcrit, f, opt, rng));
    out.push_back(probe("mine", "m", m, dm, f, opt, rng));
    out.push_back(probe("mine", "u", u, du, f, opt, rng));
  }
  return out;
}

}  // namespace msth

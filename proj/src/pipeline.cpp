#include "msth/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace msth {

template <class Real>
Model<Real>::Model(const ModelConfig& config)
    : field(config.field), proposal(config.proposal), mine(config.mine), config_(config) {}

template <class Real>
void Model<Real>::init(Rng& rng) {
  Rng field_rng = rng.split(1), mine_rng = rng.split(2);
  field.init(field_rng);
  proposal.init();
  mine.init(mine_rng);
}

template <class Real>
std::vector<ParamBuffer<Real>*> Model<Real>::param_groups() {
  auto g = field.param_groups();
  for (auto* p : proposal.param_groups()) g.push_back(p);
  g.push_back(&mine.params);
  return g;
}

template <class Real>
std::vector<const ParamBuffer<Real>*> Model<Real>::param_groups() const {
  auto g = field.param_groups();
  for (auto* p : proposal.param_groups()) g.push_back(p);
  g.push_back(&mine.params);
  return g;
}

template <class Real>
void Model<Real>::zero_grads() {
  for (auto* g : param_groups()) g->zero_grads();
}

ActiveTerms active_terms(EncodingVariant variant, const LossWeights& w) {
  ActiveTerms t;
  const bool has3d = variant != EncodingVariant::pure4d;
  const bool masked = variant == EncodingVariant::masked;
  t.static_branch = has3d && w.lambda_u > 0;
  t.mine = masked && w.gamma > 0;
  t.uncertainty = t.static_branch || t.mine;
  t.mask = masked && w.lambda_mask > 0;
  t.distortion = w.lambda_dist > 0;
  t.proposal = w.lambda_prop > 0;
  return t;
}

bool clip_ray(const Ray& ray, const Aabb& box, double& a, double& b) {
  if (!intersect_aabb(ray.origin, ray.dir, box, a, b)) return false;
  a = std::max(a, ray.near);
  b = std::min(b, ray.far);
  return b > a;
}

namespace {

// Sample placement for a batch: valid rays only, fixed counts per ray.
template <class Real>
struct Plan {
  std::vector<std::size_t> rays;  // indices of valid rays
  std::vector<double> a, b;       // per valid ray
  int np = 0, n = 0;

  std::vector<Real> p_pos, p_time, p_sigma, p_delta;  // proposal samples
  ProposalCache<Real> p_cache;
  std::vector<CompositeResult<Real>> p_comp;

  std::vector<double> s;       // main sample distances, valid rays x n
  std::vector<Real> delta;     // main interval widths
  FieldInputs<Real> in;
};

template <class Real>
void put_point(const Aabb& box, const Ray& ray, double s, double t, Real* pos, Real* time) {
  const Vec3 u = box.normalize_point(ray.origin + s * ray.dir);
  pos[0] = Real(std::clamp(u.x, 0.0, 1.0));
  pos[1] = Real(std::clamp(u.y, 0.0, 1.0));
  pos[2] = Real(std::clamp(u.z, 0.0, 1.0));
  *time = Real(t);
}

template <class Real>
void build_plan(const Model<Real>& model, std::span<const Ray> rays, std::span<const double> times,
                int np, int n, Rng* jitter, double eps_w, bool keep_cache, Plan<Real>& plan) {
  const Aabb& box = model.config().bounds;
  plan.np = np;
  plan.n = n;
  plan.rays.clear();
  plan.a.clear();
  plan.b.clear();
  for (std::size_t r = 0; r < rays.size(); ++r) {
    double a, b;
    if (!clip_ray(rays[r], box, a, b)) continue;
    plan.rays.push_back(r);
    plan.a.push_back(a);
    plan.b.push_back(b);
  }
  const std::size_t V = plan.rays.size();

  plan.p_pos.resize(V * np * 3);
  plan.p_time.resize(V * np);
  plan.p_delta.resize(V * np);
  for (std::size_t k = 0; k < V; ++k) {
    const Ray& ray = rays[plan.rays[k]];
    const auto s = stratified_samples(plan.a[k], plan.b[k], np, jitter, jitter != nullptr);
    const Real d = Real((plan.b[k] - plan.a[k]) / np);
    for (int i = 0; i < np; ++i) {
      const std::size_t j = k * np + i;
      put_point(box, ray, s[i], times[plan.rays[k]], &plan.p_pos[j * 3], &plan.p_time[j]);
      plan.p_delta[j] = d;
    }
  }
  model.proposal.forward(plan.p_pos, plan.p_time, V * np, plan.p_sigma,
                         keep_cache ? &plan.p_cache : nullptr);

  plan.p_comp.resize(V);
  plan.s.resize(V * n);
  plan.delta.resize(V * n);
  plan.in.resize(V * n);
  std::vector<double> edges(np + 1), w(np), pos, main_edges;
  for (std::size_t k = 0; k < V; ++k) {
    const Ray& ray = rays[plan.rays[k]];
    auto& comp = plan.p_comp[k];
    composite<Real>(std::span<const Real>(plan.p_sigma.data() + k * np, np), {},
                    std::span<const Real>(plan.p_delta.data() + k * np, np), comp);
    for (int i = 0; i <= np; ++i) edges[i] = plan.a[k] + (plan.b[k] - plan.a[k]) * i / np;
    for (int i = 0; i < np; ++i) w[i] = double(comp.weights[i]);
    proposal_resample_intervals(edges, w, n, jitter, eps_w, pos, main_edges);
    for (int i = 0; i < n; ++i) {
      const std::size_t j = k * n + i;
      plan.s[j] = pos[i];
      plan.delta[j] = Real(main_edges[i + 1] - main_edges[i]);
      put_point(box, ray, pos[i], times[plan.rays[k]], &plan.in.pos[j * 3], &plan.in.time[j]);
      plan.in.dir[j * 3] = Real(ray.dir.x);
      plan.in.dir[j * 3 + 1] = Real(ray.dir.y);
      plan.in.dir[j * 3 + 2] = Real(ray.dir.z);
    }
  }
}

template <class Real>
std::span<const Real> row(const std::vector<Real>& v, std::size_t k, std::size_t n,
                          std::size_t width = 1) {
  return std::span<const Real>(v.data() + k * n * width, n * width);
}

}  // namespace

template <class Real>
LossRecord run_batch(Model<Real>& model, const RayBatch& batch, const PassOptions& opt,
                     Rng& sample_rng, Rng& mine_rng) {
  const std::size_t R = batch.size();
  if (R == 0) throw ConfigError("run_batch: empty batch");
  const ActiveTerms terms = active_terms(model.config().field.variant, opt.weights);
  const LossWeights& lw = opt.weights;
  const int n = opt.n_samples, np = opt.n_proposal;

  Plan<Real> plan;
  build_plan(model, batch.rays, batch.times, np, n, opt.jitter ? &sample_rng : nullptr, opt.eps_w,
             opt.backward && terms.proposal, plan);
  const std::size_t V = plan.rays.size(), N = V * std::size_t(n);

  QueryFlags flags;
  flags.dynamic = true;
  flags.static_branch = terms.static_branch;
  flags.uncertainty = terms.uncertainty;
  FieldOutputs<Real> fo;
  FieldCache<Real> fc;
  model.field.forward(plan.in, flags, fo, &fc);

  // Main and static quadrature per ray.
  std::vector<Real> pred(R * 3, Real(0)), target(R * 3);
  for (std::size_t i = 0; i < R * 3; ++i) target[i] = Real(batch.target[i]);
  std::vector<CompositeResult<Real>> comp(V), comp_s(terms.static_branch ? V : 0);
  std::vector<Real> pred_s(V * 3), U(V), tgt_v(V * 3);
  for (std::size_t k = 0; k < V; ++k) {
    composite<Real>(row(fo.sigma, k, n), row(fo.rgb, k, n, 3), row(plan.delta, k, n), comp[k]);
    for (int c = 0; c < 3; ++c) {
      pred[plan.rays[k] * 3 + c] = comp[k].color[c];
      tgt_v[k * 3 + c] = target[plan.rays[k] * 3 + c];
    }
    if (terms.static_branch) {
      composite<Real>(row(fo.sigma_s, k, n), row(fo.rgb_s, k, n, 3), row(plan.delta, k, n),
                      comp_s[k]);
      for (int c = 0; c < 3; ++c) pred_s[k * 3 + c] = comp_s[k].color[c];
      U[k] = render_uncertainty<Real>(comp_s[k].weights, row(fo.uncertainty, k, n));
    }
  }

  const bool bw = opt.backward;
  LossRecord rec;
  std::vector<Real> d_pred(bw ? R * 3 : 0);
  rec.L_r = double(recon_loss<Real>(pred, target, R, d_pred));

  std::vector<Real> d_pred_s, d_U;
  if (terms.static_branch && V > 0) {
    if (bw) {
      d_pred_s.resize(V * 3);
      d_U.resize(V);
    }
    rec.L_u = double(
        uncertainty_loss<Real>(pred_s, tgt_v, U, V, Real(opt.u_floor), d_pred_s, d_U));
  }

  FieldGrads<Real> fg;
  if (bw) {
    fg.sigma.assign(N, Real(0));
    fg.rgb.assign(N * 3, Real(0));
  }
  if (terms.mask && N > 0) {
    if (bw) fg.mask.assign(N, Real(0));
    rec.L_mask = double(mask_sparsity_loss<Real>(fo.mask, fg.mask));
    if (bw)
      for (auto& g : fg.mask) g *= Real(lw.lambda_mask);
  }
  if (bw && terms.uncertainty) fg.uncertainty.assign(N, Real(0));

  if (terms.mine && N >= 2) {
    const std::size_t K = std::min<std::size_t>(std::max(2, opt.mine_samples), N);
    std::vector<std::uint32_t> idx(N);
    std::iota(idx.begin(), idx.end(), 0u);
    for (std::size_t i = 0; i < K; ++i)
      std::swap(idx[i], idx[i + std::size_t(mine_rng.below(N - i))]);
    std::vector<Real> ms(K), us(K), dm(bw ? K : 0, Real(0)), du(bw ? K : 0, Real(0));
    for (std::size_t i = 0; i < K; ++i) {
      ms[i] = fo.mask[idx[i]];
      us[i] = fo.uncertainty[idx[i]];
    }
    const auto mr = model.mine.evaluate(ms, us, mine_rng, bw ? Real(-lw.gamma) : Real(0), dm, du,
                                        opt.update_ema);
    rec.I = double(mr.estimate);
    if (bw) {
      if (fg.mask.empty()) fg.mask.assign(N, Real(0));
      for (std::size_t i = 0; i < K; ++i) {
        fg.mask[idx[i]] += dm[i];
        fg.uncertainty[idx[i]] += du[i];
      }
    }
  }

  // Distortion and proposal matching, per ray, averaged over valid rays.
  const Real inv_v = V ? Real(1) / Real(V) : Real(0);
  std::vector<Real> d_w(n), sn(n), dn(n), d_sigma_p(bw && terms.proposal ? V * np : 0);
  std::vector<Real> binned(np), d_wp(np);
  double L_dist = 0, L_prop = 0;
  for (std::size_t k = 0; k < V; ++k) {
    const double len = plan.b[k] - plan.a[k];
    std::fill(d_w.begin(), d_w.end(), Real(0));
    if (terms.distortion) {
      for (int i = 0; i < n; ++i) {
        sn[i] = Real((plan.s[k * n + i] - plan.a[k]) / len);
        dn[i] = Real(double(plan.delta[k * n + i]) / len);
      }
      L_dist += double(distortion_loss<Real>(comp[k].weights, sn, dn, bw ? d_w : std::span<Real>{}));
      for (auto& g : d_w) g *= Real(lw.lambda_dist) * inv_v;
    }
    if (terms.proposal) {
      std::fill(binned.begin(), binned.end(), Real(0));
      for (int i = 0; i < n; ++i) {
        const int bin = std::clamp(int((plan.s[k * n + i] - plan.a[k]) / len * np), 0, np - 1);
        binned[bin] += comp[k].weights[i];
      }
      const auto& wp = plan.p_comp[k].weights;
      for (int j = 0; j < np; ++j) {
        const Real e = wp[j] - binned[j];
        L_prop += double(e * e);
        d_wp[j] = Real(2) * e * Real(lw.lambda_prop) * inv_v;
      }
      if (bw) {
        composite_backward<Real>(row(plan.p_sigma, k, np), {}, row(plan.p_delta, k, np),
                                 plan.p_comp[k], nullptr, d_wp,
                                 std::span<Real>(d_sigma_p.data() + k * np, np), {});
      }
    }
    if (!bw) continue;
    Real dc[3];
    for (int c = 0; c < 3; ++c) dc[c] = d_pred[plan.rays[k] * 3 + c];
    composite_backward<Real>(row(fo.sigma, k, n), row(fo.rgb, k, n, 3), row(plan.delta, k, n),
                             comp[k], dc, d_w, std::span<Real>(fg.sigma.data() + k * n, n),
                             std::span<Real>(fg.rgb.data() + k * n * 3, n * 3));
    if (terms.static_branch) {
      if (fg.sigma_s.empty()) {
        fg.sigma_s.assign(N, Real(0));
        fg.rgb_s.assign(N * 3, Real(0));
      }
      const Real dU = d_U[k] * Real(lw.lambda_u);
      std::vector<Real> d_ws(n);
      for (int i = 0; i < n; ++i) {
        d_ws[i] = dU * fo.uncertainty[k * n + i];
        fg.uncertainty[k * n + i] += dU * comp_s[k].weights[i];
      }
      Real dcs[3];
      for (int c = 0; c < 3; ++c) dcs[c] = d_pred_s[k * 3 + c] * Real(lw.lambda_u);
      composite_backward<Real>(row(fo.sigma_s, k, n), row(fo.rgb_s, k, n, 3),
                               row(plan.delta, k, n), comp_s[k], dcs, d_ws,
                               std::span<Real>(fg.sigma_s.data() + k * n, n),
                               std::span<Real>(fg.rgb_s.data() + k * n * 3, n * 3));
    }
  }
  if (V) {
    rec.L_dist = L_dist / double(V);
    rec.L_prop = L_prop / double(V);
  }
  if (!terms.distortion) rec.L_dist = 0;
  rec.total = total_loss(rec, lw);

  if (bw) {
    model.field.backward(plan.in, fc, fg);
    if (terms.proposal && V) model.proposal.backward(plan.p_cache, d_sigma_p);
  }
  return rec;
}

template <class Real>
void ModelSource<Real>::shade(std::span<const Ray> rays, double t, std::span<RayShading> out) const {
  const std::size_t R = rays.size();
  std::vector<double> times(R, t);
  Plan<Real> plan;
  build_plan(model_, rays, times, np_, n_, nullptr, 1e-3, false, plan);
  FieldOutputs<Real> fo;
  model_.field.forward(plan.in, QueryFlags{true, false, false}, fo, nullptr);
  for (auto& o : out.first(R)) o = RayShading{};
  CompositeResult<Real> comp;
  for (std::size_t k = 0; k < plan.rays.size(); ++k) {
    composite<Real>(row(fo.sigma, k, n_), row(fo.rgb, k, n_, 3), row(plan.delta, k, n_), comp);
    RayShading& o = out[plan.rays[k]];
    for (int c = 0; c < 3; ++c) o.rgb[c] = float(comp.color[c]);
    double depth = 0;
    for (int i = 0; i < n_; ++i) depth += double(comp.weights[i]) * plan.s[k * n_ + i];
    o.depth = float(depth);
    o.dynamic_weight = float(render_dynamic_weight<Real>(comp.weights, row(fo.mask, k, n_)));
  }
}

template <class Real>
void ModelSource<Real>::dynamic_scores(std::span<const Ray> rays, double t,
                                       std::span<double> out) const {
  const Aabb& box = model_.config().bounds;
  std::vector<std::size_t> valid;
  std::vector<double> a, b;
  for (std::size_t r = 0; r < rays.size(); ++r) {
    out[r] = 0;
    double lo, hi;
    if (!clip_ray(rays[r], box, lo, hi)) continue;
    valid.push_back(r);
    a.push_back(lo);
    b.push_back(hi);
  }
  const std::size_t V = valid.size();
  FieldInputs<Real> in;
  in.resize(V * nc_);
  for (std::size_t k = 0; k < V; ++k) {
    const Ray& ray = rays[valid[k]];
    const auto s = stratified_samples(a[k], b[k], nc_, nullptr, false);
    for (int i = 0; i < nc_; ++i) {
      const std::size_t j = k * nc_ + i;
      put_point(box, ray, s[i], t, &in.pos[j * 3], &in.time[j]);
      in.dir[j * 3] = Real(ray.dir.x);
      in.dir[j * 3 + 1] = Real(ray.dir.y);
      in.dir[j * 3 + 2] = Real(ray.dir.z);
    }
  }
  FieldOutputs<Real> fo;
  model_.field.forward(in, QueryFlags{true, false, false}, fo, nullptr);
  for (std::size_t k = 0; k < V; ++k) {
    const double delta = (b[k] - a[k]) / nc_;
    double T = 1, best = 0;
    for (int i = 0; i < nc_; ++i) {
      const std::size_t j = k * nc_ + i;
      best = std::max(best, T * (1.0 - double(fo.mask[j])));
      T *= std::exp(-double(fo.sigma[j]) * delta);
    }
    out[valid[k]] = best;
  }
}

template class Model<float>;
template class Model<double>;
template class ModelSource<float>;
template class ModelSource<double>;
template LossRecord run_batch(Model<float>&, const RayBatch&, const PassOptions&, Rng&, Rng&);
template LossRecord run_batch(Model<double>&, const RayBatch&, const PassOptions&, Rng&, Rng&);

}  // namespace msth

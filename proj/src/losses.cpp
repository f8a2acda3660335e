#include "msth/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace msth {

template <class Real>
Real recon_loss(std::span<const Real> pred, std::span<const Real> target, std::size_t rays,
                std::span<Real> d_pred) {
  if (rays == 0) return Real(0);
  Real sum = 0;
  const Real inv = Real(1) / Real(rays);
  for (std::size_t i = 0; i < rays * 3; ++i) {
    const Real e = pred[i] - target[i];
    sum += e * e;
    if (!d_pred.empty()) d_pred[i] = Real(2) * e * inv;
  }
  return sum * inv;
}

template <class Real>
Real uncertainty_loss(std::span<const Real> pred_static, std::span<const Real> target,
                      std::span<const Real> U, std::size_t rays, Real u_floor,
                      std::span<Real> d_pred_static, std::span<Real> d_U) {
  if (rays == 0) return Real(0);
  const Real inv = Real(1) / Real(rays);
  Real sum = 0;
  for (std::size_t r = 0; r < rays; ++r) {
    const bool floored = U[r] < u_floor;
    const Real u = floored ? u_floor : U[r];
    Real err = 0;
    for (int c = 0; c < 3; ++c) {
      const Real e = pred_static[r * 3 + c] - target[r * 3 + c];
      err += e * e;
      if (!d_pred_static.empty()) d_pred_static[r * 3 + c] = e / (u * u) * inv;
    }
    sum += err / (Real(2) * u * u) + std::log(u);
    if (!d_U.empty()) d_U[r] = floored ? Real(0) : (-err / (u * u * u) + Real(1) / u) * inv;
  }
  return sum * inv;
}

template <class Real>
Real mask_sparsity_loss(std::span<const Real> m, std::span<Real> d_m) {
  if (m.empty()) return Real(0);
  Real sum = 0;
  for (Real v : m) sum += Real(1) - v;
  if (!d_m.empty()) std::fill(d_m.begin(), d_m.begin() + m.size(), Real(-1) / Real(m.size()));
  return sum / Real(m.size());
}

template <class Real>
Real distortion_loss(std::span<const Real> w, std::span<const Real> s, std::span<const Real> delta,
                     std::span<Real> d_w) {
  const std::size_t n = w.size();
  Real W_total = 0, S_total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    W_total += w[i];
    S_total += w[i] * s[i];
  }
  Real loss = 0, W_lo = 0, S_lo = 0;
  for (std::size_t i = 0; i < n; ++i) {
    // sum_j w_j |s_i - s_j| split at i (s sorted ascending).
    const Real below = s[i] * W_lo - S_lo;
    const Real W_hi = W_total - W_lo - w[i], S_hi = S_total - S_lo - w[i] * s[i];
    const Real above = S_hi - s[i] * W_hi;
    loss += Real(2) * w[i] * below + w[i] * w[i] * delta[i] / Real(3);
    if (!d_w.empty()) d_w[i] = Real(2) * (below + above) + Real(2) * w[i] * delta[i] / Real(3);
    W_lo += w[i];
    S_lo += w[i] * s[i];
  }
  return loss;
}

#define MSTH_INSTANTIATE_LOSSES(Real)                                                            \
  template Real recon_loss(std::span<const Real>, std::span<const Real>, std::size_t,           \
                           std::span<Real>);                                                    \
  template Real uncertainty_loss(std::span<const Real>, std::span<const Real>,                  \
                                 std::span<const Real>, std::size_t, Real, std::span<Real>,     \
                                 std::span<Real>);                                              \
  template Real mask_sparsity_loss(std::span<const Real>, std::span<Real>);                     \
  template Real distortion_loss(std::span<const Real>, std::span<const Real>,                   \
                                std::span<const Real>, std::span<Real>);
MSTH_INSTANTIATE_LOSSES(float)
MSTH_INSTANTIATE_LOSSES(double)
#undef MSTH_INSTANTIATE_LOSSES

void LossWeights::validate() const {
  if (lambda_u < 0 || gamma < 0 || lambda_mask < 0 || lambda_dist < 0 || lambda_prop < 0)
    throw ConfigError("loss weights must be non-negative");
}

std::string LossRecord::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["L_r"] = L_r;
  j["L_u"] = L_u;
  j["I"] = I;
  j["L_mask"] = L_mask;
  j["L_dist"] = L_dist;
  j["L_prop"] = L_prop;
  j["total"] = total;
  return j.dump();
}

double total_loss(const LossRecord& p, const LossWeights& w) {
  return p.L_r + w.lambda_u * p.L_u - w.gamma * p.I + w.lambda_mask * p.L_mask +
         w.lambda_dist * p.L_dist + w.lambda_prop * p.L_prop;
}

namespace {

MlpSpec critic_spec(const MineConfig& c) {
  MlpSpec s;
  s.input_dim = 2;
  s.hidden_dim = c.hidden;
  s.hidden_layers = 2;
  s.output_dim = 1;
  return s;
}

// z = (x - mean) / sqrt(var + eps); returns 1 / sqrt(var + eps).
template <class Real>
Real standardize(std::span<const Real> x, std::vector<Real>& z, double eps) {
  const std::size_t n = x.size();
  Real mean = 0;
  for (Real v : x) mean += v;
  mean /= Real(n);
  Real var = 0;
  for (Real v : x) var += (v - mean) * (v - mean);
  var /= Real(n);
  const Real inv = Real(1) / std::sqrt(var + Real(eps));
  z.resize(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = (x[i] - mean) * inv;
  return inv;
}

// dx = inv * (dz - mean(dz) - z * mean(dz * z)), accumulated into dx.
template <class Real>
void standardize_backward(const std::vector<Real>& z, const std::vector<Real>& dz, Real inv,
                          std::span<Real> dx) {
  const std::size_t n = z.size();
  Real mdz = 0, mdzz = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mdz += dz[i];
    mdzz += dz[i] * z[i];
  }
  mdz /= Real(n);
  mdzz /= Real(n);
  for (std::size_t i = 0; i < n; ++i) dx[i] += inv * (dz[i] - mdz - z[i] * mdzz);
}

}  // namespace

template <class Real>
MineEstimator<Real>::MineEstimator(const MineConfig& config)
    : critic(critic_spec(config)), params(critic.make_params("mine_critic")), config_(config) {}

template <class Real>
void MineEstimator<Real>::init(Rng& rng) {
  critic.init_params(params, rng);
  params.zero_grads();
  params.reset_optimizer();
  ema_denominator = 0;
  ema_initialized = false;
  skipped_batches = 0;
}

template <class Real>
MineResult<Real> MineEstimator<Real>::evaluate(std::span<const Real> m, std::span<const Real> u,
                                               Rng& rng, Real d_estimate, std::span<Real> d_m,
                                               std::span<Real> d_u, bool update_ema) {
  MineResult<Real> res;
  const std::size_t n = std::min(m.size(), u.size());
  if (n < 2) {
    ++skipped_batches;
    res.skipped = true;
    return res;
  }
  std::vector<Real> zm, zu;
  const Real inv_m = standardize(m.first(n), zm, config_.standardize_eps);
  const Real inv_u = standardize(u.first(n), zu, config_.standardize_eps);
  std::vector<std::uint32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0u);
  shuffle(perm, rng);

  // Joint rows then marginal rows in one critic pass.
  std::vector<Real> input(4 * n);
  for (std::size_t i = 0; i < n; ++i) {
    input[2 * i] = zm[i];
    input[2 * i + 1] = zu[i];
    input[2 * (n + i)] = zm[i];
    input[2 * (n + i) + 1] = zu[perm[i]];
  }
  std::vector<Real> out;
  MlpCache<Real> cache;
  critic.forward(params, input, 2 * n, out, cache);

  Real mean_joint = 0, tmax = out[n];
  for (std::size_t i = 0; i < n; ++i) {
    mean_joint += out[i];
    tmax = std::max(tmax, out[n + i]);
  }
  mean_joint /= Real(n);
  Real sum_exp = 0;
  for (std::size_t i = 0; i < n; ++i) sum_exp += std::exp(out[n + i] - tmax);
  const Real log_denom = tmax + std::log(sum_exp / Real(n));
  res.estimate = mean_joint - log_denom;
  res.log_denominator = log_denom;

  double denom = std::exp(double(log_denom));
  if (update_ema) {
    if (!ema_initialized || config_.ema_rate <= 0) {
      ema_denominator = denom;
      ema_initialized = true;
    } else {
      ema_denominator = config_.ema_rate * ema_denominator + (1.0 - config_.ema_rate) * denom;
    }
    denom = ema_denominator;
  }
  if (d_estimate == Real(0)) return res;

  std::vector<Real> d_out(2 * n);
  const Real log_used = Real(std::log(denom));
  for (std::size_t i = 0; i < n; ++i) {
    d_out[i] = d_estimate / Real(n);
    d_out[n + i] = -d_estimate * std::exp(out[n + i] - log_used) / Real(n);
  }
  const bool want_inputs = !d_m.empty() || !d_u.empty();
  std::vector<Real> d_input;
  critic.backward(params, cache, d_out, want_inputs ? &d_input : nullptr);
  if (!want_inputs) return res;
  std::vector<Real> dzm(n, Real(0)), dzu(n, Real(0));
  for (std::size_t i = 0; i < n; ++i) {
    dzm[i] += d_input[2 * i] + d_input[2 * (n + i)];
    dzu[i] += d_input[2 * i + 1];
    dzu[perm[i]] += d_input[2 * (n + i) + 1];
  }
  if (!d_m.empty()) standardize_backward(zm, dzm, inv_m, d_m);
  if (!d_u.empty()) standardize_backward(zu, dzu, inv_u, d_u);
  return res;
}

namespace {

void correlated_pairs(double rho, std::size_t n, Rng& rng, std::vector<double>& a,
                      std::vector<double>& b) {
  a.resize(n);
  b.resize(n);
  const double c = std::sqrt(1.0 - rho * rho);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = rng.normal();
    b[i] = rho * a[i] + c * rng.normal();
  }
}

}  // namespace

MineSanityResult mine_sanity(const MineSanityOptions& opt) {
  if (!(std::abs(opt.rho) < 1)) throw ConfigError("mine_sanity: |rho| must be < 1");
  if (opt.samples < 2 || opt.batch < 2) throw ConfigError("mine_sanity: need at least 2 samples");
  Rng rng(opt.seed);
  Rng init = rng.split(1), data_rng = rng.split(2), perm_rng = rng.split(3), eval_rng = rng.split(4);
  MineEstimator<double> est;
  est.init(init);
  std::vector<double> a, b;
  correlated_pairs(opt.rho, opt.samples, data_rng, a, b);
  std::vector<double> ba(opt.batch), bb(opt.batch);
  AdamParams adam;
  adam.lr = opt.lr;
  adam.eps = 1e-8;
  for (int s = 0; s < opt.steps; ++s) {
    for (std::size_t i = 0; i < opt.batch; ++i) {
      const std::size_t j = data_rng.below(opt.samples);
      ba[i] = a[j];
      bb[i] = b[j];
    }
    est.params.zero_grads();
    // Descending -I ascends the bound.
    est.evaluate(ba, bb, perm_rng, -1.0, {}, {}, true);
    adam_step(est.params, adam);
  }
  std::vector<double> ea, eb;
  correlated_pairs(opt.rho, opt.samples, eval_rng, ea, eb);
  MineSanityResult r;
  r.estimate = est.evaluate(ea, eb, perm_rng, 0.0, {}, {}, false).estimate;
  r.analytic = -0.5 * std::log(1.0 - opt.rho * opt.rho);
  return r;
}

template class MineEstimator<float>;
template class MineEstimator<double>;

}  // namespace msth

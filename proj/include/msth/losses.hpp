#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msth/mlp.hpp"

namespace msth {

/// Mean over rays of the channel-summed squared error. `d_pred` (optional)
/// receives dL/dpred.
template <class Real>
Real recon_loss(std::span<const Real> pred, std::span<const Real> target, std::size_t rays,
                std::span<Real> d_pred = {});

/// mean over rays of |C - C_s|^2 / (2 U^2) + log U with U floored at u_floor.
/// Gradients vanish w.r.t. U where the floor is active.
template <class Real>
Real uncertainty_loss(std::span<const Real> pred_static, std::span<const Real> target,
                      std::span<const Real> U, std::size_t rays, Real u_floor,
                      std::span<Real> d_pred_static = {}, std::span<Real> d_U = {});

/// mean(1 - m); d_m (optional) receives -1/n per entry.
template <class Real>
Real mask_sparsity_loss(std::span<const Real> m, std::span<Real> d_m = {});

/// Per-ray bilateral distortion over sorted normalized midpoints `s` with
/// normalized widths `delta`:
///   sum_ij w_i w_j |s_i - s_j| + 1/3 sum_i w_i^2 delta_i
/// Evaluated in O(n) with prefix sums. d_w (optional) gets dL/dw.
template <class Real>
Real distortion_loss(std::span<const Real> w, std::span<const Real> s, std::span<const Real> delta,
                     std::span<Real> d_w = {});

struct LossWeights {
  double lambda_u = 3e-5;
  double gamma = 3e-4;
  double lambda_mask = 1e-2;
  double lambda_dist = 2e-2;
  double lambda_prop = 1.0;

  void validate() const;
};

struct LossRecord {
  std::int64_t step = 0;
  double L_r = 0, L_u = 0, I = 0, L_mask = 0, L_dist = 0, L_prop = 0, total = 0;

  /// One NDJSON line (no trailing newline).
  std::string to_json() const;
};

/// L = L_r + lambda L_u - gamma I + lambda_mask L_mask + lambda_dist L_dist + lambda_prop L_prop
double total_loss(const LossRecord& parts, const LossWeights& w);

// ---------------------------------------------------------------------------
// MINE critic.

struct MineConfig {
  int hidden = 32;
  double ema_rate = 0.99;
  double standardize_eps = 1e-6;
};

template <class Real>
struct MineResult {
  Real estimate = 0;       // mean T(joint) - log mean exp T(marginal)
  Real log_denominator = 0;
  bool skipped = false;
};

template <class Real>
class MineEstimator {
 public:
  explicit MineEstimator(const MineConfig& config = {});

  const MineConfig& config() const { return config_; }
  void init(Rng& rng);

  /// Evaluates I on (m, u) pairs (marginal by permuting u with `rng`).
  /// If d_estimate != 0, accumulates d_estimate * dI into the critic grads and
  /// into d_m / d_u (when non-empty). The denominator gradient uses the EMA
  /// of mean exp T(marginal) when update_ema is set (rate 0 gives the exact
  /// gradient). Batches shorter than 2 are skipped and counted.
  MineResult<Real> evaluate(std::span<const Real> m, std::span<const Real> u, Rng& rng,
                            Real d_estimate, std::span<Real> d_m, std::span<Real> d_u,
                            bool update_ema);

  Mlp<Real> critic;
  ParamBuffer<Real> params;
  double ema_denominator = 0;
  bool ema_initialized = false;
  std::int64_t skipped_batches = 0;

 private:
  MineConfig config_;
};

struct MineSanityOptions {
  double rho = 0.9;
  std::size_t samples = 100000;
  int steps = 3000;
  std::size_t batch = 1024;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct MineSanityResult {
  double estimate = 0;  // on a fresh sample of the same size
  double analytic = 0;  // -0.5 log(1 - rho^2)
};

/// Trains a critic on correlated standard Gaussians and reports its estimate.
MineSanityResult mine_sanity(const MineSanityOptions& opt);

extern template class MineEstimator<float>;
extern template class MineEstimator<double>;

}  // namespace msth

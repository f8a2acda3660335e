#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "msth/common.hpp"
#include "msth/geometry.hpp"

namespace msth {

struct PinholeCamera {
  int width = 0, height = 0;
  double fx = 1, fy = 1, cx = 0, cy = 0;
  /// Camera-to-world [R | t], row-major 3x4.
  std::array<double, 12> pose{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
  double near = 0.1, far = 10.0;

  void validate() const;
  Vec3 center() const { return {pose[3], pose[7], pose[11]}; }
  Vec3 rotate(const Vec3& v) const {
    return {pose[0] * v.x + pose[1] * v.y + pose[2] * v.z,
            pose[4] * v.x + pose[5] * v.y + pose[6] * v.z,
            pose[8] * v.x + pose[9] * v.y + pose[10] * v.z};
  }
};

/// Camera at `eye` looking at `target`; image y runs along -up.
PinholeCamera look_at_camera(const Vec3& eye, const Vec3& target, const Vec3& up, int width,
                             int height, double focal, double near, double far);

struct Ray {
  Vec3 origin;
  Vec3 dir;
  double near = 0, far = 1;
};

Ray generate_ray(const PinholeCamera& cam, double px, double py);

/// n positions, one per equal sub-interval of [near, far]. Without jitter
/// (or rng == nullptr) these are the midpoints.
std::vector<double> stratified_samples(double near, double far, int n, Rng* rng, bool jitter);

/// Inverse-CDF sampling of the piecewise-constant pdf over `edges`
/// (weights.size() + 1 sorted values). Each weight receives the additive
/// floor eps_w; an all-zero histogram falls back to uniform.
/// Returns n sorted positions at CDF levels (k + u_k) / n, u_k = 0.5 unless
/// jittered.
std::vector<double> proposal_resample(std::span<const double> edges,
                                      std::span<const double> weights, int n, Rng* rng = nullptr,
                                      double eps_w = 1e-3);

/// Same, but also returns the n + 1 interval edges at CDF levels k / n.
void proposal_resample_intervals(std::span<const double> edges, std::span<const double> weights,
                                 int n, Rng* rng, double eps_w, std::vector<double>& positions,
                                 std::vector<double>& out_edges);

// ---------------------------------------------------------------------------
// Quadrature. Generic over the scalar so the double-precision gradient
// checks run the identical code.

template <class Real>
struct CompositeResult {
  std::vector<Real> weights;        // w_i = T_i alpha_i
  std::vector<Real> transmittance;  // T_0..T_n, T_n = T_final
  std::array<Real, 3> color{};
  Real t_final = 1;
};

/// rgb may be empty (density-only compositing).
template <class Real>
void composite(std::span<const Real> sigma, std::span<const Real> rgb,
               std::span<const Real> delta, CompositeResult<Real>& out) {
  const std::size_t n = sigma.size();
  out.weights.resize(n);
  out.transmittance.resize(n + 1);
  out.color = {Real(0), Real(0), Real(0)};
  Real T = 1;
  out.transmittance[0] = T;
  for (std::size_t i = 0; i < n; ++i) {
    const Real tau = sigma[i] * delta[i];
    const Real alpha = -std::expm1(-tau);
    const Real w = T * alpha;
    out.weights[i] = w;
    if (!rgb.empty())
      for (int k = 0; k < 3; ++k) out.color[k] += w * rgb[i * 3 + k];
    T *= std::exp(-tau);
    out.transmittance[i + 1] = T;
  }
  out.t_final = T;
}

/// Gradients of a loss with upstream d_color (may be null) and d_weights
/// (may be empty). Writes (not accumulates) d_sigma and d_rgb.
template <class Real>
void composite_backward(std::span<const Real> sigma, std::span<const Real> rgb,
                        std::span<const Real> delta, const CompositeResult<Real>& res,
                        const Real* d_color, std::span<const Real> d_weights,
                        std::span<Real> d_sigma, std::span<Real> d_rgb) {
  const std::size_t n = sigma.size();
  // g_i = dL/dw_i; dL/dsigma_k = delta_k (g_k T_{k+1} - sum_{i>k} g_i w_i)
  Real suffix = 0;
  for (std::size_t k = n; k-- > 0;) {
    Real g = d_weights.empty() ? Real(0) : d_weights[k];
    if (d_color && !rgb.empty())
      for (int c = 0; c < 3; ++c) g += d_color[c] * rgb[k * 3 + c];
    d_sigma[k] = delta[k] * (g * res.transmittance[k + 1] - suffix);
    suffix += g * res.weights[k];
    if (!d_rgb.empty())
      for (int c = 0; c < 3; ++c) d_rgb[k * 3 + c] = d_color ? d_color[c] * res.weights[k] : Real(0);
  }
}

/// U(r) = sum w_i u_i.
template <class Real>
Real render_uncertainty(std::span<const Real> weights, std::span<const Real> u) {
  Real s = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * u[i];
  return s;
}

/// M(r) = sum w_i (1 - m_i).
template <class Real>
Real render_dynamic_weight(std::span<const Real> weights, std::span<const Real> m) {
  Real s = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * (Real(1) - m[i]);
  return s;
}

// ---------------------------------------------------------------------------
// Frame rendering.

struct RayShading {
  std::array<float, 3> rgb{};
  float depth = 0;
  float dynamic_weight = 0;  // M(r)
};

/// Anything that can shade rays at a time t in [0, 1]. Implementations must
/// be safe to call concurrently.
class RaySource {
 public:
  virtual ~RaySource() = default;
  virtual void shade(std::span<const Ray> rays, double t, std::span<RayShading> out) const = 0;
  /// Scores compared against epsilon_ray by the incremental renderer. The
  /// default is M(r) at time t.
  virtual void dynamic_scores(std::span<const Ray> rays, double t, std::span<double> out) const;
};

struct FrameBuffers {
  int width = 0, height = 0;
  std::vector<float> rgb;             // h x w x 3
  std::vector<float> depth;           // h x w
  std::vector<float> dynamic_weight;  // h x w
};

/// threads <= 0 uses the hardware concurrency. Output does not depend on
/// the thread count.
FrameBuffers render_frame(const RaySource& source, const PinholeCamera& cam, double t,
                          int threads = 0);

/// Shade only the listed pixels (row-major indices) into `frame`.
void render_pixels(const RaySource& source, const PinholeCamera& cam, double t,
                   std::span<const std::uint32_t> pixels, FrameBuffers& frame, int threads = 0);

struct IncrementalVideo {
  std::vector<FrameBuffers> frames;
  std::vector<std::uint8_t> dynamic;  // per pixel, 1 = re-rendered after frame 0
  std::size_t dynamic_pixels = 0;
  std::size_t rendered_pixels = 0;
  std::size_t total_pixels = 0;
  double epsilon_ray = 0;
  double speedup = 1;  // total_pixels / rendered_pixels
};

/// epsilon must lie in (0, 1); epsilon_ray = 1 - epsilon unless an explicit
/// epsilon_ray >= 0 is given.
IncrementalVideo render_video_incremental(const RaySource& source, const PinholeCamera& cam,
                                          std::span<const double> times, double epsilon,
                                          double epsilon_ray = -1, int threads = 0);

extern template void composite(std::span<const float>, std::span<const float>,
                               std::span<const float>, CompositeResult<float>&);
extern template void composite(std::span<const double>, std::span<const double>,
                               std::span<const double>, CompositeResult<double>&);

}  // namespace msth

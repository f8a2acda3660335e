#include "msth/render.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <thread>

namespace msth {

template void composite(std::span<const float>, std::span<const float>, std::span<const float>,
                        CompositeResult<float>&);
template void composite(std::span<const double>, std::span<const double>, std::span<const double>,
                        CompositeResult<double>&);

void PinholeCamera::validate() const {
  std::ostringstream os;
  if (width < 1 || height < 1) os << "image size must be positive; ";
  if (!(fx > 0) || !(fy > 0)) os << "focal lengths must be positive; ";
  if (!(near > 0) || !(far > near)) os << "need far > near > 0; ";
  double worst = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += pose[k * 4 + i] * pose[k * 4 + j];
      worst = std::max(worst, std::abs(s - (i == j ? 1.0 : 0.0)));
    }
  if (worst > 1e-5) os << "rotation is not orthonormal (|R^T R - I| = " << worst << "); ";
  if (!os.str().empty()) throw ConfigError("invalid camera: " + os.str());
}

PinholeCamera look_at_camera(const Vec3& eye, const Vec3& target, const Vec3& up, int width,
                             int height, double focal, double near, double far) {
  const Vec3 z = normalize(target - eye);
  const Vec3 x = normalize(cross(z, up));
  const Vec3 y = cross(z, x);
  PinholeCamera cam;
  cam.width = width;
  cam.height = height;
  cam.fx = cam.fy = focal;
  cam.cx = width * 0.5;
  cam.cy = height * 0.5;
  cam.near = near;
  cam.far = far;
  cam.pose = {x.x, y.x, z.x, eye.x, x.y, y.y, z.y, eye.y, x.z, y.z, z.z, eye.z};
  return cam;
}

Ray generate_ray(const PinholeCamera& cam, double px, double py) {
  const Vec3 d{(px + 0.5 - cam.cx) / cam.fx, (py + 0.5 - cam.cy) / cam.fy, 1.0};
  return {cam.center(), normalize(cam.rotate(d)), cam.near, cam.far};
}

std::vector<double> stratified_samples(double near, double far, int n, Rng* rng, bool jitter) {
  if (n < 1) throw ConfigError("stratified_samples: n must be >= 1");
  std::vector<double> out(n);
  const double step = (far - near) / n;
  for (int i = 0; i < n; ++i) {
    const double u = (jitter && rng) ? rng->uniform() : 0.5;
    out[i] = near + (i + u) * step;
  }
  return out;
}

namespace {

// Position at CDF level `level` of the floored histogram.
struct InverseCdf {
  std::span<const double> edges;
  std::vector<double> cdf;  // size bins + 1

  InverseCdf(std::span<const double> e, std::span<const double> w, double eps_w) : edges(e) {
    const std::size_t bins = w.size();
    if (e.size() != bins + 1 || bins == 0)
      throw ConfigError("proposal_resample: need weights.size() + 1 edges");
    double total = 0;
    for (double v : w) total += std::max(v, 0.0);
    cdf.assign(bins + 1, 0.0);
    if (!(total > 0)) {
      for (std::size_t i = 0; i < bins; ++i) cdf[i + 1] = double(i + 1) / bins;
      return;
    }
    double acc = 0;
    for (std::size_t i = 0; i < bins; ++i) {
      acc += std::max(w[i], 0.0) + eps_w;
      cdf[i + 1] = acc;
    }
    for (auto& c : cdf) c /= acc;
    cdf.back() = 1.0;
  }

  double operator()(double level) const {
    level = std::clamp(level, 0.0, 1.0);
    auto it = std::upper_bound(cdf.begin(), cdf.end(), level);
    std::size_t bin = std::min<std::size_t>(std::max<std::ptrdiff_t>(it - cdf.begin(), 1) - 1,
                                            cdf.size() - 2);
    const double span = cdf[bin + 1] - cdf[bin];
    const double f = span > 0 ? (level - cdf[bin]) / span : 0.0;
    return edges[bin] + std::clamp(f, 0.0, 1.0) * (edges[bin + 1] - edges[bin]);
  }
};

}  // namespace

std::vector<double> proposal_resample(std::span<const double> edges,
                                      std::span<const double> weights, int n, Rng* rng,
                                      double eps_w) {
  std::vector<double> pos, e;
  proposal_resample_intervals(edges, weights, n, rng, eps_w, pos, e);
  return pos;
}

void proposal_resample_intervals(std::span<const double> edges, std::span<const double> weights,
                                 int n, Rng* rng, double eps_w, std::vector<double>& positions,
                                 std::vector<double>& out_edges) {
  if (n < 1) throw ConfigError("proposal_resample: n must be >= 1");
  const InverseCdf inv(edges, weights, eps_w);
  positions.resize(n);
  out_edges.resize(n + 1);
  for (int k = 0; k <= n; ++k) out_edges[k] = inv(double(k) / n);
  for (int k = 0; k < n; ++k) {
    const double u = rng ? rng->uniform() : 0.5;
    positions[k] = inv((k + u) / n);
  }
}

void RaySource::dynamic_scores(std::span<const Ray> rays, double t, std::span<double> out) const {
  std::vector<RayShading> s(rays.size());
  shade(rays, t, s);
  for (std::size_t i = 0; i < rays.size(); ++i) out[i] = s[i].dynamic_weight;
}

namespace {

constexpr std::size_t kChunk = 256;

int resolve_threads(int threads) {
  if (threads > 0) return threads;
  return std::max(1u, std::thread::hardware_concurrency());
}

void store(FrameBuffers& f, std::uint32_t p, const RayShading& s) {
  for (int c = 0; c < 3; ++c) f.rgb[std::size_t(p) * 3 + c] = s.rgb[c];
  f.depth[p] = s.depth;
  f.dynamic_weight[p] = s.dynamic_weight;
}

FrameBuffers empty_frame(const PinholeCamera& cam) {
  FrameBuffers f;
  f.width = cam.width;
  f.height = cam.height;
  const std::size_t n = std::size_t(cam.width) * cam.height;
  f.rgb.assign(n * 3, 0.f);
  f.depth.assign(n, 0.f);
  f.dynamic_weight.assign(n, 0.f);
  return f;
}

}  // namespace

void render_pixels(const RaySource& source, const PinholeCamera& cam, double t,
                   std::span<const std::uint32_t> pixels, FrameBuffers& frame, int threads) {
  const std::size_t chunks = (pixels.size() + kChunk - 1) / kChunk;
  auto work = [&](std::size_t c) {
    const std::size_t lo = c * kChunk, hi = std::min(pixels.size(), lo + kChunk);
    std::vector<Ray> rays(hi - lo);
    std::vector<RayShading> out(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) {
      const std::uint32_t p = pixels[i];
      rays[i - lo] = generate_ray(cam, p % cam.width, p / cam.width);
    }
    source.shade(rays, t, out);
    for (std::size_t i = lo; i < hi; ++i) store(frame, pixels[i], out[i - lo]);
  };
  const int nt = std::min<int>(resolve_threads(threads), int(std::max<std::size_t>(chunks, 1)));
  if (nt <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) work(c);
    return;
  }
  // Chunks are statically interleaved; every pixel is shaded by the same
  // code regardless of thread count.
  std::vector<std::thread> pool;
  for (int w = 0; w < nt; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t c = w; c < chunks; c += nt) work(c);
    });
  for (auto& th : pool) th.join();
}

FrameBuffers render_frame(const RaySource& source, const PinholeCamera& cam, double t,
                          int threads) {
  cam.validate();
  FrameBuffers f = empty_frame(cam);
  std::vector<std::uint32_t> all(std::size_t(cam.width) * cam.height);
  std::iota(all.begin(), all.end(), 0u);
  render_pixels(source, cam, t, all, f, threads);
  return f;
}

IncrementalVideo render_video_incremental(const RaySource& source, const PinholeCamera& cam,
                                          std::span<const double> times, double epsilon,
                                          double epsilon_ray, int threads) {
  if (!(epsilon > 0 && epsilon < 1)) {
    std::ostringstream os;
    os << "incremental rendering needs epsilon in (0,1), got " << epsilon;
    throw ConfigError(os.str());
  }
  if (times.empty()) throw ConfigError("incremental rendering needs at least one time");
  cam.validate();
  IncrementalVideo v;
  v.epsilon_ray = epsilon_ray >= 0 ? epsilon_ray : 1.0 - epsilon;
  const std::size_t npix = std::size_t(cam.width) * cam.height;
  v.frames.push_back(render_frame(source, cam, times[0], threads));

  v.dynamic.assign(npix, 0);
  std::vector<std::uint32_t> dyn;
  std::vector<Ray> rays;
  std::vector<double> score;
  for (std::size_t lo = 0; lo < npix; lo += kChunk) {
    const std::size_t hi = std::min(npix, lo + kChunk);
    rays.clear();
    for (std::size_t p = lo; p < hi; ++p) rays.push_back(generate_ray(cam, p % cam.width, p / cam.width));
    score.assign(rays.size(), 0.0);
    source.dynamic_scores(rays, times[0], score);
    for (std::size_t p = lo; p < hi; ++p)
      if (score[p - lo] > v.epsilon_ray) {
        v.dynamic[p] = 1;
        dyn.push_back(std::uint32_t(p));
      }
  }
  v.dynamic_pixels = dyn.size();
  v.rendered_pixels = npix;
  for (std::size_t f = 1; f < times.size(); ++f) {
    FrameBuffers frame = v.frames[0];
    render_pixels(source, cam, times[f], dyn, frame, threads);
    v.rendered_pixels += dyn.size();
    v.frames.push_back(std::move(frame));
  }
  v.total_pixels = npix * times.size();
  v.speedup = double(v.total_pixels) / double(v.rendered_pixels);
  return v;
}

}  // namespace msth

#include "msth/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

namespace msth {

AliasTable::AliasTable(std::span<const double> weights) {
  const std::size_t n = weights.size();
  if (n == 0) throw ConfigError("alias table over an empty distribution");
  double total = 0;
  for (double w : weights) {
    if (!(w >= 0)) throw ConfigError("alias table weights must be non-negative");
    total += w;
  }
  if (!(total > 0)) throw ConfigError("alias table weights sum to zero");
  prob_.assign(n, 0.0);
  alias_.assign(n, 0);
  std::vector<double> scaled(n);
  std::vector<std::uint32_t> small, large;
  for (std::size_t i = 0; i < n; ++i) {
    scaled[i] = weights[i] * double(n) / total;
    (scaled[i] < 1.0 ? small : large).push_back(std::uint32_t(i));
  }
  while (!small.empty() && !large.empty()) {
    const std::uint32_t s = small.back(), l = large.back();
    small.pop_back();
    prob_[s] = scaled[s];
    alias_[s] = l;
    scaled[l] = (scaled[l] + scaled[s]) - 1.0;
    if (scaled[l] < 1.0) {
      large.pop_back();
      small.push_back(l);
    }
  }
  for (auto i : large) prob_[i] = 1.0;
  for (auto i : small) prob_[i] = 1.0;  // rounding leftovers
}

std::uint32_t AliasTable::sample(Rng& rng) const {
  const std::uint32_t i = std::uint32_t(rng.below(prob_.size()));
  return rng.uniform() < prob_[i] ? i : alias_[i];
}

std::uint64_t video_fingerprint(std::span<const VideoView> videos) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& v : videos) {
    mix(&v.width, sizeof v.width);
    mix(&v.height, sizeof v.height);
    const std::size_t T = v.frames.size();
    mix(&T, sizeof T);
    for (const auto& f : v.frames) mix(f.data(), f.size_bytes());
  }
  return h;
}

std::uint32_t RayImportanceTable::camera_of(std::uint32_t ray) const {
  auto it = std::upper_bound(camera_offset_.begin(), camera_offset_.end(), ray);
  return std::uint32_t(it - camera_offset_.begin()) - 1;
}

RayImportanceTable RayImportanceTable::build(std::span<const VideoView> videos,
                                             const ImportanceParams& params) {
  if (videos.empty()) throw ConfigError("importance table needs at least one camera");
  if (params.downsample < 1) throw ConfigError("downsample must be >= 1");
  if (!(params.tau1 > 0) || !(params.tau2 > 0)) throw ConfigError("temperatures must be positive");
  RayImportanceTable tab;
  tab.params_ = params;
  tab.frames_ = std::uint32_t(videos[0].frames.size());
  if (tab.frames_ == 0) throw ConfigError("importance table needs at least one frame");
  tab.fingerprint_ = video_fingerprint(videos);
  const int d = params.downsample;
  const std::uint32_t T = tab.frames_;

  tab.camera_offset_.push_back(0);
  std::vector<double> block_gray;  // blocks x T
  std::uint32_t block_base = 0;
  for (const auto& v : videos) {
    if (v.frames.size() != T) throw ConfigError("all cameras must have the same frame count");
    const int bw = (v.width + d - 1) / d, bh = (v.height + d - 1) / d;
    const std::size_t npix = std::size_t(v.width) * v.height;
    for (const auto& f : v.frames)
      if (f.size() != npix * 3) throw ConfigError("frame size does not match camera resolution");
    for (int y = 0; y < v.height; ++y)
      for (int x = 0; x < v.width; ++x)
        tab.block_of_ray_.push_back(block_base + std::uint32_t((y / d) * bw + x / d));
    tab.camera_offset_.push_back(tab.camera_offset_.back() + std::uint32_t(npix));
    const std::size_t first = block_gray.size();
    block_gray.resize(first + std::size_t(bw) * bh * T, 0.0);
    std::vector<int> count(std::size_t(bw) * bh, 0);
    for (int y = 0; y < v.height; ++y)
      for (int x = 0; x < v.width; ++x) ++count[(y / d) * bw + x / d];
    for (std::uint32_t t = 0; t < T; ++t) {
      const float* img = v.frames[t].data();
      for (int y = 0; y < v.height; ++y)
        for (int x = 0; x < v.width; ++x) {
          const float* px = img + (std::size_t(y) * v.width + x) * 3;
          const double g = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
          block_gray[first + std::size_t((y / d) * bw + x / d) * T + t] += g;
        }
    }
    for (std::size_t b = 0; b < count.size(); ++b)
      for (std::uint32_t t = 0; t < T; ++t) block_gray[first + b * T + t] /= count[b];
    block_base += std::uint32_t(bw * bh);
  }

  const std::size_t blocks = block_base;
  tab.block_std_.assign(blocks, 0.0);
  tab.block_median_.assign(blocks, 0.0);
  tab.block_time_q_.assign(blocks * T, 0);
  if (T < 2) {
    tab.warning_ = "single-frame dataset: temporal std undefined, using uniform P(r)";
    std::cerr << "warning: " << tab.warning_ << "\n";
  }
  std::vector<double> tmp(T), logits(T);
  for (std::size_t b = 0; b < blocks; ++b) {
    const double* g = block_gray.data() + b * T;
    double mean = 0;
    for (std::uint32_t t = 0; t < T; ++t) mean += g[t];
    mean /= T;
    double var = 0;
    for (std::uint32_t t = 0; t < T; ++t) var += (g[t] - mean) * (g[t] - mean);
    tab.block_std_[b] = T < 2 ? 0.0 : std::sqrt(var / T);
    tmp.assign(g, g + T);
    std::sort(tmp.begin(), tmp.end());
    const double med = (T % 2) ? tmp[T / 2] : 0.5 * (tmp[T / 2 - 1] + tmp[T / 2]);
    tab.block_median_[b] = med;
    double lmax = -1e300;
    for (std::uint32_t t = 0; t < T; ++t) {
      logits[t] = std::abs(g[t] - med) / params.tau2;
      lmax = std::max(lmax, logits[t]);
    }
    double total = 0;
    for (std::uint32_t t = 0; t < T; ++t) total += (tmp[t] = std::exp(logits[t] - lmax));
    for (std::uint32_t t = 0; t < T; ++t) {
      const double q = std::round(tmp[t] / total * 65535.0);
      tab.block_time_q_[b * T + t] = std::uint16_t(std::clamp(q, 0.0, 65535.0));
    }
  }

  const std::size_t rays = tab.block_of_ray_.size();
  tab.p_ray_.resize(rays);
  double smax = 0;
  for (double s : tab.block_std_) smax = std::max(smax, s);
  double total = 0;
  for (std::size_t r = 0; r < rays; ++r) {
    const double s = tab.block_std_[tab.block_of_ray_[r]];
    tab.p_ray_[r] = std::exp((s - smax) / params.tau1);
    total += tab.p_ray_[r];
  }
  for (auto& p : tab.p_ray_) p /= total;
  tab.build_alias();
  return tab;
}

void RayImportanceTable::build_alias() {
  ray_alias_ = AliasTable(p_ray_);
  const std::size_t blocks = block_std_.size();
  time_alias_.clear();
  time_alias_.reserve(blocks);
  std::vector<double> w(frames_);
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::uint32_t t = 0; t < frames_; ++t) w[t] = block_time_q_[b * frames_ + t];
    time_alias_.emplace_back(w);
  }
}

double RayImportanceTable::time_probability(std::uint32_t ray, std::uint32_t t) const {
  const std::size_t b = block_of_ray_[ray];
  double total = 0;
  for (std::uint32_t k = 0; k < frames_; ++k) total += block_time_q_[b * frames_ + k];
  return block_time_q_[b * frames_ + t] / total;
}

RaySample RayImportanceTable::sample(Rng& rng) const {
  RaySample s;
  s.ray = ray_alias_.sample(rng);
  s.t = time_alias_[block_of_ray_[s.ray]].sample(rng);
  return s;
}

RaySample RayImportanceTable::sample_uniform(Rng& rng) const {
  RaySample s;
  s.ray = std::uint32_t(rng.below(ray_count()));
  s.t = std::uint32_t(rng.below(frames_));
  return s;
}

std::vector<RaySample> RayImportanceTable::sample_batch(std::size_t n, Rng& rng,
                                                        double p_uniform) const {
  std::vector<RaySample> out(n);
  for (auto& s : out) {
    const bool uniform = p_uniform >= 1.0 || (p_uniform > 0.0 && rng.uniform() < p_uniform);
    s = uniform ? sample_uniform(rng) : sample(rng);
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'M', 'S', 'I', 'T'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
void put_vec(std::ostream& os, const std::vector<T>& v) {
  put<std::uint64_t>(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(T)));
}
template <class T>
bool get(std::istream& is, T& v) {
  return bool(is.read(reinterpret_cast<char*>(&v), sizeof(T)));
}
template <class T>
bool get_vec(std::istream& is, std::vector<T>& v) {
  std::uint64_t n = 0;
  if (!get(is, n) || n > (std::uint64_t(1) << 32)) return false;
  v.resize(n);
  return bool(is.read(reinterpret_cast<char*>(v.data()), std::streamsize(n * sizeof(T))));
}

}  // namespace

void RayImportanceTable::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write importance cache " + path.string());
  os.write(kMagic, 4);
  put(os, kVersion);
  put(os, params_.tau1);
  put(os, params_.tau2);
  put<std::int32_t>(os, params_.downsample);
  put(os, frames_);
  put(os, fingerprint_);
  put_vec(os, camera_offset_);
  put_vec(os, block_of_ray_);
  put_vec(os, block_std_);
  put_vec(os, block_median_);
  put_vec(os, block_time_q_);
  put_vec(os, p_ray_);
  if (!os) throw FormatError("failed writing importance cache " + path.string());
}

bool RayImportanceTable::load(const std::filesystem::path& path, std::span<const VideoView> videos,
                              const ImportanceParams& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return false;
  char magic[4];
  std::uint32_t version = 0;
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) return false;
  if (!get(is, version) || version != kVersion) return false;
  RayImportanceTable t;
  std::int32_t ds = 0;
  if (!get(is, t.params_.tau1) || !get(is, t.params_.tau2) || !get(is, ds) || !get(is, t.frames_) ||
      !get(is, t.fingerprint_))
    return false;
  t.params_.downsample = ds;
  if (t.params_.tau1 != params.tau1 || t.params_.tau2 != params.tau2 ||
      t.params_.downsample != params.downsample || t.fingerprint_ != video_fingerprint(videos))
    return false;
  if (!get_vec(is, t.camera_offset_) || !get_vec(is, t.block_of_ray_) ||
      !get_vec(is, t.block_std_) || !get_vec(is, t.block_median_) ||
      !get_vec(is, t.block_time_q_) || !get_vec(is, t.p_ray_))
    return false;
  if (t.block_time_q_.size() != t.block_std_.size() * t.frames_ ||
      t.p_ray_.size() != t.block_of_ray_.size())
    return false;
  t.build_alias();
  *this = std::move(t);
  return true;
}

RayImportanceTable RayImportanceTable::build_cached(const std::filesystem::path& path,
                                                    std::span<const VideoView> videos,
                                                    const ImportanceParams& params,
                                                    bool* from_cache) {
  RayImportanceTable t;
  const bool hit = t.load(path, videos, params);
  if (from_cache) *from_cache = hit;
  if (hit) return t;
  t = build(videos, params);
  t.save(path);
  return t;
}

}  // namespace msth

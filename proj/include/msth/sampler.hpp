#pragma once

// Space-time ray importance sampling.
//   P(r)   proportional to exp(std_t(gray(r, t)) / tau1)
//   P(t|r) proportional to exp(|gray(r, t) - median_t gray(r, t)| / tau2)
// Statistics are computed on a downsampled grayscale copy; a full-resolution
// pixel inherits the statistics of its block.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "msth/common.hpp"

namespace msth {

/// Frames of one training camera: `frames[t]` holds height x width x 3 floats.
struct VideoView {
  int width = 0, height = 0;
  std::vector<std::span<const float>> frames;
};

/// Walker/Vose alias table over a discrete distribution.
class AliasTable {
 public:
  AliasTable() = default;
  explicit AliasTable(std::span<const double> weights);
  std::uint32_t sample(Rng& rng) const;
  std::size_t size() const { return prob_.size(); }

 private:
  std::vector<double> prob_;
  std::vector<std::uint32_t> alias_;
};

struct RaySample {
  std::uint32_t ray = 0;  // global pixel id over all cameras
  std::uint32_t t = 0;
};

struct ImportanceParams {
  double tau1 = 0.1;
  double tau2 = 0.05;
  int downsample = 1;
};

class RayImportanceTable {
 public:
  static RayImportanceTable build(std::span<const VideoView> videos, const ImportanceParams& params);

  const ImportanceParams& params() const { return params_; }
  std::uint32_t frames() const { return frames_; }
  std::uint32_t ray_count() const { return std::uint32_t(block_of_ray_.size()); }
  std::uint32_t camera_of(std::uint32_t ray) const;
  /// Pixel index within its camera.
  std::uint32_t pixel_of(std::uint32_t ray) const { return ray - camera_offset_[camera_of(ray)]; }
  std::uint32_t ray_id(std::uint32_t camera, std::uint32_t pixel) const {
    return camera_offset_[camera] + pixel;
  }

  double ray_probability(std::uint32_t ray) const { return p_ray_[ray]; }
  /// Conditional after 16-bit quantization and renormalization.
  double time_probability(std::uint32_t ray, std::uint32_t t) const;
  double ray_std(std::uint32_t ray) const { return block_std_[block_of_ray_[ray]]; }
  double ray_median(std::uint32_t ray) const { return block_median_[block_of_ray_[ray]]; }
  const std::string& warning() const { return warning_; }

  RaySample sample(Rng& rng) const;
  RaySample sample_uniform(Rng& rng) const;
  /// Each draw is uniform with probability p_uniform, else from the table.
  std::vector<RaySample> sample_batch(std::size_t n, Rng& rng, double p_uniform = 0.0) const;

  /// Cache file with a versioned header; `load` returns false (and leaves
  /// the table untouched) if the file is missing, stale or malformed.
  void save(const std::filesystem::path& path) const;
  bool load(const std::filesystem::path& path, std::span<const VideoView> videos,
            const ImportanceParams& params);
  static RayImportanceTable build_cached(const std::filesystem::path& path,
                                         std::span<const VideoView> videos,
                                         const ImportanceParams& params, bool* from_cache = nullptr);

 private:
  void build_alias();

  ImportanceParams params_;
  std::uint32_t frames_ = 0;
  std::uint64_t fingerprint_ = 0;
  std::vector<std::uint32_t> camera_offset_;  // cameras + 1
  std::vector<std::uint32_t> block_of_ray_;
  std::vector<double> block_std_, block_median_;
  std::vector<std::uint16_t> block_time_q_;  // blocks x frames
  std::vector<double> p_ray_;
  std::string warning_;
  AliasTable ray_alias_;
  std::vector<AliasTable> time_alias_;
};

/// Fingerprint of the frame data used to validate cached tables.
std::uint64_t video_fingerprint(std::span<const VideoView> videos);

}  // namespace msth

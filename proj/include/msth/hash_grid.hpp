#pragma once

// Multi-resolution hash grids over [0,1]^3 (space) or [0,1]^4 (space-time).
//
// Resolution convention: a level of resolution N has N lattice points per
// axis, so a normalized coordinate p maps to p * (N - 1) in lattice units.
// Levels whose dense lattice fits in the table are indexed row-major
// (x fastest) and never collide; larger levels use XOR hashing.

#include <array>
#include <atomic>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msth/param_buffer.hpp"

namespace msth {

inline constexpr std::array<std::uint32_t, 4> kHashPrimes = {1u, 2654435761u, 805459861u,
                                                             3674653429u};

struct HashGridConfig {
  int dims = 3;
  int levels = 16;
  int features = 2;
  int log2_table_size = 19;
  int base_resolution = 16;
  int max_resolution = 512;
  // Temporal axis, 4D only.
  int time_base_resolution = 2;
  int time_max_resolution = 32;

  void validate() const;
  int output_dim() const { return levels * features; }
};

struct LevelResolution {
  int spatial = 0;
  int temporal = 0;  // 0 for 3D grids
};

/// Geometric progression floor(N_min * b^l), b = (N_max / N_min)^(1/(L-1)).
std::vector<LevelResolution> level_resolutions(const HashGridConfig& config);

struct GridLevel {
  int resolution = 0;
  int time_resolution = 0;
  std::uint32_t slots = 0;
  bool dense = false;
  std::size_t offset = 0;  // first slot of this level in the shared table
};

std::vector<GridLevel> build_levels(const HashGridConfig& config);

/// Slot of a lattice point within its level (not including the level offset).
std::uint32_t hash_index(std::span<const std::uint32_t> lattice_point, const GridLevel& level);

/// Corner slots and d-linear weights recorded by encode for the backward pass.
template <class Real>
struct EncodeCache {
  int dims = 0;
  int levels = 0;
  std::size_t points = 0;
  std::vector<std::uint32_t> slot;  // absolute slot, [point][level][corner]
  std::vector<Real> weight;         // same layout
  int corners() const { return 1 << dims; }
};

struct CollisionStats {
  std::uint64_t queries = 0;
  std::uint64_t distinct_keys = 0;
  std::uint64_t distinct_slots = 0;
  std::uint64_t max_slot_load = 0;
  std::uint32_t slot_count = 0;
  double collision_rate = 0.0;      // 1 - distinct_slots / min(distinct_keys, slot_count)
  double occupied_fraction = 0.0;   // distinct_slots / slot_count
};

template <class Real>
class HashGrid {
 public:
  HashGrid() = default;
  HashGrid(const HashGridConfig& config, const std::string& name);
  HashGrid(const HashGrid& other);
  HashGrid& operator=(const HashGrid& other);

  const HashGridConfig& config() const { return config_; }
  const std::vector<GridLevel>& levels() const { return levels_; }
  int output_dim() const { return config_.output_dim(); }
  std::size_t total_slots() const;

  /// Entries uniform in [-scale, scale].
  void init_uniform(Rng& rng, double scale);

  /// points: n rows of `dims` normalized coordinates (time last for 4D).
  /// features: n rows of levels*features values. cache may be null.
  void encode(std::span<const Real> points, std::size_t n, std::span<Real> features,
              EncodeCache<Real>* cache) const;

  /// grads[slot] += weight * d_feature for every cached corner.
  void encode_backward(const EncodeCache<Real>& cache, std::span<const Real> d_features);

  CollisionStats collision_stats(int level, std::span<const std::uint32_t> lattice_points) const;

  std::uint64_t read_count() const { return reads_.load(std::memory_order_relaxed); }
  std::uint64_t clamp_count() const { return clamps_.load(std::memory_order_relaxed); }
  void reset_counters();

  ParamBuffer<Real> params;

 private:
  template <int D>
  void encode_impl(std::span<const Real> points, std::size_t n, std::span<Real> features,
                   EncodeCache<Real>* cache) const;

  HashGridConfig config_;
  std::vector<GridLevel> levels_;
  mutable std::atomic<std::uint64_t> reads_{0};
  mutable std::atomic<std::uint64_t> clamps_{0};
};

extern template class HashGrid<float>;
extern template class HashGrid<double>;

}  // namespace msth

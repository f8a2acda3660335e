#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msth/config.hpp"
#include "msth/image.hpp"
#include "msth/pipeline.hpp"
#include "msth/scene.hpp"

namespace msth {

struct EvalOptions {
  bool train_split = false;   // evaluate training cameras instead of test cameras
  int frame_stride = 1;
  int n_samples = 128;
  int n_proposal = 64;
  int threads = 0;
  // Occupancy probe for mask metrics: grid^3 voxel centers at `probe_times`
  // evenly spaced times; a voxel is occupied if max_t sigma > sigma_threshold.
  int grid = 48;
  int probe_times = 5;
  double sigma_threshold = 5.0;
  double iou_threshold = 0.5;
  // A 4D write is gated in if 1 - m(x) exceeds this.
  double write_gate = 1e-2;
};

struct FrameMetric {
  int camera = 0;
  int frame = 0;
  double psnr = 0, dssim = 0;
};

struct WriteStats {
  std::uint64_t points = 0;
  std::uint64_t ungated_writes = 0;   // every (point, level, corner) update of table4d
  std::uint64_t gated_writes = 0;     // only points with 1 - m > gate
  std::uint64_t ungated_slots = 0;    // distinct slots touched
  std::uint64_t gated_slots = 0;
};

struct EvalReport {
  std::vector<FrameMetric> frames;
  double mean_psnr = 0, mean_dssim = 0;
  std::uint64_t occupied_voxels = 0;
  double dynamic_fraction = 0;  // mean of 1 - m over occupied voxels
  double mask_entropy = 0;      // fraction of occupied voxels with m in [0.1, 0.9]
  bool has_iou = false;
  double mask_iou = 0;
  WriteStats writes;

  std::string to_json() const;
};

struct MaskMetrics {
  std::uint64_t occupied = 0;
  double dynamic_fraction = 0;
  double entropy = 0;
  std::vector<float> occupied_points;  // occupied voxel centers, normalized, x3
};

MaskMetrics mask_metrics(const Model<float>& model, const EvalOptions& opt);

WriteStats table4d_write_stats(const Model<float>& model, std::span<const float> points,
                               int probe_times, double gate);

/// Intersection over union of two binary masks (1-channel, > 0.5 is set).
double mask_iou(const Image& predicted, const Image& truth);

EvalReport evaluate(const Model<float>& model, const SceneDataset& data, const EvalOptions& opt);

/// Variants compared by ablate: masked, masked_no_uncertainty, additive, pure4d.
struct AblationRow {
  std::string variant;
  EvalReport report;
};
std::vector<AblationRow> ablate(const TrainConfig& base, const SceneDataset& data,
                                const std::vector<std::string>& variants, const EvalOptions& opt);

/// Applies an ablation variant name to a config.
TrainConfig variant_config(const TrainConfig& base, const std::string& variant);

}  // namespace msth

#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "msth/checkpoint.hpp"
#include "msth/config.hpp"
#include "msth/pipeline.hpp"
#include "msth/sampler.hpp"
#include "msth/scene.hpp"

namespace msth {

/// Learning rate after `step` of `total` steps (cosine from base to base * final_factor).
double scheduled_lr(double base, double final_factor, std::int64_t step, std::int64_t total);

/// True for hash tables and dense grids, which use lr_grid.
bool is_grid_group(const std::string& name);

/// Builds the supervised batch for (ray, frame) draws over the training cameras.
RayBatch make_batch(const SceneDataset& data, const RayImportanceTable& table,
                    std::span<const RaySample> draws);

/// Importance table over the training cameras of `data`.
RayImportanceTable build_importance(const SceneDataset& data, const ImportanceParams& params,
                                    const std::filesystem::path& cache = {});

class Trainer {
 public:
  /// Fresh model initialized from config.seed.
  Trainer(const TrainConfig& config, const SceneDataset& data);
  /// Resume from a checkpoint; the checkpointed config must be compatible
  /// (only steps and bookkeeping intervals may differ from `config`).
  Trainer(const TrainConfig& config, const SceneDataset& data, const Container& checkpoint);

  const TrainConfig& config() const { return config_; }
  std::int64_t step() const { return step_; }
  Model<float>& model() { return *model_; }
  const Model<float>& model() const { return *model_; }
  const RayImportanceTable& importance() const { return table_; }

  /// One optimization step. Throws NumericError naming the offending loss
  /// term or parameter group; parameters are untouched in that case.
  LossRecord train_step();

  /// Runs until config.steps, streaming NDJSON records to `log` (if given).
  /// On a numeric failure the pre-step state is written to
  /// `<out_dir>/last_good.ckpt` before the error propagates.
  void run(std::ostream* log, const std::filesystem::path& out_dir = {},
           const std::function<void(const Trainer&)>& on_eval = {});

  Container checkpoint() const;

 private:
  void setup();

  TrainConfig config_;
  const SceneDataset& data_;
  RayImportanceTable table_;
  std::unique_ptr<Model<float>> model_;
  std::int64_t step_ = 0;
  Rng batch_rng_, sample_rng_, mine_rng_;
};

/// Model stored in a checkpoint (parameters and MINE state only).
Model<float> load_model(const Container& ckpt, TrainConfig* config_out = nullptr);

/// Writes parameters, Adam moments and MINE state of `model` under "param/".
void put_model(Container& c, const Model<float>& model);

}  // namespace msth

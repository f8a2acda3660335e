#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "msth/pipeline.hpp"

namespace msth {

enum class Provenance { paper, invented };

struct TrainConfig {
  // Optimization.
  std::int64_t steps = 10000;
  int batch_rays = 1024;
  double lr_grid = 1e-2;
  double lr_mlp = 1e-3;
  double lr_final_factor = 0.1;  // cosine decay floor as a fraction of the base rate
  std::uint64_t seed = 0;
  bool deterministic = true;

  // Sampling.
  int n_samples = 128;
  int n_proposal = 64;
  double tau1 = 0.1;
  double tau2 = 0.05;
  double p_uniform = 0.2;
  int importance_downsample = 1;

  // Losses.
  double lambda_u = 3e-5;
  double gamma = 3e-4;
  double lambda_dist = 2e-2;
  double lambda_mask = 1e-2;
  double lambda_prop = 1.0;
  double u_floor = 1e-2;
  int mine_samples = 1024;
  int mine_hidden = 32;
  double mine_ema = 0.99;

  // Field.
  std::string variant = "masked";
  int levels = 16;
  int features = 2;
  int log2_table_3d = 19;
  int log2_table_4d = 19;
  int base_resolution = 16;
  int max_resolution = 512;
  int time_base_resolution = 2;
  int time_max_resolution = 32;
  int mask_resolution = 128;
  int uncertainty_resolution = 64;
  double u_m = 0.03;
  int density_hidden = 64;
  int density_layers = 1;
  int geo_features = 15;
  int color_hidden = 64;
  int color_layers = 2;
  int proposal_resolution = 64;
  int proposal_st_resolution = 16;
  int proposal_time_resolution = 8;

  // Rendering / bookkeeping.
  double epsilon = 0.1;
  int log_every = 1;
  int eval_every = 0;
  int checkpoint_every = 0;
  int threads = 0;

  /// Visits (key, member, provenance) for every field.
  template <class F>
  void visit(F&& f);
  template <class F>
  void visit(F&& f) const {
    const_cast<TrainConfig*>(this)->visit([&](const char* k, auto& v, Provenance p) {
      f(k, static_cast<const std::remove_reference_t<decltype(v)>&>(v), p);
    });
  }

  void validate() const;
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  /// key = value lines; '#' comments and [section] headers are ignored.
  void load_file(const std::filesystem::path& path);
  void parse_text(const std::string& text, const std::string& origin);
  /// Exact round-trippable key = value text.
  std::string to_text() const;
  /// {"key": {"value": ..., "provenance": "paper" | "invented"}, ...}
  std::string resolved_json() const;

  ModelConfig model_config(const Aabb& bounds, int frames) const;
  PassOptions pass_options() const;
  LossWeights loss_weights() const;
  EncodingVariant encoding_variant() const;
};

template <class F>
void TrainConfig::visit(F&& f) {
  const auto P = Provenance::paper, I = Provenance::invented;
  f("steps", steps, I);
  f("batch_rays", batch_rays, I);
  f("lr_grid", lr_grid, I);
  f("lr_mlp", lr_mlp, I);
  f("lr_final_factor", lr_final_factor, I);
  f("seed", seed, I);
  f("deterministic", deterministic, I);
  f("n_samples", n_samples, P);
  f("n_proposal", n_proposal, I);
  f("tau1", tau1, I);
  f("tau2", tau2, I);
  f("p_uniform", p_uniform, I);
  f("importance_downsample", importance_downsample, I);
  f("lambda_u", lambda_u, P);
  f("gamma", gamma, P);
  f("lambda_dist", lambda_dist, P);
  f("lambda_mask", lambda_mask, I);
  f("lambda_prop", lambda_prop, I);
  f("u_floor", u_floor, I);
  f("mine_samples", mine_samples, I);
  f("mine_hidden", mine_hidden, I);
  f("mine_ema", mine_ema, I);
  f("variant", variant, I);
  f("levels", levels, I);
  f("features", features, I);
  f("log2_table_3d", log2_table_3d, I);
  f("log2_table_4d", log2_table_4d, I);
  f("base_resolution", base_resolution, I);
  f("max_resolution", max_resolution, I);
  f("time_base_resolution", time_base_resolution, I);
  f("time_max_resolution", time_max_resolution, I);
  f("mask_resolution", mask_resolution, P);
  f("uncertainty_resolution", uncertainty_resolution, I);
  f("u_m", u_m, I);
  f("density_hidden", density_hidden, I);
  f("density_layers", density_layers, I);
  f("geo_features", geo_features, I);
  f("color_hidden", color_hidden, I);
  f("color_layers", color_layers, I);
  f("proposal_resolution", proposal_resolution, I);
  f("proposal_st_resolution", proposal_st_resolution, I);
  f("proposal_time_resolution", proposal_time_resolution, I);
  f("epsilon", epsilon, I);
  f("log_every", log_every, I);
  f("eval_every", eval_every, I);
  f("checkpoint_every", checkpoint_every, I);
  f("threads", threads, I);
}

std::string to_string(Provenance p);

}  // namespace msth

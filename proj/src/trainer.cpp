#include "msth/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "msth/simd/kernels.hpp"

namespace msth {

double scheduled_lr(double base, double final_factor, std::int64_t step, std::int64_t total) {
  if (total <= 0) return base;
  const double x = std::min(1.0, double(step) / double(total));
  return base * (final_factor + (1.0 - final_factor) * 0.5 * (1.0 + std::cos(std::numbers::pi * x)));
}

bool is_grid_group(const std::string& name) {
  return name != "density_mlp" && name != "color_mlp" && name != "mine_critic";
}

RayImportanceTable build_importance(const SceneDataset& data, const ImportanceParams& params,
                                    const std::filesystem::path& cache) {
  std::vector<VideoView> videos;
  for (int c : data.train) {
    VideoView v;
    v.width = data.cameras[c].width;
    v.height = data.cameras[c].height;
    for (const auto& img : data.frames[c]) v.frames.emplace_back(img.data);
    videos.push_back(std::move(v));
  }
  if (cache.empty()) return RayImportanceTable::build(videos, params);
  return RayImportanceTable::build_cached(cache, videos, params);
}

RayBatch make_batch(const SceneDataset& data, const RayImportanceTable& table,
                    std::span<const RaySample> draws) {
  RayBatch b;
  b.rays.reserve(draws.size());
  b.times.reserve(draws.size());
  b.target.reserve(draws.size() * 3);
  for (const auto& d : draws) {
    const int cam = data.train[table.camera_of(d.ray)];
    const PinholeCamera& c = data.cameras[cam];
    const std::uint32_t px = table.pixel_of(d.ray);
    b.rays.push_back(generate_ray(c, px % c.width, px / c.width));
    b.times.push_back(data.time_of(int(d.t)));
    const Image& img = data.frames[cam][d.t];
    for (int k = 0; k < 3; ++k) b.target.push_back(img.data[std::size_t(px) * 3 + k]);
  }
  return b;
}

namespace {

ImportanceParams importance_params(const TrainConfig& c) {
  ImportanceParams p;
  p.tau1 = c.tau1;
  p.tau2 = c.tau2;
  p.downsample = c.importance_downsample;
  return p;
}

// Keys that may change between a checkpoint and a resumed run.
bool resumable_key(const std::string& k) {
  return k == "steps" || k == "log_every" || k == "eval_every" || k == "checkpoint_every" ||
         k == "threads";
}

void put_dataset_meta(Container& c, const SceneDataset& data) {
  const double b[6] = {data.bounds.lo.x, data.bounds.lo.y, data.bounds.lo.z,
                       data.bounds.hi.x, data.bounds.hi.y, data.bounds.hi.z};
  c.put("meta/bounds", std::span<const double>(b, 6));
  c.put_i64("meta/frames", data.T);
}

void restore_model(const Container& c, Model<float>& model) {
  for (auto* g : model.param_groups()) {
    const std::string p = "param/" + g->name;
    c.get(p + "/values", g->values, g->size());
    c.get(p + "/adam_m", g->adam_m, g->size());
    c.get(p + "/adam_v", g->adam_v, g->size());
    g->step_count = c.get_i64(p + "/step_count");
    g->skipped_updates = c.get_i64(p + "/skipped_updates");
    g->grads.assign(g->size(), 0.f);
  }
  model.mine.ema_denominator = c.get_f64("mine/ema_denominator");
  model.mine.ema_initialized = c.get_i64("mine/ema_initialized") != 0;
  model.mine.skipped_batches = c.get_i64("mine/skipped_batches");
}

}  // namespace

void put_model(Container& c, const Model<float>& model) {
  for (const auto* g : model.param_groups()) {
    const std::string p = "param/" + g->name;
    c.put(p + "/values", std::span<const float>(g->values));
    c.put(p + "/adam_m", std::span<const float>(g->adam_m));
    c.put(p + "/adam_v", std::span<const float>(g->adam_v));
    c.put_i64(p + "/step_count", g->step_count);
    c.put_i64(p + "/skipped_updates", g->skipped_updates);
  }
  c.put_f64("mine/ema_denominator", model.mine.ema_denominator);
  c.put_i64("mine/ema_initialized", model.mine.ema_initialized ? 1 : 0);
  c.put_i64("mine/skipped_batches", model.mine.skipped_batches);
}

Model<float> load_model(const Container& c, TrainConfig* config_out) {
  TrainConfig cfg;
  cfg.parse_text(c.get_string("config"), "checkpoint config");
  std::vector<double> b;
  c.get("meta/bounds", b, 6);
  const Aabb box{{b[0], b[1], b[2]}, {b[3], b[4], b[5]}};
  Model<float> model(cfg.model_config(box, int(c.get_i64("meta/frames"))));
  restore_model(c, model);
  if (config_out) *config_out = cfg;
  return model;
}

Trainer::Trainer(const TrainConfig& config, const SceneDataset& data)
    : config_(config), data_(data) {
  setup();
  Rng root(config_.seed);
  Rng init_rng = root.split(10);
  model_->init(init_rng);
}

Trainer::Trainer(const TrainConfig& config, const SceneDataset& data, const Container& ckpt)
    : config_(config), data_(data) {
  TrainConfig saved;
  saved.parse_text(ckpt.get_string("config"), "checkpoint config");
  std::string diff;
  saved.visit([&](const char* k, const auto&, Provenance) {
    if (!resumable_key(k) && saved.get(k) != config_.get(k))
      diff += std::string(" ") + k + " (" + saved.get(k) + " vs " + config_.get(k) + ")";
  });
  if (!diff.empty()) throw ConfigError("checkpoint config differs from the requested config:" + diff);
  std::vector<double> b;
  ckpt.get("meta/bounds", b, 6);
  if (b[0] != data.bounds.lo.x || b[1] != data.bounds.lo.y || b[2] != data.bounds.lo.z ||
      b[3] != data.bounds.hi.x || b[4] != data.bounds.hi.y || b[5] != data.bounds.hi.z ||
      ckpt.get_i64("meta/frames") != data.T)
    throw ConfigError("checkpoint was trained on a dataset with different bounds or frame count");
  setup();
  restore_model(ckpt, *model_);
  step_ = ckpt.get_i64("step");
  batch_rng_.deserialize(ckpt.get_string("rng/batch"));
  sample_rng_.deserialize(ckpt.get_string("rng/sample"));
  mine_rng_.deserialize(ckpt.get_string("rng/mine"));
}

void Trainer::setup() {
  config_.validate();
  table_ = build_importance(data_, importance_params(config_));
  model_ = std::make_unique<Model<float>>(config_.model_config(data_.bounds, data_.T));
  Rng root(config_.seed);
  batch_rng_ = root.split(11);
  sample_rng_ = root.split(12);
  mine_rng_ = root.split(13);
}

LossRecord Trainer::train_step() {
  // A failed step must leave the trainer exactly as it was.
  const Rng saved[3] = {batch_rng_, sample_rng_, mine_rng_};
  const auto draws = table_.sample_batch(std::size_t(config_.batch_rays), batch_rng_, config_.p_uniform);
  const RayBatch batch = make_batch(data_, table_, draws);
  PassOptions opt = config_.pass_options();
  opt.jitter = true;
  opt.update_ema = true;
  opt.backward = true;

  const double ema = model_->mine.ema_denominator;
  const bool ema_init = model_->mine.ema_initialized;
  auto restore = [&] {
    batch_rng_ = saved[0];
    sample_rng_ = saved[1];
    mine_rng_ = saved[2];
    model_->zero_grads();
    model_->mine.ema_denominator = ema;
    model_->mine.ema_initialized = ema_init;
  };

  model_->zero_grads();
  LossRecord rec;
  try {
    rec = run_batch(*model_, batch, opt, sample_rng_, mine_rng_);
  } catch (...) {
    restore();
    throw;
  }
  rec.step = step_;
  const std::pair<const char*, double> parts[] = {{"L_r", rec.L_r},       {"L_u", rec.L_u},
                                                  {"I", rec.I},           {"L_mask", rec.L_mask},
                                                  {"L_dist", rec.L_dist}, {"L_prop", rec.L_prop},
                                                  {"total", rec.total}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v)) {
      restore();
      throw NumericError(name, "non-finite " + std::string(name) + " at step " + std::to_string(step_));
    }
  auto groups = model_->param_groups();
  for (auto* g : groups)
    if (!simd::active_kernels().all_finite(g->grads.data(), g->grads.size())) {
      restore();
      throw NumericError(g->name, "non-finite gradient in " + g->name + " at step " +
                                      std::to_string(step_));
    }
  for (auto* g : groups) {
    AdamParams a;
    a.lr = scheduled_lr(is_grid_group(g->name) ? config_.lr_grid : config_.lr_mlp,
                        config_.lr_final_factor, step_, config_.steps);
    adam_step(*g, a);
  }
  ++step_;
  return rec;
}

void Trainer::run(std::ostream* log, const std::filesystem::path& out_dir,
                  const std::function<void(const Trainer&)>& on_eval) {
  while (step_ < config_.steps) {
    LossRecord rec;
    try {
      rec = train_step();
    } catch (const NumericError&) {
      if (!out_dir.empty()) checkpoint().save(out_dir / "last_good.ckpt");
      throw;
    }
    if (log && (rec.step % config_.log_every == 0 || step_ == config_.steps))
      *log << rec.to_json() << '\n';
    if (!out_dir.empty() && config_.checkpoint_every > 0 && step_ % config_.checkpoint_every == 0)
      checkpoint().save(out_dir / "checkpoint.ckpt");
    if (on_eval && config_.eval_every > 0 && step_ % config_.eval_every == 0) on_eval(*this);
  }
  if (log) log->flush();
}

Container Trainer::checkpoint() const {
  Container c;
  c.put_string("config", config_.to_text());
  c.put_i64("step", step_);
  c.put_string("rng/batch", batch_rng_.serialize());
  c.put_string("rng/sample", sample_rng_.serialize());
  c.put_string("rng/mine", mine_rng_.serialize());
  put_dataset_meta(c, data_);
  put_model(c, *model_);
  return c;
}

}  // namespace msth

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "msth/evaluate.hpp"
#include "msth/gradcheck.hpp"
#include "msth/hash_grid.hpp"
#include "msth/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace msth;

namespace {

struct ConfigArgs {
  std::string file;
  std::vector<std::string> sets;

  void add(CLI::App* app) {
    app->add_option("--config", file, "key = value config file");
    app->add_option("--set", sets, "override, key=value (repeatable)");
  }

  TrainConfig resolve() const {
    TrainConfig c;
    if (!file.empty()) c.load_file(file);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      c.set(s.substr(0, eq), s.substr(eq + 1));
    }
    c.validate();
    return c;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text << '\n';
}

void dump_config(const fs::path& dir, const TrainConfig& c) {
  fs::create_directories(dir);
  write_text(dir / "resolved_config.json", c.resolved_json());
}

EvalOptions eval_options(const TrainConfig& c) {
  EvalOptions o;
  o.n_samples = c.n_samples;
  o.n_proposal = c.n_proposal;
  o.threads = c.threads;
  return o;
}

Image to_image(const FrameBuffers& fb) {
  Image img(fb.width, fb.height, 3);
  img.data = fb.rgb;
  return img;
}

int error_exit(const char* type, const std::string& message, const std::string& component = {}) {
  json j;
  j["error"] = {{"type", type}, {"message", message}};
  if (!component.empty()) j["error"]["component"] = component;
  std::cerr << j.dump() << std::endl;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked space-time hash encoding: training, rendering and diagnostics"};
  app.require_subcommand(1);

  // synth
  SynthSpec synth;
  std::string synth_out;
  int synth_threads = 0;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic dataset with the analytic oracle");
  c_synth->add_option("--preset", synth.preset, "orbiting-sphere | moving-box | static");
  c_synth->add_option("--out", synth_out, "output directory")->required();
  c_synth->add_option("--frames", synth.frames);
  c_synth->add_option("--width", synth.width);
  c_synth->add_option("--height", synth.height);
  c_synth->add_option("--train-cameras", synth.train_cameras);
  c_synth->add_option("--test-cameras", synth.test_cameras);
  c_synth->add_option("--oracle-samples", synth.oracle_samples);
  c_synth->add_option("--seed", synth.seed);
  c_synth->add_option("--threads", synth_threads);

  // train
  ConfigArgs train_cfg;
  std::string train_data, train_out, train_resume;
  auto* c_train = app.add_subcommand("train", "Train on a dataset");
  c_train->add_option("--data", train_data)->required();
  c_train->add_option("--out", train_out)->required();
  c_train->add_option("--resume", train_resume, "checkpoint to continue from");
  train_cfg.add(c_train);

  // eval
  std::string eval_data, eval_ckpt, eval_out, eval_split = "test";
  int eval_stride = 1;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  c_eval->add_option("--data", eval_data)->required();
  c_eval->add_option("--checkpoint", eval_ckpt)->required();
  c_eval->add_option("--split", eval_split)->check(CLI::IsMember({"test", "train"}));
  c_eval->add_option("--frame-stride", eval_stride);
  c_eval->add_option("--out", eval_out, "report JSON path (default: stdout)");

  // render
  std::string render_data, render_ckpt, render_out;
  int render_camera = -1, render_frames = 0;
  double render_time = 0, render_eps = -1, render_eps_ray = -1;
  bool render_incremental = false, render_compare = false;
  auto* c_render = app.add_subcommand("render", "Render a frame or an incremental video");
  c_render->add_option("--data", render_data, "dataset providing the camera")->required();
  c_render->add_option("--checkpoint", render_ckpt)->required();
  c_render->add_option("--out", render_out, "PNG path, or directory with --incremental")->required();
  c_render->add_option("--camera", render_camera, "camera index (default: first test camera)");
  c_render->add_option("--time", render_time, "normalized time in [0,1]");
  c_render->add_flag("--incremental", render_incremental);
  c_render->add_option("--epsilon", render_eps, "dynamic threshold (default from config)");
  c_render->add_option("--epsilon-ray", render_eps_ray, "per-ray threshold (default 1 - epsilon)");
  c_render->add_option("--frames", render_frames, "video length (default: dataset T)");
  c_render->add_flag("--compare", render_compare, "also render every frame in full and report PSNR");

  // collision-stats
  std::string cs_ckpt;
  std::uint64_t cs_keys = 0;
  int cs_log2 = 19;
  double cs_gate = 1e-2;
  auto* c_cs = app.add_subcommand("collision-stats", "4D table write and collision statistics");
  c_cs->add_option("--checkpoint", cs_ckpt, "trained checkpoint");
  c_cs->add_option("--random-keys", cs_keys, "hash this many random 4D keys instead");
  c_cs->add_option("--log2-table", cs_log2);
  c_cs->add_option("--gate", cs_gate, "count a write as gated in if 1 - m exceeds this");

  // grad-check
  GradCheckOptions gc;
  double gc_tol = 1e-3;
  auto* c_gc = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  c_gc->add_option("--seed", gc.seed);
  c_gc->add_option("--per-group", gc.per_group);
  c_gc->add_option("--tolerance", gc_tol);

  // ablate
  ConfigArgs ablate_cfg;
  std::string ablate_data, ablate_out;
  std::vector<std::string> ablate_variants = {"masked", "masked_no_uncertainty", "additive", "pure4d"};
  auto* c_ablate = app.add_subcommand("ablate", "Train and compare encoding variants");
  c_ablate->add_option("--data", ablate_data)->required();
  c_ablate->add_option("--out", ablate_out)->required();
  c_ablate->add_option("--variants", ablate_variants);
  ablate_cfg.add(c_ablate);

  // mine-sanity
  MineSanityOptions ms;
  auto* c_ms = app.add_subcommand("mine-sanity", "MINE estimate on correlated Gaussians");
  c_ms->add_option("--rho", ms.rho);
  c_ms->add_option("--samples", ms.samples);
  c_ms->add_option("--steps", ms.steps);
  c_ms->add_option("--seed", ms.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return error_exit("UsageError", e.what());
  }

  try {
    if (c_synth->parsed()) {
      const SceneDataset ds = generate_synthetic(synth, synth_out, synth_threads);
      json j = {{"dataset", synth_out}, {"T", ds.T}, {"cameras", ds.cameras.size()}};
      std::cout << j.dump() << std::endl;
    } else if (c_train->parsed()) {
      const TrainConfig cfg = train_cfg.resolve();
      dump_config(train_out, cfg);
      const SceneDataset ds = load_dataset(train_data);
      std::unique_ptr<Trainer> trainer;
      if (train_resume.empty()) trainer = std::make_unique<Trainer>(cfg, ds);
      else trainer = std::make_unique<Trainer>(cfg, ds, Container::load(train_resume));
      std::ofstream log(fs::path(train_out) / "metrics.ndjson", trainer->step() ? std::ios::app : std::ios::trunc);
      std::ofstream eval_log(fs::path(train_out) / "eval.ndjson", std::ios::app);
      const EvalOptions eo = eval_options(cfg);
      trainer->run(&log, train_out, [&](const Trainer& t) {
        const EvalReport r = evaluate(t.model(), ds, eo);
        json j = {{"step", t.step()}, {"psnr", r.mean_psnr}, {"dssim", r.mean_dssim}};
        eval_log << j.dump() << '\n';
      });
      trainer->checkpoint().save(fs::path(train_out) / "checkpoint.ckpt");
      json j = {{"checkpoint", (fs::path(train_out) / "checkpoint.ckpt").string()}, {"steps", trainer->step()}};
      std::cout << j.dump() << std::endl;
    } else if (c_eval->parsed()) {
      TrainConfig cfg;
      const Model<float> model = load_model(Container::load(eval_ckpt), &cfg);
      const SceneDataset ds = load_dataset(eval_data);
      EvalOptions eo = eval_options(cfg);
      eo.train_split = eval_split == "train";
      eo.frame_stride = eval_stride;
      const std::string report = evaluate(model, ds, eo).to_json();
      if (eval_out.empty()) {
        std::cout << report << std::endl;
      } else {
        write_text(eval_out, report);
        dump_config(fs::path(eval_out).parent_path().empty() ? fs::path(".") : fs::path(eval_out).parent_path(), cfg);
      }
    } else if (c_render->parsed()) {
      TrainConfig cfg;
      const Model<float> model = load_model(Container::load(render_ckpt), &cfg);
      const SceneDataset ds = load_dataset(render_data);
      if (render_camera < 0) render_camera = ds.test.empty() ? ds.train.front() : ds.test.front();
      if (render_camera >= int(ds.cameras.size())) throw ConfigError("camera index out of range");
      const PinholeCamera& cam = ds.cameras[render_camera];
      ModelSource<float> source(model, cfg.n_samples, cfg.n_proposal);
      if (!render_incremental) {
        const FrameBuffers fb = render_frame(source, cam, render_time, cfg.threads);
        if (fs::path(render_out).has_parent_path()) fs::create_directories(fs::path(render_out).parent_path());
        write_png(render_out, to_image(fb));
        json j = {{"image", render_out}, {"time", render_time}};
        std::cout << j.dump() << std::endl;
      } else {
        const int frames = render_frames > 0 ? render_frames : ds.T;
        std::vector<double> times(frames);
        for (int f = 0; f < frames; ++f) times[f] = frames > 1 ? double(f) / (frames - 1) : 0.0;
        const double eps = render_eps > 0 ? render_eps : cfg.epsilon;
        const IncrementalVideo v = render_video_incremental(source, cam, times, eps, render_eps_ray, cfg.threads);
        fs::create_directories(render_out);
        json j;
        j["frames"] = frames;
        j["epsilon"] = eps;
        j["epsilon_ray"] = v.epsilon_ray;
        j["dynamic_pixels"] = v.dynamic_pixels;
        j["dynamic_fraction"] = double(v.dynamic_pixels) / double(cam.width * cam.height);
        j["rendered_pixels"] = v.rendered_pixels;
        j["total_pixels"] = v.total_pixels;
        j["speedup"] = v.speedup;
        double min_psnr = 99;
        for (int f = 0; f < frames; ++f) {
          char name[32];
          std::snprintf(name, sizeof name, "frame_%04d.png", f);
          write_png(fs::path(render_out) / name, to_image(v.frames[f]));
          if (render_compare)
            min_psnr = std::min(min_psnr, psnr(to_image(v.frames[f]),
                                               to_image(render_frame(source, cam, times[f], cfg.threads))));
        }
        if (render_compare) j["min_psnr_vs_full"] = min_psnr;
        write_text(fs::path(render_out) / "incremental.json", j.dump(2));
        std::cout << j.dump() << std::endl;
      }
    } else if (c_cs->parsed()) {
      json j;
      if (cs_keys > 0) {
        HashGridConfig hc{4, 1, 1, cs_log2, 2048, 2048, 2048, 2048};
        HashGrid<float> grid(hc, "probe");
        Rng rng(1);
        std::vector<std::uint32_t> pts(cs_keys * 4);
        for (auto& p : pts) p = std::uint32_t(rng.below(2048));
        const CollisionStats s = grid.collision_stats(0, pts);
        const double load = double(cs_keys) / double(s.slot_count);
        j["random_keys"] = {{"keys", cs_keys},
                            {"slots", s.slot_count},
                            {"distinct_keys", s.distinct_keys},
                            {"occupied_fraction", s.occupied_fraction},
                            {"expected_occupied_fraction", 1.0 - std::exp(-load)},
                            {"max_slot_load", s.max_slot_load}};
      }
      if (!cs_ckpt.empty()) {
        TrainConfig cfg;
        const Model<float> model = load_model(Container::load(cs_ckpt), &cfg);
        EvalOptions eo = eval_options(cfg);
        const MaskMetrics mm = mask_metrics(model, eo);
        const WriteStats w = table4d_write_stats(model, mm.occupied_points, eo.probe_times, cs_gate);
        j["variant"] = cfg.variant;
        j["occupied_voxels"] = mm.occupied;
        j["table4d"] = {{"points", w.points},
                        {"gated_writes", w.gated_writes},
                        {"ungated_writes", w.ungated_writes},
                        {"gated_slots", w.gated_slots},
                        {"ungated_slots", w.ungated_slots},
                        {"gated_fraction", w.ungated_writes ? double(w.gated_writes) / double(w.ungated_writes) : 0.0}};
        json levels = json::array();
        for (const auto& lv : model.field.table4d.levels())
          levels.push_back({{"resolution", lv.resolution}, {"time_resolution", lv.time_resolution},
                            {"slots", lv.slots}, {"dense", lv.dense}});
        j["table4d_levels"] = levels;
      }
      if (j.empty()) throw ConfigError("collision-stats needs --checkpoint and/or --random-keys");
      std::cout << j.dump(2) << std::endl;
    } else if (c_gc->parsed()) {
      auto results = grad_check_pipeline(gc);
      for (auto& r : grad_check_components(gc)) results.push_back(r);
      json arr = json::array();
      double worst = 0;
      for (const auto& r : results) {
        arr.push_back({{"suite", r.suite}, {"group", r.group}, {"checked", r.checked},
                       {"max_rel_error", r.max_rel_error}, {"max_abs_grad", r.max_abs_grad}});
        worst = std::max(worst, r.max_rel_error);
      }
      json j = {{"results", arr}, {"max_rel_error", worst}, {"tolerance", gc_tol}, {"pass", worst < gc_tol}};
      std::cout << j.dump(2) << std::endl;
      if (!(worst < gc_tol)) return 2;
    } else if (c_ablate->parsed()) {
      const TrainConfig cfg = ablate_cfg.resolve();
      dump_config(ablate_out, cfg);
      const SceneDataset ds = load_dataset(ablate_data);
      const auto rows = ablate(cfg, ds, ablate_variants, eval_options(cfg));
      json arr = json::array();
      for (const auto& r : rows)
        arr.push_back({{"variant", r.variant},
                       {"psnr", r.report.mean_psnr},
                       {"dssim", r.report.mean_dssim},
                       {"mask_entropy", r.report.mask_entropy},
                       {"dynamic_fraction", r.report.dynamic_fraction}});
      write_text(fs::path(ablate_out) / "ablation.json", arr.dump(2));
      std::cout << arr.dump(2) << std::endl;
    } else if (c_ms->parsed()) {
      const MineSanityResult r = mine_sanity(ms);
      json j = {{"rho", ms.rho}, {"estimate", r.estimate}, {"analytic", r.analytic},
                {"error", r.estimate - r.analytic}};
      std::cout << j.dump() << std::endl;
    }
  } catch (const NumericError& e) {
    return error_exit("NumericError", e.what(), e.component());
  } catch (const ConfigError& e) {
    return error_exit("ConfigError", e.what());
  } catch (const FormatError& e) {
    return error_exit("FormatError", e.what());
  } catch (const std::exception& e) {
    return error_exit("Error", e.what());
  }
  return 0;
}

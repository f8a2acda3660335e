#include "msth/evaluate.hpp"

#include <algorithm>
#include <unordered_set>

#include "json.hpp"
#include "msth/trainer.hpp"

namespace msth {

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["mean_psnr"] = mean_psnr;
  j["mean_dssim"] = mean_dssim;
  auto& fr = j["frames"] = nlohmann::ordered_json::array();
  for (const auto& f : frames)
    fr.push_back({{"camera", f.camera}, {"frame", f.frame}, {"psnr", f.psnr}, {"dssim", f.dssim}});
  j["occupied_voxels"] = occupied_voxels;
  j["dynamic_fraction"] = dynamic_fraction;
  j["mask_entropy"] = mask_entropy;
  if (has_iou) j["mask_iou"] = mask_iou;
  j["table4d_writes"] = {{"points", writes.points},
                         {"ungated_writes", writes.ungated_writes},
                         {"gated_writes", writes.gated_writes},
                         {"ungated_slots", writes.ungated_slots},
                         {"gated_slots", writes.gated_slots}};
  return j.dump(2);
}

namespace {

constexpr std::size_t kProbeChunk = 4096;

double probe_time(int k, int count) { return count > 1 ? double(k) / (count - 1) : 0.0; }

}  // namespace

MaskMetrics mask_metrics(const Model<float>& model, const EvalOptions& opt) {
  const int G = opt.grid;
  if (G < 1 || opt.probe_times < 1) throw ConfigError("mask probe needs grid >= 1 and probe_times >= 1");
  const std::size_t V = std::size_t(G) * G * G;
  std::vector<float> max_sigma(V, 0.f), mask(V, 0.f);
  FieldInputs<float> in;
  FieldOutputs<float> out;
  for (int k = 0; k < opt.probe_times; ++k) {
    const float t = float(probe_time(k, opt.probe_times));
    for (std::size_t lo = 0; lo < V; lo += kProbeChunk) {
      const std::size_t n = std::min(kProbeChunk, V - lo);
      in.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t v = lo + i;
        in.pos[i * 3] = (float(v % G) + 0.5f) / G;
        in.pos[i * 3 + 1] = (float((v / G) % G) + 0.5f) / G;
        in.pos[i * 3 + 2] = (float(v / (std::size_t(G) * G)) + 0.5f) / G;
        in.time[i] = t;
        in.dir[i * 3] = 0.f;
        in.dir[i * 3 + 1] = 0.f;
        in.dir[i * 3 + 2] = 1.f;
      }
      model.field.forward(in, QueryFlags{true, false, false}, out, nullptr);
      for (std::size_t i = 0; i < n; ++i) {
        max_sigma[lo + i] = std::max(max_sigma[lo + i], out.sigma[i]);
        if (k == 0) mask[lo + i] = out.mask[i];
      }
    }
  }
  MaskMetrics m;
  double dyn = 0;
  std::uint64_t mid = 0;
  for (std::size_t v = 0; v < V; ++v) {
    if (!(max_sigma[v] > opt.sigma_threshold)) continue;
    ++m.occupied;
    dyn += 1.0 - mask[v];
    if (mask[v] >= 0.1f && mask[v] <= 0.9f) ++mid;
    m.occupied_points.push_back((float(v % G) + 0.5f) / G);
    m.occupied_points.push_back((float((v / G) % G) + 0.5f) / G);
    m.occupied_points.push_back((float(v / (std::size_t(G) * G)) + 0.5f) / G);
  }
  if (m.occupied) {
    m.dynamic_fraction = dyn / double(m.occupied);
    m.entropy = double(mid) / double(m.occupied);
  }
  return m;
}

WriteStats table4d_write_stats(const Model<float>& model, std::span<const float> points,
                               int probe_times, double gate) {
  const auto& field = model.field;
  WriteStats s;
  const std::size_t n = points.size() / 3;
  std::unordered_set<std::uint32_t> all, gated;
  std::vector<float> p4, feat, mvals(n);
  // Without a mask (additive, pure4d) m reads as 0, so every point writes.
  for (std::size_t i = 0; i < n; ++i)
    mvals[i] = field.mask_value({points[i * 3], points[i * 3 + 1], points[i * 3 + 2]});
  EncodeCache<float> cache;
  for (int k = 0; k < probe_times; ++k) {
    const float t = float(probe_time(k, probe_times));
    for (std::size_t lo = 0; lo < n; lo += kProbeChunk) {
      const std::size_t m = std::min(kProbeChunk, n - lo);
      p4.resize(m * 4);
      feat.resize(m * field.table4d.output_dim());
      for (std::size_t i = 0; i < m; ++i) {
        for (int c = 0; c < 3; ++c) p4[i * 4 + c] = points[(lo + i) * 3 + c];
        p4[i * 4 + 3] = t;
      }
      field.table4d.encode(p4, m, feat, &cache);
      const std::size_t per_point = std::size_t(cache.levels) * cache.corners();
      for (std::size_t i = 0; i < m; ++i) {
        const bool in_gate = 1.0 - mvals[lo + i] > gate;
        ++s.points;
        for (std::size_t e = 0; e < per_point; ++e) {
          const std::uint32_t slot = cache.slot[i * per_point + e];
          ++s.ungated_writes;
          all.insert(slot);
          if (in_gate) {
            ++s.gated_writes;
            gated.insert(slot);
          }
        }
      }
    }
  }
  s.ungated_slots = all.size();
  s.gated_slots = gated.size();
  return s;
}

double mask_iou(const Image& predicted, const Image& truth) {
  if (predicted.width != truth.width || predicted.height != truth.height)
    throw ConfigError("mask_iou: mask sizes differ");
  std::uint64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < predicted.pixels(); ++i) {
    const bool a = predicted.data[i * predicted.channels] > 0.5f;
    const bool b = truth.data[i * truth.channels] > 0.5f;
    inter += a && b;
    uni += a || b;
  }
  return uni ? double(inter) / double(uni) : 1.0;
}

EvalReport evaluate(const Model<float>& model, const SceneDataset& data, const EvalOptions& opt) {
  if (opt.frame_stride < 1) throw ConfigError("frame_stride must be >= 1");
  EvalReport r;
  ModelSource<float> source(model, opt.n_samples, opt.n_proposal);
  const auto& cams = opt.train_split ? data.train : data.test;
  double iou_sum = 0;
  int iou_count = 0;
  for (int c : cams) {
    const PinholeCamera& cam = data.cameras[c];
    Image predicted_mask(cam.width, cam.height, 1);
    for (int f = 0; f < data.T; f += opt.frame_stride) {
      const FrameBuffers fb = render_frame(source, cam, data.time_of(f), opt.threads);
      Image img(cam.width, cam.height, 3);
      img.data = fb.rgb;
      const Image& gt = data.frames[c][f];
      r.frames.push_back({c, f, psnr(img, gt), d_ssim(img, gt)});
      for (std::size_t p = 0; p < predicted_mask.pixels(); ++p)
        if (fb.dynamic_weight[p] > opt.iou_threshold) predicted_mask.data[p] = 1.f;
    }
    if (!data.dynamic_masks[c].data.empty()) {
      iou_sum += mask_iou(predicted_mask, data.dynamic_masks[c]);
      ++iou_count;
    }
  }
  for (const auto& f : r.frames) {
    r.mean_psnr += f.psnr;
    r.mean_dssim += f.dssim;
  }
  if (!r.frames.empty()) {
    r.mean_psnr /= double(r.frames.size());
    r.mean_dssim /= double(r.frames.size());
  }
  if (iou_count) {
    r.has_iou = true;
    r.mask_iou = iou_sum / iou_count;
  }
  const MaskMetrics mm = mask_metrics(model, opt);
  r.occupied_voxels = mm.occupied;
  r.dynamic_fraction = mm.dynamic_fraction;
  r.mask_entropy = mm.entropy;
  r.writes = table4d_write_stats(model, mm.occupied_points, opt.probe_times, opt.write_gate);
  return r;
}

TrainConfig variant_config(const TrainConfig& base, const std::string& variant) {
  TrainConfig c = base;
  if (variant == "masked_no_uncertainty") {
    c.variant = "masked";
    c.lambda_u = 0;
    c.gamma = 0;
  } else {
    parse_variant(variant);
    c.variant = variant;
  }
  return c;
}

std::vector<AblationRow> ablate(const TrainConfig& base, const SceneDataset& data,
                                const std::vector<std::string>& variants, const EvalOptions& opt) {
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    Trainer trainer(variant_config(base, v), data);
    trainer.run(nullptr);
    rows.push_back({v, evaluate(trainer.model(), data, opt)});
  }
  return rows;
}

}  // namespace msth

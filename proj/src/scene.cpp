#include "msth/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace msth {

Vec3 Primitive::center_at(double t) const {
  if (!moving) return center;
  const double a = 2.0 * std::numbers::pi * (orbit_phase + orbit_cycles * t);
  return center + Vec3{orbit_radius * std::cos(a), 0.0, orbit_radius * std::sin(a)};
}

double Primitive::bound_radius() const {
  const double core = kind == Kind::sphere ? radius : norm(half);
  return core + 0.5 * edge;
}

namespace {

double signed_distance(const Primitive& p, const Vec3& x, const Vec3& c) {
  if (p.kind == Primitive::Kind::sphere) return norm(x - c) - p.radius;
  const Vec3 q{std::abs(x.x - c.x) - p.half.x, std::abs(x.y - c.y) - p.half.y,
               std::abs(x.z - c.z) - p.half.z};
  const Vec3 qp{std::max(q.x, 0.0), std::max(q.y, 0.0), std::max(q.z, 0.0)};
  return norm(qp) + std::min(std::max(q.x, std::max(q.y, q.z)), 0.0);
}

double occupancy(double sd, double edge) {
  const double u = std::clamp(0.5 - sd / edge, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

std::array<double, 3> primitive_color(const Primitive& p, const Vec3& x, const Vec3& c) {
  if (p.checker <= 0) return p.color;
  const auto cell = [&](double v) { return static_cast<long>(std::floor(v / p.checker)); };
  const long parity = cell(x.x - c.x) + cell(x.y - c.y) + cell(x.z - c.z);
  return (parity & 1) ? p.color2 : p.color;
}

}  // namespace

void AnalyticScene::eval(const Vec3& x, double t, double& sigma, std::array<double, 3>& rgb) const {
  sigma = 0;
  rgb = {0, 0, 0};
  for (const auto& p : primitives) {
    const Vec3 c = p.center_at(t);
    const double occ = occupancy(signed_distance(p, x, c), p.edge);
    if (occ <= 0) continue;
    const double s = p.density * occ;
    const auto col = primitive_color(p, x, c);
    for (int k = 0; k < 3; ++k) rgb[k] += s * col[k];
    sigma += s;
  }
  if (sigma > 0)
    for (auto& v : rgb) v /= sigma;
}

bool AnalyticScene::has_moving() const {
  return std::any_of(primitives.begin(), primitives.end(), [](const auto& p) { return p.moving; });
}

bool AnalyticScene::ray_hits_moving(const Ray& ray, int time_samples) const {
  for (const auto& p : primitives) {
    if (!p.moving) continue;
    for (int k = 0; k < time_samples; ++k) {
      const double t = time_samples > 1 ? double(k) / (time_samples - 1) : 0.0;
      const Vec3 c = p.center_at(t);
      double t0, t1;
      bool hit;
      if (p.kind == Primitive::Kind::sphere)
        hit = intersect_sphere(ray.origin, ray.dir, c, p.radius, t0, t1);
      else
        hit = intersect_aabb(ray.origin, ray.dir, Aabb{c - p.half, c + p.half}, t0, t1);
      if (hit && t1 > ray.near && t0 < ray.far) return true;
    }
  }
  return false;
}

double AnalyticScene::dynamic_fraction(Rng& rng, int points, int time_samples) const {
  int inside = 0;
  for (int i = 0; i < points; ++i) {
    const Vec3 x = bounds.denormalize_point({rng.uniform(), rng.uniform(), rng.uniform()});
    bool hit = false;
    for (const auto& p : primitives) {
      if (!p.moving) continue;
      for (int k = 0; k < time_samples && !hit; ++k)
        hit = signed_distance(p, x, p.center_at(double(k) / std::max(1, time_samples - 1))) < 0;
    }
    inside += hit;
  }
  return double(inside) / points;
}

std::array<double, 3> oracle_shade(const AnalyticScene& scene, const Ray& ray, double t,
                                   int n_samples, double* depth) {
  double a, b;
  if (depth) *depth = 0;
  if (!intersect_aabb(ray.origin, ray.dir, scene.bounds, a, b)) return {0, 0, 0};
  a = std::max(a, ray.near);
  b = std::min(b, ray.far);
  if (!(b > a)) return {0, 0, 0};
  const double delta = (b - a) / n_samples;

  // Support intervals of every primitive, merged.
  std::vector<std::pair<double, double>> spans;
  for (const auto& p : scene.primitives) {
    double t0, t1;
    if (intersect_sphere(ray.origin, ray.dir, p.center_at(t), p.bound_radius(), t0, t1))
      if (t1 > a && t0 < b) spans.emplace_back(std::max(t0, a), std::min(t1, b));
  }
  std::sort(spans.begin(), spans.end());
  std::vector<double> sigma, rgb, dl, pos;
  double tau = 0;
  long next = 0;
  for (const auto& [t0, t1] : spans) {
    long lo = std::max(next, long(std::ceil((t0 - a) / delta - 0.5)));
    const long hi = std::min<long>(n_samples - 1, long(std::floor((t1 - a) / delta - 0.5)));
    for (long i = lo; i <= hi && tau < 18.0; ++i) {
      const double s = a + (i + 0.5) * delta;
      double sg;
      std::array<double, 3> c;
      scene.eval(ray.origin + s * ray.dir, t, sg, c);
      if (sg <= 0) continue;
      sigma.push_back(sg);
      rgb.insert(rgb.end(), c.begin(), c.end());
      dl.push_back(delta);
      pos.push_back(s);
      tau += sg * delta;
    }
    next = std::max(next, hi + 1);
  }
  CompositeResult<double> res;
  composite<double>(sigma, rgb, dl, res);
  if (depth)
    for (std::size_t i = 0; i < pos.size(); ++i) *depth += res.weights[i] * pos[i];
  return res.color;
}

Image oracle_render(const AnalyticScene& scene, const PinholeCamera& cam, double t, int n_samples,
                    int threads) {
  cam.validate();
  Image img(cam.width, cam.height, 3);
  const int nt = threads > 0 ? threads : int(std::max(1u, std::thread::hardware_concurrency()));
  auto rows = [&](int w) {
    for (int y = w; y < cam.height; y += nt)
      for (int x = 0; x < cam.width; ++x) {
        const auto c = oracle_shade(scene, generate_ray(cam, x, y), t, n_samples);
        for (int k = 0; k < 3; ++k) img.at(x, y, k) = float(c[k]);
      }
  };
  if (nt <= 1) {
    rows(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < nt; ++w) pool.emplace_back(rows, w);
    for (auto& th : pool) th.join();
  }
  return img;
}

void AnalyticSource::shade(std::span<const Ray> rays, double t, std::span<RayShading> out) const {
  std::vector<double> sigma(n_), rgb(3 * n_), dl(n_);
  CompositeResult<double> res;
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const Ray& ray = rays[r];
    out[r] = RayShading{};
    double a, b;
    if (!intersect_aabb(ray.origin, ray.dir, scene_.bounds, a, b)) continue;
    a = std::max(a, ray.near);
    b = std::min(b, ray.far);
    if (!(b > a)) continue;
    const auto s = stratified_samples(a, b, n_, nullptr, false);
    for (int i = 0; i < n_; ++i) {
      std::array<double, 3> c;
      scene_.eval(ray.origin + s[i] * ray.dir, t, sigma[i], c);
      for (int k = 0; k < 3; ++k) rgb[i * 3 + k] = c[k];
      dl[i] = (b - a) / n_;
    }
    composite<double>(sigma, rgb, dl, res);
    double depth = 0;
    for (int i = 0; i < n_; ++i) depth += res.weights[i] * s[i];
    for (int k = 0; k < 3; ++k) out[r].rgb[k] = float(res.color[k]);
    out[r].depth = float(depth);
  }
}

AnalyticScene make_scene(const SynthSpec& spec) {
  AnalyticScene s;
  s.bounds = Aabb{{-1, -1, -1}, {1, 1, 1}};
  Rng rng(spec.seed);
  const double phase = rng.uniform();

  Primitive wall;
  wall.kind = Primitive::Kind::box;
  wall.center = {0, 0, 0.85};
  wall.half = {0.9, 0.9, 0.1};
  wall.color = {0.85, 0.8, 0.65};
  wall.color2 = {0.25, 0.35, 0.55};
  wall.checker = 0.15;
  s.primitives.push_back(wall);

  Primitive ball;
  ball.center = {-0.45, 0.45, 0.25};
  ball.radius = 0.22;
  ball.color = {0.9, 0.45, 0.15};
  s.primitives.push_back(ball);

  Primitive block;
  block.kind = Primitive::Kind::box;
  block.center = {0.45, 0.45, 0.25};
  block.half = {0.17, 0.17, 0.17};
  block.color = {0.2, 0.7, 0.9};
  block.color2 = {0.1, 0.4, 0.6};
  block.checker = 0.12;
  s.primitives.push_back(block);

  if (spec.preset == "orbiting-sphere") {
    Primitive mover;
    mover.center = {0, -0.35, 0.1};
    mover.radius = 0.18;
    mover.color = {0.3, 0.9, 0.3};
    mover.moving = true;
    mover.orbit_radius = 0.35;
    mover.orbit_phase = phase;
    mover.orbit_cycles = 1.0;
    s.primitives.push_back(mover);
  } else if (spec.preset == "moving-box") {
    Primitive mover;
    mover.kind = Primitive::Kind::box;
    mover.center = {0, -0.35, 0.1};
    mover.half = {0.15, 0.15, 0.15};
    mover.color = {0.9, 0.2, 0.5};
    mover.moving = true;
    mover.orbit_radius = 0.35;
    mover.orbit_phase = 0.5;
    mover.orbit_cycles = 0.5;
    s.primitives.push_back(mover);
  } else if (spec.preset != "static") {
    throw ConfigError("unknown synthetic preset '" + spec.preset +
                      "' (expected orbiting-sphere, moving-box or static)");
  }
  return s;
}

std::vector<PinholeCamera> make_cameras(const SynthSpec& spec) {
  if (spec.train_cameras < 1 || spec.test_cameras < 0 || spec.train_cameras + spec.test_cameras > 9)
    throw ConfigError("synthetic rig supports 1..9 cameras in total");
  // Train cameras on a ring around the optical axis, test camera(s) at the
  // center and then inside the ring.
  std::vector<PinholeCamera> cams;
  const Vec3 target{0, 0, 0.3}, up{0, 1, 0};
  for (int i = 0; i < spec.train_cameras; ++i) {
    const double a = std::numbers::pi * (0.25 + 0.5 * i) + (spec.train_cameras > 4 ? 0.3 * i : 0);
    const Vec3 eye{0.85 * std::cos(a), 0.85 * std::sin(a), -3.0};
    cams.push_back(look_at_camera(eye, target, up, spec.width, spec.height, spec.focal, 1.0, 5.0));
  }
  for (int i = 0; i < spec.test_cameras; ++i) {
    const double a = std::numbers::pi * 0.5 * i;
    const double r = i == 0 ? 0.0 : 0.4;
    const Vec3 eye{r * std::cos(a), r * std::sin(a), -3.0};
    cams.push_back(look_at_camera(eye, target, up, spec.width, spec.height, spec.focal, 1.0, 5.0));
  }
  return cams;
}

SceneDataset generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out,
                                int threads) {
  if (spec.frames < 1) throw ConfigError("synthetic dataset needs at least one frame");
  const AnalyticScene scene = make_scene(spec);
  const auto cams = make_cameras(spec);
  std::filesystem::create_directories(out);
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["T"] = spec.frames;
  j["bounds"] = {scene.bounds.lo.x, scene.bounds.lo.y, scene.bounds.lo.z,
                 scene.bounds.hi.x, scene.bounds.hi.y, scene.bounds.hi.z};
  j["cameras"] = nlohmann::json::array();
  std::vector<int> train, test;
  for (std::size_t c = 0; c < cams.size(); ++c) {
    const auto& cam = cams[c];
    const std::string id = "cam" + std::to_string(c);
    std::filesystem::create_directories(out / id);
    nlohmann::ordered_json cj;
    cj["id"] = id;
    cj["width"] = cam.width;
    cj["height"] = cam.height;
    cj["fx"] = cam.fx;
    cj["fy"] = cam.fy;
    cj["cx"] = cam.cx;
    cj["cy"] = cam.cy;
    cj["near"] = cam.near;
    cj["far"] = cam.far;
    cj["pose"] = cam.pose;
    cj["frames"] = nlohmann::json::array();
    for (int f = 0; f < spec.frames; ++f) {
      char name[32];
      std::snprintf(name, sizeof name, "%04d.png", f);
      const double t = spec.frames > 1 ? double(f) / (spec.frames - 1) : 0.0;
      write_png(out / id / name, oracle_render(scene, cam, t, spec.oracle_samples, threads));
      cj["frames"].push_back(id + "/" + name);
    }
    Image mask(cam.width, cam.height, 1);
    for (int y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x)
        mask.at(x, y, 0) = scene.ray_hits_moving(generate_ray(cam, x, y)) ? 1.f : 0.f;
    write_png(out / id / "dynamic_mask.png", mask);
    cj["dynamic_mask"] = id + "/dynamic_mask.png";
    j["cameras"].push_back(cj);
    (int(c) < spec.train_cameras ? train : test).push_back(int(c));
  }
  j["split"] = {{"train", train}, {"test", test}};
  j["generator"] = {{"preset", spec.preset}, {"seed", spec.seed},
                    {"oracle_samples", spec.oracle_samples}};
  std::ofstream os(out / "scene.json");
  os << j.dump(2) << "\n";
  if (!os) throw FormatError("cannot write " + (out / "scene.json").string());
  os.close();
  return load_dataset(out);
}

namespace {

template <class T>
T field(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": field '" + key + "' has the wrong type (" + e.what() + ")");
  }
}

}  // namespace

SceneDataset load_dataset(const std::filesystem::path& root) {
  const auto manifest = root / "scene.json";
  std::ifstream is(manifest);
  if (!is) throw FormatError("cannot open manifest " + manifest.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest.string() + ": invalid JSON (" + e.what() + ")");
  }
  const std::string where = manifest.string();
  SceneDataset ds;
  ds.root = root;
  ds.T = field<int>(j, "T", where);
  if (ds.T < 1) throw FormatError(where + ": T must be >= 1");
  const auto b = field<std::vector<double>>(j, "bounds", where);
  if (b.size() != 6 || !(b[3] > b[0] && b[4] > b[1] && b[5] > b[2]))
    throw FormatError(where + ": bounds must be [xmin,ymin,zmin,xmax,ymax,zmax] with max > min");
  ds.bounds = Aabb{{b[0], b[1], b[2]}, {b[3], b[4], b[5]}};
  const auto cams = field<nlohmann::json>(j, "cameras", where);
  if (!cams.is_array() || cams.empty()) throw FormatError(where + ": no cameras");
  for (std::size_t c = 0; c < cams.size(); ++c) {
    const auto& cj = cams[c];
    const std::string cw = where + ": camera " + std::to_string(c);
    PinholeCamera cam;
    cam.width = field<int>(cj, "width", cw);
    cam.height = field<int>(cj, "height", cw);
    cam.fx = field<double>(cj, "fx", cw);
    cam.fy = field<double>(cj, "fy", cw);
    cam.cx = field<double>(cj, "cx", cw);
    cam.cy = field<double>(cj, "cy", cw);
    cam.near = cj.value("near", 0.1);
    cam.far = cj.value("far", 100.0);
    const auto pose = field<std::vector<double>>(cj, "pose", cw);
    if (pose.size() != 12) throw FormatError(cw + ": pose must have 12 values");
    std::copy(pose.begin(), pose.end(), cam.pose.begin());
    try {
      cam.validate();
    } catch (const ConfigError& e) {
      throw FormatError(cw + ": " + e.what());
    }
    const auto files = field<std::vector<std::string>>(cj, "frames", cw);
    if (int(files.size()) != ds.T) {
      std::ostringstream os;
      os << cw << ": has " << files.size() << " frames but T = " << ds.T;
      throw FormatError(os.str());
    }
    std::vector<Image> imgs;
    for (const auto& f : files) {
      const auto p = root / f;
      if (!std::filesystem::exists(p)) throw FormatError(cw + ": missing frame file " + p.string());
      Image img = read_png(p);
      if (img.width != cam.width || img.height != cam.height) {
        std::ostringstream os;
        os << p.string() << " is " << img.width << "x" << img.height << ", camera expects "
           << cam.width << "x" << cam.height;
        throw FormatError(os.str());
      }
      imgs.push_back(std::move(img));
    }
    Image mask;
    if (cj.contains("dynamic_mask")) {
      const auto p = root / cj["dynamic_mask"].get<std::string>();
      if (!std::filesystem::exists(p)) throw FormatError(cw + ": missing mask file " + p.string());
      Image m = read_png(p);
      mask = Image(m.width, m.height, 1);
      for (std::size_t i = 0; i < m.pixels(); ++i) mask.data[i] = m.data[i * 3] > 0.5f ? 1.f : 0.f;
    }
    ds.camera_ids.push_back(cj.value("id", "cam" + std::to_string(c)));
    ds.cameras.push_back(cam);
    ds.frames.push_back(std::move(imgs));
    ds.dynamic_masks.push_back(std::move(mask));
  }
  const auto split = field<nlohmann::json>(j, "split", where);
  ds.train = field<std::vector<int>>(split, "train", where + ": split");
  ds.test = field<std::vector<int>>(split, "test", where + ": split");
  for (int id : ds.train)
    if (id < 0 || id >= int(ds.cameras.size())) throw FormatError(where + ": bad train camera index");
  for (int id : ds.test)
    if (id < 0 || id >= int(ds.cameras.size())) throw FormatError(where + ": bad test camera index");
  if (ds.train.empty()) throw FormatError(where + ": no training cameras");
  return ds;
}

}  // namespace msth

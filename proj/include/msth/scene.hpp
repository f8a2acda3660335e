#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "msth/geometry.hpp"
#include "msth/image.hpp"
#include "msth/render.hpp"

namespace msth {

/// Smooth-edged primitive with constant density. Moving primitives orbit
/// `center` in the xz-plane: c(t) = center + R (cos a, 0, sin a),
/// a = 2 pi (phase + cycles t).
struct Primitive {
  enum class Kind { sphere, box };
  Kind kind = Kind::sphere;
  Vec3 center;
  double radius = 0.2;         // spheres
  Vec3 half{0.2, 0.2, 0.2};    // boxes
  double density = 40.0;
  std::array<double, 3> color{1, 1, 1};
  std::array<double, 3> color2{1, 1, 1};  // checker partner; equal to color for flat
  double checker = 0.0;                   // checker cell size, 0 disables
  double edge = 0.04;                     // density ramp width at the surface
  bool moving = false;
  double orbit_radius = 0.0;
  double orbit_phase = 0.0;
  double orbit_cycles = 1.0;

  Vec3 center_at(double t) const;
  /// Radius of a sphere about center_at(t) containing the support.
  double bound_radius() const;
};

class AnalyticScene {
 public:
  Aabb bounds;
  std::vector<Primitive> primitives;

  /// Closed-form field. Color is the density-weighted mix of overlapping
  /// primitives; t is normalized time in [0,1].
  void eval(const Vec3& x, double t, double& sigma, std::array<double, 3>& rgb) const;
  bool has_moving() const;
  /// True if any moving primitive's surface (its trajectory sampled at
  /// `time_samples` times in [0,1]) crosses the ray inside [near, far].
  bool ray_hits_moving(const Ray& ray, int time_samples = 512) const;
  /// Fraction of the scene box swept by moving primitives (Monte Carlo).
  double dynamic_fraction(Rng& rng, int points = 20000, int time_samples = 64) const;
};

/// Quadrature oracle: n midpoint samples over [near, far] clipped to the
/// scene box, composited with the shared quadrature. Samples outside all
/// primitive supports have zero density and are skipped, which leaves the
/// result unchanged.
std::array<double, 3> oracle_shade(const AnalyticScene& scene, const Ray& ray, double t,
                                   int n_samples, double* depth = nullptr);
Image oracle_render(const AnalyticScene& scene, const PinholeCamera& cam, double t,
                    int n_samples = 4096, int threads = 0);

/// The analytic field evaluated through render_frame's generic path, every
/// sample evaluated.
class AnalyticSource : public RaySource {
 public:
  AnalyticSource(const AnalyticScene& scene, int n_samples) : scene_(scene), n_(n_samples) {}
  void shade(std::span<const Ray> rays, double t, std::span<RayShading> out) const override;

 private:
  const AnalyticScene& scene_;
  int n_;
};

struct SynthSpec {
  std::string preset = "orbiting-sphere";  // orbiting-sphere | moving-box | static
  int width = 96, height = 96;
  int frames = 30;
  int train_cameras = 4;
  int test_cameras = 1;
  double focal = 130.0;
  int oracle_samples = 4096;
  std::uint64_t seed = 0;
};

AnalyticScene make_scene(const SynthSpec& spec);
std::vector<PinholeCamera> make_cameras(const SynthSpec& spec);

struct SceneDataset {
  std::filesystem::path root;
  int T = 0;
  Aabb bounds;
  std::vector<std::string> camera_ids;
  std::vector<PinholeCamera> cameras;
  std::vector<std::vector<Image>> frames;  // [camera][t]
  std::vector<Image> dynamic_masks;        // per camera, empty if unavailable
  std::vector<int> train, test;

  /// Normalized time of frame f.
  double time_of(int f) const { return T > 1 ? double(f) / (T - 1) : 0.0; }
};

/// Writes scene.json, PNG frames and ground-truth dynamic masks. Returns
/// the dataset as it would be loaded.
SceneDataset generate_synthetic(const SynthSpec& spec, const std::filesystem::path& out,
                                int threads = 0);
SceneDataset load_dataset(const std::filesystem::path& root);

}  // namespace msth

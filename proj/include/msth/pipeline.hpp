#pragma once

// One training/evaluation pass over a batch of rays:
//   proposal field -> inverse-CDF resampling -> field -> quadrature -> losses,
// plus the matching backward pass. Generic over the scalar so the trainer
// (float) and the gradient checker (double) share every line.

#include <span>
#include <vector>

#include "msth/field.hpp"
#include "msth/losses.hpp"
#include "msth/proposal.hpp"
#include "msth/render.hpp"

namespace msth {

struct ModelConfig {
  FieldConfig field;
  ProposalConfig proposal;
  MineConfig mine;
  Aabb bounds;
};

template <class Real>
class Model {
 public:
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  void init(Rng& rng);

  /// field (6 groups), proposal (2), MINE critic (1).
  std::vector<ParamBuffer<Real>*> param_groups();
  std::vector<const ParamBuffer<Real>*> param_groups() const;
  void zero_grads();

  template <class Other>
  Model<Other> cast() const {
    Model<Other> out(config_);
    auto dst = out.param_groups();
    auto src = param_groups();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<Other>();
    out.mine.ema_denominator = mine.ema_denominator;
    out.mine.ema_initialized = mine.ema_initialized;
    return out;
  }

  SpaceTimeField<Real> field;
  ProposalField<Real> proposal;
  MineEstimator<Real> mine;

 private:
  ModelConfig config_;
};

struct RayBatch {
  std::vector<Ray> rays;
  std::vector<double> times;   // normalized
  std::vector<double> target;  // rays x 3

  std::size_t size() const { return rays.size(); }
};

struct PassOptions {
  int n_samples = 128;
  int n_proposal = 64;
  bool jitter = true;
  LossWeights weights;
  double u_floor = 1e-2;
  int mine_samples = 1024;
  bool update_ema = true;
  double eps_w = 1e-3;
  bool backward = true;
};

/// Which terms a pass evaluates, derived from the variant and loss weights.
struct ActiveTerms {
  bool static_branch = false;  // L_u
  bool uncertainty = false;    // u(x) for L_u or MINE
  bool mine = false;
  bool mask = false;
  bool distortion = false;
  bool proposal = false;
};
ActiveTerms active_terms(EncodingVariant variant, const LossWeights& w);

/// Forward (and, if opt.backward, backward accumulating into grads) for one
/// batch. `sample_rng` drives sample jitter, `mine_rng` the marginal
/// permutation and sample subset. Returns the loss components (step = 0).
template <class Real>
LossRecord run_batch(Model<Real>& model, const RayBatch& batch, const PassOptions& opt,
                     Rng& sample_rng, Rng& mine_rng);

/// Inference renderer over a trained model.
template <class Real>
class ModelSource : public RaySource {
 public:
  ModelSource(const Model<Real>& model, int n_samples, int n_proposal, int classify_samples = 256)
      : model_(model), n_(n_samples), np_(n_proposal), nc_(classify_samples) {}

  void shade(std::span<const Ray> rays, double t, std::span<RayShading> out) const override;
  /// max over uniform samples s of T_t(s) (1 - m(s)): the strongest visible
  /// dynamic weight along the ray at time t.
  void dynamic_scores(std::span<const Ray> rays, double t, std::span<double> out) const override;

 private:
  const Model<Real>& model_;
  int n_, np_, nc_;
};

/// Ray interval clipped to the scene box; false if the ray misses it.
bool clip_ray(const Ray& ray, const Aabb& box, double& a, double& b);

extern template class Model<float>;
extern template class Model<double>;
extern template class ModelSource<float>;
extern template class ModelSource<double>;

}  // namespace msth

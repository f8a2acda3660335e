#pragma once

// The masked space-time field. All positions are normalized to [0,1]^3 and
// times to [0,1]; directions are unit vectors in world space.
//
//   enc(x,t) = m(x) h3(x) + (1 - m(x)) h4(x,t),  m = sigmoid(interp(m~))
//   sigma, g = phi(enc)      c = psi(g, SH(d))          (dynamic branch)
//   sigma_s, g_s = phi(h3)   c_s = psi(g_s, SH(d))      (static branch)
//   u(x) = u_m + softplus(interp(u~))

#include <array>
#include <string>
#include <vector>

#include "msth/hash_grid.hpp"
#include "msth/mlp.hpp"

namespace msth {

enum class EncodingVariant { masked, additive, pure4d };

std::string to_string(EncodingVariant v);
EncodingVariant parse_variant(const std::string& s);

struct FieldConfig {
  HashGridConfig grid3d{3, 16, 2, 19, 16, 512, 0, 0};
  HashGridConfig grid4d{4, 16, 2, 19, 16, 512, 2, 32};
  int mask_resolution = 128;
  int uncertainty_resolution = 64;
  double u_m = 0.03;
  int density_hidden = 64;
  int density_hidden_layers = 1;
  int geo_features = 15;
  int color_hidden = 64;
  int color_hidden_layers = 2;
  int sh_degree = 4;
  double density_clamp = 15.0;
  EncodingVariant variant = EncodingVariant::masked;

  void validate() const;
};

struct QueryFlags {
  bool dynamic = true;
  bool static_branch = false;
  bool uncertainty = false;
};

template <class Real>
struct FieldInputs {
  std::size_t n = 0;
  std::vector<Real> pos;   // n x 3, normalized
  std::vector<Real> time;  // n, normalized
  std::vector<Real> dir;   // n x 3, unit

  void resize(std::size_t count) {
    n = count;
    pos.resize(count * 3);
    time.resize(count);
    dir.resize(count * 3);
  }
};

template <class Real>
struct FieldOutputs {
  std::vector<Real> sigma, rgb, mask;            // dynamic branch (+ blend weight m)
  std::vector<Real> sigma_s, rgb_s;              // static branch
  std::vector<Real> uncertainty;                 // u(x)
};

/// Upstream gradients; empty vectors are treated as zero.
template <class Real>
struct FieldGrads {
  std::vector<Real> sigma, rgb, mask;
  std::vector<Real> sigma_s, rgb_s;
  std::vector<Real> uncertainty;
};

template <class Real>
struct FieldCache {
  QueryFlags flags;
  std::size_t n = 0;
  EncodeCache<Real> enc3, enc4, enc_mask, enc_unc;
  std::vector<Real> h3, h4, enc, mask_raw, mask, unc_raw, sh;
  std::vector<Real> density_out, density_out_s;
  MlpCache<Real> density_mlp, color_mlp, density_mlp_s, color_mlp_s;
};

struct DynamicSample {
  double sigma;
  std::array<double, 3> rgb;
};

template <class Real>
class SpaceTimeField {
 public:
  explicit SpaceTimeField(const FieldConfig& config);

  const FieldConfig& config() const { return config_; }
  void init(Rng& rng, double table_scale = 1e-4);

  void forward(const FieldInputs<Real>& in, const QueryFlags& flags, FieldOutputs<Real>& out,
               FieldCache<Real>* cache) const;
  void backward(const FieldInputs<Real>& in, const FieldCache<Real>& cache,
                const FieldGrads<Real>& grads);

  // Single-point conveniences.
  Real mask_value(const std::array<Real, 3>& x) const;
  Real uncertainty_value(const std::array<Real, 3>& x) const;
  DynamicSample query_dynamic(const std::array<Real, 3>& x, const std::array<Real, 3>& d,
                              Real t) const;
  DynamicSample query_static(const std::array<Real, 3>& x, const std::array<Real, 3>& d) const;

  /// Named trainable groups: table3d, table4d, mask, uncertainty, density_mlp, color_mlp.
  std::vector<ParamBuffer<Real>*> param_groups();
  std::vector<const ParamBuffer<Real>*> param_groups() const;
  void zero_grads();

  template <class Other>
  SpaceTimeField<Other> cast() const {
    SpaceTimeField<Other> out(config_);
    auto dst = out.param_groups();
    auto src = param_groups();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<Other>();
    return out;
  }

  HashGrid<Real> table3d, table4d, mask_grid, uncertainty_grid;
  Mlp<Real> density_mlp, color_mlp;
  ParamBuffer<Real> density_params, color_params;

 private:
  FieldConfig config_;
};

HashGridConfig dense_grid_config(int resolution);

extern template class SpaceTimeField<float>;
extern template class SpaceTimeField<double>;

}  // namespace msth

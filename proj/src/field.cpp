#include "msth/field.hpp"

#include <cmath>
#include <sstream>

#include "msth/sh.hpp"

namespace msth {

std::string to_string(EncodingVariant v) {
  switch (v) {
    case EncodingVariant::masked: return "masked";
    case EncodingVariant::additive: return "additive";
    case EncodingVariant::pure4d: return "pure4d";
  }
  return "?";
}

EncodingVariant parse_variant(const std::string& s) {
  if (s == "masked") return EncodingVariant::masked;
  if (s == "additive") return EncodingVariant::additive;
  if (s == "pure4d") return EncodingVariant::pure4d;
  throw ConfigError("unknown encoding variant '" + s + "' (expected masked, additive or pure4d)");
}

void FieldConfig::validate() const {
  grid3d.validate();
  grid4d.validate();
  std::ostringstream os;
  if (grid3d.dims != 3) os << "grid3d must have dims 3; ";
  if (grid4d.dims != 4) os << "grid4d must have dims 4; ";
  if (grid3d.output_dim() != grid4d.output_dim())
    os << "3D and 4D encodings must have equal width (got " << grid3d.output_dim() << " and "
       << grid4d.output_dim() << "); ";
  if (mask_resolution < 2) os << "mask_resolution must be >= 2; ";
  if (uncertainty_resolution < 2) os << "uncertainty_resolution must be >= 2; ";
  if (sh_degree < 1 || sh_degree > 4) os << "sh_degree must be in 1..4; ";
  if (geo_features < 0) os << "geo_features must be >= 0; ";
  if (!(u_m > 0)) os << "u_m must be positive; ";
  if (!os.str().empty()) throw ConfigError("invalid field config: " + os.str());
}

HashGridConfig dense_grid_config(int resolution) {
  HashGridConfig c;
  c.dims = 3;
  c.levels = 1;
  c.features = 1;
  c.base_resolution = c.max_resolution = resolution;
  const double cells = 3.0 * std::log2(double(resolution));
  c.log2_table_size = static_cast<int>(std::ceil(cells - 1e-9));
  return c;
}

namespace {

MlpSpec density_spec(const FieldConfig& c) {
  c.validate();
  MlpSpec s;
  s.input_dim = c.grid3d.output_dim();
  s.hidden_dim = c.density_hidden;
  s.hidden_layers = c.density_hidden_layers;
  s.output_dim = 1 + c.geo_features;
  return s;
}

MlpSpec color_spec(const FieldConfig& c) {
  MlpSpec s;
  s.input_dim = c.geo_features + sh_output_dim(c.sh_degree);
  s.hidden_dim = c.color_hidden;
  s.hidden_layers = c.color_hidden_layers;
  s.output_dim = 3;
  s.output_activation = Activation::sigmoid;
  return s;
}

template <class Real>
Real sigmoid(Real x) {
  return Real(1) / (Real(1) + std::exp(-x));
}

template <class Real>
Real softplus(Real x) {
  return x > Real(20) ? x : std::log1p(std::exp(x));
}

}  // namespace

template <class Real>
SpaceTimeField<Real>::SpaceTimeField(const FieldConfig& config)
    : table3d(config.grid3d, "table3d"),
      table4d(config.grid4d, "table4d"),
      mask_grid(dense_grid_config(config.mask_resolution), "mask"),
      uncertainty_grid(dense_grid_config(config.uncertainty_resolution), "uncertainty"),
      density_mlp(density_spec(config)),
      color_mlp(color_spec(config)),
      density_params(density_mlp.make_params("density_mlp")),
      color_params(color_mlp.make_params("color_mlp")),
      config_(config) {}

template <class Real>
void SpaceTimeField<Real>::init(Rng& rng, double table_scale) {
  table3d.init_uniform(rng, table_scale);
  table4d.init_uniform(rng, table_scale);
  std::fill(mask_grid.params.values.begin(), mask_grid.params.values.end(), Real(0));
  std::fill(uncertainty_grid.params.values.begin(), uncertainty_grid.params.values.end(), Real(0));
  density_mlp.init_params(density_params, rng);
  color_mlp.init_params(color_params, rng);
  for (auto* g : param_groups()) {
    g->zero_grads();
    g->reset_optimizer();
  }
}

template <class Real>
std::vector<ParamBuffer<Real>*> SpaceTimeField<Real>::param_groups() {
  return {&table3d.params,          &table4d.params, &mask_grid.params,
          &uncertainty_grid.params, &density_params, &color_params};
}

template <class Real>
std::vector<const ParamBuffer<Real>*> SpaceTimeField<Real>::param_groups() const {
  return {&table3d.params,          &table4d.params, &mask_grid.params,
          &uncertainty_grid.params, &density_params, &color_params};
}

template <class Real>
void SpaceTimeField<Real>::zero_grads() {
  for (auto* g : param_groups()) g->zero_grads();
}

template <class Real>
void SpaceTimeField<Real>::forward(const FieldInputs<Real>& in, const QueryFlags& flags,
                                   FieldOutputs<Real>& out, FieldCache<Real>* cache) const {
  const std::size_t n = in.n;
  if (in.pos.size() < n * 3 || in.dir.size() < n * 3 || (flags.dynamic && in.time.size() < n))
    throw ConfigError("field forward: input arrays shorter than n");
  FieldCache<Real> local;
  FieldCache<Real>& c = cache ? *cache : local;
  c.flags = flags;
  c.n = n;
  const int W = config_.grid3d.output_dim();
  const int G = config_.geo_features;
  const int S = sh_output_dim(config_.sh_degree);
  const EncodingVariant variant = config_.variant;
  const bool need3 = flags.static_branch || (flags.dynamic && variant != EncodingVariant::pure4d);
  std::span<const Real> pos(in.pos.data(), n * 3);

  if (flags.dynamic || flags.static_branch) {
    c.sh.resize(n * S);
    for (std::size_t i = 0; i < n; ++i)
      sh_encode<Real>(config_.sh_degree, in.dir[i * 3], in.dir[i * 3 + 1], in.dir[i * 3 + 2],
                      c.sh.data() + i * S);
  }
  if (need3) {
    c.h3.resize(n * W);
    table3d.encode(pos, n, c.h3, &c.enc3);
  }

  // Runs phi then psi on `enc`, producing sigma and rgb.
  auto run_branch = [&](const std::vector<Real>& enc, std::vector<Real>& dens_out,
                        MlpCache<Real>& dcache, MlpCache<Real>& ccache, std::vector<Real>& sigma,
                        std::vector<Real>& rgb) {
    density_mlp.forward(density_params, enc, n, dens_out, dcache);
    std::vector<Real> color_in(n * (G + S));
    sigma.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Real* d = dens_out.data() + i * (1 + G);
      sigma[i] = std::exp(std::min(d[0], Real(config_.density_clamp)));
      Real* ci = color_in.data() + i * (G + S);
      for (int k = 0; k < G; ++k) ci[k] = d[1 + k];
      for (int k = 0; k < S; ++k) ci[G + k] = c.sh[i * S + k];
    }
    color_mlp.forward(color_params, color_in, n, rgb, ccache);
  };

  if (flags.dynamic) {
    std::vector<Real> p4(n * 4);
    for (std::size_t i = 0; i < n; ++i) {
      for (int a = 0; a < 3; ++a) p4[i * 4 + a] = in.pos[i * 3 + a];
      p4[i * 4 + 3] = in.time[i];
    }
    c.h4.resize(n * W);
    table4d.encode(p4, n, c.h4, &c.enc4);
    c.enc.resize(n * W);
    c.mask.assign(n, Real(0));
    switch (variant) {
      case EncodingVariant::masked:
        c.mask_raw.resize(n);
        mask_grid.encode(pos, n, c.mask_raw, &c.enc_mask);
        for (std::size_t i = 0; i < n; ++i) {
          const Real m = sigmoid(c.mask_raw[i]);
          c.mask[i] = m;
          for (int k = 0; k < W; ++k)
            c.enc[i * W + k] = m * c.h3[i * W + k] + (Real(1) - m) * c.h4[i * W + k];
        }
        break;
      case EncodingVariant::additive:
        for (std::size_t j = 0; j < n * W; ++j) c.enc[j] = c.h3[j] + c.h4[j];
        break;
      case EncodingVariant::pure4d:
        c.enc = c.h4;
        break;
    }
    run_branch(c.enc, c.density_out, c.density_mlp, c.color_mlp, out.sigma, out.rgb);
    out.mask = c.mask;
  }
  if (flags.static_branch)
    run_branch(c.h3, c.density_out_s, c.density_mlp_s, c.color_mlp_s, out.sigma_s, out.rgb_s);
  if (flags.uncertainty) {
    c.unc_raw.resize(n);
    uncertainty_grid.encode(pos, n, c.unc_raw, &c.enc_unc);
    out.uncertainty.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      out.uncertainty[i] = Real(config_.u_m) + softplus(c.unc_raw[i]);
  }
}

template <class Real>
void SpaceTimeField<Real>::backward(const FieldInputs<Real>& in, const FieldCache<Real>& c,
                                    const FieldGrads<Real>& grads) {
  (void)in;
  const std::size_t n = c.n;
  const int W = config_.grid3d.output_dim();
  const int G = config_.geo_features;
  const int S = sh_output_dim(config_.sh_degree);
  const EncodingVariant variant = config_.variant;
  auto at = [](const std::vector<Real>& v, std::size_t i) { return v.empty() ? Real(0) : v[i]; };

  std::vector<Real> d_h3, d_h4;
  if (!c.h3.empty()) d_h3.assign(n * W, Real(0));

  // Backward through psi and phi; returns d(enc).
  auto branch_backward = [&](const std::vector<Real>& dens_out, const MlpCache<Real>& dcache,
                             const MlpCache<Real>& ccache, const std::vector<Real>& d_sigma,
                             const std::vector<Real>& d_rgb) {
    std::vector<Real> d_dens(n * (1 + G), Real(0));
    if (!d_rgb.empty()) {
      std::vector<Real> d_color_in;
      color_mlp.backward(color_params, ccache, d_rgb, &d_color_in);
      for (std::size_t i = 0; i < n; ++i)
        for (int k = 0; k < G; ++k) d_dens[i * (1 + G) + 1 + k] = d_color_in[i * (G + S) + k];
    }
    if (!d_sigma.empty()) {
      for (std::size_t i = 0; i < n; ++i) {
        const Real raw = dens_out[i * (1 + G)];
        if (raw < Real(config_.density_clamp)) d_dens[i * (1 + G)] = d_sigma[i] * std::exp(raw);
      }
    }
    std::vector<Real> d_enc;
    density_mlp.backward(density_params, dcache, d_dens, &d_enc);
    return d_enc;
  };

  if (c.flags.dynamic) {
    const bool any = !grads.sigma.empty() || !grads.rgb.empty();
    std::vector<Real> d_mask_total(n, Real(0));
    if (any) {
      std::vector<Real> d_enc =
          branch_backward(c.density_out, c.density_mlp, c.color_mlp, grads.sigma, grads.rgb);
      d_h4.assign(n * W, Real(0));
      switch (variant) {
        case EncodingVariant::masked:
          for (std::size_t i = 0; i < n; ++i) {
            const Real m = c.mask[i];
            Real dm = 0;
            for (int k = 0; k < W; ++k) {
              const std::size_t j = i * W + k;
              d_h3[j] += m * d_enc[j];
              d_h4[j] = (Real(1) - m) * d_enc[j];
              dm += (c.h3[j] - c.h4[j]) * d_enc[j];
            }
            d_mask_total[i] = dm;
          }
          break;
        case EncodingVariant::additive:
          for (std::size_t j = 0; j < n * W; ++j) {
            d_h3[j] += d_enc[j];
            d_h4[j] = d_enc[j];
          }
          break;
        case EncodingVariant::pure4d:
          d_h4 = std::move(d_enc);
          break;
      }
    }
    if (variant == EncodingVariant::masked && (any || !grads.mask.empty())) {
      std::vector<Real> d_raw(n);
      for (std::size_t i = 0; i < n; ++i) {
        const Real m = c.mask[i];
        d_raw[i] = (d_mask_total[i] + at(grads.mask, i)) * m * (Real(1) - m);
      }
      mask_grid.encode_backward(c.enc_mask, d_raw);
    }
  }
  if (c.flags.static_branch && (!grads.sigma_s.empty() || !grads.rgb_s.empty())) {
    std::vector<Real> d_enc =
        branch_backward(c.density_out_s, c.density_mlp_s, c.color_mlp_s, grads.sigma_s, grads.rgb_s);
    for (std::size_t j = 0; j < n * W; ++j) d_h3[j] += d_enc[j];
  }
  if (!d_h3.empty()) table3d.encode_backward(c.enc3, d_h3);
  if (!d_h4.empty()) table4d.encode_backward(c.enc4, d_h4);
  if (c.flags.uncertainty && !grads.uncertainty.empty()) {
    std::vector<Real> d_raw(n);
    for (std::size_t i = 0; i < n; ++i) d_raw[i] = grads.uncertainty[i] * sigmoid(c.unc_raw[i]);
    uncertainty_grid.encode_backward(c.enc_unc, d_raw);
  }
}

template <class Real>
Real SpaceTimeField<Real>::mask_value(const std::array<Real, 3>& x) const {
  if (config_.variant != EncodingVariant::masked) return Real(0);
  Real raw = 0;
  mask_grid.encode(std::span<const Real>(x.data(), 3), 1, std::span<Real>(&raw, 1), nullptr);
  return sigmoid(raw);
}

template <class Real>
Real SpaceTimeField<Real>::uncertainty_value(const std::array<Real, 3>& x) const {
  Real raw = 0;
  uncertainty_grid.encode(std::span<const Real>(x.data(), 3), 1, std::span<Real>(&raw, 1),
                          nullptr);
  return Real(config_.u_m) + softplus(raw);
}

namespace {

template <class Real>
FieldInputs<Real> single_input(const std::array<Real, 3>& x, const std::array<Real, 3>& d, Real t) {
  FieldInputs<Real> in;
  in.resize(1);
  for (int a = 0; a < 3; ++a) {
    in.pos[a] = x[a];
    in.dir[a] = d[a];
  }
  in.time[0] = t;
  return in;
}

template <class Real>
void check_finite(Real sigma, const std::vector<Real>& rgb, const std::array<Real, 3>& x,
                  const char* op) {
  bool ok = std::isfinite(sigma);
  for (Real v : rgb) ok = ok && std::isfinite(v);
  if (ok) return;
  std::ostringstream os;
  os << op << ": non-finite output at x = (" << x[0] << ", " << x[1] << ", " << x[2] << ")";
  throw NumericError("field", os.str());
}

}  // namespace

template <class Real>
DynamicSample SpaceTimeField<Real>::query_dynamic(const std::array<Real, 3>& x,
                                                  const std::array<Real, 3>& d, Real t) const {
  FieldOutputs<Real> out;
  forward(single_input(x, d, t), QueryFlags{true, false, false}, out, nullptr);
  check_finite(out.sigma[0], out.rgb, x, "query_dynamic");
  return {double(out.sigma[0]), {double(out.rgb[0]), double(out.rgb[1]), double(out.rgb[2])}};
}

template <class Real>
DynamicSample SpaceTimeField<Real>::query_static(const std::array<Real, 3>& x,
                                                 const std::array<Real, 3>& d) const {
  FieldOutputs<Real> out;
  forward(single_input(x, d, Real(0)), QueryFlags{false, true, false}, out, nullptr);
  check_finite(out.sigma_s[0], out.rgb_s, x, "query_static");
  return {double(out.sigma_s[0]),
          {double(out.rgb_s[0]), double(out.rgb_s[1]), double(out.rgb_s[2])}};
}

template class SpaceTimeField<float>;
template class SpaceTimeField<double>;

}  // namespace msth

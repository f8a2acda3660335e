#include "msth/proposal.hpp"

#include <cmath>

#include "msth/field.hpp"

namespace msth {

void ProposalConfig::validate() const {
  if (spatial_resolution < 2 || st_resolution < 2 || time_resolution < 1)
    throw ConfigError("proposal grid resolutions must be >= 2 (time >= 1)");
  if (!(init_density > 0)) throw ConfigError("proposal init_density must be positive");
}

namespace {

HashGridConfig space_time_config(const ProposalConfig& c) {
  c.validate();
  HashGridConfig g;
  g.dims = 4;
  g.levels = 1;
  g.features = 1;
  g.base_resolution = g.max_resolution = c.st_resolution;
  g.time_base_resolution = g.time_max_resolution = c.time_resolution;
  const double cells = 3.0 * std::log2(double(c.st_resolution)) + std::log2(double(c.time_resolution));
  g.log2_table_size = std::max(1, static_cast<int>(std::ceil(cells - 1e-9)));
  return g;
}

}  // namespace

template <class Real>
ProposalField<Real>::ProposalField(const ProposalConfig& config)
    : spatial(dense_grid_config(config.spatial_resolution), "proposal_spatial"),
      space_time(space_time_config(config), "proposal_space_time"),
      config_(config) {}

template <class Real>
void ProposalField<Real>::init() {
  for (auto* g : param_groups()) {
    std::fill(g->values.begin(), g->values.end(), Real(0));
    g->zero_grads();
    g->reset_optimizer();
  }
}

template <class Real>
void ProposalField<Real>::forward(std::span<const Real> pos, std::span<const Real> time,
                                  std::size_t n, std::vector<Real>& sigma,
                                  ProposalCache<Real>* cache) const {
  ProposalCache<Real> local;
  ProposalCache<Real>& c = cache ? *cache : local;
  c.n = n;
  std::vector<Real> a(n), b(n), p4(n * 4);
  spatial.encode(pos.first(n * 3), n, a, &c.spatial);
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) p4[i * 4 + k] = pos[i * 3 + k];
    p4[i * 4 + 3] = time[i];
  }
  space_time.encode(p4, n, b, &c.st);
  const Real bias = Real(std::log(config_.init_density));
  c.raw.resize(n);
  sigma.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    c.raw[i] = a[i] + b[i] + bias;
    sigma[i] = std::exp(std::min(c.raw[i], Real(config_.density_clamp)));
  }
  c.sigma = sigma;
}

template <class Real>
void ProposalField<Real>::backward(const ProposalCache<Real>& c, std::span<const Real> d_sigma) {
  std::vector<Real> d(c.n);
  for (std::size_t i = 0; i < c.n; ++i)
    d[i] = c.raw[i] < Real(config_.density_clamp) ? d_sigma[i] * c.sigma[i] : Real(0);
  spatial.encode_backward(c.spatial, d);
  space_time.encode_backward(c.st, d);
}

template class ProposalField<float>;
template class ProposalField<double>;

}  // namespace msth

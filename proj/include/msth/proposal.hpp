#pragma once

// Density-only proposal field used to place the main quadrature samples:
//   sigma_p(x, t) = exp(min(a(x) + b(x, t) + bias, clamp))
// with a dense spatial grid a and a coarse dense space-time grid b.

#include <span>
#include <vector>

#include "msth/hash_grid.hpp"

namespace msth {

struct ProposalConfig {
  int spatial_resolution = 64;
  int st_resolution = 16;
  int time_resolution = 8;
  double init_density = 0.3;
  double density_clamp = 15.0;

  void validate() const;
};

template <class Real>
struct ProposalCache {
  std::size_t n = 0;
  EncodeCache<Real> spatial, st;
  std::vector<Real> sigma;
  std::vector<Real> raw;
};

template <class Real>
class ProposalField {
 public:
  explicit ProposalField(const ProposalConfig& config);

  const ProposalConfig& config() const { return config_; }
  void init();

  /// pos: n x 3 normalized, time: n normalized.
  void forward(std::span<const Real> pos, std::span<const Real> time, std::size_t n,
               std::vector<Real>& sigma, ProposalCache<Real>* cache) const;
  void backward(const ProposalCache<Real>& cache, std::span<const Real> d_sigma);

  std::vector<ParamBuffer<Real>*> param_groups() { return {&spatial.params, &space_time.params}; }
  std::vector<const ParamBuffer<Real>*> param_groups() const {
    return {&spatial.params, &space_time.params};
  }

  HashGrid<Real> spatial, space_time;

 private:
  ProposalConfig config_;
};

extern template class ProposalField<float>;
extern template class ProposalField<double>;

}  // namespace msth

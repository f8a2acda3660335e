#include "msth/param_buffer.hpp"

#include <algorithm>
#include <cmath>

#include "msth/simd/kernels.hpp"
#include "msth/simd/reference.hpp"

namespace msth {

template <class Real>
void ParamBuffer<Real>::resize(std::size_t size) {
  values.assign(size, Real(0));
  grads.assign(size, Real(0));
  adam_m.assign(size, Real(0));
  adam_v.assign(size, Real(0));
  step_count = 0;
}

template <class Real>
void ParamBuffer<Real>::zero_grads() {
  std::fill(grads.begin(), grads.end(), Real(0));
}

template <class Real>
void ParamBuffer<Real>::reset_optimizer() {
  std::fill(adam_m.begin(), adam_m.end(), Real(0));
  std::fill(adam_v.begin(), adam_v.end(), Real(0));
  step_count = 0;
}

template <class Real>
void ParamBuffer<Real>::fill_uniform(Rng& rng, double lo, double hi) {
  for (auto& v : values) v = static_cast<Real>(rng.uniform(lo, hi));
}

template <class Real>
bool adam_step(ParamBuffer<Real>& p, const AdamParams& opt) {
  if (p.size() == 0) return true;
  const Real beta1 = static_cast<Real>(opt.beta1);
  const Real beta2 = static_cast<Real>(opt.beta2);
  const std::int64_t t = p.step_count + 1;
  const Real bias1 = Real(1) - static_cast<Real>(std::pow(opt.beta1, double(t)));
  const Real bias2 = Real(1) - static_cast<Real>(std::pow(opt.beta2, double(t)));

  if constexpr (std::is_same_v<Real, float>) {
    const auto& k = simd::active_kernels();
    if (!k.all_finite(p.grads.data(), p.size())) {
      ++p.skipped_updates;
      return false;
    }
    simd::AdamCoeffs c{static_cast<float>(opt.lr), beta1, beta2, static_cast<float>(opt.eps),
                       bias1, bias2};
    k.adam_update(p.values.data(), p.grads.data(), p.adam_m.data(), p.adam_v.data(), p.size(), c);
  } else {
    if (!simd::ref::all_finite(p.grads.data(), p.size())) {
      ++p.skipped_updates;
      return false;
    }
    simd::ref::adam_update(p.values.data(), p.grads.data(), p.adam_m.data(), p.adam_v.data(),
                           p.size(), static_cast<Real>(opt.lr), beta1, beta2,
                           static_cast<Real>(opt.eps), bias1, bias2);
  }
  p.step_count = t;
  return true;
}

template struct ParamBuffer<float>;
template struct ParamBuffer<double>;
template bool adam_step(ParamBuffer<float>&, const AdamParams&);
template bool adam_step(ParamBuffer<double>&, const AdamParams&);

}  // namespace msth

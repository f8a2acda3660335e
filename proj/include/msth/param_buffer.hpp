#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msth/common.hpp"

namespace msth {

/// Flat trainable storage with its gradient and Adam moments.
template <class Real>
struct ParamBuffer {
  std::string name;
  std::vector<Real> values;
  std::vector<Real> grads;
  std::vector<Real> adam_m;
  std::vector<Real> adam_v;
  std::int64_t step_count = 0;
  /// Number of Adam steps skipped because the gradient was non-finite.
  std::int64_t skipped_updates = 0;

  ParamBuffer() = default;
  ParamBuffer(std::string n, std::size_t size)
      : name(std::move(n)), values(size), grads(size), adam_m(size), adam_v(size) {}

  std::size_t size() const { return values.size(); }
  void resize(std::size_t size);
  void zero_grads();
  /// Reset Adam state (moments and step count).
  void reset_optimizer();
  void fill_uniform(Rng& rng, double lo, double hi);

  /// Convert to another precision (used to build 64-bit shadow copies).
  template <class Other>
  ParamBuffer<Other> cast() const {
    ParamBuffer<Other> out(name, size());
    for (std::size_t i = 0; i < size(); ++i) {
      out.values[i] = static_cast<Other>(values[i]);
      out.grads[i] = static_cast<Other>(grads[i]);
      out.adam_m[i] = static_cast<Other>(adam_m[i]);
      out.adam_v[i] = static_cast<Other>(adam_v[i]);
    }
    out.step_count = step_count;
    out.skipped_updates = skipped_updates;
    return out;
  }
};

struct AdamParams {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;
};

/// One bias-corrected Adam step over the whole buffer. Gradients are left
/// untouched. Returns false (and bumps `skipped_updates`) if any gradient is
/// non-finite, in which case nothing changes.
template <class Real>
bool adam_step(ParamBuffer<Real>& p, const AdamParams& opt);

extern template struct ParamBuffer<float>;
extern template struct ParamBuffer<double>;
extern template bool adam_step(ParamBuffer<float>&, const AdamParams&);
extern template bool adam_step(ParamBuffer<double>&, const AdamParams&);

}  // namespace msth

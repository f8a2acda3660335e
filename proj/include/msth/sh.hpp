#pragma once

namespace msth {

/// Real spherical harmonics of a unit direction. `degree` counts bands, so
/// degree 4 yields 16 coefficients (bands 0..3). Supported: 1..4.
template <class Real>
void sh_encode(int degree, Real x, Real y, Real z, Real* out);

constexpr int sh_output_dim(int degree) { return degree * degree; }

extern template void sh_encode(int, float, float, float, float*);
extern template void sh_encode(int, double, double, double, double*);

}  // namespace msth

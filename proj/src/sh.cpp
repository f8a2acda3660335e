#include "msth/sh.hpp"

#include "msth/common.hpp"

namespace msth {

template <class Real>
void sh_encode(int degree, Real x, Real y, Real z, Real* out) {
  if (degree < 1 || degree > 4) throw ConfigError("spherical harmonics degree must be in [1, 4]");
  out[0] = Real(0.28209479177387814);
  if (degree == 1) return;
  out[1] = Real(-0.48860251190291987) * y;
  out[2] = Real(0.48860251190291987) * z;
  out[3] = Real(-0.48860251190291987) * x;
  if (degree == 2) return;
  const Real xx = x * x, yy = y * y, zz = z * z;
  out[4] = Real(1.0925484305920792) * x * y;
  out[5] = Real(-1.0925484305920792) * y * z;
  out[6] = Real(0.94617469575755997) * zz - Real(0.31539156525251999);
  out[7] = Real(-1.0925484305920792) * x * z;
  out[8] = Real(0.54627421529603959) * (xx - yy);
  if (degree == 3) return;
  out[9] = Real(0.59004358992664352) * y * (-Real(3) * xx + yy);
  out[10] = Real(2.8906114426405538) * x * y * z;
  out[11] = Real(0.45704579946446572) * y * (Real(1) - Real(5) * zz);
  out[12] = Real(0.3731763325901154) * z * (Real(5) * zz - Real(3));
  out[13] = Real(0.45704579946446572) * x * (Real(1) - Real(5) * zz);
  out[14] = Real(1.4453057213202769) * z * (xx - yy);
  out[15] = Real(0.59004358992664352) * x * (-xx + Real(3) * yy);
}

template void sh_encode(int, float, float, float, float*);
template void sh_encode(int, double, double, double, double*);

}  // namespace msth

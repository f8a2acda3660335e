#include "msth/simd/kernels.hpp"
#include "msth/simd/reference.hpp"

namespace msth::simd {
namespace {

void linear_forward(const float* x, const float* wt, const float* b, float* y, std::size_t n,
                    std::size_t in, std::size_t out) {
  ref::linear_forward(x, wt, b, y, n, in, out);
}

void linear_backward_params(const float* x, const float* dy, float* dwt, float* db, std::size_t n,
                            std::size_t in, std::size_t out) {
  ref::linear_backward_params(x, dy, dwt, db, n, in, out);
}

void relu_forward(float* y, std::size_t n) { ref::relu_forward(y, n); }
void relu_backward(const float* y, float* dy, std::size_t n) { ref::relu_backward(y, dy, n); }

void adam_update(float* values, const float* grads, float* m, float* v, std::size_t n,
                 const AdamCoeffs& c) {
  ref::adam_update(values, grads, m, v, n, c.lr, c.beta1, c.beta2, c.eps, c.bias1, c.bias2);
}

void blend_rows(const float* a, const float* b, const float* w, float* out, std::size_t rows,
                std::size_t width) {
  ref::blend_rows(a, b, w, out, rows, width);
}

bool all_finite(const float* x, std::size_t n) { return ref::all_finite(x, n); }

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{Isa::scalar,  "scalar",   linear_forward, linear_backward_params,
                                 relu_forward, relu_backward, adam_update, blend_rows,
                                 all_finite};
  return table;
}

}  // namespace msth::simd

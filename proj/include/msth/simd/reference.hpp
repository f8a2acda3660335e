#pragma once

// Scalar reference loops, generic over the real type. The float instances back
// the scalar kernel table; the double instances are the only path for the
// 64-bit gradient-checking mode.

#include <cmath>
#include <cstddef>

namespace msth::simd::ref {

template <class T>
void linear_forward(const T* x, const T* wt, const T* b, T* y, std::size_t n, std::size_t in,
                    std::size_t out) {
  for (std::size_t i = 0; i < n; ++i) {
    T* yi = y + i * out;
    const T* xi = x + i * in;
    for (std::size_t o = 0; o < out; ++o) yi[o] = b ? b[o] : T(0);
    for (std::size_t k = 0; k < in; ++k) {
      const T xk = xi[k];
      const T* wk = wt + k * out;
      for (std::size_t o = 0; o < out; ++o) yi[o] += xk * wk[o];
    }
  }
}

template <class T>
void linear_backward_params(const T* x, const T* dy, T* dwt, T* db, std::size_t n, std::size_t in,
                            std::size_t out) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = x + i * in;
    const T* dyi = dy + i * out;
    for (std::size_t k = 0; k < in; ++k) {
      const T xk = xi[k];
      T* dwk = dwt + k * out;
      for (std::size_t o = 0; o < out; ++o) dwk[o] += xk * dyi[o];
    }
    if (db)
      for (std::size_t o = 0; o < out; ++o) db[o] += dyi[o];
  }
}

template <class T>
void relu_forward(T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = y[i] > T(0) ? y[i] : T(0);
}

template <class T>
void relu_backward(const T* y, T* dy, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!(y[i] > T(0))) dy[i] = T(0);
}

template <class T>
void adam_update(T* values, const T* grads, T* m, T* v, std::size_t n, T lr, T beta1, T beta2,
                 T eps, T bias1, T bias2) {
  const T one_b1 = T(1) - beta1;
  const T one_b2 = T(1) - beta2;
  for (std::size_t i = 0; i < n; ++i) {
    const T g = grads[i];
    m[i] = beta1 * m[i] + one_b1 * g;
    v[i] = beta2 * v[i] + one_b2 * (g * g);
    const T mhat = m[i] / bias1;
    const T vhat = v[i] / bias2;
    values[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <class T>
void blend_rows(const T* a, const T* b, const T* w, T* out, std::size_t rows, std::size_t width) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T wr = w[r];
    const T wc = T(1) - wr;
    for (std::size_t j = 0; j < width; ++j)
      out[r * width + j] = wr * a[r * width + j] + wc * b[r * width + j];
  }
}

template <class T>
bool all_finite(const T* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(x[i])) return false;
  return true;
}

}  // namespace msth::simd::ref

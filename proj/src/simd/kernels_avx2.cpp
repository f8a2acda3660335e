// AVX2 + FMA variants. This translation unit is the only one compiled with
// -mavx2 -mfma; nothing here is reachable unless dispatch confirmed CPU support.
// It must not instantiate shared inline templates (they could be merged with
// the baseline copies at link time), hence the hand-written tails.

#include <immintrin.h>

#include <cmath>
#include <cstdint>

#include "msth/simd/kernels.hpp"

namespace msth::simd {
namespace {

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kParamChunk = 64;

// Four rows x eight outputs per inner step; the weight vector is loaded once
// and reused across the rows.
void linear_forward(const float* x, const float* wt, const float* b, float* y, std::size_t n,
                    std::size_t in, std::size_t out) {
  const std::size_t out8 = out & ~std::size_t(7);
  std::size_t i = 0;
  for (; i + kRowBlock <= n; i += kRowBlock) {
    const float* x0 = x + (i + 0) * in;
    const float* x1 = x + (i + 1) * in;
    const float* x2 = x + (i + 2) * in;
    const float* x3 = x + (i + 3) * in;
    for (std::size_t o = 0; o < out8; o += 8) {
      __m256 init = b ? _mm256_loadu_ps(b + o) : _mm256_setzero_ps();
      __m256 a0 = init, a1 = init, a2 = init, a3 = init;
      for (std::size_t k = 0; k < in; ++k) {
        const __m256 w = _mm256_loadu_ps(wt + k * out + o);
        a0 = _mm256_fmadd_ps(_mm256_set1_ps(x0[k]), w, a0);
        a1 = _mm256_fmadd_ps(_mm256_set1_ps(x1[k]), w, a1);
        a2 = _mm256_fmadd_ps(_mm256_set1_ps(x2[k]), w, a2);
        a3 = _mm256_fmadd_ps(_mm256_set1_ps(x3[k]), w, a3);
      }
      _mm256_storeu_ps(y + (i + 0) * out + o, a0);
      _mm256_storeu_ps(y + (i + 1) * out + o, a1);
      _mm256_storeu_ps(y + (i + 2) * out + o, a2);
      _mm256_storeu_ps(y + (i + 3) * out + o, a3);
    }
    for (std::size_t r = 0; r < kRowBlock; ++r) {
      const float* xr = x + (i + r) * in;
      float* yr = y + (i + r) * out;
      for (std::size_t o = out8; o < out; ++o) {
        float acc = b ? b[o] : 0.0f;
        for (std::size_t k = 0; k < in; ++k) acc = std::fma(xr[k], wt[k * out + o], acc);
        yr[o] = acc;
      }
    }
  }
  for (; i < n; ++i) {
    const float* xr = x + i * in;
    float* yr = y + i * out;
    for (std::size_t o = 0; o < out8; o += 8) {
      __m256 a = b ? _mm256_loadu_ps(b + o) : _mm256_setzero_ps();
      for (std::size_t k = 0; k < in; ++k)
        a = _mm256_fmadd_ps(_mm256_set1_ps(xr[k]), _mm256_loadu_ps(wt + k * out + o), a);
      _mm256_storeu_ps(yr + o, a);
    }
    for (std::size_t o = out8; o < out; ++o) {
      float acc = b ? b[o] : 0.0f;
      for (std::size_t k = 0; k < in; ++k) acc = std::fma(xr[k], wt[k * out + o], acc);
      yr[o] = acc;
    }
  }
}

void linear_backward_params(const float* x, const float* dy, float* dwt, float* db, std::size_t n,
                            std::size_t in, std::size_t out) {
  const std::size_t out8 = out & ~std::size_t(7);
  for (std::size_t c0 = 0; c0 < n; c0 += kParamChunk) {
    const std::size_t c1 = c0 + kParamChunk < n ? c0 + kParamChunk : n;
    for (std::size_t k = 0; k < in; ++k) {
      float* dwk = dwt + k * out;
      for (std::size_t o = 0; o < out8; o += 8) {
        __m256 acc = _mm256_loadu_ps(dwk + o);
        for (std::size_t i = c0; i < c1; ++i)
          acc = _mm256_fmadd_ps(_mm256_set1_ps(x[i * in + k]), _mm256_loadu_ps(dy + i * out + o),
                                acc);
        _mm256_storeu_ps(dwk + o, acc);
      }
      for (std::size_t o = out8; o < out; ++o) {
        float acc = dwk[o];
        for (std::size_t i = c0; i < c1; ++i) acc = std::fma(x[i * in + k], dy[i * out + o], acc);
        dwk[o] = acc;
      }
    }
    if (db) {
      for (std::size_t o = 0; o < out8; o += 8) {
        __m256 acc = _mm256_loadu_ps(db + o);
        for (std::size_t i = c0; i < c1; ++i) acc = _mm256_add_ps(acc, _mm256_loadu_ps(dy + i * out + o));
        _mm256_storeu_ps(db + o, acc);
      }
      for (std::size_t o = out8; o < out; ++o) {
        float acc = db[o];
        for (std::size_t i = c0; i < c1; ++i) acc += dy[i * out + o];
        db[o] = acc;
      }
    }
  }
}

void relu_forward(float* y, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(y + i), zero));
  for (; i < n; ++i) y[i] = y[i] > 0.0f ? y[i] : 0.0f;
}

void relu_backward(const float* y, float* dy, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 keep = _mm256_cmp_ps(_mm256_loadu_ps(y + i), zero, _CMP_GT_OQ);
    _mm256_storeu_ps(dy + i, _mm256_and_ps(_mm256_loadu_ps(dy + i), keep));
  }
  for (; i < n; ++i)
    if (!(y[i] > 0.0f)) dy[i] = 0.0f;
}

// Same operation order as the scalar reference (no fused multiply-add), so the
// two variants agree bitwise.
void adam_update(float* values, const float* grads, float* m, float* v, std::size_t n,
                 const AdamCoeffs& c) {
  const __m256 b1 = _mm256_set1_ps(c.beta1), ob1 = _mm256_set1_ps(1.0f - c.beta1);
  const __m256 b2 = _mm256_set1_ps(c.beta2), ob2 = _mm256_set1_ps(1.0f - c.beta2);
  const __m256 bias1 = _mm256_set1_ps(c.bias1), bias2 = _mm256_set1_ps(c.bias2);
  const __m256 lr = _mm256_set1_ps(c.lr), eps = _mm256_set1_ps(c.eps);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 g = _mm256_loadu_ps(grads + i);
    __m256 mi = _mm256_add_ps(_mm256_mul_ps(b1, _mm256_loadu_ps(m + i)), _mm256_mul_ps(ob1, g));
    __m256 vi = _mm256_add_ps(_mm256_mul_ps(b2, _mm256_loadu_ps(v + i)),
                              _mm256_mul_ps(ob2, _mm256_mul_ps(g, g)));
    _mm256_storeu_ps(m + i, mi);
    _mm256_storeu_ps(v + i, vi);
    const __m256 mhat = _mm256_div_ps(mi, bias1);
    const __m256 vhat = _mm256_div_ps(vi, bias2);
    const __m256 step =
        _mm256_div_ps(_mm256_mul_ps(lr, mhat), _mm256_add_ps(_mm256_sqrt_ps(vhat), eps));
    _mm256_storeu_ps(values + i, _mm256_sub_ps(_mm256_loadu_ps(values + i), step));
  }
  for (; i < n; ++i) {
    const float g = grads[i];
    m[i] = c.beta1 * m[i] + (1.0f - c.beta1) * g;
    v[i] = c.beta2 * v[i] + (1.0f - c.beta2) * (g * g);
    const float mhat = m[i] / c.bias1;
    const float vhat = v[i] / c.bias2;
    values[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
}

void blend_rows(const float* a, const float* b, const float* w, float* out, std::size_t rows,
                std::size_t width) {
  const std::size_t w8 = width & ~std::size_t(7);
  const __m256 one = _mm256_set1_ps(1.0f);
  for (std::size_t r = 0; r < rows; ++r) {
    const __m256 wr = _mm256_set1_ps(w[r]);
    const __m256 wc = _mm256_sub_ps(one, wr);
    const float* ar = a + r * width;
    const float* br = b + r * width;
    float* orow = out + r * width;
    for (std::size_t j = 0; j < w8; j += 8)
      _mm256_storeu_ps(orow + j, _mm256_add_ps(_mm256_mul_ps(wr, _mm256_loadu_ps(ar + j)),
                                               _mm256_mul_ps(wc, _mm256_loadu_ps(br + j))));
    for (std::size_t j = w8; j < width; ++j) orow[j] = w[r] * ar[j] + (1.0f - w[r]) * br[j];
  }
}

bool all_finite(const float* x, std::size_t n) {
  const __m256i exp_mask = _mm256_set1_epi32(0x7f800000);
  __m256i bad = _mm256_setzero_si256();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256i bits = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(x + i));
    bad = _mm256_or_si256(bad, _mm256_cmpeq_epi32(_mm256_and_si256(bits, exp_mask), exp_mask));
  }
  if (!_mm256_testz_si256(bad, bad)) return false;
  for (; i < n; ++i)
    if (!std::isfinite(x[i])) return false;
  return true;
}

}  // namespace

const KernelTable& avx2_kernel_table() {
  static const KernelTable table{Isa::avx2,   "avx2",        linear_forward, linear_backward_params,
                                 relu_forward, relu_backward, adam_update,    blend_rows,
                                 all_finite};
  return table;
}

}  // namespace msth::simd

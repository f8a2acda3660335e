#pragma once

// Data-parallel inner loops. Every kernel has a scalar reference
// implementation; an AVX2/FMA variant is selected at runtime when the CPU
// supports it. The two are equivalence-tested in tests/test_kernels.cpp.
//
// Matrix conventions (row-major):
//   x  : [n x in]     activations, one row per sample
//   wt : [in x out]   weights stored input-major, so a row of y is an axpy chain
//   w  : [out x in]   the transpose of wt, used for the input gradient

#include <cstddef>
#include <string_view>

namespace msth::simd {

enum class Isa { scalar, avx2 };

struct AdamCoeffs {
  float lr;     // raw learning rate
  float beta1;
  float beta2;
  float eps;
  float bias1;  // 1 - beta1^t
  float bias2;  // 1 - beta2^t
};

struct KernelTable {
  Isa isa;
  std::string_view name;

  /// y = x * wt + b (b may be null).
  void (*linear_forward)(const float* x, const float* wt, const float* b, float* y, std::size_t n,
                         std::size_t in, std::size_t out);
  /// dwt += x^T * dy ; db += column sums of dy (db may be null).
  void (*linear_backward_params)(const float* x, const float* dy, float* dwt, float* db,
                                 std::size_t n, std::size_t in, std::size_t out);
  void (*relu_forward)(float* y, std::size_t n);
  /// dy[i] = 0 where y[i] <= 0.
  void (*relu_backward)(const float* y, float* dy, std::size_t n);
  /// Bias-corrected Adam over n entries.
  void (*adam_update)(float* values, const float* grads, float* m, float* v, std::size_t n,
                      const AdamCoeffs& c);
  /// out[r, :] = w[r] * a[r, :] + (1 - w[r]) * b[r, :]
  void (*blend_rows)(const float* a, const float* b, const float* w, float* out, std::size_t rows,
                     std::size_t width);
  /// True if every entry is finite.
  bool (*all_finite)(const float* x, std::size_t n);
};

const KernelTable& scalar_kernels();
/// Null when the AVX2 variant is not compiled in or the CPU lacks AVX2/FMA.
const KernelTable* avx2_kernels();
/// The table used by the library. Honors MSTH_SIMD=scalar|avx2 on first use.
const KernelTable& active_kernels();
/// Override the runtime choice (tests, benchmarks). Returns false if unavailable.
bool force_isa(Isa isa);

}  // namespace msth::simd

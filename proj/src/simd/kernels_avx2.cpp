// Compiled with -mavx2 (no -mfma): lanes perform the same mul/add sequence as
// the scalar reference, so elementwise kernels match it bit for bit.

#include "pcqa/simd.hpp"

#if defined(__AVX2__)
#include <immintrin.h>
#endif

namespace pcqa::simd {

#if defined(__AVX2__)
namespace {

void sq_dist_avx2(const double* x, const double* y, const double* z, std::size_t n, double cx,
                  double cy, double cz, double* out) {
  const __m256d vcx = _mm256_set1_pd(cx);
  const __m256d vcy = _mm256_set1_pd(cy);
  const __m256d vcz = _mm256_set1_pd(cz);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d dx = _mm256_sub_pd(_mm256_loadu_pd(x + i), vcx);
    const __m256d dy = _mm256_sub_pd(_mm256_loadu_pd(y + i), vcy);
    const __m256d dz = _mm256_sub_pd(_mm256_loadu_pd(z + i), vcz);
    __m256d acc = _mm256_add_pd(_mm256_mul_pd(dx, dx), _mm256_mul_pd(dy, dy));
    acc = _mm256_add_pd(acc, _mm256_mul_pd(dz, dz));
    _mm256_storeu_pd(out + i, acc);
  }
  for (; i < n; ++i) {
    const double dx = x[i] - cx;
    const double dy = y[i] - cy;
    const double dz = z[i] - cz;
    out[i] = dx * dx + dy * dy + dz * dz;
  }
}

double hsum(__m256d v) {
  alignas(32) double tmp[4];
  _mm256_store_pd(tmp, v);
  return (tmp[0] + tmp[1]) + (tmp[2] + tmp[3]);
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    acc1 = _mm256_add_pd(acc1,
                         _mm256_mul_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4)));
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum_avx2(const double* a, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(a + i));
  double acc = hsum(acc0);
  for (; i < n; ++i) acc += a[i];
  return acc;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vy = _mm256_add_pd(_mm256_loadu_pd(y + i), _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_add_avx2(const double* a, const double* x, const double* b, double* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v =
        _mm256_add_pd(_mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(x + i)),
                      _mm256_loadu_pd(b + i));
    _mm256_storeu_pd(y + i, v);
  }
  for (; i < n; ++i) y[i] = a[i] * x[i] + b[i];
}

void relu_avx2(const double* x, double* y, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    // x > 0 ? x : 0, matching the scalar select (NaN maps to 0 in both).
    const __m256d mask = _mm256_cmp_pd(v, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(y + i, _mm256_and_pd(mask, v));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void max_merge_avx2(const double* x, double* m, std::uint32_t* arg, std::uint32_t index,
                    std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d vx = _mm256_loadu_pd(x + i);
    const __m256d vm = _mm256_loadu_pd(m + i);
    const __m256d gt = _mm256_cmp_pd(vx, vm, _CMP_GT_OQ);
    const int bits = _mm256_movemask_pd(gt);
    if (bits == 0) continue;
    _mm256_storeu_pd(m + i, _mm256_blendv_pd(vm, vx, gt));
    for (int lane = 0; lane < 4; ++lane) {
      if (bits & (1 << lane)) arg[i + lane] = index;
    }
  }
  for (; i < n; ++i) {
    if (x[i] > m[i]) {
      m[i] = x[i];
      arg[i] = index;
    }
  }
}

}  // namespace
#endif

const Kernels* avx2_kernels() {
#if defined(__AVX2__)
  static const Kernels table{Isa::avx2,  sq_dist_avx2,   dot_avx2,  sum_avx2,
                             axpy_avx2,  scale_add_avx2, relu_avx2, max_merge_avx2};
  if (!cpu_has_avx2()) return nullptr;
  return &table;
#else
  return nullptr;
#endif
}

}  // namespace pcqa::simd

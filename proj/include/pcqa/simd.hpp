#pragma once

// Data-parallel inner loops shared by the geometry and network code.
//
// Every kernel has a portable scalar reference and an AVX2 variant. The
// variant is chosen once at startup from CPUID; PCQA_SIMD=scalar forces the
// reference path. Elementwise kernels (sq_dist, axpy, scale_add, relu,
// max_merge) are bit-identical across variants because both evaluate the same
// IEEE operations in the same order per lane. Reductions (dot, sum) use
// multiple accumulators in the SIMD path and agree with the reference only
// to rounding.

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace pcqa::simd {

enum class Isa { scalar, avx2 };

struct Kernels {
  Isa isa;
  // out[i] = (x[i]-cx)^2 + (y[i]-cy)^2 + (z[i]-cz)^2, evaluated left to right.
  void (*sq_dist)(const double* x, const double* y, const double* z, std::size_t n, double cx,
                  double cy, double cz, double* out);
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y[i] = a[i] * x[i] + b[i]
  void (*scale_add)(const double* a, const double* x, const double* b, double* y, std::size_t n);
  // y[i] = max(x[i], 0)
  void (*relu)(const double* x, double* y, std::size_t n);
  // where x[i] > m[i]: m[i] = x[i], arg[i] = index. Strict compare keeps the first maximum.
  void (*max_merge)(const double* x, double* m, std::uint32_t* arg, std::uint32_t index,
                    std::size_t n);
};

const Kernels& scalar_kernels();
// Null when the binary was built without AVX2 support or the CPU lacks it.
const Kernels* avx2_kernels();

// The dispatched kernel table; resolved once.
const Kernels& kernels();

bool cpu_has_avx2();
std::string_view isa_name(Isa isa);

}  // namespace pcqa::simd

#include "pcqa/simd.hpp"

namespace pcqa::simd {
namespace {

void sq_dist_scalar(const double* x, const double* y, const double* z, std::size_t n, double cx,
                    double cy, double cz, double* out) {
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - cx;
    const double dy = y[i] - cy;
    const double dz = z[i] - cz;
    out[i] = dx * dx + dy * dy + dz * dz;
  }
}

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum_scalar(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale_add_scalar(const double* a, const double* x, const double* b, double* y,
                      std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = a[i] * x[i] + b[i];
}

void relu_scalar(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void max_merge_scalar(const double* x, double* m, std::uint32_t* arg, std::uint32_t index,
                      std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] > m[i]) {
      m[i] = x[i];
      arg[i] = index;
    }
  }
}

}  // namespace

const Kernels& scalar_kernels() {
  static const Kernels table{Isa::scalar,    sq_dist_scalar, dot_scalar,      sum_scalar,
                             axpy_scalar,    scale_add_scalar, relu_scalar, max_merge_scalar};
  return table;
}

}  // namespace pcqa::simd

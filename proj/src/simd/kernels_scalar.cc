#include "eoss/simd/kernels.h"

namespace eoss::simd {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemv_scalar(const double* w, const double* x, double* y, std::size_t rows,
                 std::size_t cols, bool accumulate) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double v = dot_scalar(w + r * cols, x, cols);
    y[r] = accumulate ? y[r] + v : v;
  }
}

void gemv_t_scalar(const double* w, const double* d, double* out,
                   std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    if (d[r] != 0.0) axpy_scalar(d[r], w + r * cols, out, cols);
  }
}

void ger_scalar(double alpha, const double* u, const double* v, double* w,
                std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double s = alpha * u[r];
    if (s != 0.0) axpy_scalar(s, v, w + r * cols, cols);
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{Isa::kScalar, dot_scalar,    axpy_scalar,
                                 gemv_scalar,  gemv_t_scalar, ger_scalar};
  return table;
}

}  // namespace eoss::simd

#pragma once

// Dense double-precision kernels used by the MLP inner loops. Every kernel
// has a scalar reference implementation; vectorized variants are selected
// once at startup from the running CPU's capabilities.

#include <cstddef>
#include <string_view>

namespace eoss::simd {

enum class Isa { kScalar, kAvx2, kNeon };

struct KernelTable {
  Isa isa;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y = W x  (W row-major rows x cols); y += W x when accumulate is set
  void (*gemv)(const double* w, const double* x, double* y, std::size_t rows,
               std::size_t cols, bool accumulate);
  // out += W^T d
  void (*gemv_t)(const double* w, const double* d, double* out,
                 std::size_t rows, std::size_t cols);
  // W += alpha * u v^T
  void (*ger)(double alpha, const double* u, const double* v, double* w,
              std::size_t rows, std::size_t cols);
};

const KernelTable& scalar_kernels();
// Null when the variant was not compiled in or the CPU lacks the ISA.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

// Active table. Chosen on first use: the EOSS_SIMD environment variable
// ("scalar", "avx2", "neon") overrides auto-detection.
const KernelTable& kernels();

std::string_view isa_name(Isa isa);

}  // namespace eoss::simd

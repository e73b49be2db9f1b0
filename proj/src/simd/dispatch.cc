#include <cstdlib>
#include <stdexcept>
#include <string>

#include "eoss/simd/kernels.h"

namespace eoss::simd {
namespace {

const KernelTable& select() {
  if (const char* env = std::getenv("EOSS_SIMD"); env != nullptr && *env) {
    const std::string want(env);
    if (want == "scalar") return scalar_kernels();
    const KernelTable* t = nullptr;
    if (want == "avx2") t = avx2_kernels();
    else if (want == "neon") t = neon_kernels();
    else throw std::invalid_argument("EOSS_SIMD: unknown ISA '" + want + "'");
    if (t == nullptr) {
      throw std::runtime_error("EOSS_SIMD: '" + want +
                               "' is not available on this CPU/build");
    }
    return *t;
  }
  if (const KernelTable* t = avx2_kernels()) return *t;
  if (const KernelTable* t = neon_kernels()) return *t;
  return scalar_kernels();
}

}  // namespace

const KernelTable& kernels() {
  static const KernelTable& active = select();
  return active;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar: return "scalar";
    case Isa::kAvx2: return "avx2";
    case Isa::kNeon: return "neon";
  }
  return "unknown";
}

}  // namespace eoss::simd

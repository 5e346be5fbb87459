#include <cstdlib>
#include <string>

#include "pcqa/simd.hpp"

namespace pcqa::simd {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

const Kernels& kernels() {
  static const Kernels& selected = [&]() -> const Kernels& {
    const char* forced = std::getenv("PCQA_SIMD");
    if (forced != nullptr && std::string(forced) == "scalar") return scalar_kernels();
    if (const Kernels* k = avx2_kernels()) return *k;
    return scalar_kernels();
  }();
  return selected;
}

}  // namespace pcqa::simd

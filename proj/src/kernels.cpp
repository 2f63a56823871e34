#include "sq/kernels.hpp"

#include <cstdlib>
#include <string>

#include "sq/errors.hpp"

namespace sq::kern {

bool avx2_supported() {
#if SQ_WITH_AVX2
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

#if !SQ_WITH_AVX2
const KernelTable& avx2_kernels() {
  throw Error("avx2 kernel backend was not built for this target");
}
#endif

const KernelTable& kernels() {
  static const KernelTable* table = [] {
    const char* env = std::getenv("SPLATQUERY_KERNELS");
    if (env && *env) {
      std::string want(env);
      if (want == "scalar") return &scalar_kernels();
      if (want == "avx2") {
        if (!avx2_supported())
          throw Error("SPLATQUERY_KERNELS=avx2 but avx2 is unavailable");
        return &avx2_kernels();
      }
      throw Error("unknown SPLATQUERY_KERNELS backend: " + want);
    }
    return avx2_supported() ? &avx2_kernels() : &scalar_kernels();
  }();
  return *table;
}

}  // namespace sq::kern

#include <cstdlib>
#include <string_view>

#include "hpo/kernels.hpp"

namespace hpo::kernels {

#ifndef HPO_HAVE_AVX2
const KernelTable* avx2_table() { return nullptr; }
#endif

const KernelTable& active() {
  static const KernelTable& table = []() -> const KernelTable& {
    const char* forced = std::getenv("HPO_LAB_SIMD");
    if (forced != nullptr && std::string_view(forced) == "scalar") return scalar_table();
    if (const KernelTable* t = avx2_table()) return *t;
    return scalar_table();
  }();
  return table;
}

}  // namespace hpo::kernels

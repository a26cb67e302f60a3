#include "evformer/kernels.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

namespace evf::kern {
namespace {

struct Active {
  KernelTable table;
  const char* isa;
};

Active resolve() {
  std::string want = "auto";
  if (const char* env = std::getenv("EVFORMER_SIMD")) want = env;

  if (want == "scalar") return {scalar_table(), "scalar"};

#if defined(EVFORMER_BUILD_AVX2)
  if (want == "avx2") {
    if (!cpu_has_avx2()) throw std::runtime_error("EVFORMER_SIMD=avx2 but CPU lacks AVX2/FMA");
    return {avx2_table(), "avx2"};
  }
  if (want == "auto") {
    if (cpu_has_avx2()) return {avx2_table(), "avx2"};
    return {scalar_table(), "scalar"};
  }
#elif defined(EVFORMER_BUILD_NEON)
  if (want == "neon" || want == "auto") return {neon_table(), "neon"};
#else
  if (want == "auto") return {scalar_table(), "scalar"};
#endif

  throw std::runtime_error("unsupported EVFORMER_SIMD value: " + want);
}

const Active& active() {
  static const Active a = resolve();
  return a;
}

}  // namespace

const KernelTable& table() { return active().table; }

const char* active_isa() { return active().isa; }

}  // namespace evf::kern

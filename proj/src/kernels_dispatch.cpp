#include <cstdlib>
#include <string_view>

#include "dualrr/kernels.hpp"

namespace dualrr::kernels {

const Ops* by_name(std::string_view name) {
  if (name == "scalar") return &scalar_ops();
#if defined(__x86_64__) || defined(_M_X64)
  if (name == "avx2") return &avx2_ops();
#endif
#if defined(__aarch64__)
  if (name == "neon") return &neon_ops();
#endif
  return nullptr;
}

namespace {

const Ops& select() {
  if (const char* e = std::getenv("DUALRR_KERNELS")) {
    if (const Ops* o = by_name(e)) return *o;
    return scalar_ops();
  }
#if defined(__x86_64__) || defined(_M_X64)
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
    return avx2_ops();
#endif
#if defined(__aarch64__)
  return neon_ops();
#endif
  return scalar_ops();
}

}  // namespace

const Ops& active() {
  static const Ops& sel = select();
  return sel;
}

}  // namespace dualrr::kernels

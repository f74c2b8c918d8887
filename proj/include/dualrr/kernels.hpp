#pragma once

#include <cstddef>
#include <string_view>

namespace dualrr::kernels {

// Dispatch table for the f64 inner loops everything above sits on.
// All matrices are dense row-major. The three gemm flavors cover forward
// and both backward products without materializing transposes:
//   gemm_nn: C[m,n] (+)= A[m,k] * B[k,n]
//   gemm_nt: C[m,n] (+)= A[m,k] * B[n,k]^T
//   gemm_tn: C[m,n] (+)= A[k,m]^T * B[k,n]
// `acc` accumulates into C instead of overwriting it.
struct Ops {
  const char* name;
  void (*gemm_nn)(const double* a, const double* b, double* c,
                  std::size_t m, std::size_t k, std::size_t n, bool acc);
  void (*gemm_nt)(const double* a, const double* b, double* c,
                  std::size_t m, std::size_t k, std::size_t n, bool acc);
  void (*gemm_tn)(const double* a, const double* b, double* c,
                  std::size_t m, std::size_t k, std::size_t n, bool acc);
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  void (*scale)(double alpha, const double* x, double* out, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*vmax)(const double* x, std::size_t n);
};

// Reference implementation; always available, used as the equivalence oracle.
const Ops& scalar_ops();

#if defined(__x86_64__) || defined(_M_X64)
const Ops& avx2_ops();
#endif
#if defined(__aarch64__)
const Ops& neon_ops();
#endif

// Selected once per process: the widest ISA the CPU supports, overridable
// with DUALRR_KERNELS=scalar|avx2|neon (unknown/unsupported names fall back
// to scalar). Selection is sticky so a run never mixes variants.
const Ops& active();

// nullptr if `name` names a variant not compiled into this binary.
const Ops* by_name(std::string_view name);

}  // namespace dualrr::kernels

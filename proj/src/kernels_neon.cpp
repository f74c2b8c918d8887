#if defined(__aarch64__)

#include <arm_neon.h>

#include "dualrr/kernels.hpp"

// Mirrors the AVX2 variant: fused multiply-add in the gemm kernels
// (equivalence-tested against scalar at 1e-12), plain mul/add elsewhere.

namespace dualrr::kernels {
namespace {

void n_gemm_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n, bool acc) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    if (!acc)
      for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const float64x2_t av = vdupq_n_f64(a[i * k + p]);
      const double* brow = b + p * n;
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        float64x2_t c0 = vld1q_f64(crow + j);
        float64x2_t c1 = vld1q_f64(crow + j + 2);
        c0 = vfmaq_f64(c0, av, vld1q_f64(brow + j));
        c1 = vfmaq_f64(c1, av, vld1q_f64(brow + j + 2));
        vst1q_f64(crow + j, c0);
        vst1q_f64(crow + j + 2, c1);
      }
      const double avs = a[i * k + p];
      for (; j < n; ++j) crow[j] += avs * brow[j];
    }
  }
}

void n_gemm_nt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n, bool acc) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      float64x2_t acc0 = vdupq_n_f64(0.0);
      float64x2_t acc1 = vdupq_n_f64(0.0);
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        acc0 = vfmaq_f64(acc0, vld1q_f64(arow + p), vld1q_f64(brow + p));
        acc1 = vfmaq_f64(acc1, vld1q_f64(arow + p + 2), vld1q_f64(brow + p + 2));
      }
      double s = vaddvq_f64(vaddq_f64(acc0, acc1));
      for (; p < k; ++p) s += arow[p] * brow[p];
      if (acc)
        c[i * n + j] += s;
      else
        c[i * n + j] = s;
    }
  }
}

void n_gemm_tn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n, bool acc) {
  if (!acc)
    for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const float64x2_t av = vdupq_n_f64(arow[i]);
      double* crow = c + i * n;
      std::size_t j = 0;
      for (; j + 2 <= n; j += 2) {
        float64x2_t c0 = vld1q_f64(crow + j);
        c0 = vfmaq_f64(c0, av, vld1q_f64(brow + j));
        vst1q_f64(crow + j, c0);
      }
      const double avs = arow[i];
      for (; j < n; ++j) crow[j] += avs * brow[j];
    }
  }
}

void n_add(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void n_mul(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void n_scale(double alpha, const double* x, double* out, std::size_t n) {
  const float64x2_t av = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(av, vld1q_f64(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

void n_axpy(double alpha, const double* x, double* y, std::size_t n) {
  const float64x2_t av = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    float64x2_t prod = vmulq_f64(av, vld1q_f64(x + i));
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double n_sum(const double* x, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(x + i));
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

double n_dot(const double* a, const double* b, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2)
    acc = vfmaq_f64(acc, vld1q_f64(a + i), vld1q_f64(b + i));
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

double n_vmax(const double* x, std::size_t n) {
  double m = x[0];
  std::size_t i = 0;
  if (n >= 2) {
    float64x2_t mv = vld1q_f64(x);
    for (i = 2; i + 2 <= n; i += 2) mv = vmaxq_f64(mv, vld1q_f64(x + i));
    m = vmaxvq_f64(mv);
  }
  for (; i < n; ++i)
    if (x[i] > m) m = x[i];
  return m;
}

}  // namespace

const Ops& neon_ops() {
  static const Ops ops = {"neon", n_gemm_nn, n_gemm_nt, n_gemm_tn,
                          n_add,  n_mul,     n_scale,   n_axpy,
                          n_sum,  n_dot,     n_vmax};
  return ops;
}

}  // namespace dualrr::kernels

#endif  // __aarch64__

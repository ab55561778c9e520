#include "paa/simd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#if defined(__x86_64__) || defined(__i386__)
#define PAA_X86 1
#include <immintrin.h>
#else
#define PAA_X86 0
#endif

namespace paa::simd {

namespace {

Isa detect() {
  if (const char* env = std::getenv("PAA_SIMD")) {
    std::string s(env);
    if (s == "scalar") return Isa::Scalar;
    if (s == "avx2") return Isa::Avx2Fma;
  }
#if PAA_X86
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
    return Isa::Avx2Fma;
#endif
  return Isa::Scalar;
}

Isa g_isa = detect();

}  // namespace

bool avx2_supported() {
#if PAA_X86
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

// ---- scalar reference kernels ----

template <typename T>
void fma_row_scalar(T* acc, T a, const T* b, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) acc[j] = std::fma(a, b[j], acc[j]);
}

template <typename T>
void fma_row4_scalar(T* acc, const T* a, const T* b0, const T* b1, const T* b2,
                     const T* b3, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    T v = std::fma(a[0], b0[j], acc[j]);
    v = std::fma(a[1], b1[j], v);
    v = std::fma(a[2], b2[j], v);
    acc[j] = std::fma(a[3], b3[j], v);
  }
}

void add_scalar(float* out, const float* a, const float* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void mul_scalar(float* out, const float* a, const float* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void axpby_scalar(float* out, float alpha, const float* a, float beta,
                  const float* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    out[i] = std::fma(alpha, a[i], beta * b[i]);
}

void relu_scalar(float* out, const float* a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] > 0.0f ? a[i] : 0.0f;
}

void clamp_scalar(float* out, const float* a, float lo, float hi,
                  std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::min(std::max(a[i], lo), hi);
}

#if PAA_X86

// ---- AVX2/FMA variants; same element order and rounding as the reference ----

__attribute__((target("avx2,fma"))) void fma_row_avx2(float* acc, float a,
                                                      const float* b,
                                                      std::size_t n) {
  const __m256 va = _mm256_set1_ps(a);
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256 vacc = _mm256_loadu_ps(acc + j);
    vacc = _mm256_fmadd_ps(va, _mm256_loadu_ps(b + j), vacc);
    _mm256_storeu_ps(acc + j, vacc);
  }
  for (; j < n; ++j) acc[j] = std::fma(a, b[j], acc[j]);
}

__attribute__((target("avx2,fma"))) void fma_row_avx2(double* acc, double a,
                                                      const double* b,
                                                      std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    __m256d vacc = _mm256_loadu_pd(acc + j);
    vacc = _mm256_fmadd_pd(va, _mm256_loadu_pd(b + j), vacc);
    _mm256_storeu_pd(acc + j, vacc);
  }
  for (; j < n; ++j) acc[j] = std::fma(a, b[j], acc[j]);
}

__attribute__((target("avx2,fma"))) void fma_row4_avx2(
    float* acc, const float* a, const float* b0, const float* b1,
    const float* b2, const float* b3, std::size_t n) {
  const __m256 va0 = _mm256_set1_ps(a[0]);
  const __m256 va1 = _mm256_set1_ps(a[1]);
  const __m256 va2 = _mm256_set1_ps(a[2]);
  const __m256 va3 = _mm256_set1_ps(a[3]);
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256 vacc = _mm256_loadu_ps(acc + j);
    vacc = _mm256_fmadd_ps(va0, _mm256_loadu_ps(b0 + j), vacc);
    vacc = _mm256_fmadd_ps(va1, _mm256_loadu_ps(b1 + j), vacc);
    vacc = _mm256_fmadd_ps(va2, _mm256_loadu_ps(b2 + j), vacc);
    vacc = _mm256_fmadd_ps(va3, _mm256_loadu_ps(b3 + j), vacc);
    _mm256_storeu_ps(acc + j, vacc);
  }
  for (; j < n; ++j) {
    float v = std::fma(a[0], b0[j], acc[j]);
    v = std::fma(a[1], b1[j], v);
    v = std::fma(a[2], b2[j], v);
    acc[j] = std::fma(a[3], b3[j], v);
  }
}

__attribute__((target("avx2,fma"))) void fma_row4_avx2(
    double* acc, const double* a, const double* b0, const double* b1,
    const double* b2, const double* b3, std::size_t n) {
  const __m256d va0 = _mm256_set1_pd(a[0]);
  const __m256d va1 = _mm256_set1_pd(a[1]);
  const __m256d va2 = _mm256_set1_pd(a[2]);
  const __m256d va3 = _mm256_set1_pd(a[3]);
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    __m256d vacc = _mm256_loadu_pd(acc + j);
    vacc = _mm256_fmadd_pd(va0, _mm256_loadu_pd(b0 + j), vacc);
    vacc = _mm256_fmadd_pd(va1, _mm256_loadu_pd(b1 + j), vacc);
    vacc = _mm256_fmadd_pd(va2, _mm256_loadu_pd(b2 + j), vacc);
    vacc = _mm256_fmadd_pd(va3, _mm256_loadu_pd(b3 + j), vacc);
    _mm256_storeu_pd(acc + j, vacc);
  }
  for (; j < n; ++j) {
    double v = std::fma(a[0], b0[j], acc[j]);
    v = std::fma(a[1], b1[j], v);
    v = std::fma(a[2], b2[j], v);
    acc[j] = std::fma(a[3], b3[j], v);
  }
}

__attribute__((target("avx2"))) void add_avx2(float* out, const float* a,
                                              const float* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i),
                                            _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

__attribute__((target("avx2"))) void mul_avx2(float* out, const float* a,
                                              const float* b, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i),
                                            _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

__attribute__((target("avx2,fma"))) void axpby_avx2(float* out, float alpha,
                                                    const float* a, float beta,
                                                    const float* b,
                                                    std::size_t n) {
  const __m256 valpha = _mm256_set1_ps(alpha);
  const __m256 vbeta = _mm256_set1_ps(beta);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 vb = _mm256_mul_ps(vbeta, _mm256_loadu_ps(b + i));
    _mm256_storeu_ps(out + i,
                     _mm256_fmadd_ps(valpha, _mm256_loadu_ps(a + i), vb));
  }
  for (; i < n; ++i) out[i] = std::fma(alpha, a[i], beta * b[i]);
}

__attribute__((target("avx2"))) void relu_avx2(float* out, const float* a,
                                               std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_max_ps(_mm256_loadu_ps(a + i), zero));
  for (; i < n; ++i) out[i] = a[i] > 0.0f ? a[i] : 0.0f;
}

__attribute__((target("avx2"))) void clamp_avx2(float* out, const float* a,
                                                float lo, float hi,
                                                std::size_t n) {
  const __m256 vlo = _mm256_set1_ps(lo);
  const __m256 vhi = _mm256_set1_ps(hi);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(
        out + i, _mm256_min_ps(_mm256_max_ps(_mm256_loadu_ps(a + i), vlo), vhi));
  for (; i < n; ++i) out[i] = std::min(std::max(a[i], lo), hi);
}

#endif  // PAA_X86

}  // namespace

Isa active_isa() { return g_isa; }

void force_isa(Isa isa) { g_isa = isa; }

std::string isa_name(Isa isa) {
  return isa == Isa::Avx2Fma ? "avx2+fma" : "scalar";
}

void fma_row(float* acc, float a, const float* b, std::size_t n) {
#if PAA_X86
  if (g_isa == Isa::Avx2Fma) return fma_row_avx2(acc, a, b, n);
#endif
  fma_row_scalar(acc, a, b, n);
}

void fma_row(double* acc, double a, const double* b, std::size_t n) {
#if PAA_X86
  if (g_isa == Isa::Avx2Fma) return fma_row_avx2(acc, a, b, n);
#endif
  fma_row_scalar(acc, a, b, n);
}

void fma_row4(float* acc, const float* a, const float* b0, const float* b1,
              const float* b2, const float* b3, std::size_t n) {
#if PAA_X86
  if (g_isa == Isa::Avx2Fma) return fma_row4_avx2(acc, a, b0, b1, b2, b3, n);
#endif
  fma_row4_scalar(acc, a, b0, b1, b2, b3, n);
}

void fma_row4(double* acc, const double* a, const double* b0, const double* b1,
              const double* b2, const double* b3, std::size_t n) {
#if PAA_X86
  if (g_isa == Isa::Avx2Fma) return fma_row4_avx2(acc, a, b0, b1, b2, b3, n);
#endif
  fma_row4_scalar(acc, a, b0, b1, b2, b3, n);
}

void add(float* out, const float* a, const float* b, std::size_t n) {
#if PAA_X86
  if (g_isa == Isa::Avx2Fma) return add_avx2(out, a, b, n);
#endif
  add_scalar(out, a, b, n);
}

void mul(float* out, const float* a, const float* b, std::size_t n) {
#if PAA_X86
  if (g_isa == Isa::Avx2Fma) return mul_avx2(out, a, b, n);
#endif
  mul_scalar(out, a, b, n);
}

void axpby(float* out, float alpha, const float* a, float beta, const float* b,
           std::size_t n) {
#if PAA_X86
  if (g_isa == Isa::Avx2Fma) return axpby_avx2(out, alpha, a, beta, b, n);
#endif
  axpby_scalar(out, alpha, a, beta, b, n);
}

void relu(float* out, const float* a, std::size_t n) {
#if PAA_X86
  if (g_isa == Isa::Avx2Fma) return relu_avx2(out, a, n);
#endif
  relu_scalar(out, a, n);
}

void clamp(float* out, const float* a, float lo, float hi, std::size_t n) {
#if PAA_X86
  if (g_isa == Isa::Avx2Fma) return clamp_avx2(out, a, lo, hi, n);
#endif
  clamp_scalar(out, a, lo, hi, n);
}

}  // namespace paa::simd
